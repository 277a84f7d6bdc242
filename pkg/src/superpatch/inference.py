"""Nearest-centroid inference: per-image semantic predictions, superclass
aggregation, top-k evaluation, and the versioned model file.

A :class:`TrainedModel` is immutable after construction; :func:`predict` is a
pure function and safe to run concurrently across images. :func:`evaluate`
reduces per-image results in manifest order so reports are deterministic.
"""

from __future__ import annotations

import csv
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import Centroids, assign
from .embedding import PositionalConfig, mix_positional, saliency_weights
from .errors import (
    CorruptionError,
    DataError,
    FormatError,
    MigrationError,
    ProtocolError,
    StoreIOError,
    UndefinedPredictionError,
    ValidationError,
)
from .semantics import MODES, SemanticMatrix
from .store import (
    KNOWN,
    ClassHierarchy,
    DatasetManifest,
    FeatureGrid,
    read_feature_grid,
)

MODEL_MAGIC = b"APMD"
MODEL_VERSION = 1

# magic | version u16 | k u32 | g u32 | dim u32 | positional weight f32 |
# mode u8 | saliency_train u8 | saliency_eval u8
_MODEL_HEADER = struct.Struct("<4sHIIIfBBB")
_CRC = struct.Struct("<I")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


@dataclass(eq=False)
class TrainedModel:
    """Everything inference needs: centers, confidence columns, preprocessing."""

    centroids: Centroids
    semantics: SemanticMatrix
    positional: PositionalConfig
    saliency_enabled_train: bool
    saliency_enabled_eval: bool
    hierarchy: ClassHierarchy
    format_version: int = MODEL_VERSION

    def __post_init__(self) -> None:
        if self.centroids.k != self.semantics.k:
            raise ValidationError(
                f"centroid count {self.centroids.k} != semantic matrix k {self.semantics.k}"
            )
        if self.semantics.class_count != self.hierarchy.class_count:
            raise ValidationError(
                f"semantic matrix covers {self.semantics.class_count} classes but the "
                f"hierarchy defines {self.hierarchy.class_count}"
            )
        if self.positional.dim != self.centroids.dim:
            raise ValidationError(
                f"positional dim {self.positional.dim} != centroid dim {self.centroids.dim}"
            )


@dataclass(eq=False)
class SemanticPrediction:
    """Per-image class distribution and its superclass aggregation.

    ``class_scores`` is the raw patch average of matched confidence columns;
    ``superclass_scores`` sums member-class scores and is renormalized to 1.
    """

    image_id: str
    class_scores: np.ndarray
    superclass_scores: np.ndarray


def rank_superclasses(scores: np.ndarray) -> np.ndarray:
    """Superclass ids ordered best-first; equal scores rank the lower id first."""
    return np.argsort(-np.asarray(scores), kind="stable")


def predict(grid: FeatureGrid, model: TrainedModel, *, saliency: bool | None = None) -> SemanticPrediction:
    """Run one image through the model (positional mixing, nearest centers, averaging).

    Each patch contributes the confidence column of its nearest center; the
    contributions are averaged (weighted by eval-time saliency when enabled,
    dividing by the weight sum, which equals the patch count by the mean-1
    invariant). Raises :class:`UndefinedPredictionError` when every patch hit
    an empty cluster.
    """
    if grid.feature_dim != model.centroids.dim:
        raise ValidationError(
            f"grid {grid.image_id!r} has dim {grid.feature_dim}, model expects {model.centroids.dim}"
        )
    use_saliency = model.saliency_enabled_eval if saliency is None else saliency
    weights = saliency_weights(grid).per_patch if use_saliency else None

    mixed = mix_positional(grid, model.positional)
    indices = assign(mixed.data, model.centroids)
    columns = model.semantics.values.astype(np.float64)[:, indices]
    if weights is None:
        class_scores = columns.mean(axis=1)
    else:
        class_scores = columns @ weights / weights.sum()

    total = float(class_scores.sum())
    if total <= 0.0:
        raise UndefinedPredictionError(
            f"image {grid.image_id!r}: every patch matched an empty cluster"
        )
    super_raw = np.zeros(model.hierarchy.superclass_count)
    np.add.at(super_raw, np.asarray(model.hierarchy.class_to_super, dtype=np.int64), class_scores)
    return SemanticPrediction(
        image_id=grid.image_id,
        class_scores=class_scores,
        superclass_scores=super_raw / total,
    )


@dataclass(eq=False)
class EvalReport:
    """Top-k accuracies, per-superclass accuracy, and a confusion matrix."""

    top_k_accuracy: dict[int, float]
    per_superclass_accuracy: np.ndarray
    confusion: np.ndarray  # rows = true superclass, cols = predicted top-1
    n_images: int
    failures: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def format_text(self, hierarchy: ClassHierarchy | None = None) -> str:
        lines = [f"images evaluated : {self.n_images}", f"failures         : {len(self.failures)}"]
        for k in sorted(self.top_k_accuracy):
            lines.append(f"top-{k} accuracy   : {self.top_k_accuracy[k]:.4f}")
        lines.append("")
        names = hierarchy.superclass_names if hierarchy else None
        width = max((len(n) for n in names), default=10) if names else 10
        lines.append(f"{'superclass':<{width + 5}} {'images':>7} {'top1-acc':>9}")
        row_counts = self.confusion.sum(axis=1)
        for s, acc in enumerate(self.per_superclass_accuracy):
            label = f"{s} {names[s]}" if names else str(s)
            lines.append(f"{label:<{width + 5}} {int(row_counts[s]):>7} {acc:>9.4f}")
        lines.append("")
        lines.append("confusion (rows = true, cols = predicted top-1)")
        header = "     " + "".join(f"{c:>7}" for c in range(self.confusion.shape[1]))
        lines.append(header)
        for s in range(self.confusion.shape[0]):
            lines.append(f"{s:>5}" + "".join(f"{int(v):>7}" for v in self.confusion[s]))
        for image_id, reason in self.failures:
            lines.append(f"failed: {image_id}: {reason}")
        return "\n".join(lines) + "\n"


def evaluate(
    manifest: DatasetManifest,
    model: TrainedModel,
    ks: tuple[int, ...] = (1, 2, 3),
    *,
    split: str = "unknown",
    allow_known: bool = False,
) -> EvalReport:
    """Top-k superclass accuracy over one split of a dataset.

    An image counts as top-k correct when its true superclass sits among the
    k best-scored superclasses (ties ranked by lower id). Evaluating the known
    split is a protocol violation unless ``allow_known`` is set. Per-image
    data errors are collected as failures; they do not abort the run.
    """
    if split == KNOWN and not allow_known:
        raise ProtocolError(
            "evaluation on the known split violates the open-world contract; "
            "pass allow_known to override"
        )
    entries = manifest.entries_for(split)
    if not entries:
        raise ValidationError(f"manifest holds no images in the {split!r} split")
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks or ks[0] < 1:
        raise ValidationError(f"top-k ranks must be positive, got {ks}")

    n_super = model.hierarchy.superclass_count
    confusion = np.zeros((n_super, n_super), dtype=np.int64)
    hits = {k: 0 for k in ks}
    per_super_hits = np.zeros(n_super, dtype=np.int64)
    failures: list[tuple[str, str]] = []

    for entry in entries:
        try:
            grid = read_feature_grid(manifest.resolve(entry), image_id=entry.image_id)
            prediction = predict(grid, model)
        except DataError as exc:
            failures.append((entry.image_id, str(exc)))
            continue
        true_super = model.hierarchy.superclass_of(entry.class_id)
        order = rank_superclasses(prediction.superclass_scores)
        position = int(np.flatnonzero(order == true_super)[0])
        for k in ks:
            if position < k:
                hits[k] += 1
        confusion[true_super, order[0]] += 1
        if order[0] == true_super:
            per_super_hits[true_super] += 1

    n_scored = len(entries) - len(failures)
    if n_scored == 0:
        raise ValidationError("no image in the split produced a prediction")
    row_counts = confusion.sum(axis=1)
    per_super = np.divide(
        per_super_hits, row_counts, out=np.zeros(n_super, dtype=np.float64), where=row_counts > 0
    )
    return EvalReport(
        top_k_accuracy={k: hits[k] / n_scored for k in ks},
        per_superclass_accuracy=per_super,
        confusion=confusion,
        n_images=n_scored,
        failures=tuple(failures),
    )


def _encode_hierarchy(hierarchy: ClassHierarchy) -> bytes:
    out = bytearray(_U32.pack(hierarchy.superclass_count))
    for name in hierarchy.superclass_names:
        raw = name.encode("utf-8")
        out += _U16.pack(len(raw)) + raw
    for class_id in range(hierarchy.class_count):
        raw = hierarchy.class_names[class_id].encode("utf-8")
        out += _U32.pack(hierarchy.class_to_super[class_id]) + _U16.pack(len(raw)) + raw
    return bytes(out)


class _Cursor:
    def __init__(self, blob: bytes, offset: int, path: Path):
        self.blob = blob
        self.offset = offset
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise CorruptionError(f"{self.path}: model file truncated inside the hierarchy section")
        piece = self.blob[self.offset : self.offset + n]
        self.offset += n
        return piece


def _decode_hierarchy(cursor: _Cursor, class_count: int) -> ClassHierarchy:
    (n_super,) = _U32.unpack(cursor.take(_U32.size))
    superclass_names = []
    for _ in range(n_super):
        (length,) = _U16.unpack(cursor.take(_U16.size))
        superclass_names.append(cursor.take(length).decode("utf-8"))
    class_names = []
    class_to_super = []
    for _ in range(class_count):
        (super_id,) = _U32.unpack(cursor.take(_U32.size))
        (length,) = _U16.unpack(cursor.take(_U16.size))
        class_to_super.append(super_id)
        class_names.append(cursor.take(length).decode("utf-8"))
    return ClassHierarchy(
        class_names=tuple(class_names),
        class_to_super=tuple(class_to_super),
        superclass_names=tuple(superclass_names),
    )


def save_model(model: TrainedModel, path: str | Path) -> None:
    """Serialize the model as APMD v1 with a trailing CRC32.

    Layout: header | centroids f32 | semantic values f32 | counts f32 |
    hierarchy section | crc32 of everything before it. Matrices are stored
    little-endian float32; the training pipeline already holds float32, so
    save/load round trips are bit-exact.
    """
    mode_byte = MODES.index(model.semantics.mode)
    header = _MODEL_HEADER.pack(
        MODEL_MAGIC,
        MODEL_VERSION,
        model.centroids.k,
        model.semantics.class_count,
        model.centroids.dim,
        np.float32(model.positional.weight),
        mode_byte,
        int(model.saliency_enabled_train),
        int(model.saliency_enabled_eval),
    )
    blob = bytearray(header)
    blob += np.ascontiguousarray(model.centroids.centers, dtype="<f4").tobytes()
    blob += np.ascontiguousarray(model.semantics.values, dtype="<f4").tobytes()
    blob += np.ascontiguousarray(model.semantics.counts, dtype="<f4").tobytes()
    blob += _encode_hierarchy(model.hierarchy)
    blob += _CRC.pack(zlib.crc32(bytes(blob)))
    try:
        Path(path).write_bytes(bytes(blob))
    except OSError as exc:
        raise StoreIOError(f"cannot write model file {path}: {exc}") from exc


def load_model(path: str | Path) -> TrainedModel:
    """Parse and verify an APMD file back into a :class:`TrainedModel`."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StoreIOError(f"cannot read model file {path}: {exc}") from exc

    if len(raw) < _MODEL_HEADER.size + _CRC.size:
        raise CorruptionError(f"{path}: file too short to be a model file")
    if raw[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: not an APMD model file (bad magic)")
    body, stored_crc = raw[: -_CRC.size], _CRC.unpack(raw[-_CRC.size :])[0]
    if zlib.crc32(body) != stored_crc:
        raise CorruptionError(f"{path}: checksum mismatch; the model file is damaged")

    _, version, k, g, dim, weight, mode_byte, sal_train, sal_eval = _MODEL_HEADER.unpack_from(body)
    if version != MODEL_VERSION:
        raise MigrationError(f"{path}: model version {version} needs migration (this build reads {MODEL_VERSION})")
    if mode_byte >= len(MODES):
        raise CorruptionError(f"{path}: unknown normalization mode byte {mode_byte}")

    offset = _MODEL_HEADER.size
    sizes = (k * dim, g * k, g * k)
    arrays = []
    for count in sizes:
        nbytes = count * 4
        if offset + nbytes > len(body):
            raise CorruptionError(f"{path}: model file truncated inside a matrix block")
        arrays.append(np.frombuffer(body, dtype="<f4", count=count, offset=offset))
        offset += nbytes
    centers = arrays[0].reshape(k, dim)
    values = arrays[1].reshape(g, k)
    counts = arrays[2].reshape(g, k)
    for name, arr in (("centroids", centers), ("values", values), ("counts", counts)):
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{path}: non-finite entries in the {name} block")

    cursor = _Cursor(body, offset, path)
    hierarchy = _decode_hierarchy(cursor, g)
    if cursor.offset != len(body):
        raise CorruptionError(f"{path}: {len(body) - cursor.offset} unexpected trailing bytes")

    centroids = Centroids(k=k, dim=dim, centers=centers, training_sse=0.0, iterations_run=0)
    semantics = SemanticMatrix(
        class_count=g,
        k=k,
        values=values,
        mode=MODES[mode_byte],
        counts=counts,
        patch_totals=counts.astype(np.float64).sum(axis=0),
    )
    return TrainedModel(
        centroids=centroids,
        semantics=semantics,
        positional=PositionalConfig(weight=float(weight), dim=dim),
        saliency_enabled_train=bool(sal_train),
        saliency_enabled_eval=bool(sal_eval),
        hierarchy=hierarchy,
        format_version=version,
    )


def export_assignments(
    manifest: DatasetManifest,
    model: TrainedModel,
    path: str | Path,
    *,
    split: str | None = None,
) -> int:
    """Write per-patch cluster assignments as CSV for external plotting.

    Rows are ``image_id,patch_row,patch_col,cluster_id,class_id,superclass_id``
    using the model's stored positional mixing, so the rows reproduce exactly
    what training counted. Returns the number of data rows written.
    """
    entries = manifest.entries if split is None else manifest.entries_for(split)
    rows_written = 0
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["image_id", "patch_row", "patch_col", "cluster_id", "class_id", "superclass_id"])
            for entry in entries:
                grid = read_feature_grid(manifest.resolve(entry), image_id=entry.image_id)
                mixed = mix_positional(grid, model.positional)
                indices = assign(mixed.data, model.centroids)
                super_id = model.hierarchy.superclass_of(entry.class_id)
                for m, cluster in enumerate(indices):
                    row, col = grid.patch_position(m)
                    writer.writerow([entry.image_id, row, col, int(cluster), entry.class_id, super_id])
                    rows_written += 1
    except OSError as exc:
        raise StoreIOError(f"cannot write assignment export {path}: {exc}") from exc
    return rows_written
