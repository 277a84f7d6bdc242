"""On-disk dataset representation: patch-feature files, manifest, class hierarchy.

Feature files use a fixed little-endian binary layout (magic ``APFT``) so any
language can parse them with plain byte I/O; payload values are IEEE-754 f32.
Manifests and hierarchies are tab-separated UTF-8 text for diff-ability.

Readers are pure and safe to run concurrently; writers need exclusive access
to their target path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    FormatError,
    MissingClassError,
    SplitContaminationError,
    StoreIOError,
    ValidationError,
)

FEATURE_MAGIC = b"APFT"
FEATURE_VERSION = 1

# magic | version u16 | grid_rows u16 | grid_cols u16 | feature_dim u32
_FEATURE_HEADER = struct.Struct("<4sHHHI")

KNOWN = "known"
UNKNOWN = "unknown"
SPLITS = (KNOWN, UNKNOWN)

MANIFEST_FILENAME = "manifest.tsv"
HIERARCHY_FILENAME = "hierarchy.tsv"


@dataclass(eq=False)
class FeatureGrid:
    """One image's patch appearance matrix plus its grid geometry.

    ``data`` holds one row per patch, row-major by patch index
    ``m = row * grid_cols + col``. Rows and columns may differ; nothing
    downstream requires a square grid.
    """

    image_id: str
    grid_rows: int
    grid_cols: int
    feature_dim: int
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        self.validate()

    @property
    def patch_count(self) -> int:
        return self.grid_rows * self.grid_cols

    def patch_position(self, m: int) -> tuple[int, int]:
        """(row, col) of patch index ``m`` under the row-major convention."""
        return divmod(m, self.grid_cols)

    def validate(self) -> None:
        for name in ("grid_rows", "grid_cols", "feature_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if not np.issubdtype(self.data.dtype, np.floating):
            raise ValidationError(f"feature data must be floating point, got {self.data.dtype}")
        expected = (self.patch_count, self.feature_dim)
        if self.data.shape != expected:
            raise ValidationError(
                f"feature data shape {self.data.shape} does not match grid "
                f"{self.grid_rows}x{self.grid_cols} with dim {self.feature_dim}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValidationError(f"grid {self.image_id!r} contains non-finite values")


def read_feature_grid(path: str | Path, image_id: str | None = None) -> FeatureGrid:
    """Parse an APFT file into a validated :class:`FeatureGrid`.

    ``image_id`` defaults to the file stem. Raises :class:`FormatError` on a
    bad magic or version, :class:`CorruptionError` when the header disagrees
    with the payload length, and :class:`ValidationError` on non-finite data.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StoreIOError(f"cannot read feature file {path}: {exc}") from exc

    if len(raw) < _FEATURE_HEADER.size or raw[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: not an APFT feature file (bad magic)")
    _, version, rows, cols, dim = _FEATURE_HEADER.unpack_from(raw)
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported APFT version {version} (expected {FEATURE_VERSION})")
    if rows < 1 or cols < 1 or dim < 1:
        raise CorruptionError(f"{path}: header declares an empty grid ({rows}x{cols}, dim {dim})")

    payload = raw[_FEATURE_HEADER.size :]
    expected_bytes = rows * cols * dim * 4
    if len(payload) != expected_bytes:
        raise CorruptionError(
            f"{path}: header promises {rows * cols} patches x {dim} values "
            f"({expected_bytes} bytes) but payload holds {len(payload)} bytes"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(rows * cols, dim)
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: payload contains non-finite values")
    return FeatureGrid(image_id if image_id is not None else path.stem, rows, cols, dim, data)


def write_feature_grid(grid: FeatureGrid, path: str | Path) -> None:
    """Serialize ``grid`` as APFT; the file parses back to an identical grid.

    Payload is written as little-endian f32, so grids intended for bit-exact
    round trips should carry float32 data (files produced by this module do).
    """
    grid.validate()
    if grid.grid_rows > 0xFFFF or grid.grid_cols > 0xFFFF:
        raise ValidationError(f"grid geometry {grid.grid_rows}x{grid.grid_cols} exceeds the u16 header fields")
    if grid.feature_dim > 0xFFFFFFFF:
        raise ValidationError(f"feature_dim {grid.feature_dim} exceeds the u32 header field")
    header = _FEATURE_HEADER.pack(
        FEATURE_MAGIC, FEATURE_VERSION, int(grid.grid_rows), int(grid.grid_cols), int(grid.feature_dim)
    )
    payload = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise StoreIOError(f"cannot write feature file {path}: {exc}") from exc


@dataclass(frozen=True)
class ClassHierarchy:
    """Two-tier class -> superclass mapping with display names.

    Class ids are dense ``0..class_count-1`` and superclass ids dense
    ``0..superclass_count-1``; every superclass has at least one member.
    """

    class_names: tuple[str, ...]
    class_to_super: tuple[int, ...]
    superclass_names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.class_names) != len(self.class_to_super):
            raise ValidationError("class_names and class_to_super must have equal length")
        if not self.class_names:
            raise ValidationError("hierarchy defines no classes")
        if not self.superclass_names:
            raise ValidationError("hierarchy defines no superclasses")
        members: set[int] = set()
        for class_id, super_id in enumerate(self.class_to_super):
            if not 0 <= super_id < len(self.superclass_names):
                raise ValidationError(
                    f"class {class_id} maps to undefined superclass {super_id}"
                )
            members.add(super_id)
        empty = sorted(set(range(len(self.superclass_names))) - members)
        if empty:
            raise ValidationError(f"superclasses without member classes: {empty}")

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def superclass_count(self) -> int:
        return len(self.superclass_names)

    def superclass_of(self, class_id: int) -> int:
        if not 0 <= class_id < self.class_count:
            raise MissingClassError(f"class id {class_id} outside 0..{self.class_count - 1}")
        return self.class_to_super[class_id]

    def classes_in(self, superclass_id: int) -> tuple[int, ...]:
        return tuple(g for g, s in enumerate(self.class_to_super) if s == superclass_id)


def load_hierarchy(path: str | Path) -> ClassHierarchy:
    """Parse a hierarchy file: ``class_id<TAB>class_name<TAB>superclass_id<TAB>superclass_name``.

    Blank lines and lines starting with ``#`` are ignored. Ids must be dense
    from 0 and each class may appear exactly once.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StoreIOError(f"cannot read hierarchy file {path}: {exc}") from exc

    classes: dict[int, tuple[str, int]] = {}
    super_names: dict[int, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
        try:
            class_id = int(fields[0])
            super_id = int(fields[2])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-integer id: {exc}") from exc
        if class_id < 0 or super_id < 0:
            raise FormatError(f"{path}:{lineno}: negative id")
        if class_id in classes:
            raise ValidationError(f"{path}:{lineno}: class {class_id} defined more than once")
        if super_id in super_names and super_names[super_id] != fields[3]:
            raise ValidationError(
                f"{path}:{lineno}: superclass {super_id} renamed "
                f"{super_names[super_id]!r} -> {fields[3]!r}"
            )
        classes[class_id] = (fields[1], super_id)
        super_names.setdefault(super_id, fields[3])

    if not classes:
        raise ValidationError(f"{path}: hierarchy file defines no classes")
    for mapping, label in ((classes, "class"), (super_names, "superclass")):
        ids = sorted(mapping)
        if ids != list(range(len(ids))):
            raise ValidationError(f"{path}: {label} ids must be dense from 0, got {ids}")
    return ClassHierarchy(
        class_names=tuple(classes[g][0] for g in range(len(classes))),
        class_to_super=tuple(classes[g][1] for g in range(len(classes))),
        superclass_names=tuple(super_names[s] for s in range(len(super_names))),
    )


def write_hierarchy(hierarchy: ClassHierarchy, path: str | Path) -> None:
    lines = [
        f"{g}\t{hierarchy.class_names[g]}\t{hierarchy.class_to_super[g]}"
        f"\t{hierarchy.superclass_names[hierarchy.class_to_super[g]]}"
        for g in range(hierarchy.class_count)
    ]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StoreIOError(f"cannot write hierarchy file {path}: {exc}") from exc


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    feature_path: str  # relative to the manifest's directory
    class_id: int
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    """Validated image index: ids, feature paths, class labels, split membership.

    Split disjointness (no class in both splits) is enforced at load time;
    a manifest violating it cannot be constructed through :func:`load_manifest`.
    """

    entries: tuple[ManifestEntry, ...]
    class_count: int
    root: Path

    def entries_for(self, split: str) -> tuple[ManifestEntry, ...]:
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}, expected one of {SPLITS}")
        return tuple(e for e in self.entries if e.split == split)

    @property
    def known(self) -> tuple[ManifestEntry, ...]:
        return self.entries_for(KNOWN)

    @property
    def unknown(self) -> tuple[ManifestEntry, ...]:
        return self.entries_for(UNKNOWN)

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.feature_path


def load_manifest(path: str | Path, hierarchy: ClassHierarchy) -> DatasetManifest:
    """Parse and validate a manifest file against ``hierarchy``.

    Lines are ``image_id<TAB>relative_feature_path<TAB>class_id<TAB>known|unknown``;
    ``#`` lines are ignored. Raises :class:`SplitContaminationError` when a
    class id appears in both splits, :class:`MissingClassError` for class ids
    the hierarchy does not define, and :class:`ValidationError` for duplicate
    image ids or an empty known split.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StoreIOError(f"cannot read manifest file {path}: {exc}") from exc

    entries: list[ManifestEntry] = []
    seen_ids: set[str] = set()
    split_classes: dict[str, set[int]] = {KNOWN: set(), UNKNOWN: set()}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
        image_id, feature_path, class_field, split = fields
        try:
            class_id = int(class_field)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: class_id is not an integer: {class_field!r}") from exc
        if split not in SPLITS:
            raise FormatError(f"{path}:{lineno}: split must be 'known' or 'unknown', got {split!r}")
        if image_id in seen_ids:
            raise ValidationError(f"{path}:{lineno}: duplicate image_id {image_id!r}")
        if not 0 <= class_id < hierarchy.class_count:
            raise MissingClassError(
                f"{path}:{lineno}: class id {class_id} not defined by the hierarchy "
                f"(classes 0..{hierarchy.class_count - 1})"
            )
        seen_ids.add(image_id)
        split_classes[split].add(class_id)
        entries.append(ManifestEntry(image_id, feature_path, class_id, split))

    overlap = sorted(split_classes[KNOWN] & split_classes[UNKNOWN])
    if overlap:
        raise SplitContaminationError(
            f"{path}: classes {overlap} appear in both the known and unknown split"
        )
    if not split_classes[KNOWN]:
        raise ValidationError(f"{path}: empty known split (training requires at least one known image)")
    return DatasetManifest(entries=tuple(entries), class_count=hierarchy.class_count, root=path.parent)


def write_manifest(entries: list[ManifestEntry] | tuple[ManifestEntry, ...], path: str | Path) -> None:
    lines = [f"{e.image_id}\t{e.feature_path}\t{e.class_id}\t{e.split}" for e in entries]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StoreIOError(f"cannot write manifest file {path}: {exc}") from exc


def validate_dataset(dataset_dir: str | Path) -> list[tuple[int, str]]:
    """Run every store-level validation over a dataset directory.

    Returns a list of ``(exit_code, message)`` diagnostics (empty when clean).
    Feature files are only scanned once the manifest itself loads; a split
    violation therefore dominates the reported problems.
    """
    dataset_dir = Path(dataset_dir)
    problems: list[tuple[int, str]] = []

    try:
        hierarchy = load_hierarchy(dataset_dir / HIERARCHY_FILENAME)
    except Exception as exc:
        code = getattr(exc, "exit_code", 2)
        problems.append((code, f"hierarchy: {exc}"))
        return problems

    try:
        manifest = load_manifest(dataset_dir / MANIFEST_FILENAME, hierarchy)
    except Exception as exc:
        code = getattr(exc, "exit_code", 2)
        problems.append((code, f"manifest: {exc}"))
        return problems

    feature_dim: int | None = None
    dim_origin = ""
    for entry in manifest.entries:
        try:
            grid = read_feature_grid(manifest.resolve(entry), image_id=entry.image_id)
        except Exception as exc:
            code = getattr(exc, "exit_code", 2)
            problems.append((code, str(exc)))  # reader messages already carry the path
            continue
        if feature_dim is None:
            feature_dim = grid.feature_dim
            dim_origin = entry.feature_path
        elif grid.feature_dim != feature_dim:
            problems.append(
                (
                    2,
                    f"{entry.feature_path}: feature_dim {grid.feature_dim} differs from "
                    f"{feature_dim} ({dim_origin}); one dataset must use one dimension",
                )
            )
    return problems
