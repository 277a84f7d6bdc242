"""Per-cluster semantic confidence vectors learned from known-class patches.

Each cluster becomes a normalized class histogram: counting how many patches
of each known class landed in it (optionally weighting every patch by its
saliency) and normalizing either per cluster or across the whole dataset.

Count accumulation is a reduction keyed by (class, cluster); the finished
matrix is immutable in practice and safe to share across threads.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .embedding import SaliencyWeights
from .errors import ConfigError, EmptyTrainingError, ValidationError
from .store import ClassHierarchy

logger = logging.getLogger(__name__)

PER_CLUSTER = "per_cluster"
DATASET_WIDE = "dataset_wide"
MODES = (PER_CLUSTER, DATASET_WIDE)


@dataclass(eq=False)
class SemanticMatrix:
    """Class-confidence columns per cluster, plus the raw counts behind them.

    ``values`` is (class_count, k). In ``per_cluster`` mode every non-empty
    column sums to 1; in ``dataset_wide`` mode the whole matrix sums to 1.
    ``counts`` retains the (possibly saliency-weighted) pre-normalization
    tallies for audit; ``patch_totals`` is its per-cluster column sum.
    """

    class_count: int
    k: int
    values: np.ndarray
    mode: str
    counts: np.ndarray
    patch_totals: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        self.counts = np.asarray(self.counts)
        self.patch_totals = np.asarray(self.patch_totals, dtype=np.float64)
        self.validate()

    @property
    def empty_clusters(self) -> np.ndarray:
        return np.flatnonzero(self.patch_totals == 0)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown normalization mode {self.mode!r}, expected one of {MODES}")
        shape = (self.class_count, self.k)
        if self.values.shape != shape or self.counts.shape != shape:
            raise ValidationError(
                f"matrix shapes {self.values.shape}/{self.counts.shape} do not match {shape}"
            )
        if self.patch_totals.shape != (self.k,):
            raise ValidationError("patch_totals must have one entry per cluster")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValidationError("semantic values must be finite and non-negative")
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ValidationError("semantic counts must be finite and non-negative")
        sums = self.values.sum(axis=0, dtype=np.float64)
        if self.mode == PER_CLUSTER:
            occupied = self.patch_totals > 0
            if np.any(np.abs(sums[occupied] - 1.0) > 1e-6):
                raise ValidationError("non-empty per-cluster columns must sum to 1")
            if np.any(sums[~occupied] != 0.0):
                raise ValidationError("empty-cluster columns must be all-zero")
        else:
            if abs(float(sums.sum()) - 1.0) > 1e-6:
                raise ValidationError("dataset-wide matrix must sum to 1 overall")


def build_semantic_matrix(
    assignments: Iterable[tuple[np.ndarray, int, SaliencyWeights | np.ndarray | None]],
    k: int,
    class_count: int,
    mode: str = PER_CLUSTER,
) -> SemanticMatrix:
    """Accumulate (cluster, class) patch counts and normalize them.

    ``assignments`` yields one ``(cluster_indices, class_id, weights)`` tuple
    per image; ``weights`` is optional (``None`` counts each patch as 1).
    Accumulation runs in float64; the published matrices are float32, the
    precision the model file stores.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown normalization mode {mode!r}, expected one of {MODES}")
    if k < 1 or class_count < 1:
        raise ValidationError(f"k and class_count must be positive, got k={k}, G={class_count}")

    counts = np.zeros((class_count, k))
    for clusters, class_id, weights in assignments:
        idx = np.asarray(clusters, dtype=np.int64)
        if idx.ndim != 1:
            raise ValidationError(f"cluster indices must form a vector, got shape {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= k):
            raise ValidationError(f"cluster index outside 0..{k - 1} in image assignment")
        if not 0 <= class_id < class_count:
            raise ValidationError(f"class id {class_id} outside 0..{class_count - 1}")
        if weights is None:
            w = None
        else:
            w = weights.per_patch if isinstance(weights, SaliencyWeights) else np.asarray(weights, dtype=np.float64)
            if w.shape != idx.shape:
                raise ValidationError(
                    f"weights shape {w.shape} does not match {idx.size} assigned patches"
                )
        counts[class_id] += np.bincount(idx, weights=w, minlength=k)

    grand_total = float(counts.sum())
    if grand_total == 0.0:
        raise EmptyTrainingError("no patches were counted; cannot build a semantic matrix")

    patch_totals = counts.sum(axis=0)
    if mode == PER_CLUSTER:
        values = np.zeros_like(counts)
        occupied = patch_totals > 0
        values[:, occupied] = counts[:, occupied] / patch_totals[occupied]
        n_empty = int((~occupied).sum())
        if n_empty:
            logger.warning("%d of %d clusters received no patches; their columns stay zero", n_empty, k)
    else:
        values = counts / grand_total

    return SemanticMatrix(
        class_count=class_count,
        k=k,
        values=values.astype(np.float32),
        mode=mode,
        counts=counts.astype(np.float32),
        patch_totals=patch_totals,
    )


@dataclass(frozen=True)
class ClusterPurityRow:
    cluster_id: int
    patch_count: float
    dominant_class: int
    dominant_superclass: int
    entropy: float


def cluster_purity_report(matrix: SemanticMatrix, hierarchy: ClassHierarchy) -> list[ClusterPurityRow]:
    """Per-cluster class-purity summary, purest (lowest entropy) first.

    Entropy is Shannon entropy in nats of the cluster's class distribution.
    Empty clusters report zero entropy and -1 dominants.
    """
    if matrix.class_count != hierarchy.class_count:
        raise ValidationError(
            f"matrix covers {matrix.class_count} classes but hierarchy defines {hierarchy.class_count}"
        )
    class_to_super = np.asarray(hierarchy.class_to_super, dtype=np.int64)
    rows = []
    counts = matrix.counts.astype(np.float64)
    for cluster in range(matrix.k):
        column = counts[:, cluster]
        total = float(column.sum())
        if total == 0.0:
            rows.append(ClusterPurityRow(cluster, 0.0, -1, -1, 0.0))
            continue
        p = column / total
        entropy = shannon_entropy(p)
        super_mass = np.zeros(hierarchy.superclass_count)
        np.add.at(super_mass, class_to_super, p)
        rows.append(
            ClusterPurityRow(
                cluster_id=cluster,
                patch_count=total,
                dominant_class=int(np.argmax(p)),
                dominant_superclass=int(np.argmax(super_mass)),
                entropy=entropy,
            )
        )
    rows.sort(key=lambda r: (r.entropy, r.cluster_id))
    return rows


def purity_report_to_csv(rows: list[ClusterPurityRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cluster_id", "patch_count", "dominant_class", "dominant_superclass", "entropy"])
        for row in rows:
            writer.writerow(
                [row.cluster_id, repr(row.patch_count), row.dominant_class, row.dominant_superclass, repr(row.entropy)]
            )


def shannon_entropy(distribution: np.ndarray) -> float:
    """Entropy in nats of a non-negative vector normalized to its own sum."""
    p = np.asarray(distribution, dtype=np.float64)
    total = float(p.sum())
    if total <= 0:
        return 0.0
    p = p / total
    live = p[p > 0]
    return float(-(live * np.log(live)).sum()) if live.size else 0.0
