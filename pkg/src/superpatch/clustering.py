"""Class-agnostic mini-batch K-means over patch vectors and elbow K selection.

The batching unit is the image: all patches of a sampled image enter a batch
together. When one batch covers the whole dataset the epoch degenerates to an
exact Lloyd iteration, which is what the step-equivalence property checks.

A fitted :class:`Centroids` value is immutable in practice and safe to share
across threads; :func:`assign` partitions freely across workers because each
chunk writes a disjoint output slice.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateDataError, SuperpatchError, ValidationError

logger = logging.getLogger(__name__)

_CHUNK = 16384  # patches per distance block; bounds peak memory at chunk * k


@dataclass(eq=False)
class Centroids:
    """K cluster centers plus training metadata."""

    k: int
    dim: int
    centers: np.ndarray  # (k, dim)
    training_sse: float
    iterations_run: int
    sse_per_epoch: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers)
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.centers.shape != (self.k, self.dim):
            raise ValidationError(
                f"centers shape {self.centers.shape} does not match (k={self.k}, dim={self.dim})"
            )
        if not np.all(np.isfinite(self.centers)):
            raise ValidationError("centroid matrix contains non-finite values")
        if self.training_sse < 0:
            raise ValidationError(f"training_sse must be non-negative, got {self.training_sse}")


@dataclass(eq=False)
class ElbowCurve:
    """SSE as a function of K, exportable as ``k,sse`` CSV."""

    points: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        ks = [k for k, _ in self.points]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValidationError(f"elbow curve k values must be strictly increasing, got {ks}")
        if any(sse < 0 for _, sse in self.points):
            raise ValidationError("elbow curve SSE values must be non-negative")

    @property
    def ks(self) -> np.ndarray:
        return np.array([k for k, _ in self.points], dtype=np.int64)

    @property
    def sses(self) -> np.ndarray:
        return np.array([s for _, s in self.points], dtype=np.float64)

    def monotonicity_violations(self) -> list[tuple[int, int]]:
        """(k_prev, k_next) pairs where SSE rose beyond 1e-6 of the first SSE.

        More centers on the same data should not raise Lloyd SSE; a violation
        indicates a non-converged fit and is reported rather than hidden.
        """
        tol = 1e-6 * self.points[0][1]
        return [
            (self.points[i][0], self.points[i + 1][0])
            for i in range(len(self.points) - 1)
            if self.points[i + 1][1] > self.points[i][1] + tol
        ]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["k", "sse"])
            for k, sse in self.points:
                writer.writerow([k, repr(float(sse))])


def _as_groups(patches: np.ndarray | Iterable[np.ndarray]) -> list[np.ndarray]:
    """Normalize input into per-image float64 groups.

    A bare 2-D matrix is a structureless patch stream: each row becomes its
    own group so image-level batching degrades gracefully to row batching.
    """
    if isinstance(patches, np.ndarray):
        arr = np.asarray(patches, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"patch matrix must be 2-D, got shape {arr.shape}")
        return [arr[i : i + 1] for i in range(arr.shape[0])]
    groups = []
    for g in patches:
        arr = np.asarray(g, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValidationError(f"each patch group must be a non-empty 2-D array, got {arr.shape}")
        groups.append(arr)
    if groups:
        dims = {g.shape[1] for g in groups}
        if len(dims) > 1:
            raise ValidationError(f"patch groups carry mixed dims {sorted(dims)}")
    return groups


def _centers_of(centroids: Centroids | np.ndarray) -> np.ndarray:
    if isinstance(centroids, Centroids):
        return centroids.centers
    return np.asarray(centroids)


def _labels_and_sq_dists(block: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-center index and its squared distance per row (float64 math)."""
    x2 = np.einsum("ij,ij->i", block, block)
    c2 = np.einsum("ij,ij->i", centers, centers)
    d2 = x2[:, None] - 2.0 * (block @ centers.T) + c2[None, :]
    labels = np.argmin(d2, axis=1)  # argmin takes the first minimum: lowest index wins ties
    best = d2[np.arange(block.shape[0]), labels]
    return labels, np.maximum(best, 0.0)


def assign(
    patches: np.ndarray,
    centroids: Centroids | np.ndarray,
    *,
    threads: int = 1,
    chunk: int = _CHUNK,
) -> np.ndarray:
    """Exact nearest-center index per patch row, ties broken by lowest index.

    Embarrassingly parallel: with ``threads > 1`` the rows are partitioned
    into chunks and each worker writes a disjoint slice of the result, so the
    output is identical for any thread count.
    """
    pts = np.ascontiguousarray(np.asarray(patches, dtype=np.float64))
    if pts.ndim != 2:
        raise ValidationError(f"patch matrix must be 2-D, got shape {pts.shape}")
    centers = np.ascontiguousarray(_centers_of(centroids).astype(np.float64))
    if pts.shape[1] != centers.shape[1]:
        raise ValidationError(
            f"patch dim {pts.shape[1]} does not match centroid dim {centers.shape[1]}"
        )
    out = np.empty(pts.shape[0], dtype=np.int64)
    spans = [(start, min(start + chunk, pts.shape[0])) for start in range(0, pts.shape[0], chunk)]

    def work(span: tuple[int, int]) -> None:
        lo, hi = span
        out[lo:hi] = _labels_and_sq_dists(pts[lo:hi], centers)[0]

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, spans))
    else:
        for span in spans:
            work(span)
    return out


def _min_sq_dists(pts: np.ndarray, centers: np.ndarray, chunk: int = _CHUNK) -> np.ndarray:
    out = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], chunk):
        stop = min(start + chunk, pts.shape[0])
        out[start:stop] = _labels_and_sq_dists(pts[start:stop], centers)[1]
    return out


def dataset_sse(pts: np.ndarray, centroids: Centroids | np.ndarray) -> float:
    """Sum of squared distances of every row to its nearest center."""
    centers = np.asarray(_centers_of(centroids), dtype=np.float64)
    return float(_min_sq_dists(np.asarray(pts, dtype=np.float64), centers).sum())


def _kmeans_plus_plus(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[int(rng.integers(n))]
    d2 = np.maximum(((pts - centers[0]) ** 2).sum(axis=1), 0.0)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            raise DegenerateDataError(
                f"only {j} distinct patch vectors available; cannot seed k={k} clusters"
            )
        idx = int(rng.choice(n, p=d2 / total))
        centers[j] = pts[idx]
        d2 = np.minimum(d2, np.maximum(((pts - centers[j]) ** 2).sum(axis=1), 0.0))
    return centers


def _group_sums(pts: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster vector sums and member counts, deterministically ordered."""
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    order = np.argsort(labels, kind="stable")
    sorted_pts = pts[order]
    sorted_labels = labels[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_labels)) + 1]
    sums = np.zeros((k, pts.shape[1]))
    sums[sorted_labels[starts]] = np.add.reduceat(sorted_pts, starts, axis=0)
    return sums, counts


def fit_kmeans(
    patches: np.ndarray | Iterable[np.ndarray],
    k: int,
    *,
    batch_size_images: int = 6000,
    max_iters: int = 100,
    seed: int = 0,
    tol: float = 1e-4,
    init_centers: np.ndarray | None = None,
) -> Centroids:
    """Mini-batch K-means with kmeans++ seeding; deterministic given ``seed``.

    ``patches`` is either a 2-D matrix (rows are independent samples) or an
    iterable of per-image matrices; batches sample whole images. Per epoch the
    per-cluster counts reset, each batch moving a center toward its batch mean
    with rate batch_count/epoch_count, so a batch covering the whole dataset
    performs an exact Lloyd step. Clusters that received nothing all epoch are
    reseeded to the points of the last batch farthest from their assigned
    centers. Stops when the max center shift over an epoch drops below
    ``tol``, or after ``max_iters`` epochs. ``training_sse`` is the
    full-dataset SSE at the returned centers.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if batch_size_images < 1:
        raise ValidationError(f"batch_size_images must be >= 1, got {batch_size_images}")
    groups = _as_groups(patches)
    if not groups:
        raise ValidationError("empty patch stream")
    data = np.concatenate(groups)
    n, dim = data.shape
    if n < k:
        raise DegenerateDataError(f"stream yields {n} patch vectors but k={k}")

    rng = np.random.default_rng(seed)
    if init_centers is not None:
        centers = np.array(init_centers, dtype=np.float64)
        if centers.shape != (k, dim):
            raise ValidationError(f"init_centers shape {centers.shape} != ({k}, {dim})")
    else:
        centers = _kmeans_plus_plus(data, k, rng)

    n_groups = len(groups)
    full_batch = batch_size_images >= n_groups
    previous = centers.copy()
    sse_history: list[float] = []
    iterations = 0

    for _ in range(max_iters):
        iterations += 1
        if full_batch:
            batches: list[np.ndarray] = [np.arange(n_groups)]
        else:
            order = rng.permutation(n_groups)
            batches = [order[i : i + batch_size_images] for i in range(0, n_groups, batch_size_images)]

        epoch_counts = np.zeros(k)
        last_pts: np.ndarray = data
        for batch in batches:
            pts = data if full_batch else np.concatenate([groups[i] for i in batch])
            labels = assign(pts, centers)
            sums, counts = _group_sums(pts, labels, k)
            new_totals = epoch_counts + counts
            hit = counts > 0
            eta = np.zeros(k)
            eta[hit] = counts[hit] / new_totals[hit]
            means = np.zeros_like(centers)
            means[hit] = sums[hit] / counts[hit, None]
            centers[hit] = (1.0 - eta[hit, None]) * centers[hit] + eta[hit, None] * means[hit]
            epoch_counts = new_totals
            last_pts = pts

        starved = np.flatnonzero(epoch_counts == 0)
        if starved.size:
            dist_order = np.argsort(-_min_sq_dists(last_pts, centers), kind="stable")
            for slot, cluster in enumerate(starved):
                if slot >= dist_order.size:
                    break
                centers[cluster] = last_pts[dist_order[slot]]
            logger.warning("reseeded %d empty clusters from the last batch", starved.size)

        sse = float(_min_sq_dists(data, centers).sum())
        if sse_history and sse > sse_history[-1] + tol:
            logger.warning(
                "epoch %d raised full-dataset SSE from %.6g to %.6g", iterations, sse_history[-1], sse
            )
        sse_history.append(sse)
        shift = float(np.sqrt(((centers - previous) ** 2).sum(axis=1)).max())
        previous = centers.copy()
        if shift < tol:
            break

    return Centroids(
        k=k,
        dim=dim,
        centers=centers,
        training_sse=sse_history[-1],
        iterations_run=iterations,
        sse_per_epoch=tuple(sse_history),
    )


def knee_index(ks: Sequence[int], sses: Sequence[float], tie_eps: float = 1e-9) -> int:
    """Index of the elbow: max perpendicular distance to the first-last chord.

    Both axes are min-max normalized to [0, 1] first. Endpoints sit on the
    chord and are never selected; interior candidates within ``tie_eps`` of
    the best distance tie-break to the lowest k, so a perfectly linear decay
    yields the first interior point.
    """
    ks_arr = np.asarray(ks, dtype=np.float64)
    sse_arr = np.asarray(sses, dtype=np.float64)
    if ks_arr.size != sse_arr.size or ks_arr.size < 3:
        raise ValidationError(f"knee detection needs >= 3 curve points, got {ks_arr.size}")
    x = (ks_arr - ks_arr[0]) / (ks_arr[-1] - ks_arr[0])
    span = sse_arr.max() - sse_arr.min()
    y = np.zeros_like(sse_arr) if span == 0 else (sse_arr - sse_arr.min()) / span
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    length = float(np.hypot(dx, dy))
    dist = np.abs(dx * (y - y[0]) - dy * (x - x[0])) / length
    interior = dist[1:-1]
    best = float(interior.max())
    return 1 + int(np.flatnonzero(interior >= best - tie_eps)[0])


def elbow_select(
    patches: np.ndarray | Iterable[np.ndarray],
    k_grid: Sequence[int],
    *,
    batch_size_images: int = 6000,
    max_iters: int = 100,
    seed: int = 0,
    tol: float = 1e-4,
) -> tuple[ElbowCurve, int]:
    """Fit K-means per grid point and pick K at the sharpest SSE bend.

    ``k_grid`` must be strictly ascending with at least 3 entries. Fit errors
    propagate with the failing k attached. A non-monotone curve is logged,
    not hidden.
    """
    grid = [int(k) for k in k_grid]
    if len(grid) < 3:
        raise ValidationError(f"k_grid needs at least 3 values, got {grid}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError(f"k_grid must be strictly ascending, got {grid}")
    groups = _as_groups(patches)

    points: list[tuple[int, float]] = []
    for k in grid:
        try:
            fitted = fit_kmeans(
                groups, k, batch_size_images=batch_size_images, max_iters=max_iters, seed=seed, tol=tol
            )
        except SuperpatchError as exc:
            exc.args = (f"elbow fit failed at k={k}: {exc}",)
            raise
        points.append((k, fitted.training_sse))

    curve = ElbowCurve(points=tuple(points))
    violations = curve.monotonicity_violations()
    if violations:
        logger.warning("elbow curve SSE rose between k pairs %s (non-converged fits?)", violations)
    chosen = grid[knee_index(curve.ks, curve.sses)]
    return curve, chosen
