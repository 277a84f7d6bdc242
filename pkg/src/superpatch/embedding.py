"""Positional augmentation and saliency weighting of patch feature grids.

Every operation here is a pure function of its inputs and safe to run on any
number of grids concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DegenerateDataError, ValidationError
from .store import FeatureGrid

BASE_PERIOD = 10000.0


@dataclass(frozen=True)
class PositionalConfig:
    """How much 2-D location information to blend into patch features.

    ``weight`` is the mixing fraction in [0, 1]; 0 keeps pure (normalized)
    appearance, 1 keeps pure position. The weight is quantized to float32 at
    construction because that is the precision the model file stores, and the
    training and inference paths must mix with the identical value.
    """

    weight: float
    dim: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.weight) or not 0.0 <= self.weight <= 1.0:
            raise ConfigError(f"positional weight must lie in [0, 1], got {self.weight!r}")
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ConfigError(f"positional dim must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "weight", float(np.float32(self.weight)))
        object.__setattr__(self, "dim", int(self.dim))


@dataclass
class SaliencyWeights:
    """Per-patch importance weights with mean exactly 1.

    Mean-1 normalization keeps weighted counting from disturbing the mean of
    the class distribution it feeds.
    """

    per_patch: np.ndarray

    def __post_init__(self) -> None:
        self.per_patch = np.asarray(self.per_patch, dtype=np.float64)
        if self.per_patch.ndim != 1 or self.per_patch.size == 0:
            raise ValidationError("saliency weights must form a non-empty vector")
        if np.any(self.per_patch < 0) or not np.all(np.isfinite(self.per_patch)):
            raise ValidationError("saliency weights must be finite and non-negative")
        if abs(float(self.per_patch.mean()) - 1.0) > 1e-6:
            raise ValidationError("saliency weights must average to 1")


def _encode_axis(position: float, n: int) -> np.ndarray:
    idx = np.arange(n)
    angles = position / np.power(BASE_PERIOD, 2.0 * (idx // 2) / n)
    return np.where(idx % 2 == 0, np.sin(angles), np.cos(angles))


def positional_encode(row: int, col: int, grid_rows: int, grid_cols: int, dim: int) -> np.ndarray:
    """Sinusoidal 2-D position vector for one grid cell.

    The first ``dim/2`` components encode the row as interleaved sin/cos at
    geometrically spaced frequencies (base period 10000); the last ``dim/2``
    encode the column the same way. Deterministic, components in [-1, 1].
    """
    if dim % 2 != 0 or dim < 2:
        raise ConfigError(f"positional encoding needs an even dim >= 2, got {dim}")
    if not (0 <= row < grid_rows and 0 <= col < grid_cols):
        raise ValidationError(
            f"position ({row}, {col}) outside the {grid_rows}x{grid_cols} grid"
        )
    half = dim // 2
    return np.concatenate([_encode_axis(float(row), half), _encode_axis(float(col), half)])


@lru_cache(maxsize=32)
def _positional_table(grid_rows: int, grid_cols: int, dim: int) -> np.ndarray:
    """Unit-normalized position vectors for every cell, patch-major; cached read-only."""
    half = dim // 2
    rows = np.stack([_encode_axis(float(r), half) for r in range(grid_rows)])
    cols = np.stack([_encode_axis(float(c), half) for c in range(grid_cols)])
    table = np.empty((grid_rows * grid_cols, dim))
    table[:, :half] = np.repeat(rows, grid_cols, axis=0)
    table[:, half:] = np.tile(cols, (grid_rows, 1))
    norms = np.linalg.norm(table, axis=1)
    if np.any(norms == 0):
        raise DegenerateDataError(
            f"zero-norm positional vector at dim {dim}; use a dim with paired sin/cos terms"
        )
    table /= norms[:, None]
    table.setflags(write=False)
    return table


def mix_positional(grid: FeatureGrid, cfg: PositionalConfig) -> FeatureGrid:
    """Blend normalized appearance with normalized position, patch by patch.

    Output row m is ``(1 - w) * u_m + w * p_m`` where ``u_m`` is the
    L2-normalized input feature and ``p_m`` the L2-normalized position vector
    of patch m's cell. ``w == 0`` returns exactly the normalized input;
    ``w == 1`` returns exactly the normalized position vectors (feature
    content, including zero rows, is then irrelevant).
    """
    if cfg.dim != grid.feature_dim:
        raise ValidationError(
            f"positional dim {cfg.dim} does not match grid feature_dim {grid.feature_dim}"
        )
    if cfg.dim % 2 != 0:
        raise ConfigError(f"positional encoding needs an even dim, got {cfg.dim}")
    w = cfg.weight
    if w == 1.0:
        mixed = _positional_table(grid.grid_rows, grid.grid_cols, cfg.dim).copy()
    else:
        feats = grid.data.astype(np.float64)
        norms = np.linalg.norm(feats, axis=1)
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise DegenerateDataError(
                f"grid {grid.image_id!r}: patch {int(zero[0])} has a zero feature vector "
                "and cannot be normalized"
            )
        unit = feats / norms[:, None]
        if w == 0.0:
            mixed = unit
        else:
            table = _positional_table(grid.grid_rows, grid.grid_cols, cfg.dim)
            mixed = (1.0 - w) * unit + w * table
    return FeatureGrid(grid.image_id, grid.grid_rows, grid.grid_cols, grid.feature_dim, mixed)


def saliency_weights(grid: FeatureGrid, absolute: bool = True) -> SaliencyWeights:
    """Per-patch weights from channel-wise feature magnitude, mean exactly 1.

    Raw score of patch m is the channel-wise sum of absolute values (with
    ``absolute=False``, the signed sum clamped at zero). Scores are rescaled
    so the weights average to 1 over the image; an all-zero grid falls back
    to uniform weights.
    """
    data = grid.data.astype(np.float64)
    if absolute:
        scores = np.abs(data).sum(axis=1)
    else:
        scores = np.clip(data.sum(axis=1), 0.0, None)
    total = float(scores.sum())
    if total == 0.0:
        return SaliencyWeights(np.ones(grid.patch_count))
    return SaliencyWeights(scores * (grid.patch_count / total))
