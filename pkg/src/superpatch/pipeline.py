"""Experiment orchestration: run configuration, dataset loading, end-to-end training.

Everything a run produces is a deterministic function of (dataset, config,
seed); nothing here records timestamps or machine state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .clustering import Centroids, ElbowCurve, assign, elbow_select, fit_kmeans
from .embedding import PositionalConfig, mix_positional, saliency_weights
from .errors import ConfigError, ValidationError
from .inference import TrainedModel
from .semantics import MODES, PER_CLUSTER, build_semantic_matrix
from .store import (
    HIERARCHY_FILENAME,
    MANIFEST_FILENAME,
    ClassHierarchy,
    DatasetManifest,
    load_hierarchy,
    load_manifest,
    read_feature_grid,
)

logger = logging.getLogger(__name__)

ELBOW = "elbow"


@dataclass
class RunConfig:
    """One experiment's resolved knobs; see the config-file format in the CLI.

    Exactly one of ``k`` / ``k_grid`` drives clustering for a training run:
    an integer ``k`` fits directly, ``k = elbow`` selects from ``k_grid``.
    ``sweep_weights`` and ``patch_size`` only affect the sweep command
    (``patch_size`` is free-form metadata echoed into the sweep CSV).
    """

    dataset_dir: Path = Path(".")
    k: int | str = ELBOW
    k_grid: tuple[int, ...] = ()
    positional_weight: float = 0.0
    saliency_train: bool = False
    saliency_eval: bool = False
    normalization: str = PER_CLUSTER
    batch_size_images: int = 6000
    seed: int = 0
    max_iters: int = 100
    tol: float = 1e-4
    threads: int = 1
    sweep_weights: tuple[float, ...] = ()
    patch_size: str = "-"

    def validate_common(self) -> None:
        if not Path(self.dataset_dir).is_dir():
            raise ConfigError(f"dataset_dir {self.dataset_dir} is not a directory")
        if self.normalization not in MODES:
            raise ConfigError(f"normalization must be one of {MODES}, got {self.normalization!r}")
        if not 0.0 <= self.positional_weight <= 1.0:
            raise ConfigError(f"positional_weight must lie in [0, 1], got {self.positional_weight}")
        for name in ("batch_size_images", "max_iters", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")

    def validate_for_train(self) -> None:
        self.validate_common()
        if self.k == ELBOW:
            if len(self.k_grid) < 3:
                raise ConfigError("k = elbow requires a k_grid with at least 3 ascending values")
        elif isinstance(self.k, int):
            if self.k < 1:
                raise ConfigError(f"k must be >= 1, got {self.k}")
            if self.k_grid:
                raise ConfigError("exactly one of k / k_grid may drive clustering; unset k_grid or use k = elbow")
        else:
            raise ConfigError(f"k must be an integer or 'elbow', got {self.k!r}")

    def validate_for_sweep(self) -> None:
        self.validate_common()
        if len(self.k_grid) < 1:
            raise ConfigError("sweep requires k_grid with at least one value")


_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name: str, text: str):
    text = text.strip()
    if name == "dataset_dir":
        return Path(text)
    if name == "k":
        return ELBOW if text == ELBOW else int(text)
    if name in ("k_grid",):
        return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()
    if name == "sweep_weights":
        return tuple(float(v) for v in text.split(",") if v.strip()) if text else ()
    if name in ("saliency_train", "saliency_eval"):
        if text.lower() not in _BOOL_WORDS:
            raise ConfigError(f"{name} must be true/false, got {text!r}")
        return _BOOL_WORDS[text.lower()]
    if name in ("positional_weight", "tol"):
        return float(text)
    if name in ("batch_size_images", "seed", "max_iters", "threads"):
        return int(text)
    return text


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` comments and blanks are ignored."""
    known = {f.name for f in fields(RunConfig)}
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = value.strip()
    return out


def build_config(config_path: str | Path | None, overrides: dict[str, str]) -> RunConfig:
    """Resolve a config file plus override strings into a RunConfig; overrides win."""
    raw: dict[str, str] = {}
    if config_path is not None:
        raw.update(parse_config_file(config_path))
    raw.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig()
    for key, text in raw.items():
        try:
            cfg = replace(cfg, **{key: _coerce(key, str(text))})
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc
    return cfg


def resolved_config_text(cfg: RunConfig) -> str:
    """Canonical key = value rendering of every field, in declaration order."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_dataset(dataset_dir: str | Path) -> tuple[DatasetManifest, ClassHierarchy]:
    """Load and cross-validate the manifest and hierarchy of a dataset directory."""
    dataset_dir = Path(dataset_dir)
    hierarchy = load_hierarchy(dataset_dir / HIERARCHY_FILENAME)
    manifest = load_manifest(dataset_dir / MANIFEST_FILENAME, hierarchy)
    return manifest, hierarchy


@dataclass
class TrainResult:
    model: TrainedModel
    chosen_k: int
    elbow_curve: ElbowCurve | None
    sse_per_epoch: tuple[float, ...]
    n_images: int
    n_patches: int


def _gather_known(
    manifest: DatasetManifest, cfg: RunConfig
) -> tuple[list[np.ndarray], list[tuple[int, np.ndarray | None]], int]:
    """Mixed patch groups plus (class_id, train-saliency) metadata per known image."""
    groups: list[np.ndarray] = []
    metas: list[tuple[int, np.ndarray | None]] = []
    feature_dim: int | None = None
    positional: PositionalConfig | None = None
    for entry in manifest.known:
        grid = read_feature_grid(manifest.resolve(entry), image_id=entry.image_id)
        if feature_dim is None:
            feature_dim = grid.feature_dim
            positional = PositionalConfig(weight=cfg.positional_weight, dim=feature_dim)
        elif grid.feature_dim != feature_dim:
            raise ValidationError(
                f"{entry.feature_path}: feature_dim {grid.feature_dim} differs from {feature_dim}; "
                "one dataset must use one dimension"
            )
        weights = saliency_weights(grid).per_patch if cfg.saliency_train else None
        mixed = mix_positional(grid, positional)
        groups.append(mixed.data)
        metas.append((entry.class_id, weights))
    if feature_dim is None:
        raise ValidationError("manifest has no known-split images to train on")
    return groups, metas, feature_dim


def train_model(manifest: DatasetManifest, hierarchy: ClassHierarchy, cfg: RunConfig) -> TrainResult:
    """Full training pass: gather, cluster (direct K or elbow), count, assemble.

    The published model carries float32 matrices; the semantic counts are
    accumulated from assignments against those float32 centers so that a later
    assignment export reproduces them exactly.
    """
    cfg.validate_for_train()
    groups, metas, feature_dim = _gather_known(manifest, cfg)

    kwargs = dict(
        batch_size_images=cfg.batch_size_images,
        max_iters=cfg.max_iters,
        seed=cfg.seed,
        tol=cfg.tol,
    )
    elbow_curve = None
    if cfg.k == ELBOW:
        elbow_curve, chosen_k = elbow_select(groups, cfg.k_grid, **kwargs)
        logger.info("elbow selected k=%d from grid %s", chosen_k, list(cfg.k_grid))
    else:
        chosen_k = int(cfg.k)
    fitted = fit_kmeans(groups, chosen_k, **kwargs)

    centroids = Centroids(
        k=fitted.k,
        dim=fitted.dim,
        centers=fitted.centers.astype(np.float32),
        training_sse=fitted.training_sse,
        iterations_run=fitted.iterations_run,
        sse_per_epoch=fitted.sse_per_epoch,
    )
    assignments = (
        (assign(group, centroids, threads=cfg.threads), class_id, weights)
        for group, (class_id, weights) in zip(groups, metas)
    )
    semantics = build_semantic_matrix(
        assignments, k=chosen_k, class_count=hierarchy.class_count, mode=cfg.normalization
    )
    model = TrainedModel(
        centroids=centroids,
        semantics=semantics,
        positional=PositionalConfig(weight=cfg.positional_weight, dim=feature_dim),
        saliency_enabled_train=cfg.saliency_train,
        saliency_enabled_eval=cfg.saliency_eval,
        hierarchy=hierarchy,
    )
    return TrainResult(
        model=model,
        chosen_k=chosen_k,
        elbow_curve=elbow_curve,
        sse_per_epoch=fitted.sse_per_epoch,
        n_images=len(groups),
        n_patches=sum(g.shape[0] for g in groups),
    )
