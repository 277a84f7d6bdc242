"""Deterministic synthetic fixtures shared across the test suite.

The atom fixture plants class-specific Gaussian appearance atoms: three
superclasses of two classes each, where sibling classes share part of their
atom pool and the held-out (unknown) classes overlap their known siblings.
Shared background atoms between the superclass regions make small cluster
budgets genuinely worse, so accuracy-vs-K has a knee instead of being flat.
"""

from pathlib import Path

import numpy as np

from superpatch.store import (
    ClassHierarchy,
    FeatureGrid,
    ManifestEntry,
    load_hierarchy,
    load_manifest,
    write_feature_grid,
    write_hierarchy,
    write_manifest,
)

ATOM_DIM = 24
ATOM_GRID = 4  # 4x4 patches per image
ATOM_HIERARCHY = ClassHierarchy(
    class_names=("sedan", "lorry", "heron", "finch", "oak", "fern"),
    class_to_super=(0, 0, 1, 1, 2, 2),
    superclass_names=("vehicles", "birds", "vegetation"),
)
ATOM_KNOWN_CLASSES = (0, 2, 4, 5)
ATOM_UNKNOWN_CLASSES = (1, 3)


def _atom_bank(rng, *, super_scale, pool_scale, background_scale):
    """Six pool atoms per superclass around well-separated centers, plus
    background atoms placed between the superclass regions."""
    centers = np.zeros((3, ATOM_DIM))
    for s in range(3):
        centers[s, s] = super_scale
    pools = []
    for s in range(3):
        directions = rng.normal(size=(6, ATOM_DIM))
        directions /= np.linalg.norm(directions, axis=1)[:, None]
        pools.append(centers[s] + pool_scale * directions)
    midpoints = np.array([(centers[0] + centers[1]) / 2, (centers[1] + centers[2]) / 2,
                          (centers[0] + centers[2]) / 2, centers.mean(axis=0)])
    directions = rng.normal(size=(4, ATOM_DIM))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    background = midpoints + background_scale * directions
    return pools, background


def _class_atoms(pools, class_id):
    """Sibling 0 of a superclass uses pool[0:4], sibling 1 uses pool[2:6]."""
    super_id = class_id // 2
    return pools[super_id][0:4] if class_id % 2 == 0 else pools[super_id][2:6]


def atom_image(rng, pools, background, class_id, *, noise, background_fraction):
    """One image: patches sample the class's atoms, some patches background."""
    atoms = _class_atoms(pools, class_id)
    patches = np.empty((ATOM_GRID * ATOM_GRID, ATOM_DIM), dtype=np.float64)
    for m in range(patches.shape[0]):
        if rng.random() < background_fraction:
            source = background[rng.integers(len(background))]
        else:
            source = atoms[rng.integers(len(atoms))]
        patches[m] = source + noise * rng.normal(size=ATOM_DIM)
    return patches.astype(np.float32)


def make_atom_dataset(
    dataset_dir: Path,
    *,
    seed: int = 20240,
    train_per_class: int = 60,
    eval_per_class: int = 60,
    super_scale: float = 2.9,
    pool_scale: float = 2.5,
    background_scale: float = 2.0,
    noise: float = 0.5,
    background_fraction: float = 0.5,
) -> Path:
    """Write the atom fixture as an on-disk dataset; returns ``dataset_dir``.

    Training image counts are balanced per superclass (the split leaves one
    known class in two superclasses but two in the third), so the shared
    background atoms acquire superclass-neutral confidence columns.
    """
    rng = np.random.default_rng(seed)
    pools, background = _atom_bank(
        rng, super_scale=super_scale, pool_scale=pool_scale, background_scale=background_scale
    )
    dataset_dir = Path(dataset_dir)
    features = dataset_dir / "features"
    features.mkdir(parents=True, exist_ok=True)

    entries = []

    def emit(class_id, split, count):
        for i in range(count):
            image_id = f"{split}_c{class_id}_{i:03d}"
            data = atom_image(
                rng, pools, background, class_id, noise=noise, background_fraction=background_fraction
            )
            grid = FeatureGrid(image_id, ATOM_GRID, ATOM_GRID, ATOM_DIM, data)
            rel = f"features/{image_id}.apft"
            write_feature_grid(grid, dataset_dir / rel)
            entries.append(ManifestEntry(image_id, rel, class_id, split))

    class_weight = {0: 1.0, 2: 1.0, 4: 0.5, 5: 0.5}  # superclass 2 has two known classes
    for class_id in ATOM_KNOWN_CLASSES:
        emit(class_id, "known", max(1, round(train_per_class * class_weight[class_id])))
    for class_id in ATOM_UNKNOWN_CLASSES:
        emit(class_id, "unknown", eval_per_class)

    write_hierarchy(ATOM_HIERARCHY, dataset_dir / "hierarchy.tsv")
    write_manifest(entries, dataset_dir / "manifest.tsv")
    return dataset_dir


def load_dataset_dir(dataset_dir: Path):
    hierarchy = load_hierarchy(Path(dataset_dir) / "hierarchy.tsv")
    manifest = load_manifest(Path(dataset_dir) / "manifest.tsv", hierarchy)
    return manifest, hierarchy


def blob_groups(seed: int = 7, *, n_blobs: int = 5, images_per_blob: int = 12, dim: int = 8,
                spread: float = 8.0, sigma: float = 0.25):
    """Per-image patch groups planted around ``n_blobs`` well-separated centers."""
    rng = np.random.default_rng(seed)
    centers = np.zeros((n_blobs, dim))
    for b in range(n_blobs):
        centers[b, b % dim] = spread * (1 + b // dim)
    groups = []
    blob_of_group = []
    for b in range(n_blobs):
        for _ in range(images_per_blob):
            groups.append(centers[b] + sigma * rng.normal(size=(9, dim)))
            blob_of_group.append(b)
    return groups, blob_of_group


BLOB_HIERARCHY = ClassHierarchy(
    class_names=("c0", "c1", "c2", "c3", "c4"),
    class_to_super=(0, 0, 0, 1, 1),
    superclass_names=("s0", "s1"),
)


def make_blob_dataset(dataset_dir: Path, seed: int = 7) -> Path:
    """The 5-blob fixture as a dataset (all images known; unknown split empty)."""
    dataset_dir = Path(dataset_dir)
    features = dataset_dir / "features"
    features.mkdir(parents=True, exist_ok=True)
    groups, blob_of_group = blob_groups(seed)
    entries = []
    for i, (patches, blob) in enumerate(zip(groups, blob_of_group)):
        image_id = f"blob{blob}_{i:03d}"
        grid = FeatureGrid(image_id, 3, 3, patches.shape[1], patches.astype(np.float32))
        rel = f"features/{image_id}.apft"
        write_feature_grid(grid, dataset_dir / rel)
        entries.append(ManifestEntry(image_id, rel, blob, "known"))
    write_hierarchy(BLOB_HIERARCHY, dataset_dir / "hierarchy.tsv")
    write_manifest(entries, dataset_dir / "manifest.tsv")
    return dataset_dir


def random_grid(rng, rows: int, cols: int, dim: int, image_id: str = "img") -> FeatureGrid:
    data = rng.normal(size=(rows * cols, dim)).astype(np.float32)
    return FeatureGrid(image_id, rows, cols, dim, data)


def random_hierarchy(rng, class_count: int, superclass_count: int) -> ClassHierarchy:
    """Random dense mapping where every superclass keeps at least one member."""
    assert superclass_count <= class_count
    mapping = list(rng.integers(superclass_count, size=class_count))
    for s in range(superclass_count):
        mapping[s] = s
    return ClassHierarchy(
        class_names=tuple(f"class{g}" for g in range(class_count)),
        class_to_super=tuple(int(s) for s in mapping),
        superclass_names=tuple(f"super{s}" for s in range(superclass_count)),
    )
