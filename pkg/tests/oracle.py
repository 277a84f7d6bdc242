"""Brute-force reference implementations used as independent test oracles.

Everything here is deliberately written with plain Python loops and the math
module (no numpy vectorization, no code shared with the library) so that the
library and the oracle can only agree by computing the same mathematics.
Inputs are nested lists of floats; convert numpy arrays with ``tolist()``.
"""

import math


def encode_axis(position, n):
    out = []
    for i in range(n):
        divisor = 10000.0 ** (2.0 * (i // 2) / n)
        angle = position / divisor
        out.append(math.sin(angle) if i % 2 == 0 else math.cos(angle))
    return out


def positional_vector(row, col, dim):
    half = dim // 2
    return encode_axis(float(row), half) + encode_axis(float(col), half)


def normalize(vec):
    norm = math.sqrt(sum(v * v for v in vec))
    return [v / norm for v in vec]


def mix_grid(rows_data, grid_rows, grid_cols, weight):
    """Normalized appearance/position blend per patch, row-major patch order."""
    dim = len(rows_data[0])
    mixed = []
    for m, feat in enumerate(rows_data):
        r, c = divmod(m, grid_cols)
        pos_unit = normalize(positional_vector(r, c, dim))
        if weight == 1.0:
            mixed.append(pos_unit)
            continue
        unit = normalize(feat)
        if weight == 0.0:
            mixed.append(unit)
        else:
            mixed.append([(1.0 - weight) * u + weight * p for u, p in zip(unit, pos_unit)])
    return mixed


def saliency(rows_data):
    scores = [sum(abs(v) for v in feat) for feat in rows_data]
    total = sum(scores)
    if total == 0.0:
        return [1.0] * len(rows_data)
    return [s * len(rows_data) / total for s in scores]


def nearest_center(vec, centers):
    best_idx = 0
    best_d2 = None
    for idx, center in enumerate(centers):
        d2 = sum((v - c) * (v - c) for v, c in zip(vec, center))
        if best_d2 is None or d2 < best_d2:
            best_d2 = d2
            best_idx = idx
    return best_idx


def assign_all(vectors, centers):
    return [nearest_center(v, centers) for v in vectors]


def semantic_matrix(per_image, k, class_count, mode):
    """Counts and normalized values from (cluster_indices, class_id, weights|None) tuples."""
    counts = [[0.0] * k for _ in range(class_count)]
    for clusters, class_id, weights in per_image:
        for i, cluster in enumerate(clusters):
            counts[class_id][cluster] += 1.0 if weights is None else weights[i]
    values = [[0.0] * k for _ in range(class_count)]
    if mode == "per_cluster":
        for cluster in range(k):
            total = sum(counts[g][cluster] for g in range(class_count))
            if total > 0:
                for g in range(class_count):
                    values[g][cluster] = counts[g][cluster] / total
    else:
        grand = sum(sum(row) for row in counts)
        for g in range(class_count):
            for cluster in range(k):
                values[g][cluster] = counts[g][cluster] / grand
    return counts, values


def predict(rows_data, grid_rows, grid_cols, centers, values, class_to_super, weight, eval_saliency):
    """Class scores and renormalized superclass scores for one image."""
    mixed = mix_grid(rows_data, grid_rows, grid_cols, weight)
    indices = assign_all(mixed, centers)
    class_count = len(values)
    patch_weights = saliency(rows_data) if eval_saliency else [1.0] * len(rows_data)
    total_weight = sum(patch_weights)
    class_scores = [0.0] * class_count
    for w, idx in zip(patch_weights, indices):
        for g in range(class_count):
            class_scores[g] += w * values[g][idx]
    class_scores = [s / total_weight for s in class_scores]
    total = sum(class_scores)
    n_super = max(class_to_super) + 1
    super_scores = [0.0] * n_super
    for g, s in enumerate(class_scores):
        super_scores[class_to_super[g]] += s
    super_scores = [s / total for s in super_scores]
    return class_scores, super_scores


def rank(scores):
    return sorted(range(len(scores)), key=lambda s: (-scores[s], s))


def evaluate(images, centers, values, class_to_super, weight, eval_saliency, ks=(1, 2, 3)):
    """Top-k accuracies and confusion from (rows_data, grid_rows, grid_cols, class_id) tuples."""
    n_super = max(class_to_super) + 1
    hits = {k: 0 for k in ks}
    confusion = [[0] * n_super for _ in range(n_super)]
    for rows_data, grid_rows, grid_cols, class_id in images:
        _, super_scores = predict(
            rows_data, grid_rows, grid_cols, centers, values, class_to_super, weight, eval_saliency
        )
        order = rank(super_scores)
        truth = class_to_super[class_id]
        position = order.index(truth)
        for k in ks:
            if position < k:
                hits[k] += 1
        confusion[truth][order[0]] += 1
    n = len(images)
    return {k: hits[k] / n for k in ks}, confusion
