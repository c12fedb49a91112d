"""Whole-model weight clustering (1-D k-means over a flat weight vector).

A weight vector ``theta`` of length ``d`` is compressed into ``kappa``
centroids ``Z`` plus a mapping ``P`` that assigns every weight to one
centroid.  Seeding is k-means++, refinement is Lloyd's algorithm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

MAX_ITER = 100
_CHUNK = 8192


@dataclass(frozen=True)
class ClusteredModel:
    centroids: np.ndarray  # (kappa,) float64
    mapping: np.ndarray  # (d,) int64, entries in [0, kappa)

    def __post_init__(self):
        z = np.asarray(self.centroids, dtype=np.float64)
        p = np.asarray(self.mapping, dtype=np.int64)
        if z.ndim != 1 or p.ndim != 1 or z.size == 0 or p.size == 0:
            raise InvalidArgument("centroids and mapping must be non-empty 1-D arrays")
        if not np.all(np.isfinite(z)):
            raise InvalidArgument("centroids must be finite")
        if p.min() < 0 or p.max() >= z.size:
            raise InvalidArgument("mapping entries must lie in [0, kappa)")
        object.__setattr__(self, "centroids", z)
        object.__setattr__(self, "mapping", p)

    @property
    def kappa(self) -> int:
        return int(self.centroids.size)

    @property
    def d(self) -> int:
        return int(self.mapping.size)


def as_weight_vector(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size < 1:
        raise InvalidArgument("weight vector must hold at least one value")
    if not np.all(np.isfinite(w)):
        raise InvalidArgument("weight vector contains NaN or Inf")
    return w


def nearest_centroid(weights: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the closest centroid for every weight; ties go to the lowest index.

    Work is O(kappa * d), done in row chunks to bound memory.
    """
    out = np.empty(weights.size, dtype=np.int64)
    for start in range(0, weights.size, _CHUNK):
        block = weights[start:start + _CHUNK, None]
        # argmin returns the first minimum, which gives the tie rule for free
        out[start:start + _CHUNK] = np.argmin((block - centroids[None, :]) ** 2, axis=1)
    return out


def _kmeans_pp(w: np.ndarray, kappa: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty(kappa, dtype=np.float64)
    centroids[0] = w[rng.integers(w.size)]
    dist = (w - centroids[0]) ** 2
    for k in range(1, kappa):
        total = dist.sum()
        if total > 0:
            idx = rng.choice(w.size, p=dist / total)
        else:
            # fewer distinct values than clusters; duplicates are unavoidable
            idx = rng.integers(w.size)
        centroids[k] = w[idx]
        np.minimum(dist, (w - centroids[k]) ** 2, out=dist)
    return centroids


def _update(w: np.ndarray, mapping: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    kappa = centroids.size
    counts = np.bincount(mapping, minlength=kappa)
    sums = np.bincount(mapping, weights=w, minlength=kappa)
    new = centroids.copy()
    live = counts > 0
    new[live] = sums[live] / counts[live]
    empty = np.flatnonzero(~live)
    if empty.size:
        # re-seed each empty cluster at the point farthest from its centroid
        far = np.argsort(-(w - new[mapping]) ** 2, kind="stable")
        taken = set()
        j = 0
        for k in empty:
            while j < far.size and far[j] in taken:
                j += 1
            if j == far.size:
                break
            taken.add(far[j])
            new[k] = w[far[j]]
    return new


def cluster_weights(weights, kappa: int, seed: int, max_iter: int = MAX_ITER) -> ClusteredModel:
    """Cluster ``weights`` into ``kappa`` centroids minimising the squared error.

    Deterministic for a given ``(weights, kappa, seed)``.  Stops at an
    assignment fixpoint or after ``max_iter`` Lloyd updates.
    """
    w = as_weight_vector(weights)
    kappa = int(kappa)
    if kappa < 1:
        raise InvalidArgument("kappa must be >= 1")
    if kappa > w.size:
        raise InvalidArgument(f"kappa={kappa} exceeds the number of weights d={w.size}")

    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    centroids = _kmeans_pp(w, kappa, rng)
    mapping = nearest_centroid(w, centroids)
    for _ in range(max_iter):
        centroids = _update(w, mapping, centroids)
        new_mapping = nearest_centroid(w, centroids)
        if np.array_equal(new_mapping, mapping):
            mapping = new_mapping
            break
        mapping = new_mapping
    # canonical order: ascending centroid values
    centroids = centroids[np.argsort(centroids, kind="stable")]
    return ClusteredModel(centroids, nearest_centroid(w, centroids))


def clustering_loss(weights, model: ClusteredModel) -> float:
    """Sum of squared distances between each weight and its mapped centroid."""
    w = as_weight_vector(weights)
    if w.size != model.d:
        raise InvalidArgument(f"weight vector has d={w.size}, model has d={model.d}")
    return float(np.sum((w - model.centroids[model.mapping]) ** 2))


def reconstruct_weights(model: ClusteredModel) -> np.ndarray:
    return model.centroids[model.mapping].copy()
