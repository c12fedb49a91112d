import itertools
import time

import numpy as np
import pytest

from enccluster.errors import InvalidArgument
from enccluster.weight_clustering import (ClusteredModel, cluster_weights, clustering_loss,
                                          nearest_centroid, reconstruct_weights)


def brute_force_two_partition(w):
    """Exhaustive optimum of the k-means objective for kappa=2 (oracle)."""
    best = None
    for labels in itertools.product([0, 1], repeat=len(w)):
        labels = np.array(labels)
        if labels.min() == labels.max():
            continue
        cents = np.array([w[labels == k].mean() for k in (0, 1)])
        loss = float(((w - cents[labels]) ** 2).sum())
        if best is None or loss < best[0] - 1e-15:
            best = (loss, np.sort(cents))
    return best


def test_four_point_example_matches_exhaustive_oracle():
    w = np.array([0.0, 0.1, 0.9, 1.0])
    model = cluster_weights(w, 2, seed=0)
    loss, cents = brute_force_two_partition(w)
    np.testing.assert_allclose(model.centroids, cents)
    np.testing.assert_allclose(model.centroids, [0.05, 0.95])
    assert model.mapping.tolist() == [0, 0, 1, 1]
    assert clustering_loss(w, model) == pytest.approx(loss)
    assert clustering_loss(w, model) == pytest.approx(0.01)


def test_single_cluster_is_mean():
    model = cluster_weights([5.0, 5.0, 5.0], 1, seed=3)
    assert model.centroids.tolist() == [5.0]
    assert model.mapping.tolist() == [0, 0, 0]
    assert clustering_loss([5.0, 5.0, 5.0], model) == 0.0


def test_kappa_equals_d_is_lossless(rng):
    w = rng.normal(size=40)
    model = cluster_weights(w, w.size, seed=1)
    assert clustering_loss(w, model) == 0.0
    np.testing.assert_array_equal(reconstruct_weights(model), w)


def test_reconstruct_substitutes_centroids():
    model = ClusteredModel(np.array([0.05, 0.95]), np.array([0, 0, 1, 1]))
    np.testing.assert_allclose(reconstruct_weights(model), [0.05, 0.05, 0.95, 0.95])
    const = ClusteredModel(np.array([2.5]), np.zeros(6, dtype=int))
    assert reconstruct_weights(const).tolist() == [2.5] * 6


def test_swapped_mapping_has_larger_loss():
    w = np.array([0.0, 0.1, 0.9, 1.0])
    good = ClusteredModel(np.array([0.05, 0.95]), np.array([0, 0, 1, 1]))
    bad = ClusteredModel(np.array([0.05, 0.95]), np.array([1, 0, 1, 1]))
    assert clustering_loss(w, bad) > clustering_loss(w, good)


def test_errors():
    with pytest.raises(InvalidArgument):
        cluster_weights([1.0, 2.0], 3, seed=0)
    with pytest.raises(InvalidArgument):
        cluster_weights([1.0, np.nan], 1, seed=0)
    with pytest.raises(InvalidArgument):
        cluster_weights([1.0, np.inf], 1, seed=0)
    with pytest.raises(InvalidArgument):
        cluster_weights([1.0], 0, seed=0)
    with pytest.raises(InvalidArgument):
        clustering_loss([1.0, 2.0, 3.0], ClusteredModel(np.array([1.0]), np.array([0, 0])))
    with pytest.raises(InvalidArgument):
        ClusteredModel(np.array([1.0]), np.array([0, 1]))


def test_tie_goes_to_lowest_index():
    assert nearest_centroid(np.array([0.5]), np.array([0.0, 1.0])).tolist() == [0]
    assert nearest_centroid(np.array([0.5]), np.array([1.0, 0.0])).tolist() == [0]


def test_nearest_assignment_is_optimal(rng):
    w = rng.normal(size=3000)
    model = cluster_weights(w, 32, seed=5)
    dist = (w[:, None] - model.centroids[None, :]) ** 2
    own = dist[np.arange(w.size), model.mapping]
    # no single reassignment lowers the loss
    assert np.all(own <= dist.min(axis=1) + 0.0)


def test_loss_monotone_in_kappa(rng):
    for trial in range(5):
        w = rng.normal(size=500)
        losses = []
        for k in range(1, 9):
            losses.append(min(clustering_loss(w, cluster_weights(w, k, seed=100 * trial + s)) for s in range(3)))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:])), losses


def test_deterministic(rng):
    w = rng.normal(size=2000)
    a = cluster_weights(w, 16, seed=42)
    b = cluster_weights(w, 16, seed=42)
    assert np.array_equal(a.centroids, b.centroids) and np.array_equal(a.mapping, b.mapping)


def test_empty_cluster_reseeded():
    # three distinct values, five clusters: duplicates of a value can leave clusters empty
    w = np.array([0.0, 0.0, 1.0, 1.0, 2.0, 2.0])
    model = cluster_weights(w, 5, seed=0)
    assert model.kappa == 5
    assert clustering_loss(w, model) == 0.0


def test_assignment_cost_roughly_linear_in_kappa_times_d(rng):
    sizes = [(16, 50_000), (32, 50_000), (64, 50_000), (64, 100_000)]
    times = []
    for k, d in sizes:
        w = rng.normal(size=d)
        c = np.sort(rng.normal(size=k))
        best = min(_timed(nearest_centroid, w, c) for _ in range(3))
        times.append(best)
    work = np.array([k * d for k, d in sizes], dtype=float)
    slope = float(np.dot(work, times) / np.dot(work, work))
    for t, x in zip(times, work):
        assert slope * x / 3 <= t <= 3 * slope * x


def _timed(fn, *args):
    t = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t
