import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucdir.clustering import ClusterModel, assign, kmeans, permute_centroids


def unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def antipodal_bundles(rng, n=8, d=4, spread=0.05):
    c = unit_rows(rng.normal(size=(1, d)))[0]
    k = int(rng.integers(2, n - 1))
    pts = np.vstack([c + spread * rng.normal(size=(k, d)), -c + spread * rng.normal(size=(n - k, d))])
    return unit_rows(pts[rng.permutation(n)])


def brute_force_2partition(x):
    """Minimum-inertia split of the rows of x into two non-empty groups."""
    n = len(x)
    best, best_part = np.inf, None
    for bits in itertools.product([0, 1], repeat=n - 1):
        lab = np.array((0,) + bits)
        if lab.min() == lab.max():
            continue
        inertia = sum(np.sum(lab == u) - np.linalg.norm(x[lab == u].sum(axis=0)) for u in (0, 1))
        if inertia < best:
            best, best_part = inertia, lab
    return best, best_part


def as_partition(labels):
    return {frozenset(np.flatnonzero(labels == u)) for u in np.unique(labels)}


def test_single_cluster():
    rng = np.random.default_rng(0)
    x = unit_rows(rng.normal(size=(10, 3)))
    m = kmeans(x, 1, seed=0)
    assert not m.assignments.any()
    mean = x.mean(axis=0)
    np.testing.assert_allclose(m.centroids[0], mean / np.linalg.norm(mean), atol=1e-12)


def test_orthogonal_points_are_own_clusters():
    x = np.eye(4)
    m = kmeans(x, 4, seed=3)
    assert sorted(m.assignments.tolist()) == [0, 1, 2, 3]
    assert m.inertia == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_matches_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    x = antipodal_bundles(rng)
    best, part = brute_force_2partition(x)
    m = kmeans(x, 2, seed=seed)
    assert as_partition(m.assignments) == as_partition(part)
    assert m.inertia == pytest.approx(best, abs=1e-12)


def test_errors():
    x = unit_rows(np.random.default_rng(0).normal(size=(3, 2)))
    with pytest.raises(ValueError, match="N >= K"):
        kmeans(x, 4)
    with pytest.raises(ValueError, match="unit-norm"):
        kmeans(x * 2.0, 2)


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(6, 40), st.integers(2, 6))
def test_kmeans_properties(seed, K, n, d):
    rng = np.random.default_rng(seed)
    x = unit_rows(rng.normal(size=(n, d)))
    m = kmeans(x, K, seed=seed)
    np.testing.assert_allclose(np.linalg.norm(m.centroids, axis=1), 1.0, atol=1e-12)
    assert set(m.assignments.tolist()) == set(range(K))
    # every sample sits with its most similar centroid
    sims = x @ m.centroids.T
    assert np.all(sims[np.arange(n), m.assignments] >= sims.max(axis=1) - 1e-12)
    assert np.all(np.diff(m.history) <= 1e-12)
    assert kmeans(x, K, seed=seed) == m


def test_assign_self_match_and_ties():
    cent = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    model = ClusterModel(cent, np.array([0, 1, 2]), 0.0)
    assert assign(model, cent[2]) == 2
    assert assign(model, np.array([1.0, 1.0]) / np.sqrt(2.0)) == 0


@pytest.mark.parametrize("seed", range(10))
def test_assign_matches_linear_scan(seed):
    rng = np.random.default_rng(seed)
    m = kmeans(unit_rows(rng.normal(size=(12, 5))), 3, seed=seed)
    f = unit_rows(rng.normal(size=(1, 5)))[0]
    best, best_i = -np.inf, -1
    for i, c in enumerate(m.centroids):
        s = float(sum(a * b for a, b in zip(f, c)))
        if s > best:
            best, best_i = s, i
    assert assign(m, f) == best_i


def test_assign_dim_mismatch():
    m = kmeans(np.eye(3), 2, seed=0)
    with pytest.raises(ValueError):
        assign(m, np.ones(2))


def test_permute_centroids():
    rng = np.random.default_rng(4)
    x = unit_rows(rng.normal(size=(20, 3)))
    m = kmeans(x, 4, seed=1)
    assert permute_centroids(m, [0, 1, 2, 3]) == m
    swap = [1, 0, 2, 3]
    assert permute_centroids(permute_centroids(m, swap), swap) == m
    perm = rng.permutation(4)
    p = permute_centroids(m, perm)
    assert p.inertia == m.inertia
    np.testing.assert_array_equal(p.centroids[p.assignments], m.centroids[m.assignments])
    with pytest.raises(ValueError):
        permute_centroids(m, [0, 0, 1, 2])
