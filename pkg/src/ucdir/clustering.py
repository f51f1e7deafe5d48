"""Spherical K-means over unit-norm features.

Centroids are renormalized means, similarity is the dot product, and the
per-sample pseudo-label is the index of the most similar centroid (lowest
index on ties).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray  # K x d, unit rows
    assignments: np.ndarray  # N ints in [0, K)
    inertia: float
    domain_tag: str = ""
    n_iter: int = 0
    history: tuple = field(default=(), compare=False)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def to_json(self) -> str:
        doc = {
            "K": self.K,
            "domain": self.domain_tag,
            "centroids": self.centroids.tolist(),
            "assignments": self.assignments.tolist(),
            "inertia": self.inertia,
        }
        return json.dumps(doc, indent=1)

    def __eq__(self, other):
        if not isinstance(other, ClusterModel):
            return NotImplemented
        return (np.array_equal(self.centroids, other.centroids)
                and np.array_equal(self.assignments, other.assignments)
                and self.inertia == other.inertia and self.domain_tag == other.domain_tag)


def _check_unit(features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be N x d, got shape {x.shape}")
    norms = np.sqrt((x * x).sum(axis=1))
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise ValueError(f"feature {bad} is not unit-norm (norm {norms[bad]:.6g})")
    return x


def _normalize_rows(a):
    return a / np.sqrt((a * a).sum(axis=1, keepdims=True))


def inertia_of(features, centroids, assignments) -> float:
    sims = np.einsum("ij,ij->i", features, centroids[assignments])
    return float(np.sum(1.0 - sims))


def _kmeanspp(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    dist = np.maximum(1.0 - x @ x[chosen[0]], 0.0)
    for _ in range(1, K):
        w = dist * dist
        total = w.sum()
        if total <= 0.0:
            # all remaining points coincide with a centre; take the first unused one
            unused = np.setdiff1d(np.arange(n), chosen)
            nxt = int(unused[0])
        else:
            nxt = int(rng.choice(n, p=w / total))
        chosen.append(nxt)
        dist = np.minimum(dist, np.maximum(1.0 - x @ x[nxt], 0.0))
    return x[chosen].copy()


def _update_centroids(x, labels, K, old):
    """Normalized member means, summed in sample order for determinism."""
    sums = np.zeros((K, x.shape[1]))
    np.add.at(sums, labels, x)
    norms = np.sqrt((sums * sums).sum(axis=1))
    cent = old.copy()
    ok = norms > 1e-12
    cent[ok] = sums[ok] / norms[ok, None]
    return cent


def _repair_empty(x, labels, cent, K):
    """Give every empty cluster the currently worst-fitting point as a singleton."""
    labels = labels.copy()
    cent = cent.copy()
    for u in range(K):
        counts = np.bincount(labels, minlength=K)
        if counts[u]:
            continue
        dist = 1.0 - np.einsum("ij,ij->i", x, cent[labels])
        # never steal the last member of another cluster
        dist[counts[labels] <= 1] = -np.inf
        far = int(np.argmax(dist))
        labels[far] = u
        cent[u] = x[far]
    return labels, cent


def kmeans(features, K: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6,
           domain_tag: str = "") -> ClusterModel:
    """Spherical K-means with k-means++ (cosine) seeding."""
    x = _check_unit(features)
    n = x.shape[0]
    if K < 1 or n < K:
        raise ValueError(f"need N >= K >= 1, got N={n}, K={K}")
    rng = np.random.default_rng(seed)
    cent = _kmeanspp(x, K, rng)
    labels = np.argmax(x @ cent.T, axis=1)
    labels, cent = _repair_empty(x, labels, cent, K)
    history = [inertia_of(x, cent, labels)]
    it = 0
    for it in range(1, max_iter + 1):
        new = _update_centroids(x, labels, K, cent)
        shift = float(np.max(np.sqrt(((new - cent) ** 2).sum(axis=1))))
        cent = new
        history.append(inertia_of(x, cent, labels))
        labels = np.argmax(x @ cent.T, axis=1)
        labels, cent = _repair_empty(x, labels, cent, K)
        history.append(inertia_of(x, cent, labels))
        if shift < tol:
            break
    return ClusterModel(cent, labels.astype(np.int64), history[-1], domain_tag, it, tuple(history))


def assign(model: ClusterModel, feature) -> int:
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (model.centroids.shape[1],):
        raise ValueError(f"feature dim {f.shape} != centroid dim {model.centroids.shape[1]}")
    return int(np.argmax(model.centroids @ f))


def permute_centroids(model: ClusterModel, permutation) -> ClusterModel:
    """Move centroid ``u`` to slot ``permutation[u]`` and relabel samples to match."""
    perm = np.asarray(permutation, dtype=np.int64)
    K = model.K
    if perm.shape != (K,) or not np.array_equal(np.sort(perm), np.arange(K)):
        raise ValueError(f"not a permutation of range({K}): {list(permutation)}")
    cent = np.empty_like(model.centroids)
    cent[perm] = model.centroids
    return replace(model, centroids=cent, assignments=perm[model.assignments])
