"""Training objectives, all recorded on a :class:`~ucdir.diffmath.Tape`.

Only the trainable embeddings ``x_i`` carry gradients. Momentum embeddings,
feature-bank rows and cluster centroids enter the tape as constants.

With ``reduction="mean"`` every per-domain block (contrastive terms,
distance-of-distance pairs, entropy terms) is divided by its number of
terms before the blocks are added; ``reduction="sum"`` keeps raw sums.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .clustering import ClusterModel

VARIANTS = {
    "v1": dict(use_CW=False, use_SE=False, use_DD=False),
    "v2": dict(use_CW=True, use_SE=False, use_DD=False),
    "v3": dict(use_CW=True, use_SE=True, use_DD=False),
    "full": dict(use_CW=True, use_SE=True, use_DD=True),
}


@dataclass
class LossConfig:
    tau: float = 0.2
    phi: float = 0.1
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5
    T1: int = 20
    T2: int = 100
    use_CW: bool = True
    use_SE: bool = True
    use_DD: bool = True
    reduction: str = "mean"
    negatives: str = "bank"

    def __post_init__(self):
        if self.tau <= 0 or self.phi <= 0:
            raise ValueError("tau and phi must be positive")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("alpha, beta, gamma must be non-negative")
        if self.T1 > self.T2:
            raise ValueError(f"T1={self.T1} exceeds T2={self.T2}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if self.negatives not in ("bank", "batch"):
            raise ValueError(f"negatives must be 'bank' or 'batch', got {self.negatives!r}")

    def with_variant(self, name: str) -> "LossConfig":
        if name not in VARIANTS:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        return LossConfig(**{**self.__dict__, **VARIANTS[name]})


@dataclass
class FeatureBank:
    """Momentum embeddings of every sample of one domain, keyed by sample id."""

    ids: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape[0] != self.ids.shape[0]:
            raise ValueError("bank needs one vector per id")
        self._row = {int(i): r for r, i in enumerate(self.ids)}
        if len(self._row) != len(self.ids):
            raise ValueError("duplicate ids in bank")

    def __len__(self):
        return len(self.ids)

    def rows(self, ids) -> np.ndarray:
        try:
            return np.array([self._row[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"sample id {exc.args[0]} has no bank entry") from None

    def update(self, ids, vectors) -> None:
        self.vectors[self.rows(ids)] = vectors

    def copy(self) -> "FeatureBank":
        return FeatureBank(self.ids.copy(), self.vectors.copy())


@dataclass
class BatchView:
    """One step's batch: trainable embeddings plus constant momentum views."""

    ids_A: np.ndarray
    ids_B: np.ndarray
    feats_A: dm.Var | None
    feats_B: dm.Var | None
    views_A: np.ndarray
    views_B: np.ndarray

    def __post_init__(self):
        self.ids_A = np.asarray(self.ids_A, dtype=np.int64).reshape(-1)
        self.ids_B = np.asarray(self.ids_B, dtype=np.int64).reshape(-1)
        if np.intersect1d(self.ids_A, self.ids_B).size:
            raise ValueError("batch ids overlap across domains")
        for ids, f, v, tag in ((self.ids_A, self.feats_A, self.views_A, "A"),
                               (self.ids_B, self.feats_B, self.views_B, "B")):
            n = len(ids)
            if n and (f is None or f.shape[0] != n or np.asarray(v).shape[0] != n):
                raise ValueError(f"domain {tag}: every id needs a feature and a view feature")

    def domains(self):
        """Non-empty ``(tag, ids, feats, views)`` blocks."""
        out = []
        if len(self.ids_A):
            out.append(("A", self.ids_A, self.feats_A, np.asarray(self.views_A, dtype=np.float64)))
        if len(self.ids_B):
            out.append(("B", self.ids_B, self.feats_B, np.asarray(self.views_B, dtype=np.float64)))
        return out

    @property
    def tape(self) -> dm.Tape:
        f = self.feats_A if self.feats_A is not None else self.feats_B
        return f.tape


# ---------------------------------------------------------------------------
# in-domain contrastive terms
# ---------------------------------------------------------------------------

def _contrast_logits(feats: dm.Var, views: np.ndarray, ids, bank: FeatureBank, cfg):
    """Logit matrix (n x keys) where each query's own key is its fresh view.

    Returns ``(logits, positive_logit, own_column, key_ids)``.
    """
    if cfg.negatives == "batch":
        keys = views
        key_ids = np.asarray(ids)
        own = np.arange(len(ids))
    else:
        own = bank.rows(ids)
        keys = bank.vectors
        key_ids = bank.ids
    n, nk = len(ids), keys.shape[0]
    inv_tau = 1.0 / cfg.tau
    pos = dm.scale(dm.reduce_sum(dm.mul(feats, views), axis=1), inv_tau)  # n
    logits = dm.scale(dm.matmul(feats, keys.T), inv_tau)  # n x nk
    onehot = np.zeros((n, nk))
    onehot[np.arange(n), own] = 1.0
    # swap the stale key of sample i for its fresh view x'_i
    stale = dm.reduce_sum(dm.mul(logits, onehot), axis=1)
    delta = dm.sub(pos, stale)
    logits = dm.add(logits, dm.mul(onehot, dm.reshape_col(delta)))
    return logits, pos, own, key_ids


def _reduce(total: dm.Var, n_terms: int, cfg) -> dm.Var:
    if cfg.reduction == "mean" and n_terms:
        return dm.scale(total, 1.0 / n_terms)
    return total


def _zero(tape: dm.Tape) -> dm.Var:
    return tape.const(0.0)


def instance_wise_loss(batch: BatchView, banks: dict, cfg: LossConfig) -> dm.Var:
    """InfoNCE against the whole per-domain bank, summed over both domains."""
    total = _zero(batch.tape)
    for tag, ids, feats, views in batch.domains():
        logits, pos, _, _ = _contrast_logits(feats, views, ids, banks[tag], cfg)
        terms = dm.sub(dm.logsumexp(logits, axis=1), pos)
        total = dm.add(total, _reduce(dm.reduce_sum(terms), len(ids), cfg))
    return total


def _positive_mask(ids, own, bank_labels, cfg, cluster_rows):
    """Row-normalized mask of keys sharing the query's pseudo-label."""
    labels = np.asarray(bank_labels)
    if cfg.negatives == "batch":
        key_labels = labels[cluster_rows]
    else:
        key_labels = labels
    q_labels = labels[cluster_rows]
    mask = (q_labels[:, None] == key_labels[None, :]).astype(np.float64)
    assert np.all(mask[np.arange(len(ids)), own] == 1.0), "query missing from its own cluster"
    return mask / mask.sum(axis=1, keepdims=True)


def cluster_wise_loss(batch: BatchView, banks: dict, clusters: dict, cfg: LossConfig) -> dm.Var:
    """Supervised-contrastive form with pseudo-labels as the positive sets.

    ``clusters[tag].assignments`` must be aligned with ``banks[tag]`` rows.
    """
    total = _zero(batch.tape)
    for tag, ids, feats, views in batch.domains():
        bank, model = banks[tag], clusters[tag]
        if len(model.assignments) != len(bank):
            raise ValueError(f"domain {tag}: cluster model does not cover the bank")
        logits, _, own, _ = _contrast_logits(feats, views, ids, bank, cfg)
        pmask = _positive_mask(ids, own, model.assignments, cfg, bank.rows(ids))
        lse = dm.logsumexp(logits, axis=1)
        pos_mean = dm.reduce_sum(dm.mul(logits, pmask), axis=1)
        terms = dm.sub(lse, pos_mean)
        total = dm.add(total, _reduce(dm.reduce_sum(terms), len(ids), cfg))
    return total


def lambda_schedule(ep: float, cfg: LossConfig) -> float:
    """Piecewise-linear ramp of the cluster-wise weight."""
    if ep >= cfg.T2:
        return cfg.alpha
    if ep <= cfg.T1:
        return 0.0
    return cfg.alpha * (ep - cfg.T1) / (cfg.T2 - cfg.T1)


def in_domain_loss(batch, banks, clusters, ep, cfg: LossConfig) -> dm.Var:
    liw = instance_wise_loss(batch, banks, cfg)
    lam = lambda_schedule(ep, cfg)
    if not cfg.use_CW or lam == 0.0:
        return liw
    return dm.add(liw, dm.scale(cluster_wise_loss(batch, banks, clusters, cfg), lam))


# ---------------------------------------------------------------------------
# cross-domain terms
# ---------------------------------------------------------------------------

def clustering_probabilities(features, clusters: ClusterModel | np.ndarray, phi: float) -> dm.Var:
    """Softmax over dot products with the centroids at temperature ``phi``.

    ``features`` may be a single vector or a batch of rows (Var or array).
    """
    cent = clusters.centroids if isinstance(clusters, ClusterModel) else np.asarray(clusters)
    d = features.shape[-1]
    if cent.shape[1] != d:
        raise ValueError(f"feature dim {d} != centroid dim {cent.shape[1]}")
    logits = dm.scale(dm.matmul(features, cent.T), 1.0 / phi)
    return dm.softmax(logits, axis=-1)


def in_domain_distance(p_i, p_j) -> dm.Var:
    """Cosine distance ``1 - <p_i, p_j> / (|p_i| |p_j|)``."""
    si = p_i.shape if isinstance(p_i, dm.Var) else np.shape(p_i)
    sj = p_j.shape if isinstance(p_j, dm.Var) else np.shape(p_j)
    if si != sj:
        raise ValueError(f"length mismatch {si} vs {sj}")
    p_i, p_j = dm.lift_all(p_i, p_j)
    return dm.sub(1.0, dm.dot(dm.l2normalize(p_i), dm.l2normalize(p_j)))


def pairwise_in_domain_distance(probs: dm.Var) -> dm.Var:
    """n x n matrix of cosine distances between rows of ``probs``."""
    u = dm.l2normalize(probs, axis=1)
    return dm.sub(1.0, dm.matmul(u, dm.transpose(u)))


def dd_pair(d_a, d_b) -> dm.Var:
    """Squared difference of two in-domain distances."""
    d_a, d_b = dm.lift_all(d_a, d_b)
    return dm.square(dm.sub(d_a, d_b))


def _need(clusters_A, clusters_B):
    if clusters_A is None or clusters_B is None:
        raise ValueError("missing cluster model: both domains must be clustered first")


def dd_loss(batch: BatchView, clusters_A: ClusterModel, clusters_B: ClusterModel,
            cfg: LossConfig) -> dm.Var:
    """Distance-of-distance over ordered same-domain pairs (i != j)."""
    _need(clusters_A, clusters_B)
    total = _zero(batch.tape)
    for _, ids, feats, _ in batch.domains():
        n = len(ids)
        if n < 2:
            continue
        da = pairwise_in_domain_distance(clustering_probabilities(feats, clusters_A, cfg.phi))
        db = pairwise_in_domain_distance(clustering_probabilities(feats, clusters_B, cfg.phi))
        off = 1.0 - np.eye(n)
        sq = dm.mul(dd_pair(da, db), off)
        total = dm.add(total, _reduce(dm.reduce_sum(sq), n * (n - 1), cfg))
    return total


def entropy(probs_logits: dm.Var) -> dm.Var:
    """Row-wise Shannon entropy (nats) of softmax(logits)."""
    probs_logits = dm.lift_all(probs_logits)
    logp = dm.log_softmax(probs_logits, axis=-1)
    p = dm.softmax(probs_logits, axis=-1)
    return dm.neg(dm.reduce_sum(dm.mul(p, logp), axis=-1))


def self_entropy_loss(batch: BatchView, clusters_A: ClusterModel, clusters_B: ClusterModel,
                      cfg: LossConfig) -> dm.Var:
    """Entropy of each batch sample's probabilities under both centroid sets."""
    _need(clusters_A, clusters_B)
    total = _zero(batch.tape)
    for _, ids, feats, _ in batch.domains():
        h = None
        for model in (clusters_A, clusters_B):
            logits = dm.scale(dm.matmul(feats, model.centroids.T), 1.0 / cfg.phi)
            hm = dm.reduce_sum(entropy(logits))
            h = hm if h is None else dm.add(h, hm)
        total = dm.add(total, _reduce(h, len(ids), cfg))
    return total


def total_loss(batch: BatchView, banks: dict, clusters_A, clusters_B, ep, cfg: LossConfig):
    """Weighted objective and a dict of component values (floats).

    Disabled components are reported as 0.0 and never built on the tape.
    """
    tape = batch.tape
    lam = lambda_schedule(ep, cfg)
    liw = instance_wise_loss(batch, banks, cfg)
    parts = {"lambda": lam, "L_IW": float(liw.value), "L_CW": 0.0, "L_DD": 0.0, "L_SE": 0.0}
    total = liw
    if cfg.use_CW:
        lcw = cluster_wise_loss(batch, banks, {"A": clusters_A, "B": clusters_B}, cfg)
        parts["L_CW"] = float(lcw.value)
        if lam != 0.0:
            total = dm.add(total, dm.scale(lcw, lam))
    if cfg.use_DD and cfg.beta != 0.0:
        ldd = dd_loss(batch, clusters_A, clusters_B, cfg)
        parts["L_DD"] = float(ldd.value)
        total = dm.add(total, dm.scale(ldd, cfg.beta))
    if cfg.use_SE and cfg.gamma != 0.0:
        lse = self_entropy_loss(batch, clusters_A, clusters_B, cfg)
        parts["L_SE"] = float(lse.value)
        total = dm.add(total, dm.scale(lse, cfg.gamma))
    assert total.tape is tape
    parts["L_total"] = float(total.value)
    return total, parts
