"""Property suite behind ``ucdir check`` and the acceptance tests.

Each check returns a :class:`CheckResult` carrying the worst measured error and
the threshold it must stay under. The oracles here are deliberately naive
(exhaustive search, plain sorting) so that they share no code with the
implementations they verify.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .clustering import ClusterModel, kmeans, permute_centroids
from .encoder import encode_on_tape, init_params
from .evaluation import retrieve
from .losses import (BatchView, FeatureBank, LossConfig, cluster_wise_loss, dd_loss, entropy,
                     in_domain_distance, instance_wise_loss, lambda_schedule, self_entropy_loss,
                     total_loss)
from .training import cosine_lr


@dataclass
class CheckResult:
    name: str
    worst: float
    threshold: float
    seconds: float = 0.0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst)) and self.worst < self.threshold

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{tag}  {self.name:<34} worst={self.worst:.3e}  limit={self.threshold:.0e}  ({self.seconds:.2f}s){extra}"


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def random_instance(rng, d=None, K=None, nA=None, nB=None):
    """Small random batch + banks + cluster models; batch rows are the first bank rows."""
    d = d or int(rng.integers(2, 9))
    K = K or int(rng.integers(2, 5))
    nA = nA or int(rng.integers(2, 9))
    nB = nB or int(rng.integers(2, 9))
    NA, NB = nA + int(rng.integers(K, 6)), nB + int(rng.integers(K, 6))
    ids = {"A": np.arange(NA), "B": np.arange(1000, 1000 + NB)}
    banks, clusters = {}, {}
    for tag, N in (("A", NA), ("B", NB)):
        banks[tag] = FeatureBank(ids[tag], _unit_rows(rng.normal(size=(N, d))))
        lab = rng.permutation(np.concatenate([np.arange(K), rng.integers(0, K, size=N - K)]))
        clusters[tag] = ClusterModel(_unit_rows(rng.normal(size=(K, d))), lab, 0.0, tag)
    return dict(d=d, K=K, ids_A=ids["A"][:nA], ids_B=ids["B"][:nB], banks=banks, clusters=clusters,
                views_A=_unit_rows(rng.normal(size=(nA, d))), views_B=_unit_rows(rng.normal(size=(nB, d))))


def _batch(inst, fa, fb):
    tape = dm.Tape()
    return BatchView(inst["ids_A"], inst["ids_B"], tape.const(fa), tape.const(fb),
                     inst["views_A"], inst["views_B"])


# ---------------------------------------------------------------------------
# order invariance
# ---------------------------------------------------------------------------

@_timed
def check_distance_order_invariance(seed: int = 0, trials: int = 1000) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        K = int(rng.integers(2, 9))
        p = _softmax(rng.normal(size=K) * 3.0)
        q = _softmax(rng.normal(size=K) * 3.0)
        perm = rng.permutation(K)
        a = float(in_domain_distance(p, q).value)
        b = float(in_domain_distance(p[perm], q[perm]).value)
        worst = max(worst, abs(a - b))
    return CheckResult("distance order invariance", worst, 1e-12, detail=f"{trials} trials")


@_timed
def check_dd_order_invariance(seed: int = 0, trials: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    worst = 0.0
    for _ in range(trials):
        inst = random_instance(rng)
        fa = _unit_rows(rng.normal(size=(len(inst["ids_A"]), inst["d"])))
        fb = _unit_rows(rng.normal(size=(len(inst["ids_B"]), inst["d"])))
        cA, cB = inst["clusters"]["A"], inst["clusters"]["B"]
        base = float(dd_loss(_batch(inst, fa, fb), cA, cB, cfg).value)
        pA = permute_centroids(cA, rng.permutation(cA.K))
        pB = permute_centroids(cB, rng.permutation(cB.K))
        got = float(dd_loss(_batch(inst, fa, fb), pA, pB, cfg).value)
        worst = max(worst, abs(base - got))
    return CheckResult("DD loss centroid-order invariance", worst, 1e-10, detail=f"{trials} trials")


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

LOSS_NAMES = ("L_IW", "L_CW", "L_DD", "L_SE", "L_total")


def _loss_fn(name, inst, cfg):
    cA, cB = inst["clusters"]["A"], inst["clusters"]["B"]
    banks = inst["banks"]
    if name == "L_IW":
        return lambda b: instance_wise_loss(b, banks, cfg)
    if name == "L_CW":
        return lambda b: cluster_wise_loss(b, banks, inst["clusters"], cfg)
    if name == "L_DD":
        return lambda b: dd_loss(b, cA, cB, cfg)
    if name == "L_SE":
        return lambda b: self_entropy_loss(b, cA, cB, cfg)
    # mid-ramp epoch so every term contributes
    ep = 0.5 * (cfg.T1 + cfg.T2)
    return lambda b: total_loss(b, banks, cA, cB, ep, cfg)[0]


@_timed
def check_gradient(name: str, seed: int = 0, instances: int = 20) -> CheckResult:
    """Encoder-parameter gradients of one loss against central differences."""
    rng = np.random.default_rng([seed, LOSS_NAMES.index(name)])
    cfg = LossConfig()
    worst = 0.0
    for i in range(instances):
        inst = random_instance(rng)
        d_in, d = int(rng.integers(2, 7)), inst["d"]
        theta = init_params(seed * 1000 + i, (d_in, int(rng.integers(2, 7)), d))
        raw_A = rng.normal(size=(len(inst["ids_A"]), d_in))
        raw_B = rng.normal(size=(len(inst["ids_B"]), d_in))
        fn = _loss_fn(name, inst, cfg)
        keys = sorted(theta.arrays())

        def lossfn(tape, leaves):
            layers = [(leaves[f"W{j}"], leaves[f"b{j}"]) for j in range(len(theta.layers))]
            b = BatchView(inst["ids_A"], inst["ids_B"], encode_on_tape(layers, raw_A),
                          encode_on_tape(layers, raw_B), inst["views_A"], inst["views_B"])
            return fn(b)

        arrays = theta.arrays()
        worst = max(worst, dm.grad_check(lossfn, {k: arrays[k] for k in keys}, h=1e-5))
    return CheckResult(f"gradient {name}", worst, 1e-4, detail=f"{instances} instances")


# ---------------------------------------------------------------------------
# reduction identities
# ---------------------------------------------------------------------------

@_timed
def check_singleton_cw(seed: int = 0, instances: int = 50) -> CheckResult:
    rng = np.random.default_rng([seed, 11])
    worst = 0.0
    for _ in range(instances):
        inst = random_instance(rng)
        for tag in "AB":
            N = len(inst["banks"][tag].ids)
            inst["clusters"][tag] = ClusterModel(_unit_rows(rng.normal(size=(N, inst["d"]))),
                                                 np.arange(N), 0.0, tag)
        fa = _unit_rows(rng.normal(size=(len(inst["ids_A"]), inst["d"])))
        fb = _unit_rows(rng.normal(size=(len(inst["ids_B"]), inst["d"])))
        for red in ("mean", "sum"):
            cfg = LossConfig(reduction=red)
            b = _batch(inst, fa, fb)
            cw = float(cluster_wise_loss(b, inst["banks"], inst["clusters"], cfg).value)
            b = _batch(inst, fa, fb)
            iw = float(instance_wise_loss(b, inst["banks"], cfg).value)
            worst = max(worst, abs(cw - iw))
    return CheckResult("singleton CW equals IW", worst, 1e-12, detail=f"{instances} instances")


@_timed
def check_shared_centroids_dd(seed: int = 0, instances: int = 50) -> CheckResult:
    rng = np.random.default_rng([seed, 12])
    worst = 0.0
    cfg = LossConfig()
    for _ in range(instances):
        inst = random_instance(rng)
        cA = inst["clusters"]["A"]
        cB = permute_centroids(cA, rng.permutation(cA.K))
        fa = _unit_rows(rng.normal(size=(len(inst["ids_A"]), inst["d"])))
        fb = _unit_rows(rng.normal(size=(len(inst["ids_B"]), inst["d"])))
        worst = max(worst, abs(float(dd_loss(_batch(inst, fa, fb), cA, cB, cfg).value)))
    return CheckResult("DD zero for shared centroids", worst, 1e-10, detail=f"{instances} instances")


# ---------------------------------------------------------------------------
# oracle equivalence
# ---------------------------------------------------------------------------

def exhaustive_two_partition(x):
    """Minimum spherical inertia over all two-way splits into non-empty groups."""
    best, best_lab = math.inf, None
    n = len(x)
    for bits in itertools.product((0, 1), repeat=n - 1):
        lab = np.array((0,) + bits)
        if lab.min() == lab.max():
            continue
        # inertia of a group = |group| - ||sum of members||
        val = sum(float(np.sum(lab == g)) - float(np.linalg.norm(x[lab == g].sum(axis=0))) for g in (0, 1))
        if val < best:
            best, best_lab = val, lab
    return best, best_lab


def _partition(labels):
    return {frozenset(np.flatnonzero(labels == g).tolist()) for g in np.unique(labels)}


def _separable_eight(rng):
    d = int(rng.integers(2, 6))
    c = _unit_rows(rng.normal(size=(1, d)))[0]
    k = int(rng.integers(1, 8))
    pts = np.vstack([c + 0.1 * rng.normal(size=(k, d)), -c + 0.1 * rng.normal(size=(8 - k, d))])
    return _unit_rows(pts[rng.permutation(8)])


@_timed
def check_kmeans_oracle(seed: int = 0, instances: int = 20) -> CheckResult:
    rng = np.random.default_rng([seed, 13])
    worst, misses = 0.0, 0
    for i in range(instances):
        x = _separable_eight(rng)
        best, lab = exhaustive_two_partition(x)
        model = kmeans(x, 2, seed=seed + i)
        worst = max(worst, abs(model.inertia - best))
        misses += _partition(model.assignments) != _partition(lab)
    if misses:
        worst = math.inf
    return CheckResult("k-means vs exhaustive search", worst, 1e-12,
                       detail=f"{instances} instances, {misses} partition mismatches")


def brute_force_precision(q, g, ql, gl, gids, k):
    total = 0.0
    for qi in range(len(q)):
        scored = sorted((1.0 - sum(float(a) * float(b) for a, b in zip(q[qi], g[gi])), int(gids[gi]), int(gl[gi]))
                        for gi in range(len(g)))
        total += sum(1 for _, _, lab in scored[:k] if lab == ql[qi]) / k
    return total / len(q)


@_timed
def check_precision_oracle(seed: int = 0, instances: int = 20) -> CheckResult:
    rng = np.random.default_rng([seed, 14])
    worst = 0.0
    for _ in range(instances):
        ng, nq, d = int(rng.integers(5, 51)), int(rng.integers(1, 11)), int(rng.integers(2, 6))
        q, g = _unit_rows(rng.normal(size=(nq, d))), _unit_rows(rng.normal(size=(ng, d)))
        if rng.random() < 0.5:  # exercise ties
            g[: ng // 2] = g[ng // 2: 2 * (ng // 2)]
        ql, gl = rng.integers(0, 3, nq), rng.integers(0, 3, ng)
        gids = rng.permutation(ng) + 7
        ks = sorted({1, int(rng.integers(1, ng + 1))})
        res = retrieve(q, g, ql, gl, ks=ks, gallery_ids=gids)
        for k in ks:
            worst = max(worst, abs(res.precision[k] - brute_force_precision(q, g, ql, gl, gids, k)))
    return CheckResult("P@k vs brute-force ranking", worst, 1e-12, detail=f"{instances} instances")


# ---------------------------------------------------------------------------
# schedules and entropy
# ---------------------------------------------------------------------------

@_timed
def check_schedules(seed: int = 0) -> CheckResult:
    cfg = LossConfig(alpha=1.0, T1=20, T2=100)
    errs = [abs(lambda_schedule(10, cfg) - 0.0), abs(lambda_schedule(60, cfg) - 0.5),
            abs(lambda_schedule(150, cfg) - 1.0)]
    lr0, total = 0.0002, 1000
    errs += [abs(cosine_lr(0, total, lr0) - lr0), abs(cosine_lr(total, total, lr0) - 0.0),
             abs(cosine_lr(total / 2, total, lr0) - lr0 / 2)]
    return CheckResult("lambda ramp and cosine LR", max(errs), 1e-12)


@_timed
def check_entropy_bounds(seed: int = 0, trials: int = 10_000) -> CheckResult:
    """Entropy of random distributions in [0, ln K]; uniform hits ln K."""
    rng = np.random.default_rng([seed, 15])
    worst = 0.0
    Ks = rng.integers(2, 11, size=trials)
    for K in np.unique(Ks):
        n = int(np.sum(Ks == K))
        logits = rng.normal(size=(n, K)) * rng.exponential(3.0, size=(n, 1))
        H = entropy(logits).value
        worst = max(worst, float(np.max(-H)), float(np.max(H - math.log(K))))
        uni = float(entropy(np.zeros((1, K))).value[0])
        worst = max(worst, abs(uni - math.log(K)))
    # a violation shows up as a positive excess; report 0 when all bounds hold
    return CheckResult("entropy bounds", max(worst, 0.0), 1e-12, detail=f"{trials} vectors")


GRADIENT_CHECKS = [lambda seed, name=n: check_gradient(name, seed) for n in LOSS_NAMES]


def run_checks(seed: int = 0, trials: int = 1000, grad_only: bool = False) -> list:
    results = [fn(seed) for fn in GRADIENT_CHECKS]
    if grad_only:
        return results
    results += [
        check_distance_order_invariance(seed, trials),
        check_dd_order_invariance(seed),
        check_singleton_cw(seed),
        check_shared_centroids_dd(seed),
        check_kmeans_oracle(seed),
        check_precision_oracle(seed),
        check_schedules(seed),
        check_entropy_bounds(seed),
    ]
    return results


__all__ = ["CheckResult", "run_checks", "check_gradient", "check_distance_order_invariance",
           "check_dd_order_invariance", "check_singleton_cw", "check_shared_centroids_dd",
           "check_kmeans_oracle", "check_precision_oracle", "check_schedules",
           "check_entropy_bounds", "LOSS_NAMES"]
