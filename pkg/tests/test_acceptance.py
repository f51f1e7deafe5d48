"""Acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict with the measured values; the lines are
repeated together at the end of the pytest run.
"""
import time

import numpy as np

from ucdir import checks
from ucdir.config import RunConfig
from ucdir.experiments import ablation, chance_baseline, run_variant
from ucdir.losses import LossConfig, lambda_schedule
from ucdir.training import cosine_lr


def test_criterion_1_order_invariance(report):
    t0 = time.perf_counter()
    dist = checks.check_distance_order_invariance(seed=0, trials=1000)
    dd = checks.check_dd_order_invariance(seed=0, trials=100)
    elapsed = time.perf_counter() - t0
    ok = dist.passed and dd.passed and elapsed < 5.0
    report(1, "order invariance", ok,
           f"distance dev {dist.worst:.2e} (<1e-12), DD dev {dd.worst:.2e} (<1e-10), {elapsed:.2f}s (<5s)")
    assert dist.worst < 1e-12 and dd.worst < 1e-10 and elapsed < 5.0


def test_criterion_2_gradients(report):
    t0 = time.perf_counter()
    res = [checks.check_gradient(name, seed=0, instances=20) for name in checks.LOSS_NAMES]
    elapsed = time.perf_counter() - t0
    worst = max(r.worst for r in res)
    ok = all(r.passed for r in res) and elapsed < 30.0
    detail = ", ".join(f"{r.name.split()[-1]} {r.worst:.1e}" for r in res)
    report(2, "gradient correctness", ok, f"{detail} (<1e-4), {elapsed:.1f}s (<30s)")
    assert worst < 1e-4 and elapsed < 30.0


def test_criterion_3_reduction_identities(report):
    cw = checks.check_singleton_cw(seed=0, instances=50)
    dd = checks.check_shared_centroids_dd(seed=0, instances=50)
    report(3, "reduction identities", cw.passed and dd.passed,
           f"singleton CW-IW {cw.worst:.2e} (<1e-12), shared-centroid DD {dd.worst:.2e} (<1e-10)")
    assert cw.worst < 1e-12 and dd.worst < 1e-10


def test_criterion_4_oracle_equivalence(report):
    km = checks.check_kmeans_oracle(seed=0, instances=20)
    pk = checks.check_precision_oracle(seed=0, instances=20)
    report(4, "oracle equivalence", km.passed and pk.passed,
           f"k-means inertia dev {km.worst:.2e} ({km.detail}), P@k dev {pk.worst:.2e} (<1e-12)")
    assert km.passed and pk.passed


def test_criterion_5_schedules(report):
    cfg = LossConfig(alpha=1.0, T1=20, T2=100)
    lam = [lambda_schedule(ep, cfg) for ep in (10, 60, 150)]
    lr0, total = 0.0002, 12_345
    lr = [cosine_lr(0, total, lr0), cosine_lr(total, total, lr0), cosine_lr(total / 2, total, lr0)]
    errs = [abs(lam[0]), abs(lam[1] - 0.5), abs(lam[2] - 1.0),
            abs(lr[0] - lr0), abs(lr[1]), abs(lr[2] - lr0 / 2)]
    ok = max(errs) < 1e-12
    report(5, "schedule conformance", ok, f"lambda(10,60,150)={lam}, lr endpoints/mid={lr}, max err {max(errs):.1e}")
    assert ok


def test_criterion_6_ablation_direction(report):
    cfg = RunConfig.desk_scale()
    assert cfg.train["epochs"] == 60
    t0 = time.perf_counter()
    res = ablation(cfg, variants=("v1", "v3", "full"), seeds=(0, 1, 2))
    elapsed = time.perf_counter() - t0
    med = res.medians()
    gain = med["full"] - med["v1"]
    ok = med["full"] >= med["v3"] >= med["v1"] and gain >= 0.05 and elapsed < 15 * 60
    runs = "; ".join(f"{v} {np.round(res.scores(v), 3).tolist()}" for v in ("v1", "v3", "full"))
    report(6, "ablation direction", ok,
           f"medians v1={med['v1']:.3f} v3={med['v3']:.3f} full={med['full']:.3f}, "
           f"full-v1={100 * gain:+.1f}pp (>=+5), {elapsed / 60:.1f} min (<15) [{runs}]")
    assert med["full"] >= med["v3"] >= med["v1"]
    assert gain >= 0.05
    assert elapsed < 15 * 60


def test_criterion_7_determinism(report, tmp_path):
    cfg = RunConfig.desk_scale()
    run_variant(cfg, "full", 0, out_dir=tmp_path / "a")
    run_variant(cfg, "full", 0, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    rows = a.count(b"\n") - 1
    report(7, "determinism", a == b, f"two {cfg.train['epochs']}-epoch runs, {rows} metric rows, identical={a == b}")
    assert a == b


def test_criterion_8_entropy_bounds(report):
    res = checks.check_entropy_bounds(seed=0, trials=10_000)
    report(8, "entropy bounds", res.passed, f"worst excess over [0, ln K] or uniform error {res.worst:.2e} (<1e-12)")
    assert res.passed


def test_criterion_9_chance_baseline(report):
    cfg = RunConfig.desk_scale()
    C = cfg.generator.num_classes
    scores = chance_baseline(cfg, seeds=range(5))
    dev = max(abs(s - 1.0 / C) for s in scores)
    ok = dev <= 0.15
    report(9, "chance baseline", ok, f"untrained P@1 {np.round(scores, 3).tolist()}, max |P@1 - 1/C| {dev:.3f} (<=0.15)")
    assert ok
