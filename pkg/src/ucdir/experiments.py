"""Multi-seed experiments on the synthetic benchmark: loss ablation and chance baseline."""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import generate
from .encoder import init_params
from .evaluation import Evaluator, evaluate_params
from .training import derive_seed, train


@dataclass
class RunOutcome:
    variant: str
    seed: int
    p_at_1: float
    seconds: float


@dataclass
class AblationResult:
    runs: list = field(default_factory=list)

    def scores(self, variant: str) -> list:
        return [r.p_at_1 for r in self.runs if r.variant == variant]

    def median(self, variant: str) -> float:
        return float(np.median(self.scores(variant)))

    def medians(self) -> dict:
        return {v: self.median(v) for v in dict.fromkeys(r.variant for r in self.runs)}


def run_variant(cfg: RunConfig, variant: str, seed: int, out_dir=None) -> RunOutcome:
    """Train one variant on the dataset generated with ``seed``; final P@1 averaged over directions."""
    t0 = time.perf_counter()
    spec = cfg.generator_spec(seed=seed)
    ds = generate(spec)
    tcfg = cfg.train_config(variant=variant, seed=seed)
    res = train(ds.unlabeled(), tcfg, out_dir=out_dir, evaluator=Evaluator(ds, ks=(1,)), ks=(1,))
    return RunOutcome(variant, seed, float(res.history[-1]["P@1"]), time.perf_counter() - t0)


def _run_star(args):
    return run_variant(*args)


def ablation(cfg: RunConfig, variants=("v1", "v3", "full"), seeds=(0, 1, 2),
             workers: int | None = None, progress=None) -> AblationResult:
    """Every (variant, seed) pair; runs are independent so they may use separate processes."""
    jobs = [(cfg, v, s) for v in variants for s in seeds]
    workers = min(len(jobs), workers or os.cpu_count() or 1)
    out = AblationResult()
    if workers <= 1:
        results = map(_run_star, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_run_star, jobs)
    try:
        for r in results:
            out.runs.append(r)
            if progress is not None:
                progress(r)
    finally:
        if workers > 1:
            pool.shutdown()
    return out


def chance_baseline(cfg: RunConfig, seeds=range(5)) -> list:
    """Cross-domain P@1 of freshly initialised encoders, one per seed."""
    scores = []
    for seed in seeds:
        spec = cfg.generator_spec(seed=seed)
        ds = generate(spec)
        tcfg = cfg.train_config(seed=seed)
        theta = init_params(derive_seed(seed, "init"), tcfg.layer_dims(ds.d_in))
        res = evaluate_params(theta, ds, ks=(1,))
        scores.append(float(np.mean([r.precision[1] for r in res.values()])))
    return scores


__all__ = ["RunOutcome", "AblationResult", "run_variant", "ablation", "chance_baseline"]
