"""Ablation sweep: train each loss variant on the synthetic benchmark over several seeds.

    python scripts/run_ablation.py --epochs 60 --seeds 0 1 2
    python scripts/run_ablation.py --variants v1 full --set generator.domain_gap=0.8

Prints per-run final cross-domain P@1 (mean of A->B and B->A) and per-variant medians.
"""
import argparse
import json

from ucdir.config import RunConfig, apply_overrides
from ucdir.experiments import ablation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=None)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--variants", nargs="+", default=["v1", "v2", "v3", "full"])
    ap.add_argument("--workers", type=int, default=None, help="parallel runs (default: CPU count)")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args()
    cfg = RunConfig.load(args.config, RunConfig.desk_scale()) if args.config else RunConfig.desk_scale()
    overrides = list(args.set)
    if args.epochs is not None:
        overrides.append(f"train.epochs={args.epochs}")
    cfg = apply_overrides(cfg, overrides)

    def show(r):
        print(f"{r.variant:5s} seed={r.seed}  P@1={r.p_at_1:.4f}  ({r.seconds:.1f}s)", flush=True)

    res = ablation(cfg, args.variants, args.seeds, workers=args.workers, progress=show)
    print(json.dumps({v: {"runs": res.scores(v), "median": m} for v, m in res.medians().items()}, indent=1))


if __name__ == "__main__":
    main()
