"""Final cross-domain P@1 as the domain gap widens, for selected loss variants.

    python scripts/gap_sweep.py --gaps 0.4 0.6 0.8 --variants v1 full --epochs 30

Each cell is the median over ``--seeds``; the untrained-encoder baseline is
printed alongside for reference.
"""
import argparse

from ucdir.config import RunConfig, apply_overrides
from ucdir.experiments import ablation, chance_baseline


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--gaps", type=float, nargs="+", default=[0.4, 0.6, 0.8])
    ap.add_argument("--variants", nargs="+", default=["v1", "full"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    base = RunConfig.desk_scale()
    if args.epochs is not None:
        base = apply_overrides(base, [f"train.epochs={args.epochs}"])
    print("gap   " + "  ".join(f"{v:>6s}" for v in ["untrained", *args.variants]))
    for gap in args.gaps:
        cfg = apply_overrides(base, [f"generator.domain_gap={gap}"])
        res = ablation(cfg, args.variants, args.seeds, workers=args.workers)
        chance = sorted(chance_baseline(cfg, args.seeds))[len(args.seeds) // 2]
        cells = [f"{chance:9.3f}"] + [f"{res.median(v):6.3f}" for v in args.variants]
        print(f"{gap:4.2f}  " + "  ".join(cells), flush=True)


if __name__ == "__main__":
    main()
