"""``ucdir`` command line: generate | train | eval | cluster | check.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
3 property-check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, apply_overrides, env_overrides
from .data import DatasetFormatError, generate, load_dataset, save_dataset
from .encoder import atomic_write, encode, load_checkpoint
from .evaluation import DIRECTIONS, dumps_report, evaluate_checkpoint
from .losses import VARIANTS

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("ucdir")


class UsageFailure(Exception):
    pass


def _ks(text: str) -> tuple:
    try:
        ks = tuple(int(k) for k in text.split(",") if k.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k expects comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("--k values must be positive")
    return ks


def _limit_threads(n: int | None) -> None:
    # must run before numpy spins up its BLAS pool to take full effect
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def load_run_config(args) -> RunConfig:
    base = RunConfig.desk_scale() if getattr(args, "desk_scale", False) else RunConfig()
    cfg = RunConfig.load(args.config, base) if getattr(args, "config", None) else base
    cfg = env_overrides(cfg)
    over = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        over += [f"generator.seed={args.seed}", f"train.seed={args.seed}"]
    if getattr(args, "epochs", None) is not None:
        over.append(f"train.epochs={args.epochs}")
    return apply_overrides(cfg, over) if over else cfg


def cmd_generate(args) -> int:
    cfg = load_run_config(args)
    ds = generate(cfg.generator)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: N={ds.N} M={ds.M} C={ds.num_classes} d_in={ds.d_in}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .evaluation import Evaluator
    from .training import TrainingAborted, train

    cfg = load_run_config(args)
    ds = load_dataset(args.data) if args.data else generate(cfg.generator)
    tc = cfg.train_config(variant=args.variant)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.toml", cfg.to_toml() + f"\n# variant = {args.variant}\n")
    evaluator = Evaluator(ds, ks=cfg.eval.ks, directions=cfg.eval.directions) if ds.labeled else None
    try:
        res = train(ds.unlabeled(), tc, out_dir=out, evaluator=evaluator, ks=cfg.eval.ks)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    last = res.history[-1] if res.history else {}
    summary = " ".join(f"{k}={last[k]:.4f}" for k in last if k.startswith("P@"))
    print(f"trained {tc.epochs} epochs ({args.variant}); checkpoint {res.checkpoint_path} {summary}".rstrip())
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if not ds.labeled:
        raise UsageFailure("evaluation needs a labeled dataset")
    directions = (args.direction,) if args.direction else DIRECTIONS
    try:
        results = {d: evaluate_checkpoint(ck, ds, d, ks=args.k) for d in directions}
    except ValueError as exc:
        raise UsageFailure(str(exc)) from None
    text = dumps_report(results, per_query=args.per_query)
    if args.out:
        atomic_write(args.out, text + "\n")
    print(text)
    return EXIT_OK


def cmd_cluster(args) -> int:
    from .clustering import kmeans
    from .training import derive_seed

    ck = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    raw = ds.raw_A if args.domain == "A" else ds.raw_B
    try:
        feats = encode(ck.theta_m, raw)
    except ValueError as exc:
        raise UsageFailure(str(exc)) from None
    K = args.K or ds.num_classes or 2
    seed = derive_seed(ck.seed if args.seed is None else args.seed, f"kmeans_{args.domain}", ck.epoch)
    model = kmeans(feats, K, seed=seed, domain_tag=args.domain)
    text = model.to_json()
    if args.out:
        atomic_write(args.out, text + "\n")
    print(text)
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    results = run_checks(seed=args.seed or 0, trials=args.trials, grad_only=args.grad_only)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_CHECK if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ucdir", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="TOML file with generator/train/loss/eval sections")
        sp.add_argument("--desk-scale", action="store_true",
                        help="start from the CPU-sized defaults instead of the full-scale ones")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
        sp.add_argument("--seed", type=int)

    g = sub.add_parser("generate", help="write a synthetic two-domain dataset")
    with_config(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train an encoder")
    with_config(t)
    t.add_argument("--data", help="dataset file (default: generate from the config)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--variant", choices=sorted(VARIANTS), default="full")
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="cross-domain retrieval precision of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--k", type=_ks, default=(1, 5, 15))
    e.add_argument("--direction", choices=DIRECTIONS)
    e.add_argument("--per-query", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cluster", help="k-means over one domain's momentum features")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--domain", choices=("A", "B"), default="A")
    c.add_argument("--K", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_cluster)

    k = sub.add_parser("check", help="run the numerical property suite")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--trials", type=int, default=1000)
    k.add_argument("--grad-only", action="store_true")
    k.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    _limit_threads(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageFailure, DatasetFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
