"""End-to-end optimisation loop.

Every epoch: rebuild both feature banks with the momentum encoder, re-run
K-means per domain, then sweep half-A/half-B batches, each followed by a
momentum-SGD step, a momentum-encoder update and an in-place bank refresh.

All randomness is derived from ``(seed, component, epoch)`` so an epoch can
be replayed from a checkpoint without storing generator state.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffmath as dm
from .clustering import kmeans
from .data import TrainingData, augment
from .encoder import (Checkpoint, EncoderParams, MomentumParams, encode, encode_on_tape,
                      init_params, load_checkpoint, momentum_from, momentum_update,
                      param_leaves, save_checkpoint)
from .losses import BatchView, FeatureBank, LossConfig, total_loss

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("L_IW", "L_CW", "L_DD", "L_SE", "L_total")


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr0: float = 0.0002
    sgd_momentum: float = 0.9
    hidden_dims: tuple = (32,)
    out_dim: int = 16
    m: float = 0.99
    K: int = 5
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    aug_jitter: float = 0.1
    aug_noise: float = 0.05
    eval_interval: int = 5
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be even and >= 2")
        if self.lr0 < 0:
            raise ValueError("lr0 must be non-negative")
        if not 0.0 <= self.m <= 1.0:
            raise ValueError("m must lie in [0, 1]")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)

    def layer_dims(self, d_in: int) -> tuple:
        return (d_in, *self.hidden_dims, self.out_dim)


@dataclass
class TrainState:
    theta: EncoderParams
    theta_m: MomentumParams
    velocity: list
    banks: dict = field(default_factory=dict)
    clusters: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0


def derive_seed(seed: int, component: str, epoch: int = 0) -> int:
    h = hashlib.sha256(f"{seed}/{component}/{epoch}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def cosine_lr(step: float, total_steps: float, lr0: float) -> float:
    if total_steps <= 0:
        return lr0
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def sgd_step(params: list, grads: list, velocity: list, lr: float, momentum: float):
    """``v <- momentum * v + g``; ``p <- p - lr * v``. Returns new (params, velocity)."""
    if len(params) != len(grads) or len(params) != len(velocity):
        raise ValueError("params, grads and velocity must align")
    new_p, new_v = [], []
    for i, (p, g, v) in enumerate(zip(params, grads, velocity)):
        p, g, v = np.asarray(p, dtype=np.float64), np.asarray(g, dtype=np.float64), np.asarray(v)
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"entry {i}: shapes {p.shape}, {g.shape}, {v.shape} differ")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter entry {i}")
        v = momentum * v + g
        new_v.append(v)
        new_p.append(p - lr * v)
    return new_p, new_v


def _flat(pairs: list) -> list:
    return [a for wb in pairs for a in wb]


def _unflat(arrays: list) -> list:
    return [(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]


def init_state(data: TrainingData, cfg: TrainConfig) -> TrainState:
    theta = init_params(derive_seed(cfg.seed, "init"), cfg.layer_dims(data.d_in))
    return TrainState(theta, momentum_from(theta, cfg.m),
                      [(np.zeros_like(w), np.zeros_like(b)) for w, b in theta.layers])


def state_from_checkpoint(ck: Checkpoint) -> TrainState:
    vel = ck.velocity or [(np.zeros_like(w), np.zeros_like(b)) for w, b in ck.theta.layers]
    return TrainState(ck.theta, ck.theta_m, vel, epoch=ck.epoch, step=ck.step)


def refresh_bank_and_clusters(state: TrainState, data: TrainingData, cfg: TrainConfig) -> TrainState:
    """Rebuild both banks from un-augmented raws and re-cluster each domain."""
    for tag, ids, raw in (("A", data.ids_A, data.raw_A), ("B", data.ids_B, data.raw_B)):
        bank = FeatureBank(ids, encode(state.theta_m, raw))
        state.banks[tag] = bank
        state.clusters[tag] = kmeans(bank.vectors, cfg.K,
                                     seed=derive_seed(cfg.seed, f"kmeans-{tag}", state.epoch),
                                     max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol,
                                     domain_tag=tag)
    return state


def steps_per_epoch(data: TrainingData, cfg: TrainConfig) -> int:
    half = cfg.batch_size // 2
    return min(len(data.ids_A) // half, len(data.ids_B) // half)


def train_epoch(state: TrainState, data: TrainingData, cfg: TrainConfig) -> dict:
    """One pass over shuffled half-A/half-B batches; returns epoch-mean metrics."""
    if "A" not in state.banks or "B" not in state.banks:
        raise RuntimeError("refresh_bank_and_clusters must run before train_epoch")
    half = cfg.batch_size // 2
    n_steps = steps_per_epoch(data, cfg)
    if n_steps == 0:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds a domain's sample count")
    total_steps = n_steps * cfg.epochs
    rng = np.random.default_rng(derive_seed(cfg.seed, "batches", state.epoch))
    perm_A = rng.permutation(len(data.ids_A))
    perm_B = rng.permutation(len(data.ids_B))
    ep = state.epoch
    sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
    lam = 0.0
    lr_first = None
    for s in range(n_steps):
        rows_A = perm_A[s * half:(s + 1) * half]
        rows_B = perm_B[s * half:(s + 1) * half]
        raw_A, raw_B = data.raw_A[rows_A], data.raw_B[rows_B]
        q_A = augment(raw_A, rng, cfg.aug_jitter, cfg.aug_noise)
        q_B = augment(raw_B, rng, cfg.aug_jitter, cfg.aug_noise)
        k_A = augment(raw_A, rng, cfg.aug_jitter, cfg.aug_noise)
        k_B = augment(raw_B, rng, cfg.aug_jitter, cfg.aug_noise)
        views_A, views_B = encode(state.theta_m, k_A), encode(state.theta_m, k_B)

        tape = dm.Tape()
        leaves = param_leaves(tape, state.theta)
        batch = BatchView(data.ids_A[rows_A], data.ids_B[rows_B],
                          encode_on_tape(leaves, q_A), encode_on_tape(leaves, q_B),
                          views_A, views_B)
        loss, parts = total_loss(batch, state.banks, state.clusters.get("A"),
                                 state.clusters.get("B"), ep, cfg.loss)
        grads = tape.backward(loss)
        assert len(grads) == 2 * len(state.theta.layers)
        g = [grads[f"{p}{l}"] for l in range(len(state.theta.layers)) for p in ("W", "b")]

        lr = cosine_lr(state.step, total_steps, cfg.lr0)
        lr_first = lr if lr_first is None else lr_first
        new_p, new_v = sgd_step(_flat(state.theta.layers), g, _flat(state.velocity), lr,
                                cfg.sgd_momentum)
        state.theta = EncoderParams(_unflat(new_p))
        state.velocity = _unflat(new_v)
        state.theta_m = momentum_update(state.theta, state.theta_m)
        state.banks["A"].update(batch.ids_A, views_A)
        state.banks["B"].update(batch.ids_B, views_B)
        state.step += 1
        lam = parts["lambda"]
        for k in LOSS_COLUMNS:
            sums[k] += parts[k]
    row = {"epoch": ep, "lr": lr_first, "lambda": lam}
    row.update({k: sums[k] / n_steps for k in LOSS_COLUMNS})
    state.epoch += 1
    return row


def metrics_header(ks) -> list:
    return ["epoch", "lr", "lambda", *LOSS_COLUMNS, *(f"P@{k}" for k in ks)]


def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def format_row(row: dict, ks) -> list:
    return [_fmt(row.get(c, "")) for c in metrics_header(ks)]


@dataclass
class TrainResult:
    state: TrainState
    history: list
    checkpoint_path: Path | None = None
    metrics_path: Path | None = None


def make_checkpoint(state: TrainState, cfg: TrainConfig) -> Checkpoint:
    return Checkpoint(state.theta, state.theta_m, state.epoch, cfg.seed, state.velocity, state.step)


def train(data: TrainingData, cfg: TrainConfig, out_dir=None,
          evaluator: Callable[[EncoderParams], dict] | None = None,
          ks=(1, 5, 15), resume: Checkpoint | str | Path | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs (or the remainder after ``resume``).

    ``evaluator`` maps encoder params to ``{k: P@k}``; it is called every
    ``eval_interval`` epochs and after the last one. The training loop itself
    never sees labels.
    """
    if not isinstance(data, TrainingData):
        raise TypeError("train() takes a label-free TrainingData view")
    if resume is not None:
        ck = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        if ck.theta.layer_dims != cfg.layer_dims(data.d_in):
            raise ValueError("checkpoint architecture does not match config")
        state = state_from_checkpoint(ck)
    else:
        state = init_state(data, cfg)
    out = Path(out_dir) if out_dir is not None else None
    metrics_path = ckpt_path = None
    fh = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        ckpt_path = out / "checkpoint.json"
        append = resume is not None and metrics_path.exists()
        fh = open(metrics_path, "a" if append else "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if not append:
            writer.writerow(metrics_header(ks))
    history = []
    try:
        while state.epoch < cfg.epochs:
            refresh_bank_and_clusters(state, data, cfg)
            row = train_epoch(state, data, cfg)
            last = state.epoch == cfg.epochs
            if evaluator is not None and (state.epoch % cfg.eval_interval == 0 or last):
                row.update({f"P@{k}": v for k, v in evaluator(state.theta).items()})
            history.append(row)
            log.info("epoch %d  L_total=%.4f  lambda=%.3f", row["epoch"], row["L_total"], row["lambda"])
            if writer is not None:
                writer.writerow(format_row(row, ks))
                fh.flush()
        if ckpt_path is not None:
            save_checkpoint(make_checkpoint(state, cfg), ckpt_path)
    except (dm.CollapseError, FloatingPointError) as exc:
        if out is not None:
            save_checkpoint(make_checkpoint(state, cfg), out / "abort_checkpoint.json")
        raise TrainingAborted(f"epoch {state.epoch}: {exc}") from exc
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(state, history, ckpt_path, metrics_path)


def history_csv(history: list, ks=(1, 5, 15)) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(metrics_header(ks))
    for row in history:
        w.writerow(format_row(row, ks))
    return buf.getvalue()
