"""Tanh MLP feature extractor and its momentum twin.

The trainable encoder maps raw vectors to unit-norm embeddings. The momentum
encoder has the same structure and is only ever moved towards the trainable
weights by an exponential moving average; it never sees a gradient.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffmath as dm

CHECKPOINT_VERSION = 1


@dataclass
class EncoderParams:
    layers: list  # [(W: d_in x d_out, b: d_out), ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("encoder needs at least one layer")
        for l, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {l}: weight {w.shape} and bias {b.shape} do not pair")
            if l and self.layers[l - 1][0].shape[1] != w.shape[0]:
                raise ValueError(f"layer {l}: input dim {w.shape[0]} does not chain")

    @property
    def layer_dims(self) -> tuple:
        return (self.layers[0][0].shape[0],) + tuple(w.shape[1] for w, _ in self.layers)

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def arrays(self) -> dict:
        """Flat ``{"W0": ..., "b0": ..., ...}`` view (shares memory)."""
        out = {}
        for l, (w, b) in enumerate(self.layers):
            out[f"W{l}"] = w
            out[f"b{l}"] = b
        return out

    def copy(self):
        return type(self)([(w.copy(), b.copy()) for w, b in self.layers])

    def same_shape(self, other) -> bool:
        return self.layer_dims == other.layer_dims


@dataclass
class MomentumParams(EncoderParams):
    m: float = 0.99

    def copy(self):
        return MomentumParams([(w.copy(), b.copy()) for w, b in self.layers], self.m)


def init_params(seed: int, layer_dims: Sequence[int]) -> EncoderParams:
    """Xavier-uniform weights, zero biases, deterministic per seed."""
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ValueError("layer_dims needs an input and at least one output dim")
    if any(int(d) < 1 for d in dims):
        raise ValueError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        s = np.sqrt(6.0 / (d_in + d_out))
        layers.append((rng.uniform(-s, s, size=(d_in, d_out)), np.zeros(d_out)))
    return EncoderParams(layers)


def momentum_from(theta: EncoderParams, m: float = 0.99) -> MomentumParams:
    return MomentumParams([(w.copy(), b.copy()) for w, b in theta.layers], float(m))


def _check_inputs(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != params.layer_dims[0]:
        raise ValueError(f"input dim {x.shape[1]} != encoder input dim {params.layer_dims[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def encode(params: EncoderParams, inputs) -> np.ndarray:
    """Embed a batch of raw vectors (rows); every output row has unit norm."""
    h = _check_inputs(params, inputs)
    last = len(params.layers) - 1
    for l, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if l < last:
            h = np.tanh(h)
    norm = np.sqrt((h * h).sum(axis=1, keepdims=True))
    if np.any(norm < dm.NORM_EPS):
        raise dm.CollapseError(f"collapse: pre-normalization norm {float(norm.min()):.3g}")
    return h / norm


def param_leaves(tape: dm.Tape, params: EncoderParams, prefix: str = "") -> list:
    """Register params as trainable leaves; returns [(W var, b var), ...]."""
    return [(tape.leaf(w, name=f"{prefix}W{l}", trainable=True),
             tape.leaf(b, name=f"{prefix}b{l}", trainable=True))
            for l, (w, b) in enumerate(params.layers)]


def encode_on_tape(layer_vars: list, inputs) -> dm.Var:
    """Same map as :func:`encode`, recorded on the tape of ``layer_vars``."""
    tape = layer_vars[0][0].tape
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    h = tape.const(x)
    last = len(layer_vars) - 1
    for l, (w, b) in enumerate(layer_vars):
        h = dm.add(dm.matmul(h, w), b)
        if l < last:
            h = dm.tanh(h)
    return dm.l2normalize(h, axis=1)


def momentum_update(theta: EncoderParams, theta_m: MomentumParams) -> MomentumParams:
    """Return ``m * theta_m + (1 - m) * theta`` parameter-wise."""
    if not theta.same_shape(theta_m):
        raise ValueError(f"shape mismatch {theta.layer_dims} vs {theta_m.layer_dims}")
    m = theta_m.m
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum coefficient {m} outside [0, 1]")
    layers = [(m * wm + (1.0 - m) * w, m * bm + (1.0 - m) * b)
              for (w, b), (wm, bm) in zip(theta.layers, theta_m.layers)]
    return MomentumParams(layers, m)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _fmt(a) -> str:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        return format(float(a), ".17g")
    return "[" + ",".join(_fmt(r) for r in a) + "]"


def _fmt_layers(layers) -> str:
    return "[" + ",".join('{"W":%s,"b":%s}' % (_fmt(w), _fmt(b)) for w, b in layers) + "]"


def _parse_layers(raw) -> list:
    return [(np.array(l["W"], dtype=np.float64), np.array(l["b"], dtype=np.float64)) for l in raw]


@dataclass
class Checkpoint:
    theta: EncoderParams
    theta_m: MomentumParams
    epoch: int
    seed: int
    velocity: list | None = None
    step: int = 0
    extra: dict = field(default_factory=dict)


def dumps_checkpoint(ck: Checkpoint) -> str:
    """JSON text; every float written with 17 significant digits."""
    parts = [
        f'"version":{CHECKPOINT_VERSION}',
        f'"layer_dims":{json.dumps(list(ck.theta.layer_dims))}',
        f'"theta":{_fmt_layers(ck.theta.layers)}',
        f'"theta_m":{_fmt_layers(ck.theta_m.layers)}',
        f'"m":{format(ck.theta_m.m, ".17g")}',
        f'"epoch":{int(ck.epoch)}',
        f'"step":{int(ck.step)}',
        f'"seed":{int(ck.seed)}',
    ]
    if ck.velocity is not None:
        parts.append(f'"velocity":{_fmt_layers(ck.velocity)}')
    if ck.extra:
        parts.append(f'"extra":{json.dumps(ck.extra, sort_keys=True)}')
    return "{\n" + ",\n".join(parts) + "\n}\n"


def loads_checkpoint(text: str) -> Checkpoint:
    doc = json.loads(text)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    theta = EncoderParams(_parse_layers(doc["theta"]))
    theta_m = MomentumParams(_parse_layers(doc["theta_m"]), float(doc["m"]))
    if list(theta.layer_dims) != list(doc["layer_dims"]) or not theta.same_shape(theta_m):
        raise ValueError("checkpoint layer_dims disagree with stored arrays")
    vel = _parse_layers(doc["velocity"]) if "velocity" in doc else None
    return Checkpoint(theta, theta_m, int(doc["epoch"]), int(doc["seed"]), vel,
                      int(doc.get("step", 0)), doc.get("extra", {}))


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ck: Checkpoint, path) -> None:
    atomic_write(path, dumps_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        return loads_checkpoint(fh.read())
