"""Synthetic two-domain data, contrastive view augmentation and dataset files.

Each class has a unit latent prototype. A sample is the prototype plus
Gaussian noise, pushed through its domain's transform: an orthogonal map
into ``d_in`` dimensions, a bias and an elementwise nonlinearity. Domain B's
orthogonal map is a blend of domain A's and an independent one, so
``domain_gap`` moves smoothly from shared geometry (0) to unrelated (1).

Labels live on :class:`Dataset` only. Training code receives a
:class:`TrainingData` view, which has no label fields at all.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

NONLINEARITIES = {
    "identity": lambda x: x,
    "tanh": np.tanh,
    "abs": np.abs,
}


@dataclass
class GeneratorSpec:
    num_classes: int = 5
    per_class_per_domain: int = 200
    latent_dim: int = 8
    d_in: int = 32
    class_sep: float = 3.0
    domain_gap: float = 0.6
    bias_scale: float = 2.0
    nonlinearity_A: str = "identity"
    nonlinearity_B: str = "tanh"
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.per_class_per_domain < 2:
            raise ValueError("per_class_per_domain must be >= 2")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if self.d_in < self.latent_dim:
            raise ValueError("d_in must be >= latent_dim")
        if not 0.0 <= self.domain_gap <= 1.0:
            raise ValueError("domain_gap must lie in [0, 1]")
        for nl in (self.nonlinearity_A, self.nonlinearity_B):
            if nl not in NONLINEARITIES:
                raise ValueError(f"unknown nonlinearity {nl!r}; choose from {sorted(NONLINEARITIES)}")


@dataclass
class DataSample:
    id: int
    domain: str
    raw: np.ndarray
    label: int | None = None


@dataclass
class Dataset:
    ids_A: np.ndarray
    raw_A: np.ndarray
    labels_A: np.ndarray | None
    ids_B: np.ndarray
    raw_B: np.ndarray
    labels_B: np.ndarray | None
    num_classes: int | None = None

    def __post_init__(self):
        self.ids_A = np.asarray(self.ids_A, dtype=np.int64)
        self.ids_B = np.asarray(self.ids_B, dtype=np.int64)
        self.raw_A = np.asarray(self.raw_A, dtype=np.float64)
        self.raw_B = np.asarray(self.raw_B, dtype=np.float64)
        if len(self.ids_A) < 1 or len(self.ids_B) < 1:
            raise ValueError("each domain needs at least one sample")
        if self.raw_A.shape[1] != self.raw_B.shape[1]:
            raise ValueError("domains disagree on d_in")
        all_ids = np.concatenate([self.ids_A, self.ids_B])
        if np.unique(all_ids).size != all_ids.size:
            raise ValueError("duplicate sample id")
        if not (np.all(np.isfinite(self.raw_A)) and np.all(np.isfinite(self.raw_B))):
            raise ValueError("non-finite raw vector")

    @property
    def d_in(self) -> int:
        return self.raw_A.shape[1]

    @property
    def N(self) -> int:
        return len(self.ids_A)

    @property
    def M(self) -> int:
        return len(self.ids_B)

    @property
    def labeled(self) -> bool:
        return self.labels_A is not None and self.labels_B is not None

    def samples(self) -> Iterator[DataSample]:
        for dom, ids, raw, lab in (("A", self.ids_A, self.raw_A, self.labels_A),
                                   ("B", self.ids_B, self.raw_B, self.labels_B)):
            for r in range(len(ids)):
                yield DataSample(int(ids[r]), dom, raw[r], None if lab is None else int(lab[r]))

    def unlabeled(self) -> "TrainingData":
        return TrainingData(self.ids_A.copy(), self.raw_A.copy(), self.ids_B.copy(), self.raw_B.copy())

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented

        def same(a, b):
            return (a is None and b is None) or (a is not None and b is not None
                                                 and np.array_equal(a, b))
        return (np.array_equal(self.ids_A, other.ids_A) and np.array_equal(self.ids_B, other.ids_B)
                and np.array_equal(self.raw_A, other.raw_A) and np.array_equal(self.raw_B, other.raw_B)
                and same(self.labels_A, other.labels_A) and same(self.labels_B, other.labels_B))


@dataclass(frozen=True)
class TrainingData:
    """Label-free view of a dataset; the only data type training accepts."""

    ids_A: np.ndarray
    raw_A: np.ndarray
    ids_B: np.ndarray
    raw_B: np.ndarray

    @property
    def d_in(self) -> int:
        return self.raw_A.shape[1]


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _polar(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m, full_matrices=False)
    return u @ vt


def class_prototypes(spec: GeneratorSpec, rng: np.random.Generator) -> np.ndarray:
    """C unit vectors in latent space at uneven mutual distances.

    Random directions (not an orthogonal frame) give each pair of classes its
    own similarity, so the class geometry has no label-swapping symmetry.
    Larger ``class_sep`` spreads the classes away from a shared direction.
    """
    dirs = rng.standard_normal((spec.num_classes, spec.latent_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    shared = dirs.sum(axis=0)
    shared /= np.linalg.norm(shared)
    protos = spec.class_sep * dirs + shared
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def generate(spec: GeneratorSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    protos = class_prototypes(spec, rng)
    q_a = random_orthogonal(spec.d_in, rng)[:, : spec.latent_dim]
    q_ind = random_orthogonal(spec.d_in, rng)[:, : spec.latent_dim]
    q_b = _polar((1.0 - spec.domain_gap) * q_a + spec.domain_gap * q_ind)
    b_a = spec.bias_scale * rng.standard_normal(spec.d_in)
    b_b = spec.bias_scale * rng.standard_normal(spec.d_in)
    n, C = spec.per_class_per_domain, spec.num_classes
    labels = np.repeat(np.arange(C), n)
    out = {}
    for dom, q, b, nl in (("A", q_a, b_a, spec.nonlinearity_A), ("B", q_b, b_b, spec.nonlinearity_B)):
        z = protos[labels] + spec.noise_sigma * rng.standard_normal((C * n, spec.latent_dim))
        out[dom] = NONLINEARITIES[nl](z @ q.T + b)
    return Dataset(np.arange(C * n), out["A"], labels.copy(),
                   np.arange(C * n, 2 * C * n), out["B"], labels.copy(), num_classes=C)


def augment(raw, rng: np.random.Generator, jitter: float = 0.1, noise: float = 0.05) -> np.ndarray:
    """Contrastive view: ``raw * (1 + U[-jitter, jitter]) + N(0, noise^2)``.

    Accepts a single vector or a batch of rows.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite raw vector")
    j = rng.uniform(-jitter, jitter, size=raw.shape) if jitter else 0.0
    e = rng.normal(0.0, noise, size=raw.shape) if noise else 0.0
    return raw * (1.0 + j) + e


# ---------------------------------------------------------------------------
# line-delimited JSON files
# ---------------------------------------------------------------------------

class DatasetFormatError(ValueError):
    pass


def save_dataset(ds: Dataset, path) -> None:
    lines = []
    for s in ds.samples():
        lines.append(json.dumps({"id": s.id, "domain": s.domain, "label": s.label,
                                 "vector": [float(v) for v in s.raw]}))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    recs = {"A": [], "B": []}
    seen = set()
    d_in = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sid, dom, vec = int(rec["id"]), rec["domain"], rec["vector"]
                label = rec.get("label")
                vec = np.array(vec, dtype=np.float64)
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(f"line {lineno}: malformed record ({exc})") from None
            if dom not in recs:
                raise DatasetFormatError(f"line {lineno}: domain must be 'A' or 'B', got {dom!r}")
            if vec.ndim != 1 or not np.all(np.isfinite(vec)):
                raise DatasetFormatError(f"line {lineno}: vector must be a flat list of finite numbers")
            if d_in is None:
                d_in = vec.size
            elif vec.size != d_in:
                raise DatasetFormatError(f"line {lineno}: vector length {vec.size} != {d_in}")
            if sid in seen:
                raise DatasetFormatError(f"line {lineno}: duplicate id {sid}")
            seen.add(sid)
            recs[dom].append((sid, vec, label))
    if not seen:
        raise DatasetFormatError("no samples")
    for dom in "AB":
        if not recs[dom]:
            raise DatasetFormatError(f"no samples for domain {dom}")

    def cols(rs):
        labs = [r[2] for r in rs]
        lab = None if any(l is None for l in labs) else np.array(labs, dtype=np.int64)
        return np.array([r[0] for r in rs]), np.stack([r[1] for r in rs]), lab

    ia, ra, la = cols(recs["A"])
    ib, rb, lb = cols(recs["B"])
    nc = None
    if la is not None and lb is not None:
        nc = int(np.unique(np.concatenate([la, lb])).size)
    return Dataset(ia, ra, la, ib, rb, lb, num_classes=nc)
