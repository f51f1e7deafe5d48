"""Category-level cross-domain retrieval scoring (precision@k)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderParams, encode
from .data import Dataset

DIRECTIONS = ("A2B", "B2A")


@dataclass
class RetrievalResult:
    ks: tuple
    precision: dict  # k -> P@k
    ranked_ids: np.ndarray  # queries x max(k)
    ranked_dist: np.ndarray
    correct: np.ndarray  # queries x max(k) bool
    query_ids: np.ndarray
    direction: str = ""

    def report(self, per_query: bool = False) -> dict:
        doc = {"direction": self.direction, "ks": list(self.ks),
               "aggregate": {f"P@{k}": self.precision[k] for k in self.ks}}
        if per_query:
            doc["per_query"] = [
                {"query": int(q), "ranked": [int(i) for i in ids],
                 "distance": [float(d) for d in dist]}
                for q, ids, dist in zip(self.query_ids, self.ranked_ids, self.ranked_dist)]
        return doc


def retrieve(query_features, gallery_features, query_labels, gallery_labels,
             ks=(1, 5, 15), gallery_ids=None, query_ids=None) -> RetrievalResult:
    """Rank the gallery by cosine distance to each query; ties by ascending id."""
    q = np.atleast_2d(np.asarray(query_features, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gallery_features, dtype=np.float64))
    if q.shape[0] == 0:
        raise ValueError("empty query set")
    if q.shape[1] != g.shape[1]:
        raise ValueError(f"feature dims differ: {q.shape[1]} vs {g.shape[1]}")
    ks = tuple(int(k) for k in ks)
    if not ks or min(ks) < 1 or max(ks) > g.shape[0]:
        raise ValueError(f"every k must lie in [1, {g.shape[0]}], got {list(ks)}")
    if query_labels is None or gallery_labels is None:
        raise ValueError("retrieval scoring needs labels on both sides")
    ql = np.asarray(query_labels)
    gl = np.asarray(gallery_labels)
    gids = np.arange(g.shape[0]) if gallery_ids is None else np.asarray(gallery_ids)
    qids = np.arange(q.shape[0]) if query_ids is None else np.asarray(query_ids)
    kmax = max(ks)
    dist = 1.0 - q @ g.T
    ranked = np.empty((q.shape[0], kmax), dtype=np.int64)
    for r in range(q.shape[0]):
        ranked[r] = np.lexsort((gids, dist[r]))[:kmax]
    rdist = np.take_along_axis(dist, ranked, axis=1)
    correct = gl[ranked] == ql[:, None]
    prec = {k: float(correct[:, :k].mean(axis=1).mean()) for k in ks}
    return RetrievalResult(ks, prec, gids[ranked], rdist, correct, qids)


def evaluate_features(feat_A, feat_B, ds: Dataset, direction: str, ks=(1, 5, 15)) -> RetrievalResult:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if not ds.labeled:
        raise ValueError("evaluation needs a labeled dataset")
    if direction == "A2B":
        res = retrieve(feat_A, feat_B, ds.labels_A, ds.labels_B, ks, ds.ids_B, ds.ids_A)
    else:
        res = retrieve(feat_B, feat_A, ds.labels_B, ds.labels_A, ks, ds.ids_A, ds.ids_B)
    res.direction = direction
    return res


def evaluate_params(theta: EncoderParams, ds: Dataset, directions=DIRECTIONS, ks=(1, 5, 15)) -> dict:
    """Encode un-augmented raws with ``theta``; one result per direction."""
    if theta.layer_dims[0] != ds.d_in:
        raise ValueError(f"encoder expects d_in={theta.layer_dims[0]}, dataset has {ds.d_in}")
    fa, fb = encode(theta, ds.raw_A), encode(theta, ds.raw_B)
    return {d: evaluate_features(fa, fb, ds, d, ks) for d in directions}


def evaluate_checkpoint(checkpoint, ds: Dataset, direction: str = "A2B", ks=(1, 5, 15)) -> RetrievalResult:
    return evaluate_params(checkpoint.theta, ds, (direction,), ks)[direction]


@dataclass
class Evaluator:
    """Callable handed to the training loop; owns the labels so training never does."""

    dataset: Dataset
    ks: tuple = (1, 5, 15)
    directions: tuple = DIRECTIONS
    last: dict = field(default_factory=dict)

    def __call__(self, theta: EncoderParams) -> dict:
        self.last = evaluate_params(theta, self.dataset, self.directions, self.ks)
        return {k: float(np.mean([r.precision[k] for r in self.last.values()])) for k in self.ks}


def dumps_report(results: dict, per_query: bool = False) -> str:
    return json.dumps([r.report(per_query) for r in results.values()], indent=1)
