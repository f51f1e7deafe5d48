import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucdir.data import Dataset, GeneratorSpec, generate
from ucdir.encoder import Checkpoint, init_params, momentum_from
from ucdir.evaluation import Evaluator, evaluate_checkpoint, evaluate_params, retrieve


def unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def brute_force_precision(q, g, ql, gl, gids, k):
    """Sort every gallery item by (distance, id) with plain Python and count hits."""
    total = 0.0
    for qi in range(len(q)):
        scored = []
        for gi in range(len(g)):
            d = 1.0 - sum(float(a) * float(b) for a, b in zip(q[qi], g[gi]))
            scored.append((d, int(gids[gi]), int(gl[gi])))
        scored.sort()
        total += sum(lab == ql[qi] for _, _, lab in scored[:k]) / k
    return total / len(q)


def test_all_same_class_gallery():
    rng = np.random.default_rng(0)
    r = retrieve(unit_rows(rng.normal(size=(3, 4))), unit_rows(rng.normal(size=(6, 4))),
                 [2, 2, 2], [2] * 6, ks=(1, 3, 6))
    assert all(v == 1.0 for v in r.precision.values())


def test_exact_duplicate_ranks_first():
    rng = np.random.default_rng(1)
    g = unit_rows(rng.normal(size=(5, 3)))
    r = retrieve(g[3:4], g, [1], [0, 0, 0, 1, 0], ks=(1,))
    assert r.ranked_ids[0, 0] == 3 and r.precision[1] == 1.0
    assert r.ranked_dist[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_ties_broken_by_ascending_id():
    g = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    r = retrieve(np.array([[1.0, 0.0]]), g, [0], [1, 0, 0], ks=(2,), gallery_ids=[30, 20, 10])
    assert r.ranked_ids[0].tolist() == [10, 30]


@pytest.mark.parametrize("seed", range(10))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    q = unit_rows(rng.normal(size=(10, 4)))
    g = unit_rows(rng.normal(size=(30, 4)))
    ql, gl = rng.integers(0, 3, 10), rng.integers(0, 3, 30)
    gids = rng.permutation(30) + 100
    r = retrieve(q, g, ql, gl, ks=(1, 5), gallery_ids=gids)
    for k in (1, 5):
        assert abs(r.precision[k] - brute_force_precision(q, g, ql, gl, gids, k)) <= 1e-12


def test_errors():
    q = np.eye(2)
    with pytest.raises(ValueError, match="k"):
        retrieve(q, q, [0, 1], [0, 1], ks=(3,))
    with pytest.raises(ValueError, match="empty"):
        retrieve(np.zeros((0, 2)), q, [], [0, 1], ks=(1,))


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(5, 50))
def test_label_permutation_invariance(seed, nq, ng):
    rng = np.random.default_rng(seed)
    q, g = unit_rows(rng.normal(size=(nq, 3))), unit_rows(rng.normal(size=(ng, 3)))
    ql, gl = rng.integers(0, 4, nq), rng.integers(0, 4, ng)
    perm = rng.permutation(4)
    a = retrieve(q, g, ql, gl, ks=(1, 5))
    b = retrieve(q, g, perm[ql], perm[gl], ks=(1, 5))
    assert a.precision == b.precision
    for k in (1, 5):
        assert abs(a.precision[k] - brute_force_precision(q, g, ql, gl, np.arange(ng), k)) <= 1e-12


def test_ranking_invariant_to_monotone_distance_transform():
    rng = np.random.default_rng(5)
    q, g = unit_rows(rng.normal(size=(4, 3))), unit_rows(rng.normal(size=(12, 3)))
    r = retrieve(q, g, np.zeros(4), np.zeros(12), ks=(12,))
    for row, dist in zip(r.ranked_ids, r.ranked_dist):
        t = np.exp(3.0 * dist) + 1.0
        assert np.all(np.diff(t) >= 0)


def _mirror_dataset():
    ds = generate(GeneratorSpec(num_classes=3, per_class_per_domain=5, latent_dim=4, d_in=6,
                                noise_sigma=0.0, domain_gap=0.0, bias_scale=0.0,
                                nonlinearity_B="identity", seed=3))
    return Dataset(ds.ids_A, ds.raw_A, ds.labels_A, ds.ids_B, ds.raw_A.copy(), ds.labels_A.copy(), 3)


def test_aligned_domains_give_perfect_p1():
    ds = _mirror_dataset()
    theta = init_params(0, (6, 8, 4))
    res = evaluate_params(theta, ds, ks=(1,))
    assert res["A2B"].precision[1] == 1.0 and res["B2A"].precision[1] == 1.0


def test_directions_symmetric_on_mirrored_data():
    ds = _mirror_dataset()
    theta = init_params(4, (6, 8, 4))
    ck = Checkpoint(theta, momentum_from(theta), 0, 0)
    a = evaluate_checkpoint(ck, ds, "A2B", ks=(1, 5))
    b = evaluate_checkpoint(ck, ds, "B2A", ks=(1, 5))
    assert a.precision == b.precision


def test_dim_mismatch():
    ds = _mirror_dataset()
    with pytest.raises(ValueError, match="d_in"):
        evaluate_params(init_params(0, (5, 4)), ds)


def test_evaluator_averages_directions():
    ds = _mirror_dataset()
    ev = Evaluator(ds, ks=(1, 5))
    out = ev(init_params(1, (6, 8, 4)))
    for k in (1, 5):
        assert out[k] == pytest.approx(np.mean([r.precision[k] for r in ev.last.values()]))


def test_report_layout():
    rng = np.random.default_rng(0)
    r = retrieve(unit_rows(rng.normal(size=(2, 3))), unit_rows(rng.normal(size=(4, 3))),
                 [0, 1], [0, 1, 0, 1], ks=(1, 2))
    doc = r.report(per_query=True)
    assert set(doc["aggregate"]) == {"P@1", "P@2"} and len(doc["per_query"]) == 2
    assert "per_query" not in r.report()
