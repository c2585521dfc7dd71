"""Randomized invariants checked with hypothesis."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_model
from marsrec.cars import CarsParams, Msp, build_bpr_pairs, recommend_group_msp, satisfaction_matrix
from marsrec.d2r import estimate_response
from marsrec.metrics import average_precision_at_k, hit_at_k, rmse
from marsrec.sensor import SensorModel, burst_trend, donation_entropy, param_count, star_estimate
from marsrec.tensor import EventTensor, frob_sq_diff, mode_n_product, tucker_reconstruct, window_sum

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
# magnitudes whose squares do not underflow
squarable = st.one_of(st.just(0.0), st.floats(1e-100, 10), st.floats(-10, -1e-100))
dim = st.integers(1, 4)


@st.composite
def event_tensors(draw, max_dim=4):
    shape = tuple(draw(st.integers(1, max_dim)) for _ in range(3))
    mask = draw(arrays(np.bool_, shape))
    vals = draw(arrays(np.float64, shape, elements=st.floats(0.01, 50)))
    return EventTensor.from_dense(np.where(mask, vals, 0.0))


@given(arrays(np.float64, st.tuples(dim, dim, dim), elements=finite), st.integers(1, 3))
def test_identity_mode_product(t, mode):
    assert np.array_equal(mode_n_product(t, np.eye(t.shape[mode - 1]), mode), t)


@given(st.integers(0, 2**32 - 1), finite, finite)
def test_tucker_linear_in_core(seed, a, b):
    rng = np.random.default_rng(seed)
    o1, o2 = rng.normal(size=(2, 2, 2)), rng.normal(size=(2, 2, 2))
    V, C, T = (rng.normal(size=(n, 2)) for n in (3, 2, 4))
    lhs = tucker_reconstruct(a * o1 + b * o2, V, C, T)
    rhs = a * tucker_reconstruct(o1, V, C, T) + b * tucker_reconstruct(o2, V, C, T)
    scale = max(np.max(np.abs(rhs)), np.max(np.abs(lhs)), 1e-300)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale + 1e-300


@given(arrays(np.float64, (2, 3, 2), elements=squarable), arrays(np.float64, (2, 3, 2), elements=squarable))
def test_frob_zero_iff_equal(a, b):
    assert (frob_sq_diff(a, b) == 0.0) == bool(np.array_equal(a, b))
    assert frob_sq_diff(a, a) == 0.0


@given(event_tensors())
def test_event_tensor_dense_round_trip(t):
    assert EventTensor.from_dense(t.dense()) == t
    assert np.all(t.values > 0)


@given(arrays(np.float64, st.integers(1, 20), elements=finite), st.integers(0, 6))
def test_window_sum_matches_loop(x, w):
    out = window_sum(x, w)
    for t in range(len(x)):
        assert math.isclose(out[t], sum(x[max(0, t - w) : t + 1]), rel_tol=1e-9, abs_tol=1e-9)


@settings(max_examples=50)
@given(event_tensors(), st.integers(1, 3))
def test_entropy_bounds(td, L):
    for c in range(td.n_channels):
        for t in range(td.n_slots):
            h = donation_entropy(td, c, t, L)
            assert -1e-12 <= h <= math.log(td.n_viewers * (L + 1)) + 1e-12


@given(st.integers(1, 5), st.integers(1, 8), st.floats(0.0, 50.0), st.integers(1, 4))
def test_trend_of_constant_totals_is_zero(nv, nt, x, L):
    td = EventTensor.from_dense(np.full((nv, 1, nt), x))
    for t in range(nt):
        assert abs(burst_trend(td, 0, t, L)) <= 1e-9 * max(1.0, x * nv)


@settings(max_examples=50)
@given(event_tensors(), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_star_locality(td, L, seed):
    rng = np.random.default_rng(seed)
    nv, nc, nt = td.shape
    m0 = make_model(rng.normal(size=(nv, 2)), rng.normal(size=(nc, 2)), rng.uniform(0, 1, (nv, nv)), nt)
    m = SensorModel(m0.factors, m0.w_v_hat, float(rng.uniform(0, 1)), m0.theta)
    v, c, t = int(rng.integers(nv)), int(rng.integers(nc)), int(rng.integers(nt))
    before = star_estimate(m, td, v, c, t, L)
    d = td.dense().copy()
    keep = np.zeros_like(d, dtype=bool)
    keep[:, c, max(0, t - L) : t] = True
    d[~keep] = rng.uniform(0, 5, d.shape)[~keep]
    assert math.isclose(star_estimate(m, EventTensor.from_dense(d), v, c, t, L), before, rel_tol=1e-12, abs_tol=1e-12)


@given(st.lists(st.integers(1, 60), min_size=3, max_size=3), st.integers(1, 64))
def test_shared_factorization_has_fewer_parameters(dims, alpha):
    assert param_count(dims, alpha, "shared") < param_count(dims, alpha, "separate")


@given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite),
       arrays(np.float64, 6, elements=finite), finite, finite)
def test_estimate_response_linear(theta, x1, x2, a, b):
    lhs = estimate_response(theta, a * x1 + b * x2)
    rhs = a * estimate_response(theta, x1) + b * estimate_response(theta, x2)
    scale = np.abs(theta) @ (np.abs(a * x1) + np.abs(b * x2))
    assert abs(lhs - rhs) <= 1e-12 * max(scale, 1.0)


@given(arrays(np.float64, st.integers(1, 10), elements=finite), finite)
def test_rmse_of_constant_shift(x, c):
    assert math.isclose(rmse(x, x + c), abs(c), rel_tol=1e-9, abs_tol=1e-9)
    assert rmse(x, x + c) == rmse(x + c, x)


@given(st.permutations(list(range(8))), st.integers(0, 7), st.integers(1, 8))
def test_map_at_most_hit(ranked, rel, k):
    assert average_precision_at_k(ranked, rel, k) <= hit_at_k(ranked, rel, k)


@st.composite
def party_instances(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    nv, nc, a = 6, 5, 2
    group = sorted(rng.choice(nv, int(rng.integers(1, 5)), replace=False).tolist())
    edges = [(u, v) for i, u in enumerate(group) for v in group[i + 1 :] if rng.random() < 0.5]
    k = int(rng.integers(1, 3))
    cands = [Msp.build(group, edges, {v: rng.choice(nc, k, replace=False).tolist() for v in group})
             for _ in range(int(rng.integers(1, 6)))]
    W = rng.uniform(-1, 1, (nv, nv))
    np.fill_diagonal(W, 0.0)
    m = make_model(rng.normal(size=(nv, a)), rng.normal(size=(nc, a)), W)
    params = CarsParams(rng.normal(size=2 * a + 1), float(rng.normal()), rng.uniform(0, 1, nv), rng.uniform(0, 1, nv))
    td = EventTensor.from_dense(np.where(rng.random((nv, nc, 3)) < 0.4, rng.integers(1, 4, (nv, nc, 3)), 0.0))
    return m, params, cands, td


@settings(max_examples=60)
@given(party_instances())
def test_least_misery_is_maximin(inst):
    m, params, cands, _ = inst
    r = satisfaction_matrix(params, m, cands)
    mins = [min(r[v, i] for v in p.group) for i, p in enumerate(cands)]
    choice = cands.index(recommend_group_msp(params, m, cands))
    assert all(mins[choice] >= x for x in mins)


@settings(max_examples=60)
@given(party_instances())
def test_bpr_pairs_are_strict_and_one_directional(inst):
    m, params, cands, td = inst
    per = td.dense().sum(axis=2)
    pairs = build_bpr_pairs(td, cands)
    keys = {(v, p, q) for v, p, q in pairs}
    for v, p, q in pairs:
        assert per[v, list(p.channels(v))].sum() > per[v, list(q.channels(v))].sum()
        assert (v, q, p) not in keys
