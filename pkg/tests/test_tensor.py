import numpy as np
import pytest

from marsrec.tensor import (
    DimensionError,
    EventTensor,
    FactorSet,
    frob_sq_diff,
    mode_n_product,
    read_tensor_jsonl,
    stack_lags,
    tucker_reconstruct,
    window_sum,
    write_tensor_jsonl,
)
from oracle import naive_mode_product, naive_tucker


# -- EventTensor ------------------------------------------------------------------


def test_event_tensor_from_entries_drops_zeros_and_sorts():
    t = EventTensor.from_entries((2, 2, 3), {(1, 0, 2): 4.0, (0, 1, 0): 1.5, (0, 0, 0): 0.0})
    assert t.nnz == 2
    assert t.coords.tolist() == [[0, 1, 0], [1, 0, 2]]
    assert t.get(1, 0, 2) == 4.0
    assert t.get(1, 1, 1) == 0.0


def test_event_tensor_rejects_negative_values():
    with pytest.raises(ValueError):
        EventTensor.from_entries((1, 1, 1), {(0, 0, 0): -1.0})


def test_event_tensor_rejects_out_of_range_index():
    with pytest.raises(IndexError):
        EventTensor.from_entries((1, 1, 1), {(0, 0, 1): 1.0})


def test_event_tensor_is_read_only():
    t = EventTensor.from_entries((1, 1, 2), {(0, 0, 1): 1.0})
    with pytest.raises(ValueError):
        t.values[0] = 3.0
    with pytest.raises(ValueError):
        t.dense()[0, 0, 0] = 3.0


def test_event_tensor_dense_round_trip():
    rng = np.random.default_rng(1)
    a = np.where(rng.random((3, 4, 5)) < 0.3, rng.uniform(0.1, 2, (3, 4, 5)), 0.0)
    t = EventTensor.from_dense(a)
    assert np.array_equal(t.dense(), a)
    assert EventTensor.from_dense(t.dense()) == t


def test_slice_slots_keeps_earlier_entries():
    t = EventTensor.from_entries((1, 1, 4), {(0, 0, 0): 1.0, (0, 0, 3): 2.0})
    s = t.slice_slots(2)
    assert s.shape == (1, 1, 2)
    assert s.entries() == {(0, 0, 0): 1.0}


def test_tensor_jsonl_round_trip(tmp_path):
    t = EventTensor.from_entries((2, 3, 4), {(1, 2, 3): 0.25, (0, 0, 1): 7.0})
    path = tmp_path / "t.jsonl"
    write_tensor_jsonl(t, path)
    assert read_tensor_jsonl(path) == t
    header = path.read_text().splitlines()[0]
    assert '"n_viewers": 2' in header


def test_tensor_jsonl_missing_header(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"v": 0, "c": 0, "t": 0, "x": 1.0}\n')
    with pytest.raises(ValueError):
        read_tensor_jsonl(path)


# -- mode-n products ---------------------------------------------------------------


def test_mode_product_scalar_case():
    out = mode_n_product(np.full((1, 1, 1), 2.0), np.array([[3.0]]), 1)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 6.0


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_mode_product_identity(mode):
    t = np.random.default_rng(mode).normal(size=(2, 3, 4))
    out = mode_n_product(t, np.eye(t.shape[mode - 1]), mode)
    assert np.array_equal(out, t)


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_mode_product_matches_loop_oracle(mode):
    rng = np.random.default_rng(10 + mode)
    core = rng.normal(size=(2, 2, 2))
    m = rng.normal(size=(2, 2))
    assert np.allclose(mode_n_product(core, m, mode), naive_mode_product(core, m, mode), rtol=1e-12)


def test_mode_product_changes_only_its_mode():
    t = np.ones((2, 3, 4))
    assert mode_n_product(t, np.ones((5, 3)), 2).shape == (2, 5, 4)


def test_mode_product_dimension_mismatch():
    with pytest.raises(DimensionError):
        mode_n_product(np.ones((2, 3, 4)), np.ones((2, 2)), 3)
    with pytest.raises(DimensionError):
        mode_n_product(np.ones((2, 2, 2)), np.ones((2, 2)), 4)


# -- Tucker reconstruction -----------------------------------------------------------


def test_tucker_zero_core():
    rng = np.random.default_rng(0)
    out = tucker_reconstruct(np.zeros((2, 2, 2)), rng.normal(size=(3, 2)), rng.normal(size=(4, 2)), rng.normal(size=(5, 2)))
    assert np.array_equal(out, np.zeros((3, 4, 5)))


def test_tucker_rank_one_constant():
    out = tucker_reconstruct(np.full((1, 1, 1), 2.5), np.ones((3, 1)), np.ones((2, 1)), np.ones((4, 1)))
    assert np.array_equal(out, np.full((3, 2, 4), 2.5))


def test_tucker_matches_triple_sum_oracle():
    rng = np.random.default_rng(3)
    core = rng.normal(size=(2, 2, 2))
    V, C, T = rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), rng.normal(size=(5, 2))
    expected = naive_tucker(core, V, C, T)
    got = tucker_reconstruct(core, V, C, T)
    assert np.max(np.abs(got - expected)) <= 1e-12 * np.max(np.abs(expected))


def test_tucker_equals_successive_mode_products_in_any_order():
    rng = np.random.default_rng(4)
    core = rng.normal(size=(2, 2, 2))
    V, C, T = rng.normal(size=(4, 2)), rng.normal(size=(3, 2)), rng.normal(size=(5, 2))
    a = mode_n_product(mode_n_product(mode_n_product(core, V, 1), C, 2), T, 3)
    b = mode_n_product(mode_n_product(mode_n_product(core, T, 3), V, 1), C, 2)
    assert np.allclose(tucker_reconstruct(core, V, C, T), a, rtol=1e-13)
    assert np.allclose(a, b, rtol=1e-13)


def test_tucker_linear_in_core():
    rng = np.random.default_rng(5)
    o1, o2 = rng.normal(size=(2, 2, 2)), rng.normal(size=(2, 2, 2))
    V, C, T = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    lhs = tucker_reconstruct(2.0 * o1 - 0.5 * o2, V, C, T)
    rhs = 2.0 * tucker_reconstruct(o1, V, C, T) - 0.5 * tucker_reconstruct(o2, V, C, T)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


def test_tucker_dimension_mismatch():
    with pytest.raises(DimensionError):
        tucker_reconstruct(np.zeros((2, 2, 2)), np.zeros((3, 3)), np.zeros((3, 2)), np.zeros((3, 2)))


# -- FactorSet ----------------------------------------------------------------------


def test_factor_set_validates_shapes_and_finiteness():
    z = np.zeros
    f = FactorSet(z((3, 2)), z((4, 2)), z((5, 2)), z((2, 2, 2)), z((2, 2, 2)))
    assert f.alpha == 2 and f.dims == (3, 4, 5)
    with pytest.raises(DimensionError):
        FactorSet(z((3, 2)), z((4, 3)), z((5, 2)), z((2, 2, 2)), z((2, 2, 2)))
    bad = z((3, 2))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        FactorSet(bad, z((4, 2)), z((5, 2)), z((2, 2, 2)), z((2, 2, 2)))


# -- Frobenius ----------------------------------------------------------------------


def test_frob_equal_is_zero():
    a = np.random.default_rng(0).normal(size=(2, 3, 4))
    assert frob_sq_diff(a, a.copy()) == 0.0


def test_frob_counts_cells():
    assert frob_sq_diff(np.zeros((2, 2, 2)), np.ones((2, 2, 2))) == 8.0


def test_frob_matches_flat_distance():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(3, 3, 3)), rng.normal(size=(3, 3, 3))
    flat = sum((x - y) ** 2 for x, y in zip(a.ravel().tolist(), b.ravel().tolist()))
    assert frob_sq_diff(a, b) == pytest.approx(flat, rel=1e-12)


def test_frob_accepts_event_tensor():
    t = EventTensor.from_entries((1, 1, 2), {(0, 0, 0): 3.0})
    assert frob_sq_diff(t, np.zeros((1, 1, 2))) == 9.0


def test_frob_shape_mismatch():
    with pytest.raises(DimensionError):
        frob_sq_diff(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


# -- window helpers ------------------------------------------------------------------


def test_window_sum_truncates_at_slot_zero():
    x = np.arange(1.0, 7.0)  # slots 0..5 hold 1..6
    out = window_sum(x, 2)
    assert out.tolist() == [1.0, 3.0, 6.0, 9.0, 12.0, 15.0]


def test_stack_lags_shifts_by_delta():
    d = np.zeros((1, 1, 4))
    d[0, 0, 1] = 5.0
    lags = stack_lags(d, 2)
    assert lags.shape == (2, 1, 1, 4)
    assert lags[0, 0, 0].tolist() == [0.0, 0.0, 5.0, 0.0]
    assert lags[1, 0, 0].tolist() == [0.0, 0.0, 0.0, 5.0]
