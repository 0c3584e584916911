import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vitslim import tensor as tm
from vitslim.conversion import (HARD, SOFT, build_weight_matrix, sigmoid_weight, sigmoid_weight_tensor,
                                soft_layer_betas, step_weight)
from vitslim.tensor import Tensor


def test_step_weight_boundary():
    assert step_weight(5, 5) == 1
    assert step_weight(5, 6) == 0
    T = 12
    assert all(step_weight(T, t) == 1 for t in range(1, T + 1))


def test_sigmoid_midpoint_and_value():
    for U in (0.1, 1.5, 40.0):
        assert sigmoid_weight(5, 5, U) == 0.5
    assert sigmoid_weight(5, 3, 1.5) == pytest.approx(1 / (1 + np.exp(-3)), abs=1e-15)
    assert sigmoid_weight(5, 3, 1.5) == pytest.approx(0.95257, abs=1e-5)


@given(st.floats(-20, 20), st.floats(0, 20), st.floats(0.01, 50))
def test_sigmoid_antisymmetry(tau, d, U):
    assert sigmoid_weight(tau, tau - d, U) + sigmoid_weight(tau, tau + d, U) == pytest.approx(1.0, abs=1e-12)


def test_flipped_sign_form_is_reversed():
    # alive layers (t < tau) get a weight near 0 in the printed form
    assert sigmoid_weight(8, 2, 1.5, paper_literal=True) < 0.01
    assert sigmoid_weight(8, 2, 1.5) > 0.99


def test_hard_matrix_example():
    wm = build_weight_matrix([2, 9], 3, mode=HARD)
    np.testing.assert_array_equal(wm.beta, [[1, 1, 1], [1, 1, 0], [1, 1, 1]])
    np.testing.assert_array_equal(wm.layer(3), [1, 0, 1])


def test_soft_matrix_close_to_hard_for_large_u(rng):
    tau = rng.uniform(0, 12, size=40)
    hard = build_weight_matrix(tau, 12, mode=HARD).beta
    soft = build_weight_matrix(tau, 12, U=50, mode=SOFT).beta
    t = np.arange(1, 13)
    far = np.abs(t[None, :] - tau[:, None]) >= 0.2
    assert np.abs(soft[1:] - hard[1:])[far].max() < 1e-3


@pytest.mark.parametrize("mode", [HARD, SOFT])
def test_cls_row_all_ones(mode, rng):
    wm = build_weight_matrix(rng.uniform(0, 6, size=5), 6, mode=mode, paper_literal=True)
    assert (wm.beta[0] == 1).all()
    assert ((wm.beta >= 0) & (wm.beta <= 1)).all()


def test_soft_rows_strictly_decreasing(rng):
    beta = build_weight_matrix(rng.uniform(0, 6, size=10), 6, U=1.5, mode=SOFT).beta
    assert (np.diff(beta[1:], axis=1) < 0).all()


def test_bad_mode():
    with pytest.raises(ValueError):
        build_weight_matrix([1.0], 2, mode="fuzzy")


def test_convergence_to_step_is_monotone_in_u(rng):
    tau = rng.uniform(1, 11, size=50)
    t = np.linspace(1, 12, 221)
    far = np.abs(t[None, :] - tau[:, None]) >= 0.25
    hard = step_weight(tau[:, None], t[None, :])
    sups = [np.abs(sigmoid_weight(tau[:, None], t[None, :], U) - hard)[far].max() for U in (1, 2, 5, 10, 50)]
    assert all(b < a for a, b in zip(sups, sups[1:]))


def test_derivative_at_midpoint():
    U, tau = 1.5, 4.0
    x = Tensor(np.array([tau]), requires_grad=True)
    with tm.Tape() as tape:
        out = tm.tsum(sigmoid_weight_tensor(x, tau, U))
    tm.backward(tape, out)
    h = 1e-5
    fd = (sigmoid_weight(tau + h, tau, U) - sigmoid_weight(tau - h, tau, U)) / (2 * h)
    assert x.grad[0] == pytest.approx(U / 4, abs=1e-12)
    assert fd == pytest.approx(U / 4, abs=1e-8)


def ordering_violations(tau_i, tau_j, U, t_grid, paper_literal=False):
    """Grid points where the weights order opposite to the lives."""
    bi = sigmoid_weight(tau_i, t_grid, U, paper_literal)
    bj = sigmoid_weight(tau_j, t_grid, U, paper_literal)
    if tau_i > tau_j:
        return int((bi < bj).sum())
    if tau_i < tau_j:
        return int((bi > bj).sum())
    return int((bi != bj).sum())


@given(st.floats(0, 12), st.floats(0, 12), st.floats(0.05, 50))
def test_weight_order_follows_life_order(tau_i, tau_j, U):
    assert ordering_violations(tau_i, tau_j, U, np.linspace(1, 12, 100)) == 0


def test_flipped_sign_breaks_ordering():
    assert ordering_violations(8.0, 3.0, 1.5, np.linspace(1, 12, 100), paper_literal=True) > 0


def test_soft_layer_betas_shape_and_cls(rng):
    tau = Tensor(rng.uniform(0, 6, size=(3, 16)))
    betas = soft_layer_betas(tau, range(1, 7), 1.5)
    assert sorted(betas) == [1, 2, 3, 4, 5, 6]
    for t, b in betas.items():
        assert b.shape == (3, 17)
        assert (b.data[:, 0] == 1).all()
        np.testing.assert_allclose(b.data[:, 1:], sigmoid_weight(tau.data, t, 1.5), rtol=1e-12)
