import numpy as np
import pytest

from deerct import tensor as T
from deerct.optim import Adam


def _param(values):
    return T.Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_zero_gradient_leaves_parameters_unchanged():
    p = _param([1.0, -2.0, 3.0])
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.zeros(3)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])


def test_first_step_moves_by_lr_against_the_gradient():
    p = _param(np.zeros(4))
    opt = Adam({"p": p}, lr=1e-3)
    p.grad = np.array([0.5, -2.0, 7.0, -1e-3])
    opt.step()
    # bias correction makes m_hat = g, v_hat = g^2
    np.testing.assert_allclose(p.data, -1e-3 * np.sign(p.grad), rtol=1e-4)


def test_matches_closed_form_over_several_steps():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(5, 3))
    p = _param(np.zeros(3))
    opt = Adam({"p": p}, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    m = v = np.zeros(3)
    x = np.zeros(3)
    for t, g in enumerate(grads, start=1):
        p.grad = g
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, x, rtol=1e-12)
    assert opt.t == 5


def test_non_finite_gradient_aborts_with_diagnostics():
    p = _param([1.0, 2.0])
    opt = Adam({"weight": p}, lr=0.1)
    p.grad = np.array([np.nan, 1.0])
    with pytest.raises(FloatingPointError, match="weight: 1 of 2"):
        opt.step()
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_gradient_shape_checked():
    p = _param([1.0, 2.0])
    p.grad = np.zeros(3)
    with pytest.raises(ValueError, match="shape"):
        Adam({"p": p}, lr=0.1).step()


def test_moments_match_parameter_shapes_and_state_round_trips():
    p = _param(np.ones((2, 3)))
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.ones((2, 3))
    opt.step()
    assert opt.m["p"].shape == opt.v["p"].shape == (2, 3)
    other = Adam({"p": _param(np.ones((2, 3)))}, lr=0.1)
    other.load_state(opt.state())
    assert other.t == 1 and np.array_equal(other.m["p"], opt.m["p"])
