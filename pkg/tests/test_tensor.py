import numpy as np
import pytest

from deerct import tensor as T
from deerct.gradcheck import OpSpec, grad_check, operator_suite


def test_relu_values():
    out = T.relu(T.Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0, 0, 2])


def test_leaky_relu_slope():
    out = T.leaky_relu(T.Tensor([-1.0, 2.0]), slope=0.2)
    np.testing.assert_allclose(out.data, [-0.2, 2.0], rtol=1e-7)


def test_concat_channels():
    a = T.Tensor(np.zeros((1, 64, 64, 1)))
    b = T.Tensor(np.ones((1, 64, 64, 1)))
    assert T.concat([a, b], axis=-1).shape == (1, 64, 64, 2)


def test_concat_shape_mismatch_names_operator():
    with pytest.raises(ValueError, match="concat"):
        T.concat([T.Tensor(np.zeros((1, 2, 3))), T.Tensor(np.zeros((1, 2, 4)))], axis=1)


def test_conv_channel_mismatch_is_descriptive():
    with pytest.raises(ValueError, match=r"conv2d: input has 3 channels but weight expects 2"):
        T.conv2d(T.Tensor(np.zeros((1, 3, 8, 8))), T.Tensor(np.zeros((4, 2, 3, 3))))


def test_default_dtype_is_float32_and_f64_is_kept():
    assert T.Tensor([1, 2]).dtype == np.float32
    assert T.Tensor(np.zeros(2)).dtype == np.float64


def test_linear_gradient():
    x = np.array([1.0, -2.0, 3.0])
    w = T.Tensor(np.array([0.5, 0.1, 2.0]), requires_grad=True)
    T.sum(w * T.Tensor(x)).backward()
    np.testing.assert_array_equal(w.grad, x)


def test_mae_subgradient():
    y = np.array([1.0, 0.0, 2.0, -1.0])
    x = T.Tensor(np.array([0.0, 1.0, 2.5, -3.0]), requires_grad=True)
    T.mean(T.abs(T.Tensor(y) - x)).backward()
    np.testing.assert_allclose(x.grad, -np.sign(y - x.data) / 4)


def test_non_scalar_loss_rejected():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        T.backward(x * 2.0)


def test_backward_without_graph_rejected():
    with pytest.raises(ValueError):
        T.backward(T.Tensor(np.ones(())))


def test_non_trainable_never_accumulates():
    a = T.Tensor(np.ones(3))
    b = T.Tensor(np.ones(3), requires_grad=True)
    T.sum(a * b).backward()
    assert a.grad is None
    assert b.grad is not None


def test_graph_reverse_execution_order():
    x = T.Tensor(np.ones(3), requires_grad=True)
    y = T.relu(x * 2.0)
    z = T.sum(y + x)
    g = T.Graph.from_output(z)
    seqs = [n.seq for n in g.nodes]
    assert seqs == sorted(seqs)
    assert [n.name for n in g.nodes] == ["mul", "relu", "add", "sum"]


def test_gradient_accumulates_over_shared_use():
    x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.sum(x * x + x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_no_grad_records_nothing():
    x = T.Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = x * 3.0
    assert y.is_leaf and not y.requires_grad


def test_backward_linearity_in_loss_scale():
    rng = np.random.default_rng(3)
    xd, wd = rng.normal(size=(1, 1, 8, 8)), rng.normal(size=(2, 1, 3, 3))

    def grads(scale):
        w = T.Tensor(wd.copy(), requires_grad=True)
        (T.sum(T.relu(T.conv2d(T.Tensor(xd), w))) * scale).backward()
        return w.grad

    np.testing.assert_allclose(grads(3.5), 3.5 * grads(1.0), rtol=1e-12)


def test_repeat_backward_is_bitwise_identical():
    rng = np.random.default_rng(4)
    xd = rng.normal(size=(2, 2, 12, 12)).astype(np.float32)
    wd = rng.normal(size=(4, 2, 5, 5)).astype(np.float32)

    def run():
        w = T.Tensor(wd.copy(), requires_grad=True)
        x = T.Tensor(xd.copy(), requires_grad=True)
        T.mean(T.abs(T.conv_transpose2d(T.relu(T.conv2d(x, w, padding=2)), T.Tensor(wd))))\
            .backward()
        return w.grad, x.grad

    (a1, b1), (a2, b2) = run(), run()
    assert np.array_equal(a1, a2) and np.array_equal(b1, b2)


def _direct_conv(x, w, stride=1, padding=0):
    b, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((b, f, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("bckl,fckl->bf", patch, w)
    return out


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 2), (2, 1)])
def test_conv2d_matches_direct_loop(stride, padding):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 9, 9))
    w = rng.normal(size=(4, 3, 5, 5)) if stride == 1 else rng.normal(size=(4, 3, 3, 3))
    got = T.conv2d(T.Tensor(x), T.Tensor(w), stride=stride, padding=padding).data
    np.testing.assert_allclose(got, _direct_conv(x, w, stride, padding), rtol=1e-10, atol=1e-10)


def test_conv_transpose_is_adjoint_of_conv():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 3, 10, 10))
    w = rng.normal(size=(2, 3, 5, 5))
    y = rng.normal(size=(1, 2, 6, 6))
    lhs = np.sum(T.conv2d(T.Tensor(x), T.Tensor(w)).data * y)
    rhs = np.sum(x * T.conv_transpose2d(T.Tensor(y), T.Tensor(w)).data)
    assert abs(lhs - rhs) < 1e-10 * abs(lhs)


def test_gradcheck_identity_is_exact():
    assert grad_check(OpSpec("identity", lambda x: x * 1.0, [(6,)]), trials=3, step=2.0 ** -16) == 0.0


def test_gradcheck_conv_5x5_two_filters():
    spec = OpSpec("conv", lambda x, w: T.conv2d(x, w), [(1, 1, 8, 8), (2, 1, 5, 5)])
    assert grad_check(spec, trials=5) < 1e-6


def test_gradcheck_rotate_30_degrees():
    spec = OpSpec("rot", lambda x: T.rotate(x, np.deg2rad(30)), [(8, 8)])
    assert grad_check(spec, trials=5) < 1e-6


def test_gradcheck_catches_a_wrong_vjp():
    def bad(x):
        return T._record("bad_square", x.data ** 2, (x,), lambda g: (g * x.data,))

    assert grad_check(OpSpec("bad", bad, [(4,)]), trials=2) > 0.1


@pytest.mark.parametrize("spec", operator_suite(), ids=lambda s: s.name)
def test_operator_suite_float32(spec):
    assert grad_check(spec, trials=3, dtype=np.float32, step=1e-2, kink_margin=5e-2) < 1e-3


def test_composite_network_gradient():
    rng = np.random.default_rng(5)
    w2 = rng.normal(size=(3, 1, 3, 3))

    def net(x, w1):
        h = T.leaky_relu(T.conv2d(x, w1, padding=1), 0.2)
        h = T.concat([h, x], axis=1)
        return T.mean(T.abs(T.conv_transpose2d(h, T.Tensor(w2, dtype=x.dtype), padding=1) + 3.0))

    spec = OpSpec("composite", net, [(1, 1, 6, 6), (2, 1, 3, 3)])
    assert grad_check(spec, trials=5) < 1e-6
