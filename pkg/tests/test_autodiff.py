import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import milearn.autodiff as ad
from milearn.errors import ConfigError, ContractError, DimensionError, NumericError

from oracles import central_diff, naive_conv2d, naive_matmul, bilinear_sample, rel_err

N_INSTANCES = 20


def _check_op(fn, shapes, rng, positive=False, away_from_zero=False):
    """Compare engine gradients of sum(fn(*xs) * r) with central differences, in 64-bit."""
    with ad.precision(64):
        xs = []
        for s in shapes:
            a = rng.uniform(-1, 1, size=s)
            if positive:
                a = np.abs(a) + 0.1
            if away_from_zero:
                a = np.sign(a) * (np.abs(a) + 0.05)
            xs.append(a)
        ts = [ad.Tensor(a, requires_grad=True) for a in xs]
        out = fn(*ts)
        r = rng.uniform(-1, 1, size=out.shape)
        loss = ad.sum(ad.mul(out, ad.Tensor(r)))
        grads = ad.grad(loss, ts)
        for i, (a, g) in enumerate(zip(xs, grads)):
            def f(v, i=i):
                args = [ad.Tensor(v if j == i else xs[j]) for j in range(len(xs))]
                with ad.no_grad():
                    return float(np.sum(fn(*args).data * r))
            fd = central_diff(f, a, step=1e-3)
            assert rel_err(g.data, fd) < 1e-4, (fn, i)


OPS = {
    "add": (lambda a, b: a + b, [(3, 4), (3, 4)], {}),
    "add_broadcast": (lambda a, b: a + b, [(2, 3, 4), (1, 3, 1)], {}),
    "sub": (lambda a, b: a - b, [(5,), (5,)], {}),
    "mul": (lambda a, b: a * b, [(3, 4), (4,)], {}),
    "div": (lambda a, b: a / b, [(3, 4), (3, 4)], {"positive": True}),
    "scale": (lambda a: ad.scale(a, -2.5), [(6,)], {}),
    "leaky_relu": (lambda a: ad.leaky_relu(a, 0.02), [(4, 5)], {"away_from_zero": True}),
    "tanh": (ad.tanh, [(4, 5)], {}),
    "sigmoid": (ad.sigmoid, [(7,)], {}),
    "softplus": (ad.softplus, [(7,)], {}),
    "square": (ad.square, [(4, 3)], {}),
    "sqrt": (ad.sqrt, [(4, 3)], {"positive": True}),
    "sum_axis": (lambda a: ad.sum(a, axis=1), [(3, 4, 2)], {}),
    "mean": (ad.mean, [(3, 4)], {}),
    "mean_axes": (lambda a: ad.mean(a, axis=(1, 2)), [(2, 3, 4)], {}),
    "l2_norm_sq": (ad.l2_norm_sq, [(5,)], {}),
    "reshape": (lambda a: ad.reshape(a, (6, 2)), [(3, 4)], {}),
    "transpose": (lambda a: ad.transpose(a, (2, 0, 1)), [(2, 3, 4)], {}),
    "matmul": (ad.matmul, [(3, 4), (4, 2)], {}),
    "matmul_batched": (ad.matmul, [(2, 3, 4), (4, 5)], {}),
    "linear": (ad.linear, [(2, 4), (3, 4), (3,)], {}),
    "conv2d": (lambda x, w, b: ad.conv2d(x, w, b, padding=1), [(2, 2, 5, 5), (3, 2, 3, 3), (3,)], {}),
    "conv2d_grouped": (lambda x, w, b: ad.conv2d(x, w, b, groups=2), [(1, 4, 5, 5), (4, 2, 3, 3), (4,)], {}),
    "conv2d_strided": (lambda x, w: ad.conv2d(x, w, stride=2, padding=1), [(1, 2, 6, 6), (2, 2, 3, 3)], {}),
    "upsample": (lambda x: ad.upsample(x, 5, 7), [(1, 2, 3, 4)], {}),
    "downsample": (lambda x: ad.upsample(x, 3, 2), [(1, 1, 6, 5)], {}),
    "pad2d": (lambda x: ad.pad2d(x, 2), [(1, 1, 3, 3)], {}),
    "crop2d": (lambda x: ad.crop2d(x, 1), [(1, 2, 4, 4)], {}),
    "unfold2d": (lambda x: ad.unfold2d(x, 3, 1), [(1, 2, 4, 5)], {}),
    "fold2d": (lambda c: ad.fold2d(c, (4, 4), 3, 1), [(1, 18, 4)], {}),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 2)], {}),
    "getitem": (lambda a: a[1:3, ::2], [(4, 5)], {}),
    "broadcast_to": (lambda a: ad.broadcast_to(a, (3, 2, 4)), [(2, 1)], {}),
    "sum_to": (lambda a: ad.sum_to(a, (1, 4)), [(3, 4)], {}),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradient_matches_finite_differences(name):
    fn, shapes, kw = OPS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(N_INSTANCES):
        _check_op(fn, shapes, rng, **kw)


def test_conv_scalar_kernel():
    x = ad.Tensor(np.ones((1, 1, 3, 3)))
    y = ad.conv2d(x, ad.Tensor([[[[2.0]]]]), ad.Tensor([0.0]))
    np.testing.assert_array_equal(y.data, 2 * np.ones((1, 1, 3, 3)))


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 1, 3, 3)).astype(np.float32)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    y = ad.conv2d(ad.Tensor(x), ad.Tensor(k), ad.Tensor([0.0]), padding=1)
    np.testing.assert_array_equal(y.data, x)


def test_grouped_conv_matches_naive_loop():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 4, 5, 5))
    w = rng.standard_normal((4, 2, 3, 3))
    b = rng.standard_normal(4)
    with ad.precision(64):
        y = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b), groups=2)
    np.testing.assert_allclose(y.data, naive_conv2d(x, w, b, groups=2), rtol=1e-12, atol=1e-12)


def test_grouped_conv_equals_concatenated_dense():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 6, 7, 7)).astype(np.float32)
    w = rng.standard_normal((9, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal(9).astype(np.float32)
    y = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b), groups=3, padding=1).data
    parts = [ad.conv2d(ad.Tensor(x[:, 2 * g:2 * g + 2]), ad.Tensor(w[3 * g:3 * g + 3]),
                       ad.Tensor(b[3 * g:3 * g + 3]), padding=1).data for g in range(3)]
    np.testing.assert_array_equal(y, np.concatenate(parts, axis=1))


def test_strided_conv_matches_naive_loop():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 8, 8))
    w = rng.standard_normal((3, 2, 3, 3))
    with ad.precision(64):
        y = ad.conv2d(ad.Tensor(x), ad.Tensor(w), None, padding=1, stride=2)
    np.testing.assert_allclose(y.data, naive_conv2d(x, w, None, padding=1, stride=2), atol=1e-12)


def test_conv_errors():
    x = ad.Tensor(np.zeros((1, 3, 5, 5)))
    with pytest.raises(ConfigError):
        ad.conv2d(x, ad.Tensor(np.zeros((4, 1, 3, 3))), groups=2)
    with pytest.raises(DimensionError):
        ad.conv2d(x, ad.Tensor(np.zeros((4, 2, 3, 3))))
    with pytest.raises(ConfigError):
        ad.conv2d(x, ad.Tensor(np.zeros((4, 3, 2, 2))))


def test_activations_at_zero_are_exactly_zero():
    for dtype_bits in (32, 64):
        with ad.precision(dtype_bits):
            z = ad.Tensor([0.0, -0.0])
            assert np.all(ad.leaky_relu(z, 0.02).data == 0)
            assert np.all(ad.tanh(z).data == 0)


def test_leaky_relu_negative():
    with ad.precision(64):
        assert ad.leaky_relu(ad.Tensor([-1.0]), 0.02).item() == pytest.approx(-0.02, abs=0)


def test_l2_norm_sq():
    assert ad.l2_norm_sq(ad.Tensor([3.0, 4.0])).item() == 25.0


def test_linear_examples():
    x = ad.Tensor([[1.0, 2.0]])
    y = ad.linear(x, ad.Tensor(np.eye(2)), ad.Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(y.data, x.data)
    y = ad.linear(x, ad.Tensor([[1.0, 1.0], [0.0, 1.0]]), ad.Tensor([1.0, 0.0]))
    np.testing.assert_array_equal(y.data, [[4.0, 2.0]])


def test_linear_matches_naive_matmul():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((4, 5))
    b = rng.standard_normal(4)
    with ad.precision(64):
        y = ad.linear(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b))
    np.testing.assert_allclose(y.data, naive_matmul(x, w.T) + b, rtol=1e-12)


def test_shape_errors():
    with pytest.raises(DimensionError):
        ad.add(ad.Tensor(np.zeros(3)), ad.Tensor(np.zeros(4)))
    with pytest.raises(DimensionError):
        ad.linear(ad.Tensor(np.zeros((1, 3))), ad.Tensor(np.zeros((2, 4))))


def test_upsample_identity_and_constant():
    x = ad.Tensor(np.arange(12.0).reshape(1, 1, 3, 4))
    np.testing.assert_array_equal(ad.upsample(x, 3, 4).data, x.data)
    v = ad.Tensor([[[[0.7]]]])
    np.testing.assert_allclose(ad.upsample(v, 2, 2).data, np.full((1, 1, 2, 2), 0.7, dtype=np.float32))


def test_upsample_ramp_matches_bilinear_table():
    ramp = np.array([[0.0, 1.0], [2.0, 3.0]])
    with ad.precision(64):
        y = ad.upsample(ad.Tensor(ramp.reshape(1, 1, 2, 2)), 4, 4).data[0, 0]
    expected = bilinear_sample(ramp, 4, 4)
    np.testing.assert_allclose(y, expected, atol=1e-12)
    # first row by hand: sample x at -0.25 (clamped 0), 0.25, 0.75, 1.25 (clamped 1)
    np.testing.assert_allclose(y[0], [0.0, 0.25, 0.75, 1.0])


def test_backward_scalar_square():
    x = ad.Tensor([3.0], requires_grad=True)
    ad.backward(ad.sum(ad.square(x)))
    np.testing.assert_array_equal(x.grad.data, [6.0])


def test_backward_requires_scalar():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        ad.backward(ad.square(x))


def test_unused_leaf_gets_exact_zero():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    y = ad.Tensor([5.0], requires_grad=True)
    (gy,) = ad.grad(ad.sum(ad.square(x)), [y])
    assert np.all(gy.data == 0)


def test_conv_mean_gradient_fd():
    rng = np.random.default_rng(5)
    x0 = rng.uniform(-1, 1, (1, 2, 5, 5))
    w0 = rng.uniform(-1, 1, (3, 2, 3, 3))
    with ad.precision(64):
        w = ad.Tensor(w0, requires_grad=True)
        loss = ad.mean(ad.conv2d(ad.Tensor(x0), w))
        (gw,) = ad.grad(loss, [w])

        def f(v):
            return float(np.mean(naive_conv2d(x0, v, None)))

    assert rel_err(gw.data, central_diff(f, w0)) < 1e-4


def test_backward_is_linear():
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal((1, 2, 6, 6))
    w0 = rng.standard_normal((2, 2, 3, 3))
    a, b = 0.7, -1.3

    def losses(w):
        y = ad.conv2d(ad.Tensor(x0), w, padding=1)
        return ad.mean(ad.tanh(y)), ad.l2_norm_sq(y)

    with ad.precision(64):
        w = ad.Tensor(w0, requires_grad=True)
        l1, l2 = losses(w)
        (g1,) = ad.grad(l1, [w])
        w = ad.Tensor(w0, requires_grad=True)
        l1, l2 = losses(w)
        (g2,) = ad.grad(l2, [w])
        w = ad.Tensor(w0, requires_grad=True)
        l1, l2 = losses(w)
        (gc,) = ad.grad(ad.add(ad.scale(l1, a), ad.scale(l2, b)), [w])
    assert rel_err(gc.data, a * g1.data + b * g2.data) < 1e-6


# --------------------------------------------------------------------------
# second order


def test_grad_of_grad_quadratic():
    with ad.precision(64):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        (gx,) = ad.grad(ad.sum(ad.square(x)), [x], create_graph=True)
        penalty = ad.l2_norm_sq(gx)
        (ggx,) = ad.grad(penalty, [x])
    np.testing.assert_allclose(ggx.data, [8.0, 16.0])


def test_grad_of_grad_linear_critic():
    with ad.precision(64):
        a = ad.Tensor([0.5, -1.0, 2.0], requires_grad=True)
        u = ad.Tensor([0.3, 0.1, -0.2], requires_grad=True)
        d = ad.sum(ad.mul(a, u))
        (gu,) = ad.grad(d, [u], create_graph=True)
        (ga,) = ad.grad(ad.l2_norm_sq(gu), [a])
    np.testing.assert_allclose(ga.data, 2 * a.data)


def test_second_order_on_first_order_graph_raises():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    (gx,) = ad.grad(ad.sum(ad.square(x)), [x])
    with pytest.raises(ContractError):
        ad.grad(ad.add(ad.l2_norm_sq(gx), ad.sum(x)), [x])


def _tiny_disc(u, w1, w2, slope=0.2):
    h = ad.leaky_relu(ad.conv2d(u, w1), slope)
    return ad.conv2d(h, w2)


def test_grad_of_grad_tiny_conv_disc_matches_fd():
    rng = np.random.default_rng(7)
    u0 = rng.uniform(-1, 1, (1, 2, 6, 6))
    w1_0 = rng.uniform(-0.5, 0.5, (3, 2, 3, 3))
    w2_0 = rng.uniform(-0.5, 0.5, (1, 3, 3, 3))

    def gnorm(w1v, w2v):
        with ad.precision(64):
            u = ad.Tensor(u0, requires_grad=True)
            s = ad.mean(_tiny_disc(u, ad.Tensor(w1v), ad.Tensor(w2v)))
            (gu,) = ad.grad(s, [u])
        return float(np.sum(gu.data ** 2))

    with ad.precision(64):
        u = ad.Tensor(u0, requires_grad=True)
        w1 = ad.Tensor(w1_0, requires_grad=True)
        w2 = ad.Tensor(w2_0, requires_grad=True)
        s = ad.mean(_tiny_disc(u, w1, w2))
        (gu,) = ad.grad(s, [u], create_graph=True)
        g1, g2 = ad.grad(ad.l2_norm_sq(gu), [w1, w2])
    fd1 = central_diff(lambda v: gnorm(v, w2_0), w1_0)
    fd2 = central_diff(lambda v: gnorm(w1_0, v), w2_0)
    assert rel_err(g1.data, fd1) < 1e-3
    assert rel_err(g2.data, fd2) < 1e-3


def test_non_finite_is_an_error():
    with pytest.raises(NumericError):
        ad.div(ad.Tensor([1.0]), ad.Tensor([0.0]))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(3, 7), st.integers(0, 1))
def test_grouped_conv_is_per_group_dense(groups, per, size, padding):
    rng = np.random.default_rng(groups * 100 + per * 10 + size)
    c_in, c_out = 2 * groups, per * groups
    x = rng.standard_normal((1, c_in, size, size))
    w = rng.standard_normal((c_out, 2, 3, 3))
    with ad.precision(64):
        y = ad.conv2d(ad.Tensor(x), ad.Tensor(w), groups=groups, padding=padding).data
        for g in range(groups):
            yg = ad.conv2d(ad.Tensor(x[:, 2 * g:2 * g + 2]), ad.Tensor(w[per * g:per * (g + 1)]),
                           padding=padding).data
            np.testing.assert_allclose(y[:, per * g:per * (g + 1)], yg, rtol=1e-6, atol=1e-12)
