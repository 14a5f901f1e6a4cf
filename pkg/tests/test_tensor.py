import numpy as np
import pytest

from srmnet.errors import NonFiniteGradient, NonScalarLoss, ShapeMismatch
from srmnet.tensor import Tensor, finite_diff_check, no_grad, sqrt


def t4(values, requires_grad=False, dtype=np.float32):
    arr = np.asarray(values, dtype=dtype)
    return Tensor(arr.reshape(1, 1, *arr.shape[-2:]) if arr.ndim == 2 else arr,
                  requires_grad=requires_grad, dtype=dtype)


class TestElementwise:
    def test_additive_identity(self):
        a = t4([[1.0, 2.0], [3.0, 4.0]])
        z = t4([[0.0, 0.0], [0.0, 0.0]])
        assert np.array_equal((a + z).data, a.data)

    def test_channel_broadcast_mul(self):
        x = Tensor(np.ones((1, 2, 2, 2), dtype=np.float32))
        w = Tensor(np.array([0.3, 0.7], dtype=np.float32).reshape(1, 2, 1, 1))
        out = (x * w).data
        assert np.allclose(out[0, 0], 0.3) and np.allclose(out[0, 1], 0.7)

    def test_batched_channel_broadcast(self):
        x = Tensor(np.ones((3, 2, 2, 2), dtype=np.float32), requires_grad=True)
        w = Tensor(np.arange(6, dtype=np.float32).reshape(3, 2, 1, 1), requires_grad=True)
        out = x * w
        assert out.shape == x.shape
        out.sum().backward()
        assert np.allclose(w.grad, 4.0)  # each weight multiplies 2x2 ones

    def test_mul_backward_product_rule(self):
        a = Tensor.scalar(2.0)
        b = Tensor.scalar(5.0)
        a.requires_grad = b.requires_grad = True
        (a * b).sum().backward()
        assert a.grad.item() == 5.0
        assert b.grad.item() == 2.0

    def test_sub_and_scalars(self):
        a = t4([[4.0, 6.0], [8.0, 10.0]])
        b = t4([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal((a - b).data.ravel(), [3, 4, 5, 6])
        assert np.array_equal((a * 0.5).data.ravel(), [2, 3, 4, 5])
        assert np.array_equal((a + 1.0).data.ravel(), [5, 7, 9, 11])
        assert np.array_equal((-a).data, -a.data)

    def test_shape_mismatch_rejected(self):
        a = Tensor(np.ones((1, 2, 3, 3), dtype=np.float32))
        b = Tensor(np.ones((1, 2, 2, 2), dtype=np.float32))
        with pytest.raises(ShapeMismatch):
            a + b
        # a full tensor is not broadcastable onto a descriptor
        w = Tensor(np.ones((1, 2, 1, 1), dtype=np.float32))
        with pytest.raises(ShapeMismatch):
            w * a

    def test_non_4d_rejected(self):
        with pytest.raises(ShapeMismatch):
            Tensor(np.ones((3, 3), dtype=np.float32))


class TestReduce:
    def test_mean_all_axes(self):
        x = t4([[1.0, 2.0], [3.0, 4.0]])
        assert x.mean().item() == 2.5

    def test_sum_spatial(self):
        x = Tensor(np.ones((1, 3, 4, 4), dtype=np.float32))
        s = x.sum(axes=(2, 3))
        assert s.shape == (1, 3, 1, 1)
        assert np.allclose(s.data, 16.0)

    def test_mean_gradient_uniform(self):
        x = Tensor(np.ones((1, 1, 1, 4), dtype=np.float32), requires_grad=True)
        x.mean().backward()
        assert np.allclose(x.grad, 0.25)

    def test_mean_equals_sum_over_n_bitwise(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.random((2, 3, 5, 7)), dtype=np.float64)
        for axes in [None, (2, 3), (0,), (1, 2)]:
            n = np.prod([x.shape[i] for i in (axes or (0, 1, 2, 3))])
            assert np.array_equal(x.mean(axes).data, x.sum(axes).data / n)


class TestBackward:
    def test_linear_loss_gradient(self):
        x = Tensor(np.arange(4, dtype=np.float32).reshape(1, 1, 1, 4), requires_grad=True)
        x.mean().backward()
        assert np.array_equal(x.grad, np.full((1, 1, 1, 4), 0.25, dtype=np.float32))

    def test_fanout_accumulates(self):
        x = Tensor.scalar(3.0)
        x.requires_grad = True
        (x + x).sum().backward()
        assert x.grad.item() == 2.0

    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_fanout_k_times(self, k):
        x = Tensor.scalar(1.5)
        x.requires_grad = True
        acc = x
        for _ in range(k - 1):
            acc = acc + x
        acc.sum().backward()
        assert x.grad.item() == float(k)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32), requires_grad=True)
        with pytest.raises(NonScalarLoss):
            (x * 2.0).backward()

    def test_disconnected_leaf_is_silent(self):
        x = Tensor.scalar(1.0)
        y = Tensor.scalar(2.0)
        x.requires_grad = y.requires_grad = True
        (x * 3.0).sum().backward()
        assert x.grad is not None
        assert y.grad is None  # untouched; semantically zero

    def test_each_node_backward_runs_once(self):
        x = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32), requires_grad=True)
        y = x * 2.0
        z = y + y  # diamond fan-out
        loss = (z * y).mean()
        nodes = [y, z, loss]
        counts = [0] * len(nodes)
        for i, node in enumerate(nodes):
            orig = node._backward

            def wrapped(i=i, orig=orig):
                counts[i] += 1
                orig()

            node._backward = wrapped
        loss.backward()
        assert counts == [1, 1, 1]
        # value check: f = mean((2x + 2x) * 2x) = mean(8 x^2): df/dx = 16x/4
        assert np.allclose(x.grad, 4.0)

    def test_no_grad_suppresses_recording(self):
        x = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32), requires_grad=True)
        with no_grad():
            y = (x * 2.0).sum()
        assert y._backward is None and not y.requires_grad

    def test_replay_determinism(self):
        def run():
            rng = np.random.default_rng(7)
            a = Tensor(rng.random((2, 3, 4, 4), dtype=np.float32), requires_grad=True)
            b = Tensor(rng.random((2, 3, 4, 4), dtype=np.float32))
            return ((a * b + a).mean()).item()

        assert run() == run()

    def test_debug_checks_reject_non_finite(self):
        from srmnet.tensor import set_debug_checks
        x = Tensor(np.full((1, 1, 1, 1), np.float32(3e38)))
        set_debug_checks(True)
        try:
            with np.errstate(over="ignore"):
                with pytest.raises(NonFiniteGradient):
                    x * 10.0  # overflows float32 to inf
        finally:
            set_debug_checks(False)
        with np.errstate(over="ignore"):
            x * 10.0  # permitted when the debug guard is off


class TestFiniteDiff:
    def test_quadratic(self):
        x = Tensor(np.full((1, 1, 1, 1), 3.0), requires_grad=True, dtype=np.float64)
        rep = finite_diff_check(lambda: (x * x).sum(), [("x", x)])
        assert rep.passed and rep.max_rel_err < 1e-8
        assert abs(rep.coordinates[0].analytic - 6.0) < 1e-12

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_composites_match_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.random((2, 3, 4, 4)), requires_grad=True, dtype=np.float64)
        w = Tensor(rng.random((1, 3, 1, 1)), requires_grad=True, dtype=np.float64)
        c = Tensor(rng.random((2, 3, 4, 4)), dtype=np.float64)

        def loss():
            mixed = (a * w + c) * a - c * 0.5
            return sqrt((mixed * mixed).sum(axes=(2, 3)).mean() + 1e-6)

        rep = finite_diff_check(loss, [("a", a), ("w", w)], seed=seed)
        assert rep.passed, rep.worst
        assert rep.max_rel_err < 1e-3

    def test_sqrt_gradient(self):
        x = Tensor(np.full((1, 1, 1, 1), 4.0), requires_grad=True, dtype=np.float64)
        rep = finite_diff_check(lambda: sqrt(x).sum(), [("x", x)])
        assert rep.passed
        assert abs(rep.coordinates[0].analytic - 0.25) < 1e-10

    def test_rejects_float32_params(self):
        x = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32), requires_grad=True)
        with pytest.raises(ValueError):
            finite_diff_check(lambda: (x * x).sum(), [("x", x)])

    def test_non_finite_gradient_raises(self):
        x = Tensor(np.full((1, 1, 1, 1), -1.0), requires_grad=True, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            with pytest.raises(NonFiniteGradient):
                finite_diff_check(lambda: sqrt(x).sum(), [("x", x)])
