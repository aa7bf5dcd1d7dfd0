import numpy as np
import pytest

from unistformer.core.exceptions import GraphError, NumericError
from unistformer.core.ops import relu, softmax_lastdim
from unistformer.core.tensor import Function, Mode, Tensor, default_dtype, get_default_dtype, set_default_dtype


class TestTensorBasics:
    def test_default_dtype_is_float32(self):
        t = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.dtype == np.float32
        assert t.shape == (2, 2)
        assert t.data.flags["C_CONTIGUOUS"]

    def test_default_dtype_context_restores(self):
        with default_dtype(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert get_default_dtype() == np.float32

    def test_unsupported_dtype_rejected(self):
        with pytest.raises(ValueError):
            set_default_dtype(np.int32)

    def test_item_needs_single_element(self):
        assert Tensor([[2.5]]).item() == 2.5
        with pytest.raises(ValueError):
            Tensor([1.0, 2.0]).item()

    def test_mode_values(self):
        assert Mode("train") is Mode.TRAIN
        assert Mode.EVAL.value == "eval"


class TestBackward:
    def test_sum_of_product(self, float64):
        a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        b = Tensor([4.0, 5.0, 6.0], requires_grad=True)
        (a * b).sum().backward()
        np.testing.assert_array_equal(a.grad, [4.0, 5.0, 6.0])
        np.testing.assert_array_equal(b.grad, [1.0, 2.0, 3.0])

    def test_broadcast_gradients_unbroadcast(self, float64):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.arange(3.0), requires_grad=True)
        (a * b - b).sum().backward()
        np.testing.assert_array_equal(a.grad, np.tile(np.arange(3.0), (2, 1)))
        np.testing.assert_array_equal(b.grad, [0.0, 0.0, 0.0])

    def test_shared_subexpression_accumulates(self, float64):
        x = Tensor([3.0], requires_grad=True)
        y = x * x + x
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_leaf_grads_accumulate_until_zeroed(self, float64):
        x = Tensor([1.0, -1.0], requires_grad=True)
        (x * 2.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [5.0, 5.0])
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_root_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GraphError):
            (x * 2.0).backward()

    def test_second_backward_without_retain_fails(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(GraphError):
            loss.backward()

    def test_retain_graph_allows_second_backward(self, float64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward(retain_graph=True)
        loss.backward()
        np.testing.assert_array_equal(x.grad, [4.0, 8.0])

    def test_loss_without_grad_rejected(self):
        with pytest.raises(GraphError):
            Tensor([1.0, 2.0]).sum().backward()

    def test_reshape_roundtrip_gradient(self, float64):
        x = Tensor(np.arange(6.0), requires_grad=True)
        (x.reshape(2, 3) * Tensor(np.arange(6.0).reshape(2, 3))).sum().backward()
        np.testing.assert_array_equal(x.grad, np.arange(6.0))

    def test_relu_blocks_negative_inputs(self, float64):
        x = Tensor([-1.0, 2.0], requires_grad=True)
        relu(x).sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])


class TestNumericGuard:
    def test_non_finite_output_raises(self):
        class Explode(Function):
            def forward(self, a):
                return a / 0.0

        with np.errstate(divide="ignore"):
            with pytest.raises(NumericError, match="Explode"):
                Explode.apply(Tensor([1.0]))

    def test_softmax_of_large_logits_is_finite(self):
        out = softmax_lastdim(Tensor([[1e4, 0.0, -1e4]], dtype=np.float64))
        np.testing.assert_allclose(out.data, [[1.0, 0.0, 0.0]])
