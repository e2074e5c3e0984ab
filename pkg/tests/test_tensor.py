"""
Tests for the tensor engine and layer primitives.
"""

import numpy as np
import pytest

from codelnet.tensor import (
    DimensionError,
    LabelError,
    NumericError,
    Parameter,
    Tensor,
    concat,
    conv2d,
    dense,
    flatten,
    is_grad_enabled,
    maxpool2d,
    nll_loss,
    no_grad,
    output_size,
    relu,
    softmax,
    softmax_nll,
)


def grid(rows):
    """[[...]] -> a 1x1xHxW tensor."""
    return Tensor(np.array(rows, dtype=np.float32)[None, None])


class TestTensor:
    """Tests for the Tensor container."""

    def test_defaults_to_float32(self):
        """Test that data is stored as float32."""
        t = Tensor([[1, 2], [3, 4]])
        assert t.data.dtype == np.float32
        assert t.shape == (2, 2)
        assert t.size == 4
        assert t.grad is None

    def test_zero_size_axis_rejected(self):
        """Test that an axis of size zero is a dimension error."""
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 0)))

    def test_backward_needs_scalar_or_grad(self):
        """Test that backward() without a gradient needs one element."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = relu(x)
        with pytest.raises(DimensionError):
            y.backward()

    def test_gradients_accumulate(self):
        """Test that a tensor used twice receives the sum of both paths."""
        x = Tensor([[1.0, 2.0]], requires_grad=True)
        y = concat([x, x])
        y.backward(np.array([[1.0, 2.0, 3.0, 4.0]]))
        np.testing.assert_array_equal(x.grad, [[4.0, 6.0]])

    def test_no_grad_disables_recording(self):
        """Test that ops inside no_grad() record no graph."""
        x = Tensor([1.0, -1.0], requires_grad=True)
        assert is_grad_enabled()
        with no_grad():
            assert not is_grad_enabled()
            y = relu(x)
        assert is_grad_enabled()
        assert not y.requires_grad


class TestParameter:
    """Tests for named parameters."""

    def test_assign_checks_shape(self):
        """Test that assigning a wrong shape is an error."""
        p = Parameter(Tensor(np.zeros((2, 3))), "fc0.weights")
        p.data = np.ones((2, 3))
        assert p.data.dtype == np.float32
        with pytest.raises(DimensionError, match="fc0.weights"):
            p.data = np.ones((3, 2))

    def test_trainable_flag_drives_requires_grad(self):
        """Test that frozen parameters do not require gradients."""
        assert Parameter(Tensor([1.0]), "a").tensor.requires_grad
        assert not Parameter(Tensor([1.0]), "b", trainable=False).tensor.requires_grad


class TestConv2d:
    """Tests for valid cross-correlation."""

    def test_hand_example(self):
        """Test the identity-diagonal 2x2 kernel on a 3x3 ramp."""
        x = grid([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
        k = grid([[1, 0], [0, 1]])
        out = conv2d(x, k, Tensor([0.0]))
        np.testing.assert_array_equal(out.data[0, 0], [[6, 8], [12, 14]])

    def test_paper_scale_output_size(self):
        """Test 205 - 200 + 1 = 6 for the widest kernel."""
        assert output_size(205, 200, 1) == 6
        assert output_size(64, 32, 2) == 17

    def test_zero_kernel_gives_bias(self):
        """Test that a zero kernel yields the broadcast bias."""
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((2, 3, 6, 6)))
        k = Tensor(np.zeros((4, 3, 3, 3)))
        b = Tensor([1.0, -2.0, 0.5, 3.0])
        out = conv2d(x, k, b, stride=2)
        assert out.shape == (2, 4, 2, 2)
        for f in range(4):
            np.testing.assert_array_equal(out.data[:, f], b.data[f])

    def test_channel_mismatch(self):
        """Test that mismatched channel axes are a dimension error."""
        x = Tensor(np.zeros((1, 2, 4, 4)))
        k = Tensor(np.zeros((1, 3, 2, 2)))
        with pytest.raises(DimensionError, match="channel"):
            conv2d(x, k, Tensor([0.0]))

    def test_kernel_larger_than_input(self):
        """Test that a kernel exceeding the input is rejected."""
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 4, 4))), Tensor([0.0]))

    def test_backward_shapes(self):
        """Test that gradients land on input, kernel and bias with their shapes."""
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((2, 2, 7, 7)), requires_grad=True)
        k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        b = Tensor(np.zeros(3), requires_grad=True)
        out = conv2d(x, k, b, stride=(2, 1))
        assert out.shape == (2, 3, 3, 5)
        out.backward(np.ones(out.shape))
        assert x.grad.shape == x.shape
        assert k.grad.shape == k.shape
        np.testing.assert_allclose(b.grad, [30.0, 30.0, 30.0])


class TestRelu:
    """Tests for relu."""

    def test_forward(self):
        """Test negative values clamp to zero."""
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
        np.testing.assert_array_equal(relu(Tensor([-3.0, -0.5])).data, [0, 0])

    def test_subgradient_at_zero(self):
        """Test that the gradient at exactly zero is zero."""
        x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        relu(x).backward(np.ones(3))
        np.testing.assert_array_equal(x.grad, [0, 0, 1])


class TestMaxpool2d:
    """Tests for max pooling."""

    def test_max_of_all(self):
        """Test a window covering the whole input."""
        out = maxpool2d(grid([[1, 2], [3, 4]]), 2, 2)
        np.testing.assert_array_equal(out.data[0, 0], [[4]])

    def test_rectangular_window(self):
        """Test a 1x2 window with stride 1x2."""
        out = maxpool2d(grid([[1, 3, 2, 4]]), (1, 2), (1, 2))
        np.testing.assert_array_equal(out.data[0, 0], [[3, 4]])

    def test_backward_routes_to_argmax(self):
        """Test that the gradient goes to the maximum."""
        x = grid([[1, 2], [3, 4]])
        x.requires_grad = True
        maxpool2d(x, 2).backward(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(x.grad[0, 0], [[0, 0], [0, 1]])

    def test_ties_go_to_first_maximum(self):
        """Test that of equal maxima the first in scan order wins."""
        x = grid([[5, 5], [5, 5]])
        x.requires_grad = True
        maxpool2d(x, 2).backward(np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])

    def test_overlapping_windows_accumulate(self):
        """Test that one input feeding two outputs gets both gradients."""
        x = grid([[1, 9, 1]])
        x.requires_grad = True
        out = maxpool2d(x, (1, 2), (1, 1))
        np.testing.assert_array_equal(out.data[0, 0], [[9, 9]])
        out.backward(np.ones(out.shape))
        np.testing.assert_array_equal(x.grad[0, 0], [[0, 2, 0]])

    def test_window_larger_than_input(self):
        """Test that an oversized window is rejected."""
        with pytest.raises(DimensionError):
            maxpool2d(grid([[1, 2]]), 2)


class TestDenseConcatFlatten:
    """Tests for the fully connected path."""

    def test_dense_identity(self):
        """Test identity weights."""
        out = dense(Tensor([[1.0, 2.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [[1, 2]])

    def test_dense_sum(self):
        """Test a summing column plus bias."""
        out = dense(Tensor([[1.0, 2.0]]), Tensor([[1.0], [1.0]]), Tensor([3.0]))
        np.testing.assert_array_equal(out.data, [[6]])

    def test_dense_zero_weights(self):
        """Test that zero weights give the bias on every row."""
        out = dense(Tensor(np.ones((3, 4))), Tensor(np.zeros((4, 2))), Tensor([0.5, -1.0]))
        np.testing.assert_array_equal(out.data, np.tile([0.5, -1.0], (3, 1)))

    def test_dense_feature_mismatch(self):
        """Test that mismatched feature axes are rejected."""
        with pytest.raises(DimensionError, match="D=2"):
            dense(Tensor([[1.0, 2.0]]), Tensor(np.zeros((3, 1))), Tensor([0.0]))

    def test_concat_and_backward(self):
        """Test concatenation and the slice partition of its gradient."""
        a = Tensor([[1.0]], requires_grad=True)
        b = Tensor([[2.0, 3.0]], requires_grad=True)
        out = concat([a, b])
        np.testing.assert_array_equal(out.data, [[1, 2, 3]])
        out.backward(np.array([[10.0, 20.0, 30.0]]))
        np.testing.assert_array_equal(a.grad, [[10]])
        np.testing.assert_array_equal(b.grad, [[20, 30]])

    def test_concat_single_input(self):
        """Test that one input passes through unchanged."""
        a = Tensor([[1.0, 2.0]])
        np.testing.assert_array_equal(concat([a]).data, a.data)

    def test_concat_batch_mismatch(self):
        """Test that differing batch axes are rejected."""
        with pytest.raises(DimensionError):
            concat([Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 1)))])

    def test_flatten(self):
        """Test [N, C, H, W] -> [N, C*H*W] and its gradient reshape."""
        x = Tensor(np.arange(24.0).reshape(2, 3, 2, 2), requires_grad=True)
        out = flatten(x)
        assert out.shape == (2, 12)
        out.backward(np.ones((2, 12)))
        assert x.grad.shape == (2, 3, 2, 2)


class TestSoftmaxAndLoss:
    """Tests for softmax and the negative log likelihood."""

    def test_softmax_symmetric(self):
        """Test equal logits give equal probabilities."""
        np.testing.assert_allclose(softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_softmax_ratio(self):
        """Test [ln 3, ln 1] -> [0.75, 0.25]."""
        out = softmax(Tensor([[np.log(3.0), 0.0]]))
        np.testing.assert_allclose(out.data, [[0.75, 0.25]], rtol=1e-6)

    def test_softmax_large_logits(self):
        """Test that large logits do not overflow."""
        out = softmax(Tensor([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-7)

    def test_softmax_non_finite(self):
        """Test that non-finite logits are a numeric error."""
        with pytest.raises(NumericError):
            softmax(Tensor([[np.inf, 0.0]]))
        with pytest.raises(NumericError):
            softmax(Tensor([[np.nan, 0.0]]))

    def test_softmax_needs_two_classes(self):
        """Test that a single logit column is rejected."""
        with pytest.raises(DimensionError):
            softmax(Tensor([[1.0]]))

    def test_nll_certain(self):
        """Test that a probability of one costs nothing."""
        assert float(nll_loss(Tensor([[1.0, 0.0]]), [0]).data) == 0.0

    def test_nll_half(self):
        """Test -log 0.5 = ln 2."""
        loss = nll_loss(Tensor([[0.5, 0.5]]), [1])
        assert float(loss.data) == pytest.approx(np.log(2), rel=1e-6)

    def test_nll_batch_mean(self):
        """Test the batch mean of 0 and ln 2."""
        loss = nll_loss(Tensor([[1.0, 0.0], [0.5, 0.5]]), [0, 0])
        assert float(loss.data) == pytest.approx(0.3466, abs=1e-4)

    def test_nll_zero_probability_is_finite(self):
        """Test that a zero probability is floored."""
        loss = nll_loss(Tensor([[0.0, 1.0]]), [0])
        assert np.isfinite(float(loss.data))

    def test_nll_bad_label(self):
        """Test that a label outside [0, K) is rejected."""
        with pytest.raises(LabelError):
            nll_loss(Tensor([[0.5, 0.5]]), [2])
        with pytest.raises(LabelError):
            nll_loss(Tensor([[0.5, 0.5]]), [-1])

    def test_softmax_nll_matches_composition(self):
        """Test the fused loss against softmax followed by nll_loss."""
        logits = np.array([[0.3, -1.2], [2.0, 0.5], [-0.1, 0.1]], dtype=np.float64)
        labels = [1, 0, 1]

        fused_in = Tensor(logits, requires_grad=True, dtype=np.float64)
        fused, probs = softmax_nll(fused_in, labels)
        fused.backward()

        split_in = Tensor(logits, requires_grad=True, dtype=np.float64)
        split = nll_loss(softmax(split_in), labels)
        split.backward()

        assert float(fused.data) == pytest.approx(float(split.data), rel=1e-12)
        np.testing.assert_allclose(fused_in.grad, split_in.grad, rtol=1e-10)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)


class TestScalarLoss:
    """Tests for rank-0 loss tensors."""

    def test_nll_is_rank_zero(self):
        """Test the loss is a scalar, not a 1-element vector."""
        loss = nll_loss(Tensor([[0.5, 0.5]]), [0])
        assert loss.shape == ()
        assert loss.data.item() == pytest.approx(np.log(2), rel=1e-6)

    def test_softmax_nll_is_rank_zero(self):
        """Test the fused loss is a scalar and backpropagates from it."""
        logits = Tensor([[1.0, -1.0], [0.0, 2.0]], requires_grad=True)
        loss, probs = softmax_nll(logits, [0, 1])
        assert loss.shape == ()
        assert probs.shape == (2, 2)
        loss.backward()
        assert logits.grad.shape == (2, 2)

    def test_scalar_tensor_keeps_rank(self):
        """Test a 0-d input stays 0-d."""
        assert Tensor(3.0).shape == ()
        assert Tensor(np.float64(2.0)).ndim == 0

    def test_non_contiguous_input_is_copied(self):
        """Test a transposed view is stored C-contiguous."""
        x = Tensor(np.arange(6.0).reshape(2, 3).T)
        assert x.data.flags.c_contiguous
        np.testing.assert_array_equal(x.data, np.arange(6.0).reshape(2, 3).T)


class TestLayerProperties:
    """Seeded property checks over random inputs."""

    @pytest.mark.parametrize("seed", range(10))
    def test_softmax_rows_sum_to_one(self, seed):
        """Test rows are non-negative and sum to 1 for wide logit ranges."""
        rng = np.random.default_rng(seed)
        logits = rng.normal(scale=10.0 ** rng.integers(-2, 3), size=(rng.integers(1, 8), 2))
        probs = softmax(Tensor(logits)).data
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_maxpool_conserves_gradient_sum(self, seed):
        """Test non-overlapping pooling routes every upstream unit to one input."""
        rng = np.random.default_rng(seed)
        window = int(rng.integers(1, 4))
        size = window * int(rng.integers(1, 5))
        x = Tensor(rng.standard_normal((2, 3, size, size)), requires_grad=True)
        out = maxpool2d(x, window)
        upstream = rng.standard_normal(out.shape)
        out.backward(upstream)
        assert x.grad.sum() == pytest.approx(upstream.sum(), rel=1e-5, abs=1e-4)
        assert np.count_nonzero(x.grad) <= upstream.size

    @pytest.mark.parametrize("seed", range(10))
    def test_concat_split_is_bit_equal(self, seed):
        """Test slicing the concatenation gives back every input exactly."""
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        parts = [Tensor(rng.standard_normal((n, int(rng.integers(1, 6))))) for _ in range(3)]
        out = concat(parts).data
        offset = 0
        for part in parts:
            width = part.shape[1]
            np.testing.assert_array_equal(out[:, offset:offset + width], part.data)
            offset += width
        assert offset == out.shape[1]
