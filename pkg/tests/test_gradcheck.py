"""
Tests for finite-difference gradient verification.
"""

import numpy as np
import pytest

from codelnet.gradcheck import (
    GRADCHECK_OPS,
    NETWORK_OP,
    RELATIVE_FLOOR,
    GradcheckReport,
    check_network_gradients,
    gradcheck,
    run_suite,
    tiny_network_config,
)
from codelnet.network import build_network
from codelnet.tensor import Tensor, conv2d, dense, relu, softmax_nll


class TestGradcheck:
    """Tests for single-op checks."""

    def test_relu(self):
        """Test relu away from its kink."""
        report = gradcheck(lambda t: relu(t[0]), [np.array([-1.0, 2.0])], op="relu")
        assert report.passed
        assert report.max_rel_error < 1e-6
        assert report.elements == 2

    def test_conv2d_small(self):
        """Test a 2x2 kernel on a random 1x1x4x4 input."""
        rng = np.random.default_rng(3)
        inputs = [rng.standard_normal((1, 1, 4, 4)), rng.standard_normal((1, 1, 2, 2)), [0.1]]
        report = gradcheck(lambda t: conv2d(t[0], t[1], t[2]), inputs)
        assert report.max_rel_error < 1e-4

    def test_dense_zero_weights(self):
        """Test that a linear map matches its finite differences closely."""
        rng = np.random.default_rng(4)
        inputs = [rng.standard_normal((2, 3)), np.zeros((3, 2)), np.zeros(2)]
        report = gradcheck(lambda t: dense(t[0], t[1], t[2]), inputs)
        assert report.max_abs_error < 1e-8

    def test_detects_wrong_backward(self):
        """Test that a backward pass dropping its gradient fails the check."""

        def broken(t):
            return Tensor._from_op(t[0].data * 3.0, (t[0],), lambda grad: None)

        report = gradcheck(broken, [np.array([1.0, -2.0, 0.5])], op="broken")
        assert not report.passed
        assert report.op == "broken"

    def test_inputs_not_modified(self):
        """Test that perturbations are undone."""
        x = np.array([[0.3, -0.7]])
        before = x.copy()
        gradcheck(lambda t: relu(t[0]), [x])
        np.testing.assert_array_equal(x, before)


class TestReport:
    """Tests for GradcheckReport."""

    def test_merge_keeps_worst(self):
        """Test that merging keeps the maximum errors and sums elements."""
        a = GradcheckReport("dense", 1e-6, 1e-7, 1e-4, elements=10)
        b = GradcheckReport("dense", 5e-5, 1e-9, 1e-4, elements=4)
        merged = a.merge(b)
        assert merged.max_rel_error == 5e-5
        assert merged.max_abs_error == 1e-7
        assert merged.elements == 14
        assert merged.passed

    def test_threshold_is_strict(self):
        """Test that an error equal to the tolerance fails."""
        assert not GradcheckReport("x", 1e-4, 0.0, 1e-4).passed


class TestSuite:
    """Tests for the seeded op suite."""

    def test_every_layer_op_passes(self):
        """Test every layer op on a few seeded instances."""
        reports = run_suite(list(GRADCHECK_OPS), seed=11, instances=5)
        assert [r.op for r in reports] == list(GRADCHECK_OPS)
        failed = [(r.op, r.max_rel_error) for r in reports if not r.passed]
        assert failed == []

    def test_progress_callback(self):
        """Test the callback receives (op, done, total)."""
        calls = []
        run_suite(["relu"], instances=3, progress_callback=lambda *a: calls.append(a))
        assert calls == [("relu", 1, 3), ("relu", 2, 3), ("relu", 3, 3)]

    def test_unknown_op(self):
        """Test that unknown op names are rejected."""
        with pytest.raises(ValueError, match="bogus"):
            run_suite(["bogus"])

    def test_seeded_cases_are_reproducible(self):
        """Test that equal seeds give equal reports."""
        first = run_suite(["conv2d"], seed=5, instances=2)
        second = run_suite(["conv2d"], seed=5, instances=2)
        assert first == second

    def test_impossible_tolerance_fails(self):
        """Test that a zero-width tolerance reports failure."""
        reports = run_suite(["softmax"], tolerance=1e-300, instances=1)
        assert not reports[0].passed


class TestNetworkGradients:
    """Tests for the end-to-end network check."""

    def test_tiny_network_builds(self):
        """Test the fixture network exercises conv, pool and dense layers."""
        net = build_network(tiny_network_config())
        names = [p.name for p in net.parameters]
        assert names[:2] == ["branch0.stage0.kernel", "branch0.stage0.bias"]
        assert names[-2:] == ["output.weights", "output.bias"]

    def test_network_gradients(self):
        """Test the loss gradient w.r.t. every parameter."""
        report = check_network_gradients(seed=0)
        assert report.op == NETWORK_OP
        assert report.passed, report
        assert report.elements == build_network(tiny_network_config()).num_parameters()

    def test_float32_gradients_match_float64(self):
        """Test the float32 training gradients against the float64 evaluation the check verifies."""
        net = build_network(tiny_network_config(seed=2))
        rng = np.random.default_rng(2)
        images = rng.standard_normal((3, 2, 16, 16)).astype(np.float32)
        labels = [0, 1, 1]

        net.zero_grad()
        loss, _ = net.loss(Tensor(images), labels)
        loss.backward()
        assert loss.data.dtype == np.float32

        reference = {
            p.name: Tensor(p.data.astype(np.float64), requires_grad=True, dtype=np.float64)
            for p in net.parameters
        }
        batch = Tensor(images.astype(np.float64), dtype=np.float64)
        softmax_nll(net.logits(batch, overrides=reference), labels)[0].backward()

        for p in net.parameters:
            expected = reference[p.name].grad
            assert p.grad.dtype == np.float32
            error = np.abs(p.grad - expected) / np.maximum(np.abs(expected), RELATIVE_FLOOR)
            assert error.max() < 1e-3, p.name


class TestHybridError:
    """Tests for the hybrid relative/absolute error."""

    def test_small_gradients_compared_absolutely(self):
        """Test a tiny analytic/numeric mismatch below the floor is scaled by the floor."""

        def dropped(t):
            return Tensor._from_op(t[0].data * 1e-4, (t[0],), lambda grad: None)

        report = gradcheck(dropped, [np.array([1.0])])
        assert report.max_abs_error == pytest.approx(1e-4, rel=1e-6)
        assert report.max_rel_error == pytest.approx(1e-4 / RELATIVE_FLOOR, rel=1e-6)
