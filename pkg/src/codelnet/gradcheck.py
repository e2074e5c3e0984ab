"""
Finite-difference verification of backward passes.

Each check evaluates an operation in 64-bit precision, contracts its output
with a random upstream vector, and compares the analytic input gradients
against central differences (f(x+h) - f(x-h)) / 2h. Errors are hybrid:
|analytic - numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR), relative for
large gradients and absolute for small ones.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .network import BranchSpec, NetworkConfig, Stage, build_network
from .tensor import (
    Tensor,
    concat,
    conv2d,
    dense,
    maxpool2d,
    nll_loss,
    no_grad,
    relu,
    softmax,
    softmax_nll,
)

DEFAULT_STEP = 1e-3
DEFAULT_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3

# Below this magnitude the hybrid error is an absolute error
RELATIVE_FLOOR = 1e-2

OpFunction = Callable[[list[Tensor]], Tensor]


@dataclass
class GradcheckReport:
    """
    Outcome of comparing analytic and numeric gradients.

    `max_rel_error` is the hybrid error (see module docstring); it is what
    `tolerance` bounds.
    """

    op: str
    max_rel_error: float
    max_abs_error: float
    tolerance: float
    elements: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def merge(self, other: "GradcheckReport") -> "GradcheckReport":
        return GradcheckReport(
            op=self.op,
            max_rel_error=max(self.max_rel_error, other.max_rel_error),
            max_abs_error=max(self.max_abs_error, other.max_abs_error),
            tolerance=self.tolerance,
            elements=self.elements + other.elements,
        )


def gradcheck(
    fn: OpFunction,
    inputs: Sequence[np.ndarray],
    tolerance: float = DEFAULT_TOLERANCE,
    h: float = DEFAULT_STEP,
    seed: int = 0,
    op: str = "",
) -> GradcheckReport:
    """
    Compare analytic gradients of `fn` with central finite differences.

    Args:
        fn: Maps a list of input tensors to an output tensor
        inputs: Input arrays; promoted to float64
        tolerance: Pass threshold on the max hybrid error
        h: Finite-difference step
        seed: Seed for the random upstream gradient
        op: Name recorded in the report

    Returns:
        GradcheckReport (never raises on mismatch)
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(x, requires_grad=True, dtype=np.float64) for x in arrays]
    out = fn(tensors)

    rng = np.random.default_rng(seed)
    upstream = np.ones_like(out.data) if out.size == 1 else rng.standard_normal(out.shape)
    out.backward(upstream)

    def objective() -> float:
        with no_grad():
            result = fn([Tensor(x, dtype=np.float64) for x in arrays])
        return float(np.sum(result.data * upstream))

    max_rel = 0.0
    max_abs = 0.0
    elements = 0
    for array, tensor in zip(arrays, tensors):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(array)
        flat = array.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = objective()
            flat[i] = original - h
            minus = objective()
            flat[i] = original
            numeric = (plus - minus) / (2 * h)
            diff = abs(flat_grad[i] - numeric)
            scale = max(abs(flat_grad[i]), abs(numeric), RELATIVE_FLOOR)
            max_abs = max(max_abs, diff)
            max_rel = max(max_rel, diff / scale)
            elements += 1

    return GradcheckReport(
        op=op,
        max_rel_error=float(max_rel),
        max_abs_error=float(max_abs),
        tolerance=tolerance,
        elements=elements,
    )


def _distinct(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Values spaced 0.05 apart so no finite-difference step can reorder them."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.05 - n * 0.025).reshape(shape)


def _away_from_zero(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    magnitude = rng.uniform(0.1, 1.0, size=shape)
    return magnitude * rng.choice([-1.0, 1.0], size=shape)


def _case_conv2d(rng: np.random.Generator):
    c = int(rng.integers(1, 3))
    f = int(rng.integers(1, 3))
    h, w = int(rng.integers(4, 7)), int(rng.integers(4, 7))
    kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    inputs = [
        rng.standard_normal((2, c, h, w)),
        rng.standard_normal((f, c, kh, kw)),
        rng.standard_normal(f),
    ]
    return (lambda t: conv2d(t[0], t[1], t[2], stride)), inputs


def _case_relu(rng: np.random.Generator):
    return (lambda t: relu(t[0])), [_away_from_zero(rng, (2, 3, 4))]


def _case_maxpool2d(rng: np.random.Generator):
    window = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    inputs = [_distinct(rng, (2, 2, 5, 5))]
    return (lambda t: maxpool2d(t[0], window, stride)), inputs


def _case_dense(rng: np.random.Generator):
    d, k = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    inputs = [rng.standard_normal((3, d)), rng.standard_normal((d, k)), rng.standard_normal(k)]
    return (lambda t: dense(t[0], t[1], t[2])), inputs


def _case_concat(rng: np.random.Generator):
    widths = [int(w) for w in rng.integers(1, 4, size=int(rng.integers(1, 4)))]
    inputs = [rng.standard_normal((2, w)) for w in widths]
    return (lambda t: concat(t)), inputs


def _case_softmax(rng: np.random.Generator):
    k = int(rng.integers(2, 5))
    return (lambda t: softmax(t[0])), [rng.standard_normal((3, k))]


def _case_nll_loss(rng: np.random.Generator):
    k = int(rng.integers(2, 4))
    raw = rng.uniform(0.5, 1.0, size=(4, k))
    probs = raw / raw.sum(axis=1, keepdims=True)
    labels = rng.integers(0, k, size=4)
    return (lambda t: nll_loss(t[0], labels)), [probs]


def _case_softmax_nll(rng: np.random.Generator):
    k = int(rng.integers(2, 4))
    labels = rng.integers(0, k, size=4)
    return (lambda t: softmax_nll(t[0], labels)[0]), [rng.standard_normal((4, k))]


GRADCHECK_OPS: dict[str, Callable[[np.random.Generator], tuple[OpFunction, list[np.ndarray]]]] = {
    "conv2d": _case_conv2d,
    "relu": _case_relu,
    "maxpool2d": _case_maxpool2d,
    "dense": _case_dense,
    "concat": _case_concat,
    "softmax": _case_softmax,
    "nll_loss": _case_nll_loss,
    "softmax_nll": _case_softmax_nll,
}

NETWORK_OP = "network"


def tiny_network_config(seed: int = 0) -> NetworkConfig:
    """Canvas 16, one branch: the smallest network exercising every layer."""
    return NetworkConfig(
        input_channels=2,
        canvas=16,
        branches=(BranchSpec(stages=(Stage(filters=2, kernel=(5, 5), pool_window=(2, 2)),)),),
        fc_sizes=(4,),
        init_seed=seed,
    )


def check_network_gradients(
    seed: int = 0,
    tolerance: float = NETWORK_TOLERANCE,
    h: float = 1e-6,
) -> GradcheckReport:
    """
    Gradient of the training loss w.r.t. every parameter of a tiny network.

    Parameters are promoted to 64-bit for the comparison and the step is
    1e-6 rather than the layer default, so finite differences do not
    straddle relu kinks or pool switches. This checks the float64
    evaluation only; the float32 training path is compared against it in
    the tests.
    """
    net = build_network(tiny_network_config(seed))
    rng = np.random.default_rng(seed)
    batch = Tensor(rng.standard_normal((3, 2, 16, 16)), dtype=np.float64)
    labels = rng.integers(0, 2, size=3)
    names = [p.name for p in net.parameters]

    def fn(tensors: list[Tensor]) -> Tensor:
        return softmax_nll(net.logits(batch, overrides=dict(zip(names, tensors))), labels)[0]

    # nonzero biases
    inputs = [
        p.data.astype(np.float64) + (0.05 * rng.standard_normal(p.shape) if "bias" in p.name else 0)
        for p in net.parameters
    ]
    return gradcheck(fn, inputs, tolerance=tolerance, h=h, seed=seed, op=NETWORK_OP)


def run_suite(
    ops: Optional[Sequence[str]] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    seed: int = 0,
    instances: int = 10,
    network_tolerance: float = NETWORK_TOLERANCE,
    progress_callback: Optional[Callable[[str, int, int], None]] = None,
) -> list[GradcheckReport]:
    """
    Check each op on `instances` random seeded cases.

    Args:
        ops: Names from GRADCHECK_OPS plus "network"; default all
        tolerance: Threshold for layer ops
        seed: Base seed; instance i uses seed + i
        instances: Cases per op
        network_tolerance: Threshold for the end-to-end network check
        progress_callback: Optional callback(op, done, total)

    Returns:
        One merged report per op, in suite order
    """
    available = list(GRADCHECK_OPS) + [NETWORK_OP]
    selected = list(ops) if ops else available
    unknown = [op for op in selected if op not in available]
    if unknown:
        raise ValueError(f"Unknown gradcheck op(s): {', '.join(unknown)}")

    reports = []
    for op in selected:
        report: Optional[GradcheckReport] = None
        for i in range(instances):
            if op == NETWORK_OP:
                current = check_network_gradients(seed=seed + i, tolerance=network_tolerance)
            else:
                fn, inputs = GRADCHECK_OPS[op](np.random.default_rng([seed, i]))
                current = gradcheck(fn, inputs, tolerance=tolerance, seed=seed + i, op=op)
            report = current if report is None else report.merge(current)
            if progress_callback:
                progress_callback(op, i + 1, instances)
        reports.append(report)
    return reports
