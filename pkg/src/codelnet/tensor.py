"""
Dense tensors with reverse-mode differentiation.

Every layer primitive of the multi-scale network lives here as a function.
Each forward pass returns a new Tensor and, unless gradients are disabled,
records a closure that pushes the upstream gradient back into its inputs.
Calling `Tensor.backward()` on a result walks that graph in reverse
topological order.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Probability floor inside the log of the negative log likelihood
PROB_FLOOR = 1e-12

IntPair = Union[int, tuple[int, int]]
ArrayLike = Union[np.ndarray, Sequence, float]


class DimensionError(Exception):
    """Tensor shapes do not fit the operation."""

    pass


class NumericError(Exception):
    """Non-finite values where finite ones are required."""

    pass


class LabelError(Exception):
    """Class label outside [0, K)."""

    pass


_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """Whether new operations record their backward closures (per thread)."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in this thread, e.g. for evaluation."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """
    Dense N-dimensional float array with an optional gradient buffer.

    Data is stored row-major as 32-bit floats unless a dtype is given
    (gradient checks run in 64-bit).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: type = np.float32,
    ):
        self.data = _contiguous(data, dtype)
        _check_shape(self.data.shape)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @classmethod
    def _from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], None],
    ) -> "Tensor":
        out = cls.__new__(cls)
        out.data = _contiguous(data)
        out.grad = None
        out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self, grad: Optional[ArrayLike] = None) -> None:
        """
        Accumulate gradients of this tensor into every upstream tensor that
        requires them.

        Args:
            grad: Upstream gradient, same shape as this tensor. May be omitted
                  for single-element tensors (e.g. a loss).
        """
        if grad is None:
            if self.size != 1:
                raise DimensionError(
                    f"backward() without a gradient needs a single-element tensor, "
                    f"got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise DimensionError(
                f"Upstream gradient shape {grad.shape} does not match tensor shape {self.shape}"
            )

        order = _topological_order(self)
        _accumulate(self, grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter:
    """A named, optionally trainable tensor owned by a network."""

    __slots__ = ("tensor", "name", "trainable")

    def __init__(self, tensor: Tensor, name: str, trainable: bool = True):
        self.tensor = tensor
        self.name = name
        self.trainable = trainable
        tensor.requires_grad = trainable

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        value = _contiguous(value, self.tensor.data.dtype)
        if value.shape != self.tensor.shape:
            raise DimensionError(
                f"Parameter {self.name}: cannot assign shape {value.shape} to {self.tensor.shape}"
            )
        self.tensor.data = value

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def _contiguous(data: ArrayLike, dtype: Optional[type] = None) -> np.ndarray:
    """C-contiguous copy or view of `data`; rank 0 stays rank 0."""
    array = np.asarray(data, dtype=dtype)
    if not array.flags.c_contiguous:
        array = np.array(array, order="C")
    return array


def _check_shape(shape: tuple[int, ...]) -> None:
    for axis, size in enumerate(shape):
        if size < 1:
            raise DimensionError(f"Axis {axis} has size {size}; every axis must be >= 1")


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    # never in-place: grad buffers may alias slices of other gradients
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def _pair(value: IntPair, what: str) -> tuple[int, int]:
    pair = (value, value) if isinstance(value, int) else tuple(value)
    if len(pair) != 2 or any(int(v) < 1 for v in pair):
        raise DimensionError(f"{what} must be a positive int pair, got {value!r}")
    return int(pair[0]), int(pair[1])


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def output_size(size: int, window: int, stride: int) -> int:
    """Valid (unpadded) output length: floor((size - window) / stride) + 1."""
    return (size - window) // stride + 1


def conv2d(
    input: Tensor,
    kernel: Tensor,
    bias: Tensor,
    stride: IntPair = 1,
) -> Tensor:
    """
    Valid 2D cross-correlation.

    Args:
        input: [N, C, H, W]
        kernel: [F, C, kh, kw]
        bias: [F]
        stride: (sh, sw) or a single int

    Returns:
        [N, F, Ho, Wo] with Ho = floor((H - kh) / sh) + 1
    """
    x, k, b = input.data, kernel.data, bias.data
    if x.ndim != 4:
        raise DimensionError(f"conv2d: input must be rank 4 [N,C,H,W], got shape {x.shape}")
    if k.ndim != 4:
        raise DimensionError(f"conv2d: kernel must be rank 4 [F,C,kh,kw], got shape {k.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = k.shape
    if kc != c:
        raise DimensionError(
            f"conv2d: input channel axis C={c} does not match kernel depth axis {kc}"
        )
    if b.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {b.shape} does not match filter axis F={f}")
    if kh > h or kw > w:
        raise DimensionError(
            f"conv2d: kernel spatial axes {kh}x{kw} exceed input spatial axes {h}x{w}"
        )
    sh, sw = _pair(stride, "conv2d stride")

    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    ho, wo = windows.shape[2], windows.shape[3]
    out = np.tensordot(windows, k, axes=([1, 4, 5], [1, 2, 3]))  # [N, Ho, Wo, F]
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]

    def backward(grad: np.ndarray) -> None:
        if bias.requires_grad:
            _accumulate(bias, grad.sum(axis=(0, 2, 3)))
        if kernel.requires_grad:
            _accumulate(kernel, np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3])))
        if input.requires_grad:
            dx = np.zeros_like(x)
            if kh * kw <= ho * wo:
                for i in range(kh):
                    for j in range(kw):
                        contrib = np.einsum("nfhw,fc->nchw", grad, k[:, :, i, j])
                        dx[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += contrib
            else:
                for oh in range(ho):
                    for ow in range(wo):
                        contrib = np.einsum("nf,fcij->ncij", grad[:, :, oh, ow], k)
                        dx[:, :, oh * sh:oh * sh + kh, ow * sw:ow * sw + kw] += contrib
            _accumulate(input, dx)

    return Tensor._from_op(out, (input, kernel, bias), backward)


def relu(input: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    x = input.data
    active = x > 0
    out = np.where(active, x, np.zeros((), dtype=x.dtype))

    def backward(grad: np.ndarray) -> None:
        _accumulate(input, grad * active)

    return Tensor._from_op(out, (input,), backward)


def maxpool2d(input: Tensor, window: IntPair, stride: Optional[IntPair] = None) -> Tensor:
    """
    Max pooling over [N, C, H, W].

    The gradient of each output goes entirely to the first maximum of its
    window in row-major scan order.

    Args:
        input: [N, C, H, W]
        window: (ph, pw) or a single int
        stride: (sh, sw); defaults to the window
    """
    x = input.data
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d: input must be rank 4 [N,C,H,W], got shape {x.shape}")
    ph, pw = _pair(window, "maxpool2d window")
    sh, sw = _pair(stride if stride is not None else (ph, pw), "maxpool2d stride")
    n, c, h, w = x.shape
    if ph > h or pw > w:
        raise DimensionError(
            f"maxpool2d: window {ph}x{pw} exceeds input spatial axes {h}x{w}"
        )

    windows = sliding_window_view(x, (ph, pw), axis=(2, 3))[:, :, ::sh, ::sw]
    ho, wo = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, ho, wo, ph * pw)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    def backward(grad: np.ndarray) -> None:
        rows = np.arange(ho)[:, None] * sh + argmax // pw
        cols = np.arange(wo)[None, :] * sw + argmax % pw
        batch_idx = np.arange(n)[:, None, None, None]
        chan_idx = np.arange(c)[None, :, None, None]
        dx = np.zeros_like(x)
        np.add.at(dx, (batch_idx, chan_idx, rows, cols), grad)
        _accumulate(input, dx)

    return Tensor._from_op(out, (input,), backward)


def flatten(input: Tensor) -> Tensor:
    """Reshape [N, ...] to [N, D]."""
    x = input.data
    if x.ndim < 1:
        raise DimensionError("flatten: input needs a batch axis")
    out = x.reshape(x.shape[0], -1)

    def backward(grad: np.ndarray) -> None:
        _accumulate(input, grad.reshape(x.shape))

    return Tensor._from_op(out, (input,), backward)


def dense(input: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """
    Affine map input·weights + bias.

    Args:
        input: [N, D] (higher ranks are flattened to [N, D])
        weights: [D, K]
        bias: [K]
    """
    x = input.data
    wt, b = weights.data, bias.data
    if x.ndim < 2:
        raise DimensionError(f"dense: input must be at least rank 2 [N,D], got shape {x.shape}")
    flat = x.reshape(x.shape[0], -1)
    if wt.ndim != 2 or wt.shape[0] != flat.shape[1]:
        raise DimensionError(
            f"dense: input feature axis D={flat.shape[1]} does not match weights shape {wt.shape}"
        )
    if b.shape != (wt.shape[1],):
        raise DimensionError(f"dense: bias shape {b.shape} does not match output axis K={wt.shape[1]}")
    out = flat @ wt + b

    def backward(grad: np.ndarray) -> None:
        if input.requires_grad:
            _accumulate(input, (grad @ wt.T).reshape(x.shape))
        if weights.requires_grad:
            _accumulate(weights, flat.T @ grad)
        if bias.requires_grad:
            _accumulate(bias, grad.sum(axis=0))

    return Tensor._from_op(out, (input, weights, bias), backward)


def concat(inputs: Sequence[Tensor]) -> Tensor:
    """Concatenate [N, Di] tensors along the feature axis in argument order."""
    if not inputs:
        raise DimensionError("concat: needs at least one input")
    batch = inputs[0].shape[0]
    for i, t in enumerate(inputs):
        if t.ndim != 2:
            raise DimensionError(f"concat: input {i} must be rank 2 [N,D], got shape {t.shape}")
        if t.shape[0] != batch:
            raise DimensionError(
                f"concat: input {i} batch axis N={t.shape[0]} differs from input 0 N={batch}"
            )
    widths = [t.shape[1] for t in inputs]
    out = np.concatenate([t.data for t in inputs], axis=1)

    def backward(grad: np.ndarray) -> None:
        offset = 0
        for t, width in zip(inputs, widths):
            _accumulate(t, grad[:, offset:offset + width])
            offset += width

    return Tensor._from_op(out, tuple(inputs), backward)


def _stable_softmax(logits: np.ndarray) -> np.ndarray:
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError(f"softmax: logits must be [N,K] with K >= 2, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax: logits contain non-finite values")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction."""
    probs = _stable_softmax(logits.data)

    def backward(grad: np.ndarray) -> None:
        inner = (grad * probs).sum(axis=1, keepdims=True)
        _accumulate(logits, probs * (grad - inner))

    return Tensor._from_op(probs, (logits,), backward)


def _check_labels(labels: Union[Sequence[int], np.ndarray], n: int, k: int) -> np.ndarray:
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    if idx.shape[0] != n:
        raise DimensionError(f"Expected {n} labels, got {idx.shape[0]}")
    bad = np.flatnonzero((idx < 0) | (idx >= k))
    if bad.size:
        raise LabelError(f"Label {int(idx[bad[0]])} at position {int(bad[0])} is outside [0, {k})")
    return idx


def nll_loss(probs: Tensor, labels: Union[Sequence[int], np.ndarray]) -> Tensor:
    """
    Mean negative log likelihood of the true classes.

    Args:
        probs: [N, K] row-stochastic probabilities
        labels: N class indices in [0, K)

    Returns:
        Scalar tensor
    """
    p = probs.data
    if p.ndim != 2:
        raise DimensionError(f"nll_loss: probs must be [N,K], got shape {p.shape}")
    n, k = p.shape
    idx = _check_labels(labels, n, k)
    rows = np.arange(n)
    picked = p[rows, idx]
    floored = np.maximum(picked, PROB_FLOOR)
    loss = -np.log(floored).mean()

    def backward(grad: np.ndarray) -> None:
        dp = np.zeros_like(p)
        dp[rows, idx] = np.where(picked > PROB_FLOOR, -grad / (n * floored), 0)
        _accumulate(probs, dp)

    return Tensor._from_op(np.asarray(loss, dtype=p.dtype), (probs,), backward)


def softmax_nll(
    logits: Tensor, labels: Union[Sequence[int], np.ndarray]
) -> tuple[Tensor, np.ndarray]:
    """
    Softmax followed by the negative log likelihood, differentiated jointly.

    The gradient with respect to the logits is (probs - one_hot) / N, which
    stays finite even when a probability underflows.

    Returns:
        (scalar loss tensor, probabilities [N, K])
    """
    probs = _stable_softmax(logits.data)
    n, k = probs.shape
    idx = _check_labels(labels, n, k)
    rows = np.arange(n)
    loss = -np.log(np.maximum(probs[rows, idx], PROB_FLOOR)).mean()

    def backward(grad: np.ndarray) -> None:
        dlogits = probs.copy()
        dlogits[rows, idx] -= 1
        _accumulate(logits, dlogits * (grad / n))

    out = Tensor._from_op(np.asarray(loss, dtype=probs.dtype), (logits,), backward)
    return out, probs
