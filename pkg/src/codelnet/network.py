"""
Multi-scale, multi-branch convolutional network.

A NetworkConfig describes parallel convolutional branches (each a sequence
of conv -> relu -> optional max-pool stages) whose flattened outputs are
concatenated and classified by fully connected layers and a softmax.
"""

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .tensor import (
    DimensionError,
    Parameter,
    Tensor,
    concat,
    conv2d,
    dense,
    flatten,
    maxpool2d,
    no_grad,
    output_size,
    relu,
    softmax,
    softmax_nll,
)

Pair = tuple[int, int]


class NetworkBuildError(Exception):
    """Architecture cannot be instantiated for the configured input."""

    pass


@dataclass(frozen=True)
class Stage:
    """One conv -> relu -> optional max-pool step of a branch."""

    filters: int
    kernel: Pair
    stride: Pair = (1, 1)
    pool_window: Optional[Pair] = None
    pool_stride: Optional[Pair] = None  # defaults to the window

    @property
    def effective_pool_stride(self) -> Optional[Pair]:
        if self.pool_window is None:
            return None
        return self.pool_stride if self.pool_stride is not None else self.pool_window


@dataclass(frozen=True)
class BranchSpec:
    """Ordered stages of one branch."""

    stages: tuple[Stage, ...]


@dataclass(frozen=True)
class NetworkConfig:
    """Declarative description of a multi-scale network."""

    input_channels: int
    canvas: int
    branches: tuple[BranchSpec, ...]
    fc_sizes: tuple[int, ...] = (64,)
    classes: int = 2
    init_seed: int = 0

    def validate(self) -> None:
        """Check the structural invariants (geometry is checked by activation_shapes)."""
        if self.input_channels not in (1, 2):
            raise NetworkBuildError(f"input_channels must be 1 or 2, got {self.input_channels}")
        if self.classes != 2:
            raise NetworkBuildError(f"classes must be 2, got {self.classes}")
        if self.canvas < 1:
            raise NetworkBuildError(f"canvas must be positive, got {self.canvas}")
        if not self.branches:
            raise NetworkBuildError("at least one branch is required")
        for b, branch in enumerate(self.branches):
            if not branch.stages:
                raise NetworkBuildError(f"branch {b} has no stages")
            for s, stage in enumerate(branch.stages):
                if stage.filters < 1:
                    raise NetworkBuildError(f"branch {b} stage {s}: filters must be >= 1")
                for what, pair in (
                    ("kernel", stage.kernel),
                    ("stride", stage.stride),
                    ("pool window", stage.pool_window),
                    ("pool stride", stage.pool_stride),
                ):
                    if pair is not None and (len(pair) != 2 or min(pair) < 1):
                        raise NetworkBuildError(
                            f"branch {b} stage {s}: {what} must be a positive pair, got {pair}"
                        )
        if any(width < 1 for width in self.fc_sizes):
            raise NetworkBuildError(f"fc sizes must be positive, got {list(self.fc_sizes)}")

    def activation_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """
        Walk the architecture and report every layer's per-sample output shape.

        Raises:
            NetworkBuildError: If a stage collapses the spatial size below 1
        """
        self.validate()
        shapes: list[tuple[str, tuple[int, ...]]] = []
        features = 0
        for b, branch in enumerate(self.branches):
            channels, h, w = self.input_channels, self.canvas, self.canvas
            for s, stage in enumerate(branch.stages):
                kh, kw = stage.kernel
                if kh > h or kw > w:
                    raise NetworkBuildError(
                        f"branch {b} stage {s}: kernel {kh}x{kw} does not fit the "
                        f"{h}x{w} input of this stage"
                    )
                channels = stage.filters
                h, w = output_size(h, kh, stage.stride[0]), output_size(w, kw, stage.stride[1])
                shapes.append((f"branch{b}.stage{s}.conv", (channels, h, w)))
                if stage.pool_window is not None:
                    ph, pw = stage.pool_window
                    sh, sw = stage.effective_pool_stride
                    if ph > h or pw > w:
                        raise NetworkBuildError(
                            f"branch {b} stage {s}: pool window {ph}x{pw} does not fit the "
                            f"{h}x{w} convolution output"
                        )
                    h, w = output_size(h, ph, sh), output_size(w, pw, sw)
                    shapes.append((f"branch{b}.stage{s}.pool", (channels, h, w)))
            features += channels * h * w
        shapes.append(("concat", (features,)))
        for i, width in enumerate(self.fc_sizes):
            shapes.append((f"fc{i}", (width,)))
        shapes.append(("output", (self.classes,)))
        return shapes


@dataclass
class Prediction:
    """Predicted class and the probability assigned to it."""

    label: int
    probability: float


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Network:
    """An instantiated NetworkConfig: parameters in deterministic order."""

    def __init__(self, config: NetworkConfig, parameters: Sequence[Parameter]):
        self.config = config
        self.parameters = list(parameters)
        self._by_name = {p.name: p for p in self.parameters}
        if len(self._by_name) != len(self.parameters):
            raise NetworkBuildError("parameter names must be unique")

    def parameter(self, name: str) -> Parameter:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"No parameter named {name!r}") from None

    def num_parameters(self) -> int:
        return sum(p.tensor.size for p in self.parameters)

    def zero_grad(self) -> None:
        for param in self.parameters:
            param.zero_grad()

    def activation_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return self.config.activation_shapes()

    def _check_batch(self, batch: Tensor) -> None:
        if batch.ndim != 4:
            raise DimensionError(f"forward: batch must be [N,C,H,W], got shape {batch.shape}")
        if batch.shape[1] != self.config.input_channels:
            raise DimensionError(
                f"forward: batch channel axis C={batch.shape[1]} does not match the "
                f"network's input_channels={self.config.input_channels}"
            )
        if batch.shape[2:] != (self.config.canvas, self.config.canvas):
            raise DimensionError(
                f"forward: batch spatial axes {batch.shape[2]}x{batch.shape[3]} do not match "
                f"canvas {self.config.canvas}x{self.config.canvas}"
            )

    def logits(self, batch: Tensor, overrides: Optional[Mapping[str, Tensor]] = None) -> Tensor:
        """
        Run every branch and the classifier head up to (not including) softmax.

        Args:
            batch: [N, C, canvas, canvas]
            overrides: Optional tensors to use in place of named parameters
        """
        self._check_batch(batch)

        def get(name: str) -> Tensor:
            if overrides is not None and name in overrides:
                return overrides[name]
            return self._by_name[name].tensor

        outputs = []
        for b, branch in enumerate(self.config.branches):
            x = batch
            for s, stage in enumerate(branch.stages):
                prefix = f"branch{b}.stage{s}"
                x = conv2d(x, get(f"{prefix}.kernel"), get(f"{prefix}.bias"), stage.stride)
                x = relu(x)
                if stage.pool_window is not None:
                    x = maxpool2d(x, stage.pool_window, stage.effective_pool_stride)
            outputs.append(flatten(x))

        x = concat(outputs)
        for i in range(len(self.config.fc_sizes)):
            x = relu(dense(x, get(f"fc{i}.weights"), get(f"fc{i}.bias")))
        return dense(x, get("output.weights"), get("output.bias"))

    def loss(self, batch: Tensor, labels: Sequence[int]) -> tuple[Tensor, np.ndarray]:
        """Mean NLL of `labels` under the network, with the probabilities."""
        return softmax_nll(self.logits(batch), labels)

    def __repr__(self) -> str:
        return (
            f"Network(branches={len(self.config.branches)}, "
            f"parameters={len(self.parameters)}, size={self.num_parameters()})"
        )


def build_network(config: NetworkConfig) -> Network:
    """
    Instantiate a network with Glorot-uniform weights and zero biases.

    Weights are drawn in parameter order from a generator seeded with
    `config.init_seed`, so equal configs give bit-identical networks.

    Raises:
        NetworkBuildError: If the geometry is infeasible; names the stage
    """
    shapes = dict(config.activation_shapes())
    rng = np.random.default_rng(config.init_seed)
    params: list[Parameter] = []

    for b, branch in enumerate(config.branches):
        channels = config.input_channels
        for s, stage in enumerate(branch.stages):
            kh, kw = stage.kernel
            prefix = f"branch{b}.stage{s}"
            kernel = _glorot(
                rng,
                (stage.filters, channels, kh, kw),
                fan_in=channels * kh * kw,
                fan_out=stage.filters * kh * kw,
            )
            params.append(Parameter(Tensor(kernel), f"{prefix}.kernel"))
            params.append(Parameter(Tensor(np.zeros(stage.filters)), f"{prefix}.bias"))
            channels = stage.filters

    width = shapes["concat"][0]
    for i, size in enumerate(config.fc_sizes):
        weights = _glorot(rng, (width, size), fan_in=width, fan_out=size)
        params.append(Parameter(Tensor(weights), f"fc{i}.weights"))
        params.append(Parameter(Tensor(np.zeros(size)), f"fc{i}.bias"))
        width = size

    weights = _glorot(rng, (width, config.classes), fan_in=width, fan_out=config.classes)
    params.append(Parameter(Tensor(weights), "output.weights"))
    params.append(Parameter(Tensor(np.zeros(config.classes)), "output.bias"))

    return Network(config, params)


def _as_batch(batch: Union[Tensor, np.ndarray]) -> Tensor:
    return batch if isinstance(batch, Tensor) else Tensor(batch)


def forward(net: Network, batch: Union[Tensor, np.ndarray], training: bool = False) -> Tensor:
    """
    Class probabilities [N, 2] for a batch.

    With training=False no backward graph is recorded. The flag changes
    nothing else: the architecture has no train-only layers.
    """
    batch = _as_batch(batch)
    if training:
        return softmax(net.logits(batch))
    with no_grad():
        return softmax(net.logits(batch))


def predict(net: Network, batch: Union[Tensor, np.ndarray]) -> list[Prediction]:
    """Argmax class per row, ties resolved to class 0, in input order."""
    probs = forward(net, batch).data
    predictions = []
    for row in probs:
        label = 1 if row[1] > row[0] else 0
        predictions.append(Prediction(label=label, probability=float(row[label])))
    return predictions


def uniform_branches(
    kernels: Sequence[int],
    filters: int,
    pool: Optional[int] = 2,
) -> tuple[BranchSpec, ...]:
    """One single-stage branch per kernel size, all with the same filter count and pooling."""
    window = (pool, pool) if pool else None
    return tuple(
        BranchSpec(stages=(Stage(filters=filters, kernel=(k, k), pool_window=window),))
        for k in kernels
    )


def desk_scale_config(
    input_channels: int = 2,
    canvas: int = 64,
    kernels: Sequence[int] = (32, 16, 8),
    filters: int = 16,
    pool: Optional[int] = 2,
    fc_sizes: Sequence[int] = (64,),
    init_seed: int = 0,
) -> NetworkConfig:
    """Small multi-scale network that trains on a desktop CPU."""
    return NetworkConfig(
        input_channels=input_channels,
        canvas=canvas,
        branches=uniform_branches(kernels, filters, pool),
        fc_sizes=tuple(fc_sizes),
        init_seed=init_seed,
    )


def paper_scale_config(input_channels: int = 2, init_seed: int = 0) -> NetworkConfig:
    """
    Full-size network on a 205x205 canvas.

    The global branch opens with 128 filters of 200x200 at stride 1 (a 6x6
    map); two local branches use smaller, strided kernels.
    """
    pool = (2, 2)
    return NetworkConfig(
        input_channels=input_channels,
        canvas=205,
        branches=(
            BranchSpec(stages=(Stage(128, (200, 200), (1, 1), pool),)),
            BranchSpec(
                stages=(
                    Stage(64, (100, 100), (2, 2), pool),
                    Stage(64, (10, 10), (1, 1), pool),
                )
            ),
            BranchSpec(
                stages=(
                    Stage(32, (25, 25), (4, 4), pool),
                    Stage(32, (5, 5), (1, 1), pool),
                )
            ),
        ),
        fc_sizes=(256,),
        init_seed=init_seed,
    )


PRESETS = {
    "desk": desk_scale_config,
    "paper": paper_scale_config,
}
