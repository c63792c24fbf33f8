"""Small MLPs for the generator and the two discriminators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .autodiff import Node, ShapeError, Tape, relu, sigmoid, softplus

Activation = Literal["tanh", "relu"]
OutputActivation = Literal["identity", "sigmoid", "softplus"]

_HIDDEN = {"tanh": np.tanh, "relu": relu}
_OUTPUT = {"identity": lambda x: x, "sigmoid": sigmoid, "softplus": softplus}


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    hidden_activation: Activation = "relu"
    output_activation: OutputActivation = "identity"
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("an MLP needs input, output and at least one hidden layer")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.hidden_activation not in _HIDDEN:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in _OUTPUT:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def d_in(self) -> int:
        return self.layer_widths[0]

    @property
    def d_out(self) -> int:
        return self.layer_widths[-1]


def generator_spec(noise_dim=256, hidden=(128, 128), activation="relu", seed=0) -> MlpSpec:
    return MlpSpec((noise_dim, *hidden, 2), activation, "identity", seed)


def discriminator_spec(hidden=(128, 128), activation="relu", seed=1, head="sigmoid") -> MlpSpec:
    return MlpSpec((2, *hidden, 1), activation, head, seed)


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        widths = self.spec.layer_widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ShapeError("parameter list length does not match the layer widths")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[l + 1], widths[l]) or b.shape != (widths[l + 1],):
                raise ShapeError(f"layer {l}: got W{w.shape}, b{b.shape} for widths {widths}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l}: non-finite parameters")

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list, ordered W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: list[np.ndarray]) -> "MlpParams":
        return MlpParams(self.spec, list(arrays[0::2]), list(arrays[1::2]))

    def names(self, prefix: str) -> list[str]:
        out = []
        for l in range(len(self.weights)):
            out += [f"{prefix}.W{l}", f"{prefix}.b{l}"]
        return out

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])


def mlp_init(spec: MlpSpec) -> MlpParams:
    """He-style uniform fan-in init from a Philox stream; biases start at zero."""
    rng = np.random.Generator(np.random.Philox(int(spec.seed)))
    weights, biases = [], []
    widths = spec.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases)


def mlp_apply(params: MlpParams, batch: np.ndarray) -> np.ndarray:
    """Forward pass without recording; same arithmetic as ``mlp_forward``."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.spec.d_in:
        raise ShapeError(f"batch shape {batch.shape} does not match input width {params.spec.d_in}")
    h = batch
    act = _HIDDEN[params.spec.hidden_activation]
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        h = act(h) if l < last else _OUTPUT[params.spec.output_activation](h)
    return h


def mlp_forward(params: MlpParams, batch, tape: Tape, prefix: str | None = None) -> Node:
    """Record the forward pass on ``tape``.

    With ``prefix`` the weights become named leaves ``{prefix}.W0`` etc. so
    ``tape.backward()`` returns their gradients; without it they are constants.
    ``batch`` may be an array or a node (e.g. generator output feeding a
    discriminator).
    """
    if not isinstance(batch, Node):
        batch = tape.constant(batch)
    if batch.value is not None and (batch.value.ndim != 2 or batch.value.shape[1] != params.spec.d_in):
        raise ShapeError(f"batch shape {batch.value.shape} does not match input width {params.spec.d_in}")
    spec = params.spec
    h = batch
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        if prefix is None:
            wn, bn = tape.constant(w.T), tape.constant(b)
        else:
            # W is stored (out, in); the tape sees its transpose so rows stay samples
            wn = tape.transpose(tape.leaf(f"{prefix}.W{l}", w))
            bn = tape.leaf(f"{prefix}.b{l}", b)
        h = tape.add_bias(tape.matmul(h, wn), bn)
        if l < last:
            h = getattr(tape, spec.hidden_activation)(h)
        elif spec.output_activation != "identity":
            h = getattr(tape, spec.output_activation)(h)
    return h
