"""Network architecture descriptions and parameter containers.

A model is an architecture (an input feature count plus a stack of layer
descriptions) together with one weight matrix and one bias vector per layer.
Dense layers read only the previous layer's outputs.  Recurrent layers
additionally read their own previous-step activations, so their weight
matrices carry extra feedback columns: external input columns first,
feedback columns last.

Weight matrices are stored row-major with shape ``(neurons, fan_in)``;
row ``i`` holds the incoming weights of neuron ``i``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    IllegalActivationPlacement,
    InvalidParams,
    NonFiniteParameter,
    ShapeMismatch,
)


class Activation(Enum):
    """Activation functions a layer can use.

    ``SOFTMAX``, ``APPROX_SOFTMAX`` and ``MAX`` are layer-wise: they are
    computed over the whole pre-activation vector at once.  The rest are
    element-wise.
    """

    SIGMOID = "sigmoid"
    TANH = "tanh"
    HARD_SIGMOID = "hardsigmoid"
    SOFTSIGN = "softsign"
    RELU = "relu"
    SOFTMAX = "softmax"
    APPROX_SOFTMAX = "approxsoftmax"
    MAX = "max"

    @property
    def is_layerwise(self) -> bool:
        return self in _LAYERWISE


_LAYERWISE = frozenset(
    {Activation.SOFTMAX, Activation.APPROX_SOFTMAX, Activation.MAX}
)


class LayerKind(Enum):
    DENSE = "dense"
    RECURRENT = "recurrent"


@dataclass(frozen=True)
class LayerSpec:
    """Description of one layer: kind, input width, neuron count, activation."""

    kind: LayerKind
    input_size: int
    neurons: int
    activation: Activation

    @property
    def fan_in(self) -> int:
        """Inputs per neuron.  Recurrent layers append their own feedback."""
        if self.kind is LayerKind.RECURRENT:
            return self.input_size + self.neurons
        return self.input_size


@dataclass(frozen=True)
class ModelSpec:
    """Architecture: feature count plus an ordered stack of layers."""

    features: int
    layers: tuple[LayerSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def output_size(self) -> int:
        return self.layers[-1].neurons

    @property
    def has_recurrent(self) -> bool:
        return any(l.kind is LayerKind.RECURRENT for l in self.layers)


def chain(features: int, layer_defs: Iterable[tuple[LayerKind, int, Activation]]) -> ModelSpec:
    """Build a ModelSpec from ``(kind, neurons, activation)`` triples.

    Input sizes are filled in automatically so consecutive layers chain.
    """
    layers = []
    prev = features
    for kind, neurons, activation in layer_defs:
        layers.append(LayerSpec(kind, prev, neurons, activation))
        prev = neurons
    spec = ModelSpec(features, tuple(layers))
    check_spec(spec)
    return spec


def check_spec(spec: ModelSpec) -> None:
    """Validate architecture structure.

    Raises ShapeMismatch for broken chaining or empty models, and
    IllegalActivationPlacement for a MAX activation on a recurrent layer
    (the one-hot output would be fed back and freeze the layer state).
    """
    if spec.features < 1:
        raise ShapeMismatch(f"feature count must be >= 1, got {spec.features}")
    if not spec.layers:
        raise ShapeMismatch("a model needs at least one layer")
    prev = spec.features
    for i, layer in enumerate(spec.layers):
        if layer.neurons < 1:
            raise ShapeMismatch(f"layer {i}: neuron count must be >= 1")
        if layer.input_size != prev:
            raise ShapeMismatch(
                f"layer {i}: input_size {layer.input_size} does not match "
                f"preceding width {prev}"
            )
        if layer.kind is LayerKind.RECURRENT and layer.activation is Activation.MAX:
            raise IllegalActivationPlacement(
                f"layer {i}: MAX cannot be used on a recurrent layer"
            )
        prev = layer.neurons


@dataclass
class LayerParams:
    """Weights ``(neurons, fan_in)`` and biases ``(neurons,)`` of one layer."""

    weights: np.ndarray
    biases: np.ndarray

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.biases.copy())


@dataclass
class Parameters:
    """Trainable state of a model: one LayerParams per layer."""

    layers: list[LayerParams]

    def copy(self) -> "Parameters":
        return Parameters([lp.copy() for lp in self.layers])


def zero_params(spec: ModelSpec) -> Parameters:
    """All-zero parameters with the shapes the architecture demands."""
    return Parameters(
        [
            LayerParams(np.zeros((l.neurons, l.fan_in)), np.zeros(l.neurons))
            for l in spec.layers
        ]
    )


def validate(spec: ModelSpec, params: Parameters) -> None:
    """Check that parameters fit the architecture and are finite."""
    check_spec(spec)
    if len(params.layers) != len(spec.layers):
        raise ShapeMismatch(
            f"expected {len(spec.layers)} parameter layers, got {len(params.layers)}"
        )
    for i, (layer, lp) in enumerate(zip(spec.layers, params.layers)):
        want = (layer.neurons, layer.fan_in)
        if lp.weights.shape != want:
            raise ShapeMismatch(
                f"layer {i}: weight shape {lp.weights.shape}, expected {want}"
            )
        if lp.biases.shape != (layer.neurons,):
            raise ShapeMismatch(
                f"layer {i}: bias shape {lp.biases.shape}, expected ({layer.neurons},)"
            )
        if not (np.all(np.isfinite(lp.weights)) and np.all(np.isfinite(lp.biases))):
            raise NonFiniteParameter(f"layer {i}: non-finite weight or bias")


class RnnState:
    """Previous-step activations of every recurrent layer.

    One state belongs to exactly one stream; create a fresh state (or call
    :meth:`reset`) at every stream start.  Single writer, no sharing.
    """

    def __init__(self, spec: ModelSpec) -> None:
        self._prev = {
            i: np.zeros(layer.neurons)
            for i, layer in enumerate(spec.layers)
            if layer.kind is LayerKind.RECURRENT
        }

    def layer(self, index: int) -> np.ndarray:
        return self._prev[index]

    @property
    def layer_indices(self) -> Sequence[int]:
        return sorted(self._prev)

    def reset(self) -> None:
        """Zero all feedback activations (stream boundary)."""
        for vec in self._prev.values():
            vec[:] = 0.0


# --- architecture strings ----------------------------------------------------

_LAYER_TOKEN = re.compile(r"^(r?)(\d+)([a-z]*)$")

_ACT_BY_NAME = {act.value: act for act in Activation}


def parse_arch(text: str) -> ModelSpec:
    """Parse an architecture string such as ``180-8relu-5softmax``.

    Grammar: ``FEATURES-LAYER[-LAYER...]`` where each layer token is
    ``[r]NEURONS[ACTIVATION]``.  A leading ``r`` marks the layer recurrent.
    When the activation is omitted, hidden layers default to relu and the
    output layer to softmax.  Example with a recurrent output layer:
    ``12-9relu-9relu-r17softmax``.
    """
    tokens = text.strip().lower().split("-")
    if len(tokens) < 2:
        raise InvalidParams(f"architecture {text!r} needs features and one layer")
    try:
        features = int(tokens[0])
    except ValueError:
        raise InvalidParams(f"bad feature count {tokens[0]!r} in {text!r}") from None
    layer_defs = []
    for pos, token in enumerate(tokens[1:]):
        m = _LAYER_TOKEN.match(token)
        if not m:
            raise InvalidParams(f"bad layer token {token!r} in {text!r}")
        kind = LayerKind.RECURRENT if m.group(1) else LayerKind.DENSE
        neurons = int(m.group(2))
        name = m.group(3)
        if not name:
            name = "softmax" if pos == len(tokens) - 2 else "relu"
        if name not in _ACT_BY_NAME:
            raise InvalidParams(f"unknown activation {name!r} in {text!r}")
        layer_defs.append((kind, neurons, _ACT_BY_NAME[name]))
    return chain(features, layer_defs)


def format_arch(spec: ModelSpec) -> str:
    """Inverse of :func:`parse_arch`, always spelling activations out."""
    parts = [str(spec.features)]
    for layer in spec.layers:
        prefix = "r" if layer.kind is LayerKind.RECURRENT else ""
        parts.append(f"{prefix}{layer.neurons}{layer.activation.value}")
    return "-".join(parts)
