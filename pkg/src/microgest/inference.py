"""Forward-pass evaluation: activations, fast exponentials, layer stepping.

Everything here mirrors what fits on an 8-bit AVR target: float32-friendly
arithmetic, no temporaries larger than a layer, and a multiply-accumulate
(MAC) counter that can be switched on to audit execution cost without
changing any result.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import (
    EmptyLayer,
    LayerwiseKind,
    RangeExceeded,
    RecurrentLayerPresent,
    ShapeMismatch,
)
from .model import (
    Activation,
    LayerKind,
    LayerParams,
    LayerSpec,
    ModelSpec,
    Parameters,
    RnnState,
)

_LN2 = math.log(2.0)

# Shifted softmax arguments below this bound contribute < 1e-34 relative
# mass; clamping keeps the fast exponential inside its legal input range.
_SOFTMAX_SHIFT_FLOOR = -80.0


# --- multiply-accumulate instrumentation -------------------------------------

class MacCounter:
    """Tally of multiply-accumulate operations performed while active."""

    __slots__ = ("count",)

    def __init__(self) -> None:
        self.count = 0


_active_counter: MacCounter | None = None


@contextmanager
def count_macs():
    """Activate MAC counting for the enclosed block.

    Yields a :class:`MacCounter` whose ``count`` holds the number of
    multiply-accumulates performed by forward passes inside the block.
    Counting never changes numeric results.  Counters nest; the innermost
    one wins.
    """
    global _active_counter
    previous = _active_counter
    counter = MacCounter()
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = previous


def record_macs(n: int) -> None:
    """Report ``n`` multiply-accumulates to the active counter, if any."""
    if _active_counter is not None:
        _active_counter.count += n


# --- fast exponentials -------------------------------------------------------

def approx_pow2(x):
    """Fast approximation of ``2**x``.

    Splits ``x`` into integer part ``n`` and remainder ``v`` and evaluates
    ``2**n * (1 + (2/3)*v + (1/3)*v**2)``.  The integer part costs only an
    exponent-field addition on IEEE-754 hardware (``ldexp``), the quadratic
    matches ``2**v`` at both ends of ``[0, 1)``.  Relative error stays below
    0.5 percent.

    Accepts scalars or arrays.  Inputs with ``|x| > 126`` raise
    :class:`RangeExceeded` because the result would leave the float32
    exponent range of the target hardware.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(np.abs(arr) > 126.0):
        raise RangeExceeded("approx_pow2 input must satisfy |x| <= 126")
    n = np.floor(arr)
    v = arr - n
    frac = 1.0 + v * (2.0 / 3.0) + v * v * (1.0 / 3.0)
    out = np.ldexp(frac, n.astype(int))
    if np.ndim(x) == 0:
        return float(out)
    return out


def approx_exp(x):
    """Fast ``exp(x)`` via ``approx_pow2(x / ln 2)``; same range contract."""
    arr = np.asarray(x, dtype=float)
    return approx_pow2(arr / _LN2) if np.ndim(x) else approx_pow2(float(x) / _LN2)


# --- element-wise activations ------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    # clip keeps exp() out of overflow; the result is exact 0/1 there anyway
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def _tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def _hard_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.clip(0.2 * x + 0.5, 0.0, 1.0)


def _softsign(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.abs(x))


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


_ELEMENTWISE = {
    Activation.SIGMOID: _sigmoid,
    Activation.TANH: _tanh,
    Activation.HARD_SIGMOID: _hard_sigmoid,
    Activation.SOFTSIGN: _softsign,
    Activation.RELU: _relu,
}


def eval_activation(kind: Activation, x):
    """Evaluate an element-wise activation on a scalar or array."""
    if kind.is_layerwise:
        raise LayerwiseKind(f"{kind.value} is layer-wise, use eval_layer_activation")
    fn = _ELEMENTWISE[kind]
    out = fn(np.asarray(x, dtype=float))
    if np.ndim(x) == 0:
        return float(out)
    return out


# --- layer-wise activations --------------------------------------------------

def softmax(v: np.ndarray) -> np.ndarray:
    """Exact softmax, shifted by the maximum for numeric range control."""
    v = np.asarray(v, dtype=float)
    e = np.exp(v - np.max(v))
    return e / np.sum(e)


def approx_softmax(v: np.ndarray) -> np.ndarray:
    """Softmax evaluated with the fast exponential.

    The layer maximum is subtracted first so every argument is <= 0, which
    keeps the fast exponential inside its input range regardless of the
    pre-activation scale.  Entries stay within about one percent of the
    exact softmax and still sum to one.
    """
    v = np.asarray(v, dtype=float)
    shifted = np.maximum(v - np.max(v), _SOFTMAX_SHIFT_FLOOR)
    e = approx_exp(shifted)
    return e / np.sum(e)


def max_onehot(v: np.ndarray) -> np.ndarray:
    """One-hot vector marking the argmax; ties go to the lowest index."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[0])
    out[int(np.argmax(v))] = 1.0
    return out


_LAYERWISE_FNS = {
    Activation.SOFTMAX: softmax,
    Activation.APPROX_SOFTMAX: approx_softmax,
    Activation.MAX: max_onehot,
}


def eval_layer_activation(kind: Activation, v: np.ndarray) -> np.ndarray:
    """Evaluate a layer-wise activation on a whole pre-activation vector."""
    if not kind.is_layerwise:
        raise LayerwiseKind(f"{kind.value} is element-wise, use eval_activation")
    v = np.asarray(v, dtype=float)
    if v.shape[0] == 0:
        raise EmptyLayer("layer-wise activation on an empty vector")
    return _LAYERWISE_FNS[kind](v)


def _apply_activation(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind.is_layerwise:
        return eval_layer_activation(kind, z)
    return _ELEMENTWISE[kind](z)


# --- layer stepping ----------------------------------------------------------

def forward_dense(layer: LayerSpec, lp: LayerParams, inputs: np.ndarray) -> np.ndarray:
    """One dense layer: ``activation(W @ inputs + b)``.

    Performs exactly ``neurons * fan_in`` multiply-accumulates.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape != (layer.input_size,):
        raise ShapeMismatch(
            f"dense layer expects {layer.input_size} inputs, got {inputs.shape}"
        )
    z = lp.weights @ inputs + lp.biases
    record_macs(layer.neurons * layer.fan_in)
    return _apply_activation(layer.activation, z)


def step_recurrent(
    layer: LayerSpec, lp: LayerParams, inputs: np.ndarray, prev: np.ndarray
) -> np.ndarray:
    """One recurrent layer step.

    ``prev`` holds the layer's previous-step activations; it is overwritten
    in place with the new activations, which are also returned.  The weight
    matrix sees ``[inputs, prev]`` concatenated, feedback columns last.
    """
    inputs = np.asarray(inputs, dtype=float)
    if layer.kind is not LayerKind.RECURRENT:
        raise ShapeMismatch("step_recurrent needs a recurrent layer")
    if inputs.shape != (layer.input_size,):
        raise ShapeMismatch(
            f"recurrent layer expects {layer.input_size} inputs, got {inputs.shape}"
        )
    if prev.shape != (layer.neurons,):
        raise ShapeMismatch(
            f"feedback state must have {layer.neurons} entries, got {prev.shape}"
        )
    u = np.concatenate([inputs, prev])
    z = lp.weights @ u + lp.biases
    record_macs(layer.neurons * layer.fan_in)
    out = _apply_activation(layer.activation, z)
    prev[:] = out
    return out


def run_ffnn(spec: ModelSpec, params: Parameters, features: np.ndarray) -> np.ndarray:
    """Evaluate a pure feed-forward model on one feature vector."""
    if spec.has_recurrent:
        raise RecurrentLayerPresent("run_ffnn cannot evaluate recurrent layers")
    features = np.asarray(features, dtype=float)
    if features.shape != (spec.features,):
        raise ShapeMismatch(
            f"model expects {spec.features} features, got {features.shape}"
        )
    x = features
    for layer, lp in zip(spec.layers, params.layers):
        x = forward_dense(layer, lp, x)
    return x


def step_rnn(
    spec: ModelSpec, params: Parameters, features: np.ndarray, state: RnnState
) -> np.ndarray:
    """Advance a (possibly recurrent) model by one time step.

    Dense layers behave exactly as in :func:`run_ffnn`; recurrent layers
    consume and update their slot in ``state``.  The state belongs to one
    stream only and must be reset at stream boundaries.
    """
    features = np.asarray(features, dtype=float)
    if features.shape != (spec.features,):
        raise ShapeMismatch(
            f"model expects {spec.features} features, got {features.shape}"
        )
    x = features
    for i, (layer, lp) in enumerate(zip(spec.layers, params.layers)):
        if layer.kind is LayerKind.RECURRENT:
            x = step_recurrent(layer, lp, x, state.layer(i))
        else:
            x = forward_dense(layer, lp, x)
    return x
