"""Shared test fixtures and independent oracles.

The oracles here deliberately avoid the library's own execution paths:
forward passes are re-derived with explicit Python loops and gradients
with central finite differences, so a test comparing the two exercises
two independent routes to the same number.
"""

from __future__ import annotations

import numpy as np
import pytest

from microgest.model import (
    Activation,
    LayerKind,
    ModelSpec,
    Parameters,
    chain,
)
from microgest.training import init_params


# --- brute-force forward pass ------------------------------------------------

def loop_matvec(weights, inputs, biases):
    """Dot products via explicit Python loops; no numpy matmul involved."""
    rows = len(biases)
    cols = len(inputs)
    out = []
    for i in range(rows):
        acc = float(biases[i])
        for j in range(cols):
            acc += float(weights[i][j]) * float(inputs[j])
        out.append(acc)
    return np.array(out)


def oracle_activation(kind: Activation, z: np.ndarray) -> np.ndarray:
    """Textbook activation formulas, written independently of the library."""
    z = np.asarray(z, dtype=float)
    if kind is Activation.SIGMOID:
        return 1.0 / (1.0 + np.exp(-z))
    if kind is Activation.TANH:
        return np.tanh(z)
    if kind is Activation.HARD_SIGMOID:
        return np.minimum(1.0, np.maximum(0.0, 0.2 * z + 0.5))
    if kind is Activation.SOFTSIGN:
        return z / (1.0 + np.abs(z))
    if kind is Activation.RELU:
        return np.where(z > 0.0, z, 0.0)
    if kind is Activation.SOFTMAX:
        e = np.exp(z - z.max())
        return e / e.sum()
    if kind is Activation.MAX:
        out = np.zeros_like(z)
        out[int(np.argmax(z))] = 1.0
        return out
    raise AssertionError(f"oracle has no rule for {kind}")


def oracle_forward(spec: ModelSpec, params: Parameters, features, states=None):
    """Loop-based forward pass; ``states`` maps layer index to feedback."""
    x = np.asarray(features, dtype=float)
    for i, (layer, lp) in enumerate(zip(spec.layers, params.layers)):
        if layer.kind is LayerKind.RECURRENT:
            u = np.concatenate([x, states[i]])
        else:
            u = x
        z = loop_matvec(lp.weights, u, lp.biases)
        x = oracle_activation(layer.activation, z)
        if layer.kind is LayerKind.RECURRENT:
            states[i] = x.copy()
    return x


# --- finite differences ------------------------------------------------------

def numeric_grad(loss_fn, arrays, eps=1e-6):
    """Central-difference gradients of ``loss_fn()`` wrt each array in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=float)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = loss_fn()
            flat[i] = keep - eps
            lo = loss_fn()
            flat[i] = keep
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-8):
    """Worst elementwise relative deviation between two gradient stacks."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


# --- random model construction -----------------------------------------------

def random_spec(rng, features=None, allow_recurrent=True, max_layers=3):
    """A small random architecture, always ending in softmax."""
    features = features or int(rng.integers(1, 8))
    n_layers = int(rng.integers(1, max_layers + 1))
    acts = [
        Activation.SIGMOID,
        Activation.TANH,
        Activation.HARD_SIGMOID,
        Activation.SOFTSIGN,
        Activation.RELU,
    ]
    defs = []
    for i in range(n_layers):
        neurons = int(rng.integers(1, 8))
        recurrent = allow_recurrent and rng.random() < 0.4
        kind = LayerKind.RECURRENT if recurrent else LayerKind.DENSE
        if i == n_layers - 1:
            act = Activation.SOFTMAX
        else:
            act = acts[int(rng.integers(0, len(acts)))]
        defs.append((kind, neurons, act))
    return chain(features, defs)


def random_model(rng, **kwargs):
    spec = random_spec(rng, **kwargs)
    params = init_params(spec, int(rng.integers(0, 2**31)))
    return spec, params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
