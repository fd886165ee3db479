"""Desk-side training: explicit backpropagation, SGD and Adam, BPTT.

Gradients are derived and coded by hand so that the same arithmetic could be
ported to a bare-metal trainer; no autodiff framework is involved.  The loss
everywhere is categorical cross-entropy over a softmax output layer.  Models
whose output layer is declared MAX or APPROX_SOFTMAX train against exact
softmax: those two kinds are execution-time substitutes and share its
gradient.

Element-wise activations with kinks (relu, hard sigmoid) use subgradient
zero at the kink.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DivergenceDetected, InvalidParams, ShapeMismatch
from .model import (
    Activation,
    LayerKind,
    LayerParams,
    ModelSpec,
    Parameters,
    validate,
)

_LOG_CLIP = 1e-12


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer choice and schedule for one training run."""

    optimizer: str = "adam"
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidParams(f"unknown optimizer {self.optimizer!r}")
        # zero is allowed and leaves parameters untouched; negative is not
        if self.learning_rate < 0.0:
            raise InvalidParams("learning_rate must be >= 0")
        # zero epochs is a valid no-op run (used to materialize an init)
        if self.epochs < 0:
            raise InvalidParams("epochs must be >= 0")
        if self.batch_size < 1:
            raise InvalidParams("batch_size must be >= 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidParams("betas must lie in [0, 1)")
        if self.eps <= 0.0:
            raise InvalidParams("eps must be > 0")


def init_params(spec: ModelSpec, seed: int) -> Parameters:
    """Random initial parameters.

    Weights are drawn from a zero-mean normal whose variance is ``2/fan_in``
    for relu layers and ``1/fan_in`` otherwise, keeping activation scale
    roughly constant through depth.  Biases start at zero.  Deterministic
    per seed.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for layer in spec.layers:
        var = 2.0 / layer.fan_in if layer.activation is Activation.RELU else 1.0 / layer.fan_in
        weights = rng.normal(0.0, np.sqrt(var), (layer.neurons, layer.fan_in))
        layers.append(LayerParams(weights, np.zeros(layer.neurons)))
    return Parameters(layers)


# --- training-time activations -----------------------------------------------

def _train_kind(kind: Activation) -> Activation:
    if kind in (Activation.MAX, Activation.APPROX_SOFTMAX):
        return Activation.SOFTMAX
    return kind


def _row_softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def _train_activation(kind: Activation, z: np.ndarray) -> np.ndarray:
    kind = _train_kind(kind)
    if kind is Activation.SOFTMAX:
        return _row_softmax(z)
    if kind is Activation.SIGMOID:
        return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))
    if kind is Activation.TANH:
        return np.tanh(z)
    if kind is Activation.HARD_SIGMOID:
        return np.clip(0.2 * z + 0.5, 0.0, 1.0)
    if kind is Activation.SOFTSIGN:
        return z / (1.0 + np.abs(z))
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    raise InvalidParams(f"activation {kind} is not trainable")


def _act_grad(kind: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Element-wise derivative, using subgradient zero at kinks."""
    kind = _train_kind(kind)
    if kind is Activation.SIGMOID:
        return a * (1.0 - a)
    if kind is Activation.TANH:
        return 1.0 - a * a
    if kind is Activation.HARD_SIGMOID:
        return 0.2 * ((z > -2.5) & (z < 2.5))
    if kind is Activation.SOFTSIGN:
        d = 1.0 + np.abs(z)
        return 1.0 / (d * d)
    if kind is Activation.RELU:
        return (z > 0.0).astype(float)
    raise InvalidParams(f"activation {kind} has no element-wise derivative")


def _softmax_backprop(a: np.ndarray, da: np.ndarray) -> np.ndarray:
    """Pull a gradient through softmax: ``J_softmax^T @ da`` row-wise."""
    inner = np.sum(da * a, axis=-1, keepdims=True)
    return a * (da - inner)


def _check_output_trainable(spec: ModelSpec) -> None:
    if _train_kind(spec.layers[-1].activation) is not Activation.SOFTMAX:
        raise InvalidParams(
            "training needs a softmax-family output layer "
            f"(got {spec.layers[-1].activation.value})"
        )


# --- optimizers --------------------------------------------------------------

class _Sgd:
    def __init__(self, arrays: list[np.ndarray], cfg: TrainingConfig) -> None:
        self.lr = cfg.learning_rate

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(arrays, grads):
            p -= self.lr * g


class _Adam:
    def __init__(self, arrays: list[np.ndarray], cfg: TrainingConfig) -> None:
        self.lr = cfg.learning_rate
        self.b1, self.b2, self.eps = cfg.beta1, cfg.beta2, cfg.eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in arrays]
        self.v = [np.zeros_like(p) for p in arrays]

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _make_optimizer(arrays: list[np.ndarray], cfg: TrainingConfig):
    return _Adam(arrays, cfg) if cfg.optimizer == "adam" else _Sgd(arrays, cfg)


# --- feed-forward training ---------------------------------------------------

def _check_ffnn_data(spec: ModelSpec, X: np.ndarray, y: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != spec.features:
        raise ShapeMismatch(
            f"features must be (N, {spec.features}), got {X.shape}"
        )
    if y.shape != (X.shape[0],):
        raise ShapeMismatch("labels must be one integer per example")
    if X.shape[0] == 0:
        raise InvalidParams("empty training set")
    if np.min(y) < 0 or np.max(y) >= spec.output_size:
        raise InvalidParams("labels must lie in 0..output_size-1")


def _forward_batch(spec: ModelSpec, Ws, bs, X):
    acts = [X]
    zs = []
    for i, layer in enumerate(spec.layers):
        z = acts[-1] @ Ws[i].T + bs[i]
        zs.append(z)
        acts.append(_train_activation(layer.activation, z))
    return zs, acts


def _batch_loss(P: np.ndarray, y: np.ndarray) -> float:
    picked = np.clip(P[np.arange(P.shape[0]), y], _LOG_CLIP, None)
    return float(-np.mean(np.log(picked)))


def _backward_batch(spec: ModelSpec, Ws, zs, acts, y):
    B = y.shape[0]
    P = acts[-1]
    delta = P.copy()
    delta[np.arange(B), y] -= 1.0
    delta /= B
    gW = [None] * len(Ws)
    gb = [None] * len(Ws)
    for i in range(len(Ws) - 1, -1, -1):
        gW[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            dA = delta @ Ws[i]
            kind = _train_kind(spec.layers[i - 1].activation)
            if kind is Activation.SOFTMAX:
                delta = _softmax_backprop(acts[i], dA)
            else:
                delta = dA * _act_grad(kind, zs[i - 1], acts[i])
    return gW, gb


def gradients(spec: ModelSpec, params: Parameters, X, y):
    """Mean-batch cross-entropy gradients ``(per-layer dW, per-layer db)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    validate(spec, params)
    _check_output_trainable(spec)
    _check_ffnn_data(spec, X, y)
    Ws = [lp.weights for lp in params.layers]
    bs = [lp.biases for lp in params.layers]
    zs, acts = _forward_batch(spec, Ws, bs, X)
    return _backward_batch(spec, Ws, zs, acts, y)


def evaluate_loss(spec: ModelSpec, params: Parameters, X, y) -> float:
    """Mean cross-entropy of the training-time forward pass."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    _check_ffnn_data(spec, X, y)
    Ws = [lp.weights for lp in params.layers]
    bs = [lp.biases for lp in params.layers]
    _, acts = _forward_batch(spec, Ws, bs, X)
    return _batch_loss(acts[-1], y)


def classification_accuracy(spec: ModelSpec, params: Parameters, X, y) -> float:
    """Fraction of examples whose argmax output matches the label."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    _check_ffnn_data(spec, X, y)
    Ws = [lp.weights for lp in params.layers]
    bs = [lp.biases for lp in params.layers]
    _, acts = _forward_batch(spec, Ws, bs, X)
    return float(np.mean(np.argmax(acts[-1], axis=1) == y))


def _fit_ffnn(spec, params, X, y, cfg, removed=None, quant=None):
    """Shared minibatch loop for plain, masked, and quantized training.

    ``removed`` is a per-layer boolean mask of pruned weights (True means
    removed); their gradients are zeroed so they stay exactly 0.0.
    ``quant`` is ``(assignments, centroids)``: weights become centroid
    lookups and each centroid's gradient is the sum of its members'.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    validate(spec, params)
    _check_output_trainable(spec)
    _check_ffnn_data(spec, X, y)
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    bs = [lp.biases.astype(float).copy() for lp in params.layers]

    if quant is None:
        Ws = [lp.weights.astype(float).copy() for lp in params.layers]
        if removed is not None:
            for W, m in zip(Ws, removed):
                W[m] = 0.0
        arrays = Ws + bs
    else:
        assignments, centroids = quant
        centroids = [np.asarray(c, dtype=float).copy() for c in centroids]
        Ws = [None] * len(params.layers)
        arrays = centroids + bs

    opt = _make_optimizer(arrays, cfg)
    history = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            if quant is not None:
                Ws = [
                    np.where(a >= 0, c[np.maximum(a, 0)], 0.0)
                    for a, c in zip(assignments, centroids)
                ]
            zs, acts = _forward_batch(spec, Ws, bs, X[idx])
            loss = _batch_loss(acts[-1], y[idx])
            epoch_loss += loss * idx.shape[0]
            gW, gb = _backward_batch(spec, Ws, zs, acts, y[idx])
            if quant is None:
                if removed is not None:
                    for g, m in zip(gW, removed):
                        g[m] = 0.0
                opt.step(arrays, gW + gb)
            else:
                gC = [
                    np.bincount(
                        a[a >= 0].ravel(),
                        weights=g[a >= 0].ravel(),
                        minlength=c.shape[0],
                    )
                    for a, g, c in zip(assignments, gW, centroids)
                ]
                opt.step(arrays, gC + gb)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise DivergenceDetected(f"loss became {epoch_loss} during training")
        history.append(epoch_loss)

    if quant is not None:
        Ws = [
            np.where(a >= 0, c[np.maximum(a, 0)], 0.0)
            for a, c in zip(assignments, centroids)
        ]
        out = Parameters([LayerParams(W.copy(), b) for W, b in zip(Ws, bs)])
        return out, history, centroids
    out = Parameters([LayerParams(W, b) for W, b in zip(Ws, bs)])
    return out, history, None


def train_ffnn(spec: ModelSpec, params: Parameters, X, y, cfg: TrainingConfig):
    """Minibatch training of a feed-forward classifier.

    Returns ``(trained Parameters, per-epoch loss history)``.  Shuffling and
    every weight update are driven by ``cfg.seed`` alone, so identical
    inputs reproduce identical parameters.  Raises DivergenceDetected when
    the loss leaves the finite range.
    """
    out, history, _ = _fit_ffnn(spec, params, X, y, cfg)
    return out, history


def retrain_pruned(
    spec: ModelSpec,
    params: Parameters,
    removed: Sequence[np.ndarray],
    X,
    y,
    cfg: TrainingConfig,
):
    """Fine-tune a pruned model without resurrecting removed weights.

    ``removed`` holds one boolean mask per layer, True at pruned positions;
    those weights are pinned at exactly 0.0 for the whole run.
    """
    out, history, _ = _fit_ffnn(spec, params, X, y, cfg, removed=list(removed))
    return out, history


def retrain_quantized(
    spec: ModelSpec,
    params: Parameters,
    assignments: Sequence[np.ndarray],
    centroids: Sequence[np.ndarray],
    X,
    y,
    cfg: TrainingConfig,
):
    """Fine-tune shared-weight clusters after quantization.

    ``assignments`` maps every weight position to a centroid index (or -1
    for pruned positions); the forward pass reads weights through that
    lookup.  Each centroid moves by the summed gradient of its member
    weights; biases keep training individually.  Returns
    ``(new centroids, reconstructed Parameters)``.
    """
    for a, c, layer in zip(assignments, centroids, spec.layers):
        a = np.asarray(a)
        if a.shape != (layer.neurons, layer.fan_in):
            raise ShapeMismatch("assignment shape must match the weight matrix")
        if a.size and np.max(a) >= len(c):
            raise InvalidParams("assignment index outside the centroid table")
    out, history, new_centroids = _fit_ffnn(
        spec,
        params,
        X,
        y,
        cfg,
        quant=([np.asarray(a) for a in assignments], list(centroids)),
    )
    return new_centroids, out, history


# --- recurrent training (truncated backpropagation through time) -------------

def _check_sequences(spec: ModelSpec, sequences) -> None:
    if not sequences:
        raise InvalidParams("no training sequences")
    for X, t in sequences:
        X = np.asarray(X)
        t = np.asarray(t)
        if X.ndim != 2 or X.shape[1] != spec.features:
            raise ShapeMismatch(
                f"sequence features must be (T, {spec.features}), got {X.shape}"
            )
        if t.shape != (X.shape[0],):
            raise ShapeMismatch("need one target (or -1) per frame")
        if t.size and np.max(t) >= spec.output_size:
            raise InvalidParams("targets must lie in 0..output_size-1 or be -1")


def _forward_window(spec: ModelSpec, Ws, bs, X_win, state):
    """Forward one window, updating ``state`` in place; returns caches."""
    L = len(spec.layers)
    T = X_win.shape[0]
    U = [np.empty((T, spec.layers[i].fan_in)) for i in range(L)]
    Z = [np.empty((T, spec.layers[i].neurons)) for i in range(L)]
    A = [np.empty((T, spec.layers[i].neurons)) for i in range(L)]
    for t in range(T):
        x = X_win[t]
        for i, layer in enumerate(spec.layers):
            if layer.kind is LayerKind.RECURRENT:
                u = np.concatenate([x, state[i]])
            else:
                u = x
            z = Ws[i] @ u + bs[i]
            a = _train_activation(layer.activation, z)
            U[i][t], Z[i][t], A[i][t] = u, z, a
            if layer.kind is LayerKind.RECURRENT:
                state[i] = a.copy()
            x = a
    return U, Z, A


def _backward_window(spec: ModelSpec, Ws, U, Z, A, targets, scale):
    """Full backprop inside one window; no gradient crosses its start."""
    L = len(spec.layers)
    T = U[0].shape[0]
    gW = [np.zeros_like(W) for W in Ws]
    gb = [np.zeros(W.shape[0]) for W in Ws]
    g_fb = {
        i: np.zeros(spec.layers[i].neurons)
        for i in range(L)
        if spec.layers[i].kind is LayerKind.RECURRENT
    }
    for t in range(T - 1, -1, -1):
        d_below = None
        g_fb_next = {i: np.zeros_like(v) for i, v in g_fb.items()}
        for i in range(L - 1, -1, -1):
            layer = spec.layers[i]
            kind = _train_kind(layer.activation)
            a = A[i][t]
            da = np.zeros(layer.neurons)
            if i < L - 1 and d_below is not None:
                da += d_below
            if i in g_fb:
                da += g_fb[i]
            if kind is Activation.SOFTMAX:
                dz = _softmax_backprop(a, da)
                if i == L - 1 and targets[t] >= 0:
                    ce = a.copy()
                    ce[targets[t]] -= 1.0
                    dz = dz + ce * scale
            else:
                dz = da * _act_grad(kind, Z[i][t], a)
            gW[i] += np.outer(dz, U[i][t])
            gb[i] += dz
            du = Ws[i].T @ dz
            d_below = du[: layer.input_size]
            if i in g_fb_next:
                g_fb_next[i] = du[layer.input_size :]
        g_fb = g_fb_next
    return gW, gb


def _window_loss(spec: ModelSpec, A, targets) -> tuple[float, int]:
    P = A[-1]
    labeled = np.nonzero(targets >= 0)[0]
    if labeled.size == 0:
        return 0.0, 0
    picked = np.clip(P[labeled, targets[labeled]], _LOG_CLIP, None)
    return float(-np.sum(np.log(picked))), int(labeled.size)


def sequence_loss(spec: ModelSpec, params: Parameters, X_seq, targets) -> float:
    """Cross-entropy over a sequence's labeled frames, from zero state."""
    X_seq = np.asarray(X_seq, dtype=float)
    targets = np.asarray(targets, dtype=int)
    _check_sequences(spec, [(X_seq, targets)])
    Ws = [lp.weights for lp in params.layers]
    bs = [lp.biases for lp in params.layers]
    state = {
        i: np.zeros(l.neurons)
        for i, l in enumerate(spec.layers)
        if l.kind is LayerKind.RECURRENT
    }
    _, _, A = _forward_window(spec, Ws, bs, X_seq, state)
    total, count = _window_loss(spec, A, targets)
    return total / count if count else 0.0


def sequence_gradients(
    spec: ModelSpec, params: Parameters, X_seq, targets, horizon: int | None = None
):
    """BPTT gradients for one sequence, normalized by its labeled frames.

    With ``horizon=None`` gradients flow through the whole sequence and
    match finite differences of :func:`sequence_loss`.  A finite horizon
    cuts the sequence into windows; state flows forward across cuts but
    gradients do not.
    """
    X_seq = np.asarray(X_seq, dtype=float)
    targets = np.asarray(targets, dtype=int)
    validate(spec, params)
    _check_output_trainable(spec)
    _check_sequences(spec, [(X_seq, targets)])
    Ws = [lp.weights for lp in params.layers]
    bs = [lp.biases for lp in params.layers]
    T = X_seq.shape[0]
    horizon = T if horizon is None else horizon
    if horizon < 1:
        raise InvalidParams("horizon must be >= 1")
    n_labeled = int(np.sum(targets >= 0))
    if n_labeled == 0:
        raise InvalidParams("sequence has no labeled frames")
    scale = 1.0 / n_labeled
    state = {
        i: np.zeros(l.neurons)
        for i, l in enumerate(spec.layers)
        if l.kind is LayerKind.RECURRENT
    }
    gW_total = [np.zeros_like(lp.weights) for lp in params.layers]
    gb_total = [np.zeros_like(lp.biases) for lp in params.layers]
    for start in range(0, T, horizon):
        stop = min(start + horizon, T)
        U, Z, A = _forward_window(spec, Ws, bs, X_seq[start:stop], state)
        gW, gb = _backward_window(spec, Ws, U, Z, A, targets[start:stop], scale)
        for i in range(len(Ws)):
            gW_total[i] += gW[i]
            gb_total[i] += gb[i]
    return gW_total, gb_total


def train_rnn_bptt(
    spec: ModelSpec,
    params: Parameters,
    sequences: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: TrainingConfig,
    horizon: int = 32,
):
    """Train a recurrent model with truncated backpropagation through time.

    ``sequences`` holds ``(features (T, F), targets (T,))`` pairs where a
    target of -1 marks an unlabeled frame.  Each sequence starts from zero
    state; within a sequence, state carries across windows of ``horizon``
    frames while gradients stop at window boundaries.  One optimizer step
    is taken per window that contains at least one labeled frame.  Returns
    ``(trained Parameters, per-epoch mean loss history)``.
    """
    validate(spec, params)
    _check_output_trainable(spec)
    sequences = [
        (np.asarray(X, dtype=float), np.asarray(t, dtype=int)) for X, t in sequences
    ]
    _check_sequences(spec, sequences)
    if horizon < 1:
        raise InvalidParams("horizon must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    Ws = [lp.weights.astype(float).copy() for lp in params.layers]
    bs = [lp.biases.astype(float).copy() for lp in params.layers]
    arrays = Ws + bs
    opt = _make_optimizer(arrays, cfg)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(sequences))
        epoch_loss = 0.0
        epoch_labeled = 0
        for si in order:
            X_seq, targets = sequences[si]
            state = {
                i: np.zeros(l.neurons)
                for i, l in enumerate(spec.layers)
                if l.kind is LayerKind.RECURRENT
            }
            for start in range(0, X_seq.shape[0], horizon):
                stop = min(start + horizon, X_seq.shape[0])
                U, Z, A = _forward_window(spec, Ws, bs, X_seq[start:stop], state)
                total, count = _window_loss(spec, A, targets[start:stop])
                if count == 0:
                    continue
                epoch_loss += total
                epoch_labeled += count
                gW, gb = _backward_window(
                    spec, Ws, U, Z, A, targets[start:stop], 1.0 / count
                )
                opt.step(arrays, gW + gb)
        mean_loss = epoch_loss / epoch_labeled if epoch_labeled else 0.0
        if not np.isfinite(mean_loss):
            raise DivergenceDetected(f"loss became {mean_loss} during training")
        history.append(mean_loss)
    out = Parameters([LayerParams(W, b) for W, b in zip(Ws, bs)])
    return out, history
