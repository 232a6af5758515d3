"""Dense feed-forward networks with hand-written reverse-mode gradients.

Tensors are plain ``float64`` numpy arrays. A :class:`Model` is a chain of
affine layers, each followed by an elementwise activation, and keeps all of
its parameters in one flat vector so optimizers and checkpoints can treat it
as a single array.

Loss callables used throughout the package share one signature::

    loss(logits, targets) -> (values, dlogits)

where ``values`` has one entry per example and ``dlogits`` is the derivative
of each example's loss with respect to its own logits row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError

ACTIVATIONS = ("relu", "tanh", "identity")
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "identity"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise DimensionError(f"layer dimensions must be positive, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")

    @property
    def n_params(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


@dataclass
class Model:
    """Feed-forward score function ``f``: raw logits, one column for binary models."""

    layers: tuple[LayerSpec, ...]
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if not self.layers:
            raise DimensionError("a model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(f"layer widths do not chain: {prev.out_dim} -> {nxt.in_dim}")
        self.params = np.ascontiguousarray(self.params, dtype=np.float64).ravel()
        if self.params.size != self.n_params:
            raise DimensionError(f"expected {self.n_params} parameters, got {self.params.size}")

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def is_binary(self) -> bool:
        return self.out_dim == 1

    def unpack(self, flat=None):
        """Return ``[(W, b), ...]`` views into ``flat`` (defaults to the parameters)."""
        flat = self.params if flat is None else flat
        out, pos = [], 0
        for layer in self.layers:
            n_w = layer.in_dim * layer.out_dim
            W = flat[pos:pos + n_w].reshape(layer.in_dim, layer.out_dim)
            b = flat[pos + n_w:pos + n_w + layer.out_dim]
            out.append((W, b))
            pos += layer.n_params
        return out

    def copy(self) -> "Model":
        return Model(self.layers, self.params.copy())

    def __call__(self, X):
        return forward(self, X)


def build_layers(in_dim, hidden, out_dim, activation="relu"):
    sizes = [in_dim, *hidden, out_dim]
    return tuple(
        LayerSpec(a, b, activation if i < len(sizes) - 2 else "identity")
        for i, (a, b) in enumerate(zip(sizes, sizes[1:]))
    )


def init_model(layers, rng) -> Model:
    """Weights ~ U[-a, a] with ``a = sqrt(6 / (in + out))`` per layer; biases start at zero."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    chunks = []
    for layer in layers:
        a = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        chunks.append(rng.uniform(-a, a, size=layer.in_dim * layer.out_dim))
        chunks.append(np.zeros(layer.out_dim))
    return Model(tuple(layers), np.concatenate(chunks))


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name, z, a, g):
    if name == "relu":
        # subgradient 0 at the kink
        return g * (z > 0.0)
    if name == "tanh":
        return g * (1.0 - a * a)
    return g


def _as_batch(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != model.in_dim:
        raise DimensionError(f"batch has shape {X.shape}, model expects (n, {model.in_dim})")
    return X


def forward_trace(model: Model, X):
    """Forward pass that also returns the per-layer cache needed by :func:`backward`."""
    X = _as_batch(model, X)
    cache = []
    h = X
    for idx, (layer, (W, b)) in enumerate(zip(model.layers, model.unpack())):
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ W + b
            a = _activate(layer.activation, z)
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite activation in forward pass", layer=idx)
        cache.append((h, z, a))
        h = a
    return h, cache


def forward(model: Model, X) -> np.ndarray:
    return forward_trace(model, X)[0]


def backward(model: Model, cache, grad_logits):
    """Backpropagate ``grad_logits`` (n x c). Returns ``(grad_params, grad_input)``."""
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    gflat = np.zeros(model.n_params)
    gviews = model.unpack(gflat)
    weights = model.unpack()
    g = grad_logits
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        h, z, a = cache[idx]
        W = weights[idx][0]
        g = _activation_grad(layer.activation, z, a, g)
        gW, gb = gviews[idx]
        gW[...] = h.T @ g
        gb[...] = g.sum(axis=0)
        g = g @ W.T
    if not (np.all(np.isfinite(gflat)) and np.all(np.isfinite(g))):
        bad = next(
            (i for i, (gw, gb) in enumerate(gviews) if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb)))),
            0,
        )
        raise NumericError("non-finite gradient", layer=bad)
    return gflat, g


def grad_params(model: Model, loss, batch, targets):
    """Gradient of the mean batch loss with respect to the flat parameter vector."""
    logits, cache = forward_trace(model, batch)
    values, dlogits = loss(logits, targets)
    n = logits.shape[0]
    gflat, _ = backward(model, cache, np.asarray(dlogits) / n)
    return float(np.mean(values)), gflat


def grad_input(model: Model, loss, x, aux):
    """Per-example gradient of ``loss(f(x), aux)`` with respect to each input row.

    ``aux`` holds whatever the loss treats as constant (labels, or the clean
    logits for pairwise losses).
    """
    x = _as_batch(model, x)
    logits, cache = forward_trace(model, x)
    values, dlogits = loss(logits, aux)
    _, gx = backward(model, cache, dlogits)
    return np.asarray(values, dtype=np.float64), gx


def sgd_update(params, grad, eta2):
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise DimensionError(f"parameter shape {params.shape} does not match gradient shape {grad.shape}")
    return params - eta2 * grad


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p_target, q_pred):
    """``-sum p log q`` along the last axis, with ``log`` arguments floored at 1e-12."""
    p = np.asarray(p_target, dtype=np.float64)
    q = np.asarray(q_pred, dtype=np.float64)
    return -(p * np.log(np.maximum(q, LOG_FLOOR))).sum(axis=-1)


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


# Loss callables in the ``(logits, targets) -> (values, dlogits)`` convention.


def squared_loss(logits, targets):
    r = logits - np.asarray(targets, dtype=np.float64).reshape(logits.shape)
    return (r * r).sum(axis=1), 2.0 * r


def softmax_cross_entropy(logits, labels):
    """Cross-entropy of integer ``labels`` against ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = log_softmax(logits)
    idx = np.arange(logits.shape[0])
    grad = np.exp(logp)
    grad[idx, labels] -= 1.0
    return -logp[idx, labels], grad
