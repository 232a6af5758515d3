"""First-order attacks: FGSM, label-form PGD (FGSM^k) and the TRADES pairwise ascent.

Binary models (one output column) take labels in ``{-1, +1}`` and a margin
loss ``phi(y f(x'))``; multiclass models take integer class indices (or
one-hot rows) and use softmax cross-entropy. ``sign(0)`` is ``+1`` throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .calib import get_loss
from .errors import DimensionError
from .ndcore import Model, forward, grad_input, log_softmax, softmax_cross_entropy

NORMS = ("linf", "l2")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.1
    norm: str = "linf"
    step_eta1: float = 0.01
    iters_K: int = 20
    init_sigma: float = 0.001
    seed: int = 0
    allow_large_step: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}; expected one of {NORMS}")
        if self.step_eta1 <= 0:
            raise ValueError("step_eta1 must be positive")
        if self.iters_K < 0:
            raise ValueError("iters_K must be nonnegative")
        if self.init_sigma < 0:
            raise ValueError("init_sigma must be nonnegative")
        if self.epsilon > 0 and self.step_eta1 > 2 * self.epsilon and not self.allow_large_step:
            raise ValueError(
                f"step_eta1={self.step_eta1} exceeds 2*epsilon={2 * self.epsilon}; "
                "pass allow_large_step=True to override"
            )


@dataclass
class AdvBatch:
    originals: np.ndarray
    perturbed: np.ndarray
    achieved_loss: np.ndarray = field(repr=False)


def sign(g):
    return np.where(g >= 0.0, 1.0, -1.0)


def project(x_prime, center, epsilon, norm="linf"):
    """Euclidean projection of ``x_prime`` onto the ``norm`` ball of radius ``epsilon`` around ``center``."""
    x_prime = np.asarray(x_prime, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if x_prime.shape != center.shape:
        raise DimensionError(f"shape mismatch: {x_prime.shape} vs {center.shape}")
    if norm == "linf":
        return np.clip(x_prime, center - epsilon, center + epsilon)
    if norm == "l2":
        delta = x_prime - center
        flat = delta.reshape(delta.shape[0], -1) if delta.ndim > 1 else delta.reshape(1, -1)
        norms = np.linalg.norm(flat, axis=1, keepdims=True)
        scale = np.where(norms > epsilon, epsilon / np.where(norms > 0, norms, 1.0), 1.0)
        return center + (flat * scale).reshape(delta.shape)
    raise ValueError(f"unknown norm {norm!r}")


def clip_to_bounds(x, bounds):
    if bounds is None:
        return x
    lo, hi = bounds
    return np.clip(x, lo, hi)


def predict_labels(model: Model, X):
    """Binary models return labels in {-1, +1}; multiclass models return argmax indices."""
    logits = forward(model, X)
    if model.is_binary:
        return np.where(logits[:, 0] >= 0.0, 1, -1)
    return np.argmax(logits, axis=1)


def _class_indices(y):
    y = np.asarray(y)
    if y.ndim == 2:
        return np.argmax(y, axis=1)
    return y.astype(np.int64)


def label_objective(model: Model, loss=None):
    """Per-example loss of ``f(x')`` against labels, in the ``(logits, y)`` convention."""
    if model.is_binary:
        phi = get_loss(loss if loss is not None else "logistic")

        def objective(logits, y):
            y = np.asarray(y, dtype=np.float64).reshape(-1)
            m = logits[:, 0] * y
            return phi(m), (phi.grad(m) * y)[:, None]

        return objective
    return lambda logits, y: softmax_cross_entropy(logits, _class_indices(y))


def pairwise_objective(model: Model, loss=None, inv_lambda=1.0):
    """Per-example ``L(f(x), f(x'))`` with the clean logits passed as the constant ``aux``.

    Binary: ``phi(f(x) f(x') / lambda)``. Multiclass: ``KL(softmax f(x) || softmax f(x'))``.
    """
    if model.is_binary:
        phi = get_loss(loss if loss is not None else "logistic")

        def objective(logits, clean):
            a = np.asarray(clean, dtype=np.float64)[:, 0]
            m = inv_lambda * a * logits[:, 0]
            return phi(m), (phi.grad(m) * inv_lambda * a)[:, None]

        return objective

    def objective(logits, clean):
        logp = log_softmax(clean)
        p = np.exp(logp)
        logq = log_softmax(logits)
        return (p * (logp - logq)).sum(axis=1), np.exp(logq) - p

    return objective


def fgsm(model: Model, x, y, loss=None, epsilon=0.1, bounds=None) -> AdvBatch:
    x = np.asarray(x, dtype=np.float64)
    objective = label_objective(model, loss)
    _, g = grad_input(model, objective, x, y)
    x_adv = clip_to_bounds(x + epsilon * sign(g), bounds)
    values, _ = objective(forward(model, x_adv), y)
    return AdvBatch(x, x_adv, values)


def _ascend(model, x, start, objective, aux, cfg, bounds, keep_best):
    x_adv = start
    values, g = grad_input(model, objective, x_adv, aux)
    best, best_val = x_adv.copy(), values.copy()
    for _ in range(cfg.iters_K):
        x_adv = project(x_adv + cfg.step_eta1 * sign(g), x, cfg.epsilon, cfg.norm)
        x_adv = clip_to_bounds(x_adv, bounds)
        values, g = grad_input(model, objective, x_adv, aux)
        if keep_best:
            improved = values > best_val
            best[improved] = x_adv[improved]
            best_val[improved] = values[improved]
    if keep_best:
        return best, best_val
    return x_adv, values


def pgd_label(model: Model, x, y, cfg: AttackConfig, loss=None, bounds=None) -> AdvBatch:
    """FGSM^k: ``K`` projected signed-gradient steps from ``x' = x``.

    The iterate with the largest loss (the start point included) is returned,
    so the achieved loss never falls below the clean loss.
    """
    x = np.asarray(x, dtype=np.float64)
    objective = label_objective(model, loss)
    x_adv, values = _ascend(model, x, x.copy(), objective, y, cfg, bounds, keep_best=True)
    return AdvBatch(x, x_adv, values)


def pgd_pairwise(model: Model, x, cfg: AttackConfig, loss=None, inv_lambda=1.0, rng=None,
                 bounds=None, keep_best=False) -> AdvBatch:
    """Label-free inner maximization of TRADES.

    Starts from ``x + init_sigma * N(0, I)`` and takes ``K`` projected signed
    ascent steps on ``L(f(x), f(x'))`` with ``f(x)`` frozen. ``rng`` defaults
    to a generator seeded with ``cfg.seed``.
    """
    x = np.asarray(x, dtype=np.float64)
    if cfg.init_sigma == 0.0 and cfg.iters_K > 0:
        warnings.warn("init_sigma=0: pairwise ascent starts at a stationary point", RuntimeWarning, stacklevel=2)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    clean = forward(model, x)
    start = x + cfg.init_sigma * rng.standard_normal(x.shape) if cfg.init_sigma > 0 else x.copy()
    start = clip_to_bounds(project(start, x, cfg.epsilon, cfg.norm), bounds)
    objective = pairwise_objective(model, loss, inv_lambda)
    x_adv, values = _ascend(model, x, start, objective, clean, cfg, bounds, keep_best)
    return AdvBatch(x, x_adv, values)


@dataclass(frozen=True)
class TransferReport:
    a_nat: float
    a_rob: float
    n: int

    @property
    def r_rob(self) -> float:
        return 1.0 - self.a_rob


def transfer_attack(source: Model, target: Model, x, y, cfg: AttackConfig, loss=None, bounds=None) -> TransferReport:
    """Black-box transfer: perturb with ``source`` gradients, score on ``target``."""
    if source.in_dim != target.in_dim:
        raise DimensionError(f"source expects {source.in_dim} features, target {target.in_dim}")
    x = np.asarray(x, dtype=np.float64)
    y_idx = np.asarray(y)
    if y_idx.ndim == 2:
        y_idx = np.argmax(y_idx, axis=1)
    adv = pgd_label(source, x, y, cfg, loss=loss, bounds=bounds)
    a_nat = float(np.mean(predict_labels(target, x) == y_idx))
    a_rob = float(np.mean(predict_labels(target, adv.perturbed) == y_idx))
    return TransferReport(a_nat, a_rob, len(x))

