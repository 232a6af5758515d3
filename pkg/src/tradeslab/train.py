"""Trainers: natural ERM, robust optimization (PGD adversarial training), and TRADES.

All four share one minibatch SGD loop. Three independent random streams are
spawned from ``TrainConfig.seed``: parameter init, epoch shuffling, and the
Gaussian start of the pairwise attack. Keeping them apart means two modes with
the same seed see the same initial model and the same batch order, so their
trajectories can be compared step for step.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attacks import AttackConfig, _ascend, clip_to_bounds, pgd_label, pgd_pairwise, predict_labels, project
from .calib import get_loss
from .errors import DataError
from .ndcore import Model, backward, build_layers, forward, forward_trace, init_model, log_softmax, sgd_update

MODES = ("natural", "madry", "trades_binary", "trades_multiclass")
UNLABELED = -(2**31)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "trades_multiclass"
    inv_lambda: float = 1.0
    eta2: float = 0.01
    batch_m: int = 128
    epochs: int = 10
    attack: AttackConfig = field(default_factory=AttackConfig)
    surrogate: str = "logistic"
    seed: int = 0
    unlabeled_fraction: float = 0.0
    hidden: tuple = (32,)
    activation: str = "relu"
    swap_pairwise: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.inv_lambda < 0:
            raise ValueError("inv_lambda must be nonnegative")
        if self.eta2 <= 0:
            raise ValueError("eta2 must be positive")
        if self.batch_m < 1 or self.epochs < 0:
            raise ValueError("batch_m must be >= 1 and epochs >= 0")
        if not 0.0 <= self.unlabeled_fraction < 1.0:
            raise ValueError("unlabeled_fraction must lie in [0, 1)")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Checkpoint:
    model: Model
    config: TrainConfig
    epoch: int
    rng_state: dict
    metrics_history: list = field(default_factory=list)


# ----------------------------------------------------------------------------
# labels


def is_binary_labels(y) -> bool:
    y = np.asarray(y)
    y = y[y != UNLABELED]
    return y.size > 0 and bool(np.all((y == 1) | (y == -1)))


def class_targets(y):
    """Map ``{-1, +1}`` labels to class indices ``{0, 1}``; leave other labels alone."""
    y = np.asarray(y, dtype=np.int64)
    if is_binary_labels(y):
        return np.where(y == UNLABELED, UNLABELED, (y + 1) // 2)
    return y


def model_targets(model: Model, y):
    """Labels in the form ``model`` predicts: ``{-1, +1}`` for binary, indices otherwise."""
    return np.asarray(y, dtype=np.int64) if model.is_binary else class_targets(y)


def _uses_binary_model(cfg: TrainConfig, y) -> bool:
    if cfg.mode == "trades_binary":
        if not is_binary_labels(y):
            raise DataError("trades_binary needs labels in {-1, +1}")
        return True
    if cfg.mode == "trades_multiclass":
        return False
    return is_binary_labels(y)


# ----------------------------------------------------------------------------
# per-batch objectives: each returns (loss, term1, term2, grad)


def _binary_margin_grad(model, phi, xb, yb, weight=1.0):
    logits, cache = forward_trace(model, xb)
    m = logits[:, 0] * yb
    values = phi(m)
    dlog = (phi.grad(m) * yb)[:, None] * (weight / len(xb))
    g, _ = backward(model, cache, dlog)
    return float(np.mean(values)), g


def _ce_terms(logits, targets, mask):
    logp = log_softmax(logits)
    idx = np.flatnonzero(mask)
    n_lab = idx.size
    if n_lab == 0:
        return 0.0, np.zeros_like(logits)
    grad = np.zeros_like(logits)
    grad[idx] = np.exp(logp[idx])
    grad[idx, targets[idx]] -= 1.0
    return float(-logp[idx, targets[idx]].sum() / n_lab), grad / n_lab


def _kl_terms(clean_logits, adv_logits, swap):
    """KL between softmax outputs and its gradients w.r.t. both logit blocks (unscaled sums)."""
    logp = log_softmax(clean_logits)
    logq = log_softmax(adv_logits)
    p, q = np.exp(logp), np.exp(logq)
    if swap:
        d = logq - logp
        kl = (q * d).sum(axis=1)
        g_clean = p - q
        g_adv = q * (d - kl[:, None])
    else:
        d = logp - logq
        kl = (p * d).sum(axis=1)
        g_clean = p * (d - kl[:, None])
        g_adv = q - p
    return kl, g_clean, g_adv


class _Trainer:
    def __init__(self, data_X, data_y, cfg: TrainConfig, allow_unlabeled=False):
        self.X = np.asarray(data_X, dtype=np.float64)
        self.y_raw = np.asarray(data_y, dtype=np.int64)
        self.cfg = cfg
        unlabeled = self.y_raw == UNLABELED
        if unlabeled.any() and not allow_unlabeled:
            if cfg.mode != "trades_multiclass" or cfg.unlabeled_fraction == 0.0:
                raise DataError(
                    f"{int(unlabeled.sum())} unlabeled examples found but mode={cfg.mode!r} "
                    f"with unlabeled_fraction={cfg.unlabeled_fraction} expects fully labeled data"
                )
        if cfg.mode != "trades_multiclass" and unlabeled.any():
            raise DataError(f"mode {cfg.mode!r} cannot use unlabeled examples")
        if len(self.X) == 0:
            raise DataError("cannot train on an empty dataset")
        if cfg.batch_m > len(self.X):
            raise DataError(f"batch size {cfg.batch_m} exceeds dataset size {len(self.X)}")
        self.labeled = ~unlabeled
        self.binary = _uses_binary_model(cfg, self.y_raw)
        if self.binary:
            self.y = self.y_raw.astype(np.float64)
            self.n_out = 1
            self.phi = get_loss(cfg.surrogate)
        else:
            self.y = class_targets(self.y_raw)
            labeled_y = self.y[self.labeled]
            if labeled_y.size and labeled_y.min() < 0:
                raise DataError("class labels must be nonnegative integers")
            self.n_out = max(int(labeled_y.max()) + 1 if labeled_y.size else 2, 2)
            self.phi = None
        self.bounds = None

    def layers(self):
        return build_layers(self.X.shape[1], self.cfg.hidden, self.n_out, self.cfg.activation)

    # ---- steps

    def step(self, model, xb, yb, mask, attack_rng):
        cfg = self.cfg
        mode = cfg.mode
        if mode == "natural":
            if self.binary:
                loss, g = _binary_margin_grad(model, self.phi, xb, yb)
                return loss, loss, 0.0, 1.0, g
            logits, cache = forward_trace(model, xb)
            t1, dlog = _ce_terms(logits, yb.astype(np.int64), mask)
            g, _ = backward(model, cache, dlog)
            return t1, t1, 0.0, 1.0, g
        if mode == "madry":
            loss_kind = self.phi if self.binary else None
            adv = pgd_label(model, xb, yb if self.binary else yb.astype(np.int64), cfg.attack,
                            loss=loss_kind, bounds=self.bounds).perturbed
            if self.binary:
                loss, g = _binary_margin_grad(model, self.phi, adv, yb)
                return loss, loss, 0.0, 1.0, g
            logits, cache = forward_trace(model, adv)
            t1, dlog = _ce_terms(logits, yb.astype(np.int64), mask)
            g, _ = backward(model, cache, dlog)
            return t1, t1, 0.0, 1.0, g
        if mode == "trades_binary":
            return self._trades_binary_step(model, xb, yb, attack_rng)
        return self._trades_multiclass_step(model, xb, yb, mask, attack_rng)

    def _trades_binary_step(self, model, xb, yb, attack_rng):
        cfg, phi, s = self.cfg, self.phi, self.cfg.inv_lambda
        n = len(xb)
        adv = pgd_pairwise(model, xb, cfg.attack, loss=phi, inv_lambda=s, rng=attack_rng,
                           bounds=self.bounds).perturbed
        nat_logits, nat_cache = forward_trace(model, xb)
        adv_logits, adv_cache = forward_trace(model, adv)
        f, fa = nat_logits[:, 0], adv_logits[:, 0]
        m1 = f * yb
        m2 = s * f * fa
        t1 = float(np.mean(phi(m1)))
        t2 = float(np.mean(phi(m2)))
        d2 = phi.grad(m2) * s
        g_nat, _ = backward(model, nat_cache, ((phi.grad(m1) * yb + d2 * fa) / n)[:, None])
        g_adv, _ = backward(model, adv_cache, ((d2 * f) / n)[:, None])
        return t1 + t2, t1, t2, 1.0, g_nat + g_adv

    def _trades_multiclass_step(self, model, xb, yb, mask, attack_rng):
        cfg, s = self.cfg, self.cfg.inv_lambda
        n = len(xb)
        if cfg.attack.iters_K == 0 and cfg.attack.init_sigma == 0.0:
            adv = xb.copy()
        elif cfg.swap_pairwise:
            adv = self._swapped_ascent(model, xb, attack_rng)
        else:
            adv = pgd_pairwise(model, xb, cfg.attack, rng=attack_rng, bounds=self.bounds).perturbed
        nat_logits, nat_cache = forward_trace(model, xb)
        adv_logits, adv_cache = forward_trace(model, adv)
        t1, d_ce = _ce_terms(nat_logits, yb.astype(np.int64), mask)
        kl, g_clean, g_adv = _kl_terms(nat_logits, adv_logits, cfg.swap_pairwise)
        t2 = float(kl.sum() / n)
        g_nat, _ = backward(model, nat_cache, d_ce + g_clean * (s / n))
        g_advp, _ = backward(model, adv_cache, g_adv * (s / n))
        return t1 + s * t2, t1, t2, s, g_nat + g_advp

    def _swapped_ascent(self, model, xb, attack_rng):
        cfg = self.cfg.attack
        clean = forward(model, xb)

        def objective(logits, clean_logits):
            kl, _, g_adv = _kl_terms(clean_logits, logits, swap=True)
            return kl, g_adv

        start = xb + cfg.init_sigma * attack_rng.standard_normal(xb.shape)
        start = clip_to_bounds(project(start, xb, cfg.epsilon, cfg.norm), self.bounds)
        adv, _ = _ascend(model, xb, start, objective, clean, cfg, self.bounds, keep_best=False)
        return adv

    # ---- loop

    def run(self, resume: Optional[Checkpoint] = None, batch_log: Optional[list] = None) -> Checkpoint:
        cfg = self.cfg
        init_ss, shuffle_ss, attack_ss = np.random.SeedSequence(cfg.seed).spawn(3)
        shuffle_rng = np.random.default_rng(shuffle_ss)
        attack_rng = np.random.default_rng(attack_ss)
        if resume is None:
            model = init_model(self.layers(), np.random.default_rng(init_ss))
            start_epoch, history = 0, []
        else:
            model = resume.model.copy()
            shuffle_rng.bit_generator.state = resume.rng_state["shuffle"]
            attack_rng.bit_generator.state = resume.rng_state["attack"]
            start_epoch, history = resume.epoch, list(resume.metrics_history)
        n = len(self.X)
        for epoch in range(start_epoch, cfg.epochs):
            order = shuffle_rng.permutation(n)
            sums = np.zeros(3)
            for start in range(0, n, cfg.batch_m):
                idx = order[start:start + cfg.batch_m]
                loss, t1, t2, weight, g = self.step(model, self.X[idx], self.y[idx], self.labeled[idx], attack_rng)
                model.params = sgd_update(model.params, g, cfg.eta2)
                sums += (loss * len(idx), t1 * len(idx), t2 * len(idx))
                if batch_log is not None:
                    batch_log.append({"epoch": epoch, "loss": loss, "term1": t1, "term2": t2, "weight": weight,
                                      "n": len(idx), "n_labeled": int(self.labeled[idx].sum())})
            history.append(self._epoch_summary(model, epoch, sums / n))
        state = {"shuffle": shuffle_rng.bit_generator.state, "attack": attack_rng.bit_generator.state}
        return Checkpoint(model, cfg, max(cfg.epochs, start_epoch), state, history)

    def _epoch_summary(self, model, epoch, means):
        lab = self.labeled
        pred = predict_labels(model, self.X[lab])
        target = self.y_raw[lab] if self.binary else self.y[lab]
        return {
            "epoch": epoch + 1,
            "loss": float(means[0]),
            "term1": float(means[1]),
            "term2": float(means[2]),
            "train_r_nat": float(np.mean(pred != target)) if lab.any() else 0.0,
        }


def _unpack(data):
    if hasattr(data, "features"):
        return data.features, data.labels, getattr(data, "declared_bounds", None)
    X, y = data
    return X, y, None


def train(data, cfg: TrainConfig, resume: Optional[Checkpoint] = None, batch_log=None,
          allow_unlabeled=False) -> Checkpoint:
    """Train according to ``cfg.mode``; ``data`` is a Dataset or an ``(X, y)`` pair."""
    X, y, bounds = _unpack(data)
    trainer = _Trainer(X, y, cfg, allow_unlabeled=allow_unlabeled)
    trainer.bounds = bounds
    return trainer.run(resume=resume, batch_log=batch_log)


def train_natural(data, cfg: TrainConfig, **kw) -> Checkpoint:
    return train(data, cfg.replace(mode="natural"), **kw)


def train_madry(data, cfg: TrainConfig, **kw) -> Checkpoint:
    return train(data, cfg.replace(mode="madry"), **kw)


def train_trades_binary(data, cfg: TrainConfig, **kw) -> Checkpoint:
    return train(data, cfg.replace(mode="trades_binary"), **kw)


def train_trades_multiclass(data, cfg: TrainConfig, **kw) -> Checkpoint:
    return train(data, cfg.replace(mode="trades_multiclass"), **kw)


def train_trades_semisup(labeled, unlabeled, cfg: TrainConfig, **kw) -> Checkpoint:
    """Supervised term over ``labeled`` only, pairwise regularizer over the union.

    ``unlabeled`` is a feature matrix (or a Dataset whose labels are ignored).
    """
    X_l, y_l, bounds = _unpack(labeled)
    X_u = unlabeled.features if hasattr(unlabeled, "features") else np.asarray(unlabeled, dtype=np.float64)
    X_u = np.asarray(X_u, dtype=np.float64).reshape(-1, np.asarray(X_l).shape[1])
    X = np.concatenate([np.asarray(X_l, dtype=np.float64), X_u])
    y = np.concatenate([np.asarray(y_l, dtype=np.int64), np.full(len(X_u), UNLABELED, dtype=np.int64)])
    trainer = _Trainer(X, y, cfg.replace(mode="trades_multiclass"), allow_unlabeled=True)
    trainer.bounds = bounds
    return trainer.run(**kw)


def hide_labels(y, fraction, seed):
    """Return a copy of ``y`` with a seeded ``fraction`` of entries replaced by ``UNLABELED``."""
    y = np.array(y, dtype=np.int64)
    n_hide = int(round(fraction * len(y)))
    idx = np.random.default_rng(seed).permutation(len(y))[:n_hide]
    y[idx] = UNLABELED
    return y
