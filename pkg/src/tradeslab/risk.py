"""Natural, robust, boundary and surrogate risks, plus the lambda-sweep harness.

A *scorer* is either a :class:`~tradeslab.ndcore.Model` or any callable mapping
an ``(n, d)`` array to scores: a vector (or one column) for binary scorers,
``(n, c)`` logits for multiclass ones. Binary predictions use ``sign`` with
``sign(0) = +1``; multiclass predictions use argmax (ties to the lowest index).

Two evaluation modes exist:

``exact``
    Enumerates the perturbation ball on a lattice of spacing ``epsilon/steps``
    (corners and the center included) for inputs of dimension at most 2. The
    same lattice serves robust error, boundary error and the pairwise maximum,
    so ``r_rob = r_nat + r_bdy`` holds as an identity of indicators.
``attack``
    Searches the ball with projected signed-gradient ascent. Robust error is a
    lower bound on the truth; the boundary estimate reuses the same search.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .attacks import AttackConfig, clip_to_bounds, pgd_label, pgd_pairwise
from .calib import get_loss, margin_loss
from .errors import DataError, DimensionError, NumericError, UnsupportedError
from .ndcore import Model, _activate, forward
from .train import UNLABELED, TrainConfig, class_targets, train

EXACT_STEPS = 100
L2_RIM_POINTS = 400
_CHUNK_ROWS = 20_000


@dataclass(frozen=True)
class RiskReport:
    r_nat: float
    r_rob: float
    r_bdy: float
    r_phi: float
    a_nat: float
    a_rob: float
    method: str
    n: int
    epsilon: float

    def as_dict(self):
        return asdict(self)


# ----------------------------------------------------------------------------
# scorers and data


def scores(scorer, X):
    """Scores as a 2-D array (one column for binary scorers)."""
    X = np.asarray(X, dtype=np.float64)
    if isinstance(scorer, Model):
        return forward(scorer, X)
    out = np.asarray(scorer(X), dtype=np.float64)
    if out.ndim == 1:
        out = out.reshape(-1, 1)
    if out.shape[0] != X.shape[0]:
        raise DimensionError(f"scorer returned {out.shape[0]} rows for {X.shape[0]} inputs")
    return out


def predict_from_scores(s):
    if s.shape[1] == 1:
        return np.where(s[:, 0] >= 0.0, 1, -1)
    return np.argmax(s, axis=1)


def predict(scorer, X):
    return predict_from_scores(scores(scorer, X))


def unpack_data(data):
    """``(X, y, bounds)`` from a Dataset or an ``(X, y)`` pair."""
    if hasattr(data, "features"):
        X, y, bounds = data.features, data.labels, getattr(data, "declared_bounds", None)
    else:
        X, y = data
        bounds = None
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.int64).ravel()
    if len(X) != len(y):
        raise DimensionError(f"{len(X)} feature rows but {len(y)} labels")
    if len(X) == 0:
        raise DataError("empty dataset")
    if np.any(y == UNLABELED):
        raise DataError("risk evaluation needs fully labeled data")
    return X, y, bounds


def _targets(binary, y):
    return y if binary else class_targets(y)


def _is_binary(scorer, X):
    if isinstance(scorer, Model):
        return scorer.is_binary
    return scores(scorer, X[:1]).shape[1] == 1


# ----------------------------------------------------------------------------
# exact ball enumeration


def ball_offsets(epsilon, dim, norm="linf", steps=EXACT_STEPS):
    """Lattice of spacing ``epsilon/steps`` covering the ball; the zero offset is row 0."""
    if dim > 2:
        raise UnsupportedError(f"exact ball enumeration supports dimension <= 2, got {dim}")
    if norm not in ("linf", "l2"):
        raise ValueError(f"unknown norm {norm!r}")
    if epsilon == 0:
        return np.zeros((1, dim))
    ticks = epsilon * (np.arange(-steps, steps + 1) / steps)
    if dim == 1:
        pts = ticks.reshape(-1, 1)
    else:
        a, b = np.meshgrid(ticks, ticks, indexing="ij")
        pts = np.column_stack([a.ravel(), b.ravel()])
    if norm == "l2":
        pts = pts[np.linalg.norm(pts, axis=1) <= epsilon]
        if dim == 2:
            t = 2 * np.pi * np.arange(L2_RIM_POINTS) / L2_RIM_POINTS
            pts = np.vstack([pts, epsilon * np.column_stack([np.cos(t), np.sin(t)])])
    zero = np.all(pts == 0.0, axis=1)
    return np.vstack([np.zeros((1, dim)), pts[~zero]])


@dataclass
class ExactScan:
    """Per-point results of an exact ball scan.

    ``clean_pred`` is the prediction at the center; ``flip`` says whether any
    lattice point predicts differently; ``wrong_any[c]``-style quantities are
    derived from ``reach`` (binary: reachable signs; multiclass: reachable labels).
    """

    clean_pred: np.ndarray
    flip: np.ndarray
    reach_pos: np.ndarray
    reach_neg: np.ndarray
    reach: list
    clean_scores: np.ndarray
    pair_max: np.ndarray


def _ball_forward(model: Model, centers, offs):
    """Forward pass on every ``center + offset``; the first affine layer is shared across offsets."""
    (W, b), *rest = model.unpack()
    z = ((centers @ W + b)[:, None, :] + (offs @ W)[None, :, :]).reshape(-1, W.shape[1])
    h = _activate(model.layers[0].activation, z)
    for layer, (W, b) in zip(model.layers[1:], rest):
        h = _activate(layer.activation, h @ W + b)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite score during ball enumeration")
    return h


def exact_scan(scorer, X, epsilon, norm="linf", steps=EXACT_STEPS, bounds=None, phi=None, inv_lambda=1.0):
    """Enumerate each ball; optionally also ``max phi(inv_lambda * f(x) f(x'))`` (binary)."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    offs = ball_offsets(epsilon, d, norm, steps)
    k = len(offs)
    clean = scores(scorer, X)
    binary = clean.shape[1] == 1
    clean_pred = predict_from_scores(clean)
    flip = np.zeros(n, dtype=bool)
    reach_pos = np.zeros(n, dtype=bool)
    reach_neg = np.zeros(n, dtype=bool)
    reach = [] if not binary else None
    pair_max = np.full(n, -np.inf) if (phi is not None and binary) else None
    per_chunk = max(1, _CHUNK_ROWS // k)
    for start in range(0, n, per_chunk):
        stop = min(n, start + per_chunk)
        if isinstance(scorer, Model) and bounds is None:
            s = _ball_forward(scorer, X[start:stop], offs)
        else:
            pts = (X[start:stop, None, :] + offs[None, :, :]).reshape(-1, d)
            s = scores(scorer, clip_to_bounds(pts, bounds))
        if binary:
            f = s[:, 0].reshape(stop - start, k)
            reach_pos[start:stop] = np.any(f >= 0.0, axis=1)
            reach_neg[start:stop] = np.any(f < 0.0, axis=1)
            if pair_max is not None:
                pair_max[start:stop] = np.max(phi(inv_lambda * f * clean[start:stop, :1]), axis=1)
        else:
            labels = np.argmax(s, axis=1).reshape(stop - start, k)
            reach.extend(np.unique(row) for row in labels)
    if binary:
        flip = np.where(clean_pred == 1, reach_neg, reach_pos)
    else:
        flip = np.array([len(r) > 1 for r in reach], dtype=bool)
    return ExactScan(clean_pred, flip, reach_pos, reach_neg, reach, clean, pair_max)


# ----------------------------------------------------------------------------
# attack-based search


def _attack_flags(model, X, y, epsilon, attack_cfg, bounds):
    """Per-point ``(natural_wrong, flip_found)`` using the shared attack search."""
    if not isinstance(model, Model):
        raise UnsupportedError("attack mode needs a differentiable Model, not an arbitrary callable")
    cfg = attack_cfg if attack_cfg is not None else AttackConfig(epsilon=epsilon)
    if cfg.epsilon != epsilon:
        cfg = AttackConfig(epsilon=epsilon, norm=cfg.norm, step_eta1=min(cfg.step_eta1, 2 * epsilon) if epsilon else cfg.step_eta1,
                           iters_K=cfg.iters_K, init_sigma=cfg.init_sigma, seed=cfg.seed, allow_large_step=True)
    target = _targets(model.is_binary, y)
    clean_pred = predict(model, X)
    nat_wrong = clean_pred != target
    if epsilon == 0:
        return nat_wrong, np.zeros(len(X), dtype=bool)
    if model.is_binary:
        # push the margin y f(x') down; for correctly classified points that is the sign-flip search
        adv = pgd_label(model, X, clean_pred, cfg, loss=margin_loss(), bounds=bounds).perturbed
        flip = predict(model, adv) != clean_pred
    else:
        adv = pgd_label(model, X, clean_pred, cfg, bounds=bounds).perturbed
        flip = predict(model, adv) != clean_pred
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            adv2 = pgd_pairwise(model, X, cfg, rng=np.random.default_rng(cfg.seed), bounds=bounds).perturbed
        flip |= predict(model, adv2) != clean_pred
    return nat_wrong, flip


# ----------------------------------------------------------------------------
# public evaluators


def _indicators(scorer, data, epsilon, mode, attack_cfg, norm, steps):
    X, y, bounds = unpack_data(data)
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if mode == "exact":
        if X.shape[1] > 2:
            raise UnsupportedError(f"exact mode supports input dimension <= 2, got {X.shape[1]}")
        scan = exact_scan(scorer, X, epsilon, norm, steps, bounds)
        target = _targets(scan.clean_scores.shape[1] == 1, y)
        nat_wrong = scan.clean_pred != target
        flip = scan.flip
    elif mode == "attack":
        if attack_cfg is not None and attack_cfg.norm != norm:
            norm = attack_cfg.norm
        nat_wrong, flip = _attack_flags(scorer, X, y, epsilon, attack_cfg, bounds)
    else:
        raise ValueError(f"unknown mode {mode!r}; expected 'exact' or 'attack'")
    bdy = flip & ~nat_wrong
    return nat_wrong, nat_wrong | bdy, bdy


def natural_error(scorer, data) -> float:
    X, y, _ = unpack_data(data)
    s = scores(scorer, X)
    return float(np.mean(predict_from_scores(s) != _targets(s.shape[1] == 1, y)))


def robust_error(scorer, data, epsilon, mode="exact", attack_cfg=None, norm="linf", steps=EXACT_STEPS) -> float:
    return float(np.mean(_indicators(scorer, data, epsilon, mode, attack_cfg, norm, steps)[1]))


def boundary_error(scorer, data, epsilon, mode="exact", attack_cfg=None, norm="linf", steps=EXACT_STEPS) -> float:
    return float(np.mean(_indicators(scorer, data, epsilon, mode, attack_cfg, norm, steps)[2]))


def surrogate_risk(scorer, data, loss) -> float:
    """Mean ``phi(f(x) y)`` for binary scorers; mean cross-entropy for multiclass ones."""
    X, y, _ = unpack_data(data)
    s = scores(scorer, X)
    if s.shape[1] == 1:
        return float(np.mean(get_loss(loss)(s[:, 0] * y)))
    from .ndcore import softmax_cross_entropy

    return float(np.mean(softmax_cross_entropy(s, class_targets(y))[0]))


def evaluate(scorer, data, epsilon, mode="exact", attack_cfg=None, loss="logistic", norm="linf",
             steps=EXACT_STEPS) -> RiskReport:
    nat, rob, bdy = _indicators(scorer, data, epsilon, mode, attack_cfg, norm, steps)
    n = len(nat)
    r_nat, r_rob, r_bdy = float(np.mean(nat)), float(np.mean(rob)), float(np.mean(bdy))
    return RiskReport(
        r_nat=r_nat, r_rob=r_rob, r_bdy=r_bdy, r_phi=surrogate_risk(scorer, data, loss),
        a_nat=1.0 - r_nat, a_rob=1.0 - r_rob,
        method="exact" if mode == "exact" else "attack_approx", n=n, epsilon=float(epsilon),
    )


# ----------------------------------------------------------------------------
# finite-support distributions


@dataclass(frozen=True)
class DecompositionReport:
    r_nat: float
    r_bdy: float
    r_rob: float
    gap: float

    def as_tuple(self):
        return self.r_nat, self.r_bdy, self.r_rob


def finite_errors(scorer, dist, epsilon, norm="linf", steps=EXACT_STEPS, bounds=None):
    """Exact ``(r_nat, r_bdy, r_rob)`` of a binary scorer under a FiniteDistribution."""
    scan = exact_scan(scorer, dist.support, epsilon, norm, steps, bounds)
    if scan.clean_scores.shape[1] != 1:
        raise UnsupportedError("finite-distribution errors are defined for binary scorers")
    eta, mass = dist.eta, dist.mass
    pos = scan.clean_pred == 1
    # label +1 has probability eta, label -1 has 1 - eta
    nat = np.where(pos, 1.0 - eta, eta)
    correct = 1.0 - nat
    bdy = np.where(scan.flip, correct, 0.0)
    rob = eta * scan.reach_neg + (1.0 - eta) * scan.reach_pos
    return (math.fsum(mass * nat), math.fsum(mass * bdy), math.fsum(mass * rob)), scan


def decomposition_check(scorer, dist, epsilon, norm="linf", steps=EXACT_STEPS, tol=1e-12) -> DecompositionReport:
    (r_nat, r_bdy, r_rob), _ = finite_errors(scorer, dist, epsilon, norm, steps)
    gap = abs(r_rob - (r_nat + r_bdy))
    if gap > tol:
        raise AssertionError(f"R_rob != R_nat + R_bdy: {r_rob!r} vs {r_nat!r} + {r_bdy!r}")
    return DecompositionReport(r_nat, r_bdy, r_rob, gap)


# ----------------------------------------------------------------------------
# lambda sweep

SWEEP_HEADER = ("inv_lambda", "seed", "a_nat", "a_rob", "r_nat", "r_bdy", "r_rob", "method", "epsilon")


def lambda_sweep(data, base_cfg: TrainConfig, inv_lambda_list, test_data=None, mode="attack",
                 epsilon=None, attack_cfg=None, loss="logistic"):
    """Train one model per ``1/lambda`` with the same seed and evaluate it.

    Returns a list of row dicts keyed by :data:`SWEEP_HEADER`.
    """
    eval_data = test_data if test_data is not None else data
    eps = base_cfg.attack.epsilon if epsilon is None else epsilon
    rows = []
    for inv_lambda in inv_lambda_list:
        ckpt = train(data, base_cfg.replace(inv_lambda=float(inv_lambda)))
        rep = evaluate(ckpt.model, eval_data, eps, mode=mode,
                       attack_cfg=attack_cfg if attack_cfg is not None else base_cfg.attack, loss=loss)
        rows.append({
            "inv_lambda": float(inv_lambda), "seed": base_cfg.seed, "a_nat": rep.a_nat, "a_rob": rep.a_rob,
            "r_nat": rep.r_nat, "r_bdy": rep.r_bdy, "r_rob": rep.r_rob, "method": rep.method, "epsilon": eps,
        })
    return rows
