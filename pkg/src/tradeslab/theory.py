"""Analytic checks of the robustness/accuracy trade-off.

* exact error triples for the staircase distribution,
* the upper bound ``R_rob(f) - R*_nat <= psi^{-1}(R_phi(f) - R*_phi) + E max phi(f(X') f(X) / lambda)``
  evaluated on data (empirical baseline) or on a finite distribution (exact Bayes quantities),
* a two-point witness showing that bound is tight up to ``xi``,
* the risk-equality identity relating ``R_rob(f)`` to the Bayes rule,
* structural-risk-minimization training of a robust linear separator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .attacks import AttackConfig, pgd_pairwise
from .calib import (
    PsiTransform,
    conditional_objective,
    conditional_risk,
    constrained_risk,
    get_loss,
    is_calibrated,
    lower_convex_hull,
    psi_inverse,
    psi_tilde,
    psi_transform,
)
from .distributions import FiniteDistribution, StaircaseDistribution
from .errors import CalibrationError, DimensionError, ResolutionError
from .ndcore import Model
from .risk import EXACT_STEPS, evaluate, exact_scan, finite_errors, natural_error, scores, surrogate_risk, unpack_data

__all__ = [
    "StaircaseDistribution",
    "FiniteDistribution",
    "staircase_errors",
    "Theorem1Report",
    "verify_theorem1",
    "verify_theorem1_finite",
    "TightnessWitness",
    "tightness_witness",
    "LemmaReport",
    "lemma_risk_equality_check",
    "SrmConfig",
    "SrmResult",
    "srm_linear_train",
    "margin_equivalence_check",
]

# ----------------------------------------------------------------------------
# staircase


def _sign_breakpoints(scorer, n_scan=20001, tol=1e-15):
    """Locate sign changes of ``scorer`` on [0, 1] by a scan followed by bisection."""
    xs = np.linspace(0.0, 1.0, n_scan)
    pos = np.asarray(scorer(xs.reshape(-1, 1)), dtype=np.float64).ravel() >= 0.0
    out = []
    for i in np.flatnonzero(pos[1:] != pos[:-1]):
        lo, hi, s_lo = xs[i], xs[i + 1], pos[i]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if (float(np.ravel(scorer(np.array([[mid]])))[0]) >= 0.0) == s_lo:
                lo = mid
            else:
                hi = mid
        out.append(Fraction(hi))
    return out


def _merge(intervals):
    merged = []
    for a, b in sorted(intervals):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return merged


def staircase_errors(classifier="bayes", epsilon=0.1):
    """Exact ``(r_nat, r_bdy, r_rob)`` on the staircase distribution, as Fractions.

    ``classifier`` is ``"bayes"``, ``"allone"`` or a scorer callable on ``(n, 1)``
    arrays. Perturbations are restricted to the support [0, 1]. For a custom
    scorer the sign changes are located numerically and then treated exactly.
    """
    dist = StaircaseDistribution(float(epsilon))
    eps = Fraction(str(epsilon)) if not isinstance(epsilon, Fraction) else epsilon
    one = Fraction(1)
    label_breaks = []
    k = 1
    while k * eps < one:
        label_breaks.append(k * eps)
        k += 1
    if classifier == "bayes":
        scorer_breaks = []
        sign_at = lambda x: 1 if dist.eta(x) > 0.5 else -1  # noqa: E731
    elif classifier == "allone":
        scorer_breaks = []
        sign_at = lambda x: 1  # noqa: E731
    elif callable(classifier):
        scorer_breaks = _sign_breakpoints(classifier)
        sign_at = lambda x: 1 if float(np.ravel(classifier(np.array([[x]])))[0]) >= 0.0 else -1  # noqa: E731
    else:
        raise ValueError(f"unknown classifier {classifier!r}; expected 'bayes', 'allone' or a scorer")
    if classifier == "bayes":
        scorer_breaks = list(label_breaks)
    points = sorted({Fraction(0), one, *label_breaks, *scorer_breaks})
    cells = []
    for a, b in zip(points, points[1:]):
        mid = float((a + b) / 2)
        y = 1 if dist.eta(mid) > 0.5 else -1
        cells.append((a, b, sign_at(mid), y))
    r_nat = sum((b - a for a, b, s, y in cells if s != y), Fraction(0))
    r_rob = Fraction(0)
    for label in (1, -1):
        wrong = _merge([(max(a - eps, 0), min(b + eps, one)) for a, b, s, _ in cells if s != label])
        for a, b, _, y in cells:
            if y != label:
                continue
            for lo, hi in wrong:
                overlap = min(b, hi) - max(a, lo)
                if overlap > 0:
                    r_rob += overlap
    return r_nat, r_rob - r_nat, r_rob


# ----------------------------------------------------------------------------
# upper bound on R_rob - R*_nat


def _check_bound_loss(loss):
    loss = get_loss(loss)
    report = is_calibrated(loss)
    if not report.calibrated or float(loss(np.array([0.0]))[0]) < 1.0:
        problems = list(report.violated_preconditions) or ["phi(0) < 1"]
        raise CalibrationError(f"loss {loss.kind!r} violates the bound's preconditions: {', '.join(problems)}")
    return loss


@dataclass(frozen=True)
class Theorem1Report:
    delta_lhs: float
    delta_rhs: float
    delta: float
    r_rob: float
    r_nat: float
    r_star_nat: float
    r_phi: float
    r_star_phi: float
    psi_inv_term: float
    reg_term: float
    lam: float
    epsilon: float
    baseline: str
    method: str

    @property
    def holds(self) -> bool:
        return self.delta >= -1e-6


_PSI_CACHE: dict = {}


def _psi(loss) -> PsiTransform:
    key = loss.kind
    if key not in _PSI_CACHE or key == "custom":
        _PSI_CACHE[key] = psi_transform(loss)
    return _PSI_CACHE[key]


def _finish(loss, r_rob, r_nat, r_star_nat, r_phi, r_star_phi, reg, lam, epsilon, baseline, method,
            use_closed_form, strict):
    excess = max(0.0, r_phi - r_star_phi)
    if use_closed_form:
        psi_inv = psi_inverse(_psi(loss), excess, use_closed_form=True)
    else:
        psi_inv = psi_inverse(_psi(loss), excess)
    lhs = r_rob - r_star_nat
    rhs = psi_inv + reg
    rep = Theorem1Report(lhs, rhs, rhs - lhs, r_rob, r_nat, r_star_nat, r_phi, r_star_phi, psi_inv, reg,
                         float(lam), float(epsilon), baseline, method)
    if strict and not rep.holds:
        raise AssertionError(f"bound violated: delta={rep.delta!r}")
    return rep


def verify_theorem1(model, data, loss, lam, epsilon, nat_baseline, mode="exact", attack_cfg=None,
                    norm="linf", steps=EXACT_STEPS, use_closed_form=False, strict=True) -> Theorem1Report:
    """Evaluate both sides of the bound for a binary ``model`` on ``data``.

    ``nat_baseline`` (a Model, a Checkpoint or a scorer) supplies the empirical
    estimates of ``R*_nat`` and ``R*_phi``; the report labels them as such.
    In ``exact`` mode (input dimension <= 2) one lattice scan of each ball gives
    ``R_rob`` and the pairwise maximum together; ``attack`` mode approximates
    the maximum with :func:`~tradeslab.attacks.pgd_pairwise`.
    """
    loss = _check_bound_loss(loss)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    baseline = getattr(nat_baseline, "model", nat_baseline)
    X, y, bounds = unpack_data(data)
    r_star_nat = natural_error(baseline, data)
    r_star_phi = surrogate_risk(baseline, data, loss)
    r_phi = surrogate_risk(model, data, loss)
    if mode == "exact":
        scan = exact_scan(model, X, epsilon, norm, steps, bounds, phi=loss, inv_lambda=1.0 / lam)
        if scan.pair_max is None:
            raise DimensionError("the bound check needs a binary scorer")
        nat_wrong = scan.clean_pred != y
        rob = nat_wrong | (scan.flip & ~nat_wrong)
        r_nat, r_rob = float(np.mean(nat_wrong)), float(np.mean(rob))
        reg = float(np.mean(scan.pair_max))
    elif mode == "attack":
        cfg = attack_cfg if attack_cfg is not None else AttackConfig(epsilon=epsilon, norm=norm)
        rep = evaluate(model, data, epsilon, mode="attack", attack_cfg=cfg, loss=loss, norm=norm)
        r_nat, r_rob = rep.r_nat, rep.r_rob
        f = scores(model, X)[:, 0]
        adv = pgd_pairwise(model, X, cfg, loss=loss, inv_lambda=1.0 / lam, bounds=bounds, keep_best=True)
        reg = float(np.mean(np.maximum(adv.achieved_loss, loss(f * f / lam))))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _finish(loss, r_rob, r_nat, r_star_nat, r_phi, r_star_phi, reg, lam, epsilon,
                   "empirical", mode, use_closed_form, strict)


def verify_theorem1_finite(scorer, dist: FiniteDistribution, loss, lam, epsilon, norm="linf",
                           steps=EXACT_STEPS, use_closed_form=False, strict=True) -> Theorem1Report:
    """The same bound with exact Bayes quantities of a finite distribution."""
    loss = _check_bound_loss(loss)
    (r_nat, _, r_rob), scan = finite_errors(scorer, dist, epsilon, norm, steps)
    scan = exact_scan(scorer, dist.support, epsilon, norm, steps, phi=loss, inv_lambda=1.0 / lam)
    f = scan.clean_scores[:, 0]
    r_phi = math.fsum(dist.mass * (dist.eta * loss(f) + (1 - dist.eta) * loss(-f)))
    r_star_phi = math.fsum(m * conditional_risk(loss, e) for m, e in zip(dist.mass, dist.eta))
    reg = math.fsum(dist.mass * scan.pair_max)
    return _finish(loss, r_rob, r_nat, dist.bayes_risk(), r_phi, r_star_phi, reg, lam, epsilon,
                   "bayes", "exact", use_closed_form, strict)


# ----------------------------------------------------------------------------
# tightness witness

WITNESS_LATTICE = 512
WITNESS_SUPPORT = (0.0, 1.0)
WITNESS_EPSILON = 0.1


@dataclass
class TightnessWitness:
    dist: FiniteDistribution
    f_values: np.ndarray
    lam: float
    theta: float
    xi: float
    gamma: float
    alphas: tuple
    epsilon: float = WITNESS_EPSILON
    r_rob_minus_bayes: float = float("nan")
    excess_phi: float = float("nan")
    reg: float = float("nan")
    lower: float = float("nan")
    upper: float = float("nan")
    lattice: int = WITNESS_LATTICE

    @property
    def sandwich_holds(self) -> bool:
        tol = 1e-12
        return self.lower - tol <= self.excess_phi <= self.upper + tol

    def scorer(self):
        pts, vals = self.dist.support[:, 0], self.f_values

        def f(X):
            X = np.asarray(X, dtype=np.float64).reshape(-1)
            return vals[np.argmin(np.abs(X[:, None] - pts[None, :]), axis=1)]

        return f


def _hull_bracket(loss, psi: PsiTransform, theta, xi, lattice):
    grid = np.arange(lattice + 1) / lattice
    tilde = np.array([psi_tilde(loss, t) for t in grid])
    hull = lower_convex_hull(grid, tilde)
    verts = grid[hull]
    j = int(np.searchsorted(verts, theta, side="left"))
    if j < len(verts) and verts[j] == theta:
        a = b = float(theta)
        ta = tb = float(tilde[hull[j]])
        gamma = 1.0
    else:
        a, b = float(verts[j - 1]), float(verts[j])
        ta, tb = float(tilde[hull[j - 1]]), float(tilde[hull[j]])
        gamma = (b - theta) / (b - a)
    mix = gamma * ta + (1.0 - gamma) * tb
    if psi(theta) < mix - xi / 3.0:
        return None
    return gamma, a, b


def _witness_score(loss, eta, slack, max_refine=30):
    """Most negative ``f`` in [-50, 0) with ``C_eta(f) <= H^-(eta) + slack``."""
    target = constrained_risk(loss, eta) + slack
    cost = conditional_objective(loss, eta)
    lo = -50.0
    for _ in range(max_refine):
        grid = np.linspace(lo, 0.0, 2001)[:-1]
        ok = np.array([cost(v) for v in grid]) <= target
        if ok.any():
            return float(grid[np.argmax(ok)])
        lo /= 10.0
    raise ResolutionError(f"no score in [-50, 0) meets the slack {slack} at eta={eta}")


def tightness_witness(theta, xi, loss="hinge", lattice=WITNESS_LATTICE, max_lattice=1 << 16) -> TightnessWitness:
    """Two-point distribution and all-negative scorer on which the bound is tight up to ``xi``."""
    theta, xi = float(theta), float(xi)
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    if xi <= 0:
        raise ValueError("xi must be positive")
    loss = get_loss(loss)
    if not is_calibrated(loss).calibrated or float(loss(np.array([60.0]))[0]) > 1e-6:
        raise CalibrationError(f"loss {loss.kind!r} must be calibrated and vanish at +infinity")
    psi = _psi(loss)
    found = None
    while found is None:
        found = _hull_bracket(loss, psi, theta, xi, lattice)
        if found is None:
            if lattice * 2 > max_lattice:
                raise ResolutionError(f"no lattice point within xi/3 of psi({theta}); refine the lattice")
            lattice *= 2
    gamma, a1, a2 = found
    mass = np.array([gamma, 1.0 - gamma])
    alphas = np.array([a1, a2])
    etas = (1.0 + alphas) / 2.0
    f_vals = np.array([_witness_score(loss, e, xi / 3.0) for e in etas])

    # eps' with psi(theta) - psi(theta - eps') <= xi/3
    eps_prime = 1.0
    while eps_prime > 1e-12 and psi(theta) - psi(max(theta - eps_prime, 0.0)) > xi / 3.0:
        eps_prime /= 2.0
    lam = 1.0
    live = mass > 0
    reg = math.fsum(mass[live] * loss(f_vals[live] ** 2 / lam))
    while reg >= eps_prime:
        lam /= 2.0
        if lam < 1e-300:
            raise ResolutionError("could not shrink lambda enough")
        reg = math.fsum(mass[live] * loss(f_vals[live] ** 2 / lam))

    dist = FiniteDistribution(np.array(WITNESS_SUPPORT).reshape(-1, 1), mass, etas)
    w = TightnessWitness(dist, f_vals, lam, theta, xi, gamma, (a1, a2), lattice=lattice)
    # R_rob(f) - R*_nat: f < 0 on both balls, so errors are eta_i versus min(eta_i, 1 - eta_i)
    (r_nat, r_bdy, r_rob), _ = finite_errors(w.scorer(), dist, WITNESS_EPSILON, steps=4)
    w.r_rob_minus_bayes = r_rob - dist.bayes_risk()
    r_phi = math.fsum(m * float(conditional_objective(loss, e)(f)) for m, e, f in zip(mass, etas, f_vals) if m > 0)
    r_star = math.fsum(m * conditional_risk(loss, e) for m, e in zip(mass, etas) if m > 0)
    w.excess_phi = r_phi - r_star
    w.reg = reg
    w.lower = psi(max(theta - reg, 0.0))
    w.upper = w.lower + xi
    return w


# ----------------------------------------------------------------------------
# risk-equality lemma


@dataclass(frozen=True)
class LemmaReport:
    lhs: float
    rhs: float
    disagree_term: float
    neighborhood_term: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


def lemma_risk_equality_check(scorer, dist: FiniteDistribution, epsilon, norm="linf", steps=EXACT_STEPS,
                              tol=1e-12) -> LemmaReport:
    """``R_rob(f) - R_nat(f*)`` against its decomposition relative to the Bayes rule ``f* = 2 eta - 1``."""
    (_, _, r_rob), scan = finite_errors(scorer, dist, epsilon, norm, steps)
    eta, mass = dist.eta, dist.mass
    bayes_pos = 2.0 * eta - 1.0 >= 0.0
    f_pos = scan.clean_pred == 1
    outside = ~scan.flip
    disagree = math.fsum(mass * ((f_pos != bayes_pos) & outside) * np.abs(2.0 * eta - 1.0))
    agree_prob = np.where(bayes_pos, eta, 1.0 - eta)
    near = math.fsum(mass * scan.flip * agree_prob)
    lhs = r_rob - dist.bayes_risk()
    rep = LemmaReport(lhs, disagree + near, disagree, near)
    if rep.gap > tol:
        raise AssertionError(f"risk-equality identity off by {rep.gap!r}")
    return rep


# ----------------------------------------------------------------------------
# SRM linear separator


@dataclass(frozen=True)
class SrmConfig:
    margins: tuple
    delta: float = 0.05
    data_bound: Optional[float] = None
    C: float = 32.0
    epsilon: float = 0.0
    n_random: int = 100_000
    seed: int = 0

    def __post_init__(self):
        margins = tuple(float(g) for g in self.margins)
        if not margins or any(g <= 0 for g in margins):
            raise ValueError("margins must be positive")
        if any(a <= b for a, b in zip(margins, margins[1:])):
            raise ValueError("margins must be strictly decreasing")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.C <= 0 or self.epsilon < 0:
            raise ValueError("C must be positive and epsilon nonnegative")
        object.__setattr__(self, "margins", margins)

    @property
    def priors(self):
        """Margin priors ``p_k = 2^-k`` (reported, not tunable)."""
        return tuple(2.0 ** -(k + 1) for k in range(len(self.margins)))


@dataclass
class SrmResult:
    w: np.ndarray
    k_star: int
    table: list = field(default_factory=list)
    heuristic: bool = False
    weights: list = field(default_factory=list)


def margin_objective(w, X, y, threshold):
    """``mean 1(y w^T x <= threshold)`` for each row of ``w``."""
    w = np.atleast_2d(w)
    return np.mean((y[None, :] * (w @ X.T)) <= threshold, axis=1)


def _angle_candidates(X, y, threshold):
    """Midpoints of the arcs cut out by the critical angles.

    Each point is a margin violation on a closed arc, so the count is constant
    on the open arcs between critical angles and no smaller at their ends; the
    midpoints therefore reach the minimum without sitting on a tie.
    """
    z = X * y[:, None]
    r = np.linalg.norm(z, axis=1)
    phase = np.arctan2(z[:, 1], z[:, 0])
    ok = r >= abs(threshold) if threshold >= 0 else r > 0
    ok &= r > 0
    c = np.clip(threshold / np.where(ok, r, 1.0), -1.0, 1.0)
    half = np.arccos(c[ok])
    crit = np.concatenate([phase[ok] + half, phase[ok] - half])
    crit = np.sort(np.mod(crit, 2 * np.pi))
    if crit.size == 0:
        return np.array([0.0])
    nxt = np.append(crit[1:], crit[0] + 2 * np.pi)
    return np.mod(0.5 * (crit + nxt), 2 * np.pi)


def _best_direction_2d(X, y, threshold):
    t = _angle_candidates(X, y, threshold)
    W = np.column_stack([np.cos(t), np.sin(t)])
    vals = margin_objective(W, X, y, threshold)
    i = int(np.argmin(vals))
    return W[i], float(vals[i])


def srm_penalty(n, gamma, b, delta, C=32.0):
    return math.sqrt((C / n) * ((b * b) / (gamma * gamma) * math.log(n) + math.log(1.0 / delta)))


def srm_linear_train(X, y, cfg: SrmConfig) -> SrmResult:
    """Pick the margin index minimizing empirical robust margin loss plus the complexity penalty.

    With unit ``w`` and an l2 ball, ``min_{x'} y w^T x' = y w^T x - eps``, so each
    inner problem is the plain margin loss at threshold ``2 gamma_k + eps``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) != len(y) or len(X) == 0:
        raise DimensionError("srm needs a nonempty (n, d) feature matrix with one label per row")
    n, d = X.shape
    norm_max = float(np.max(np.linalg.norm(X, axis=1)))
    b = cfg.data_bound if cfg.data_bound is not None else norm_max
    if b < norm_max - 1e-12:
        raise ValueError(f"data_bound {b} is below the largest observed norm {norm_max}")
    heuristic = d != 2
    if heuristic:
        rng = np.random.default_rng(cfg.seed)
        cand = rng.standard_normal((cfg.n_random, d))
        cand /= np.linalg.norm(cand, axis=1, keepdims=True)
    table, weights = [], []
    for k, (gamma, p) in enumerate(zip(cfg.margins, cfg.priors), start=1):
        thr = 2.0 * gamma + cfg.epsilon
        if heuristic:
            vals = margin_objective(cand, X, y, thr)
            i = int(np.argmin(vals))
            w, loss = cand[i], float(vals[i])
        else:
            w, loss = _best_direction_2d(X, y, thr)
        pen = srm_penalty(n, gamma, b, cfg.delta, cfg.C)
        table.append({"k": k, "gamma": gamma, "prior": p, "empirical_loss": loss, "penalty": pen,
                      "objective": loss + pen})
        weights.append(w)
    k_star = min(range(len(table)), key=lambda i: table[i]["objective"]) + 1
    return SrmResult(weights[k_star - 1], k_star, table, heuristic, weights)


def margin_equivalence_check(w, x, y, gamma, epsilon, n_dirs=1000, rng=0):
    """Compare ``1(exists x' in B2(x, eps): y w^T x' <= 2 gamma)`` with ``1(y w^T x <= 2 gamma + eps)``.

    The left side is evaluated on ``n_dirs`` random boundary points plus the
    analytic minimizer ``x - eps y w``. Returns ``(agree, sampled_min, closed_form_min)``;
    ``sampled_min`` never falls below the closed form.
    """
    w = np.asarray(w, dtype=np.float64)
    w = w / np.linalg.norm(w)
    x = np.asarray(x, dtype=np.float64)
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    u = rng.standard_normal((n_dirs, x.size))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pts = np.vstack([x + epsilon * u, x - epsilon * y * w])
    vals = y * (pts @ w)
    closed = float(y * (w @ x) - epsilon)
    sampled_min = float(vals[:-1].min())
    agree = bool(np.any(vals <= 2 * gamma)) == bool(y * (w @ x) <= 2 * gamma + epsilon)
    return agree, sampled_min, closed
