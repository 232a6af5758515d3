"""Classification-calibrated surrogate losses and their psi-transforms.

The conditional risks ``H`` and ``H^-`` are computed by a bounded grid search
over the margin ``alpha`` followed by golden-section refinement, and psi is the
lower convex envelope (lower convex hull) of ``H^-((1+t)/2) - H((1+t)/2)``
sampled on a uniform grid over ``[0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CalibrationError, NumericError

ALPHA_BOUND = 50.0
GRID_STEP = 0.05
GOLDEN_TOL = 1e-12
CALIBRATION_TOL = 1e-9
PSI_GRID_SIZE = 1025
LOSS_KINDS = ("hinge", "sigmoid", "exponential", "logistic")

_LN2 = math.log(2.0)
_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _hinge(a):
    return np.maximum(1.0 - a, 0.0)


def _hinge_d(a):
    return np.where(a < 1.0, -1.0, 0.0)


def _sigmoid(a):
    return 1.0 - np.tanh(a)


def _sigmoid_d(a):
    t = np.tanh(a)
    return -(1.0 - t * t)


def _exponential(a):
    # exp(700) is still finite in float64
    return np.exp(-np.maximum(a, -700.0))


def _exponential_d(a):
    return -np.exp(-np.maximum(a, -700.0))


def _logistic(a):
    return np.logaddexp(0.0, -a) / _LN2


def _logistic_d(a):
    # -sigmoid(-a) / ln 2, written to avoid overflow for either sign
    return -0.5 * (1.0 - np.tanh(a / 2.0)) / _LN2


def _psi_log(theta):
    t = np.asarray(theta, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(t < 1.0, 0.5 * (1.0 - t) * np.log2(np.where(t < 1.0, 1.0 - t, 1.0)), 0.0)
    return lo + 0.5 * (1.0 + t) * np.log2(1.0 + t)


CLOSED_FORM_PSI: dict[str, Callable] = {
    "hinge": lambda t: np.asarray(t, dtype=np.float64) * 1.0,
    "sigmoid": lambda t: np.asarray(t, dtype=np.float64) * 1.0,
    "exponential": lambda t: 1.0 - np.sqrt(1.0 - np.asarray(t, dtype=np.float64) ** 2),
    "logistic": _psi_log,
}

_NAMED = {
    "hinge": (_hinge, _hinge_d),
    "sigmoid": (_sigmoid, _sigmoid_d),
    "exponential": (_exponential, _exponential_d),
    "logistic": (_logistic, _logistic_d),
}


@dataclass(frozen=True)
class SurrogateLoss:
    """A margin loss ``phi(alpha)`` with its derivative.

    Use :func:`get_loss` for the named losses and :meth:`custom` for anything
    else. Nonnegativity is not enforced at construction (attacks happily use
    signed margin objectives); :func:`is_calibrated` reports it.
    """

    kind: str
    value: Callable = field(compare=False, repr=False)
    derivative: Callable = field(compare=False, repr=False)

    def __call__(self, alpha):
        return self.value(np.asarray(alpha, dtype=np.float64))

    def grad(self, alpha):
        return self.derivative(np.asarray(alpha, dtype=np.float64))

    @property
    def closed_form_psi(self) -> Optional[Callable]:
        return CLOSED_FORM_PSI.get(self.kind)

    @classmethod
    def custom(cls, value, derivative=None, name="custom", step=1e-6):
        def fn(a):
            a = np.asarray(a, dtype=np.float64)
            return np.asarray(value(a), dtype=np.float64) * np.ones_like(a)
        if derivative is None:
            def derivative(a):
                a = np.asarray(a, dtype=np.float64)
                return (fn(a + step) - fn(a - step)) / (2.0 * step)
        return cls(name, fn, derivative)


def get_loss(kind) -> SurrogateLoss:
    if isinstance(kind, SurrogateLoss):
        return kind
    try:
        value, deriv = _NAMED[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; expected one of {LOSS_KINDS}") from None
    return SurrogateLoss(kind, value, deriv)


def margin_loss() -> SurrogateLoss:
    """``phi(alpha) = -alpha``: maximizing it drives the margin ``y f(x')`` down directly."""
    return SurrogateLoss("margin", lambda a: -np.asarray(a, dtype=np.float64), lambda a: -np.ones_like(a))


# ----------------------------------------------------------------------------
# one-dimensional minimization


def _golden_section(fn, lo, hi, tol=GOLDEN_TOL):
    a, b = lo, hi
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = fn(d)
    x = 0.5 * (a + b)
    return x, fn(x)


def minimize_bounded(fn, lo, hi, step=GRID_STEP):
    """Global-ish minimum of a scalar function on ``[lo, hi]``.

    Evaluates a uniform grid (``fn`` must accept arrays), then refines inside
    the bracket around the best grid point. Returns ``(argmin, min)``.
    """
    n = max(int(round((hi - lo) / step)), 2) + 1
    grid = np.linspace(lo, hi, n)
    vals = np.asarray(fn(grid), dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise NumericError("loss produced non-finite values during minimization")
    i = int(np.argmin(vals))
    best_x, best_v = float(grid[i]), float(vals[i])
    left, right = grid[max(i - 1, 0)], grid[min(i + 1, n - 1)]
    if right > left:
        scalar = lambda t: float(fn(np.array([t]))[0])
        x, v = _golden_section(scalar, float(left), float(right))
        if v < best_v:
            best_x, best_v = x, v
    return best_x, best_v


def _check_eta(eta):
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")


def conditional_objective(loss, eta):
    """``C_eta(alpha) = eta phi(alpha) + (1 - eta) phi(-alpha)`` as a vectorized callable."""
    loss = get_loss(loss)
    return lambda a: eta * loss(a) + (1.0 - eta) * loss(-np.asarray(a))


def conditional_risk(loss, eta) -> float:
    """``H(eta)``: infimum of ``C_eta`` over all margins (searched on [-50, 50])."""
    _check_eta(eta)
    return minimize_bounded(conditional_objective(loss, eta), -ALPHA_BOUND, ALPHA_BOUND)[1]


def constrained_risk(loss, eta) -> float:
    """``H^-(eta)``: infimum of ``C_eta`` over margins that disagree with ``sign(2 eta - 1)``."""
    _check_eta(eta)
    fn = conditional_objective(loss, eta)
    if eta > 0.5:
        return minimize_bounded(fn, -ALPHA_BOUND, 0.0)[1]
    if eta < 0.5:
        return minimize_bounded(fn, 0.0, ALPHA_BOUND)[1]
    return minimize_bounded(fn, -ALPHA_BOUND, ALPHA_BOUND)[1]


def psi_tilde(loss, theta) -> float:
    """``H^-((1+theta)/2) - H((1+theta)/2)``, floored at zero."""
    eta = (1.0 + theta) / 2.0
    if eta == 0.5:
        return 0.0
    return max(constrained_risk(loss, eta) - conditional_risk(loss, eta), 0.0)


# ----------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CalibrationReport:
    calibrated: bool
    min_gap: float
    eta_at_min_gap: float
    nonnegative: bool
    phi0_at_least_one: bool
    vanishes_at_infinity: bool

    def __bool__(self):
        return self.calibrated

    @property
    def violated_preconditions(self) -> list[str]:
        out = []
        if not self.calibrated:
            out.append("classification-calibrated")
        if not self.nonnegative:
            out.append("nonnegative")
        if not self.phi0_at_least_one:
            out.append("phi(0) >= 1 (upper bound)")
        if not self.vanishes_at_infinity:
            out.append("phi(alpha) -> 0 as alpha -> +inf (tightness)")
        return out


def is_calibrated(loss) -> CalibrationReport:
    loss = get_loss(loss)
    etas = [k / 100.0 for k in range(1, 100) if k != 50]
    gaps = np.array([constrained_risk(loss, e) - conditional_risk(loss, e) for e in etas])
    i = int(np.argmin(gaps))
    probe = np.linspace(-ALPHA_BOUND, ALPHA_BOUND, 2001)
    return CalibrationReport(
        calibrated=bool(np.all(gaps > CALIBRATION_TOL)),
        min_gap=float(gaps[i]),
        eta_at_min_gap=etas[i],
        nonnegative=bool(np.all(loss(probe) >= 0.0)),
        phi0_at_least_one=bool(float(loss(np.array([0.0]))[0]) >= 1.0),
        vanishes_at_infinity=bool(abs(float(loss(np.array([ALPHA_BOUND]))[0])) <= 1e-10),
    )


# ----------------------------------------------------------------------------
# psi-transform


def lower_convex_hull(x, y):
    """Indices of the lower convex hull of points sorted by ``x`` (monotone chain)."""
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            cross = (x[a] - x[o]) * (y[i] - y[o]) - (y[a] - y[o]) * (x[i] - x[o])
            if cross <= 0.0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull, dtype=np.int64)


@dataclass(frozen=True)
class PsiTransform:
    """Sampled psi on a uniform grid over [0, 1], with the closed form when known."""

    source: str
    theta: np.ndarray = field(repr=False)
    psi_tilde: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    hull_index: np.ndarray = field(repr=False)
    closed_form: Optional[Callable] = field(default=None, repr=False, compare=False)

    @property
    def spacing(self) -> float:
        return float(self.theta[1] - self.theta[0])

    def __call__(self, theta):
        return np.interp(theta, self.theta, self.values)

    def inverse(self, v, use_closed_form=False):
        return psi_inverse(self, v, use_closed_form=use_closed_form)


def psi_transform(loss, n_grid=PSI_GRID_SIZE, check=True) -> PsiTransform:
    loss = get_loss(loss)
    if check:
        report = is_calibrated(loss)
        if not report.calibrated:
            raise CalibrationError(
                f"loss {loss.kind!r} is not classification-calibrated (min gap {report.min_gap:.3g} "
                f"at eta={report.eta_at_min_gap})"
            )
    theta = np.linspace(0.0, 1.0, n_grid)
    tilde = np.array([psi_tilde(loss, t) for t in theta])
    hull = lower_convex_hull(theta, tilde)
    values = np.interp(theta, theta[hull], tilde[hull])
    values[0] = 0.0
    values = np.maximum.accumulate(values)
    return PsiTransform(loss.kind, theta, tilde, values, hull, loss.closed_form_psi)


def psi_inverse(psi: PsiTransform, v, use_closed_form=False) -> float:
    """Smallest ``theta`` in [0, 1] with ``psi(theta) >= v``; clamps to 1 above ``psi(1)``."""
    v = float(v)
    if v < 0.0:
        raise ValueError(f"psi_inverse needs a nonnegative argument, got {v}")
    if v == 0.0:
        return 0.0
    if use_closed_form:
        if psi.closed_form is None:
            raise ValueError(f"no closed-form psi for loss {psi.source!r}")
        f = lambda t: float(psi.closed_form(t))
        if v > f(1.0):
            return 1.0
        lo, hi = 0.0, 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if f(mid) >= v:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-16:
                break
        return hi
    vals = psi.values
    if v > vals[-1]:
        return 1.0
    j = int(np.searchsorted(vals, v, side="left"))
    # psi is nondecreasing; step back over any ties so the first crossing wins
    while j > 0 and vals[j - 1] >= v:
        j -= 1
    if j == 0:
        return float(psi.theta[0])
    t0, t1 = psi.theta[j - 1], psi.theta[j]
    p0, p1 = vals[j - 1], vals[j]
    return float(t0 + (v - p0) / (p1 - p0) * (t1 - t0))
