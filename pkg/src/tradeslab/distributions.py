"""Toy distributions with analytically known conditional label probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class StaircaseDistribution:
    """Uniform marginal on [0, 1] with ``eta`` alternating 0/1 on consecutive length-``epsilon`` cells.

    ``eta = 0`` on ``[2k eps, (2k+1) eps)`` and ``eta = 1`` on ``((2k+1) eps, (2k+2) eps]``.
    """

    epsilon: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 0.5:
            raise ValueError(f"staircase epsilon must lie in (0, 1/2], got {self.epsilon}")

    def eta(self, x):
        x = np.asarray(x, dtype=np.float64)
        cell = np.floor(x / self.epsilon).astype(np.int64)
        return (cell % 2 == 1).astype(np.float64)

    def label(self, x):
        return np.where(self.eta(x) > 0.5, 1, -1)

    def sample(self, n, rng):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        x = rng.uniform(0.0, 1.0, size=n)
        return x.reshape(-1, 1), self.label(x)

    def bayes_scorer(self):
        return lambda X: 2.0 * self.eta(np.asarray(X, dtype=np.float64)[..., 0]) - 1.0


@dataclass(frozen=True)
class FiniteDistribution:
    """Finitely supported distribution: ``Pr[X = support[i]] = mass[i]``, ``Pr[Y = 1 | X] = eta[i]``."""

    support: np.ndarray
    mass: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.float64)
        if support.ndim == 1:
            support = support.reshape(-1, 1)
        mass = np.asarray(self.mass, dtype=np.float64).ravel()
        eta = np.asarray(self.eta, dtype=np.float64).ravel()
        if not (len(support) == len(mass) == len(eta)) or len(mass) == 0:
            raise DataError("support, mass and eta must be nonempty and of equal length")
        if np.any(mass < 0) or abs(math.fsum(mass) - 1.0) > 1e-12:
            raise DataError("masses must be nonnegative and sum to 1")
        if np.any((eta < 0) | (eta > 1)):
            raise DataError("eta values must lie in [0, 1]")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "eta", eta)

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def bayes_scorer(self, *, tol=1e-12):
        """``f*(x) = 2 eta(x) - 1`` on the support (nearest support point elsewhere)."""
        pts, eta = self.support, self.eta

        def scorer(X):
            X = np.asarray(X, dtype=np.float64).reshape(-1, pts.shape[1])
            d = ((X[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
            return 2.0 * eta[np.argmin(d, axis=1)] - 1.0

        return scorer

    def bayes_risk(self) -> float:
        return math.fsum(self.mass * np.minimum(self.eta, 1.0 - self.eta))

    @classmethod
    def random(cls, rng, n_points=8, dim=1, spread=1.0):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        support = rng.uniform(-spread, spread, size=(n_points, dim))
        mass = rng.dirichlet(np.ones(n_points))
        mass = mass / math.fsum(mass)
        eta = rng.uniform(0.0, 1.0, size=n_points)
        # mix in a few noiseless points
        eta = np.where(rng.uniform(size=n_points) < 0.3, np.round(eta), eta)
        return cls(support, mass, eta)
