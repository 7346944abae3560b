"""Asymmetric square loss, expectiles of samples and distributions.

The expectile of level ``tau`` minimizes ``E[rho_tau(Y - m)]`` with
``rho_tau(t) = |tau - 1(t <= 0)| * t**2``.  At ``tau = 0.5`` it is the mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import optimize, stats

from .errors import InvalidInputError, NumericalError

__all__ = [
    "Asymmetry",
    "AsymmetrySequence",
    "ChiSquare",
    "Normal",
    "StudentT",
    "and_density",
    "check_weight",
    "distribution_expectile",
    "loss",
    "sample_expectile",
]


@dataclass(frozen=True)
class Asymmetry:
    """Asymmetry level strictly inside (0, 1)."""

    tau: float

    def __post_init__(self):
        tau = float(self.tau)
        if not (0.0 < tau < 1.0) or not math.isfinite(tau):
            raise InvalidInputError(f"tau must lie in the open interval (0, 1), got {self.tau!r}")
        object.__setattr__(self, "tau", tau)

    def __float__(self) -> float:
        return self.tau


TauLike = Union[float, Asymmetry]


def as_tau(tau: TauLike) -> float:
    """Validate ``tau`` and return it as a float."""
    return Asymmetry(float(tau)).tau


@dataclass(frozen=True)
class AsymmetrySequence:
    """Strictly increasing asymmetry levels with positive block weights.

    The weights form the diagonal of the q x q matrix that scales each
    expectile's block of the stacked estimating equations.
    """

    taus: tuple
    weights: tuple = ()

    def __post_init__(self):
        taus = tuple(as_tau(t) for t in self.taus)
        if not taus:
            raise InvalidInputError("at least one tau is required")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise InvalidInputError(f"taus must be strictly increasing, got {taus}")
        weights = tuple(float(w) for w in self.weights) if len(self.weights) else (1.0,) * len(taus)
        if len(weights) != len(taus):
            raise InvalidInputError("weights and taus must have the same length")
        if any(not (w > 0.0) or not math.isfinite(w) for w in weights):
            raise InvalidInputError(f"weights must be positive and finite, got {weights}")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.taus)

    def __iter__(self):
        return iter(self.taus)


def check_weight(tau: TauLike, t):
    """Check function ``psi_tau(t)``: ``tau`` for ``t > 0`` and ``1 - tau`` for ``t <= 0``."""
    tau = as_tau(tau)
    t = np.asarray(t, dtype=float)
    out = np.where(t > 0, tau, 1.0 - tau)
    return float(out) if out.ndim == 0 else out


def loss(tau: TauLike, t):
    """Asymmetric square loss ``psi_tau(t) * t**2``."""
    t = np.asarray(t, dtype=float)
    out = check_weight(tau, t) * t * t
    return float(out) if np.ndim(out) == 0 else out


def sample_expectile(tau: TauLike, values: Sequence[float], *, tol: float = 1e-12,
                     max_iter: int = 1000) -> float:
    """Empirical expectile of a sample.

    Iterates the weighted-mean identity ``m = sum(psi*y) / sum(psi)`` from the
    sample mean until successive iterates differ by less than
    ``tol * (1 + |m|)``.  The map is a Newton step on a monotone piecewise
    linear function and terminates after finitely many steps.
    """
    tau = as_tau(tau)
    y = np.asarray(values, dtype=float).ravel()
    if y.size == 0:
        raise InvalidInputError("sample_expectile needs at least one value")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("sample_expectile received non-finite values")
    if np.all(y == y[0]):
        return float(y[0])
    m = float(np.mean(y))
    for _ in range(max_iter):
        w = np.where(y > m, tau, 1.0 - tau)
        m_new = float(np.dot(w, y) / w.sum())
        if abs(m_new - m) < tol * (1.0 + abs(m)):
            return m_new
        m = m_new
    raise NumericalError("sample_expectile did not converge")


# ---------------------------------------------------------------------------
# Marginal laws used by the simulation design
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    var: float = 1.0

    name = "normal"

    @property
    def _dist(self):
        return stats.norm(loc=self.mean, scale=math.sqrt(self.var))

    def expectation(self) -> float:
        return self.mean

    def scale(self) -> float:
        return math.sqrt(self.var)

    def upper_partial_moment(self, m: float) -> float:
        """``E[(Y - m)_+]``."""
        sd = math.sqrt(self.var)
        z = (m - self.mean) / sd
        return sd * stats.norm.pdf(z) + (self.mean - m) * stats.norm.sf(z)

    def ppf(self, u):
        return self._dist.ppf(u)

    def isf(self, u):
        return self._dist.isf(u)

    def cdf(self, x):
        return self._dist.cdf(x)


@dataclass(frozen=True)
class StudentT:
    df: float = 3.0

    name = "t"

    def __post_init__(self):
        if not self.df > 2:
            raise InvalidInputError("StudentT needs df > 2 for a finite second moment")

    def expectation(self) -> float:
        return 0.0

    def scale(self) -> float:
        return math.sqrt(self.df / (self.df - 2.0))

    def upper_partial_moment(self, m: float) -> float:
        # int_m^inf t f(t) dt = (df + m^2) / (df - 1) * f(m)
        nu = self.df
        tail_mean = (nu + m * m) / (nu - 1.0) * stats.t.pdf(m, nu)
        return tail_mean - m * stats.t.sf(m, nu)

    def ppf(self, u):
        return stats.t.ppf(u, self.df)

    def isf(self, u):
        return stats.t.isf(u, self.df)

    def cdf(self, x):
        return stats.t.cdf(x, self.df)


@dataclass(frozen=True)
class ChiSquare:
    df: float = 3.0

    name = "chisq"

    def __post_init__(self):
        if not self.df > 0:
            raise InvalidInputError("ChiSquare needs df > 0")

    def expectation(self) -> float:
        return float(self.df)

    def scale(self) -> float:
        return math.sqrt(2.0 * self.df)

    def upper_partial_moment(self, m: float) -> float:
        k = self.df
        if m <= 0:
            return k - m
        # E[X 1(X > m)] = k * P(chi2_{k+2} > m)
        return k * stats.chi2.sf(m, k + 2) - m * stats.chi2.sf(m, k)

    def ppf(self, u):
        return stats.chi2.ppf(u, self.df)

    def isf(self, u):
        return stats.chi2.isf(u, self.df)

    def cdf(self, x):
        return stats.chi2.cdf(x, self.df)


MarginalLaw = Union[Normal, StudentT, ChiSquare]


def distribution_expectile(tau: TauLike, marginal: MarginalLaw) -> float:
    """Expectile of a marginal law.

    Solves ``tau * E[(Y-m)_+] = (1-tau) * E[(m-Y)_+]`` with Brent's method
    after expanding a bracket around the mean.  Partial moments are in
    closed form for all three supported laws.
    """
    tau = as_tau(tau)
    mu = marginal.expectation()
    if tau == 0.5:
        return float(mu)

    def foc(m):
        upper = marginal.upper_partial_moment(m)
        lower = upper - (mu - m)
        return tau * upper - (1.0 - tau) * lower

    step = marginal.scale()
    lo, hi = mu - step, mu + step
    for _ in range(80):
        if foc(lo) > 0 > foc(hi):
            break
        step *= 2.0
        lo, hi = mu - step, mu + step
    else:
        raise NumericalError("could not bracket the expectile root")
    return float(optimize.brentq(foc, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500))


def and_density(u, mu: float, sigma2: float, tau: TauLike):
    """Asymmetric normal density with location ``mu``, scale ``sigma2`` and asymmetry ``tau``."""
    tau = as_tau(tau)
    if not sigma2 > 0:
        raise InvalidInputError("sigma2 must be positive")
    const = (2.0 / math.sqrt(math.pi * sigma2)
             * math.sqrt(tau * (1.0 - tau)) / (math.sqrt(tau) + math.sqrt(1.0 - tau)))
    z = (np.asarray(u, dtype=float) - mu) / math.sqrt(sigma2)
    out = const * np.exp(-loss(tau, z))
    return float(out) if np.ndim(out) == 0 else out
