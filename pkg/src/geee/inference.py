"""Robust sandwich covariance of GEEE estimates and Wald intervals."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .correlation import CorrelationKind, WorkingCorrelationSpec
from .data import LongitudinalDataset
from .errors import InvalidInputError, RankError
from .fit import GeeeFit, correlation_inverses

__all__ = [
    "SandwichCovariance",
    "WaldRow",
    "normal_interval",
    "robust_covariance",
    "sandwich_general",
    "sandwich_independence",
    "wald_interval",
]

COND_WARNING = 1e12


@dataclass(frozen=True)
class SandwichCovariance:
    bread: np.ndarray
    meat: np.ndarray
    vcov: np.ndarray
    se: np.ndarray
    condition: float


def _weighted_blocks(fit, data, specs, use_sigma2):
    """Per-subject stacked scores and the bread, both scaled by 1/N."""
    p, q, N = data.p, fit.q, data.N
    weights = fit.taus.weights
    bread = np.zeros((p * q, p * q))
    scores = np.zeros((data.n, p * q))
    for k, (block, spec) in enumerate(zip(fit.blocks, specs)):
        if block.residuals.shape != (N,):
            raise InvalidInputError("fit residuals do not match the dataset")
        r = block.residuals
        psi = np.where(r > 0, block.tau, 1.0 - block.tau)
        e = psi * r
        s2 = block.nuisance.sigma2 if use_sigma2 and block.nuisance.sigma2 > 0 else 1.0
        sl = slice(k * p, (k + 1) * p)
        for g, Rinv in zip(data.groups, correlation_inverses(data, spec)):
            Vinv = Rinv / s2
            XV = np.einsum("gsp,st->gtp", g.X, Vinv)
            bread[sl, sl] += weights[k] * np.einsum("gtp,gtq->pq", XV, psi[g.rows][:, :, None] * g.X)
            scores[g.subjects, sl] = weights[k] * np.einsum("gtp,gt->gp", XV, e[g.rows])
    return bread / N, scores


def _assemble(bread, scores, N):
    meat = scores.T @ scores / N
    try:
        lu = linalg.lu_factor(bread)
    except (linalg.LinAlgError, ValueError) as exc:
        raise RankError("bread matrix is singular") from exc
    diag = np.abs(np.diag(lu[0]))
    if diag.min() <= 1e-14 * diag.max():
        raise RankError("bread matrix is singular")
    cond = float(np.linalg.cond(bread))
    if cond > COND_WARNING:
        warnings.warn(f"bread matrix is ill-conditioned (condition number {cond:.3g})", RuntimeWarning,
                      stacklevel=3)
    left = linalg.lu_solve(lu, meat)                 # D1^-1 D0
    vcov = linalg.lu_solve(lu, left.T).T / N         # D1^-1 D0 D1^-T / N
    vcov = 0.5 * (vcov + vcov.T)
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    return SandwichCovariance(bread, meat, vcov, se, cond)


def sandwich_independence(fit: GeeeFit, data: LongitudinalDataset) -> SandwichCovariance:
    """Sandwich covariance with identity working covariance at the fit's residuals."""
    specs = [WorkingCorrelationSpec(CorrelationKind.INDEPENDENCE)] * fit.q
    bread, scores = _weighted_blocks(fit, data, specs, use_sigma2=False)
    return _assemble(bread, scores, data.N)


def sandwich_general(fit: GeeeFit, data: LongitudinalDataset) -> SandwichCovariance:
    """Sandwich covariance with the fitted working covariance ``sigma2 * R(alpha)`` in bread and meat."""
    specs = [b.correlation_spec for b in fit.blocks]
    bread, scores = _weighted_blocks(fit, data, specs, use_sigma2=True)
    return _assemble(bread, scores, data.N)


def robust_covariance(fit: GeeeFit, data: LongitudinalDataset) -> GeeeFit:
    """Return ``fit`` with its robust covariance attached."""
    return fit.with_vcov(sandwich_general(fit, data).vcov)


@dataclass(frozen=True)
class WaldRow:
    tau: float
    index: int
    estimate: float
    se: float
    lower: float
    upper: float


def normal_interval(estimate: float, se: float, level: float = 0.95):
    """``(lower, upper)`` of the two-sided normal interval ``estimate +/- z * se``."""
    if not 0.0 < level < 1.0:
        raise InvalidInputError("level must lie in (0, 1)")
    if not se >= 0:
        raise InvalidInputError("standard error must be non-negative")
    z = stats.norm.ppf(0.5 * (1.0 + level))
    return float(estimate - z * se), float(estimate + z * se)


def wald_interval(fit: GeeeFit, cov=None, level: float = 0.95):
    """Normal-theory intervals ``estimate +/- z * se`` for every coefficient."""
    if not 0.0 < level < 1.0:
        raise InvalidInputError("level must lie in (0, 1)")
    if cov is None:
        cov = fit.vcov
    vcov = cov.vcov if isinstance(cov, SandwichCovariance) else cov
    if vcov is None:
        raise InvalidInputError("no covariance available for the fit")
    se = np.sqrt(np.clip(np.diag(np.asarray(vcov)), 0.0, None))
    z = stats.norm.ppf(0.5 * (1.0 + level))
    rows = []
    p = fit.p
    for k, block in enumerate(fit.blocks):
        for j in range(p):
            est, s = float(block.beta[j]), float(se[k * p + j])
            rows.append(WaldRow(block.tau, j, est, s, est - z * s, est + z * s))
    return rows
