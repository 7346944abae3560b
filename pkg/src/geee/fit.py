"""Fitting of generalized expectile estimating equations.

For a single level ``tau`` the estimator solves

    S(beta) = sum_i X_i' V_i^{-1} Psi_i(r_i) r_i = 0,   r_i = y_i - X_i beta,

with ``V_i = sigma2 * R_i(alpha)`` (identity variance function).  Several
levels are stacked with block-diagonal ``V`` and ``Psi``; the per-level
blocks of the stacked score are ``w_k * S_k``, so each block is solved by
the same Fisher-scoring iteration and the weights drop out of the root.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .correlation import (
    CorrelationKind,
    NuisanceEstimates,
    WorkingCorrelationSpec,
    build_correlation,
    clamp_alpha,
)
from .data import LongitudinalDataset
from .errors import DegreesOfFreedomError, InvalidInputError, NumericalError, RankError
from .expectile import AsymmetrySequence, as_tau

__all__ = [
    "FitControl",
    "GeeeFit",
    "TauFit",
    "fit_geee",
    "fit_independence",
    "fit_multi",
    "objective",
    "score",
]

log = logging.getLogger(__name__)

_RCOND_LIMIT = 1e-12


@dataclass(frozen=True)
class FitControl:
    max_iterations: int = 100
    beta_tolerance: float = 1e-8
    score_tolerance: float = 1e-6
    variance_function: str = "identity"

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise InvalidInputError("max_iterations must be at least 1")
        if not (self.beta_tolerance > 0 and self.score_tolerance > 0):
            raise InvalidInputError("tolerances must be positive")
        if self.variance_function != "identity":
            raise InvalidInputError("only the identity variance function is supported")


@dataclass(frozen=True)
class TauFit:
    """Estimates for one asymmetry level."""

    tau: float
    beta: np.ndarray
    nuisance: NuisanceEstimates
    residuals: np.ndarray
    converged: bool
    iterations: int
    final_score_norm: float
    correlation_spec: WorkingCorrelationSpec
    objective_trace: tuple = ()
    warnings: tuple = ()


@dataclass(frozen=True)
class GeeeFit:
    """Stacked fit over one or more asymmetry levels.

    ``beta`` stacks the per-level coefficient vectors level by level, and
    ``vcov`` (attached by :mod:`geee.inference`) is the matching ``pq x pq``
    matrix.
    """

    taus: AsymmetrySequence
    structure: CorrelationKind
    blocks: tuple
    p: int
    vcov: np.ndarray = field(default=None, repr=False)

    @property
    def q(self):
        return len(self.blocks)

    @property
    def beta(self):
        return np.concatenate([b.beta for b in self.blocks])

    @property
    def converged(self):
        return all(b.converged for b in self.blocks)

    @property
    def iterations(self):
        return max(b.iterations for b in self.blocks)

    @property
    def final_score_norm(self):
        return max(b.final_score_norm for b in self.blocks)

    @property
    def warnings(self):
        return tuple(w for b in self.blocks for w in b.warnings)

    def block(self, tau):
        tau = as_tau(tau)
        for b in self.blocks:
            if b.tau == tau:
                return b
        raise KeyError(tau)

    def with_vcov(self, vcov):
        return replace(self, vcov=vcov)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def _psi(tau, r):
    return np.where(r > 0, tau, 1.0 - tau)


def objective(data: LongitudinalDataset, tau, beta) -> float:
    """Mean asymmetric square loss over all observations."""
    tau = as_tau(tau)
    r = data.y - data.X @ np.asarray(beta, dtype=float)
    return float(np.dot(_psi(tau, r), r * r) / data.N)


def _solve(A, b, what):
    try:
        lu, piv = linalg.lu_factor(A, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise RankError(f"{what} is singular") from exc
    diag = np.abs(np.diag(lu))
    if diag.min() <= _RCOND_LIMIT * max(diag.max(), np.finfo(float).tiny):
        raise RankError(f"{what} is singular")
    return linalg.lu_solve((lu, piv), b)


def correlation_inverses(data: LongitudinalDataset, spec: WorkingCorrelationSpec):
    """Inverse working correlation for every pattern group of ``data``."""
    out = []
    for g in data.groups:
        R = build_correlation(spec, positions=g.positions)
        if spec.kind is CorrelationKind.INDEPENDENCE:
            out.append(R)
            continue
        if 1.0 / np.linalg.cond(R) < _RCOND_LIMIT:
            raise NumericalError(f"working correlation for positions {g.positions} is not invertible")
        out.append(np.linalg.inv(R))
    return out


def _score_and_info(data, tau, r, rinvs):
    """Return ``sum X' R^-1 Psi r`` and ``sum X' R^-1 Psi X``."""
    p = data.p
    S = np.zeros(p)
    U = np.zeros((p, p))
    psi = _psi(tau, r)
    for g, Rinv in zip(data.groups, rinvs):
        Xg = g.X
        w = psi[g.rows]
        e = w * r[g.rows]
        WX = w[:, :, None] * Xg
        RX = np.einsum("gsp,st->gtp", Xg, Rinv)   # rows of X_i' R^-1
        S += np.einsum("gtp,gt->p", RX, e)
        U += np.einsum("gtp,gtq->pq", RX, WX)
    return S, U


def score(data: LongitudinalDataset, tau, beta, spec: WorkingCorrelationSpec | None = None,
          sigma2: float = 1.0):
    """Estimating function ``sum_i X_i' V_i^{-1} Psi_i r_i`` at ``beta``."""
    tau = as_tau(tau)
    if spec is None:
        spec = WorkingCorrelationSpec(CorrelationKind.INDEPENDENCE)
    r = data.y - data.X @ np.asarray(beta, dtype=float)
    S, _ = _score_and_info(data, tau, r, correlation_inverses(data, spec))
    return S / sigma2


def _scales(data):
    col = np.sqrt(np.mean(data.X ** 2, axis=0))
    col[col == 0] = 1.0
    ys = float(np.sqrt(np.mean(data.y ** 2)))
    return col * (ys if ys > 0 else 1.0) * data.N


def _score_norm(S, scale):
    return float(np.max(np.abs(S) / scale))


def _beta_change(step, beta):
    return float(np.max(np.abs(step)) / (1.0 + np.max(np.abs(beta))))


def _sigma2(tau, r, N, p):
    if N - p <= 0:
        raise DegreesOfFreedomError(f"N - p = {N - p} is not positive")
    e = _psi(tau, r) * r
    return float(np.dot(e, e) / (N - p)), N - p


def _alpha(kind, tau, r, sigma2, data):
    """Raw moment estimate of alpha from stacked residuals."""
    e = _psi(tau, r) * r
    p = data.p
    if kind is CorrelationKind.EXCHANGEABLE:
        num, pairs = 0.0, 0
        for g in data.groups:
            eg = e[g.rows]
            s = eg.sum(axis=1)
            num += 0.5 * float(np.sum(s * s) - np.sum(eg * eg))
            m = len(g.positions)
            pairs += len(g.subjects) * m * (m - 1) // 2
        div, name = pairs - p, "N1-p"
    elif kind is CorrelationKind.AR1:
        num, pairs = 0.0, 0
        for g in data.groups:
            adjacent = np.flatnonzero(np.diff(g.positions) == 1)
            eg = e[g.rows]
            num += float(np.sum(eg[:, adjacent] * eg[:, adjacent + 1]))
            pairs += len(g.subjects) * adjacent.size
        div, name = pairs - p, "N2-p"
    else:
        M = data.max_position
        table = np.zeros((M, M))
        for g in data.groups:
            eg = e[g.rows]
            idx = np.asarray(g.positions) - 1
            table[np.ix_(idx, idx)] += eg.T @ eg
        div = data.N - p
        if div <= 0:
            raise DegreesOfFreedomError(f"N - p = {div} is not positive")
        table /= div * sigma2
        np.fill_diagonal(table, 1.0)
        return table, {"N-p": div}
    if div <= 0:
        raise DegreesOfFreedomError(f"{name} = {div} is not positive")
    return num / (div * sigma2), {name: div}


def _table_size(kind, data):
    return data.max_position if kind is CorrelationKind.UNSTRUCTURED else data.max_cluster_size


def _identity_spec(kind, data):
    M = _table_size(kind, data)
    alpha = np.eye(M) if kind is CorrelationKind.UNSTRUCTURED else 0.0
    return WorkingCorrelationSpec(kind, alpha, M)


# ---------------------------------------------------------------------------
# independence estimating equations
# ---------------------------------------------------------------------------


def _fit_independence_block(data, tau, control):
    X, y, p, N = data.X, data.y, data.p, data.N
    beta = _solve(X.T @ X, X.T @ y, "X'X")
    obj = objective(data, tau, beta)
    trace = [obj]
    scale = _scales(data)
    converged = False
    it = 0
    for it in range(1, control.max_iterations + 1):
        r = y - X @ beta
        w = _psi(tau, r)
        WX = X * w[:, None]
        S = WX.T @ r
        snorm = _score_norm(S, scale)
        step = _solve(WX.T @ X, S, "weighted normal equations")
        # convex objective: halve until it does not increase
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            cand_obj = objective(data, tau, cand)
            if cand_obj <= obj:
                break
            t *= 0.5
        else:
            cand, cand_obj = beta, obj
        change = _beta_change(cand - beta, beta)
        beta, obj = cand, cand_obj
        trace.append(obj)
        if change <= control.beta_tolerance:
            r = y - X @ beta
            snorm = _score_norm((X * _psi(tau, r)[:, None]).T @ r, scale)
            if snorm <= control.score_tolerance:
                converged = True
                break
    r = y - X @ beta
    snorm = _score_norm((X * _psi(tau, r)[:, None]).T @ r, scale)
    sigma2, dof = _sigma2(tau, r, N, p)
    spec = _identity_spec(CorrelationKind.INDEPENDENCE, data)
    nuisance = NuisanceEstimates(sigma2, 0.0, {"N-p": dof}, 0.0, False)
    warnings = () if converged else (f"tau={tau}: independence IRLS did not converge in {it} iterations",)
    return TauFit(tau, beta, nuisance, r, converged, it, snorm, spec, tuple(trace), warnings)


def fit_independence(data: LongitudinalDataset, tau, control: FitControl | None = None) -> GeeeFit:
    """Solve the independence expectile estimating equations by IRLS.

    Equivalent to minimizing the mean asymmetric square loss over beta.
    Each IRLS step is backtracked so the loss never increases.
    """
    control = control or FitControl()
    tau = as_tau(tau)
    block = _fit_independence_block(data, tau, control)
    return GeeeFit(AsymmetrySequence((tau,)), CorrelationKind.INDEPENDENCE, (block,), data.p)


# ---------------------------------------------------------------------------
# general working correlation
# ---------------------------------------------------------------------------


def _fit_block(data, tau, kind, control):
    start = _fit_independence_block(data, tau, control)              # Step 1
    if kind is CorrelationKind.INDEPENDENCE:
        return start

    X, y, p, N = data.X, data.y, data.p, data.N
    M = _table_size(kind, data)
    scale = _scales(data)
    warnings = list(start.warnings)
    beta = start.beta.copy()
    spec = _identity_spec(kind, data)
    raw = spec.alpha
    clamped = False
    dof = {}
    last_change = np.inf
    converged = False
    snorm = np.inf
    it = 0
    while True:
        r = y - X @ beta
        # Step 2: nuisance parameters from the current residuals
        sigma2, dof_n = _sigma2(tau, r, N, p)
        if sigma2 > 0:
            try:
                raw, dof = _alpha(kind, tau, r, sigma2, data)
            except DegreesOfFreedomError as exc:
                msg = f"tau={tau}: {exc}; falling back to independence working correlation"
                log.info(msg)
                return replace(start, warnings=tuple(warnings + [msg]))
            alpha, clamped = clamp_alpha(kind, raw, M)
            spec = WorkingCorrelationSpec(kind, alpha, M)
        rinvs = correlation_inverses(data, spec)
        S, U = _score_and_info(data, tau, r, rinvs)
        snorm = _score_norm(S, scale)
        if last_change <= control.beta_tolerance and snorm <= control.score_tolerance:
            converged = True
            break
        if it >= control.max_iterations:
            break
        it += 1
        # Step 3: Fisher-scoring update (sigma2 cancels between U and S)
        step = _solve(U, S, "GEEE update matrix")
        t = 1.0
        for _ in range(5):
            r_new = y - X @ (beta + t * step)
            S_new, _ = _score_and_info(data, tau, r_new, rinvs)
            if _score_norm(S_new, scale) <= 10.0 * max(snorm, np.finfo(float).tiny):
                break
            t *= 0.5
        last_change = _beta_change(t * step, beta)
        beta = beta + t * step

    if clamped:
        warnings.append(f"tau={tau}: {kind.label} moment estimate {np.round(raw, 6).tolist()} "
                        f"clamped into the positive-definite range")
    if not converged:
        warnings.append(f"tau={tau}: {kind.label} iteration did not converge in {it} iterations")
    dof = {"N-p": dof_n, **dof}
    nuisance = NuisanceEstimates(sigma2, spec.alpha, dof, raw, clamped)
    return TauFit(tau, beta, nuisance, y - X @ beta, converged, it, snorm, spec, (), tuple(warnings))


def fit_geee(data: LongitudinalDataset, tau, structure="ind", control: FitControl | None = None) -> GeeeFit:
    """Fit one expectile level under a working correlation structure.

    Starts from the independence estimate, then alternates the moment
    updates of ``sigma2`` and ``alpha`` with the Fisher-scoring step until
    both the relative change in beta and the normalized score fall below
    the control tolerances.
    """
    control = control or FitControl()
    tau = as_tau(tau)
    kind = CorrelationKind.parse(structure)
    block = _fit_block(data, tau, kind, control)
    return GeeeFit(AsymmetrySequence((tau,)), kind, (block,), data.p)


def fit_multi(data: LongitudinalDataset, taus, structure="ind", control: FitControl | None = None) -> GeeeFit:
    """Fit the stacked system for a sequence of expectile levels."""
    control = control or FitControl()
    if not isinstance(taus, AsymmetrySequence):
        taus = AsymmetrySequence(tuple(taus))
    kind = CorrelationKind.parse(structure)
    blocks = tuple(_fit_block(data, tau, kind, control) for tau in taus.taus)
    return GeeeFit(taus, kind, blocks, data.p)
