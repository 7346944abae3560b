"""Working correlation structures and moment estimators of their parameters.

All moment estimators work on the check-weighted residuals
``e_it = psi_tau(r_it) * r_it``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DegreesOfFreedomError, DimensionError, InvalidInputError
from .expectile import as_tau

__all__ = [
    "CLAMP_MARGIN",
    "CorrelationKind",
    "NuisanceEstimates",
    "WorkingCorrelationSpec",
    "build_correlation",
    "clamp_alpha",
    "estimate_alpha",
    "estimate_sigma2",
    "raw_alpha",
]

CLAMP_MARGIN = 1e-6


class CorrelationKind(str, enum.Enum):
    INDEPENDENCE = "ind"
    EXCHANGEABLE = "exc"
    AR1 = "ar1"
    UNSTRUCTURED = "un"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "ind": cls.INDEPENDENCE, "independence": cls.INDEPENDENCE, "independent": cls.INDEPENDENCE,
            "exc": cls.EXCHANGEABLE, "exchangeable": cls.EXCHANGEABLE,
            "ar1": cls.AR1, "ar": cls.AR1, "autoregressive": cls.AR1,
            "un": cls.UNSTRUCTURED, "unstructured": cls.UNSTRUCTURED,
        }
        try:
            return aliases[key]
        except KeyError:
            raise InvalidInputError(f"unknown correlation structure {value!r}") from None

    @property
    def label(self):
        return {"ind": "Ind", "exc": "Exc", "ar1": "AR1", "un": "Un"}[self.value]


STRUCTURE_ORDER = (CorrelationKind.INDEPENDENCE, CorrelationKind.EXCHANGEABLE,
                   CorrelationKind.AR1, CorrelationKind.UNSTRUCTURED)


@dataclass(frozen=True)
class WorkingCorrelationSpec:
    """A working correlation structure with its parameter.

    ``alpha`` is a scalar for exchangeable and AR1, a symmetric
    ``max_cluster_size x max_cluster_size`` table with unit diagonal
    (indexed by occasion position) for unstructured, and ignored for
    independence.
    """

    kind: CorrelationKind
    alpha: object = 0.0
    max_cluster_size: int = 1

    def __post_init__(self):
        kind = CorrelationKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        M = int(self.max_cluster_size)
        if M < 1:
            raise InvalidInputError("max_cluster_size must be positive")
        if kind is CorrelationKind.UNSTRUCTURED:
            table = np.eye(M) if np.ndim(self.alpha) == 0 else np.array(self.alpha, dtype=float)
            if table.shape != (M, M):
                raise InvalidInputError(f"unstructured table must be {M}x{M}")
            off = table[~np.eye(M, dtype=bool)]
            if (not np.allclose(table, table.T, atol=0, rtol=0) or not np.all(np.diag(table) == 1.0)
                    or np.any(np.abs(off) >= 1.0)):
                raise InvalidInputError("unstructured table must be symmetric, unit diagonal, |entries| < 1")
            table.setflags(write=False)
            object.__setattr__(self, "alpha", table)
        else:
            a = float(self.alpha)
            if kind is CorrelationKind.EXCHANGEABLE:
                lower = -1.0 / (M - 1) if M > 1 else -np.inf
                if not (lower < a < 1.0):
                    raise InvalidInputError(f"exchangeable alpha must lie in ({lower}, 1), got {a}")
            elif kind is CorrelationKind.AR1 and not abs(a) < 1.0:
                raise InvalidInputError(f"AR1 alpha must satisfy |alpha| < 1, got {a}")
            object.__setattr__(self, "alpha", a)


@dataclass(frozen=True)
class NuisanceEstimates:
    sigma2: float
    alpha: object
    dof_used: dict = field(default_factory=dict)
    raw_alpha: object = None
    clamped: bool = False


def build_correlation(spec: WorkingCorrelationSpec, m_i=None, positions=None):
    """Working correlation matrix for a cluster.

    Either the cluster size ``m_i`` (positions ``1..m_i``) or the explicit
    1-based occasion ``positions`` must be given.
    """
    if positions is None:
        if m_i is None:
            raise InvalidInputError("give m_i or positions")
        positions = np.arange(1, int(m_i) + 1)
    pos = np.asarray(positions, dtype=int)
    m = pos.size
    kind = spec.kind
    if kind is CorrelationKind.INDEPENDENCE:
        return np.eye(m)
    if kind is CorrelationKind.EXCHANGEABLE:
        R = np.full((m, m), spec.alpha)
        np.fill_diagonal(R, 1.0)
        return R
    if kind is CorrelationKind.AR1:
        lag = np.abs(pos[:, None] - pos[None, :])
        return np.power(spec.alpha, lag)
    if pos.max() > spec.max_cluster_size:
        raise DimensionError(f"cluster reaches position {pos.max()} but the unstructured table has "
                             f"{spec.max_cluster_size} positions")
    return spec.alpha[np.ix_(pos - 1, pos - 1)].copy()


def _residual_list(residuals):
    return [np.asarray(r, dtype=float).ravel() for r in residuals]


def estimate_sigma2(tau, residuals, p: int) -> float:
    """Scale estimate ``sum(psi(r)^2 r^2) / (N - p)``."""
    tau = as_tau(tau)
    r = np.concatenate(_residual_list(residuals))
    N = r.size
    if N - p <= 0:
        raise DegreesOfFreedomError(f"N - p = {N - p} is not positive")
    e = np.where(r > 0, tau, 1.0 - tau) * r
    return float(np.dot(e, e) / (N - p))


def _pair_sums(kind, weighted, positions, M):
    """Cross-product sums and pair counts of weighted residuals."""
    if kind is CorrelationKind.EXCHANGEABLE:
        num, pairs = 0.0, 0
        for e in weighted:
            s = e.sum()
            num += 0.5 * (s * s - np.dot(e, e))
            pairs += e.size * (e.size - 1) // 2
        return num, pairs
    if kind is CorrelationKind.AR1:
        num, pairs = 0.0, 0
        for e, pos in zip(weighted, positions):
            adjacent = np.diff(pos) == 1
            num += float(np.dot(e[:-1][adjacent], e[1:][adjacent]))
            pairs += int(adjacent.sum())
        return num, pairs
    table = np.zeros((M, M))
    for e, pos in zip(weighted, positions):
        idx = np.asarray(pos) - 1
        table[np.ix_(idx, idx)] += np.outer(e, e)
    return table, None


def raw_alpha(kind, tau, residuals, sigma2: float, p: int, positions=None, max_cluster_size=None):
    """Unclamped moment estimate of the correlation parameter.

    Divisors: ``N1 - p`` (exchangeable, ``N1 = sum m_i(m_i-1)/2``),
    ``N2 - p`` (AR1, ``N2`` = number of lag-one pairs) and ``N - p``
    (unstructured, applied to every position pair).
    """
    kind = CorrelationKind.parse(kind)
    tau = as_tau(tau)
    res = _residual_list(residuals)
    if positions is None:
        positions = [np.arange(1, r.size + 1) for r in res]
    if kind is CorrelationKind.INDEPENDENCE:
        return 0.0, {}
    if not sigma2 > 0:
        raise InvalidInputError("sigma2 must be positive")
    weighted = [np.where(r > 0, tau, 1.0 - tau) * r for r in res]
    N = sum(r.size for r in res)
    M = int(max_cluster_size or max(int(np.max(pos)) for pos in positions))
    num, pairs = _pair_sums(kind, weighted, positions, M)
    if kind is CorrelationKind.UNSTRUCTURED:
        div = N - p
        if div <= 0:
            raise DegreesOfFreedomError(f"N - p = {div} is not positive")
        table = num / (div * sigma2)
        np.fill_diagonal(table, 1.0)
        return table, {"N-p": div}
    div = pairs - p
    name = "N1-p" if kind is CorrelationKind.EXCHANGEABLE else "N2-p"
    if div <= 0:
        raise DegreesOfFreedomError(f"{name} = {div} is not positive")
    return float(num / (div * sigma2)), {name: div}


def clamp_alpha(kind, alpha, max_cluster_size: int):
    """Pull a moment estimate into the positive-definite range; returns ``(alpha, clamped)``."""
    kind = CorrelationKind.parse(kind)
    if kind is CorrelationKind.INDEPENDENCE:
        return 0.0, False
    if kind is CorrelationKind.UNSTRUCTURED:
        table = np.array(alpha, dtype=float)
        off = ~np.eye(table.shape[0], dtype=bool)
        bound = 1.0 - CLAMP_MARGIN
        clamped = bool(np.any(np.abs(table[off]) > bound))
        table[off] = np.clip(table[off], -bound, bound)
        return table, clamped
    a = float(alpha)
    hi = 1.0 - CLAMP_MARGIN
    if kind is CorrelationKind.EXCHANGEABLE:
        lo = -1.0 / (max_cluster_size - 1) + CLAMP_MARGIN if max_cluster_size > 1 else -hi
    else:
        lo = -hi
    out = min(max(a, lo), hi)
    return out, out != a


def estimate_alpha(kind, tau, residuals, sigma2: float, p: int, positions=None, max_cluster_size=None):
    """Moment estimate of the correlation parameter, clamped into the valid range."""
    res = _residual_list(residuals)
    if positions is None:
        positions = [np.arange(1, r.size + 1) for r in res]
    M = int(max_cluster_size or max(int(np.max(pos)) for pos in positions))
    alpha, _ = raw_alpha(kind, tau, res, sigma2, p, positions, M)
    return clamp_alpha(kind, alpha, M)[0]
