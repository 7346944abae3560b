"""Quasi-likelihood information criterion for choosing a working correlation.

    QIC(R) = 1/2 sum_k sum_it r_itk^2 / sigma2_k + 2 tr(Omega_I V_R)

``V_R`` is the robust covariance of the fit under ``R``.  ``Omega_I`` is the
inverse of the model-based covariance of the independence estimating
equations evaluated at the estimate obtained under ``R``: per level,
``B^-1 A B^-1`` with ``B = X' Psi X / sigma2`` and ``A = X' X / sigma2``.
Both matrices are block diagonal over levels, so only the diagonal blocks
of ``V_R`` enter the trace.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .correlation import STRUCTURE_ORDER, CorrelationKind
from .data import LongitudinalDataset
from .errors import GeeeError, InvalidInputError, RankError
from .expectile import AsymmetrySequence
from .fit import FitControl, GeeeFit, fit_multi
from .inference import sandwich_general

__all__ = ["QicEntry", "QicReport", "independence_information", "qic", "qic_from_fit", "select_structure"]


@dataclass(frozen=True)
class QicEntry:
    structure: CorrelationKind
    qic: float
    quasi_likelihood: float
    penalty: float
    converged: bool = True


@dataclass(frozen=True)
class QicReport:
    entries: tuple
    selected: CorrelationKind | None
    failures: dict = field(default_factory=dict)

    def value(self, structure):
        kind = CorrelationKind.parse(structure)
        for e in self.entries:
            if e.structure is kind:
                return e.qic
        raise KeyError(kind)


def quasi_likelihood_term(fit: GeeeFit) -> float:
    total = 0.0
    for b in fit.blocks:
        if not b.nuisance.sigma2 > 0:
            raise InvalidInputError("QIC is undefined when the scale estimate is zero")
        total += 0.5 * float(np.dot(b.residuals, b.residuals)) / b.nuisance.sigma2
    return total


def independence_information(fit: GeeeFit, data: LongitudinalDataset):
    """``Omega_I``: inverse model-based independence covariance at the fit's estimates."""
    p = data.p
    X = data.X
    XtX = X.T @ X
    omega = np.zeros((p * fit.q, p * fit.q))
    for k, b in enumerate(fit.blocks):
        r = b.residuals
        XPX = (X * np.where(r > 0, b.tau, 1.0 - b.tau)[:, None]).T @ X
        try:
            middle = linalg.solve(XtX, XPX, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise RankError("independence information matrix is singular") from exc
        sl = slice(k * p, (k + 1) * p)
        omega[sl, sl] = XPX @ middle / b.nuisance.sigma2
    return omega


def qic_from_fit(fit: GeeeFit, data: LongitudinalDataset) -> QicEntry:
    quasi = quasi_likelihood_term(fit)
    vcov = fit.vcov if fit.vcov is not None else sandwich_general(fit, data).vcov
    omega = independence_information(fit, data)
    penalty = 2.0 * float(np.trace(omega @ vcov))
    return QicEntry(fit.structure, quasi + penalty, quasi, penalty, fit.converged)


def qic(data: LongitudinalDataset, taus, structure, control: FitControl | None = None) -> QicEntry:
    """Fit ``structure`` at ``taus`` (scalar or sequence) and return its QIC entry."""
    if not isinstance(taus, AsymmetrySequence):
        taus = AsymmetrySequence(tuple(np.atleast_1d(taus)))
    fit = fit_multi(data, taus, structure, control)
    return qic_from_fit(fit, data)


def select_from_entries(entries, failures=None) -> QicReport:
    """Pick the minimal QIC among converged fits.

    Ties go to the earlier structure in Ind, Exc, AR1, Un order.
    """
    failures = dict(failures or {})
    for e in entries:
        if not e.converged:
            failures.setdefault(e.structure, "fit did not converge")
    ordered = sorted(entries, key=lambda e: STRUCTURE_ORDER.index(e.structure))
    best = None
    for e in ordered:
        if e.converged and np.isfinite(e.qic) and (best is None or e.qic < best.qic):
            best = e
    return QicReport(tuple(ordered), best.structure if best else None, failures)


def select_structure(data: LongitudinalDataset, taus, candidates=STRUCTURE_ORDER,
                     control: FitControl | None = None) -> QicReport:
    """QIC of every candidate structure and the minimizing one.

    A candidate whose fit raises is reported in ``failures`` and skipped.
    """
    entries, failures = [], {}
    for c in candidates:
        kind = CorrelationKind.parse(c)
        try:
            entries.append(qic(data, taus, kind, control))
        except GeeeError as exc:
            failures[kind] = str(exc)
    return select_from_entries(entries, failures)
