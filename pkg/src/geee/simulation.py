"""Monte-Carlo study of GEEE estimators under Gaussian-copula AR1 errors.

Data follow ``y_it = b0 + x_it b1 + (1 + gamma x_it) eps_it`` where the
errors within a subject are dependent through a Gaussian copula with AR1
correlation ``rho`` and are centered on their ``tau``-expectile, so the
true coefficients at every ``tau`` are ``(b0, b1)``.

Every replication draws one random stream from ``(seed, replicate_index)``;
all levels and structures of a replication are fitted to the same draws.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .correlation import STRUCTURE_ORDER, CorrelationKind
from .data import LongitudinalDataset
from .errors import GeeeError, InvalidInputError
from .expectile import ChiSquare, Normal, StudentT, as_tau, distribution_expectile
from .fit import FitControl, fit_geee
from .inference import sandwich_general
from .selection import QicEntry, qic_from_fit, select_from_entries

__all__ = [
    "MetricRow",
    "ScenarioResult",
    "ScenarioSample",
    "SimulationScenario",
    "generate_scenario_data",
    "parse_marginal",
    "qic_frequency_study",
    "run_study",
]

log = logging.getLogger(__name__)

GRID_GAMMAS = (0.0, 0.1)
GRID_RHOS = (0.1, 0.5, 0.9)
GRID_NS = (50, 100)
GRID_TAUS = (0.25, 0.5, 0.75)


def parse_marginal(value):
    """Parse ``normal``, ``t3`` or ``chisq3`` (any df) into a marginal law."""
    if isinstance(value, (Normal, StudentT, ChiSquare)):
        return value
    key = str(value).strip().lower().replace("_", "").replace("-", "")
    if key in ("normal", "n", "gaussian"):
        return Normal(0.0, 1.0)
    for prefix, cls in (("studentt", StudentT), ("student", StudentT), ("t", StudentT),
                        ("chisquare", ChiSquare), ("chisq", ChiSquare), ("chi2", ChiSquare)):
        if key.startswith(prefix):
            rest = key[len(prefix):]
            try:
                return cls(float(rest) if rest else 3.0)
            except ValueError:
                break
    raise InvalidInputError(f"unknown marginal law {value!r}")


def marginal_label(marginal):
    if isinstance(marginal, Normal):
        return "N" if (marginal.mean, marginal.var) == (0.0, 1.0) else f"N({marginal.mean:g},{marginal.var:g})"
    if isinstance(marginal, StudentT):
        return f"T{marginal.df:g}"
    return f"Chi2_{marginal.df:g}"


@dataclass(frozen=True)
class SimulationScenario:
    """One cell of the simulation design.

    ``design`` is ``"balanced"`` (every subject has ``m`` occasions) or
    ``"unbalanced"`` (``m_i`` uniform on ``m_range`` inclusive).  Values
    outside the reference grid are refused unless ``extended`` is set.

    The regressor is ``Normal(0, covariate_sd**2)`` when ``gamma == 0`` and
    ``ChiSquare(covariate_df)`` otherwise.  The default standard deviation of
    5 gives slope standard deviations near ``1 / sqrt(25 N)`` in the
    location-shift design.
    """

    gamma: float = 0.0
    marginal: object = Normal()
    rho: float = 0.5
    n: int = 100
    design: str = "balanced"
    m: int = 4
    m_range: tuple = (3, 8)
    replications: int = 100
    taus: tuple = GRID_TAUS
    seed: int = 20240611
    structures: tuple = STRUCTURE_ORDER
    covariate_df: float = 3.0
    covariate_sd: float = 5.0
    beta0: float = 0.0
    beta1: float = 0.0
    extended: bool = False

    def __post_init__(self):
        object.__setattr__(self, "marginal", parse_marginal(self.marginal))
        object.__setattr__(self, "taus", tuple(as_tau(t) for t in self.taus))
        object.__setattr__(self, "structures", tuple(CorrelationKind.parse(s) for s in self.structures))
        object.__setattr__(self, "m_range", tuple(int(v) for v in self.m_range))
        design = str(self.design).lower()
        object.__setattr__(self, "design", design)
        problems = []
        if int(self.replications) < 1:
            problems.append("replications must be at least 1")
        if design not in ("balanced", "unbalanced"):
            problems.append(f"design must be balanced or unbalanced, got {self.design!r}")
        if not -1.0 < float(self.rho) < 1.0:
            problems.append("rho must lie in (-1, 1)")
        if int(self.n) < 2 or int(self.m) < 1 or self.m_range[0] < 1 or self.m_range[1] < self.m_range[0]:
            problems.append("n, m and m_range must describe a non-empty panel")
        if not (float(self.covariate_sd) > 0 and float(self.covariate_df) > 0):
            problems.append("covariate_sd and covariate_df must be positive")
        if not self.structures:
            problems.append("at least one structure is required")
        if not (0 <= int(self.seed) < 2 ** 64):
            problems.append("seed must be a 64-bit unsigned integer")
        if not self.extended:
            if float(self.gamma) not in GRID_GAMMAS:
                problems.append(f"gamma must be one of {GRID_GAMMAS} (set extended to override)")
            if float(self.rho) not in GRID_RHOS:
                problems.append(f"rho must be one of {GRID_RHOS} (set extended to override)")
            if int(self.n) not in GRID_NS:
                problems.append(f"n must be one of {GRID_NS} (set extended to override)")
            if not set(self.taus) <= set(GRID_TAUS):
                problems.append(f"taus must be drawn from {GRID_TAUS} (set extended to override)")
            if design == "balanced" and int(self.m) != 4:
                problems.append("balanced design uses m = 4 (set extended to override)")
            if design == "unbalanced" and self.m_range != (3, 8):
                problems.append("unbalanced design uses m_range = (3, 8) (set extended to override)")
            if self.marginal not in (Normal(), StudentT(3.0), ChiSquare(3.0)):
                problems.append("marginal must be normal, t3 or chisq3 (set extended to override)")
        if problems:
            raise InvalidInputError("; ".join(problems))

    @property
    def label(self):
        return (f"gamma={self.gamma:g} marginal={marginal_label(self.marginal)} rho={self.rho:g} "
                f"n={self.n} design={self.design}")


@dataclass(frozen=True)
class ScenarioSample:
    datasets: dict          # tau -> LongitudinalDataset
    true_beta: dict         # tau -> array (b0_tau, b1_tau)
    x: list
    raw_errors: list
    centering: dict         # tau -> expectile of the marginal law


def _copula_errors(rng, sizes, rho, marginal):
    M = int(max(sizes))
    lag = np.abs(np.subtract.outer(np.arange(M), np.arange(M)))
    L = np.linalg.cholesky(np.power(float(rho), lag))
    z = np.concatenate([L[:m, :m] @ rng.standard_normal(m) for m in sizes])
    # upper tail through the survival function keeps u away from 1
    lower = stats.norm.cdf(np.minimum(z, 0.0))
    upper = stats.norm.sf(np.maximum(z, 0.0))
    e = np.where(z <= 0, marginal.ppf(lower), marginal.isf(upper))
    return np.split(e, np.cumsum(sizes)[:-1])


def generate_scenario_data(scenario: SimulationScenario, replicate_index: int) -> ScenarioSample:
    """Draw one replication: covariates, copula errors, and one dataset per ``tau``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(scenario.seed), int(replicate_index)]))
    n = int(scenario.n)
    if scenario.design == "balanced":
        sizes = np.full(n, int(scenario.m))
    else:
        lo, hi = scenario.m_range
        sizes = rng.integers(lo, hi + 1, size=n)
    if float(scenario.gamma) == 0.0:
        x = [scenario.covariate_sd * rng.standard_normal(m) for m in sizes]
    else:
        x = [rng.chisquare(scenario.covariate_df, size=m) for m in sizes]
    raw = _copula_errors(rng, sizes, scenario.rho, scenario.marginal)
    Xs = [np.column_stack([np.ones(m), xi]) for m, xi in zip(sizes, x)]

    datasets, truth, centering = {}, {}, {}
    base = None
    for tau in scenario.taus:
        shift = distribution_expectile(tau, scenario.marginal)
        ys = [scenario.beta0 + xi * scenario.beta1 + (1.0 + scenario.gamma * xi) * (ei - shift)
              for xi, ei in zip(x, raw)]
        if base is None:
            base = LongitudinalDataset(ys, Xs)
            datasets[tau] = base
        else:
            datasets[tau] = base.with_responses(ys)
        centering[tau] = shift
        truth[tau] = np.array([scenario.beta0, scenario.beta1])
    return ScenarioSample(datasets, truth, x, raw, centering)


@dataclass(frozen=True)
class MetricRow:
    tau: float
    structure: CorrelationKind
    bias: float
    eff: float
    sd: float | None
    se: float
    rmse: float
    replications_used: int
    nonconverged: int


@dataclass(frozen=True)
class ScenarioResult:
    scenario: SimulationScenario
    rows: tuple
    qic_selection_counts: dict
    true_coefficients: dict
    failed_replications: int = 0
    failure_messages: tuple = ()
    estimates: dict = field(default_factory=dict, repr=False)

    def row(self, tau, structure):
        kind = CorrelationKind.parse(structure)
        for r in self.rows:
            if r.tau == tau and r.structure is kind:
                return r
        raise KeyError((tau, kind))


def _one_replication(scenario, index, control):
    """Fit every (tau, structure) of one replication.

    Returns ``(estimates, selected, error)`` where ``estimates`` maps
    ``(tau, kind)`` to ``(slope, slope_se, converged)``.
    """
    try:
        sample = generate_scenario_data(scenario, index)
        estimates = {}
        qic_totals = {kind: 0.0 for kind in scenario.structures}
        qic_ok = {kind: True for kind in scenario.structures}
        for tau in scenario.taus:
            data = sample.datasets[tau]
            for kind in scenario.structures:
                fit = fit_geee(data, tau, kind, control)
                cov = sandwich_general(fit, data)
                estimates[(tau, kind)] = (float(fit.blocks[0].beta[1]), float(cov.se[1]), fit.converged)
                entry = qic_from_fit(fit.with_vcov(cov.vcov), data)
                qic_totals[kind] += entry.qic
                qic_ok[kind] &= fit.converged
        entries = [QicEntry(k, qic_totals[k], math.nan, math.nan, qic_ok[k]) for k in scenario.structures]
        selected = select_from_entries(entries).selected
        return estimates, selected, None
    except (GeeeError, np.linalg.LinAlgError) as exc:
        return None, None, f"replication {index}: {exc}"


def _replication_task(args):
    return _one_replication(*args)


def run_study(scenario: SimulationScenario, control: FitControl | None = None, jobs: int = 1) -> ScenarioResult:
    """Run all replications of a scenario and aggregate the slope metrics.

    Bias is the mean slope error, SD the replication standard deviation,
    SE the mean sandwich standard error, EFF the ratio of the independence
    MSE to the structure's MSE.  A replication in which any fit raises is
    dropped and counted; non-converged fits are kept and counted.
    """
    control = control or FitControl()
    tasks = [(scenario, r, control) for r in range(int(scenario.replications))]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_replication_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        outcomes = [_replication_task(t) for t in tasks]

    counts = {kind: 0 for kind in scenario.structures}
    failures = []
    collected = {(tau, kind): [] for tau in scenario.taus for kind in scenario.structures}
    for estimates, selected, error in outcomes:
        if error is not None:
            failures.append(error)
            continue
        if selected is not None:
            counts[selected] += 1
        for key, value in estimates.items():
            collected[key].append(value)

    truth = {tau: np.array([scenario.beta0, scenario.beta1]) for tau in scenario.taus}
    rows = []
    est_arrays = {}
    for tau in scenario.taus:
        mse_ind = None
        stats_by_kind = {}
        for kind in scenario.structures:
            vals = collected[(tau, kind)]
            if not vals:
                continue
            est = np.array([v[0] for v in vals])
            se = np.array([v[1] for v in vals])
            err = est - truth[tau][1]
            mse = float(np.mean(err ** 2))
            stats_by_kind[kind] = (est, se, err, mse, sum(not v[2] for v in vals))
            est_arrays[(tau, kind)] = est
            if kind is CorrelationKind.INDEPENDENCE:
                mse_ind = mse
        for kind, (est, se, err, mse, nonconv) in stats_by_kind.items():
            if kind is CorrelationKind.INDEPENDENCE:
                eff = 1.0
            elif mse_ind is None or mse == 0.0:
                eff = math.nan
            else:
                eff = mse_ind / mse
            sd = float(np.std(est, ddof=1)) if est.size > 1 else None
            rows.append(MetricRow(tau, kind, float(np.mean(err)), eff, sd, float(np.mean(se)),
                                  math.sqrt(mse), int(est.size), int(nonconv)))
    if failures:
        log.warning("%s: %d replications failed", scenario.label, len(failures))
    return ScenarioResult(scenario, tuple(rows), counts, truth, len(failures), tuple(failures), est_arrays)


def qic_frequency_study(scenarios, control: FitControl | None = None, jobs: int = 1, results=None):
    """Selection counts pooled over ``rho`` for each (gamma, marginal, design, n) cell.

    ``results`` may carry already computed :class:`ScenarioResult` objects
    for the same scenarios to avoid refitting.
    """
    if results is None:
        results = [run_study(s, control, jobs) for s in scenarios]
    table = {}
    for res in results:
        s = res.scenario
        key = (float(s.gamma), marginal_label(s.marginal), s.design, int(s.n))
        cell = table.setdefault(key, {kind: 0 for kind in STRUCTURE_ORDER})
        for kind, c in res.qic_selection_counts.items():
            cell[kind] += c
    return table
