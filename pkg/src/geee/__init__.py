"""Generalized expectile estimating equations for longitudinal data."""

from .correlation import CorrelationKind, NuisanceEstimates, WorkingCorrelationSpec, build_correlation, estimate_alpha, estimate_sigma2
from .data import LongitudinalDataset
from .errors import DegreesOfFreedomError, DimensionError, GeeeError, InvalidInputError, NumericalError, RankError
from .expectile import (Asymmetry, AsymmetrySequence, ChiSquare, Normal, StudentT, and_density, check_weight,
                        distribution_expectile, loss, sample_expectile)
from .fit import FitControl, GeeeFit, TauFit, fit_geee, fit_independence, fit_multi
from .inference import (SandwichCovariance, WaldRow, normal_interval, robust_covariance, sandwich_general, sandwich_independence,
                        wald_interval)
from .selection import QicEntry, QicReport, qic, qic_from_fit, select_structure
from .simulation import (MetricRow, ScenarioResult, ScenarioSample, SimulationScenario, generate_scenario_data,
                         qic_frequency_study, run_study)

__version__ = "0.1.0"
