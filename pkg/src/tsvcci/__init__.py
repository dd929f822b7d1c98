"""Tree-structured varying coefficient models with selective confidence intervals."""

from .data import DataError, Dataset, SurvivalSchema, expand_discrete_hazard, load_csv
from .glm import Family, GlmFit, RankDeficientError, fit_glm
from .inference import (
    CoefficientCI,
    Method,
    best_approximating_coefficients,
    bootstrap_calibrated_cis,
    parametric_percentile_cis,
    wald_ci,
)
from .serialize import deserialize_model, render_tree, serialize_model
from .simulation import Scenario, ScenarioSpec, generate_scenario, run_study
from .tree import ModelStructure, PartitionTree, SplitRule
from .tsvc import TsvcConfig, TsvcModel, fit_structure, fit_tsvc, predict, select_best_split

__version__ = "0.1.0"
