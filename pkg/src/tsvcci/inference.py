"""
Confidence intervals for partition-specific coefficients of a TSVC model.

Three constructions are offered:

* Wald intervals from the fitted model's standard errors, ignoring selection;
* parametric bootstrap percentile intervals, where outcomes are redrawn from
  the fitted model, the whole TSVC procedure is rerun on each draw, and each
  bootstrap model's coefficient function is averaged over the original
  partitions;
* bootstrap-calibrated Wald intervals, whose per-covariate alpha is tuned on
  nonparametric resamples.

The estimand is the best approximating coefficient vector of the selected
structure, see :func:`best_approximating_coefficients`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .glm import Family, RankDeficientError, fit_glm
from .parallel import pmap, stream
from .tsvc import (
    DegenerateDesignError,
    TsvcConfig,
    TsvcModel,
    build_design,
    fit_structure,
    fit_tsvc,
    predict,
)

__all__ = [
    "Method",
    "CoefficientCI",
    "BootstrapRun",
    "CalibrationRun",
    "wald_ci",
    "sample_parametric",
    "bootstrap_estimate",
    "percentile_interval",
    "parametric_bootstrap",
    "percentile_cis",
    "parametric_percentile_cis",
    "calibration_bootstrap",
    "alpha_grid",
    "adjusted_alpha",
    "calibrated_cis",
    "bootstrap_calibrated_cis",
    "best_approximating_coefficients",
]

# stream purposes
_PARAMETRIC = 1
_RESAMPLE = 2
ALPHA_1 = 0.0001


class Method(str, enum.Enum):
    WALD = "wald"
    PERCENTILE = "parametric_percentile"
    CALIBRATED = "bootstrap_calibrated"


@dataclass(frozen=True)
class CoefficientCI:
    covariate: int
    partition: int
    estimate: float
    lower: float
    upper: float
    level: float
    method: Method

    def covers(self, value) -> bool:
        return bool(self.lower <= value <= self.upper)


def _alpha(level) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    return 1.0 - level


def _wald_bounds(est, se, alpha):
    z = norm.ppf(1.0 - alpha / 2.0)
    return est - z * se, est + z * se


def wald_ci(model: TsvcModel, level=0.95) -> list:
    """Wald intervals estimate -/+ z_{1-alpha/2} * SE for every coefficient."""
    alpha = _alpha(level)
    out = []
    for j, m, est, se in model.coefficient_table():
        lo, hi = _wald_bounds(est, se, alpha)
        out.append(CoefficientCI(j, m, est, lo, hi, level, Method.WALD))
    return out


def sample_parametric(model: TsvcModel, dataset: Dataset, B: int, seed, start=0) -> np.ndarray:
    """Draw B outcome vectors from the fitted model with covariates held fixed.

    Row ``b`` uses the stream keyed by ``(seed, b)``; within it the i-th
    variate belongs to the i-th observation.

    Returns
    -------
    ndarray, shape (B, n)
    """
    eta, mu = predict(model, dataset.covariates)
    out = np.empty((B, dataset.n))
    for i, b in enumerate(range(start, start + B)):
        rng = stream(seed, _PARAMETRIC, b)
        if model.family is Family.GAUSSIAN:
            out[i] = eta + math.sqrt(model.residual_variance) * rng.standard_normal(dataset.n)
        else:
            out[i] = (rng.random(dataset.n) < mu).astype(float)
    return out


def bootstrap_estimate(original: TsvcModel, boot_model: TsvcModel, dataset: Dataset) -> dict:
    """Average of the bootstrap coefficient function over each original partition.

    Partition membership comes from `original`, coefficient values from
    `boot_model`. Returns a dict covariate -> array of length M_j.
    """
    x = dataset.covariates
    out = {}
    for j, coefs in original.coefficients.items():
        if boot_model.structure.trees[j] == original.structure.trees[j]:
            # the coefficient function is constant on each shared leaf
            out[j] = np.array(boot_model.coefficients[j], dtype=float)
            continue
        orig_leaf = original.structure.trees[j].assign(x)
        boot_leaf = boot_model.structure.trees[j].assign(x)
        values = boot_model.coefficients[j][boot_leaf]
        counts = np.bincount(orig_leaf, minlength=len(coefs))
        sums = np.bincount(orig_leaf, weights=values, minlength=len(coefs))
        out[j] = sums / counts
    return out


def _ranks(B, alpha):
    lo = math.floor((B + 1) * alpha / 2.0 + 1e-9)
    hi = math.ceil((B + 1) * (1.0 - alpha / 2.0) - 1e-9)
    return lo, hi


def percentile_interval(estimates, level=0.95):
    """Percentile interval from the (B+1) order-statistic rule.

    lower is the floor((B+1) alpha/2)-th and upper the
    ceil((B+1)(1-alpha/2))-th smallest estimate (1-based).
    """
    alpha = _alpha(level)
    est = np.sort(np.asarray(estimates, dtype=float))
    B = est.size
    if B < math.ceil(2.0 / alpha - 1e-9):
        raise ValueError(f"B={B} too small for level {level}; need B >= {math.ceil(2 / alpha)}")
    lo, hi = _ranks(B, alpha)
    return float(est[lo - 1]), float(est[hi - 1])


@dataclass
class BootstrapRun:
    """Parametric bootstrap estimates, one (B, M_j) array per covariate."""

    replicate_count: int
    seed: object
    estimates: dict
    failed_fits: int = 0
    splits: list = field(default_factory=list)


def _refit_tsvc(dataset, config, y):
    """Fit TSVC on new outcomes; returns (model, failed)."""
    data = dataset.with_outcome(y)
    try:
        model = fit_tsvc(data, config)
    except (RankDeficientError, DegenerateDesignError, np.linalg.LinAlgError):
        return None, True
    return model, not model.fit.converged


def _parametric_replicate(b, model, dataset, config, seed):
    y = sample_parametric(model, dataset, 1, seed, start=b)[0]
    boot, failed = _refit_tsvc(dataset, config, y)
    if boot is None:
        # fallback: the original structure refitted on the sample, else the original fit
        try:
            boot = fit_structure(dataset.with_outcome(y), model.structure, config)
        except (RankDeficientError, DegenerateDesignError, np.linalg.LinAlgError):
            boot = model
    return bootstrap_estimate(model, boot, dataset), failed, boot.structure.n_splits


def parametric_bootstrap(model: TsvcModel, dataset: Dataset, B: int = 1000, seed=0,
                         config: TsvcConfig = None, n_jobs=1) -> BootstrapRun:
    """Draw B parametric samples, refit TSVC on each and collect partition averages."""
    config = model.config if config is None else config.resolve(dataset)
    work = partial(_parametric_replicate, model=model, dataset=dataset, config=config, seed=seed)
    results = pmap(work, range(B), n_jobs)
    estimates = {j: np.array([r[0][j] for r in results]).reshape(B, len(c))
                 for j, c in model.coefficients.items()}
    return BootstrapRun(B, seed, estimates, sum(r[1] for r in results), [r[2] for r in results])


def percentile_cis(model: TsvcModel, run: BootstrapRun, level=0.95) -> list:
    out = []
    for j, coefs in model.coefficients.items():
        for m, est in enumerate(coefs):
            lo, hi = percentile_interval(run.estimates[j][:, m], level)
            out.append(CoefficientCI(j, m, float(est), lo, hi, level, Method.PERCENTILE))
    return out


def parametric_percentile_cis(model: TsvcModel, dataset: Dataset, config: TsvcConfig = None,
                              B: int = 1000, level=0.95, seed=0, n_jobs=1):
    """Parametric bootstrap percentile intervals.

    Returns
    -------
    cis : list of CoefficientCI
    run : BootstrapRun
    """
    run = parametric_bootstrap(model, dataset, B, seed, config, n_jobs)
    return percentile_cis(model, run, level), run


@dataclass
class CalibrationRun:
    """Per resample and covariate, |refit-on-original - estimate| / SE ratios.

    ``ratios[j]`` holds one array per successful resample with that
    resample's M_j entries; a coefficient's Wald interval at level alpha_k
    covers the refit value iff its ratio is <= z_{1 - alpha_k / 2}.
    """

    replicate_count: int
    seed: object
    ratios: dict
    failed_fits: int = 0


def _calibration_replicate(b, dataset, config, seed):
    rng = stream(seed, _RESAMPLE, b)
    rows = rng.integers(0, dataset.n, dataset.n)
    try:
        boot = fit_tsvc(dataset.take(rows), config)
        refit = fit_structure(dataset, boot.structure, config)
    except (RankDeficientError, DegenerateDesignError, np.linalg.LinAlgError, ValueError):
        return None
    out = {}
    for j, est in boot.coefficients.items():
        diff = np.abs(refit.coefficients[j] - est)
        se = boot.standard_errors[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[j] = np.where(se > 0, diff / se, np.where(diff > 0, np.inf, 0.0))
    return out


def calibration_bootstrap(model: TsvcModel, dataset: Dataset, B: int = 1000, seed=0,
                          config: TsvcConfig = None, n_jobs=1) -> CalibrationRun:
    """Fit TSVC on B row resamples and refit each structure on the original data."""
    config = model.config if config is None else config.resolve(dataset)
    work = partial(_calibration_replicate, dataset=dataset, config=config, seed=seed)
    results = pmap(work, range(B), n_jobs)
    ok = [r for r in results if r is not None]
    ratios = {j: [r[j] for r in ok] for j in model.coefficients}
    return CalibrationRun(B, seed, ratios, len(results) - len(ok))


def alpha_grid(alpha) -> np.ndarray:
    """Equidistant alpha_1 = 0.0001 < ... < alpha_K = alpha with K = alpha / 0.0005."""
    if math.isclose(alpha, 0.05):
        K = 100
    elif math.isclose(alpha, 0.1):
        K = 200
    else:
        K = math.ceil(alpha / 0.0005 - 1e-9)
    K = max(K, 2)
    return np.linspace(ALPHA_1, alpha, K)


def coverage_rates(ratios, alphas) -> np.ndarray:
    """gamma_k: average over resamples of the per-resample covered fraction."""
    z = norm.ppf(1.0 - np.asarray(alphas) / 2.0)
    if not ratios:
        return np.full(len(z), np.nan)
    per = np.array([np.mean(r[:, None] <= z[None, :], axis=0) for r in ratios])
    return per.mean(axis=0)


def interpolate_alpha(gamma, alphas, alpha) -> float:
    """Adjusted alpha from coverage rates gamma_k at alphas_k.

    k is the first index with gamma_k < 1 - alpha; the result interpolates
    linearly between alphas[k-1] and alphas[k]. No such k gives alpha itself;
    k = 0 gives alphas[0].
    """
    below = np.flatnonzero(np.asarray(gamma) < 1.0 - alpha)
    if below.size == 0:
        return float(alpha)
    k = int(below[0])
    if k == 0:
        return float(alphas[0])
    f = (gamma[k - 1] - 1.0 + alpha) / (gamma[k - 1] - gamma[k])
    return float((1.0 - f) * alphas[k - 1] + f * alphas[k])


def adjusted_alpha(run: CalibrationRun, level=0.95) -> dict:
    """Per-covariate calibrated alpha levels."""
    alpha = _alpha(level)
    alphas = alpha_grid(alpha)
    out = {}
    for j, ratios in run.ratios.items():
        gamma = coverage_rates(ratios, alphas)
        out[j] = alpha if np.all(np.isnan(gamma)) else interpolate_alpha(gamma, alphas, alpha)
    return out


def calibrated_cis(model: TsvcModel, run: CalibrationRun, level=0.95) -> list:
    adj = adjusted_alpha(run, level)
    out = []
    for j, m, est, se in model.coefficient_table():
        lo, hi = _wald_bounds(est, se, adj[j])
        out.append(CoefficientCI(j, m, est, lo, hi, level, Method.CALIBRATED))
    return out


def bootstrap_calibrated_cis(model: TsvcModel, dataset: Dataset, config: TsvcConfig = None,
                             B: int = 1000, level=0.95, seed=0, n_jobs=1) -> list:
    """Wald intervals at per-covariate alpha levels calibrated on row resamples."""
    run = calibration_bootstrap(model, dataset, B, seed, config, n_jobs)
    return calibrated_cis(model, run, level)


def best_approximating_coefficients(structure, true_mean, dataset: Dataset,
                                    config: TsvcConfig = None) -> dict:
    """Coefficients maximising the structure's likelihood at the true conditional mean.

    Covariates are held at their observed values; the response is replaced by
    ``true_mean``. Returns a dict covariate -> array of length M_j.
    """
    config = (config or TsvcConfig()).resolve(dataset)
    design = build_design(dataset, structure, config)
    fit = fit_glm(design, np.asarray(true_mean, dtype=float), config.family)
    out = {}
    pos = 1
    for j in config.effects(structure.p):
        mj = structure.trees[j].leaf_count
        out[j] = fit.coefficients[pos:pos + mj].copy()
        pos += mj
    return out

