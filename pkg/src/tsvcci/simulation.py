"""
Coverage study for TSVC confidence intervals.

Three Gaussian data generating processes with X1, X2 ~ N(0, 1) and
X3 ~ Bernoulli(0.5):

* ``linear``:  mu = 0.25 x1 (covariates X1, X2);
* ``varying``: mu = 0.5 I(x2 <= 0.5 and x3 = 1) x1 - I(x2 > 0.5) x1;
* ``varying_known_modifiers``: as ``varying`` but only X2 and X3 may act as
  modifiers (X1 by X2 or X3, X2 by X3, X3 by X2).

Each replication draws data, fits TSVC (S = 5, BIC pruning), computes the
best approximating coefficients of the selected structure from the known
mean, and records whether each requested interval covers them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from .data import Dataset
from .inference import (
    Method,
    best_approximating_coefficients,
    calibrated_cis,
    calibration_bootstrap,
    adjusted_alpha,
    parametric_bootstrap,
    percentile_cis,
    wald_ci,
)
from .parallel import pmap, stream
from .tsvc import TsvcConfig, fit_tsvc

__all__ = [
    "Scenario",
    "ScenarioSpec",
    "ReplicationRecord",
    "CoefficientRecord",
    "CoverageReport",
    "true_mean",
    "generate_scenario",
    "run_replication",
    "coverage_summary",
    "split_count_summary",
    "summarize",
    "run_study",
]

_DATA = 0


class Scenario(str, enum.Enum):
    LINEAR = "linear"
    VARYING = "varying"
    KNOWN_MODIFIERS = "varying_known_modifiers"


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: Scenario
    n: int
    sigma: float = 1.0
    seed: object = 0
    max_splits: int = 5
    min_node_size: int = 5

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.n < 2:
            raise ValueError("n must be >= 2")

    @property
    def p(self) -> int:
        return 2 if self.scenario is Scenario.LINEAR else 3

    def label(self) -> str:
        return f"{self.scenario.value}_n{self.n}_sigma{self.sigma:g}"


def true_mean(scenario, x) -> np.ndarray:
    """Conditional mean of the outcome for covariate rows `x`."""
    scenario = Scenario(scenario)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if scenario is Scenario.LINEAR:
        return 0.25 * x[:, 0]
    low = (x[:, 1] <= 0.5) & (x[:, 2] == 1)
    high = x[:, 1] > 0.5
    return 0.5 * low * x[:, 0] - high * x[:, 0]


def scenario_config(spec: ScenarioSpec) -> TsvcConfig:
    modifiers = None
    if spec.scenario is Scenario.KNOWN_MODIFIERS:
        modifiers = {0: (1, 2), 1: (2,), 2: (1,)}
    return TsvcConfig(max_splits=spec.max_splits, min_node_size=spec.min_node_size,
                      modifiers=modifiers)


def generate_scenario(spec: ScenarioSpec):
    """Draw one dataset.

    Returns
    -------
    dataset : Dataset
    mu : ndarray
        True conditional mean at the drawn covariates.
    config : TsvcConfig
    """
    rng = stream(spec.seed, _DATA)
    n = spec.n
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n)
    if spec.scenario is Scenario.LINEAR:
        x = np.column_stack([x1, x2])
        kinds = ("continuous", "continuous")
    else:
        x3 = (rng.random(n) < 0.5).astype(float)
        x = np.column_stack([x1, x2, x3])
        kinds = ("continuous", "continuous", "binary")
    mu = true_mean(spec.scenario, x)
    y = mu + spec.sigma * rng.standard_normal(n)
    names = tuple(f"X{j + 1}" for j in range(x.shape[1]))
    dataset = Dataset(y, x, names, kinds)
    return dataset, mu, scenario_config(spec).resolve(dataset)


@dataclass
class CoefficientRecord:
    covariate: int
    partition: int
    estimate: float
    target: float
    intervals: dict = field(default_factory=dict)

    def covered(self, method, level) -> bool:
        lo, hi = self.intervals[(Method(method), level)]
        return bool(lo <= self.target <= hi)


@dataclass
class ReplicationRecord:
    replicate: int
    n_splits: int = 0
    split_pairs: dict = field(default_factory=dict)
    coefficients: list = field(default_factory=list)
    adjusted_alpha: dict = field(default_factory=dict)
    failed_fits: dict = field(default_factory=dict)
    error: str = None

    def leaf_counts(self) -> dict:
        out = {}
        for c in self.coefficients:
            out[c.covariate] = out.get(c.covariate, 0) + 1
        return out


def run_replication(spec: ScenarioSpec, methods=(Method.WALD, Method.PERCENTILE), B=200,
                    levels=(0.95,), replicate_seed=None, replicate=0, n_jobs=1) -> ReplicationRecord:
    """Simulate, fit and score one replication.

    `replicate_seed` (int or tuple of ints) seeds the data and both bootstraps;
    it defaults to ``spec.seed``.
    """
    seed = spec.seed if replicate_seed is None else replicate_seed
    spec = replace(spec, seed=seed)
    methods = [Method(m) for m in methods]
    record = ReplicationRecord(replicate)
    try:
        dataset, mu, config = generate_scenario(spec)
        model = fit_tsvc(dataset, config)
        target = best_approximating_coefficients(model.structure, mu, dataset, config)
    except Exception as exc:  # recorded and excluded from the summaries
        record.error = f"{type(exc).__name__}: {exc}"
        return record
    record.n_splits = model.splits_performed
    record.split_pairs = model.structure.split_pairs()
    coefs = {}
    for j, m, est, _ in model.coefficient_table():
        coefs[(j, m)] = CoefficientRecord(j, m, est, float(target[j][m]))

    def add(cis):
        for ci in cis:
            coefs[(ci.covariate, ci.partition)].intervals[(ci.method, ci.level)] = (ci.lower, ci.upper)

    if Method.WALD in methods:
        for level in levels:
            add(wald_ci(model, level))
    if Method.PERCENTILE in methods:
        run = parametric_bootstrap(model, dataset, B, seed, config, n_jobs)
        record.failed_fits[Method.PERCENTILE] = run.failed_fits
        for level in levels:
            add(percentile_cis(model, run, level))
    if Method.CALIBRATED in methods:
        calib = calibration_bootstrap(model, dataset, B, seed, config, n_jobs)
        record.failed_fits[Method.CALIBRATED] = calib.failed_fits
        for level in levels:
            record.adjusted_alpha[level] = adjusted_alpha(calib, level)
            add(calibrated_cis(model, calib, level))
    record.coefficients = list(coefs.values())
    return record


def coverage_summary(records, method, level, p=None):
    """Per-covariate coverage C_j and their mean C_av.

    C_j averages, over replications, the fraction of that replication's
    coefficients of covariate j whose interval covers the target.

    Returns
    -------
    c_j : ndarray, shape (p,)
    c_av : float
    """
    method = Method(method)
    records = [r for r in records if r.error is None]
    if p is None:
        p = 1 + max(c.covariate for r in records for c in r.coefficients)
    totals = np.zeros(p)
    counts = np.zeros(p)
    for r in records:
        flags = {}
        for c in r.coefficients:
            flags.setdefault(c.covariate, []).append(c.covered(method, level))
        for j, f in flags.items():
            totals[j] += np.mean(f)
            counts[j] += 1
    with np.errstate(invalid="ignore"):
        c_j = totals / counts
    return c_j, float(np.mean(c_j))


def split_count_summary(records, p=None):
    """Average number of splits per (covariate, modifier) pair and in total."""
    records = [r for r in records if r.error is None]
    R = len(records)
    pairs = {}
    if p is not None:
        pairs = {(j, k): 0.0 for j in range(p) for k in range(p) if j != k}
    for r in records:
        for key, v in r.split_pairs.items():
            pairs[key] = pairs.get(key, 0.0) + v / R
    total = float(np.mean([r.n_splits for r in records])) if R else 0.0
    return {"pairs": dict(sorted(pairs.items())), "total": total}


@dataclass
class CoverageReport:
    spec: ScenarioSpec
    replications: int
    excluded: int
    coverage: dict
    splits: dict
    adjusted_alpha: dict
    names: tuple
    B: int = 0
    failed_fits: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    def c_av(self, method, level) -> float:
        return self.coverage[(Method(method), level)]["C_av"]

    def c_j(self, method, level) -> list:
        return self.coverage[(Method(method), level)]["C_j"]

    def to_dict(self) -> dict:
        spec = self.spec
        return {
            "scenario": spec.scenario.value,
            "n": spec.n,
            "sigma": spec.sigma,
            "R": self.replications,
            "excluded": self.excluded,
            "B": self.B,
            "covariates": list(self.names),
            "coverage": [
                {"method": m.value, "level": lvl, "C_j": list(v["C_j"]), "C_av": v["C_av"]}
                for (m, lvl), v in self.coverage.items()
            ],
            "splits": {
                "total": self.splits["total"],
                "pairs": [{"covariate": self.names[j], "modifier": self.names[k], "mean": v}
                          for (j, k), v in self.splits["pairs"].items()],
            },
            "adjusted_alpha": [
                {"level": lvl, "per_covariate": list(v["per_covariate"]), "average": v["average"]}
                for lvl, v in self.adjusted_alpha.items()
            ],
            "failed_fits": {m.value: v for m, v in self.failed_fits.items()},
            "errors": self.errors,
        }


def summarize(spec: ScenarioSpec, records, methods, levels, B=0) -> CoverageReport:
    p = spec.p
    ok = [r for r in records if r.error is None]
    coverage = {}
    for method in methods:
        for level in levels:
            c_j, c_av = coverage_summary(ok, method, level, p) if ok else (np.full(p, np.nan), math.nan)
            coverage[(Method(method), level)] = {"C_j": [float(c) for c in c_j], "C_av": c_av}
    alphas = {}
    for level in levels:
        per = [r.adjusted_alpha[level] for r in ok if level in r.adjusted_alpha]
        if per:
            by_j = [float(np.mean([a[j] for a in per])) for j in range(p)]
            alphas[level] = {"per_covariate": by_j, "average": float(np.mean(by_j))}
    failed = {}
    for r in ok:
        for m, v in r.failed_fits.items():
            failed[m] = failed.get(m, 0) + v
    names = tuple(f"X{j + 1}" for j in range(p))
    return CoverageReport(spec, len(ok), len(records) - len(ok), coverage,
                          split_count_summary(ok, p), alphas, names, B, failed,
                          [f"replicate {r.replicate}: {r.error}" for r in records if r.error])


def _study_task(task, specs, methods, B, levels, master_seed):
    cell, r = task
    return run_replication(specs[cell], methods, B, levels, (master_seed, cell, r), r)


def run_study(specs, R, methods=(Method.WALD, Method.PERCENTILE), B=200, levels=(0.95,),
              master_seed=0, n_jobs=1, return_records=False):
    """Run R replications for every grid cell.

    Replication r of cell c is seeded by ``(master_seed, c, r)``, so the
    result does not depend on `n_jobs`.

    Returns
    -------
    reports : list of CoverageReport, one per spec
    records : list of lists of ReplicationRecord (only with `return_records`)
    """
    if isinstance(specs, ScenarioSpec):
        specs = [specs]
    specs = list(specs)
    methods = tuple(Method(m) for m in methods)
    levels = tuple(levels)
    tasks = [(c, r) for c in range(len(specs)) for r in range(R)]
    work = partial(_study_task, specs=specs, methods=methods, B=B, levels=levels,
                   master_seed=master_seed)
    results = pmap(work, tasks, n_jobs)
    by_cell = [results[c * R:(c + 1) * R] for c in range(len(specs))]
    reports = [summarize(spec, recs, methods, levels, B) for spec, recs in zip(specs, by_cell)]
    if return_records:
        return reports, by_cell
    return reports
