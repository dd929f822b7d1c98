"""
Tree-structured varying coefficient models.

The linear predictor is

    eta(x) = b0 + sum_j beta_j(x[-j]) * x_j,

where every beta_j is piecewise constant over the leaves of a partition tree
grown on the other covariates. Trees are grown jointly and greedily: at each
step every (covariate, leaf, modifier, threshold) candidate is refitted with
all coefficients free and the one with the smallest deviance is kept. The
resulting nested sequence is pruned by BIC with a penalty of log(n) per split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .data import Dataset
from .glm import Family, GlmFit, RankDeficientError, fit_glm, mean_response, residual_variance
from .tree import ModelStructure, PartitionTree, SplitRule

__all__ = [
    "TsvcConfig",
    "TsvcModel",
    "SplitChoice",
    "DegenerateDesignError",
    "build_design",
    "enumerate_candidate_splits",
    "select_best_split",
    "grow_sequence",
    "bic",
    "fit_tsvc",
    "fit_structure",
    "predict",
    "varying_coefficient",
]

# candidates whose screened deviance lies this close to the best are refitted exactly
_WINDOW = 1e-8
_DEGENERATE = 1e-10


class DegenerateDesignError(ValueError):
    """A partition of the structure holds no observations."""


@dataclass(frozen=True)
class TsvcConfig:
    """Fitting options and structural constraints.

    Covariates may be given by index or, before :meth:`resolve`, by name.

    Parameters
    ----------
    max_splits : int
        Maximal number of splits S of the grown sequence.
    min_node_size : int
        Minimal number of observations in each child of a split.
    family : Family or str
    vary : sequence, optional
        Covariates whose effect may be split. Default: every covariate with
        an own effect that is not listed in `fixed`.
    modifiers : mapping, optional
        Allowed modifiers per varying covariate. Default: all others.
    fixed : sequence
        Covariates with a single, never-split linear effect.
    modifier_only : sequence
        Covariates without an own linear effect, usable only as modifiers.
    """

    max_splits: int = 5
    min_node_size: int = 5
    family: Family = Family.GAUSSIAN
    vary: tuple = None
    modifiers: dict = None
    fixed: tuple = ()
    modifier_only: tuple = ()
    resolved: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if self.max_splits < 0:
            raise ValueError("max_splits must be >= 0")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")

    def resolve(self, dataset: Dataset) -> "TsvcConfig":
        """Return an equivalent config with every set spelled out as indices."""
        if self.resolved:
            return self
        p = dataset.p
        idx = dataset.index
        fixed = tuple(sorted({idx(c) for c in self.fixed}))
        mod_only = tuple(sorted({idx(c) for c in self.modifier_only}))
        if set(fixed) & set(mod_only):
            raise ValueError("fixed and modifier_only covariates overlap")
        effects = [j for j in range(p) if j not in mod_only]
        if self.vary is None:
            vary = tuple(j for j in effects if j not in fixed)
        else:
            vary = tuple(sorted({idx(c) for c in self.vary}))
            if set(vary) & (set(fixed) | set(mod_only)):
                raise ValueError("vary overlaps fixed or modifier_only covariates")
        given = {idx(k): v for k, v in (self.modifiers or {}).items()}
        modifiers = {}
        for j in vary:
            if j in given:
                allowed = tuple(sorted({idx(c) for c in given[j]}))
            else:
                allowed = tuple(k for k in range(p) if k != j)
            if j in allowed:
                raise ValueError(f"covariate {dataset.names[j]!r} cannot modify itself")
            modifiers[j] = allowed
        return replace(self, vary=vary, modifiers=modifiers, fixed=fixed,
                       modifier_only=mod_only, resolved=True)

    def effects(self, p: int) -> tuple:
        """Covariates contributing design columns."""
        return tuple(j for j in range(p) if j not in self.modifier_only)


@dataclass(frozen=True)
class TsvcModel:
    """A fitted TSVC model; coefficients are keyed by covariate index."""

    structure: ModelStructure
    config: TsvcConfig
    intercept: float
    coefficients: dict
    standard_errors: dict
    residual_variance: float
    fit: GlmFit
    bic: float
    names: tuple = ()

    @property
    def splits_performed(self) -> int:
        return self.structure.n_splits

    @property
    def family(self) -> Family:
        return self.config.family

    @property
    def effects(self) -> tuple:
        return tuple(self.coefficients)

    def coefficient_table(self):
        """List of (j, m, estimate, se) in design column order."""
        return [(j, m, float(self.coefficients[j][m]), float(self.standard_errors[j][m]))
                for j in self.effects for m in range(len(self.coefficients[j]))]


@dataclass(frozen=True)
class SplitChoice:
    rule: SplitRule
    leaf: int
    fit: GlmFit
    structure: ModelStructure
    skipped: int = 0


def build_design(dataset: Dataset, structure: ModelStructure, config: TsvcConfig = None,
                 covariates=None, check_empty=True):
    """Model matrix [1, x_j * I(leaf m of tree j), ...] over covariates with own effects.

    `covariates` replaces the dataset's covariate matrix (used for prediction).
    """
    x = dataset.covariates if covariates is None else np.asarray(covariates, dtype=float)
    n = x.shape[0]
    effects = range(structure.p) if config is None else config.effects(structure.p)
    cols = [np.ones(n)]
    for j in effects:
        tree = structure.trees[j]
        if tree.leaf_count == 1:
            cols.append(x[:, j])
            continue
        leaves = tree.assign(x)
        counts = np.bincount(leaves, minlength=tree.leaf_count)
        if check_empty and np.any(counts == 0):
            raise DegenerateDesignError(f"empty partition in tree of covariate {j}")
        block = np.zeros((n, tree.leaf_count))
        block[np.arange(n), leaves] = x[:, j]
        cols.extend(block.T)
    return np.column_stack(cols)


def _candidate_blocks(dataset, structure, config):
    """Yield (j, m, k, rows, thresholds, left_sizes) in ascending (j, m, k) order.

    `rows` are the leaf's rows sorted by the modifier; a candidate at position
    t puts rows[:left_sizes[t]] in the left child.
    """
    x = dataset.covariates
    nmin = config.min_node_size
    for j in config.vary:
        tree = structure.trees[j]
        leaves = tree.assign(x)
        for m in range(tree.leaf_count):
            rows = np.flatnonzero(leaves == m)
            if rows.size < 2 * nmin:
                continue
            for k in config.modifiers[j]:
                order = np.argsort(x[rows, k], kind="stable")
                sorted_rows = rows[order]
                v = x[sorted_rows, k]
                ends = np.flatnonzero(v[:-1] < v[1:])
                sizes = ends + 1
                ok = (sizes >= nmin) & (rows.size - sizes >= nmin)
                if not np.any(ok):
                    continue
                yield j, m, k, sorted_rows, v[ends[ok]], sizes[ok]


def enumerate_candidate_splits(dataset: Dataset, structure: ModelStructure, config: TsvcConfig):
    """All admissible (leaf, SplitRule) pairs in ascending (j, leaf, k, c) order."""
    config = config.resolve(dataset)
    out = []
    for j, m, k, _, thresholds, _ in _candidate_blocks(dataset, structure, config):
        out.extend((m, SplitRule(j, k, float(c))) for c in thresholds)
    return out


def _screen_gaussian(dataset, structure, config, design, fit):
    """Exact RSS of every candidate via a rank-one update of the current fit.

    Splitting leaf m of tree j at x_k <= c is equivalent to adding the column
    z = x_j * I(leaf m, x_k <= c). With thin QR factor Q of the current design
    and residuals r, the new RSS is RSS - (r'z)^2 / (z'z - |Q'z|^2); along the
    modifier-sorted rows all three terms are cumulative sums.

    Returns the candidate blocks (j, m, k, thresholds) and one deviance per
    candidate in enumeration order (inf for degenerate splits).
    """
    x = dataset.covariates
    qmat, _ = np.linalg.qr(design)
    resid = dataset.outcome - fit.linear_predictor
    rss = fit.deviance
    blocks, devs = [], []
    for j, m, k, rows, thresholds, sizes in _candidate_blocks(dataset, structure, config):
        w = x[rows, j]
        cum_rz = np.cumsum(w * resid[rows])
        cum_zz = np.cumsum(w * w)
        cum_qz = np.cumsum(w[:, None] * qmat[rows], axis=0)
        at = sizes - 1
        denom = cum_zz[at] - np.einsum("ij,ij->i", cum_qz[at], cum_qz[at])
        good = denom > _DEGENERATE * np.maximum(cum_zz[at], cum_zz[-1])
        dev = np.full(at.size, np.inf)
        dev[good] = rss - cum_rz[at][good] ** 2 / denom[good]
        blocks.append((j, m, k, thresholds))
        devs.append(dev)
    if not blocks:
        return blocks, np.empty(0)
    return blocks, np.concatenate(devs)


def _block_lookup(blocks):
    starts = np.cumsum([0] + [len(b[3]) for b in blocks])

    def candidate(i):
        b = int(np.searchsorted(starts, i, side="right")) - 1
        j, m, k, thresholds = blocks[b]
        return m, SplitRule(j, k, float(thresholds[i - starts[b]]))

    return candidate


def _refit(dataset, structure, config, start=None):
    design = build_design(dataset, structure, config)
    return fit_glm(design, dataset.outcome, config.family, start=start)


def _warm_start(config, structure, parent_fit, leaf, rule):
    # duplicate the parent's leaf coefficient into both children
    p = structure.p
    pos = 1
    for j in config.effects(p):
        if j == rule.target:
            pos += leaf
            break
        pos += structure.trees[j].leaf_count
    beta = parent_fit.coefficients
    return np.concatenate([beta[:pos + 1], beta[pos:]])


def select_best_split(dataset: Dataset, structure: ModelStructure, config: TsvcConfig,
                      current_fit: GlmFit = None):
    """Refit every candidate and return the one with minimal deviance.

    Returns ``None`` when no admissible candidate exists. Candidates whose
    refit is rank deficient or does not converge are skipped and counted in
    ``SplitChoice.skipped``; ties go to the earliest (j, leaf, k, c).
    """
    config = config.resolve(dataset)
    if current_fit is None:
        current_fit = _refit(dataset, structure, config)

    if config.family is Family.GAUSSIAN:
        design = build_design(dataset, structure, config)
        blocks, devs = _screen_gaussian(dataset, structure, config, design, current_fit)
        if not blocks:
            return None
        candidate = _block_lookup(blocks)
        skipped = int(np.sum(~np.isfinite(devs)))
        alive = np.isfinite(devs)
        while np.any(alive):
            best = np.min(devs[alive])
            window = np.flatnonzero(alive & (devs <= best + _WINDOW * max(1.0, abs(best))))
            chosen = None
            for i in window:
                leaf, rule = candidate(i)
                new = structure.split(leaf, rule)
                try:
                    fit = _refit(dataset, new, config)
                except RankDeficientError:
                    skipped += 1
                    continue
                if chosen is None or fit.deviance < chosen.fit.deviance:
                    chosen = SplitChoice(rule, leaf, fit, new)
            if chosen is not None:
                return replace(chosen, skipped=skipped)
            alive[window] = False
        return None

    cands = enumerate_candidate_splits(dataset, structure, config)
    if not cands:
        return None
    chosen = None
    skipped = 0
    for leaf, rule in cands:
        new = structure.split(leaf, rule)
        start = _warm_start(config, structure, current_fit, leaf, rule)
        try:
            fit = _refit(dataset, new, config, start=start)
        except RankDeficientError:
            skipped += 1
            continue
        if not fit.converged:
            skipped += 1
            continue
        if chosen is None or fit.deviance < chosen.fit.deviance:
            chosen = SplitChoice(rule, leaf, fit, new)
    if chosen is None:
        return None
    return replace(chosen, skipped=skipped)


def bic(log_likelihood: float, s: int, n: int) -> float:
    """-2 log L + s log(n); only splits are penalised."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return -2.0 * log_likelihood + s * math.log(n)


def _make_model(dataset, structure, config, fit):
    p = structure.p
    coefs, ses = {}, {}
    se = fit.standard_errors
    pos = 1
    for j in config.effects(p):
        mj = structure.trees[j].leaf_count
        coefs[j] = fit.coefficients[pos:pos + mj].copy()
        ses[j] = se[pos:pos + mj].copy()
        pos += mj
    gaussian = config.family is Family.GAUSSIAN and fit.n > fit.q
    sigma2 = residual_variance(fit) if gaussian else float("nan")
    return TsvcModel(structure, config, float(fit.coefficients[0]), coefs, ses, sigma2, fit,
                     bic(fit.log_likelihood, structure.n_splits, dataset.n), dataset.names)


def fit_structure(dataset: Dataset, structure: ModelStructure, config: TsvcConfig) -> TsvcModel:
    """Fit the GLM of a fixed structure."""
    config = config.resolve(dataset)
    return _make_model(dataset, structure, config, _refit(dataset, structure, config))


def grow_sequence(dataset: Dataset, config: TsvcConfig) -> list:
    """Nested models with 0, 1, ..., S splits (shorter if candidates run out)."""
    config = config.resolve(dataset)
    dataset.check_family(config.family)
    structure = ModelStructure.empty(dataset.p)
    fit = _refit(dataset, structure, config)
    models = [_make_model(dataset, structure, config, fit)]
    for _ in range(config.max_splits):
        choice = select_best_split(dataset, structure, config, current_fit=fit)
        if choice is None:
            break
        structure, fit = choice.structure, choice.fit
        models.append(_make_model(dataset, structure, config, fit))
    return models


def fit_tsvc(dataset: Dataset, config: TsvcConfig = None) -> TsvcModel:
    """Grow the sequence and keep the model with the smallest BIC (ties: fewer splits)."""
    models = grow_sequence(dataset, config or TsvcConfig())
    best = int(np.argmin([m.bic for m in models]))
    return models[best]


def predict(model: TsvcModel, rows):
    """Linear predictor and mean response for an (n, p) array of covariate rows."""
    x = np.atleast_2d(np.asarray(rows, dtype=float))
    eta = np.full(x.shape[0], model.intercept)
    for j, coefs in model.coefficients.items():
        leaves = model.structure.trees[j].assign(x)
        eta = eta + coefs[leaves] * x[:, j]
    return eta, mean_response(model.family, eta)


def varying_coefficient(model: TsvcModel, j: int, row) -> float:
    """beta_j evaluated at a covariate row."""
    if j not in model.coefficients:
        raise ValueError(f"covariate {j} has no own effect (modifier only)")
    m = model.structure.trees[j].assign_row(np.asarray(row, dtype=float))
    return float(model.coefficients[j][m])
