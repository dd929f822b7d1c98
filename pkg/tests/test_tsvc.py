import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_force_best_split, brute_force_candidates, random_dataset
from tsvcci.data import Dataset
from tsvcci.glm import Family, fit_glm
from tsvcci.simulation import ScenarioSpec, generate_scenario
from tsvcci.tree import ModelStructure, SplitRule
from tsvcci.tsvc import (
    DegenerateDesignError,
    TsvcConfig,
    bic,
    build_design,
    enumerate_candidate_splits,
    fit_structure,
    fit_tsvc,
    grow_sequence,
    predict,
    select_best_split,
    varying_coefficient,
)


def varying_structure():
    s = ModelStructure.empty(3).split(0, SplitRule(0, 1, 0.5))
    return s.split(0, SplitRule(0, 2, 0.0))


class TestBuildDesign:
    def test_zero_split(self, gaussian_data):
        X = build_design(gaussian_data, ModelStructure.empty(3))
        assert X.shape == (40, 4)
        np.testing.assert_array_equal(X[:, 1:], gaussian_data.covariates)

    def test_varying_structure_columns(self):
        data, _, _ = generate_scenario(ScenarioSpec("varying", 200, seed=1))
        X = build_design(data, varying_structure())
        assert X.shape[1] == 1 + 3 + 1 + 1
        np.testing.assert_allclose(X[:, 1:4].sum(axis=1), data.covariates[:, 0])

    def test_modifier_only_has_no_column(self, gaussian_data):
        cfg = TsvcConfig(modifier_only=(2,)).resolve(gaussian_data)
        assert build_design(gaussian_data, ModelStructure.empty(3), cfg).shape[1] == 3

    def test_empty_leaf(self, gaussian_data):
        s = ModelStructure.empty(3).split(0, SplitRule(0, 1, 100.0))
        with pytest.raises(DegenerateDesignError):
            build_design(gaussian_data, s)


class TestCandidates:
    def test_count_two_covariates(self):
        rng = np.random.default_rng(0)
        data = Dataset(rng.standard_normal(15), rng.standard_normal((15, 2)))
        cands = enumerate_candidate_splits(data, ModelStructure.empty(2), TsvcConfig(min_node_size=1))
        assert len(cands) == 2 * 14

    def test_binary_modifier_single_threshold(self):
        rng = np.random.default_rng(0)
        x = np.column_stack([rng.standard_normal(20), np.repeat([0.0, 1.0], 10)])
        data = Dataset(rng.standard_normal(20), x)
        cands = enumerate_candidate_splits(data, ModelStructure.empty(2), TsvcConfig(min_node_size=1))
        assert [r.threshold for _, r in cands if r.modifier == 1] == [0.0]

    def test_vary_excludes(self, gaussian_data):
        cfg = TsvcConfig(vary=(1, 2))
        cands = enumerate_candidate_splits(gaussian_data, ModelStructure.empty(3), cfg)
        assert cands and all(r.target != 0 for _, r in cands)

    def test_order_and_min_node_size(self, gaussian_data):
        cfg = TsvcConfig(min_node_size=7).resolve(gaussian_data)
        s = ModelStructure.empty(3).split(0, SplitRule(0, 1, 0.0))
        got = [(m, r.target, r.modifier, r.threshold)
               for m, r in enumerate_candidate_splits(gaussian_data, s, cfg)]
        expected = sorted(brute_force_candidates(gaussian_data, s, cfg), key=lambda t: (t[1], t[0], t[2], t[3]))
        assert got == [(m, j, k, c) for m, j, k, c in expected]


class TestSelectBestSplit:
    def test_constructed_zero_deviance(self):
        x1 = np.arange(1.0, 13.0)
        x2 = np.repeat([-1.0, 1.0], 6)
        y = np.where(x2 <= 0, 2.0 * x1, -1.0 * x1)
        data = Dataset(y, np.column_stack([x1, x2]))
        choice = select_best_split(data, ModelStructure.empty(2), TsvcConfig(min_node_size=2))
        assert choice.rule == SplitRule(0, 1, -1.0)
        assert choice.fit.deviance == pytest.approx(0.0, abs=1e-18)

    def test_tie_goes_to_lowest(self):
        # two identical copies of a modifier: identical deviances, lower k wins
        rng = np.random.default_rng(4)
        z = rng.standard_normal(30)
        x = np.column_stack([rng.standard_normal(30), z, z])
        data = Dataset(x[:, 0] * (z > 0) + 0.1 * rng.standard_normal(30), x)
        cfg = TsvcConfig(modifier_only=(1, 2), min_node_size=3)
        choice = select_best_split(data, ModelStructure.empty(3), cfg)
        assert choice.rule.modifier == 1

    def test_single_covariate(self):
        rng = np.random.default_rng(0)
        data = Dataset(rng.standard_normal(10), rng.standard_normal((10, 1)))
        assert select_best_split(data, ModelStructure.empty(1), TsvcConfig()) is None

    @pytest.mark.parametrize("seed", range(8))
    def test_brute_force_oracle(self, seed):
        data = random_dataset(seed, n=35, p=3, binary_last=seed % 2 == 1)
        cfg = TsvcConfig(min_node_size=3)
        structure = ModelStructure.empty(3)
        for _ in range(2):
            choice = select_best_split(data, structure, cfg)
            m, j, k, c, rss = brute_force_best_split(data, structure, cfg)
            assert (choice.leaf, choice.rule) == (m, SplitRule(j, k, c))
            assert choice.fit.deviance == pytest.approx(rss, abs=1e-10)
            structure = choice.structure

    @pytest.mark.parametrize("seed", range(3))
    def test_binomial_oracle(self, seed):
        data = random_dataset(seed, n=40, p=2, family="binomial")
        cfg = TsvcConfig(min_node_size=8, family="binomial").resolve(data)
        choice = select_best_split(data, ModelStructure.empty(2), cfg)
        best = None
        for m, j, k, c in brute_force_candidates(data, ModelStructure.empty(2), cfg):
            s = ModelStructure.empty(2).split(m, SplitRule(j, k, c))
            fit = fit_glm(build_design(data, s, cfg), data.outcome, Family.BINOMIAL)
            if fit.converged and (best is None or fit.deviance < best[1]):
                best = (SplitRule(j, k, c), fit.deviance)
        assert choice.rule == best[0]
        assert choice.fit.deviance == pytest.approx(best[1], rel=1e-7)


class TestBic:
    def test_examples(self):
        assert bic(-100.0, 0, 200) == 200.0
        assert bic(-100.0, 2, 200) == pytest.approx(210.5966, abs=1e-4)
        assert bic(-50.0, 1, 30) < bic(-50.0, 2, 30)


class TestGrowSequence:
    def test_zero_splits(self, gaussian_data):
        models = grow_sequence(gaussian_data, TsvcConfig(max_splits=0))
        assert len(models) == 1 and models[0].splits_performed == 0

    def test_scenario2_monotone_and_nested(self):
        data, _, cfg = generate_scenario(ScenarioSpec("varying", 200, seed=5))
        models = grow_sequence(data, cfg)
        assert len(models) <= 6
        devs = [m.fit.deviance for m in models]
        assert all(b <= a + 1e-9 for a, b in zip(devs, devs[1:]))
        for prev, cur in zip(models, models[1:]):
            changed = [j for j in range(3) if prev.structure.trees[j] != cur.structure.trees[j]]
            assert len(changed) == 1
            j = changed[0]
            assert cur.structure.trees[j].leaf_count == prev.structure.trees[j].leaf_count + 1
            # refinement: each new leaf lies inside one old leaf
            old = prev.structure.trees[j].assign(data.covariates)
            new = cur.structure.trees[j].assign(data.covariates)
            for m in np.unique(new):
                assert np.unique(old[new == m]).size == 1

    def test_bic_selection(self):
        data, _, cfg = generate_scenario(ScenarioSpec("varying", 150, seed=2))
        models = grow_sequence(data, cfg)
        chosen = fit_tsvc(data, cfg)
        bics = [m.bic for m in models]
        assert chosen.bic == min(bics)
        assert chosen.splits_performed == bics.index(min(bics))

    def test_bic_matches_loglik(self, gaussian_data):
        m = fit_tsvc(gaussian_data, TsvcConfig(max_splits=2))
        rss = m.fit.deviance
        ll = -gaussian_data.n / 2 * (math.log(2 * math.pi * rss / gaussian_data.n) + 1)
        assert m.bic == pytest.approx(-2 * ll + m.splits_performed * math.log(gaussian_data.n))

    def test_deterministic(self, gaussian_data):
        a = fit_tsvc(gaussian_data, TsvcConfig())
        b = fit_tsvc(gaussian_data, TsvcConfig())
        assert a.structure == b.structure
        np.testing.assert_array_equal(a.fit.coefficients, b.fit.coefficients)

    def test_modifier_constraints(self):
        data, _, cfg = generate_scenario(ScenarioSpec("varying_known_modifiers", 200, seed=3))
        model = fit_tsvc(data, cfg)
        for (j, k) in model.structure.split_pairs():
            assert k in cfg.modifiers[j]

    def test_binary_outcome_required(self, gaussian_data):
        with pytest.raises(ValueError):
            fit_tsvc(gaussian_data, TsvcConfig(family="binomial"))

    def test_scenario1_large_n_mostly_no_split(self):
        zero = sum(fit_tsvc(*generate_scenario(ScenarioSpec("linear", 1000, seed=s))[::2]).splits_performed == 0
                   for s in range(10))
        assert zero >= 5


class TestPredict:
    def test_training_rows(self):
        data, _, cfg = generate_scenario(ScenarioSpec("varying", 200, seed=1))
        model = fit_structure(data, varying_structure(), cfg)
        eta, mu = predict(model, data.covariates)
        np.testing.assert_allclose(eta, model.fit.linear_predictor, atol=1e-12)
        np.testing.assert_array_equal(eta, mu)

    def test_zero_split_and_origin(self, gaussian_data):
        model = fit_structure(gaussian_data, ModelStructure.empty(3), TsvcConfig())
        x = gaussian_data.covariates[:5]
        eta, _ = predict(model, x)
        np.testing.assert_allclose(eta, model.fit.coefficients[0] + x @ model.fit.coefficients[1:])
        assert predict(model, np.zeros((1, 3)))[0][0] == model.intercept

    def test_varying_coefficient(self):
        data, _, cfg = generate_scenario(ScenarioSpec("varying", 400, seed=1))
        model = fit_structure(data, varying_structure(), cfg)
        assert varying_coefficient(model, 0, [0.0, 0.7, 1.0]) == model.coefficients[0][2]
        assert varying_coefficient(model, 1, [5.0, 0.7, 1.0]) == model.coefficients[1][0]
        per_row = np.array([varying_coefficient(model, 0, r) for r in data.covariates])
        leaves = model.structure.trees[0].assign(data.covariates)
        for m in range(3):
            assert np.all(per_row[leaves == m] == model.coefficients[0][m])

    def test_modifier_only_rejected(self, gaussian_data):
        model = fit_tsvc(gaussian_data, TsvcConfig(modifier_only=(2,), max_splits=1))
        with pytest.raises(ValueError):
            varying_coefficient(model, 2, gaussian_data.covariates[0])


class TestConfig:
    def test_resolve_names(self, gaussian_data):
        cfg = TsvcConfig(fixed=("X3",), modifiers={"X1": ["X2"]}).resolve(gaussian_data)
        assert cfg.vary == (0, 1) and cfg.fixed == (2,)
        assert cfg.modifiers == {0: (1,), 1: (0, 2)}

    def test_invalid(self, gaussian_data):
        with pytest.raises(ValueError):
            TsvcConfig(fixed=(0,), modifier_only=(0,)).resolve(gaussian_data)
        with pytest.raises(ValueError):
            TsvcConfig(modifiers={0: (0,)}).resolve(gaussian_data)
        with pytest.raises(KeyError):
            TsvcConfig(vary=("nope",)).resolve(gaussian_data)


class TestPartitionInvariant:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_leaf_columns_sum_to_covariate(self, seed):
        data = random_dataset(seed, n=40)
        model = fit_tsvc(data, TsvcConfig(max_splits=3))
        X = build_design(data, model.structure)
        pos = 1
        for j in range(3):
            mj = model.structure.trees[j].leaf_count
            block = X[:, pos:pos + mj]
            np.testing.assert_array_equal(block.sum(axis=1), data.covariates[:, j])
            assert np.all((block != 0).sum(axis=1) <= 1)
            pos += mj
