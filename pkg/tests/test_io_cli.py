import json

import numpy as np
import pandas as pd
import pytest

from tsvcci.cli import main
from tsvcci.inference import Method, wald_ci
from tsvcci.serialize import (
    SchemaError,
    ci_table,
    deserialize_model,
    render_tree,
    serialize_model,
)
from tsvcci.simulation import ScenarioSpec, generate_scenario
from tsvcci.tree import ModelStructure
from tsvcci.tsvc import TsvcConfig, fit_structure, fit_tsvc, predict


@pytest.fixture(scope="module")
def varying():
    data, mu, cfg = generate_scenario(ScenarioSpec("varying", 300, seed=3))
    return data, cfg, fit_tsvc(data, cfg)


class TestSerialize:
    def test_round_trip(self, varying):
        data, _, model = varying
        doc = json.loads(json.dumps(serialize_model(model)))
        back = deserialize_model(doc)
        assert back.structure == model.structure
        assert back.config == model.config
        assert back.bic == model.bic and back.residual_variance == model.residual_variance
        for j in model.coefficients:
            np.testing.assert_array_equal(back.coefficients[j], model.coefficients[j])
            np.testing.assert_array_equal(back.standard_errors[j], model.standard_errors[j])
        np.testing.assert_array_equal(predict(back, data.covariates)[0], predict(model, data.covariates)[0])
        refit = fit_structure(data, back.structure, back.config)
        np.testing.assert_array_equal(refit.fit.coefficients, model.fit.coefficients)

    def test_zero_split_document(self, varying):
        data, cfg, _ = varying
        model = fit_structure(data, ModelStructure.empty(3), cfg)
        doc = serialize_model(model)
        assert [t["root"] for t in doc["trees"]] == [{"leaf": True}] * 3
        assert all(len(t["coefficients"]) == 1 for t in doc["trees"])

    def test_unknown_version(self, varying):
        doc = serialize_model(varying[2])
        doc["schema_version"] = "tsvcci.model/99"
        with pytest.raises(SchemaError):
            deserialize_model(doc)

    def test_rendering(self, varying):
        text = render_tree(varying[2])
        assert "X1 | X2 <= " in text and " -> " in text

    def test_ci_table(self, varying):
        model = varying[2]
        table = ci_table(model, wald_ci(model))
        assert len(table) == sum(len(c) for c in model.coefficients.values())
        assert np.all(table.exp_lower <= table.exp_estimate)
        assert np.all(table.exp_estimate <= table.exp_upper)


def write_data(tmp_path):
    data, _, _ = generate_scenario(ScenarioSpec("varying", 200, seed=1))
    path = tmp_path / "data.csv"
    data.to_frame().to_csv(path, index=False, float_format="%.17g")
    return path


def survival_data(tmp_path):
    rng = np.random.default_rng(2)
    n = 150
    age = rng.standard_normal(n)
    time = rng.integers(1, 5, n)
    d = (rng.random(n) < 0.6).astype(int)
    path = tmp_path / "surv.csv"
    pd.DataFrame({"t_obs": time, "d": d, "age": age, "sex": rng.integers(0, 2, n)}).to_csv(path, index=False)
    return path


class TestCli:
    def test_fit_then_wald(self, tmp_path, capsys):
        data = write_data(tmp_path)
        model = tmp_path / "m.json"
        assert main(["fit", "--data", str(data), "-o", str(model), "--seed", "3"]) == 0
        out = capsys.readouterr().out
        assert "seed: 3" in out
        assert (tmp_path / "m.txt").exists()
        ci = tmp_path / "ci.csv"
        assert main(["ci", "--data", str(data), "--model", str(model), "--method", "wald",
                     "--level", "0.95", "-o", str(ci)]) == 0
        table = pd.read_csv(ci)
        np.testing.assert_allclose(table.upper - table.estimate, table.estimate - table.lower,
                                   rtol=1e-4)
        assert list(table.columns[:6]) == ["covariate", "partition", "partition_description",
                                           "estimate", "exp_estimate", "method"]
        doc = json.loads((tmp_path / "ci.json").read_text())
        assert len(doc["intervals"]) == len(table)

    def test_ci_fresh_percentile(self, tmp_path):
        data = write_data(tmp_path)
        out = tmp_path / "p.csv"
        assert main(["ci", "--data", str(data), "--method", "parametric_percentile", "--B", "40",
                     "--max-splits", "2", "-o", str(out)]) == 0
        assert set(pd.read_csv(out).method) == {"parametric_percentile"}

    def test_simulate_deterministic(self, tmp_path):
        args = ["simulate", "--scenario", "linear", "--n", "60", "--sigma", "1", "--R", "3",
                "--B", "40", "--seed", "7"]
        assert main(args + ["-o", str(tmp_path / "a.csv")]) == 0
        assert main(args + ["-o", str(tmp_path / "b.csv")]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        doc = json.loads((tmp_path / "a.json").read_text())
        assert doc["schema_version"].startswith("tsvcci.coverage/") and doc["seed"] == 7

    def test_survival_model_form(self, tmp_path):
        data = survival_data(tmp_path)
        model = tmp_path / "s.json"
        assert main(["fit", "--data", str(data), "--family", "binomial", "--survival-time", "t_obs",
                     "--event", "d", "-o", str(model)]) == 0
        doc = json.loads(model.read_text())
        cfg = doc["config"]
        assert doc["family"] == "binomial_logit"
        assert cfg["modifier_only"] == ["t"]
        assert cfg["fixed"] == ["T2", "T3", "T4"]
        assert cfg["modifiers"] == {"age": ["t"], "sex": ["t"]}

    def test_config_file_and_override(self, tmp_path):
        data = write_data(tmp_path)
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"data": str(data), "max_splits": 0, "fixed": "X3"}))
        model = tmp_path / "m.json"
        assert main(["fit", "--config", str(conf), "-o", str(model)]) == 0
        doc = json.loads(model.read_text())
        assert doc["splits"] == 0 and doc["config"]["fixed"] == ["X3"]
        assert main(["fit", "--config", str(conf), "--max-splits", "2", "-o", str(model)]) == 0
        assert json.loads(model.read_text())["config"]["max_splits"] == 2

    def test_usage_errors(self, tmp_path, capsys):
        assert main(["fit", "--bogus"]) == 1
        assert main(["simulate", "--B", "10", "--level", "0.95", "--method",
                     "parametric_percentile"]) == 1
        conf = tmp_path / "bad.json"
        conf.write_text(json.dumps({"nonsense": 1}))
        assert main(["fit", "--config", str(conf)]) == 1
        assert main(["fit", "--data", str(write_data(tmp_path)), "--vary", "nope"]) == 1

    def test_runtime_error_leaves_no_output(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("y,X1,X2\n1,2,3\n2,NA,4\n")
        out = tmp_path / "m.json"
        assert main(["fit", "--data", str(bad), "-o", str(out)]) == 2
        assert not out.exists()
        assert main(["fit", "--data", str(tmp_path / "missing.csv"), "-o", str(out)]) == 2
        assert list(tmp_path.iterdir()) == [bad]

    def test_unknown_model_version(self, tmp_path):
        data = write_data(tmp_path)
        model = tmp_path / "m.json"
        main(["fit", "--data", str(data), "-o", str(model), "--max-splits", "0"])
        doc = json.loads(model.read_text())
        doc["schema_version"] = "other/1"
        model.write_text(json.dumps(doc))
        assert main(["ci", "--data", str(data), "--model", str(model), "--method", "wald",
                     "-o", str(tmp_path / "ci.csv")]) == 2
        assert not (tmp_path / "ci.csv").exists()
