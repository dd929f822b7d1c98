"""JSON model documents, tree rendering and CI tables."""

from __future__ import annotations

import json

import numpy as np
import pandas as pd

from .glm import Family, GlmFit
from .tree import LEAF, Leaf, ModelStructure, Node, PartitionTree
from .tsvc import TsvcConfig, TsvcModel

__all__ = [
    "SCHEMA_VERSION",
    "SchemaError",
    "serialize_model",
    "deserialize_model",
    "render_tree",
    "ci_table",
    "report_frame",
    "report_document",
    "REPORT_SCHEMA_VERSION",
]

SCHEMA_VERSION = "tsvcci.model/1"
REPORT_SCHEMA_VERSION = "tsvcci.coverage/1"


class SchemaError(ValueError):
    pass


def _node_doc(node, names):
    if isinstance(node, Leaf):
        return {"leaf": True}
    return {
        "modifier": names[node.modifier],
        "threshold": float(node.threshold),
        "left": _node_doc(node.left, names),
        "right": _node_doc(node.right, names),
    }


def _node_from(doc, index):
    if doc.get("leaf"):
        return LEAF
    return Node(index[doc["modifier"]], float(doc["threshold"]),
                _node_from(doc["left"], index), _node_from(doc["right"], index))


def _floats(a):
    return [float(v) for v in np.ravel(a)]


def serialize_model(model: TsvcModel) -> dict:
    """Lossless JSON-ready document of a fitted model."""
    names = list(model.names)
    cfg = model.config
    fit = model.fit
    return {
        "schema_version": SCHEMA_VERSION,
        "family": model.family.value,
        "covariates": names,
        "config": {
            "max_splits": cfg.max_splits,
            "min_node_size": cfg.min_node_size,
            "vary": [names[j] for j in cfg.vary],
            "modifiers": {names[j]: [names[k] for k in ks] for j, ks in cfg.modifiers.items()},
            "fixed": [names[j] for j in cfg.fixed],
            "modifier_only": [names[j] for j in cfg.modifier_only],
        },
        "intercept": model.intercept,
        "trees": [
            {
                "covariate": names[tree.covariate],
                "root": _node_doc(tree.root, names),
                "coefficients": _floats(model.coefficients[j]) if j in model.coefficients else None,
                "standard_errors": _floats(model.standard_errors[j]) if j in model.coefficients else None,
            }
            for j, tree in enumerate(model.structure.trees)
        ],
        "residual_variance": None if np.isnan(model.residual_variance) else model.residual_variance,
        "bic": model.bic,
        "splits": model.splits_performed,
        "fit": {
            "coefficients": _floats(fit.coefficients),
            "covariance": [_floats(row) for row in fit.covariance],
            "deviance": fit.deviance,
            "log_likelihood": fit.log_likelihood,
            "converged": fit.converged,
            "iterations": fit.iterations,
            "n": fit.n,
        },
        "rendering": render_tree(model).splitlines(),
    }


def deserialize_model(doc: dict, linear_predictor=None) -> TsvcModel:
    """Inverse of :func:`serialize_model`.

    The training linear predictor is not stored; pass it to restore
    ``fit.linear_predictor``, otherwise it is left empty.
    """
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION!r}")
    names = tuple(doc["covariates"])
    index = {name: j for j, name in enumerate(names)}
    c = doc["config"]
    config = TsvcConfig(
        max_splits=c["max_splits"],
        min_node_size=c["min_node_size"],
        family=Family(doc["family"]),
        vary=tuple(index[v] for v in c["vary"]),
        modifiers={index[j]: tuple(index[k] for k in ks) for j, ks in c["modifiers"].items()},
        fixed=tuple(index[v] for v in c["fixed"]),
        modifier_only=tuple(index[v] for v in c["modifier_only"]),
        resolved=True,
    )
    trees, coefs, ses = [], {}, {}
    for j, t in enumerate(doc["trees"]):
        trees.append(PartitionTree(j, _node_from(t["root"], index)))
        if t["coefficients"] is not None:
            coefs[j] = np.array(t["coefficients"], dtype=float)
            ses[j] = np.array(t["standard_errors"], dtype=float)
    f = doc["fit"]
    eta = np.empty(0) if linear_predictor is None else np.asarray(linear_predictor, dtype=float)
    fit = GlmFit(Family(doc["family"]), np.array(f["coefficients"]), np.array(f["covariance"]),
                 f["deviance"], f["log_likelihood"], f["converged"], f["iterations"], f["n"], eta)
    sigma2 = doc["residual_variance"]
    return TsvcModel(ModelStructure(tuple(trees)), config, doc["intercept"], coefs, ses,
                     float("nan") if sigma2 is None else sigma2, fit, doc["bic"], names)


def dumps(model: TsvcModel) -> str:
    return json.dumps(serialize_model(model), indent=2)


def loads(text: str) -> TsvcModel:
    return deserialize_model(json.loads(text))


def render_tree(model: TsvcModel) -> str:
    """One line per partition, e.g. ``X1 | X2 <= 0.5 -> 0.48``."""
    names = model.names
    lines = [f"(Intercept) -> {model.intercept:.6g}"]
    for j, coefs in model.coefficients.items():
        tree = model.structure.trees[j]
        for m, beta in enumerate(coefs):
            lines.append(f"{names[j]} | {tree.describe_leaf(m, names)} -> {beta:.6g}")
    return "\n".join(lines)


def ci_table(model: TsvcModel, cis) -> pd.DataFrame:
    """Per-coefficient CI table with exp-transformed estimate and bounds."""
    names = model.names
    rows = []
    for ci in cis:
        tree = model.structure.trees[ci.covariate]
        rows.append({
            "covariate": names[ci.covariate],
            "partition": ci.partition + 1,
            "partition_description": tree.describe_leaf(ci.partition, names),
            "estimate": ci.estimate,
            "exp_estimate": float(np.exp(ci.estimate)),
            "method": ci.method.value,
            "level": ci.level,
            "lower": ci.lower,
            "upper": ci.upper,
            "exp_lower": float(np.exp(ci.lower)),
            "exp_upper": float(np.exp(ci.upper)),
        })
    return pd.DataFrame(rows)


def report_frame(reports) -> pd.DataFrame:
    """Long, plot-ready table of one or more coverage reports.

    One row per quantity; ``metric`` is one of ``coverage`` (C_j),
    ``coverage_average`` (C_av), ``splits`` (per covariate/modifier pair),
    ``splits_total`` and ``adjusted_alpha``.
    """
    rows = []
    for rep in reports:
        spec = rep.spec
        base = {"scenario": spec.scenario.value, "n": spec.n, "sigma": spec.sigma,
                "R": rep.replications, "B": rep.B}

        def add(metric, value, method="", level=np.nan, covariate="", modifier=""):
            rows.append({**base, "metric": metric, "method": method, "level": level,
                         "covariate": covariate, "modifier": modifier, "value": value})

        for (method, level), v in rep.coverage.items():
            for name, c in zip(rep.names, v["C_j"]):
                add("coverage", c, method.value, level, name)
            add("coverage_average", v["C_av"], method.value, level)
        for (j, k), v in rep.splits["pairs"].items():
            add("splits", v, covariate=rep.names[j], modifier=rep.names[k])
        add("splits_total", rep.splits["total"])
        for level, v in rep.adjusted_alpha.items():
            for name, a in zip(rep.names, v["per_covariate"]):
                add("adjusted_alpha", a, "bootstrap_calibrated", level, name)
            add("adjusted_alpha", v["average"], "bootstrap_calibrated", level, "average")
    return pd.DataFrame(rows)


def report_document(reports, seed=None) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "seed": seed,
        "cells": [rep.to_dict() for rep in reports],
    }
