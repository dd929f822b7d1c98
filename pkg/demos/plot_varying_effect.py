"""
Fitting a tree-structured varying coefficient model
===================================================

An effect of X1 that switches sign depending on X2 and X3, recovered by
growing partition trees and pruning with BIC.
"""

# the data generating process of the "varying" scenario:
# mu = 0.5 * I(x2 <= 0.5 and x3 = 1) * x1 - I(x2 > 0.5) * x1
from tsvcci.simulation import ScenarioSpec, generate_scenario

data, mu, config = generate_scenario(ScenarioSpec("varying", n=500, seed=1))
print(data.n, "rows;", "covariates", data.names, "kinds", data.kinds)

###############################################################################
# Grow the sequence of nested models with up to five splits and look at the
# BIC of each step. Only splits are penalised, so BIC falls while splits
# buy enough likelihood.

from tsvcci.tsvc import grow_sequence

models = grow_sequence(data, config)
for m in models:
    print(f"splits={m.splits_performed}  deviance={m.fit.deviance:8.2f}  BIC={m.bic:8.2f}")

###############################################################################
# The selected model is the one with minimal BIC. Each line of the rendering
# is one partition of one covariate's coefficient.

from tsvcci import fit_tsvc, render_tree

model = fit_tsvc(data, config)
print(render_tree(model))

###############################################################################
# Because the true mean is known here, we can also compute the coefficients
# the selected structure is actually estimating.

from tsvcci import best_approximating_coefficients

target = best_approximating_coefficients(model.structure, mu, data, config)
for j, values in target.items():
    print(data.names[j], values.round(3))
