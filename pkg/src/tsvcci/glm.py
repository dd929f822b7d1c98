"""
Maximum likelihood fitting of Gaussian-identity and binomial-logit GLMs.

This is the inner engine of the tree builder: every candidate split and
every bootstrap refit ends up here, so the routines stay small and avoid
any per-call overhead beyond a QR decomposition.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

__all__ = [
    "Family",
    "GlmFit",
    "RankDeficientError",
    "fit_glm",
    "residual_variance",
    "mean_response",
    "log_likelihood",
]

MAX_ITER = 50
TOL = 1e-8
RANK_TOL = 1e-10


class Family(str, enum.Enum):
    """Response distribution paired with its canonical link."""

    GAUSSIAN = "gaussian_identity"
    BINOMIAL = "binomial_logit"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, Family):
            return value
        aliases = {"gaussian": cls.GAUSSIAN, "binomial": cls.BINOMIAL}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ValueError(f"unknown family {value!r}") from None


class RankDeficientError(ValueError):
    """Raised when a design matrix does not have full column rank.

    Attributes
    ----------
    columns : tuple of int
        Indices of the columns found to be linearly dependent on the others.
    """

    def __init__(self, columns):
        self.columns = tuple(int(c) for c in columns)
        super().__init__(f"design is rank deficient; collinear columns {list(self.columns)}")


@dataclass(frozen=True)
class GlmFit:
    """Result of :func:`fit_glm`."""

    family: Family
    coefficients: np.ndarray
    covariance: np.ndarray
    deviance: float
    log_likelihood: float
    converged: bool
    iterations: int
    n: int
    linear_predictor: np.ndarray

    @property
    def q(self) -> int:
        return self.coefficients.shape[0]

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def fitted_values(self) -> np.ndarray:
        return mean_response(self.family, self.linear_predictor)


def mean_response(family, eta):
    """Apply the inverse link elementwise."""
    family = Family.parse(family)
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("linear predictor contains non-finite values")
    if family is Family.GAUSSIAN:
        return eta.copy()
    return expit(eta)


def log_likelihood(family, response, eta, n=None) -> float:
    """Maximised log-likelihood of a fit with linear predictor `eta`.

    For the Gaussian family the error variance is profiled out at its
    maximum likelihood value RSS / n.
    """
    family = Family.parse(family)
    y = np.asarray(response, dtype=float)
    n = y.shape[0] if n is None else n
    if family is Family.GAUSSIAN:
        rss = float(np.sum((y - eta) ** 2))
        if rss <= 0.0:
            return np.inf
        return -0.5 * n * (np.log(2.0 * np.pi * rss / n) + 1.0)
    # log(mu) = -log(1 + exp(-eta)), log(1 - mu) = -log(1 + exp(eta))
    return float(-np.sum(y * np.logaddexp(0.0, -eta) + (1.0 - y) * np.logaddexp(0.0, eta)))


def _check_rank(design):
    _, r, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        raise RankDeficientError(range(design.shape[1]))
    bad = diag <= RANK_TOL * diag[0]
    if np.any(bad):
        raise RankDeficientError(sorted(piv[bad]))


def _weighted_ls(design, z, w):
    sw = np.sqrt(w)
    q, r = np.linalg.qr(design * sw[:, None])
    beta = scipy.linalg.solve_triangular(r, q.T @ (sw * z))
    return beta, r


def _unscaled_cov(r):
    rinv = scipy.linalg.solve_triangular(r, np.eye(r.shape[0]))
    return rinv @ rinv.T


def _binomial_deviance(y, eta):
    return 2.0 * float(np.sum(y * np.logaddexp(0.0, -eta) + (1.0 - y) * np.logaddexp(0.0, eta)))


def fit_glm(design, response, family, start=None, check_rank=True) -> GlmFit:
    """Fit a GLM by maximum likelihood.

    Parameters
    ----------
    design : ndarray, shape (n, q)
        Model matrix, intercept column included by the caller.
    response : ndarray, shape (n,)
        Outcome. For the binomial family values must lie in [0, 1]; fractional
        values are accepted so that expected responses can be fitted.
    family : Family or str
    start : ndarray, shape (q,), optional
        Starting coefficients for IRLS (binomial only).
    check_rank : bool
        Run the pivoted-QR rank check. Callers that already know the design
        is full rank may skip it.

    Returns
    -------
    GlmFit

    Raises
    ------
    RankDeficientError
        If the design is rank deficient.
    ValueError
        For non-finite inputs, shape mismatches or invalid responses.
    """
    family = Family.parse(family)
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("design must be (n, q) and response (n,)")
    n, q = x.shape
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in design or response")
    if q > n:
        raise RankDeficientError(range(n, q))
    if check_rank:
        _check_rank(x)

    if family is Family.GAUSSIAN:
        qmat, r = np.linalg.qr(x)
        beta = scipy.linalg.solve_triangular(r, qmat.T @ y)
        eta = x @ beta
        rss = float(np.sum((y - eta) ** 2))
        sigma2 = rss / (n - q) if n > q else np.nan
        cov = sigma2 * _unscaled_cov(r)
        return GlmFit(family, beta, cov, rss, log_likelihood(family, y, eta, n),
                      True, 1, n, eta)

    if np.any((y < 0.0) | (y > 1.0)):
        raise ValueError("binomial response must lie in [0, 1]")
    if start is None:
        mu = (y + 0.5) / 2.0
        eta = np.log(mu / (1.0 - mu))
    else:
        eta = x @ np.asarray(start, dtype=float)
        mu = expit(eta)
    dev_old = _binomial_deviance(y, eta)
    converged = False
    it = 0
    r = None
    for it in range(1, MAX_ITER + 1):
        w = np.clip(mu * (1.0 - mu), 1e-12, None)
        z = eta + (y - mu) / w
        beta, r = _weighted_ls(x, z, w)
        eta = x @ beta
        mu = expit(eta)
        dev = _binomial_deviance(y, eta)
        if abs(dev - dev_old) / (abs(dev) + 0.1) < TOL:
            converged = True
            break
        dev_old = dev
    # covariance at the final weights
    w = np.clip(mu * (1.0 - mu), 1e-12, None)
    _, r = np.linalg.qr(x * np.sqrt(w)[:, None])
    cov = _unscaled_cov(r)
    return GlmFit(family, beta, cov, dev, log_likelihood(family, y, eta, n),
                  converged, it, n, eta)


def residual_variance(fit: GlmFit, n=None, q=None) -> float:
    """Residual variance RSS / (n - q) of a Gaussian fit."""
    if fit.family is not Family.GAUSSIAN:
        raise ValueError("residual variance is only defined for the gaussian family")
    n = fit.n if n is None else n
    q = fit.q if q is None else q
    if n <= q:
        raise ValueError(f"need n > q, got n={n}, q={q}")
    return fit.deviance / (n - q)
