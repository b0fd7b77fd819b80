"""Adaptive Gauss-Hermite evaluation of the random-intercept likelihood.

Used as an accuracy reference for the Laplace approximation; it locates each
stratum's mode with a bracketing scalar optimizer rather than the Newton
iteration of :mod:`surveylogit.estimators.mixed`.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.optimize
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit, logsumexp


def _log_integrand(u, eta, y, sigma2):
    lin = eta[:, None] + np.atleast_1d(u)[None, :]
    ll = np.sum(y[:, None] * lin - np.logaddexp(0.0, lin), axis=0)
    return ll - np.atleast_1d(u) ** 2 / (2 * sigma2) - 0.5 * math.log(2 * math.pi * sigma2)


def agh_stratum_loglik(eta, y, sigma2, n_nodes=50) -> float:
    """log int prod_i Bernoulli(y_i | eta_i + u) N(u; 0, sigma2) du for one stratum."""
    eta = np.asarray(eta, float)
    y = np.asarray(y, float)
    res = scipy.optimize.minimize_scalar(
        lambda u: -_log_integrand(u, eta, y, sigma2)[0],
        bracket=(-1.0, 1.0), tol=1e-12,
    )
    mode = float(res.x)
    p = expit(eta + mode)
    curvature = float(np.sum(p * (1 - p))) + 1.0 / sigma2
    scale = 1.0 / math.sqrt(curvature)
    nodes, weights = hermgauss(n_nodes)
    u = mode + math.sqrt(2.0) * scale * nodes
    terms = _log_integrand(u, eta, y, sigma2) + nodes**2 + np.log(weights)
    return float(logsumexp(terms) + math.log(math.sqrt(2.0) * scale))


def agh_loglik(X, y, groups, gamma, sigma2, n_nodes=50) -> float:
    """Sum of :func:`agh_stratum_loglik` over strata."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    groups = np.asarray(groups)
    eta = X @ np.asarray(gamma, float)
    total = 0.0
    for h in np.unique(groups):
        m = groups == h
        total += agh_stratum_loglik(eta[m], y[m], sigma2, n_nodes)
    return total
