"""Iteratively reweighted least squares for case-weighted logistic regression."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.special import expit

from ..exceptions import ConvergenceError, SeparationError, SingularDesignError

MAX_ITER = 50
COEF_TOL = 1e-8
LOGLIK_RTOL = 1e-10
BOUNDARY_EPS = 1e-10


class IRLSSolution(NamedTuple):
    coef: np.ndarray
    information: np.ndarray
    n_iter: int
    loglik: float


def logistic_loglik(X, y, w, beta) -> float:
    """Case-weighted Bernoulli log-likelihood, sum_i w_i [y_i eta_i - log(1 + e^eta_i)]."""
    eta = X @ beta
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def weighted_score(X, y, w, beta) -> np.ndarray:
    return X.T @ (w * (y - expit(X @ beta)))


def information_matrix(X, w, beta) -> np.ndarray:
    """X' W X with W = diag(w_i p_i (1 - p_i))."""
    p = expit(X @ beta)
    v = w * p * (1.0 - p)
    return X.T @ (v[:, None] * X)


def check_rank(X, w=None, labels=None) -> None:
    """Raise :class:`SingularDesignError` naming columns that are linearly dependent."""
    rows = X if w is None else X[np.asarray(w) > 0]
    if rows.shape[0] == 0:
        raise SingularDesignError("no rows with positive weight")
    _, r, piv = scipy.linalg.qr(rows, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max(initial=0.0) * max(rows.shape) * np.finfo(float).eps * 10
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        dep = sorted(int(j) for j in piv[rank:])
        names = [labels[j] for j in dep] if labels is not None else dep
        raise SingularDesignError(
            f"design is rank deficient (rank {rank} < {X.shape[1]}); dependent columns: {names}",
            dependent_columns=names,
        )


def irls(X, y, w=None, start=None, *, labels=None, max_iter=MAX_ITER,
         tol=COEF_TOL, loglik_rtol=LOGLIK_RTOL) -> IRLSSolution:
    """Maximize sum_i w_i log-likelihood_i over beta by Newton/IRLS steps.

    ``y`` may be fractional in [0, 1]. Iteration stops once the largest
    coefficient change falls below ``tol``; a relative log-likelihood change
    below ``loglik_rtol`` triggers one final Newton step and then stops.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, l = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("case weights must be positive and finite")
    check_rank(X, w, labels)

    beta = np.zeros(l) if start is None else np.array(start, dtype=float)
    ll = logistic_loglik(X, y, w, beta)
    finishing = False
    for it in range(1, max_iter + 1):
        eta = X @ beta
        p = expit(eta)
        v = w * p * (1.0 - p)
        H = X.T @ (v[:, None] * X)
        g = X.T @ (w * (y - p))
        try:
            step = scipy.linalg.solve(H, g, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        # step halving keeps the iteration monotone far from the optimum
        new_ll = logistic_loglik(X, y, w, beta + step)
        halvings = 0
        while new_ll < ll - 1e-12 * abs(ll) and halvings < 30:
            step *= 0.5
            new_ll = logistic_loglik(X, y, w, beta + step)
            halvings += 1
        beta = beta + step
        change = np.max(np.abs(step)) if l else 0.0
        rel = abs(new_ll - ll) / max(abs(ll), 1e-300)
        ll = new_ll
        if change < tol or finishing:
            break
        if rel < loglik_rtol:
            finishing = True
    else:
        _check_separation(X, w, beta, it)
        raise ConvergenceError(
            f"IRLS did not converge in {max_iter} iterations (last change {change:.3g})",
            last_iterate=beta,
        )
    _check_separation(X, w, beta, it)
    return IRLSSolution(beta, information_matrix(X, w, beta), it, ll)


def _check_separation(X, w, beta, it):
    p = expit(X @ beta)
    at_edge = (p < BOUNDARY_EPS) | (p > 1.0 - BOUNDARY_EPS)
    if np.any(at_edge):
        raise SeparationError(
            f"{int(at_edge.sum())} fitted probabilities within {BOUNDARY_EPS:g} of 0/1 "
            f"after {it} iterations (|beta| = {np.linalg.norm(beta):.3g}); "
            "data appear separated"
        )


def irls_solve(design, weights=None, start=None, **kwargs) -> IRLSSolution:
    """:func:`irls` on a :class:`~surveylogit.survey_data.DesignMatrix`."""
    if start is not None and hasattr(start, "values"):
        start = start.values
    return irls(design.X, design.y, weights, start, labels=design.labels, **kwargs)
