"""Single-level estimators: census truth, unweighted MLE (M1), pseudo-likelihood (M2)."""

from __future__ import annotations

from typing import Mapping

import numpy as np
import scipy.linalg
from scipy.special import expit

from ..exceptions import SingularDesignError, VarianceError
from ..survey_data import DesignMatrix, FinitePopulation, ModelFormula, SurveySample, build_design_matrix
from .irls import irls_solve
from .results import CoefficientVector, FitResult


def _inverse(H, labels):
    try:
        return scipy.linalg.inv(H)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularDesignError(f"information matrix is singular for {labels}") from exc


def fit_truth(population: FinitePopulation, formula: ModelFormula) -> FitResult:
    """Census coefficients beta^True: unweighted MLE over all N units."""
    design = build_design_matrix(population, formula)
    sol = irls_solve(design)
    return FitResult("TRUTH", CoefficientVector(sol.coef, design.labels),
                     _inverse(sol.information, design.labels), sol.n_iter, True, sol.loglik)


def fit_m1(sample: SurveySample, formula: ModelFormula, design: DesignMatrix | None = None) -> FitResult:
    """M1: ordinary logistic MLE ignoring the weights."""
    design = build_design_matrix(sample, formula) if design is None else design
    sol = irls_solve(design)
    return FitResult("M1", CoefficientVector(sol.coef, design.labels),
                     _inverse(sol.information, design.labels), sol.n_iter, True, sol.loglik)


def fit_m2(sample: SurveySample, formula: ModelFormula,
           population_sizes: Mapping[int, int] | None = None,
           design: DesignMatrix | None = None, *, variance: bool = True) -> FitResult:
    """M2: maximize the weighted pseudo-likelihood prod p^(y w) (1-p)^((1-y) w).

    The covariance is the stratified linearization sandwich; pass
    ``variance=False`` to skip it (the point estimate does not need it).
    """
    design = build_design_matrix(sample, formula) if design is None else design
    sol = irls_solve(design, sample.weights)
    if variance:
        cov = linearized_variance(sample, design, sol.coef, population_sizes)
    else:
        cov = np.full((design.l, design.l), np.nan)
    return FitResult("M2", CoefficientVector(sol.coef, design.labels), cov,
                     sol.n_iter, True, sol.loglik)


def stratified_score_variance(z, strata, population_sizes=None) -> np.ndarray:
    """Design variance of a stratified total sum_i z_i.

    sum_h n_h/(n_h - 1) (1 - n_h/N_h) sum_{i in h} (z_i - zbar_h)(z_i - zbar_h)'
    with the (1 - n_h/N_h) factor applied only when ``population_sizes`` is given.
    """
    z = np.asarray(z, dtype=float)
    strata = np.asarray(strata)
    ids, inv, counts = np.unique(strata, return_inverse=True, return_counts=True)
    if np.any(counts < 2):
        bad = ids[counts < 2].tolist()
        raise VarianceError(f"strata with a single sampled unit: {bad[:10]}")
    sums = np.zeros((len(ids), z.shape[1]))
    np.add.at(sums, inv, z)
    dev = z - (sums / counts[:, None])[inv]
    factor = counts / (counts - 1.0)
    if population_sizes is not None:
        try:
            N_h = np.array([population_sizes[int(h)] for h in ids], dtype=float)
        except KeyError as exc:
            raise VarianceError(f"stratum {exc.args[0]} missing from population sizes") from None
        if np.any(counts > N_h):
            raise VarianceError("sampled count exceeds population stratum size")
        factor = factor * (1.0 - counts / N_h)
    scaled = dev * np.sqrt(factor)[inv][:, None]
    return scaled.T @ scaled


def linearized_variance(sample: SurveySample, design: DesignMatrix, beta,
                        population_sizes: Mapping[int, int] | None = None) -> np.ndarray:
    """Taylor-linearization sandwich H^-1 V H^-1 for the pseudo-likelihood estimator.

    H = sum w p (1-p) x x', V the stratified variance of z_i = w_i (y_i - p_i) x_i.
    """
    beta = getattr(beta, "values", beta)
    X, y, w = design.X, design.y, sample.weights
    p = expit(X @ beta)
    H = X.T @ ((w * p * (1.0 - p))[:, None] * X)
    try:
        Hinv = scipy.linalg.inv(H)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise VarianceError("weighted information matrix is singular") from exc
    z = (w * (y - p))[:, None] * X
    V = stratified_score_variance(z, sample.strata, population_sizes)
    cov = Hinv @ V @ Hinv
    return 0.5 * (cov + cov.T)
