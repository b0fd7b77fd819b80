"""scikit-learn compatible front ends for the three estimators.

These work on a numeric design matrix (for categorical data, put a
``OneHotEncoder(drop="first")`` in front). ``fit_intercept=True`` prepends a
column of ones; the fitted intercept is then reported separately in
``intercept_`` as scikit-learn expects.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import _check_sample_weight, check_is_fitted, validate_data

from .irls import irls
from .logistic import stratified_score_variance
from .mixed import fit_random_intercept


class _SurveyLogitBase(ClassifierMixin, BaseEstimator):
    def __init__(self, fit_intercept=True):
        self.fit_intercept = fit_intercept

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.classifier_tags.multi_class = False
        return tags

    def _design(self, X):
        if self.fit_intercept:
            return np.column_stack([np.ones(X.shape[0]), X])
        return X

    def _encode_target(self, y):
        check_classification_targets(y)
        classes, y01 = np.unique(y, return_inverse=True)
        if len(classes) > 2:
            raise ValueError(f"Only binary classification is supported; got {len(classes)} classes")
        if len(classes) < 2:
            raise ValueError("the response needs both classes; only one class is present")
        self.classes_ = classes
        return y01.astype(float)

    def _labels(self, n_features):
        names = [f"x{j}" for j in range(n_features)]
        return (["(Intercept)"] if self.fit_intercept else []) + names

    def _store(self, coef, cov):
        coef = np.asarray(coef, dtype=float)
        if self.fit_intercept:
            self.intercept_ = np.array([coef[0]])
            self.coef_ = coef[None, 1:]
        else:
            self.intercept_ = np.zeros(1)
            self.coef_ = coef[None, :]
        self.covariance_ = np.asarray(cov, dtype=float)
        self.bse_ = np.sqrt(np.diag(self.covariance_))

    def decision_function(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        return X @ self.coef_[0] + self.intercept_[0]

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        positive = self.decision_function(X) > 0
        return self.classes_[positive.astype(int)]


class UnweightedLogisticRegression(_SurveyLogitBase):
    """Ordinary logistic maximum likelihood, ignoring any survey design.

    ``covariance_`` is the inverse Fisher information.
    """

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=float)
        y01 = self._encode_target(y)
        D = self._design(X)
        sol = irls(D, y01, labels=self._labels(X.shape[1]))
        self.n_iter_ = sol.n_iter
        self.loglik_ = sol.loglik
        self._store(sol.coef, np.linalg.inv(sol.information))
        return self


class WeightedLogisticRegression(_SurveyLogitBase):
    """Survey-weighted pseudo-likelihood logistic regression.

    ``covariance_`` is the linearization sandwich H^-1 V H^-1 with V the
    stratified variance of the weighted scores. Without ``strata`` the
    sample is treated as a single stratum; ``stratum_sizes`` (stratum id ->
    N_h) adds the finite population correction.
    """

    def fit(self, X, y, sample_weight=None, strata=None, stratum_sizes=None):
        X, y = validate_data(self, X, y, dtype=float)
        w = _check_sample_weight(sample_weight, X, dtype=float, ensure_non_negative=True)
        strata = np.zeros(X.shape[0], dtype=int) if strata is None else np.asarray(strata)
        if strata.shape != (X.shape[0],):
            raise ValueError("strata must have one entry per row of X")
        # zero-weight rows carry no information; drop them
        keep = w > 0
        X, y, w, strata = X[keep], y[keep], w[keep], strata[keep]
        y01 = self._encode_target(y)
        D = self._design(X)
        sol = irls(D, y01, w, labels=self._labels(X.shape[1]))
        p = expit(D @ sol.coef)
        H = D.T @ ((w * p * (1.0 - p))[:, None] * D)
        Hinv = np.linalg.inv(H)
        V = stratified_score_variance((w * (y01 - p))[:, None] * D, strata, stratum_sizes)
        cov = Hinv @ V @ Hinv
        self.n_iter_ = sol.n_iter
        self.loglik_ = sol.loglik
        self._store(sol.coef, 0.5 * (cov + cov.T))
        return self


class RandomInterceptLogisticRegression(_SurveyLogitBase):
    """Random-intercept logit fitted by Laplace maximum likelihood.

    ``groups`` gives the cluster (stratum) of each row. ``coef_`` and
    ``intercept_`` hold the population-averaged coefficients
    gamma / sqrt(1 + c^2 sigma2_u); the conditional ones are in
    ``conditional_coef_`` together with ``sigma2_u_`` and ``random_effects_``.
    ``covariance_`` is on the conditional scale.
    """

    def fit(self, X, y, groups=None):
        X, y = validate_data(self, X, y, dtype=float)
        if groups is None:
            raise ValueError("groups is required")
        groups = np.asarray(groups)
        if groups.shape != (X.shape[0],):
            raise ValueError("groups must have one entry per row of X")
        y01 = self._encode_target(y)
        D = self._design(X)
        fit = fit_random_intercept(D, y01, groups, self._labels(X.shape[1]))
        self.conditional_coef_ = np.asarray(fit.gamma.values)
        self.sigma2_u_ = fit.sigma2_u
        self.random_effects_ = dict(fit.random_effects)
        self.boundary_ = fit.boundary
        self.n_iter_ = fit.n_iter
        self.loglik_ = fit.loglik
        self._store(fit.beta.values, fit.covariance)
        self.marginal_bse_ = self.bse_ / fit.attenuation
        return self
