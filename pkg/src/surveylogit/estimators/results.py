"""Fit result containers and their CSV serialization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..exceptions import EstimationError


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))
        if values.shape != (len(self.labels),):
            raise ValueError("coefficient values and labels differ in length")
        if not np.all(np.isfinite(values)):
            raise EstimationError("non-finite coefficient estimate")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, label: str) -> float:
        return float(self.values[self.labels.index(label)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels, (float(v) for v in self.values)))


def _check_covariance(cov):
    cov = np.array(cov, dtype=float)
    if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-8 * max(1.0, np.max(np.abs(cov), initial=0.0)):
        raise EstimationError("covariance matrix is not symmetric")
    cov = 0.5 * (cov + cov.T)
    cov.setflags(write=False)
    return cov


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a single-level logistic fit (M1, M2 or the census truth)."""

    method: str
    coefficients: CoefficientVector
    covariance: np.ndarray
    n_iter: int
    converged: bool
    loglik: float

    def __post_init__(self):
        object.__setattr__(self, "covariance", _check_covariance(self.covariance))

    @property
    def labels(self):
        return self.coefficients.labels

    @property
    def params(self) -> np.ndarray:
        return self.coefficients.values

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


@dataclass(frozen=True, eq=False)
class MixedFitResult:
    """Random-intercept fit: conditional ``gamma``, variance, marginal ``beta``.

    ``covariance`` is for ``gamma`` (conditional scale). ``marginal_se`` is the
    delta-method SE of ``beta`` holding ``sigma2_u`` fixed.
    """

    gamma: CoefficientVector
    sigma2_u: float
    beta: CoefficientVector
    random_effects: dict[int, float]
    covariance: np.ndarray
    n_iter: int
    converged: bool
    loglik: float
    boundary: bool = False
    method: str = field(default="M3")

    def __post_init__(self):
        object.__setattr__(self, "covariance", _check_covariance(self.covariance))

    @property
    def labels(self):
        return self.beta.labels

    @property
    def coefficients(self) -> CoefficientVector:
        return self.beta

    @property
    def params(self) -> np.ndarray:
        return self.beta.values

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def attenuation(self) -> float:
        from .mixed import C_ATTENUATION

        return float(np.sqrt(1.0 + C_ATTENUATION**2 * self.sigma2_u))

    @property
    def marginal_se(self) -> np.ndarray:
        return self.se / self.attenuation


class WaldRow(NamedTuple):
    label: str
    estimate: float
    se: float
    z: float


def wald_statistics(fit: FitResult | MixedFitResult) -> list[WaldRow]:
    """Estimate, SE and z = estimate / SE per coefficient.

    For mixed fits the conditional coefficients and SEs are used.
    """
    if isinstance(fit, MixedFitResult):
        est, se, labels = fit.gamma.values, fit.se, fit.gamma.labels
    else:
        est, se, labels = fit.params, fit.se, fit.labels
    if np.any(se <= 0):
        bad = [lab for lab, s in zip(labels, se) if s <= 0]
        raise EstimationError(f"zero standard error for {bad}")
    return [WaldRow(lab, float(b), float(s), float(b / s)) for lab, b, s in zip(labels, est, se)]


def write_fit_csv(fit: FitResult | MixedFitResult, path) -> None:
    """``label,estimate,se,z`` rows; mixed fits append ``gamma[...]`` rows and ``sigma2_u``.

    For mixed fits the main rows carry the marginal coefficients with their
    delta-method SEs; ``gamma[label]`` rows carry the conditional scale.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "estimate", "se", "z"])
        if isinstance(fit, MixedFitResult):
            for lab, b, s in zip(fit.labels, fit.beta.values, fit.marginal_se):
                writer.writerow([lab, repr(float(b)), repr(float(s)), repr(float(b / s)) if s > 0 else "nan"])
            for row in wald_statistics(fit):
                writer.writerow([f"gamma[{row.label}]", repr(row.estimate), repr(row.se), repr(row.z)])
            writer.writerow(["sigma2_u", repr(float(fit.sigma2_u)), "", ""])
        else:
            for row in wald_statistics(fit):
                writer.writerow([row.label, repr(row.estimate), repr(row.se), repr(row.z)])
