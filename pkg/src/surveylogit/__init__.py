"""Logistic regression for stratified survey samples."""

from .estimators import (
    CoefficientVector, FitResult, MixedFitResult, RandomInterceptLogisticRegression,
    UnweightedLogisticRegression, WeightedLogisticRegression, fit_m1, fit_m2, fit_m3, fit_truth,
    marginalize,
)
from .exceptions import (
    ConvergenceError, DesignWarning, EstimationError, SeparationError, SingularDesignError,
    SurveyDataError, VarianceError,
)
from .sampler import Allocation, stratified_sample
from .survey_data import (
    Covariate, CovariateSchema, FinitePopulation, ModelFormula, SurveySample, build_design_matrix,
    load_population, load_sample, load_schema,
)

__version__ = "0.1.0"

__all__ = [
    "Allocation", "CoefficientVector", "ConvergenceError", "Covariate", "CovariateSchema",
    "DesignWarning", "EstimationError", "FinitePopulation", "FitResult", "MixedFitResult",
    "ModelFormula", "RandomInterceptLogisticRegression", "SeparationError", "SingularDesignError",
    "SurveyDataError", "SurveySample", "UnweightedLogisticRegression", "VarianceError",
    "WeightedLogisticRegression", "build_design_matrix", "fit_m1", "fit_m2", "fit_m3", "fit_truth",
    "load_population", "load_sample", "load_schema", "marginalize", "stratified_sample",
]
