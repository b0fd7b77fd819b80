from .classifiers import RandomInterceptLogisticRegression, UnweightedLogisticRegression, WeightedLogisticRegression
from .logistic import fit_m1, fit_m2, fit_truth, linearized_variance, stratified_score_variance
from .mixed import fit_m3, fit_random_intercept, marginalize
from .results import CoefficientVector, FitResult, MixedFitResult, wald_statistics, write_fit_csv

__all__ = [
    "CoefficientVector", "FitResult", "MixedFitResult", "RandomInterceptLogisticRegression",
    "UnweightedLogisticRegression", "WeightedLogisticRegression", "fit_m1", "fit_m2", "fit_m3",
    "fit_random_intercept", "fit_truth", "linearized_variance", "marginalize",
    "stratified_score_variance", "wald_statistics", "write_fit_csv",
]
