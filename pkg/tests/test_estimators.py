import math

import numpy as np
import pytest
from scipy.special import expit, logit

from surveylogit.estimators.irls import check_rank, irls, logistic_loglik, weighted_score
from surveylogit.estimators.logistic import (
    fit_m1, fit_m2, fit_truth, linearized_variance, stratified_score_variance,
)
from surveylogit.estimators.results import CoefficientVector, FitResult, wald_statistics, write_fit_csv
from surveylogit.exceptions import (
    ConvergenceError, DesignWarning, EstimationError, SeparationError, SingularDesignError, VarianceError,
)
from surveylogit.survey_data import ModelFormula, build_design_matrix

from conftest import intercept_schema, make_population, make_sample

ONE = np.ones((2, 1))
Y_ONLY = ModelFormula("y", ())


def _sample(y, w, strata=None):
    n = len(y)
    strata = np.ones(n, int) if strata is None else strata
    return make_sample(intercept_schema(), strata, y, np.zeros(n, int), w)


class TestIRLS:
    def test_half(self):
        sol = irls(ONE, [1, 0])
        assert sol.coef[0] == pytest.approx(0.0, abs=1e-12)

    def test_three_of_four(self):
        sol = irls(np.ones((4, 1)), [1, 1, 1, 0])
        assert sol.coef[0] == pytest.approx(math.log(3), abs=1e-10)

    def test_weighted_proportion(self):
        sol = irls(ONE, [1, 0], [3, 1])
        assert sol.coef[0] == pytest.approx(math.log(3), abs=1e-10)

    def test_score_vanishes(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([np.ones(300), rng.normal(size=(300, 3))])
        y = rng.random(300) < expit(X @ [0.2, 1.0, -0.5, 0.3])
        w = rng.uniform(0.5, 4, 300)
        sol = irls(X, y, w)
        assert np.max(np.abs(weighted_score(X, y, w, sol.coef))) < 1e-7

    def test_information_matrix(self):
        sol = irls(np.ones((4, 1)), [1, 1, 0, 0])
        assert sol.information[0, 0] == pytest.approx(1.0)

    def test_fractional_response(self):
        sol = irls(np.ones((3, 1)), [0.2, 0.5, 0.8])
        assert sol.coef[0] == pytest.approx(0.0, abs=1e-10)

    def test_rank_deficiency_names_columns(self):
        X = np.column_stack([np.ones(6), [0, 1, 0, 1, 0, 1], [0, 1, 0, 1, 0, 1]])
        with pytest.raises(SingularDesignError) as err:
            irls(X, [0, 1, 1, 0, 1, 0], labels=["(Intercept)", "a", "b"])
        assert len(err.value.dependent_columns) == 1
        assert err.value.dependent_columns[0] in ("a", "b")

    def test_separation(self):
        X = np.column_stack([np.ones(6), [0, 0, 0, 1, 1, 1]])
        with pytest.raises(SeparationError):
            irls(X, [0, 1, 0, 1, 1, 1])

    def test_complete_separation(self):
        X = np.column_stack([np.ones(6), [0, 0, 0, 1, 1, 1]])
        with pytest.raises(SeparationError):
            irls(X, [0, 0, 0, 1, 1, 1])

    def test_iteration_budget(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([np.ones(100), rng.normal(size=100)])
        y = rng.random(100) < 0.4
        with pytest.raises(ConvergenceError) as err:
            irls(X, y, max_iter=1)
        assert err.value.last_iterate is not None

    def test_nonpositive_weight(self):
        with pytest.raises(ValueError):
            irls(ONE, [1, 0], [1, 0])

    def test_loglik(self):
        assert logistic_loglik(ONE, np.array([1, 0]), 1.0, np.zeros(1)) == pytest.approx(2 * math.log(0.5))

    def test_check_rank_passes_full_rank(self):
        check_rank(np.eye(3))


class TestM1:
    def test_closed_form_se(self):
        fit = fit_m1(_sample([1, 1, 0, 0], [5.0] * 4), Y_ONLY)
        assert fit.params[0] == pytest.approx(0.0, abs=1e-12)
        assert fit.se[0] == pytest.approx(1.0)
        assert fit.method == "M1"

    def test_ignores_weights(self):
        a = fit_m1(_sample([1, 0, 0], [1.0, 1.0, 1.0]), Y_ONLY)
        b = fit_m1(_sample([1, 0, 0], [9.0, 9.0, 9.0]), Y_ONLY)
        assert a.params[0] == b.params[0] == pytest.approx(logit(1 / 3))

    def test_separated_dummy(self):
        schema = intercept_schema()
        s = make_sample(schema, np.ones(6, int), [0, 0, 0, 1, 1, 1], [0, 0, 0, 1, 1, 1], [1.0] * 6)
        with pytest.raises(SeparationError):
            fit_m1(s, ModelFormula("y", ("x",)))


class TestM2:
    def test_weighted_closed_form(self):
        with pytest.warns(DesignWarning):
            sample = _sample([1, 0], [3.0, 1.0])
        fit = fit_m2(sample, Y_ONLY, variance=False)
        assert fit.params[0] == pytest.approx(math.log(3), abs=1e-10)
        assert np.all(np.isnan(fit.covariance))

    def test_constant_weights_equal_m1(self):
        rng = np.random.default_rng(8)
        n = 120
        x = rng.integers(0, 2, n)
        y = (rng.random(n) < expit(-0.3 + 0.9 * x)).astype(int)
        s = make_sample(intercept_schema(), (np.arange(n) % 3) + 1, y, x, np.full(n, 7.5))
        f = ModelFormula("y", ("x",))
        assert np.max(np.abs(fit_m2(s, f).params - fit_m1(s, f).params)) < 1e-8

    def test_single_unit_stratum_variance_error(self):
        with pytest.raises(VarianceError, match="single sampled unit"):
            fit_m2(_sample([1, 0, 1], [2.0, 2.0, 1.0], strata=np.array([1, 1, 2])), Y_ONLY)

    def test_variance_matches_information_when_unweighted(self):
        rng = np.random.default_rng(11)
        n = 20000
        x = rng.integers(0, 2, n)
        y = (rng.random(n) < expit(-0.4 + 0.8 * x)).astype(int)
        s = make_sample(intercept_schema(), np.ones(n, int), y, x, np.ones(n))
        f = ModelFormula("y", ("x",))
        m1, m2 = fit_m1(s, f), fit_m2(s, f)
        ratio = np.diag(m2.covariance) / np.diag(m1.covariance)
        assert np.all(np.abs(ratio - 1) < 0.10)

    def test_covariance_symmetric(self):
        rng = np.random.default_rng(2)
        n = 200
        x = rng.integers(0, 2, n)
        y = (rng.random(n) < 0.4).astype(int)
        strata = rng.integers(1, 5, n)
        s = make_sample(intercept_schema(), strata, y, x, np.array([1.0, 2.0, 3.0, 4.0])[strata - 1])
        fit = fit_m2(s, ModelFormula("y", ("x",)))
        assert np.max(np.abs(fit.covariance - fit.covariance.T)) < 1e-10


class TestStratifiedVariance:
    def test_census_stratum_contributes_nothing(self):
        z = np.array([[1.0], [3.0], [2.0], [7.0]])
        strata = np.array([1, 1, 2, 2])
        full = stratified_score_variance(z, strata, {1: 2, 2: 10})
        only2 = stratified_score_variance(z[2:], strata[2:], {2: 10})
        assert full == pytest.approx(only2)

    def test_identical_scores_within_strata(self):
        z = np.array([[1.0, 2.0], [1.0, 2.0], [-4.0, 0.5], [-4.0, 0.5]])
        V = stratified_score_variance(z, np.array([1, 1, 2, 2]))
        assert np.all(V == 0)

    def test_hand_computed(self):
        # stratum of 3: deviations (-1, 0, 1), factor 3/2 -> 3/2 * 2 = 3
        z = np.array([[1.0], [2.0], [3.0]])
        assert stratified_score_variance(z, np.ones(3))[0, 0] == pytest.approx(3.0)
        # fpc with N_h = 6 halves it
        assert stratified_score_variance(z, np.ones(3), {1: 6})[0, 0] == pytest.approx(1.5)

    def test_missing_population_size(self):
        with pytest.raises(VarianceError, match="missing"):
            stratified_score_variance(np.ones((2, 1)), np.array([1, 1]), {2: 5})

    def test_linearized_variance_intercept_only(self):
        # intercept-only, one stratum: H = sum w p q, V = n/(n-1) sum (z - zbar)^2
        s = _sample([1, 0, 1, 1], [2.0, 2.0, 2.0, 2.0])
        d = build_design_matrix(s, Y_ONLY)
        beta = np.array([math.log(3)])
        p = 0.75
        H = 8 * p * (1 - p)
        z = 2 * (np.array([1, 0, 1, 1]) - p)
        V = 4 / 3 * np.sum((z - z.mean()) ** 2)
        assert linearized_variance(s, d, beta)[0, 0] == pytest.approx(V / H**2)


class TestTruth:
    def test_symmetric_null(self):
        rng = np.random.default_rng(4)
        N = 40000
        x = rng.integers(0, 2, N)
        y = rng.integers(0, 2, N)
        pop = make_population(intercept_schema(), np.ones(N, int), y, x)
        fit = fit_truth(pop, ModelFormula("y", ("x",)))
        assert np.max(np.abs(fit.params)) < 0.05
        assert fit.method == "TRUTH"

    def test_census_sample_equivalence(self):
        rng = np.random.default_rng(5)
        n = 60
        x = rng.integers(0, 2, n)
        y = (rng.random(n) < expit(0.5 * x)).astype(int)
        pop = make_population(intercept_schema(), np.ones(n, int), y, x)
        smp = make_sample(intercept_schema(), np.ones(n, int), y, x, np.ones(n))
        f = ModelFormula("y", ("x",))
        assert np.array_equal(fit_truth(pop, f).params, fit_m1(smp, f).params)


class TestResults:
    def test_nonfinite_rejected(self):
        with pytest.raises(EstimationError):
            CoefficientVector(np.array([1.0, np.nan]), ("a", "b"))

    def test_label_lookup(self):
        v = CoefficientVector(np.array([1.0, 2.0]), ("a", "b"))
        assert v["b"] == 2.0
        assert v.as_dict() == {"a": 1.0, "b": 2.0}

    def _fit(self, est, se):
        cov = np.diag(np.asarray(se, float) ** 2)
        return FitResult("M2", CoefficientVector(np.asarray(est, float), tuple("abc"[:len(est)])), cov, 1, True, 0.0)

    @pytest.mark.parametrize("est,se,z", [(2.0, 0.5, 4.0), (0.0, 0.3, 0.0)])
    def test_wald(self, est, se, z):
        assert wald_statistics(self._fit([est], [se]))[0].z == pytest.approx(z)

    def test_wald_table_value(self):
        row = wald_statistics(self._fit([-2.482], [0.133]))[0]
        assert row.z == pytest.approx(-18.662, abs=1e-3)

    def test_wald_zero_se(self):
        with pytest.raises(EstimationError, match="zero standard error"):
            wald_statistics(self._fit([1.0], [0.0]))

    def test_fit_csv(self, tmp_path):
        write_fit_csv(self._fit([2.0, 1.0], [0.5, 0.25]), tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines == ["label,estimate,se,z", "a,2.0,0.5,4.0", "b,1.0,0.25,4.0"]
