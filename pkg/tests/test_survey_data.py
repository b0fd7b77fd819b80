import warnings

import numpy as np
import pytest

from surveylogit.exceptions import DesignWarning, SurveyDataError
from surveylogit.survey_data import (
    Covariate, CovariateSchema, ModelFormula, build_design_matrix, coefficient_labels, design_diagnostics,
    five_number_summary, load_population, load_sample, load_schema, save_schema, write_population, write_sample,
)

from conftest import make_population, make_sample, write_text

POP_CSV = """unit_id,stratum,y,x1,x2
1,1,0,a,lo
2,1,1,b,hi
3,2,1,c,lo
4,2,0,a,hi
"""


class TestSchema:
    def test_covariate_needs_two_levels(self):
        with pytest.raises(SurveyDataError, match="at least 2 levels"):
            Covariate("x", ("only",))

    def test_duplicate_levels_rejected(self):
        with pytest.raises(SurveyDataError, match="duplicate"):
            Covariate("x", ("a", "a"))

    def test_reference_index_checked(self):
        with pytest.raises(SurveyDataError, match="out of range"):
            Covariate("x", ("a", "b"), reference=2)

    def test_reserved_names(self):
        with pytest.raises(SurveyDataError, match="reserved"):
            CovariateSchema((Covariate("weight", ("a", "b")),), ("y",))

    def test_json_round_trip(self, schema, tmp_path):
        save_schema(schema, tmp_path / "s.json")
        assert load_schema(tmp_path / "s.json") == schema

    def test_reference_by_name(self):
        s = CovariateSchema.from_dict({"responses": ["y"], "covariates": [
            {"name": "x", "levels": ["1", "2", "3"], "reference": "2"}]})
        assert s.covariate("x").reference == 1
        assert coefficient_labels(s, ModelFormula("y", ("x",))) == ("(Intercept)", "x[1]", "x[3]")

    def test_invalid_json(self, tmp_path):
        write_text(tmp_path / "s.json", "{not json")
        with pytest.raises(SurveyDataError, match="invalid JSON"):
            load_schema(tmp_path / "s.json")


class TestLoadPopulation:
    def test_four_rows_two_strata(self, schema, tmp_path):
        pop = load_population(write_text(tmp_path / "p.csv", POP_CSV), schema)
        assert pop.N == 4
        assert pop.n_strata == 2
        assert {h: len(v) for h, v in pop.stratum_index.items()} == {1: 2, 2: 2}
        assert pop.levels("x1").tolist() == [0, 1, 2, 0]

    def test_response_two_names_row_and_column(self, schema, tmp_path):
        bad = POP_CSV.replace("3,2,1,c,lo", "3,2,2,c,lo")
        with pytest.raises(SurveyDataError) as err:
            load_population(write_text(tmp_path / "p.csv", bad), schema)
        assert err.value.row == 4
        assert err.value.column == "y"
        assert "row 4" in str(err.value) and "'y'" in str(err.value)

    def test_unknown_level_listed(self, schema, tmp_path):
        bad = POP_CSV.replace("2,1,1,b,hi", "2,1,1,zz,hi")
        with pytest.raises(SurveyDataError, match="'zz'"):
            load_population(write_text(tmp_path / "p.csv", bad), schema)

    def test_duplicate_unit_id(self, schema, tmp_path):
        bad = POP_CSV.replace("4,2,0,a,hi", "1,2,0,a,hi")
        with pytest.raises(SurveyDataError, match="duplicate unit id 1"):
            load_population(write_text(tmp_path / "p.csv", bad), schema)

    def test_missing_column_gives_expected_header(self, schema, tmp_path):
        bad = "unit_id,stratum,y,x1\n1,1,0,a\n"
        with pytest.raises(SurveyDataError, match="unit_id,stratum,y,x1,x2"):
            load_population(write_text(tmp_path / "p.csv", bad), schema)

    def test_error_names_file(self, schema, tmp_path):
        bad = POP_CSV.replace("1,1,0,a,lo", "1,1,0,a")
        with pytest.raises(SurveyDataError, match="p.csv"):
            load_population(write_text(tmp_path / "p.csv", bad), schema)


class TestLoadSample:
    CSV = "unit_id,stratum,y,x1,x2,weight\n1,1,1,a,lo,3.8\n2,1,0,b,hi,3.8\n3,2,1,c,lo,2.0\n"

    def test_valid_sample(self, schema, tmp_path):
        with warnings.catch_warnings():
            warnings.simplefilter("error", DesignWarning)
            s = load_sample(write_text(tmp_path / "s.csv", self.CSV), schema)
        assert s.weights.tolist() == [3.8, 3.8, 2.0]
        assert s.weights_constant
        assert s.unequal_weight_strata == []

    def test_negative_weight(self, schema, tmp_path):
        bad = self.CSV.replace("2.0", "-1")
        with pytest.raises(SurveyDataError, match="positive"):
            load_sample(write_text(tmp_path / "s.csv", bad), schema)

    def test_unequal_weights_flagged(self, schema, tmp_path):
        bad = self.CSV.replace("2,1,0,b,hi,3.8", "2,1,0,b,hi,3.0").replace("1,1,1,a,lo,3.8", "1,1,1,a,lo,2.0")
        with pytest.warns(DesignWarning, match="within strata"):
            s = load_sample(write_text(tmp_path / "s.csv", bad), schema)
        assert s.unequal_weight_strata == [1]
        assert not s.weights_constant

    def test_relative_tolerance(self, schema):
        with warnings.catch_warnings():
            warnings.simplefilter("error", DesignWarning)
            s = make_sample(schema, [1, 1], [0, 1], [[0, 0], [1, 1]], [2.0, 2.0 * (1 + 1e-12)])
        assert s.weights_constant

    def test_missing_weight_column(self, schema, tmp_path):
        with pytest.raises(SurveyDataError, match="expected header unit_id,stratum,y,x1,x2,weight"):
            load_sample(write_text(tmp_path / "s.csv", POP_CSV), schema)


class TestRoundTrip:
    def test_population(self, schema, tmp_path):
        pop = load_population(write_text(tmp_path / "p.csv", POP_CSV), schema)
        write_population(pop, tmp_path / "q.csv")
        assert list(load_population(tmp_path / "q.csv", schema).records()) == list(pop.records())

    def test_sample_weights_bit_exact(self, schema, tmp_path):
        w = [1 / 3, 1 / 3, 2 ** 0.5, 2 ** 0.5]
        s = make_sample(schema, [1, 1, 2, 2], [0, 1, 1, 0], [[0, 0], [1, 1], [2, 0], [0, 1]], w)
        write_sample(s, tmp_path / "s.csv")
        t = load_sample(tmp_path / "s.csv", schema)
        assert t.weights.tobytes() == s.weights.tobytes()
        assert list(t.records()) == list(s.records())


class TestFormula:
    def test_parse_and_print(self):
        f = ModelFormula.parse(" y ~ x1 +x2 ")
        assert f == ModelFormula("y", ("x1", "x2"))
        assert str(f) == "y ~ x1 + x2"
        assert ModelFormula.parse(str(f)) == f

    def test_intercept_only(self):
        assert ModelFormula.parse("y ~ 1").covariates == ()

    @pytest.mark.parametrize("text", ["y x1", "y ~ x1 * x2", "y ~ x1 + x1", "~ x1", "y ~ "])
    def test_rejected(self, text):
        with pytest.raises(SurveyDataError):
            ModelFormula.parse(text)

    def test_validated_against_schema(self, schema):
        with pytest.raises(SurveyDataError, match="unknown covariate"):
            ModelFormula.parse("y ~ x9", schema)
        with pytest.raises(SurveyDataError, match="unknown response"):
            ModelFormula.parse("z ~ x1", schema)


class TestDesignMatrix:
    def _schema(self, *ks):
        return CovariateSchema(tuple(Covariate(f"x{j + 1}", tuple(str(i) for i in range(1, k + 1)))
                                     for j, k in enumerate(ks)), ("y",))

    def test_seven_levels_gives_seven_columns(self):
        s = self._schema(7)
        rng = np.random.default_rng(0)
        pop = make_population(s, np.ones(50, int), rng.integers(0, 2, 50), np.tile(np.arange(7), 8)[:50])
        assert build_design_matrix(pop, ModelFormula("y", ("x1",))).l == 7

    def test_three_covariates_gives_fourteen(self):
        s = self._schema(7, 3, 6)
        n = 7 * 3 * 6
        grid = np.array([(a, b, c) for a in range(7) for b in range(3) for c in range(6)])
        pop = make_population(s, np.ones(n, int), np.arange(n) % 2, grid)
        d = build_design_matrix(pop, ModelFormula("y", ("x1", "x2", "x3")))
        assert d.l == 14 == ModelFormula("y", ("x1", "x2", "x3")).n_coefficients(s)
        assert d.labels[:3] == ("(Intercept)", "x1[2]", "x1[3]")
        assert np.array_equal(d.X.sum(axis=1), 1 + (grid > 0).sum(axis=1))

    def test_reference_row(self, schema):
        pop = make_population(schema, [1, 1, 1], [0, 1, 1], [[0, 0], [1, 1], [2, 0]])
        d = build_design_matrix(pop, ModelFormula("y", ("x1", "x2")))
        assert d.X[0].tolist() == [1, 0, 0, 0]
        assert d.X[1].tolist() == [1, 1, 0, 1]

    def test_blocks_follow_schema_order(self, schema):
        pop = make_population(schema, [1, 1, 1], [0, 1, 1], [[0, 0], [1, 1], [2, 0]])
        a = build_design_matrix(pop, ModelFormula("y", ("x2", "x1")))
        b = build_design_matrix(pop, ModelFormula("y", ("x1", "x2")))
        assert a.labels == b.labels and np.array_equal(a.X, b.X)

    def test_unobserved_level_is_an_error(self, schema):
        pop = make_population(schema, [1, 1], [0, 1], [[0, 0], [1, 1]])
        with pytest.raises(SurveyDataError, match="x1\\[c\\]"):
            build_design_matrix(pop, ModelFormula("y", ("x1",)))

    def test_population_and_sample_rows_agree(self, schema):
        x = [[0, 0], [1, 1], [2, 0], [1, 0]]
        pop = make_population(schema, [1, 1, 2, 2], [0, 1, 1, 0], x)
        smp = make_sample(schema, [1, 1, 2, 2], [0, 1, 1, 0], x, [2.0, 2.0, 1.0, 1.0])
        f = ModelFormula("y", ("x1", "x2"))
        assert np.array_equal(build_design_matrix(pop, f).X, build_design_matrix(smp, f).X)


class TestDiagnostics:
    def test_median_stratum_size(self, schema):
        s = make_sample(schema, [1, 2, 3], [0, 1, 0], [[0, 0], [1, 0], [2, 1]], [1.0, 38.0, 14535.0])
        rep = design_diagnostics(s, {1: 1, 2: 38, 3: 14535})
        assert rep.size_quantiles["median"] == 38

    def test_census_stratum_fraction_one(self, schema):
        s = make_sample(schema, [1, 1], [0, 1], [[0, 0], [1, 1]], [1.0, 1.0])
        rep = design_diagnostics(s, {1: 2})
        assert rep.strata[0].fraction == 1.0

    def test_fraction_ratio(self, schema):
        s = make_sample(schema, [1] * 10, [0, 1] * 5, [[0, 0]] * 10, [3.8] * 10)
        rep = design_diagnostics(s, {1: 38})
        assert rep.strata[0].fraction == pytest.approx(0.2632, abs=1e-4)
        assert "strata: 1" in rep.format()

    def test_quantile_convention(self):
        q = five_number_summary([1, 2, 3, 4, 5])
        assert (q["q1"], q["median"], q["q3"]) == (2, 3, 4)
