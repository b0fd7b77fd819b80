"""Property-based checks over randomly generated instances."""

import math

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.special import expit

from surveylogit import rng as rng_streams
from surveylogit.estimators.irls import irls, weighted_score
from surveylogit.estimators.mixed import C_ATTENUATION, marginalize
from surveylogit.exceptions import EstimationError
from surveylogit.harness import ReplicateEstimates, summarize
from surveylogit.estimators.results import CoefficientVector
from surveylogit.survey_data import (
    Covariate, CovariateSchema, ModelFormula, SurveySample, build_design_matrix, load_sample, write_sample,
)
from surveylogit.synthesis import cell_counts, covariate_distributions, largest_remainder, synthesize

seeds = st.integers(0, 2**32 - 1)


def _instance(seed, n, l):
    gen = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), gen.normal(size=(n, l - 1))])
    beta = gen.normal(0, 0.7, l)
    y = (gen.random(n) < expit(X @ beta)).astype(float)
    w = gen.uniform(0.5, 20.0, n)
    return X, y, w


def _solve(*args, **kw):
    try:
        return irls(*args, **kw)
    except EstimationError:
        assume(False)


@given(seeds, st.integers(40, 300), st.integers(1, 5), st.floats(1e-3, 1e3))
def test_argmax_invariant_to_weight_scale(seed, n, l, k):
    X, y, w = _instance(seed, n, l)
    a = _solve(X, y, w)
    b = _solve(X, y, k * w)
    assert np.max(np.abs(a.coef - b.coef)) < 1e-8


@given(seeds, st.integers(40, 300), st.integers(1, 6), st.floats(0.01, 500))
def test_constant_weights_equal_unweighted(seed, n, l, c):
    X, y, _ = _instance(seed, n, l)
    a = _solve(X, y)
    b = _solve(X, y, np.full(n, c))
    assert np.max(np.abs(a.coef - b.coef)) < 1e-8


@given(seeds, st.integers(40, 300), st.integers(1, 6), st.booleans())
def test_score_vanishes_at_solution(seed, n, l, weighted):
    X, y, w = _instance(seed, n, l)
    w = w if weighted else np.ones(n)
    sol = _solve(X, y, w)
    assert np.max(np.abs(weighted_score(X, y, w, sol.coef))) < 1e-7


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=15), st.floats(0, 50))
def test_marginalization_reconstructs_gamma(gamma, s2):
    gamma = np.array(gamma)
    beta = marginalize(gamma, s2)
    assert np.max(np.abs(beta * math.sqrt(1 + C_ATTENUATION**2 * s2) - gamma)) < 1e-12
    assert np.all(np.abs(beta) <= np.abs(gamma))


def _random_sample(seed, n, H):
    gen = np.random.default_rng(seed)
    schema = CovariateSchema((Covariate("a", ("1", "2", "3")), Covariate("b", ("p", "q")),
                              Covariate("c", ("u", "v", "w", "z"))), ("y", "z2"))
    strata = gen.integers(1, H + 1, n)
    stratum_w = gen.uniform(1.0, 40.0, H + 1)
    cov = np.column_stack([gen.integers(0, 3, n), gen.integers(0, 2, n), gen.integers(0, 4, n)])
    resp = gen.integers(0, 2, (n, 2))
    return SurveySample(schema, gen.permutation(10 * n)[:n] + 1, strata, resp, cov, stratum_w[strata])


@given(seeds, st.integers(1, 60), st.integers(1, 6))
def test_csv_round_trip(tmp_path_factory, seed, n, H):
    s = _random_sample(seed, n, H)
    path = tmp_path_factory.mktemp("rt") / "s.csv"
    write_sample(s, path)
    t = load_sample(path, s.schema)
    assert list(t.records()) == list(s.records())
    assert t.weights.tobytes() == s.weights.tobytes()


@given(seeds, st.integers(1, 80), st.sets(st.sampled_from(["a", "b", "c"])))
def test_design_row_sums(seed, n, covs):
    s = _random_sample(seed, n, 3)
    formula = ModelFormula("y", tuple(sorted(covs)))
    try:
        d = build_design_matrix(s, formula)
    except Exception:
        assume(False)
    idx = [s.schema.covariate_index(c) for c in sorted(covs)]
    nonref = (s.covariates[:, idx] != 0).sum(axis=1) if idx else np.zeros(n)
    assert np.array_equal(d.X.sum(axis=1), 1 + nonref)
    assert d.l == formula.n_coefficients(s.schema)
    assert set(np.unique(d.X[:, 1:])) <= {0.0, 1.0}


@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=30))
def test_largest_remainder(totals):
    counts = largest_remainder(totals)
    assert sum(counts) == math.floor(sum(totals) + 0.5) or abs(sum(totals) - round(sum(totals))) < 1e-6
    assert all(abs(c - t) < 1 + 1e-9 for c, t in zip(counts, totals))
    assert all(c >= 0 for c in counts)


@given(seeds, st.integers(1, 60), st.integers(1, 8))
def test_synthesis_mass_and_determinism(seed, n, H):
    s = _random_sample(seed, n, H)
    # design covariate: none; everything free
    dists = [d for c in ("a", "b", "c") for d in covariate_distributions(s, c)]
    pop1 = synthesize(s, [], ["a", "b", "c"], dists, seed)
    pop2 = synthesize(s, [], ["a", "b", "c"], dists, seed)
    assert abs(pop1.N - float(np.sum(s.weights))) <= s.n_strata
    assert pop1.N == sum(c.count for c in cell_counts(s))
    assert np.array_equal(pop1.covariates, pop2.covariates)
    assert np.array_equal(pop1.responses, pop2.responses)


@given(st.lists(st.lists(st.floats(-5, 5), min_size=2, max_size=2), min_size=2, max_size=40))
def test_mse_decomposition(biases):
    reps = [ReplicateEstimates(r, "M2", "f", ("a", "b"), np.array(b) + 1.0, np.array(b))
            for r, b in enumerate(biases, start=1)]
    rows = summarize(reps, {"f": CoefficientVector(np.ones(2), ("a", "b"))})
    for row in rows:
        R = row.n_converged
        assert abs(row.mse - (row.avbias**2 + (R - 1) / R * row.sd**2)) < 1e-12 * max(1.0, row.mse)
        assert row.mse >= row.avbias**2 - 1e-12


@given(seeds, st.lists(st.integers(0, 2**40), min_size=1, max_size=4))
def test_child_streams_deterministic(seed, parts):
    a = rng_streams.generator(seed, *parts).random(4)
    b = rng_streams.generator(seed, *parts).random(4)
    assert np.array_equal(a, b)
    c = rng_streams.generator(seed, *parts, 0).random(4)
    assert not np.array_equal(a, c)


@given(st.text(alphabet="abcxyz_", min_size=1, max_size=5).filter(lambda s: not s[0].isdigit()),
       st.lists(st.text(alphabet="abcdef", min_size=1, max_size=4), max_size=4, unique=True))
def test_formula_round_trip(response, covs):
    assume(response not in covs)
    f = ModelFormula(response, tuple(covs))
    assert ModelFormula.parse(str(f)) == f
