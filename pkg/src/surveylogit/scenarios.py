"""Synthetic scenarios with known structure for simulation runs.

``noninformative`` -- strata assigned independently of (X, Y); the model is
correctly specified, so all three estimators should agree.

``informative`` -- strata are the cross-classification of three design
covariates, response prevalence varies strongly across strata and the
sampling fractions follow the same gradient. A seed survey is drawn from a
census and the working population is synthesized from that weighted sample
cell by cell, the way a pseudo-population is built from real survey data.

``demo`` -- a tiny two-stratum population for smoke tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import rng as rng_streams
from .sampler import Allocation, replicate_allocation_from_sample, stratified_sample
from .survey_data import Covariate, CovariateSchema, FinitePopulation, ModelFormula, SurveySample
from .synthesis import cell_counts, covariate_distributions, synthesize


@dataclass(frozen=True, eq=False)
class Scenario:
    population: FinitePopulation
    allocation: Allocation
    formulas: tuple[ModelFormula, ...]
    seed_sample: SurveySample | None = None


def _levels(k):
    return tuple(str(i) for i in range(1, k + 1))


def _allocate(strata_sizes, minimum=2):
    """n_h = round(f_h N_h) clipped to [minimum, N_h]; ``strata_sizes`` maps h -> (N_h, f_h)."""
    sizes = {}
    for h, (N_h, f) in strata_sizes.items():
        n_h = int(min(N_h, max(minimum, round(f * N_h))))
        if n_h > 0:
            sizes[h] = n_h
    return Allocation(sizes)


def noninformative(seed=1, N=50_000, n_strata=20, n=2_000) -> Scenario:
    """Strata independent of (X, Y); sampling fractions vary from 2:1 across strata."""
    gen = rng_streams.generator(seed, "noninformative")
    schema = CovariateSchema(
        (Covariate("x1", _levels(4)), Covariate("x2", _levels(3))), ("y",)
    )
    x1 = gen.choice(4, size=N, p=[0.3, 0.25, 0.25, 0.2])
    x2 = gen.choice(3, size=N, p=[0.4, 0.35, 0.25])
    beta = {"b0": -0.8, "x1": np.array([0.0, 0.6, 1.0, -0.5]), "x2": np.array([0.0, 0.4, -0.7])}
    eta = beta["b0"] + beta["x1"][x1] + beta["x2"][x2]
    y = (gen.random(N) < expit(eta)).astype(np.int8)
    strata = gen.integers(0, n_strata, size=N) + 1
    pop = FinitePopulation(schema, np.arange(1, N + 1), strata, y[:, None], np.column_stack([x1, x2]))
    rel = np.linspace(0.67, 1.33, n_strata)
    sizes = pop.stratum_sizes()
    base = n / sum(rel[h - 1] * sizes[h] for h in sizes)
    alloc = _allocate({h: (sizes[h], base * rel[h - 1]) for h in sizes})
    formulas = (ModelFormula("y", ("x1", "x2")),)
    return Scenario(pop, alloc, formulas)


# design covariates: x1 "activity" (7), x2 "region" (3), x3 "size class" (6); x4 free
_INF_X1 = np.array([0.16, 0.09, 0.17, 0.11, 0.18, 0.14, 0.15])
_INF_X2 = np.array([0.5, 0.3, 0.2])
_INF_X3 = np.array([0.40, 0.25, 0.15, 0.10, 0.06, 0.04])
_INF_FRACTION = np.array([0.009, 0.014, 0.023, 0.046, 0.092, 0.23])
_INF_EFFECT_X1 = np.array([0.0, 0.8, 1.2, 0.6, 0.4, 1.5, 0.3])
_INF_EFFECT_X2 = np.array([0.0, -0.6, 0.3])
_INF_EFFECT_X3 = np.array([0.0, 0.6, 1.2, 1.8, 2.4, 3.0])


def informative(seed=1, N=50_000, interaction_sd=0.3, seed_oversample=4.0) -> Scenario:
    """Scenario with response-driven strata and sample-based synthesis.

    Steps: (1) a census with stratum-level prevalence
    logit p_h = b0 + a1[x1] + a2[x2] + a3[x3] + e_h, e_h ~ N(0, interaction_sd^2);
    (2) a seed survey with sampling fraction rising with x3;
    (3) the working population synthesized from the seed survey's
    (stratum, y) cell totals, x4 drawn from weighted stratum proportions.
    The replicate allocation copies the seed survey's n_h.
    """
    gen = rng_streams.generator(seed, "informative")
    schema = CovariateSchema(
        (Covariate("x1", _levels(7)), Covariate("x2", _levels(3)),
         Covariate("x3", _levels(6)), Covariate("x4", _levels(2))),
        ("y",),
    )
    cells = [(a, b, c) for a in range(7) for b in range(3) for c in range(6)]
    probs = np.array([_INF_X1[a] * _INF_X2[b] * _INF_X3[c] for a, b, c in cells])
    sizes = gen.multinomial(N, probs / probs.sum())
    lin = np.array([-2.2 + _INF_EFFECT_X1[a] + _INF_EFFECT_X2[b] + _INF_EFFECT_X3[c] for a, b, c in cells])
    lin = lin + gen.normal(0.0, interaction_sd, size=len(cells))

    strata, ys, covs = [], [], []
    for h, ((a, b, c), N_h) in enumerate(zip(cells, sizes), start=1):
        if N_h == 0:
            continue
        strata.append(np.full(N_h, h))
        ys.append(gen.random(N_h) < expit(lin[h - 1]))
        x4 = (gen.random(N_h) < expit(-0.5 + 0.3 * c)).astype(int)
        covs.append(np.column_stack([np.full((N_h, 3), (a, b, c)), x4]))
    census = FinitePopulation(
        schema, np.arange(1, int(sizes.sum()) + 1), np.concatenate(strata),
        np.concatenate(ys).astype(np.int8)[:, None], np.concatenate(covs),
    )
    N_h = census.stratum_sizes()
    fraction = {h: _INF_FRACTION[cells[h - 1][2]] for h in N_h}
    seed_alloc = _allocate({h: (N_h[h], min(1.0, seed_oversample * fraction[h])) for h in N_h})
    survey = stratified_sample(census, seed_alloc, rng_streams.child(seed, "seed-survey"))

    dists = {(d.stratum, d.covariate): d for d in covariate_distributions(survey, "x4")}
    pseudo = synthesize(survey, ("x1", "x2", "x3"), ("x4",), dists,
                        rng_streams.child(seed, "synthesis"), cells=cell_counts(survey))
    P_h = pseudo.stratum_sizes()
    alloc = _allocate({h: (P_h[h], fraction[h]) for h in P_h})
    formulas = (ModelFormula("y", ("x1",)), ModelFormula("y", ("x1", "x2", "x3")))
    return Scenario(pseudo, alloc, formulas, survey)


def demo(seed=1, N=2_000) -> Scenario:
    """Two strata of unequal size, one 3-level covariate, ~10% sampled."""
    gen = rng_streams.generator(seed, "demo")
    schema = CovariateSchema((Covariate("x1", _levels(3)),), ("y",))
    strata = np.where(np.arange(N) < N // 4, 1, 2)
    x1 = gen.choice(3, size=N, p=[0.4, 0.35, 0.25])
    eta = -0.5 + np.array([0.0, 0.7, -0.4])[x1] + np.where(strata == 1, 0.5, 0.0)
    y = (gen.random(N) < expit(eta)).astype(np.int8)
    pop = FinitePopulation(schema, np.arange(1, N + 1), strata, y[:, None], x1[:, None])
    alloc = Allocation({1: N // 20, 2: N // 20})
    return Scenario(pop, alloc, (ModelFormula("y", ("x1",)),))


GENERATORS = {"noninformative": noninformative, "informative": informative, "demo": demo}
