"""Pseudo-population generation from a weighted stratified sample.

Every (stratum, response-combination) cell observed in the sample is
expanded into as many synthetic units as the weights in that cell add up
to. Covariates that define the strata are copied from the stratum; the
remaining ("free") covariates are drawn independently per unit from a
per-stratum categorical distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import rng as rng_streams
from .exceptions import SurveyDataError
from .survey_data import FinitePopulation, SurveySample

INTEGER_SNAP = 1e-9


@dataclass(frozen=True)
class StratumCellCount:
    stratum: int
    combination: tuple[int, ...]
    weighted_total: float
    count: int


@dataclass(frozen=True, eq=False)
class CategoricalDistribution:
    covariate: str
    stratum: int
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=float)
        if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-12:
            raise SurveyDataError(
                f"probabilities for {self.covariate!r} in stratum {self.stratum} must sum to 1"
            )
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)


def _snap(x: float) -> float:
    r = round(x)
    return float(r) if abs(x - r) <= INTEGER_SNAP * max(1.0, abs(x)) else x


def largest_remainder(totals: Sequence[float]) -> list[int]:
    """Integerize ``totals`` so they sum to ``round(sum(totals))`` (half up).

    Cells are floored, then the leftover units go to the largest fractional
    parts; ties go to the earlier cell.
    """
    totals = [_snap(float(t)) for t in totals]
    target = math.floor(_snap(sum(totals)) + 0.5)
    floors = [math.floor(t) for t in totals]
    leftover = target - sum(floors)
    order = sorted(range(len(totals)), key=lambda i: (-(totals[i] - floors[i]), i))
    for i in order[:leftover]:
        floors[i] += 1
    return floors


def cell_counts(sample: SurveySample) -> list[StratumCellCount]:
    """Weighted totals and integer counts N_{h,alpha} per observed cell.

    Cells are ordered by stratum id, then lexicographically by alpha.
    """
    cells = []
    for h in sample.stratum_ids:
        pos = sample.stratum_index[h]
        combos = sample.responses[pos]
        w = sample.weights[pos]
        uniq, inv = np.unique(combos, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        totals = np.bincount(inv, weights=w, minlength=len(uniq))
        counts = largest_remainder(totals.tolist())
        for alpha, tot, cnt in zip(uniq, totals, counts):
            cells.append(StratumCellCount(h, tuple(int(a) for a in alpha), float(tot), cnt))
    return cells


def covariate_distributions(reference: FinitePopulation | SurveySample, covariate: str) -> list[CategoricalDistribution]:
    """Per-stratum level proportions of ``covariate``.

    For a census reference these are plain proportions; for a weighted
    sample each unit counts with its weight.
    """
    k = reference.schema.covariate(covariate).n_levels
    codes = reference.levels(covariate)
    weights = getattr(reference, "weights", None)
    out = []
    for h in reference.stratum_ids:
        pos = reference.stratum_index[h]
        if len(pos) == 0:
            raise SurveyDataError(f"stratum {h} is empty in the reference data")
        w = np.ones(len(pos)) if weights is None else weights[pos]
        mass = np.bincount(codes[pos], weights=w, minlength=k)
        p = mass / mass.sum()
        p = p / p.sum()
        out.append(CategoricalDistribution(covariate, h, p))
    return out


def stratum_design_levels(sample: SurveySample, design_covariates: Sequence[str]) -> dict[int, tuple[int, ...]]:
    """The level each design covariate takes in each stratum.

    Raises if a design covariate varies within a stratum.
    """
    idx = [sample.schema.covariate_index(c) for c in design_covariates]
    out = {}
    for h in sample.stratum_ids:
        block = sample.covariates[sample.stratum_index[h]][:, idx]
        if len(block) and np.any(block != block[0]):
            bad = [design_covariates[j] for j in range(len(idx)) if np.any(block[:, j] != block[0, j])]
            raise SurveyDataError(f"design covariate(s) {bad} vary within stratum {h}")
        out[h] = tuple(int(v) for v in block[0])
    return out


def detect_design_covariates(sample: SurveySample) -> list[str]:
    """Covariates constant within every stratum of the sample."""
    names = []
    for j, name in enumerate(sample.schema.covariate_names):
        col = sample.covariates[:, j]
        if all(np.all(col[pos] == col[pos[0]]) for pos in sample.stratum_index.values()):
            names.append(name)
    return names


def synthesize(sample: SurveySample, design_covariates: Sequence[str], free_covariates: Sequence[str],
               distributions: Mapping[tuple[int, str], CategoricalDistribution] | Sequence[CategoricalDistribution],
               seed, cells: Sequence[StratumCellCount] | None = None) -> FinitePopulation:
    """Build a pseudo-population of sum_{h,alpha} N_{h,alpha} units.

    Free covariate values for stratum ``h`` come from the stream
    ``rng.child(seed, h, covariate_name)``. Units are numbered 1..N in cell
    order.
    """
    schema = sample.schema
    design_covariates, free_covariates = list(design_covariates), list(free_covariates)
    covered = set(design_covariates) | set(free_covariates)
    if covered != set(schema.covariate_names) or set(design_covariates) & set(free_covariates):
        raise SurveyDataError(
            "design and free covariates must partition the schema covariates "
            f"{list(schema.covariate_names)}"
        )
    if not isinstance(distributions, Mapping):
        distributions = {(d.stratum, d.covariate): d for d in distributions}
    design_levels = stratum_design_levels(sample, design_covariates)
    cells = cell_counts(sample) if cells is None else cells

    per_stratum: dict[int, list[StratumCellCount]] = {}
    for cell in cells:
        per_stratum.setdefault(cell.stratum, []).append(cell)

    strata, responses, covariates = [], [], []
    p = len(schema.covariates)
    design_idx = [schema.covariate_index(c) for c in design_covariates]
    for h in sorted(per_stratum):
        cs = per_stratum[h]
        N_h = sum(c.count for c in cs)
        if N_h == 0:
            continue
        resp = np.repeat(np.array([c.combination for c in cs], dtype=np.int8),
                         [c.count for c in cs], axis=0)
        cov = np.zeros((N_h, p), dtype=np.int32)
        cov[:, design_idx] = design_levels[h]
        for name in free_covariates:
            try:
                dist = distributions[(h, name)]
            except KeyError:
                raise SurveyDataError(f"no distribution for covariate {name!r} in stratum {h}") from None
            gen = rng_streams.generator(seed, h, name)
            cov[:, schema.covariate_index(name)] = gen.choice(len(dist.probabilities), size=N_h, p=dist.probabilities)
        strata.append(np.full(N_h, h, dtype=np.int64))
        responses.append(resp)
        covariates.append(cov)
    if not strata:
        raise SurveyDataError("synthesized population is empty")
    strata = np.concatenate(strata)
    return FinitePopulation(
        schema, np.arange(1, len(strata) + 1), strata,
        np.concatenate(responses), np.concatenate(covariates),
    )


def synthesis_manifest(sample: SurveySample, cells: Sequence[StratumCellCount], population: FinitePopulation,
                       seed, design_covariates, free_covariates, distribution_source: str) -> str:
    """Plain-text record of a synthesis run: seed, mass report and cell table."""
    mass_in = float(np.sum(sample.weights))
    lines = [
        "# pseudo-population synthesis",
        f"seed = {seed}",
        f"design_covariates = {','.join(design_covariates)}",
        f"free_covariates = {','.join(free_covariates)}",
        f"distribution_source = {distribution_source}",
        f"sample_units = {sample.n}",
        f"strata = {sample.n_strata}",
        f"weight_sum = {mass_in!r}",
        f"population_size = {population.N}",
        f"rounding_difference = {population.N - mass_in!r}",
        "",
        "[cells]",
        "stratum,combination,weighted_total,count",
    ]
    for c in cells:
        combo = "".join(str(a) for a in c.combination)
        lines.append(f"{c.stratum},{combo},{c.weighted_total!r},{c.count}")
    return "\n".join(lines) + "\n"
