"""One-step stratified simple random sampling without replacement."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import rng as rng_streams
from .exceptions import SurveyDataError
from .survey_data import FinitePopulation, SurveySample


@dataclass(frozen=True)
class Allocation:
    """Stratum id -> number of units to draw."""

    sizes: Mapping[int, int]

    def __post_init__(self):
        sizes = {int(h): int(n) for h, n in dict(self.sizes).items()}
        bad = [h for h, n in sizes.items() if n < 1]
        if bad:
            raise SurveyDataError(f"allocation must be positive; strata {bad[:10]}")
        object.__setattr__(self, "sizes", dict(sorted(sizes.items())))

    @property
    def n(self) -> int:
        return sum(self.sizes.values())

    def validate(self, population: FinitePopulation) -> None:
        N = population.stratum_sizes()
        for h, n_h in self.sizes.items():
            if h not in N:
                raise SurveyDataError(f"allocated stratum {h} does not exist in the population")
            if n_h > N[h]:
                raise SurveyDataError(f"stratum {h}: n_h = {n_h} exceeds N_h = {N[h]}")


def read_allocation(path) -> Allocation:
    """Read a ``stratum,n_h`` CSV."""
    sizes = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"stratum", "n_h"} - set(reader.fieldnames):
            raise SurveyDataError(f"{path}: expected header stratum,n_h")
        for row in reader:
            try:
                h, n_h = int(row["stratum"]), int(row["n_h"])
            except (TypeError, ValueError):
                raise SurveyDataError("non-integer allocation entry", row=reader.line_num) from None
            if h in sizes:
                raise SurveyDataError(f"duplicate stratum {h}", row=reader.line_num)
            sizes[h] = n_h
    return Allocation(sizes)


def write_allocation(allocation: Allocation, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stratum", "n_h"])
        for h, n_h in allocation.sizes.items():
            writer.writerow([h, n_h])


def partial_fisher_yates(n_total: int, n_draw: int, gen: np.random.Generator) -> np.ndarray:
    """First ``n_draw`` entries of a Fisher-Yates shuffle of ``range(n_total)``."""
    idx = np.arange(n_total)
    js = gen.integers(np.arange(n_draw), n_total)
    for i, j in enumerate(js):
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:n_draw]


def assign_weights(strata, population_sizes: Mapping[int, int]) -> np.ndarray:
    """w_i = N_h / n_h for every sampled unit i in stratum h."""
    strata = np.asarray(strata)
    ids, inv, counts = np.unique(strata, return_inverse=True, return_counts=True)
    N_h = np.array([population_sizes[int(h)] for h in ids], dtype=float)
    return (N_h / counts)[inv]


def stratified_sample(population: FinitePopulation, allocation: Allocation, seed) -> SurveySample:
    """Draw n_h units uniformly without replacement from each allocated stratum.

    Each stratum uses its own stream ``rng.child(seed, h)``, so the draw in
    one stratum does not depend on which other strata are allocated.
    """
    allocation.validate(population)
    index = population.stratum_index
    picked = []
    for h, n_h in allocation.sizes.items():
        pos = index[h]
        gen = rng_streams.generator(seed, h)
        picked.append(np.sort(pos[partial_fisher_yates(len(pos), n_h, gen)]))
    positions = np.concatenate(picked) if picked else np.empty(0, dtype=np.intp)
    ids, strata, resp, cov = population._columns_from(positions)
    weights = assign_weights(strata, population.stratum_sizes())
    return SurveySample(population.schema, ids, strata, resp, cov, weights)


def replicate_allocation_from_sample(sample: SurveySample) -> Allocation:
    """The per-stratum sample counts of an observed sample."""
    return Allocation(sample.stratum_sizes())
