"""Monte-Carlo replication of sampling + estimation against a census truth.

For a population U the harness fits the census coefficients once per
formula, then for r = 1..R draws a stratified sample with seed
``rng.child(master_seed, r)`` and fits every requested method on that same
sample. Per-replicate biases are summarized as mean, SD (n-1), average bias
and MSE; failed fits are recorded and left out of the summaries.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import rng as rng_streams
from .estimators.logistic import fit_m1, fit_m2, fit_truth
from .estimators.mixed import fit_m3
from .estimators.results import CoefficientVector, FitResult
from .exceptions import EstimationError, SurveyDataError
from .sampler import Allocation, stratified_sample
from .survey_data import QUANTILE_NAMES, FinitePopulation, ModelFormula, build_design_matrix, five_number_summary

log = logging.getLogger(__name__)

METHODS = ("M1", "M2", "M3")
FAILURE_FLAG_RATE = 0.05
WORKERS_ENV = "SURVEYLOGIT_WORKERS"
OUTPUT_FILES = ("replicates.csv", "summary.csv", "boxplot.csv", "quartiles.csv", "manifest.txt")


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


def normalize_methods(methods: Sequence[str]) -> tuple[str, ...]:
    wanted = {m.strip().upper() for m in methods if m.strip()}
    unknown = wanted - set(METHODS)
    if unknown:
        raise SurveyDataError(f"unknown method(s) {sorted(unknown)}; choose from {METHODS}")
    return tuple(m for m in METHODS if m in wanted)


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Everything a run depends on.

    ``population`` and ``allocation`` may be given directly or as callables
    (``allocation`` receives the population) so that expensive synthesis
    happens inside :func:`run_scenario`.
    """

    population: FinitePopulation | Callable[[], FinitePopulation]
    formulas: tuple[ModelFormula, ...]
    allocation: Allocation | Callable[[FinitePopulation], Allocation]
    replicates: int
    seed: int
    methods: tuple[str, ...] = METHODS
    output_dir: Path | None = None
    name: str = "scenario"
    echo: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.replicates) < 1:
            raise SurveyDataError(f"replicate count must be >= 1, got {self.replicates}")
        if not self.formulas:
            raise SurveyDataError("at least one formula is required")
        methods = normalize_methods(self.methods)
        if not methods:
            raise SurveyDataError("at least one method is required")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "formulas", tuple(self.formulas))
        if self.output_dir is not None:
            object.__setattr__(self, "output_dir", Path(self.output_dir))


@dataclass(frozen=True, eq=False)
class ReplicateEstimates:
    replicate: int
    method: str
    formula: str
    labels: tuple[str, ...]
    estimates: np.ndarray | None
    bias: np.ndarray | None
    error: str = ""

    @property
    def converged(self) -> bool:
        return self.estimates is not None


@dataclass(frozen=True)
class SummaryRow:
    formula: str
    method: str
    coefficient: str
    truth: float
    mean: float
    sd: float
    avbias: float
    mse: float
    n_total: int
    n_converged: int


@dataclass(eq=False)
class SimulationResults:
    config: ScenarioConfig
    truths: dict[str, FitResult]
    replicates: list[ReplicateEstimates]
    summaries: list[SummaryRow]
    failures: dict[str, int]
    flagged: bool
    wall_time: float = 0.0

    def summary(self, formula, method) -> list[SummaryRow]:
        key = str(formula)
        return [s for s in self.summaries if s.formula == key and s.method == method]


def compute_bias(estimate: CoefficientVector, truth: CoefficientVector) -> np.ndarray:
    """Elementwise estimate - truth."""
    if tuple(estimate.labels) != tuple(truth.labels):
        raise ValueError(f"coefficient labels differ: {estimate.labels} vs {truth.labels}")
    return np.asarray(estimate.values) - np.asarray(truth.values)


def summarize(replicates: Sequence[ReplicateEstimates], truths: Mapping[str, FitResult | CoefficientVector]) -> list[SummaryRow]:
    """Mean, SD (n - 1 denominator), AvBias and MSE per formula/method/coefficient.

    Non-converged replicates are counted in ``n_total`` only. A method with
    no converged replicate yields NaN rows.
    """
    groups: dict[tuple[str, str], list[ReplicateEstimates]] = {}
    for rep in replicates:
        groups.setdefault((rep.formula, rep.method), []).append(rep)
    formula_order = list(dict.fromkeys(rep.formula for rep in replicates))
    rows = []
    for f in formula_order:
        truth = truths[f]
        truth = getattr(truth, "coefficients", truth)
        for m in METHODS:
            reps = groups.get((f, m))
            if not reps:
                continue
            ok = [r for r in reps if r.converged]
            if ok:
                est = np.array([r.estimates for r in ok])
                bias = np.array([r.bias for r in ok])
                mean = est.mean(axis=0)
                sd = est.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(est.shape[1])
                avbias = bias.mean(axis=0)
                mse = np.mean(bias**2, axis=0)
            else:
                mean = sd = avbias = mse = np.full(len(truth.labels), np.nan)
            for j, label in enumerate(truth.labels):
                rows.append(SummaryRow(f, m, label, float(truth.values[j]), float(mean[j]),
                                       float(sd[j]), float(avbias[j]), float(mse[j]),
                                       len(reps), len(ok)))
    return rows


# --------------------------------------------------------------------------
# replicate execution
# --------------------------------------------------------------------------

_CONTEXT: dict = {}


def _init_worker(context):
    _CONTEXT.clear()
    _CONTEXT.update(context)


def _fit(method, sample, formula, design):
    if method == "M1":
        return fit_m1(sample, formula, design).coefficients
    if method == "M2":
        return fit_m2(sample, formula, design=design, variance=False).coefficients
    return fit_m3(sample, formula, design).beta


def _run_replicates(indices):
    ctx = _CONTEXT
    out = []
    for r in indices:
        sample = stratified_sample(ctx["population"], ctx["allocation"], rng_streams.child(ctx["seed"], r))
        for formula in ctx["formulas"]:
            key = str(formula)
            truth = ctx["truths"][key]
            try:
                design = build_design_matrix(sample, formula)
            except SurveyDataError as exc:
                design, design_error = None, f"{type(exc).__name__}: {exc}"
            for method in ctx["methods"]:
                if design is None:
                    out.append(ReplicateEstimates(r, method, key, truth.labels, None, None, design_error))
                    continue
                try:
                    coef = _fit(method, sample, formula, design)
                except (EstimationError, SurveyDataError, ValueError, FloatingPointError) as exc:
                    out.append(ReplicateEstimates(r, method, key, truth.labels, None, None,
                                                  f"{type(exc).__name__}: {exc}"))
                    continue
                out.append(ReplicateEstimates(r, method, key, coef.labels, np.asarray(coef.values),
                                              compute_bias(coef, truth)))
    return out


def _chunks(n, size):
    return [list(range(lo, min(n + 1, lo + size))) for lo in range(1, n + 1, size)]


def run_scenario(config: ScenarioConfig, workers: int | None = None) -> SimulationResults:
    """Run the full study; write outputs when ``config.output_dir`` is set.

    Results depend only on the config and master seed: replicate ``r``
    always uses the stream ``rng.child(seed, r)`` and output rows are
    sorted by (formula, replicate, method).
    """
    start = time.perf_counter()
    out_dir = config.output_dir
    marker = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        marker = out_dir / "PARTIAL_RUN"
        marker.write_text("run in progress or interrupted\n", encoding="utf-8")

    population = config.population() if callable(config.population) else config.population
    allocation = config.allocation(population) if callable(config.allocation) else config.allocation
    allocation.validate(population)
    for f in config.formulas:
        f.validate(population.schema)
    truths = {}
    for f in config.formulas:
        log.info("fitting census truth for %s", f)
        truths[str(f)] = fit_truth(population, f)

    context = {
        "population": population, "allocation": allocation, "seed": int(config.seed),
        "formulas": config.formulas, "methods": config.methods,
        "truths": {k: v.coefficients for k, v in truths.items()},
    }
    workers = default_workers() if workers is None else max(1, int(workers))
    R = int(config.replicates)
    if workers == 1 or R == 1:
        _init_worker(context)
        collected = _run_replicates(range(1, R + 1))
    else:
        size = max(1, R // (workers * 4))
        collected = []
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(context,)) as pool:
            for part in pool.map(_run_replicates, _chunks(R, size)):
                collected.extend(part)

    formula_rank = {str(f): i for i, f in enumerate(config.formulas)}
    method_rank = {m: i for i, m in enumerate(METHODS)}
    collected.sort(key=lambda e: (formula_rank[e.formula], e.replicate, method_rank[e.method]))

    failures = {}
    for f in config.formulas:
        for m in config.methods:
            failures[f"{f} | {m}"] = sum(1 for e in collected if e.formula == str(f) and e.method == m and not e.converged)
    flagged = any(v > FAILURE_FLAG_RATE * R for v in failures.values())
    if flagged:
        log.warning("more than %.0f%% of replicates failed for some method", 100 * FAILURE_FLAG_RATE)

    results = SimulationResults(config, truths, collected, summarize(collected, truths), failures, flagged)
    results.wall_time = time.perf_counter() - start
    if out_dir is not None:
        write_outputs(results, out_dir, workers=workers, population=population, allocation=allocation)
        marker.unlink()
    return results


# --------------------------------------------------------------------------
# exports
# --------------------------------------------------------------------------

def _num(x) -> str:
    return repr(float(x))


def round_half_up(x: float, digits: int = 3) -> str:
    """Decimal string of ``x`` rounded half-up, e.g. 1.29553 -> '1.296'."""
    if not np.isfinite(x):
        return "nan"
    quant = Decimal(1).scaleb(-digits)
    return str(Decimal(repr(float(x))).quantize(quant, rounding=ROUND_HALF_UP))


def _multi(items) -> bool:
    return len({i.formula for i in items}) > 1


def export_replicates(replicates: Sequence[ReplicateEstimates], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["formula", "replicate", "method", "coefficient", "estimate", "bias", "converged", "error"])
        for rep in replicates:
            for j, label in enumerate(rep.labels):
                if rep.converged:
                    writer.writerow([rep.formula, rep.replicate, rep.method, label,
                                     _num(rep.estimates[j]), _num(rep.bias[j]), 1, ""])
                else:
                    writer.writerow([rep.formula, rep.replicate, rep.method, label, "", "", 0, rep.error])


def export_boxplot_data(replicates: Sequence[ReplicateEstimates], path, quartiles_path=None) -> None:
    """Long-format ``replicate,method,coefficient,bias`` plus per-group quartiles.

    A leading ``formula`` column is added when the replicates span several
    formulas. Quartiles use linear interpolation between order statistics.
    """
    ok = [r for r in replicates if r.converged]
    multi = _multi(ok)
    lead = ["formula"] if multi else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(lead + ["replicate", "method", "coefficient", "bias"])
        for rep in ok:
            for label, b in zip(rep.labels, rep.bias):
                writer.writerow(([rep.formula] if multi else []) + [rep.replicate, rep.method, label, _num(b)])
    if quartiles_path is None:
        return
    groups: dict[tuple[str, str, str], list[float]] = {}
    for rep in ok:
        for label, b in zip(rep.labels, rep.bias):
            groups.setdefault((rep.formula, rep.method, label), []).append(float(b))
    with open(quartiles_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(lead + ["method", "coefficient", *QUANTILE_NAMES])
        for (f, m, label), values in groups.items():
            q = five_number_summary(values)
            writer.writerow(([f] if multi else []) + [m, label] + [_num(q[k]) for k in QUANTILE_NAMES])


SUMMARY_STATS = ("mean", "sd", "avbias", "mse")


def export_summary_table(rows: Sequence[SummaryRow], path, digits: int | None = None) -> None:
    """Wide table: ``coefficient,truth`` then ``<method>_mean,_sd,_avbias,_mse`` per method.

    Methods appear in M1, M2, M3 order. With ``digits`` the values are
    rounded half-up to that many decimals; otherwise full precision.
    """
    fmt = _num if digits is None else (lambda x: round_half_up(x, digits))
    multi = _multi(rows)
    methods = [m for m in METHODS if any(r.method == m for r in rows)]
    table: dict[tuple[str, str], dict[str, SummaryRow]] = {}
    for r in rows:
        table.setdefault((r.formula, r.coefficient), {})[r.method] = r
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = (["formula"] if multi else []) + ["coefficient", "truth"]
        header += [f"{m}_{s}" for m in methods for s in SUMMARY_STATS]
        writer.writerow(header)
        for (f, label), by_method in table.items():
            truth = next(iter(by_method.values())).truth
            line = ([f] if multi else []) + [label, fmt(truth)]
            for m in methods:
                r = by_method.get(m)
                line += [fmt(getattr(r, s)) if r else "" for s in SUMMARY_STATS]
            writer.writerow(line)


def export_summary_long(rows: Sequence[SummaryRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["formula", "method", "coefficient", "truth", *SUMMARY_STATS, "n_total", "n_converged"])
        for r in rows:
            writer.writerow([r.formula, r.method, r.coefficient, _num(r.truth), _num(r.mean), _num(r.sd),
                             _num(r.avbias), _num(r.mse), r.n_total, r.n_converged])


def write_outputs(results: SimulationResults, out_dir, *, workers=None, population=None, allocation=None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_replicates(results.replicates, out_dir / "replicates.csv")
    export_summary_table(results.summaries, out_dir / "summary.csv")
    export_summary_table(results.summaries, out_dir / "summary_3dp.csv", digits=3)
    export_summary_long(results.summaries, out_dir / "summary_long.csv")
    export_boxplot_data(results.replicates, out_dir / "boxplot.csv", out_dir / "quartiles.csv")
    cfg = results.config
    lines = [
        f"name = {cfg.name}",
        f"replicates = {cfg.replicates}",
        f"master_seed = {cfg.seed}",
        "replicate_seed = numpy SeedSequence(master_seed, spawn_key=(r,)); stratum stream spawn_key=(r, stratum)",
        f"methods = {','.join(cfg.methods)}",
        "formulas = " + "; ".join(str(f) for f in cfg.formulas),
    ]
    lines += [f"{k} = {v}" for k, v in cfg.echo.items()]
    if population is not None:
        lines.append(f"population_size = {population.N}")
        lines.append(f"population_strata = {population.n_strata}")
    if allocation is not None:
        lines.append(f"sample_size = {allocation.n}")
        lines.append(f"allocated_strata = {len(allocation.sizes)}")
    for key, count in results.failures.items():
        lines.append(f"failures[{key}] = {count}")
    lines.append(f"flagged = {str(results.flagged).lower()}")
    if workers is not None:
        lines.append(f"workers = {workers}")
    lines.append(f"wall_time_seconds = {results.wall_time:.3f}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
