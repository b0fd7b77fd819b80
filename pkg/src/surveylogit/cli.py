"""``surveylogit`` command line: fit, synth, sample, simulate, report.

Exit codes: 0 success, 1 invalid input, 2 estimation failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import warnings
from pathlib import Path

from . import harness
from .config import load_config, resolve_config_path
from .estimators.logistic import fit_m1, fit_m2
from .estimators.mixed import fit_m3
from .estimators.results import MixedFitResult, write_fit_csv
from .exceptions import DesignWarning, EstimationError, SurveyDataError, VarianceError
from .sampler import read_allocation, stratified_sample
from .survey_data import (
    ModelFormula, build_design_matrix, design_diagnostics, load_population, load_sample,
    load_schema, write_population, write_sample,
)
from .synthesis import (
    cell_counts, covariate_distributions, detect_design_covariates, synthesis_manifest, synthesize,
)

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATION, EXIT_IO = 0, 1, 2, 3
EXIT_INTERRUPTED = 130

METHOD_TITLES = {
    "M1": "M1  unweighted maximum likelihood",
    "M2": "M2  weighted pseudo-likelihood",
    "M3": "M3  random-intercept logit (Laplace)",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _fmt(x, digits=3):
    if x is None or not math.isfinite(x):
        return "NA"
    return harness.round_half_up(x, digits)


def read_population_sizes(path) -> dict[int, int]:
    """``stratum,N_h`` CSV used for the finite population correction."""
    sizes = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"stratum", "N_h"} - set(reader.fieldnames):
            raise SurveyDataError(f"{path}: expected header stratum,N_h")
        for row in reader:
            try:
                sizes[int(row["stratum"])] = int(row["N_h"])
            except (TypeError, ValueError):
                raise SurveyDataError(f"{path}: non-integer entry", row=reader.line_num) from None
    return sizes


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------

def format_fit_table(method, fit, digits=3) -> str:
    lines = [METHOD_TITLES[method]]
    width = max(12, *(len(lab) for lab in fit.labels))
    if isinstance(fit, MixedFitResult):
        lines.append(f"{'':{width}}  {'Estimate':>9}  {'SE':>7}  {'gamma':>9}  {'SE':>7}")
        for lab, b, s, g, sg in zip(fit.labels, fit.beta.values, fit.marginal_se, fit.gamma.values, fit.se):
            lines.append(f"{lab:{width}}  {_fmt(b, digits):>9}  {_fmt(s, digits):>7}  "
                         f"{_fmt(g, digits):>9}  {_fmt(sg, digits):>7}")
        note = " (boundary)" if fit.boundary else ""
        lines.append(f"sigma2_u = {_fmt(fit.sigma2_u, 4)}{note}")
    else:
        lines.append(f"{'':{width}}  {'Estimate':>9}  {'SE':>7}")
        for lab, b, s in zip(fit.labels, fit.params, fit.se):
            lines.append(f"{lab:{width}}  {_fmt(b, digits):>9}  {_fmt(s, digits):>7}")
    lines.append(f"log-likelihood = {fit.loglik:.4f}   iterations = {fit.n_iter}")
    return "\n".join(lines)


def cmd_fit(args) -> int:
    schema = load_schema(args.schema)
    formula = ModelFormula.parse(args.formula, schema)
    methods = harness.normalize_methods(args.methods.split(","))
    if not methods:
        raise UsageError("--methods is empty")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DesignWarning)
        sample = load_sample(args.sample, schema)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    sizes = read_population_sizes(args.fpc) if args.fpc else None
    design = build_design_matrix(sample, formula)
    print(f"{formula}   n = {sample.n}   strata = {sample.n_strata}   coefficients = {design.l}")
    if sizes:
        print(design_diagnostics(sample, sizes).format())
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    failed = 0
    for method in methods:
        try:
            if method == "M1":
                fit = fit_m1(sample, formula, design)
            elif method == "M2":
                try:
                    fit = fit_m2(sample, formula, sizes, design)
                except VarianceError as exc:
                    print(f"warning: M2 standard errors unavailable: {exc}", file=sys.stderr)
                    fit = fit_m2(sample, formula, design=design, variance=False)
            else:
                fit = fit_m3(sample, formula, design)
        except EstimationError as exc:
            failed += 1
            print(f"\n{METHOD_TITLES[method]}\nerror: {method} failed: {type(exc).__name__}: {exc}",
                  file=sys.stderr)
            continue
        print()
        print(format_fit_table(method, fit))
        if out_dir:
            write_fit_csv(fit, out_dir / f"fit_{method}.csv")
    if failed == len(methods):
        return EXIT_ESTIMATION
    return EXIT_OK


# --------------------------------------------------------------------------
# synth / sample
# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    schema = load_schema(args.schema)
    sample = load_sample(args.sample, schema)
    if args.design_covariates:
        design = [c.strip() for c in args.design_covariates.split(",") if c.strip()]
    else:
        design = detect_design_covariates(sample)
    free = [c for c in schema.covariate_names if c not in design]
    if args.reference:
        reference = load_population(args.reference, schema)
        source = f"census reference {args.reference}"
    else:
        reference = sample
        source = "weighted sample proportions"
    dists = [d for c in free for d in covariate_distributions(reference, c)]
    cells = cell_counts(sample)
    population = synthesize(sample, design, free, dists, args.seed, cells=cells)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_population(population, out / "population.csv")
    manifest = synthesis_manifest(sample, cells, population, args.seed, design, free, source)
    (out / "manifest.txt").write_text(manifest, encoding="utf-8")
    print(f"wrote {population.N} units in {population.n_strata} strata to {out / 'population.csv'}")
    print(f"weight sum {float(sample.weights.sum()):.6g}; rounding difference "
          f"{population.N - float(sample.weights.sum()):+.6g}")
    return EXIT_OK


def cmd_sample(args) -> int:
    schema = load_schema(args.schema)
    population = load_population(args.population, schema)
    allocation = read_allocation(args.allocation)
    sample = stratified_sample(population, allocation, args.seed)
    write_sample(sample, args.out)
    print(f"drew {sample.n} of {population.N} units from {sample.n_strata} strata into {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate / report
# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    path = resolve_config_path(args.config)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    config = load_config(path, output=args.out)
    if config.output_dir is None:
        raise UsageError("no output directory: set [scenario] output or pass --out")
    workers = args.workers if args.workers is not None else harness.default_workers()
    results = harness.run_scenario(config, workers=workers)
    print(f"{config.replicates} replicates in {results.wall_time:.1f} s -> {config.output_dir}")
    for key, count in results.failures.items():
        if count:
            print(f"  {key}: {count} failed replicate(s)")
    if results.flagged:
        print(f"warning: failure rate above {harness.FAILURE_FLAG_RATE:.0%} for some method", file=sys.stderr)
    return EXIT_OK


REPORT_FILES = ("summary.csv", "manifest.txt")


def _read_summary(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError:
        raise SurveyDataError(f"{path}: not a text CSV file") from None
    if not rows:
        raise SurveyDataError(f"{path}: empty file")
    header = rows[0]
    lead = 3 if header[:3] == ["formula", "coefficient", "truth"] else 2
    if header[lead - 2:lead] != ["coefficient", "truth"]:
        raise SurveyDataError(f"{path}: unexpected header {header[:3]}")
    stat_cols = header[lead:]
    methods = []
    for j in range(0, len(stat_cols), 4):
        block = stat_cols[j:j + 4]
        m = block[0].split("_")[0] if block else ""
        if [f"{m}_{s}" for s in harness.SUMMARY_STATS] != block:
            raise SurveyDataError(f"{path}: malformed method columns {block}")
        methods.append(m)
    table = []
    for k, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise SurveyDataError(f"{path}: expected {len(header)} fields, got {len(row)}", row=k)
        try:
            values = [float(v) if v else math.nan for v in row[lead - 1:]]
        except ValueError:
            raise SurveyDataError(f"{path}: non-numeric value", row=k) from None
        formula = row[0] if lead == 3 else ""
        table.append((formula, row[lead - 2], values[0], values[1:]))
    return methods, table


def render_report(run_dir) -> str:
    run_dir = Path(run_dir)
    missing = [f for f in REPORT_FILES if not (run_dir / f).is_file()]
    if missing:
        raise FileNotFoundError(
            f"{run_dir}: missing {', '.join(missing)}; a run directory holds {', '.join(harness.OUTPUT_FILES)}"
        )
    methods, table = _read_summary(run_dir / "summary.csv")
    manifest = (run_dir / "manifest.txt").read_text(encoding="utf-8").splitlines()
    info = dict(line.split(" = ", 1) for line in manifest if " = " in line)

    lines = [f"run: {info.get('name', run_dir.name)}   R = {info.get('replicates', '?')}   "
             f"seed = {info.get('master_seed', '?')}"]
    width = max([12] + [len(t[1]) for t in table])
    cell = 26
    head = f"{'coefficient':{width}}  {'truth':>7}  " + "  ".join(
        f"{m + ': Mean(sd)  AvBias  MSE':>{cell}}" for m in methods) + "  best"
    current = None
    for formula, label, truth, stats in table:
        if formula != current or current is None:
            current = formula
            lines += ["", f"formula: {formula or info.get('formulas', '')}", head, "-" * len(head)]
        parts = []
        biases = {}
        for k, m in enumerate(methods):
            mean, sd, avbias, mse = stats[4 * k:4 * k + 4]
            parts.append(f"{_fmt(mean) + '(' + _fmt(sd) + ')':>14} {_fmt(avbias):>6} {_fmt(mse):>5}".rjust(cell))
            if math.isfinite(avbias):
                biases[m] = abs(avbias)
        best = min(biases, key=biases.get) if biases else "NA"
        lines.append(f"{label:{width}}  {_fmt(truth):>7}  " + "  ".join(parts) + f"  {best}")
    failures = [line for line in manifest if line.startswith("failures[") and not line.endswith("= 0")]
    if failures:
        lines += ["", *failures]
    if info.get("flagged") == "true":
        lines.append("warning: failure rate above 5% for some method")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    print(render_report(args.run), end="")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="surveylogit", description="Logistic regression for stratified survey samples.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit M1/M2/M3 to a sample CSV")
    p.add_argument("--sample", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--formula", required=True, help="e.g. 'y ~ x1 + x2'")
    p.add_argument("--methods", default="m1,m2,m3")
    p.add_argument("--fpc", help="CSV stratum,N_h for the finite population correction")
    p.add_argument("--out", help="directory for fit_<method>.csv tables")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("synth", help="synthesize a pseudo-population from a weighted sample")
    p.add_argument("--sample", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--design-covariates", help="comma-separated; default: covariates constant within strata")
    p.add_argument("--reference", help="census CSV for free-covariate distributions")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="draw one stratified SRS from a population CSV")
    p.add_argument("--population", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--allocation", required=True, help="CSV stratum,n_h")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="sample CSV path")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("simulate", help="run a Monte-Carlo study from an INI config")
    p.add_argument("--config", required=True, help="INI path or bundled name (demo, informative, noninformative)")
    p.add_argument("--out", help="override [scenario] output")
    p.add_argument("--workers", type=int, help=f"worker processes (default ${harness.WORKERS_ENV} or CPU count)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="render a run directory's summary")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SurveyDataError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EstimationError as exc:
        print(f"error: estimation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyboardInterrupt:
        print("interrupted; partial results left in place", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
