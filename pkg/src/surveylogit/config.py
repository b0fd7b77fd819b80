"""INI run configurations for :func:`surveylogit.harness.run_scenario`.

Example::

    [scenario]
    name = demo
    replicates = 50
    seed = 20240101
    methods = M1, M2, M3
    formulas = y ~ x1          # several formulas separated by ';'
    output = runs/demo

    [population]
    source = generator         # generator | csv | synthesis
    kind = demo
    seed = 1

    [allocation]
    source = scenario          # scenario | csv | sample

Relative input paths are resolved against the config file's directory;
``output`` is resolved against the working directory.
"""

from __future__ import annotations

import configparser
from importlib import resources
from pathlib import Path

from . import scenarios
from .exceptions import SurveyDataError
from .harness import ScenarioConfig, normalize_methods
from .sampler import read_allocation, replicate_allocation_from_sample
from .survey_data import ModelFormula, load_population, load_sample, load_schema
from .synthesis import covariate_distributions, detect_design_covariates, synthesize

BUNDLED = ("demo", "informative", "noninformative")


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package."""
    if name not in BUNDLED:
        raise SurveyDataError(f"no bundled config {name!r}; available: {', '.join(BUNDLED)}")
    return Path(str(resources.files("surveylogit") / "configs" / f"{name}.ini"))


def resolve_config_path(text: str) -> Path:
    path = Path(text)
    if path.exists() or text not in BUNDLED:
        return path
    return bundled_config(text)


def _get(parser, section, key, default=None, required=False):
    if parser.has_option(section, key):
        value = parser.get(section, key).strip()
        if value:
            return value
    if required:
        raise SurveyDataError(f"config: [{section}] {key} is required")
    return default


def _int(parser, section, key, default=None, required=False):
    value = _get(parser, section, key, default, required)
    if value is None:
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise SurveyDataError(f"config: [{section}] {key} must be an integer, got {value!r}") from None


def _population_source(parser, base: Path):
    """Return (population thunk, allocation thunk or None, scenario thunk or None, echo)."""
    source = _get(parser, "population", "source", required=True).lower()
    echo = {"population_source": source}
    if source == "generator":
        kind = _get(parser, "population", "kind", required=True)
        if kind not in scenarios.GENERATORS:
            raise SurveyDataError(f"config: unknown generator {kind!r}; choose from {sorted(scenarios.GENERATORS)}")
        seed = _int(parser, "population", "seed", 1)
        kwargs = {}
        N = _int(parser, "population", "N")
        if N is not None:
            kwargs["N"] = N
        echo.update(generator=kind, generator_seed=str(seed), **({"generator_N": str(N)} if N else {}))
        cache = {}

        def build():
            if "sc" not in cache:
                cache["sc"] = scenarios.GENERATORS[kind](seed=seed, **kwargs)
            return cache["sc"]

        return (lambda: build().population), (lambda pop: build().allocation), build, echo

    schema_path = base / _get(parser, "population", "schema", required=True)
    schema = load_schema(schema_path)
    if source == "csv":
        path = base / _get(parser, "population", "path", required=True)
        echo["population_path"] = str(path)
        return (lambda: load_population(path, schema)), None, None, echo
    if source == "synthesis":
        path = base / _get(parser, "population", "sample", required=True)
        seed = _int(parser, "population", "seed", required=True)
        design = _get(parser, "population", "design_covariates")
        echo.update(synthesis_sample=str(path), synthesis_seed=str(seed))

        def build():
            sample = load_sample(path, schema)
            d = [c.strip() for c in design.split(",")] if design else detect_design_covariates(sample)
            free = [c for c in schema.covariate_names if c not in d]
            dists = [dist for c in free for dist in covariate_distributions(sample, c)]
            return synthesize(sample, d, free, dists, seed)

        return build, None, None, echo
    raise SurveyDataError(f"config: [population] source must be generator, csv or synthesis, got {source!r}")


def load_config(path, *, output=None) -> ScenarioConfig:
    """Parse an INI file into a :class:`ScenarioConfig` (no heavy work is done here)."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise SurveyDataError(f"{path}: {exc}") from None
    for section in ("scenario", "population"):
        if not parser.has_section(section):
            raise SurveyDataError(f"{path}: missing [{section}] section")
    base = path.parent

    replicates = _int(parser, "scenario", "replicates", required=True)
    if replicates < 1:
        raise SurveyDataError(f"config: replicates must be >= 1, got {replicates}")
    seed = _int(parser, "scenario", "seed", required=True)
    methods = normalize_methods(_get(parser, "scenario", "methods", "M1,M2,M3").split(","))
    if not methods:
        raise SurveyDataError("config: [scenario] methods is empty")

    population, default_alloc, scenario_thunk, echo = _population_source(parser, base)

    formula_text = _get(parser, "scenario", "formulas")
    if formula_text:
        formulas = tuple(ModelFormula.parse(t) for t in formula_text.split(";") if t.strip())
    elif scenario_thunk is not None:
        formulas = scenario_thunk().formulas
    else:
        raise SurveyDataError("config: [scenario] formulas is required for csv/synthesis populations")

    alloc_source = _get(parser, "allocation", "source", "scenario").lower()
    if alloc_source == "scenario":
        if default_alloc is None:
            raise SurveyDataError("config: allocation source 'scenario' needs a generator population")
        allocation = default_alloc
    elif alloc_source == "csv":
        allocation = read_allocation(base / _get(parser, "allocation", "path", required=True))
    elif alloc_source == "sample":
        sample_path = base / _get(parser, "allocation", "path", required=True)
        schema = load_schema(base / _get(parser, "population", "schema", required=True))
        allocation = replicate_allocation_from_sample(load_sample(sample_path, schema))
    else:
        raise SurveyDataError(f"config: [allocation] source must be scenario, csv or sample, got {alloc_source!r}")
    echo["allocation_source"] = alloc_source

    out = output if output is not None else _get(parser, "scenario", "output")
    return ScenarioConfig(
        population=population,
        formulas=formulas,
        allocation=allocation,
        replicates=replicates,
        seed=seed,
        methods=methods,
        output_dir=Path(out) if out else None,
        name=_get(parser, "scenario", "name", path.stem),
        echo={"config": str(path), **echo},
    )
