"""Finite populations, stratified samples, model formulas and design matrices.

Unit tables are stored column-wise as read-only numpy arrays:

* ``unit_ids`` -- ``(N,)`` int64
* ``strata`` -- ``(N,)`` int64
* ``responses`` -- ``(N, q)`` int8 with values in {0, 1}
* ``covariates`` -- ``(N, p)`` int32 level indices into the schema

Covariate levels are referenced by position in the schema's ordered level
list, so the coefficient layout of a design matrix depends only on the
schema and the formula, never on which levels happen to be observed.
"""

from __future__ import annotations

import csv
import json
import math
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .exceptions import DesignWarning, SurveyDataError

INTERCEPT = "(Intercept)"
WEIGHT_RTOL = 1e-9


@dataclass(frozen=True)
class Covariate:
    name: str
    levels: tuple[str, ...]
    reference: int = 0

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if len(self.levels) < 2:
            raise SurveyDataError(f"covariate {self.name!r} needs at least 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise SurveyDataError(f"covariate {self.name!r} has duplicate levels")
        if not 0 <= self.reference < len(self.levels):
            raise SurveyDataError(
                f"reference index {self.reference} out of range for {self.name!r}"
            )

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def reference_level(self) -> str:
        return self.levels[self.reference]


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered categorical covariates plus the binary response names."""

    covariates: tuple[Covariate, ...]
    responses: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "responses", tuple(self.responses))
        names = [c.name for c in self.covariates] + list(self.responses)
        if not self.responses:
            raise SurveyDataError("schema needs at least one response")
        if len(set(names)) != len(names):
            raise SurveyDataError("covariate and response names must be unique")
        reserved = {"unit_id", "stratum", "weight"} & set(names)
        if reserved:
            raise SurveyDataError(f"reserved column names used: {sorted(reserved)}")

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    def covariate(self, name: str) -> Covariate:
        return self.covariates[self.covariate_index(name)]

    def covariate_index(self, name: str) -> int:
        for i, cov in enumerate(self.covariates):
            if cov.name == name:
                return i
        raise SurveyDataError(f"unknown covariate {name!r}")

    def response_index(self, name: str) -> int:
        try:
            return self.responses.index(name)
        except ValueError:
            raise SurveyDataError(f"unknown response {name!r}") from None

    def to_dict(self) -> dict:
        return {
            "responses": list(self.responses),
            "covariates": [
                {"name": c.name, "levels": list(c.levels), "reference": c.reference_level}
                for c in self.covariates
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CovariateSchema":
        try:
            covs = []
            for entry in data["covariates"]:
                levels = [str(v) for v in entry["levels"]]
                ref = entry.get("reference", levels[0])
                if str(ref) not in levels:
                    raise SurveyDataError(
                        f"reference level {ref!r} not among levels of {entry['name']!r}"
                    )
                covs.append(Covariate(entry["name"], tuple(levels), levels.index(str(ref))))
            return cls(tuple(covs), tuple(data["responses"]))
        except (KeyError, TypeError) as exc:
            raise SurveyDataError(f"malformed schema: {exc}") from exc


def load_schema(path) -> CovariateSchema:
    """Read a JSON schema file (see :meth:`CovariateSchema.to_dict`)."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SurveyDataError(f"{path}: invalid JSON schema: {exc}") from exc
    return CovariateSchema.from_dict(data)


def save_schema(schema: CovariateSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class UnitRecord:
    unit_id: int
    stratum: int
    responses: tuple[int, ...]
    levels: tuple[int, ...]


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class _UnitTable:
    """Column store shared by populations and samples."""

    def __init__(self, schema, unit_ids, strata, responses, covariates):
        self.schema = schema
        n = len(unit_ids)
        q, p = len(schema.responses), len(schema.covariates)
        self.unit_ids = _readonly(unit_ids, np.int64)
        self.strata = _readonly(strata, np.int64)
        self.responses = _readonly(np.reshape(responses, (n, q)), np.int8)
        self.covariates = _readonly(np.reshape(covariates, (n, p)), np.int32)
        if self.strata.shape != (n,):
            raise SurveyDataError("strata length differs from unit count")
        if np.any((self.responses != 0) & (self.responses != 1)):
            raise SurveyDataError("responses must be 0/1")
        for j, cov in enumerate(schema.covariates):
            col = self.covariates[:, j]
            if col.size and (col.min() < 0 or col.max() >= cov.n_levels):
                raise SurveyDataError(f"level index out of range for {cov.name!r}")
        if len(np.unique(self.unit_ids)) != n:
            raise SurveyDataError("duplicate unit ids")

    def __len__(self) -> int:
        return len(self.unit_ids)

    @cached_property
    def stratum_index(self) -> dict[int, np.ndarray]:
        """Map stratum id -> positions of its units, in row order."""
        order = np.argsort(self.strata, kind="stable")
        ids, starts = np.unique(self.strata[order], return_index=True)
        bounds = list(starts[1:]) + [len(order)]
        index = {}
        for sid, lo, hi in zip(ids, starts, bounds):
            pos = order[lo:hi]
            pos.setflags(write=False)
            index[int(sid)] = pos
        return index

    @property
    def stratum_ids(self) -> list[int]:
        return sorted(self.stratum_index)

    @property
    def n_strata(self) -> int:
        return len(self.stratum_index)

    def stratum_sizes(self) -> dict[int, int]:
        return {h: len(pos) for h, pos in self.stratum_index.items()}

    def response(self, name: str) -> np.ndarray:
        return self.responses[:, self.schema.response_index(name)]

    def levels(self, name: str) -> np.ndarray:
        return self.covariates[:, self.schema.covariate_index(name)]

    def records(self) -> Iterator[UnitRecord]:
        for i in range(len(self)):
            yield UnitRecord(
                int(self.unit_ids[i]),
                int(self.strata[i]),
                tuple(int(v) for v in self.responses[i]),
                tuple(int(v) for v in self.covariates[i]),
            )

    def _columns_from(self, positions):
        positions = np.asarray(positions, dtype=np.intp)
        return (
            self.unit_ids[positions],
            self.strata[positions],
            self.responses[positions],
            self.covariates[positions],
        )


class FinitePopulation(_UnitTable):
    """A finite population U of N units partitioned into strata."""

    @property
    def N(self) -> int:
        return len(self)

    @classmethod
    def from_records(cls, schema, records: Iterable[UnitRecord]) -> "FinitePopulation":
        return cls(schema, *_records_to_columns(schema, records))

    def __repr__(self):
        return f"FinitePopulation(N={self.N}, H={self.n_strata})"


class SurveySample(_UnitTable):
    """A weighted sample S drawn by one-step stratification.

    ``weights_constant`` is False when some stratum carries unequal weights;
    the sample is still usable but a :class:`DesignWarning` is emitted.
    """

    def __init__(self, schema, unit_ids, strata, responses, covariates, weights):
        super().__init__(schema, unit_ids, strata, responses, covariates)
        self.weights = _readonly(weights, np.float64)
        if self.weights.shape != (len(self),):
            raise SurveyDataError("weights length differs from unit count")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise SurveyDataError("weights must be positive and finite")
        self.unequal_weight_strata = self._check_weight_constancy()
        if self.unequal_weight_strata:
            warnings.warn(
                f"unequal weights within strata {self.unequal_weight_strata[:5]}; "
                "design may not be one-step stratified",
                DesignWarning,
                stacklevel=2,
            )

    @property
    def n(self) -> int:
        return len(self)

    @property
    def weights_constant(self) -> bool:
        return not self.unequal_weight_strata

    def _check_weight_constancy(self) -> list[int]:
        bad = []
        for h, pos in self.stratum_index.items():
            w = self.weights[pos]
            if np.ptp(w) > WEIGHT_RTOL * np.max(w):
                bad.append(h)
        return sorted(bad)

    @classmethod
    def from_records(cls, schema, records, weights) -> "SurveySample":
        return cls(schema, *_records_to_columns(schema, records), weights)

    def __repr__(self):
        return f"SurveySample(n={self.n}, H={self.n_strata}, sum_w={self.weights.sum():g})"


def _records_to_columns(schema, records):
    records = list(records)
    q, p = len(schema.responses), len(schema.covariates)
    ids = [r.unit_id for r in records]
    strata = [r.stratum for r in records]
    resp = np.array([r.responses for r in records], dtype=np.int8).reshape(len(records), q)
    cov = np.array([r.levels for r in records], dtype=np.int32).reshape(len(records), p)
    return ids, strata, resp, cov


# --------------------------------------------------------------------------
# CSV input/output
# --------------------------------------------------------------------------

def _read_table(path, schema, with_weights):
    path = Path(path)
    required = ["unit_id", "stratum", *schema.responses, *schema.covariate_names]
    if with_weights:
        required.append("weight")
    level_maps = [{lv: k for k, lv in enumerate(c.levels)} for c in schema.covariates]
    ids, strata, resp, cov, weights = [], [], [], [], []
    seen = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SurveyDataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise SurveyDataError(
                f"{path}: missing column(s) {missing}; expected header "
                + ",".join(required)
            )
        col = {name: header.index(name) for name in required}
        try:
            _parse_rows(reader, header, col, schema, level_maps, with_weights, seen, ids, strata, resp, cov, weights)
        except SurveyDataError as exc:
            exc.args = (f"{path}: {exc.args[0]}",)
            raise
    n, q, p = len(ids), len(schema.responses), len(schema.covariates)
    resp = np.array(resp, dtype=np.int8).reshape(n, q)
    cov = np.array(cov, dtype=np.int32).reshape(n, p)
    return ids, strata, resp, cov, weights


def _parse_rows(reader, header, col, schema, level_maps, with_weights, seen, ids, strata, resp, cov, weights):
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SurveyDataError(
                f"expected {len(header)} fields, got {len(row)}", row=line
            )
        try:
            uid = int(row[col["unit_id"]])
        except ValueError:
            raise SurveyDataError("unit_id is not an integer", row=line, column="unit_id") from None
        if uid in seen:
            raise SurveyDataError(
                f"duplicate unit id {uid} (first seen at row {seen[uid]})",
                row=line, column="unit_id",
            )
        seen[uid] = line
        try:
            sid = int(row[col["stratum"]])
        except ValueError:
            raise SurveyDataError("stratum is not an integer", row=line, column="stratum") from None
        ys = []
        for name in schema.responses:
            raw = row[col[name]].strip()
            if raw not in ("0", "1"):
                raise SurveyDataError(
                    f"response value {raw!r} is not 0 or 1", row=line, column=name
                )
            ys.append(int(raw))
        xs = []
        for name, lmap in zip(schema.covariate_names, level_maps):
            raw = row[col[name]].strip()
            if raw not in lmap:
                raise SurveyDataError(
                    f"level {raw!r} not in schema levels {list(lmap)}",
                    row=line, column=name,
                )
            xs.append(lmap[raw])
        if with_weights:
            raw = row[col["weight"]].strip()
            try:
                w = float(raw)
            except ValueError:
                raise SurveyDataError(f"weight {raw!r} is not numeric", row=line, column="weight") from None
            if not (math.isfinite(w) and w > 0):
                raise SurveyDataError(f"weight {raw!r} must be positive", row=line, column="weight")
            weights.append(w)
        ids.append(uid)
        strata.append(sid)
        resp.append(ys)
        cov.append(xs)


def load_population(path, schema: CovariateSchema) -> FinitePopulation:
    """Load a population CSV with header ``unit_id,stratum,<responses>,<covariates>``."""
    ids, strata, resp, cov, _ = _read_table(path, schema, with_weights=False)
    return FinitePopulation(schema, ids, strata, resp, cov)


def load_sample(path, schema: CovariateSchema) -> SurveySample:
    """Load a sample CSV: the population layout plus a ``weight`` column."""
    ids, strata, resp, cov, w = _read_table(path, schema, with_weights=True)
    return SurveySample(schema, ids, strata, resp, cov, w)


def _write_table(table, path, weights=None):
    schema = table.schema
    header = ["unit_id", "stratum", *schema.responses, *schema.covariate_names]
    if weights is not None:
        header.append("weight")
    level_names = [c.levels for c in schema.covariates]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(table)):
            row = [int(table.unit_ids[i]), int(table.strata[i])]
            row.extend(int(v) for v in table.responses[i])
            row.extend(level_names[j][k] for j, k in enumerate(table.covariates[i]))
            if weights is not None:
                row.append(repr(float(weights[i])))
            writer.writerow(row)


def write_population(population: FinitePopulation, path) -> None:
    _write_table(population, path)


def write_sample(sample: SurveySample, path) -> None:
    # repr() gives the shortest string that round-trips the double exactly
    _write_table(sample, path, weights=sample.weights)


# --------------------------------------------------------------------------
# Formulas and design matrices
# --------------------------------------------------------------------------

_NAME = r"[A-Za-z_][A-Za-z0-9_.]*"


@dataclass(frozen=True)
class ModelFormula:
    """Main-effects logistic model ``response ~ c1 + c2 + ...``."""

    response: str
    covariates: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if len(set(self.covariates)) != len(self.covariates):
            raise SurveyDataError(f"repeated covariate in formula {self}")

    @classmethod
    def parse(cls, text: str, schema: CovariateSchema | None = None) -> "ModelFormula":
        lhs, sep, rhs = text.partition("~")
        if not sep:
            raise SurveyDataError(f"formula {text!r} lacks '~'")
        response = lhs.strip()
        if not re.fullmatch(_NAME, response):
            raise SurveyDataError(f"bad response name in formula {text!r}")
        terms = [t.strip() for t in rhs.split("+")]
        if terms == ["1"]:
            terms = []
        for t in terms:
            if not re.fullmatch(_NAME, t):
                raise SurveyDataError(f"bad term {t!r} in formula {text!r}")
        formula = cls(response, tuple(terms))
        if schema is not None:
            formula.validate(schema)
        return formula

    def validate(self, schema: CovariateSchema) -> None:
        schema.response_index(self.response)
        for name in self.covariates:
            schema.covariate_index(name)

    def n_coefficients(self, schema: CovariateSchema) -> int:
        return 1 + sum(schema.covariate(c).n_levels - 1 for c in self.covariates)

    def __str__(self) -> str:
        rhs = " + ".join(self.covariates) if self.covariates else "1"
        return f"{self.response} ~ {rhs}"


def coefficient_labels(schema: CovariateSchema, formula: ModelFormula) -> tuple[str, ...]:
    labels = [INTERCEPT]
    for name in _schema_ordered(schema, formula):
        cov = schema.covariate(name)
        labels.extend(
            f"{name}[{lv}]" for k, lv in enumerate(cov.levels) if k != cov.reference
        )
    return tuple(labels)


def _schema_ordered(schema, formula):
    wanted = set(formula.covariates)
    return [n for n in schema.covariate_names if n in wanted]


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Reference-coded design: intercept column followed by dummy blocks."""

    X: np.ndarray
    y: np.ndarray
    labels: tuple[str, ...]
    blocks: Mapping[str, slice] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("X", "y"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if self.X.shape != (len(self.y), len(self.labels)):
            raise SurveyDataError("design matrix shape does not match labels/response")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return self.X.shape[1]


def build_design_matrix(data: FinitePopulation | SurveySample, formula: ModelFormula) -> DesignMatrix:
    """Dummy-code ``formula``'s covariates on ``data``.

    Blocks follow schema covariate order and levels follow schema level
    order with the reference level dropped; a row's block is all zeros
    exactly when the unit takes the reference level.
    """
    schema = data.schema
    formula.validate(schema)
    n = len(data)
    labels = coefficient_labels(schema, formula)
    X = np.zeros((n, len(labels)))
    X[:, 0] = 1.0
    blocks = {}
    col = 1
    for name in _schema_ordered(schema, formula):
        cov = schema.covariate(name)
        codes = data.levels(name)
        start = col
        for k, level in enumerate(cov.levels):
            if k == cov.reference:
                continue
            ind = codes == k
            if not ind.any():
                raise SurveyDataError(
                    f"level {level!r} of {name!r} has no units; coefficient "
                    f"{labels[col]} is inestimable"
                )
            X[:, col] = ind
            col += 1
        blocks[name] = slice(start, col)
    y = data.response(formula.response).astype(np.float64)
    return DesignMatrix(X, y, labels, blocks)


# --------------------------------------------------------------------------
# Design diagnostics
# --------------------------------------------------------------------------

QUANTILE_NAMES = ("min", "q1", "median", "q3", "max")


def five_number_summary(values: Sequence[float]) -> dict[str, float]:
    """min, quartiles (linear interpolation) and max."""
    q = np.quantile(np.asarray(values, dtype=float), [0.0, 0.25, 0.5, 0.75, 1.0])
    return dict(zip(QUANTILE_NAMES, (float(v) for v in q)))


@dataclass(frozen=True)
class StratumDiagnostic:
    stratum: int
    n_h: int
    N_h: int

    @property
    def fraction(self) -> float:
        return self.n_h / self.N_h


@dataclass(frozen=True)
class DesignReport:
    strata: tuple[StratumDiagnostic, ...]
    size_quantiles: dict[str, float]
    fraction_quantiles: dict[str, float]

    @property
    def n(self) -> int:
        return sum(s.n_h for s in self.strata)

    @property
    def N(self) -> int:
        return sum(s.N_h for s in self.strata)

    def format(self) -> str:
        lines = [f"strata: {len(self.strata)}  n = {self.n}  N = {self.N}"]
        for title, q in (("stratum sizes N_h", self.size_quantiles),
                         ("sampling fractions n_h/N_h", self.fraction_quantiles)):
            cells = "  ".join(f"{k}={v:.4g}" for k, v in q.items())
            lines.append(f"{title}: {cells}")
        return "\n".join(lines)


def design_diagnostics(sample: SurveySample, population_sizes: Mapping[int, int]) -> DesignReport:
    """Per-stratum n_h, N_h, n_h/N_h plus five-number summaries of both.

    Strata listed in ``population_sizes`` but absent from the sample count
    toward the size quantiles (with ``n_h = 0``) but not the fractions.
    """
    counts = sample.stratum_sizes()
    unknown = sorted(set(counts) - set(population_sizes))
    if unknown:
        raise SurveyDataError(f"sample strata missing from population sizes: {unknown[:10]}")
    rows = []
    for h in sorted(population_sizes):
        N_h = int(population_sizes[h])
        n_h = counts.get(h, 0)
        if n_h > N_h:
            raise SurveyDataError(f"stratum {h}: n_h = {n_h} exceeds N_h = {N_h}")
        rows.append(StratumDiagnostic(h, n_h, N_h))
    sampled = [r for r in rows if r.n_h > 0 and r.N_h > 0]
    return DesignReport(
        tuple(rows),
        five_number_summary([r.N_h for r in rows]),
        five_number_summary([r.fraction for r in sampled]),
    )
