import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from surveylogit.survey_data import Covariate, CovariateSchema, FinitePopulation, SurveySample

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def schema():
    return CovariateSchema((Covariate("x1", ("a", "b", "c")), Covariate("x2", ("lo", "hi"))), ("y",))


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def make_sample(schema, strata, y, x, weights, ids=None):
    n = len(strata)
    ids = np.arange(1, n + 1) if ids is None else ids
    return SurveySample(schema, ids, strata, np.asarray(y)[:, None], np.asarray(x).reshape(n, -1), weights)


def make_population(schema, strata, y, x, ids=None):
    n = len(strata)
    ids = np.arange(1, n + 1) if ids is None else ids
    return FinitePopulation(schema, ids, strata, np.asarray(y)[:, None], np.asarray(x).reshape(n, -1))


def intercept_schema():
    """Schema with one dummy covariate, used when only the intercept matters."""
    return CovariateSchema((Covariate("x", ("0", "1")),), ("y",))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
