from datetime import timedelta

import pytest

from nowcast.synthetic import DGPSpec, simulate_observations
from nowcast.vintage import ObservationLog
from nowcast.vintage.periods import period_end, shift_period


def quarter_origins(first_quarter, count, days_after=80):
    """Origins `days_after` days past the end of consecutive quarters."""
    return [period_end(shift_period(first_quarter, k)) + timedelta(days=days_after) for k in range(count)]


def synthetic_log(kind="ar1", n=60, seed=0, params=None, target_lag=75, predictor_lag=30, start="1970-Q1",
                  revision=None):
    sim, obs = simulate_observations(DGPSpec(kind, n, seed, params or {}, start), target_lag, predictor_lag,
                                     revision)
    return sim, ObservationLog(obs)


@pytest.fixture
def ar_log():
    return synthetic_log("ar1", 60, seed=1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
