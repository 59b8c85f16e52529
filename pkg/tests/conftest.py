import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src"))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from heatcast.dataset import TimeSeriesTable, filter_working_days  # noqa: E402
from heatcast.synth import SynthConfig, generate  # noqa: E402


def _hourly_table(start="2024-01-01T00", hours=48, seed=0, demand=None, gaps=()):
    """
    A random hourly table. `gaps` lists record indices before which a
    two-hour hole is inserted.
    """
    rng = np.random.default_rng(seed)
    offsets = np.arange(hours)
    for g in sorted(gaps):
        offsets[g:] += 2
    stamps = np.datetime64(start, "h") + offsets
    if demand is None:
        demand = 200.0 + 80.0 * np.sin(np.arange(hours) * 2 * np.pi / 24.0) + rng.normal(0, 5, hours)
    return TimeSeriesTable.from_arrays(
        stamps,
        demand,
        rng.normal(0.0, 5.0, hours),
        rng.uniform(0.0, 500.0, hours),
        rng.uniform(0.0, 10.0, hours),
    )


@pytest.fixture
def make_table():
    return _hourly_table


@pytest.fixture(scope="session")
def synthetic_year():
    """One synthetic working-day year (2008)."""
    return filter_working_days(generate(SynthConfig(seed=11, years=1)))
