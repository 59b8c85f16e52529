from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from heatcast.dataset import TimeSeriesTable, load_csv
from heatcast.evaluation import range_index
from heatcast.errors import ConfigurationError
from heatcast.synth import SynthConfig, clear_sky_irradiance, export_csv, generate


@pytest.fixture(scope="module")
def year():
    return generate(SynthConfig(seed=3, years=1))


def test_one_leap_year_is_one_segment(year):
    assert len(year) == 366 * 24
    assert len(year.segments) == 1
    assert year.timestamps[0] == np.datetime64("2008-01-01T00", "h")
    assert year.timestamps[-1] == np.datetime64("2008-12-31T23", "h")


def test_same_seed_same_series_and_seeds_differ(year):
    again = generate(SynthConfig(seed=3, years=1))
    np.testing.assert_array_equal(again.channel("demand"), year.channel("demand"))
    other = generate(SynthConfig(seed=4, years=1))
    assert not np.array_equal(other.channel("demand"), year.channel("demand"))


def test_physical_ranges(year):
    cfg = SynthConfig()
    assert year.channel("demand").min() >= cfg.demand_floor
    assert year.channel("solar").min() >= 0.0
    assert year.channel("wind").min() >= 0.0
    hours = year.timestamps.astype(np.int64) % 24
    # no sun at midnight at this latitude outside midsummer
    winter = year.timestamps < np.datetime64("2008-03-01T00", "h")
    assert not year.channel("solar")[winter & (hours == 0)].any()


def test_demand_falls_as_temperature_rises(year):
    corr = np.corrcoef(year.channel("temp"), year.channel("demand"))[0, 1]
    assert corr < -0.7


def test_winter_colder_than_summer(year):
    days = year.timestamps.astype("datetime64[D]")
    temp = year.channel("temp")
    january = temp[days < np.datetime64("2008-02-01")]
    july = temp[(days >= np.datetime64("2008-07-01")) & (days < np.datetime64("2008-08-01"))]
    assert january.mean() < july.mean() - 10


def test_coefficients_do_not_shift_other_streams(year):
    calm = generate(SynthConfig(seed=3, years=1, wind_chill_coefficient=0.0, solar_gain_coefficient=0.0))
    for name in ("temp", "solar", "wind"):
        np.testing.assert_array_equal(calm.channel(name), year.channel(name))
    assert not np.array_equal(calm.channel("demand"), year.channel("demand"))


def test_noise_free_demand_is_a_function_of_weather():
    cfg = SynthConfig(seed=1, years=1, noise_std=0.0, demand_floor=0.0)
    t = generate(cfg)
    hours = t.timestamps.astype(np.int64) % 24
    effective = (
        t.channel("temp")
        - cfg.wind_chill_coefficient * t.channel("wind")
        + cfg.solar_gain_coefficient * t.channel("solar") / 1000.0
    )
    expected = (
        cfg.base_load + cfg.temp_coefficient * np.clip(cfg.reference_temp - effective, 0, None)
    ) * np.asarray(cfg.social_profile)[hours]
    np.testing.assert_allclose(t.channel("demand"), expected, rtol=1e-12)


def test_clear_sky_peaks_at_noon_in_summer():
    hours = np.arange(24)
    irradiance = clear_sky_irradiance(np.full(24, 172), hours, 59.6)
    assert hours[np.argmax(irradiance)] in (11, 12)
    assert irradiance.max() > 700


def test_export_round_trip(tmp_path):
    t = generate(SynthConfig(seed=5, years=1))
    path = tmp_path / "synth.csv"
    export_csv(t, path)
    back = load_csv(path)
    assert len(back) == len(t)
    for name in ("demand", "temp", "solar", "wind"):
        np.testing.assert_allclose(back.channel(name), t.channel(name), rtol=1e-12)


def test_config_validation_and_dict_round_trip():
    cfg = SynthConfig(years=2, noise_std=3.0)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        SynthConfig(years=0)
    with pytest.raises(ConfigurationError):
        SynthConfig.from_dict({"colour": "blue"})
    with pytest.raises(ConfigurationError):
        replace(cfg, social_profile=(1.0,) * 23)


def test_winter_demand_exceeds_summer_demand(year):
    days = year.timestamps.astype("datetime64[D]")
    demand = year.channel("demand")
    january = demand[days < np.datetime64("2008-02-01")]
    july = demand[(days >= np.datetime64("2008-07-01")) & (days < np.datetime64("2008-08-01"))]
    assert january.mean() > 2 * july.mean()


def test_default_calibration_fills_every_demand_range(year):
    assert set(np.unique(range_index(year.channel("demand"))).tolist()) == {0, 1, 2, 3}


def _wind_slope(cfg):
    t = generate(cfg)
    temp, wind, demand = t.channel("temp"), t.channel("wind"), t.channel("demand")
    after_temp = demand - np.polyval(np.polyfit(temp, demand, 1), temp)
    return stats.linregress(wind, after_temp)


def test_wind_explains_demand_beyond_temperature():
    windy = _wind_slope(SynthConfig(seed=3, years=1))
    assert windy.slope > 5.0
    assert windy.pvalue < 0.01
    calm = _wind_slope(SynthConfig(seed=3, years=1, wind_chill_coefficient=0.0))
    assert abs(calm.slope) < 1.5


def test_empty_table_exports_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    export_csv(TimeSeriesTable(segments=()), path)
    assert path.read_text() == "timestamp,demand_mw,temp_c,solar_wm2,wind_ms\n"
