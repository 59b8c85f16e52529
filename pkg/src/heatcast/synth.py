"""
Synthetic hourly weather and district-heat demand.

Weather:
  temperature  annual cosine (coldest mid January) + diurnal cosine + AR(1) anomaly
  wind         non-negative AR(1) around a mean speed
  solar        clear-sky envelope from solar elevation at the configured
               latitude, times an AR(1) cloud factor in [0.05, 1]

Demand responds to an effective temperature

    T_eff  = T - c_w * wind + c_s * solar / 1000
    demand = max(floor, (base + k_T * max(0, T_ref - T_eff)) * profile[hour] + noise)

Each process draws from its own child generator of the seed, so disabling
one coefficient leaves the other series untouched.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import lfilter

import common.slog as slog
from heatcast.dataset import CHANNEL_COLUMNS, CSV_COLUMNS, TIMESTAMP_FORMAT, TimeSeriesTable
from heatcast.errors import ConfigurationError

# Working-day shape: night trough, morning peak, evening shoulder.
DEFAULT_SOCIAL_PROFILE = (
    0.86, 0.84, 0.83, 0.83, 0.85, 0.92,
    1.04, 1.14, 1.16, 1.10, 1.04, 1.01,
    0.99, 0.98, 0.98, 1.00, 1.04, 1.08,
    1.09, 1.06, 1.02, 0.97, 0.92, 0.88,
)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 2008
    years: int = 4
    start_year: int = 2008
    base_load: float = 60.0
    temp_coefficient: float = 16.0
    reference_temp: float = 17.0
    wind_chill_coefficient: float = 0.7
    solar_gain_coefficient: float = 8.0
    noise_std: float = 6.0
    demand_floor: float = 5.0
    social_profile: Tuple[float, ...] = field(default=DEFAULT_SOCIAL_PROFILE)
    latitude: float = 59.6
    temp_mean: float = 6.0
    temp_annual_amplitude: float = 10.5
    temp_diurnal_amplitude: float = 3.0
    temp_persistence: float = 0.95
    temp_innovation_std: float = 1.0
    wind_mean: float = 4.0
    wind_persistence: float = 0.8
    wind_innovation_std: float = 1.2
    cloud_persistence: float = 0.9
    cloud_innovation_std: float = 0.12

    def __post_init__(self):
        if self.years < 1:
            raise ConfigurationError(f"years must be >= 1, got {self.years}.")
        if not self.base_load > 0:
            raise ConfigurationError(f"base_load must be > 0, got {self.base_load}.")
        if self.noise_std < 0:
            raise ConfigurationError(f"noise_std must be >= 0, got {self.noise_std}.")
        if len(self.social_profile) != 24 or not all(v > 0 for v in self.social_profile):
            raise ConfigurationError("social_profile needs 24 positive hourly multipliers.")
        for name in ("temp_persistence", "wind_persistence", "cloud_persistence"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must lie in [0, 1).")
        object.__setattr__(self, "social_profile", tuple(float(v) for v in self.social_profile))

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = cls.__dataclass_fields__
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigurationError(f"Unknown synth settings: {unknown}.")
        values = dict(data)
        if "social_profile" in values:
            values["social_profile"] = tuple(values["social_profile"])
        return cls(**values)

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in self.__dataclass_fields__}
        out["social_profile"] = list(self.social_profile)
        return out


def _ar1(rng: np.random.Generator, n: int, persistence: float, innovation_std: float) -> np.ndarray:
    shocks = rng.normal(0.0, innovation_std, size=n)
    # start from the stationary distribution
    shocks[0] /= np.sqrt(1.0 - persistence ** 2)
    return lfilter([1.0], [1.0, -persistence], shocks)


def clear_sky_irradiance(day_of_year: np.ndarray, hour: np.ndarray, latitude: float) -> np.ndarray:
    """W/m^2 on a horizontal surface under a clear sky; zero below the horizon."""
    declination = np.radians(23.44) * np.sin(2 * np.pi * (284 + day_of_year) / 365.0)
    hour_angle = np.radians(15.0 * (hour + 0.5 - 12.0))
    phi = np.radians(latitude)
    sin_elevation = np.sin(phi) * np.sin(declination) + np.cos(phi) * np.cos(declination) * np.cos(hour_angle)
    return 1000.0 * np.clip(sin_elevation, 0.0, None)


def generate(cfg: SynthConfig) -> TimeSeriesTable:
    start = np.datetime64(f"{cfg.start_year:04d}-01-01T00", "h")
    stop = np.datetime64(f"{cfg.start_year + cfg.years:04d}-01-01T00", "h")
    hours = np.arange(start, stop, np.timedelta64(1, "h"))
    n = hours.shape[0]

    day_of_year = (hours.astype("datetime64[D]") - hours.astype("datetime64[Y]")).astype(np.int64) + 1
    hour_of_day = hours.astype(np.int64) % 24

    temp_rng, wind_rng, cloud_rng, noise_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(4)
    )

    seasonal = -cfg.temp_annual_amplitude * np.cos(2 * np.pi * (day_of_year - 20) / 365.25)
    diurnal = cfg.temp_diurnal_amplitude * np.cos(2 * np.pi * (hour_of_day - 15) / 24.0)
    temp = cfg.temp_mean + seasonal + diurnal + _ar1(temp_rng, n, cfg.temp_persistence, cfg.temp_innovation_std)

    wind = np.clip(
        cfg.wind_mean + _ar1(wind_rng, n, cfg.wind_persistence, cfg.wind_innovation_std), 0.0, None
    )

    cloud = np.clip(0.6 + _ar1(cloud_rng, n, cfg.cloud_persistence, cfg.cloud_innovation_std), 0.05, 1.0)
    solar = clear_sky_irradiance(day_of_year, hour_of_day, cfg.latitude) * cloud

    effective = temp - cfg.wind_chill_coefficient * wind + cfg.solar_gain_coefficient * solar / 1000.0
    profile = np.asarray(cfg.social_profile)[hour_of_day]
    heating = cfg.base_load + cfg.temp_coefficient * np.clip(cfg.reference_temp - effective, 0.0, None)
    noise = noise_rng.normal(0.0, cfg.noise_std, size=n) if cfg.noise_std > 0 else np.zeros(n)
    demand = np.maximum(cfg.demand_floor, heating * profile + noise)

    slog.info(
        "Generated synthetic series.",
        context={
            "seed": cfg.seed,
            "hours": n,
            "demand_min": demand.min(),
            "demand_max": demand.max(),
            "demand_mean": demand.mean(),
        },
    )
    return TimeSeriesTable.from_arrays(hours, demand, temp, solar, wind)


def export_csv(t: TimeSeriesTable, path: Union[str, Path]) -> None:
    """Writes the canonical CSV; an empty table yields a header-only file."""
    stamps = t.timestamps.astype("datetime64[s]")
    frame = pd.DataFrame(
        {"timestamp": pd.DatetimeIndex(stamps).strftime(TIMESTAMP_FORMAT)}
        | {CHANNEL_COLUMNS[name]: t.channel(name) for name in CHANNEL_COLUMNS},
        columns=list(CSV_COLUMNS),
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    slog.debug("Wrote hourly CSV.", context={"path": path, "records": len(frame)})
