"""Seeded synthetic hourly weather with daily and seasonal structure.

Each ambient channel follows a mean-reverting AR(1) process layered on
deterministic seasonal/diurnal cycles, so the month-of-year and
hour-of-day features of the downstream model carry real signal. One
location = one RngStream; draws happen in a fixed order per hour
(cloud, temperature, wind, humidity, PM10), which pins the byte-exact
output for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..dataset import WeatherRecord, month_day_from_doy
from ..rng import RngStream
from .solar import clear_sky_irradiance, solar_position

HOURS_PER_YEAR = 8760  # non-leap convention


@dataclass(frozen=True)
class SynthConfig:
    name: str
    latitude: float
    seed: int
    temp_mean: float = 24.0  # degC annual mean
    temp_seasonal_amp: float = 8.0  # degC, winter-summer half swing
    temp_diurnal_amp: float = 5.0  # degC
    temp_rho: float = 0.90
    temp_sigma: float = 0.6
    cloud_mean: float = 0.30
    cloud_rho: float = 0.92
    cloud_sigma: float = 0.08
    wind_mean: float = 3.0
    wind_rho: float = 0.85
    wind_sigma: float = 0.5
    hum_base: float = 55.0  # %RH
    hum_cloud_gain: float = 30.0  # %RH per unit cloud factor
    hum_temp_gain: float = 1.5  # %RH per degC of temperature anomaly
    hum_sigma: float = 3.0
    pm10_log_mean: float = math.log(60.0)
    pm10_rho: float = 0.95
    pm10_sigma: float = 0.15
    k_pm: float = 5e-4  # irradiance derate per ug/m^3
    k_h: float = 5e-4  # irradiance derate per %RH above 50

    def __post_init__(self):
        for rho in (self.temp_rho, self.cloud_rho, self.wind_rho, self.pm10_rho):
            if not 0.0 <= rho < 1.0:
                raise ValueError(f"AR(1) persistence must lie in [0, 1), got {rho}")
        for sigma in (self.temp_sigma, self.cloud_sigma, self.wind_sigma, self.hum_sigma, self.pm10_sigma):
            if sigma < 0.0:
                raise ValueError(f"noise scales must be >= 0, got {sigma}")

    @staticmethod
    def for_location(name: str, latitude: float, seed: int) -> "SynthConfig":
        """Climatology that varies smoothly with latitude."""
        return SynthConfig(
            name=name,
            latitude=latitude,
            seed=seed,
            temp_mean=28.0 - 0.25 * abs(latitude),
            temp_seasonal_amp=math.copysign(4.0 + 0.2 * abs(latitude), latitude),
        )


@dataclass(frozen=True)
class WeatherState:
    cloud: float
    temp_resid: float
    wind: float
    pm10_log: float

    @staticmethod
    def initial(cfg: SynthConfig) -> "WeatherState":
        return WeatherState(cfg.cloud_mean, 0.0, cfg.wind_mean, cfg.pm10_log_mean)


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def synth_weather_step(
    state: WeatherState, cfg: SynthConfig, t: int, rng: RngStream
) -> tuple[WeatherRecord, WeatherState]:
    """Ambient record for hour index ``t`` plus the advanced state.

    Labels (g_eff, t_cell, vmp, imp, pmp) are left at zero for the
    generator to fill in.
    """
    doy = (t // 24) % 365 + 1
    hour = t % 24
    year = t // HOURS_PER_YEAR
    month, day = month_day_from_doy(doy)

    eps_cloud = float(rng.normal())
    eps_temp = float(rng.normal())
    eps_wind = float(rng.normal())
    eps_hum = float(rng.normal())
    eps_pm = float(rng.normal())

    cloud = _clamp(
        cfg.cloud_mean + cfg.cloud_rho * (state.cloud - cfg.cloud_mean) + cfg.cloud_sigma * eps_cloud,
        0.0,
        1.0,
    )
    temp_resid = cfg.temp_rho * state.temp_resid + cfg.temp_sigma * eps_temp
    wind = max(0.0, cfg.wind_mean + cfg.wind_rho * (state.wind - cfg.wind_mean) + cfg.wind_sigma * eps_wind)
    pm10_log = cfg.pm10_log_mean + cfg.pm10_rho * (state.pm10_log - cfg.pm10_log_mean) + cfg.pm10_sigma * eps_pm
    pm10 = _clamp(math.exp(pm10_log), 5.0, 500.0)

    pos = solar_position(cfg.latitude, doy, float(hour))
    dni_clear, dhi_clear = clear_sky_irradiance(pos.altitude)
    dni = dni_clear * (1.0 - cloud) ** 3
    dhi = dhi_clear * (1.0 + 2.0 * cloud)

    seasonal = cfg.temp_mean - cfg.temp_seasonal_amp * math.cos(2.0 * math.pi * (doy - 15) / 365.0)
    diurnal = cfg.temp_diurnal_amp * math.sin(2.0 * math.pi * (hour - 9) / 24.0)
    temp_air = seasonal + diurnal + temp_resid

    rel_hum = _clamp(
        cfg.hum_base + cfg.hum_cloud_gain * cloud - cfg.hum_temp_gain * temp_resid + cfg.hum_sigma * eps_hum,
        5.0,
        100.0,
    )

    rec = WeatherRecord(
        location_id=cfg.name,
        year=year,
        month=month,
        day=day,
        hour=hour,
        temp_air=temp_air,
        dni=dni,
        dhi=dhi,
        sun_alt=pos.altitude,
        sun_azi=pos.azimuth,
        wind=wind,
        rel_hum=rel_hum,
        pm10=pm10,
        g_eff=0.0,
        t_cell=temp_air,
        vmp=0.0,
        imp=0.0,
        pmp=0.0,
    )
    new_state = WeatherState(cloud=cloud, temp_resid=temp_resid, wind=wind, pm10_log=pm10_log)
    return rec, new_state


# ---------------------------------------------------------------------------
# key=value round trip
# ---------------------------------------------------------------------------

_KV_FLOAT_FIELDS = tuple(
    f
    for f in SynthConfig.__dataclass_fields__
    if f not in ("name", "seed")
)


def synth_config_to_kv(cfg: SynthConfig, prefix: str = "synth") -> str:
    lines = [f"{prefix}.name={cfg.name}", f"{prefix}.seed={cfg.seed}"]
    lines += [f"{prefix}.{f}={getattr(cfg, f)!r}" for f in _KV_FLOAT_FIELDS]
    return "\n".join(lines) + "\n"


def synth_config_from_kv(kv: dict[str, str], prefix: str = "synth") -> SynthConfig:
    kwargs = {"name": kv[f"{prefix}.name"], "seed": int(kv[f"{prefix}.seed"])}
    for f in _KV_FLOAT_FIELDS:
        kwargs[f] = float(kv[f"{prefix}.{f}"])
    return SynthConfig(**kwargs)
