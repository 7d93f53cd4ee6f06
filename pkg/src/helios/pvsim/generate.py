"""Full synthetic dataset assembly: weather -> irradiance -> MPP labels."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..dataset import WeatherRecord, write_csv
from ..errors import DataError
from ..rng import RngStream
from .module import PvModuleParams, cell_temperature, effective_irradiance, solve_mpp_batch
from .solar import SolarPosition
from .weather import HOURS_PER_YEAR, SynthConfig, WeatherState, synth_weather_step


def worker_count() -> int:
    """Worker cap from HELIOS_THREADS (default 1). Results never depend
    on this value; it only bounds concurrency."""
    try:
        return max(1, int(os.environ.get("HELIOS_THREADS", "1")))
    except ValueError:
        return 1


def generate_location(cfg: SynthConfig, years: int, params: PvModuleParams) -> list[WeatherRecord]:
    """All hourly records for one location, labels included.

    Deterministic given cfg.seed: the weather stream consumes draws in
    a fixed order, and the MPP labels are a pure function of the
    ambient rows.
    """
    if years < 1:
        raise DataError(f"years must be >= 1, got {years}")
    n_hours = HOURS_PER_YEAR * years
    rng = RngStream(cfg.seed, stream_id=0)
    state = WeatherState.initial(cfg)
    records: list[WeatherRecord] = []
    for t in range(n_hours):
        rec, state = synth_weather_step(state, cfg, t, rng)
        records.append(rec)

    g_eff = np.empty(n_hours)
    t_cell = np.empty(n_hours)
    for i, rec in enumerate(records):
        pos = SolarPosition(rec.sun_alt, rec.sun_azi)
        g_eff[i] = effective_irradiance(rec, pos, params, cfg)
        t_cell[i] = cell_temperature(rec.temp_air, g_eff[i], rec.wind, params)
    vmp, imp, pmp = solve_mpp_batch(g_eff, t_cell, params)

    labeled = []
    for i, rec in enumerate(records):
        labeled.append(
            replace(
                rec,
                g_eff=float(g_eff[i]),
                t_cell=float(t_cell[i]),
                vmp=float(vmp[i]),
                imp=float(imp[i]),
                pmp=float(pmp[i]),
            )
        )
    return labeled


def generate_dataset(
    locations: list[SynthConfig],
    years: int,
    params: PvModuleParams,
    path: str | Path | None = None,
) -> dict[str, list[WeatherRecord]]:
    """Generate every location and optionally write the canonical CSV.

    Locations are independent streams, generated on up to
    HELIOS_THREADS workers but always assembled in configuration order,
    so output bytes do not depend on scheduling.
    """
    if not locations:
        raise DataError("need at least one location")
    names = [cfg.name for cfg in locations]
    if len(set(names)) != len(names):
        raise DataError(f"duplicate location names: {names}")
    workers = min(worker_count(), len(locations))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda cfg: generate_location(cfg, years, params), locations))
    else:
        results = [generate_location(cfg, years, params) for cfg in locations]
    by_location = {cfg.name: recs for cfg, recs in zip(locations, results)}
    if path is not None:
        try:
            write_csv(by_location, path)
        except OSError as exc:
            raise DataError(f"failed to write dataset to {path}: {exc}") from exc
    return by_location


def default_locations(n: int, seed: int) -> list[SynthConfig]:
    """n locations spread over low-to-mid northern latitudes, with
    per-location sub-seeds derived from the master seed."""
    lats = np.linspace(12.0, 38.0, n)
    return [
        SynthConfig.for_location(f"L{i:02d}", float(lats[i]), seed * 1_000_003 + i)
        for i in range(n)
    ]
