"""Synthetic weather generation and single-diode PV ground truth."""

from .solar import SolarPosition, clear_sky_irradiance, solar_position
from .module import (
    OperatingPoint,
    PvModuleParams,
    calibrate_module,
    cell_temperature,
    effective_irradiance,
    iv_current,
    module_params_from_kv,
    module_params_to_kv,
    open_circuit_voltage,
    solve_mpp,
    solve_mpp_batch,
)
from .weather import SynthConfig, WeatherState, synth_config_from_kv, synth_config_to_kv, synth_weather_step
from .generate import generate_dataset, generate_location

__all__ = [
    "SolarPosition",
    "solar_position",
    "clear_sky_irradiance",
    "PvModuleParams",
    "OperatingPoint",
    "iv_current",
    "open_circuit_voltage",
    "solve_mpp",
    "solve_mpp_batch",
    "calibrate_module",
    "effective_irradiance",
    "cell_temperature",
    "module_params_to_kv",
    "module_params_from_kv",
    "SynthConfig",
    "WeatherState",
    "synth_weather_step",
    "synth_config_to_kv",
    "synth_config_from_kv",
    "generate_dataset",
    "generate_location",
]
