"""Solar geometry from declination and hour angle.

Uses the Cooper declination formula and the standard spherical
altitude/azimuth relations on a non-leap 365-day year, with hours
interpreted as local solar time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ParameterError


@dataclass(frozen=True)
class SolarPosition:
    altitude: float  # degrees above horizon, [-90, 90]
    azimuth: float  # degrees from north, clockwise, [0, 360)


def declination(day_of_year: int) -> float:
    """Sun declination in degrees (Cooper)."""
    return 23.45 * math.sin(math.radians(360.0 * (284 + day_of_year) / 365.0))


def solar_position(latitude: float, day_of_year: int, hour: float) -> SolarPosition:
    """Altitude/azimuth for a latitude, day of year, and solar hour."""
    if not -90.0 <= latitude <= 90.0:
        raise ParameterError(f"latitude must lie in [-90, 90], got {latitude}")
    phi = math.radians(latitude)
    delta = math.radians(declination(day_of_year))
    h = math.radians(15.0 * (hour - 12.0))

    sin_alt = math.sin(phi) * math.sin(delta) + math.cos(phi) * math.cos(delta) * math.cos(h)
    sin_alt = max(-1.0, min(1.0, sin_alt))
    alt = math.degrees(math.asin(sin_alt))

    cos_alt = math.cos(math.asin(sin_alt))
    denom = cos_alt * math.cos(phi)
    if abs(denom) < 1e-12:
        # sun at zenith/nadir or observer at a pole: azimuth is degenerate
        azi = 180.0
    else:
        cos_azi = (math.sin(delta) - sin_alt * math.sin(phi)) / denom
        cos_azi = max(-1.0, min(1.0, cos_azi))
        azi = math.degrees(math.acos(cos_azi))
        if h > 0:
            azi = 360.0 - azi
    return SolarPosition(alt, azi % 360.0)


def clear_sky_irradiance(altitude_deg: float) -> tuple[float, float]:
    """(DNI, DHI) under a cloudless sky for a given sun altitude.

    Beam follows the Meinel air-mass attenuation 1361 * 0.7^(AM^0.678)
    with AM = 1/max(sin alt, 0.01); diffuse is 10% of beam scaled by
    sin(altitude). Both are zero when the sun is below the horizon.
    """
    if altitude_deg <= 0.0:
        return 0.0, 0.0
    sin_alt = math.sin(math.radians(altitude_deg))
    air_mass = 1.0 / max(sin_alt, 0.01)
    dni = 1361.0 * 0.7 ** (air_mass**0.678)
    dhi = 0.1 * dni * sin_alt
    return dni, dhi
