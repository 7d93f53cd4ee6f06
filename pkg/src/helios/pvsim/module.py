"""Five-parameter single-diode module model and its calibration.

The implicit curve I = Iph - I0*(exp((V+I*Rs)/(n*Ns*Vt)) - 1) - (V+I*Rs)/Rsh
is solved in the diode-junction voltage Vd = V + I*Rs, where the residual
is strictly decreasing and concave, by a Newton iteration with bisection
safeguarding on a guaranteed bracket. All solvers are elementwise over
NumPy arrays; each element's iterate trajectory is independent of the
others, so batched and scalar calls agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from ..errors import CalibrationError, ParameterError, SolverError
from .solar import SolarPosition

BOLTZMANN = 1.380649e-23  # J/K
ELEM_CHARGE = 1.602176634e-19  # C
T_REF_K = 298.15  # STC cell temperature in kelvin
STC_IRRADIANCE = 1000.0  # W/m^2

_I_TOL = 1e-9  # ampere tolerance for the current solve
_MAX_ITERS = 100
_MPP_V_TOL = 1e-4  # volt tolerance for the golden-section search


@dataclass(frozen=True)
class PvModuleParams:
    isc_ref: float  # A, short-circuit current at STC
    voc_ref: float  # V, open-circuit voltage at STC
    n_ideality: float
    rs: float  # ohm, series
    rsh: float  # ohm, shunt
    ns_cells: int
    alpha_isc: float  # A/degC
    eg: float = 1.121  # eV, silicon bandgap
    faiman_u0: float = 25.0  # W/m^2K
    faiman_u1: float = 6.84  # W*s/m^3K
    tilt: float = 20.0  # degrees
    azimuth: float = 180.0  # degrees from north

    def __post_init__(self):
        if self.rs < 0 or self.rsh <= 0:
            raise ParameterError(f"need rs >= 0 and rsh > 0, got rs={self.rs}, rsh={self.rsh}")
        if not 0.8 <= self.n_ideality <= 2.5:
            raise ParameterError(f"n_ideality must lie in [0.8, 2.5], got {self.n_ideality}")
        if self.isc_ref <= 0 or self.voc_ref <= 0:
            raise ParameterError("isc_ref and voc_ref must be positive")


@dataclass(frozen=True)
class OperatingPoint:
    v: float
    i: float
    p: float


def _thermal_voltage(t_cell_k):
    return BOLTZMANN * t_cell_k / ELEM_CHARGE


def _diode_quantities(params: PvModuleParams, g_eff, t_cell):
    """(iph, i0, a) for given irradiance and cell temperature.

    I0 at STC is fixed by the open-circuit condition so that the raw
    current is exactly zero at (voc_ref, STC); its temperature scaling
    follows the usual T^3 * exp(Eg/k * (1/Tref - 1/T)) law.
    """
    g_eff = np.asarray(g_eff, dtype=np.float64)
    t_cell = np.asarray(t_cell, dtype=np.float64)
    t_k = t_cell + 273.15
    a = params.n_ideality * params.ns_cells * _thermal_voltage(t_k)
    a_ref = params.n_ideality * params.ns_cells * _thermal_voltage(T_REF_K)
    i0_ref = (params.isc_ref - params.voc_ref / params.rsh) / math.expm1(params.voc_ref / a_ref)
    c = ELEM_CHARGE * params.eg / (params.n_ideality * BOLTZMANN)
    i0 = i0_ref * (t_k / T_REF_K) ** 3 * np.exp(c * (1.0 / T_REF_K - 1.0 / t_k))
    iph = (g_eff / STC_IRRADIANCE) * (params.isc_ref + params.alpha_isc * (t_cell - 25.0))
    return iph, i0, a


def _solve_raw_current(v, iph, i0, a, params: PvModuleParams, context=""):
    """Current on the raw single-diode curve (may be negative)."""
    rs, rsh = params.rs, params.rsh
    if rs == 0.0:
        return iph - i0 * np.expm1(v / a) - v / rsh

    lo = np.zeros_like(v)
    hi = a * np.log1p((iph + v / rs + 1.0) / i0)
    vd = np.clip(v, lo, hi)
    active = np.ones(v.shape, dtype=bool)
    for _ in range(_MAX_ITERS):
        resid = iph - i0 * np.expm1(vd / a) - vd / rsh - (vd - v) / rs
        slope = -i0 / a * np.exp(vd / a) - 1.0 / rsh - 1.0 / rs
        lo = np.where(active & (resid > 0), vd, lo)
        hi = np.where(active & (resid <= 0), vd, hi)
        cand = vd - resid / slope
        off = (cand <= lo) | (cand >= hi) | ~np.isfinite(cand)
        cand = np.where(off, 0.5 * (lo + hi), cand)
        done = np.abs(cand - vd) / rs <= _I_TOL
        vd = np.where(active, cand, vd)
        active &= ~done
        if not active.any():
            break
    else:
        raise SolverError(f"current solve failed to converge{context}")
    return (vd - v) / rs


def iv_current(v, g_eff, t_cell, params: PvModuleParams):
    """Module current at voltage v; negative solutions clamp to zero.

    Broadcasts elementwise over any mix of scalars and arrays; a scalar
    voltage yields a float.
    """
    v_arr = np.asarray(v, dtype=np.float64)
    if np.any(v_arr < 0):
        raise ParameterError("iv_current requires v >= 0")
    scalar = v_arr.ndim == 0 and np.ndim(g_eff) == 0 and np.ndim(t_cell) == 0
    iph, i0, a = _diode_quantities(params, g_eff, t_cell)
    v_b, iph, i0, a = np.broadcast_arrays(v_arr, iph, i0, a)
    ctx = f" at (v={v}, g_eff={g_eff}, t_cell={t_cell})" if scalar else ""
    raw = _solve_raw_current(v_b, iph, i0, a, params, context=ctx)
    out = np.maximum(raw, 0.0)
    return float(out) if scalar else out


def open_circuit_voltage(g_eff, t_cell, params: PvModuleParams):
    """Voc: the root of iph - i0*expm1(V/a) - V/rsh in V (I = 0)."""
    iph, i0, a = _diode_quantities(params, g_eff, t_cell)
    iph, i0, a = np.broadcast_arrays(np.asarray(iph), i0, a)
    scalar = iph.ndim == 0
    iph, i0, a = np.atleast_1d(iph, i0, a)
    lo = np.zeros_like(iph)
    hi = a * np.log1p(iph / i0) + 1.0
    voc = 0.5 * (lo + hi)
    active = np.ones(voc.shape, dtype=bool)
    for _ in range(_MAX_ITERS):
        resid = iph - i0 * np.expm1(voc / a) - voc / params.rsh
        slope = -i0 / a * np.exp(voc / a) - 1.0 / params.rsh
        lo = np.where(active & (resid > 0), voc, lo)
        hi = np.where(active & (resid <= 0), voc, hi)
        cand = voc - resid / slope
        off = (cand <= lo) | (cand >= hi) | ~np.isfinite(cand)
        cand = np.where(off, 0.5 * (lo + hi), cand)
        done = np.abs(cand - voc) <= 1e-10
        voc = np.where(active, cand, voc)
        active &= ~done
        if not active.any():
            break
    else:
        raise SolverError("open-circuit voltage solve failed to converge")
    return float(voc[0]) if scalar else voc


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_INVPHI2 = (3.0 - math.sqrt(5.0)) / 2.0


def solve_mpp_batch(g_eff, t_cell, params: PvModuleParams):
    """(vmp, imp, pmp) arrays via golden-section search on [0, Voc].

    The single-diode power curve is unimodal in voltage, so golden
    section converges to the maximum; iteration stops per element once
    its bracket is narrower than 1e-4 V. Irradiance below 1 W/m^2 maps
    to the (0, 0, 0) night convention.
    """
    g_eff = np.atleast_1d(np.asarray(g_eff, dtype=np.float64))
    t_cell = np.atleast_1d(np.asarray(t_cell, dtype=np.float64))
    g_eff, t_cell = np.broadcast_arrays(g_eff, t_cell)
    day = g_eff >= 1.0
    vmp = np.zeros(g_eff.shape)
    imp = np.zeros(g_eff.shape)
    pmp = np.zeros(g_eff.shape)
    if not day.any():
        return vmp, imp, pmp

    g_d, t_d = g_eff[day], t_cell[day]
    iph, i0, a = _diode_quantities(params, g_d, t_d)

    def power(v):
        raw = _solve_raw_current(v, iph, i0, a, params, context=" in solve_mpp")
        return v * np.maximum(raw, 0.0)

    left = np.zeros(g_d.shape)
    right = open_circuit_voltage(g_d, t_d, params)
    width = right - left
    c = left + _INVPHI2 * width
    d = left + _INVPHI * width
    fc = power(c)
    fd = power(d)
    active = width > _MPP_V_TOL
    while active.any():
        keep_left = fc > fd
        new_left = np.where(keep_left, left, c)
        new_right = np.where(keep_left, d, right)
        width = new_right - new_left
        new_c = new_left + _INVPHI2 * width
        new_d = new_left + _INVPHI * width
        probe = np.where(keep_left, new_c, new_d)
        fprobe = power(probe)
        upd = active
        left = np.where(upd, new_left, left)
        right = np.where(upd, new_right, right)
        fd = np.where(upd & keep_left, fc, fd)
        fc = np.where(upd & keep_left, fprobe, fc)
        fc = np.where(upd & ~keep_left, fd, fc)
        fd = np.where(upd & ~keep_left, fprobe, fd)
        c = np.where(upd, new_c, c)
        d = np.where(upd, new_d, d)
        active = active & (right - left > _MPP_V_TOL)

    v_star = 0.5 * (left + right)
    i_star = np.maximum(_solve_raw_current(v_star, iph, i0, a, params), 0.0)
    vmp[day] = v_star
    imp[day] = i_star
    pmp[day] = v_star * i_star
    return vmp, imp, pmp


def solve_mpp(g_eff: float, t_cell: float, params: PvModuleParams) -> OperatingPoint:
    """Maximum power point for one ambient state."""
    vmp, imp, pmp = solve_mpp_batch(np.asarray([g_eff]), np.asarray([t_cell]), params)
    return OperatingPoint(float(vmp[0]), float(imp[0]), float(pmp[0]))


# ---------------------------------------------------------------------------
# plant-side conversions
# ---------------------------------------------------------------------------


def effective_irradiance(rec, pos: SolarPosition, params: PvModuleParams, cfg) -> float:
    """Plane-of-array irradiance after pollution and humidity derates.

    ``rec`` supplies dni/dhi/pm10/rel_hum; ``cfg`` supplies the derate
    coefficients k_pm (per ug/m^3) and k_h (per %RH above 50).
    Values below 1 W/m^2 floor to zero.
    """
    tilt = math.radians(params.tilt)
    alt = math.radians(pos.altitude)
    cos_aoi = math.cos(tilt) * math.sin(alt) + math.sin(tilt) * math.cos(alt) * math.cos(
        math.radians(pos.azimuth - params.azimuth)
    )
    beam = rec.dni * max(cos_aoi, 0.0)
    diffuse = rec.dhi * (1.0 + math.cos(tilt)) / 2.0
    tau_pm = min(max(1.0 - cfg.k_pm * rec.pm10, 0.7), 1.0)
    tau_h = min(max(1.0 - cfg.k_h * max(0.0, rec.rel_hum - 50.0), 0.95), 1.0)
    g = (beam * tau_pm + diffuse) * tau_h
    return g if g >= 1.0 else 0.0


def cell_temperature(t_air, g_eff, wind, params: PvModuleParams):
    """Faiman steady-state cell temperature."""
    return t_air + g_eff / (params.faiman_u0 + params.faiman_u1 * wind)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def _stc_measurements(params: PvModuleParams):
    """(pmp, fill factor, power temp coefficient %/degC) at STC irradiance."""
    mpp25 = solve_mpp(STC_IRRADIANCE, 25.0, params)
    mpp45 = solve_mpp(STC_IRRADIANCE, 45.0, params)
    voc = open_circuit_voltage(STC_IRRADIANCE, 25.0, params)
    isc = iv_current(0.0, STC_IRRADIANCE, 25.0, params)
    ff = mpp25.p / (voc * isc)
    gamma = (mpp45.p - mpp25.p) / (20.0 * mpp25.p) * 100.0
    return mpp25.p, ff, gamma


@lru_cache(maxsize=8)
def calibrate_module(
    target_pmp: float = 230.0,
    target_ff: float = 0.778,
    target_gamma: float = -0.37,
    pmp_band: float = 0.02,
    ff_band: float = 0.01,
    gamma_band: float = 0.05,
    max_evals: int = 10_000,
) -> PvModuleParams:
    """Search (n, rs, rsh, eg) until the nameplate bands are all met.

    Fixed by construction: voc_ref = 37.2 V and isc_ref = 7.95 A (so
    that FF * Voc * Isc is the 230 W nameplate at FF 0.778), 60 cells in
    series, alpha_isc = +0.05%/degC of Isc. The remaining shape
    parameters are found by cyclic coordinate descent with a golden
    line search per coordinate.
    """
    base = PvModuleParams(
        isc_ref=7.95,
        voc_ref=37.2,
        n_ideality=1.05,
        rs=0.20,
        rsh=300.0,
        ns_cells=60,
        alpha_isc=0.0005 * 7.95,
    )
    bounds = {"n_ideality": (0.9, 1.5), "rs": (0.05, 0.6), "rsh": (100.0, 1500.0), "eg": (0.9, 1.4)}
    evals = 0

    def residuals(p):
        pmp, ff, gamma = _stc_measurements(p)
        return (
            (pmp - target_pmp) / (target_pmp * pmp_band),
            (ff - target_ff) / ff_band,
            (gamma - target_gamma) / gamma_band,
        )

    def objective(p):
        nonlocal evals
        evals += 1
        r = residuals(p)
        return r[0] ** 2 + r[1] ** 2 + r[2] ** 2

    def line_search(p, coord):
        lo, hi = bounds[coord]
        best_x, best_j = getattr(p, coord), objective(p)
        for x in np.linspace(lo, hi, 9):
            j = objective(replace(p, **{coord: float(x)}))
            if j < best_j:
                best_x, best_j = float(x), j
        a_, b_ = max(lo, best_x - (hi - lo) / 8), min(hi, best_x + (hi - lo) / 8)
        for _ in range(24):
            m1 = a_ + _INVPHI2 * (b_ - a_)
            m2 = a_ + _INVPHI * (b_ - a_)
            if objective(replace(p, **{coord: m1})) < objective(replace(p, **{coord: m2})):
                b_ = m2
            else:
                a_ = m1
        return replace(p, **{coord: 0.5 * (a_ + b_)})

    params = base
    best = (params, residuals(params))
    for _ in range(8):
        for coord in ("n_ideality", "rs", "rsh", "eg"):
            params = line_search(params, coord)
            if evals > max_evals:
                break
        r = residuals(params)
        if sum(x**2 for x in r) < sum(x**2 for x in best[1]):
            best = (params, r)
        if all(abs(x) <= 1.0 for x in r):
            return params
        if evals > max_evals:
            break
    raise CalibrationError(
        "calibration missed target bands; best normalized residuals "
        f"(pmp, ff, gamma) = {tuple(round(x, 3) for x in best[1])}"
    )


# ---------------------------------------------------------------------------
# key=value round trip
# ---------------------------------------------------------------------------

_KV_FIELDS = (
    "isc_ref",
    "voc_ref",
    "n_ideality",
    "rs",
    "rsh",
    "ns_cells",
    "alpha_isc",
    "eg",
    "faiman_u0",
    "faiman_u1",
    "tilt",
    "azimuth",
)


def module_params_to_kv(params: PvModuleParams) -> str:
    return "".join(f"module.{name}={getattr(params, name)!r}\n" for name in _KV_FIELDS)


def module_params_from_kv(kv: dict[str, str]) -> PvModuleParams:
    kwargs = {}
    for name in _KV_FIELDS:
        raw = kv[f"module.{name}"]
        kwargs[name] = int(raw) if name == "ns_cells" else float(raw)
    return PvModuleParams(**kwargs)
