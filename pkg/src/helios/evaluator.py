"""Voltage MAP error, MPPT efficiency, ripple filter, and reporting.

MAP error covers only timesteps whose true operating voltage exceeds
0.5 V, since the night-time operating point is identically zero.
Efficiency is the power at the predicted voltage on the true I-V curve
divided by the true maximum power, averaged over daylight points (true
power above 1% of the 230 W rating). The high-pass ripple filter is
presentation-only: it shapes the emitted trace and never the metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import WindowSet
from .errors import NoDaylightError, NumericError, ParameterError, ShapeError
from .model import TransformerModel, predict
from .pvsim.module import PvModuleParams, iv_current

V_NONZERO_EPS = 0.5  # volts; below this the true point counts as "off"
P_RATED = 230.0  # watts
P_DAYLIGHT_FRAC = 0.01  # of rated, for the efficiency average
RIPPLE_THETA = 0.02  # of rated, for the trace filter

TRACE_HEADER = "t,v_true_v,v_pred_v,p_true_w,p_pred_w"


def map_error_nonzero(
    v_pred: np.ndarray,
    v_true: np.ndarray,
    eps_v: float = V_NONZERO_EPS,
    include: np.ndarray | None = None,
) -> float:
    """Mean absolute percentage error over non-zero-voltage points.

    ``include`` optionally masks points out before the carve-out (the
    persistence baseline uses it to drop its self-copied first point).
    """
    v_pred = np.asarray(v_pred, dtype=np.float64)
    v_true = np.asarray(v_true, dtype=np.float64)
    if v_pred.shape != v_true.shape:
        raise ShapeError(f"length mismatch: {v_pred.shape} vs {v_true.shape}")
    sel = v_true > eps_v
    if include is not None:
        sel &= include
    if not sel.any():
        raise NoDaylightError("no qualifying non-zero-voltage points")
    return float(100.0 * np.mean(np.abs(v_pred[sel] - v_true[sel]) / v_true[sel]))


def mppt_efficiency(
    v_pred: np.ndarray,
    g_eff: np.ndarray,
    t_cell: np.ndarray,
    pmp: np.ndarray,
    params: PvModuleParams,
    eps_p: float = P_DAYLIGHT_FRAC,
    p_rated: float = P_RATED,
) -> tuple[float, float]:
    """(average %, peak %) power ratio at the predicted voltages.

    The predicted operating point lies on the simulated I-V curve, so
    each ratio is capped at 1 (it can exceed it only by solver
    tolerance, ~1e-9).
    """
    v_pred = np.asarray(v_pred, dtype=np.float64)
    if not (v_pred.shape == np.shape(g_eff) == np.shape(t_cell) == np.shape(pmp)):
        raise ShapeError("prediction and environment arrays must align")
    day = np.asarray(pmp) > eps_p * p_rated
    if not day.any():
        raise NoDaylightError("no daylight points for the efficiency average")
    v = np.clip(v_pred[day], 0.0, None)
    p_pred = v * iv_current(v, np.asarray(g_eff)[day], np.asarray(t_cell)[day], params)
    eta = p_pred / np.asarray(pmp)[day]
    if np.any(eta > 1.0 + 1e-9):
        raise NumericError(
            "power ratio above 1: predicted point left the simulated curve "
            f"(max ratio {eta.max():.12f}); module parameters likely disagree with the labels"
        )
    eta = np.minimum(eta, 1.0)  # shave solver-tolerance overshoot only
    return float(100.0 * eta.mean()), float(100.0 * eta.max())


def high_pass_filter(
    v_pred: np.ndarray,
    p_pred: np.ndarray,
    theta: float = RIPPLE_THETA,
    p_rated: float = P_RATED,
) -> tuple[np.ndarray, np.ndarray]:
    """Zero out points whose predicted power is below theta * rated."""
    if not 0.0 <= theta < 1.0:
        raise ParameterError(f"theta must lie in [0, 1), got {theta}")
    keep = np.asarray(p_pred) >= theta * p_rated
    return np.where(keep, v_pred, 0.0), np.where(keep, p_pred, 0.0)


def persistence_baseline(v_true: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Previous-hour voltage as the prediction.

    Returns (v_pred, include): the first point copies itself and is
    flagged out of MAP computation.
    """
    v_true = np.asarray(v_true, dtype=np.float64)
    v_pred = np.empty_like(v_true)
    include = np.ones(v_true.shape, dtype=bool)
    if v_true.size:
        v_pred[0] = v_true[0]
        v_pred[1:] = v_true[:-1]
        include[0] = False
    return v_pred, include


@dataclass
class EvalReport:
    map_error_pct: float
    avg_efficiency_pct: float
    peak_efficiency_pct: float
    baseline_map_pct: float
    n_points: int
    n_nonzero_points: int
    trace: list[tuple[float, float, float, float, float]]  # (t, v_true, v_pred, p_true, p_pred)

    def to_json(self) -> str:
        return json.dumps(
            {
                "map_error_pct": self.map_error_pct,
                "avg_efficiency_pct": self.avg_efficiency_pct,
                "peak_efficiency_pct": self.peak_efficiency_pct,
                "baseline_map_pct": self.baseline_map_pct,
                "n_points": self.n_points,
                "n_nonzero_points": self.n_nonzero_points,
                "trace": [list(row) for row in self.trace],
            }
        )


def write_trace_csv(trace, path: str | Path) -> None:
    lines = [TRACE_HEADER]
    for t, vt, vp, pt, pp in trace:
        lines.append(f"{int(t)},{vt!r},{vp!r},{pt!r},{pp!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def evaluate(
    model: TransformerModel,
    test_windows: WindowSet,
    params: PvModuleParams,
    trace_path: str | Path | None = None,
    report_path: str | Path | None = None,
) -> EvalReport:
    """Eval-mode pass over the holdout windows in time order.

    Metrics are computed on raw predictions; the ripple filter is
    applied only to the emitted trace.
    """
    v_true = test_windows.targets()
    env = test_windows.env()
    v_pred = predict(model, test_windows)

    map_pct = map_error_nonzero(v_pred, v_true)
    avg_eff, peak_eff = mppt_efficiency(v_pred, env[:, 0], env[:, 1], env[:, 2], params)
    base_pred, base_inc = persistence_baseline(v_true)
    base_map = map_error_nonzero(base_pred, v_true, include=base_inc)

    p_pred = np.clip(v_pred, 0.0, None) * iv_current(np.clip(v_pred, 0.0, None), env[:, 0], env[:, 1], params)
    v_filt, p_filt = high_pass_filter(v_pred, p_pred)
    trace = [
        (float(t), float(v_true[t]), float(v_filt[t]), float(env[t, 2]), float(p_filt[t]))
        for t in range(len(v_true))
    ]
    report = EvalReport(
        map_error_pct=map_pct,
        avg_efficiency_pct=avg_eff,
        peak_efficiency_pct=peak_eff,
        baseline_map_pct=base_map,
        n_points=len(v_true),
        n_nonzero_points=int((v_true > V_NONZERO_EPS).sum()),
        trace=trace,
    )
    if trace_path is not None:
        write_trace_csv(trace, trace_path)
    if report_path is not None:
        Path(report_path).write_text(report.to_json() + "\n", encoding="utf-8")
    return report
