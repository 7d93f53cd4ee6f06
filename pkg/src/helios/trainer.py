"""MSE training with Adam under a one-cycle learning-rate/momentum policy.

The cycled quantity is Adam's beta1, honoring the quoted 0.01-0.1
momentum band; ``cycle_momentum=False`` restores the conventional
constant beta1 = 0.9. Both phases of the cycle interpolate with a
cosine, momentum in anti-phase with the learning rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .dataset import WindowSet, batches
from .errors import DataError, DivergenceError, NumericError, ParameterError, ShapeError
from .evaluator import map_error_nonzero, mppt_efficiency
from .model import TransformerModel, predict
from .pvsim.module import PvModuleParams
from .rng import RngStream
from .tensor import Tape, Tensor, backward, recording

_SHUFFLE_STREAM = 10
_DROPOUT_STREAM = 11


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr_min: float = 1e-6
    lr_max: float = 1e-2
    pct_up: float = 0.3
    mom_peak: float = 0.1
    mom_trough: float = 0.01
    cycle_momentum: bool = True
    beta1_fixed: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.lr_min < self.lr_max:
            raise ParameterError(f"need lr_min < lr_max, got {self.lr_min} >= {self.lr_max}")
        if not 0.0 < self.pct_up < 1.0:
            raise ParameterError(f"pct_up must lie in (0, 1), got {self.pct_up}")
        if not self.mom_trough < self.mom_peak:
            raise ParameterError(f"need mom_trough < mom_peak, got {self.mom_trough} >= {self.mom_peak}")


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = T.sub(pred, Tensor(target))
    return T.mean_all(T.mul(diff, diff))


def peak_step(cfg: TrainConfig, total_steps: int) -> int:
    p = round(cfg.pct_up * total_steps)
    return min(max(1, p), total_steps - 2) if total_steps >= 3 else max(0, total_steps - 1)


def one_cycle_at(step: int, cfg: TrainConfig, total_steps: int) -> tuple[float, float]:
    """(lr, beta1) at a step: cosine up to the peak, cosine back down,
    momentum cycled in anti-phase (or constant with cycling off)."""
    if not 0 <= step < total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps})")
    peak = peak_step(cfg, total_steps)
    span = cfg.lr_max - cfg.lr_min
    mspan = cfg.mom_peak - cfg.mom_trough
    if step <= peak:
        u = step / peak if peak > 0 else 1.0
        lr = cfg.lr_min + span * 0.5 * (1.0 - math.cos(math.pi * u))
        beta1 = cfg.mom_peak - mspan * 0.5 * (1.0 - math.cos(math.pi * u))
    else:
        down = total_steps - 1 - peak
        u = (step - peak) / down if down > 0 else 1.0
        lr = cfg.lr_min + span * 0.5 * (1.0 + math.cos(math.pi * u))
        beta1 = cfg.mom_trough + mspan * 0.5 * (1.0 - math.cos(math.pi * u))
    if not cfg.cycle_momentum:
        beta1 = cfg.beta1_fixed
    return lr, beta1


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @staticmethod
    def fresh(params: dict[str, Tensor]) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over all parameters in place."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1**t)
        v_hat = state.v[name] / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all grads so their joint 2-norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


def _train_step(model, batch, dropout_rng, lr, beta1, cfg, adam, step):
    tape = Tape()
    with recording(tape):
        pred = model.forward(batch, "train", dropout_rng)
        loss = mse_loss(pred, batch.target)
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite training loss at step {step} (lr={lr:g})")
    backward(loss, tape)
    if cfg.clip_norm is not None:
        clip_global_norm(model.params, cfg.clip_norm)
    adam_step(model.params, adam, lr, beta1, cfg.beta2, cfg.eps)
    return value


def fit(
    model: TransformerModel,
    train_windows: WindowSet,
    val_windows: WindowSet,
    cfg: TrainConfig,
    module_params: PvModuleParams | None = None,
    metrics_path: str | Path | None = None,
) -> list[dict]:
    """Full training loop; returns per-epoch metrics.

    Deterministic given cfg.seed: shuffling and dropout use dedicated
    RngStreams. When validation windows and module parameters are
    available, each epoch logs validation MAP error and MPPT
    efficiency, and the parameters from the best-MAP epoch are restored
    at the end.
    """
    n = len(train_windows)
    if n == 0:
        raise DataError("fit needs a non-empty training window set")
    if cfg.epochs == 0:
        return []
    shuffle_rng = RngStream(cfg.seed, _SHUFFLE_STREAM)
    dropout_rng = RngStream(cfg.seed, _DROPOUT_STREAM)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    adam = AdamState.fresh(model.params)

    has_val = len(val_windows) > 0 and module_params is not None
    val_targets = val_windows.targets() if has_val else None
    val_env = val_windows.env() if has_val else None

    metrics: list[dict] = []
    best = (math.inf, None)
    out = Path(metrics_path).open("w", encoding="utf-8") if metrics_path else None
    try:
        step = 0
        lr = cfg.lr_min
        for epoch in range(cfg.epochs):
            losses = []
            for batch in batches(train_windows, cfg.batch_size, shuffle_rng):
                lr, beta1 = one_cycle_at(step, cfg, total_steps)
                losses.append(_train_step(model, batch, dropout_rng, lr, beta1, cfg, adam, step))
                step += 1
            row = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_map_pct": None,
                "val_eff_pct": None,
                "lr_last": lr,
            }
            if has_val:
                v_pred = predict(model, val_windows)
                row["val_map_pct"] = map_error_nonzero(v_pred, val_targets)
                row["val_eff_pct"] = mppt_efficiency(
                    v_pred, val_env[:, 0], val_env[:, 1], val_env[:, 2], module_params
                )[0]
                if row["val_map_pct"] < best[0]:
                    best = (row["val_map_pct"], model.state_copy())
            metrics.append(row)
            if out:
                out.write(json.dumps(row) + "\n")
                out.flush()
    finally:
        if out:
            out.close()
    if best[1] is not None:
        model.load_state(best[1])
    return metrics


def lr_range_test(
    model: TransformerModel,
    windows: WindowSet,
    steps: int,
    batch_size: int = 128,
    lr_lo: float = 1e-6,
    lr_hi: float = 1e-2,
    seed: int = 0,
    smooth: float = 0.98,
    abort_factor: float = 4.0,
) -> list[tuple[float, float]]:
    """Loss under geometrically growing learning rates.

    One Adam step per batch at lr_lo * (lr_hi/lr_lo)^(k/(steps-1)); the
    reported loss is exponentially smoothed and the sweep aborts once it
    exceeds ``abort_factor`` times the best seen. The caller's model is
    restored afterwards.
    """
    if steps < 2:
        raise ParameterError(f"lr_range_test needs steps >= 2, got {steps}")
    snapshot = model.state_copy()
    shuffle_rng = RngStream(seed, _SHUFFLE_STREAM)
    dropout_rng = RngStream(seed, _DROPOUT_STREAM)
    adam = AdamState.fresh(model.params)
    cfg = TrainConfig(seed=seed)
    rows: list[tuple[float, float]] = []
    try:
        smoothed = None
        best = math.inf
        k = 0
        while k < steps:
            for batch in batches(windows, batch_size, shuffle_rng):
                if k >= steps:
                    break
                lr = lr_lo * (lr_hi / lr_lo) ** (k / (steps - 1))
                value = _train_step(model, batch, dropout_rng, lr, 0.9, cfg, adam, k)
                smoothed = value if smoothed is None else smooth * smoothed + (1.0 - smooth) * value
                rows.append((lr, smoothed))
                best = min(best, smoothed)
                k += 1
                if smoothed > abort_factor * best:
                    return rows
    finally:
        model.load_state(snapshot)
    return rows
