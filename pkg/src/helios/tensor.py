"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every value is a NumPy float64 array wrapped in :class:`Tensor`. While a
:class:`Tape` is active (see :func:`recording`), each primitive op that
touches a gradient-tracked input appends an entry holding its inputs,
its output, and a vector-Jacobian closure. Entries are appended in
execution order, which is already a topological order, so one reverse
sweep over the list visits every recorded op exactly once.

All reductions use NumPy's fixed left-to-right order; results do not
depend on any configured worker count.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateBatchError,
    NumericError,
    ParameterError,
    ShapeError,
)
from .rng import RngStream


class Tensor:
    """A float64 array plus an optional gradient buffer.

    ``grad`` is None until a reverse pass deposits into it; a None grad
    on a detached tensor is the absent-gradient signal.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class Tape:
    """Ordered record of primitive ops for one reverse pass."""

    _ops: list = field(default_factory=list)

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, vjp) -> None:
        self._ops.append((inputs, output, vjp))

    def __len__(self) -> int:
        return len(self._ops)


_TAPE_STACK: list[Tape] = []


@contextmanager
def recording(tape: Tape):
    """Make ``tape`` the active recording target within the block."""
    _TAPE_STACK.append(tape)
    try:
        yield tape
    finally:
        _TAPE_STACK.pop()


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(inputs: tuple[Tensor, ...], out_data: np.ndarray, vjp) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(inputs, out, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after NumPy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / linear primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _emit((a, b), out, vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _emit((a, b), out, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _emit((a, b), out, vjp)


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """y = scale * x + shift with constant scalar coefficients."""
    out = scale * x.data + shift

    def vjp(g):
        return (scale * g,)

    return _emit((x,), out, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading axes broadcast NumPy-style."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")

    if b.data.ndim == 2 and a.data.ndim >= 2:
        # stacked-times-matrix: collapse to one GEMM instead of a per-slice
        # loop, and form the weight grad without a batched temporary
        k, n = b.data.shape
        lead = a.data.shape[:-1]
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(*lead, n)

        def vjp2(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.data.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _emit((a, b), out, vjp2)

    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul batch extents disagree: {a.shape} @ {b.shape}") from exc

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _emit((a, b), out, vjp)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    pos = x.data > 0

    def vjp(g):
        return (g * pos,)

    return _emit((x,), out, vjp)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function."""
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _emit((x,), out, vjp)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient is zero outside [lo, hi]."""
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)

    def vjp(g):
        return (g * inside,)

    return _emit((x,), out, vjp)


def softmax_lastaxis(x: Tensor) -> Tensor:
    """Shift-by-max softmax over the last axis; each slice sums to 1."""
    if x.data.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last axis")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _emit((x,), out, vjp)


# ---------------------------------------------------------------------------
# shape primitives
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)
    orig = x.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _emit((x,), out, vjp)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = x.data.transpose(axes)
    inv = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inv),)

    return _emit((x,), out, vjp)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    out = np.concatenate([a.data, b.data], axis=-1)
    na = a.data.shape[-1]

    def vjp(g):
        return g[..., :na], g[..., na:]

    return _emit((a, b), out, vjp)


def timestep(x: Tensor, t: int) -> Tensor:
    """Select one position along axis 1 of a [B, T, ...] tensor."""
    out = x.data[:, t]
    shape = x.data.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, t] = g
        return (full,)

    return _emit((x,), out, vjp)


def mean_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.mean())
    n = x.data.size
    shape = x.data.shape

    def vjp(g):
        return (np.full(shape, float(g) / n),)

    return _emit((x,), out, vjp)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())
    shape = x.data.shape

    def vjp(g):
        return (np.full(shape, float(g)),)

    return _emit((x,), out, vjp)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormState:
    """Per-channel running statistics, updated in train mode."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @staticmethod
    def fresh(channels: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return BatchNormState(np.zeros(channels), np.ones(channels), momentum, eps)

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.running_mean.copy(), self.running_var.copy(), self.momentum, self.eps)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Normalize a [B, T, C] tensor per channel over the joint B*T axis.

    Train mode normalizes with the biased batch variance and updates the
    running statistics in place (unbiased variance, torch convention);
    eval mode reads the running statistics only.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"batch_norm expects [B, T, C], got {x.shape}")
    b, t, c = x.data.shape
    n = b * t
    flat_axes = (0, 1)
    eps = state.eps

    if mode == "train":
        if n < 2:
            raise DegenerateBatchError(f"batch_norm train mode needs B*T >= 2, got {n}")
        mu = x.data.mean(axis=flat_axes)
        var = x.data.var(axis=flat_axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv_std
        m = state.momentum
        state.running_mean[:] = (1.0 - m) * state.running_mean + m * mu
        state.running_var[:] = (1.0 - m) * state.running_var + m * var * (n / (n - 1))
        out = xhat * gamma.data + beta.data

        def vjp(g):
            dbeta = g.sum(axis=flat_axes)
            dgamma = (g * xhat).sum(axis=flat_axes)
            dxhat = g * gamma.data
            dx = inv_std * (
                dxhat
                - dxhat.mean(axis=flat_axes)
                - xhat * (dxhat * xhat).mean(axis=flat_axes)
            )
            return dx, dgamma, dbeta

        return _emit((x, gamma, beta), out, vjp)

    if mode == "eval":
        inv_std = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x.data - state.running_mean) * inv_std
        out = xhat * gamma.data + beta.data

        def vjp(g):
            dbeta = g.sum(axis=flat_axes)
            dgamma = (g * xhat).sum(axis=flat_axes)
            dx = g * gamma.data * inv_std
            return dx, dgamma, dbeta

        return _emit((x, gamma, beta), out, vjp)

    raise ParameterError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")


def dropout(x: Tensor, p_keep: float, mode: str, rng: RngStream | None = None) -> Tensor:
    """Classic (non-inverted) dropout.

    Train mode multiplies by a Bernoulli(p_keep) mask with no rescaling;
    eval mode multiplies every element by p_keep, so the eval output
    equals the expectation of the train output.
    """
    if not 0.0 < p_keep <= 1.0:
        raise ParameterError(f"p_keep must lie in (0, 1], got {p_keep}")
    if p_keep == 1.0:
        out = x.data.copy()

        def vjp_id(g):
            return (g,)

        return _emit((x,), out, vjp_id)

    if mode == "train":
        if rng is None:
            raise ParameterError("train-mode dropout needs an RngStream")
        mask = rng.bernoulli(p_keep, x.data.shape)
        out = x.data * mask

        def vjp(g):
            return (g * mask,)

        return _emit((x,), out, vjp)

    if mode == "eval":
        out = x.data * p_keep

        def vjp_eval(g):
            return (g * p_keep,)

        return _emit((x,), out, vjp_eval)

    raise ParameterError(f"dropout mode must be 'train' or 'eval', got {mode!r}")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape, zero_grads: bool = True) -> None:
    """Reverse-accumulate d(loss)/d(input) for everything on the tape.

    By default all gradient buffers touched by the tape are zeroed
    first; pass ``zero_grads=False`` to accumulate onto existing leaf
    (parameter) grads. Intermediate grads are always reset, since they
    are scratch space for this pass.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    out_ids = set()
    for _, output, _ in tape._ops:
        out_ids.add(id(output))
        output.grad = None
    if zero_grads:
        for inputs, _, _ in tape._ops:
            for t in inputs:
                if id(t) not in out_ids:
                    t.grad = None
    loss.grad = np.ones(())
    # first contributions may alias the upstream grad buffer (pass-through
    # or view); un-alias lazily, only when a second contribution arrives
    aliased: dict[int, bool] = {}
    for inputs, output, vjp in reversed(tape._ops):
        g = output.grad
        if g is None:
            continue
        contribs = vjp(g)
        for t, contrib in zip(inputs, contribs):
            if contrib is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = contrib
                aliased[id(t)] = contrib is g or contrib.base is not None
            elif aliased.get(id(t)):
                t.grad = t.grad + contrib
                aliased[id(t)] = False
            else:
                t.grad += contrib


def grad_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    Relative error per coordinate is |auto - fd| / max(1e-8, |fd| + |auto|).
    """
    if step <= 0:
        raise ParameterError(f"step must be positive, got {step}")
    probe = Tensor(x.data.copy(), requires_grad=True)
    tape = Tape()
    with recording(tape):
        y = f(probe)
    if y.data.shape != ():
        raise ShapeError("grad_check target must return a scalar")
    backward(y, tape)
    auto = probe.grad if probe.grad is not None else np.zeros_like(probe.data)

    flat = probe.data.reshape(-1)
    auto_flat = auto.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(Tensor(probe.data.copy())).item()
        flat[i] = orig - step
        lo = f(Tensor(probe.data.copy())).item()
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericError(f"non-finite value in finite differences at coordinate {i}")
        fd = (hi - lo) / (2.0 * step)
        err = abs(auto_flat[i] - fd) / max(1e-8, abs(fd) + abs(auto_flat[i]))
        worst = max(worst, err)
    return worst
