"""Transformer encoder regressor for final-timestep operating voltage.

Input wiring: continuous features are projected up to the model width,
concatenated with the categorical one-hots (adjusted width = model
width + total one-hot width), and projected back down by one unified
matrix whose one-hot rows form the entity-embedding table: a one-hot
matmul against those rows is exactly an embedding lookup. A learnable
positional table is added, three identical post-norm encoder blocks
follow, and a single-output head maps the final timestep through a
sigmoid scaled to the training target range, so predictions stay
strictly inside it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .dataset import SCHEMA, Normalizer, WindowBatch, WindowSet, batches
from .errors import CheckpointFormatError, ConfigError, MaskingError, ShapeError
from .rng import RngStream
from .tensor import BatchNormState, Tensor

RAW_OUTPUT_CLAMP = 50.0  # sigmoid input guard; saturated beyond this anyway


@dataclass(frozen=True)
class ModelConfig:
    d_eff: int
    n_heads: int
    ff_dim: int
    n_blocks: int = 3
    dropout_prob: float = 0.2
    t_window: int = 50
    n_cont: int = SCHEMA.n_cont
    cat_cardinalities: tuple[int, ...] = SCHEMA.cardinalities
    y_min: float = 0.0
    y_max: float = 40.0
    pool: str = "last"  # "last" or "flatten"

    def __post_init__(self):
        if self.d_eff % self.n_heads != 0:
            raise ConfigError(f"d_eff={self.d_eff} is not divisible by n_heads={self.n_heads}")
        if self.y_max <= self.y_min:
            raise ConfigError(f"need y_max > y_min, got [{self.y_min}, {self.y_max}]")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")
        if self.pool not in ("last", "flatten"):
            raise ConfigError(f"pool must be 'last' or 'flatten', got {self.pool!r}")

    @property
    def n_onehot(self) -> int:
        return sum(self.cat_cardinalities)

    @property
    def d_adj(self) -> int:
        """Adjusted projection input width: model width plus one-hot width."""
        return self.d_eff + self.n_onehot

    @property
    def head_in(self) -> int:
        return self.d_eff if self.pool == "last" else self.t_window * self.d_eff


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form trainable parameter count for a config."""
    d, ff = cfg.d_eff, cfg.ff_dim
    per_block = 4 * d * d + 2 * d + (d * ff + ff + ff * d + d) + 2 * d
    return (
        cfg.n_cont * d
        + cfg.d_adj * d
        + cfg.t_window * d
        + cfg.n_blocks * per_block
        + cfg.head_in
        + 1
    )


class TransformerModel:
    """Named parameter tensors plus per-block batch-norm running state."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor], bn_states: dict[str, BatchNormState]):
        self.cfg = cfg
        self.params = params
        self.bn_states = bn_states

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def embedding_rows(self) -> np.ndarray:
        """The categorical block of the unified projection: row k is the
        embedding vector selected by one-hot index k."""
        return self.params["unified_proj"].data[self.cfg.d_eff :]

    def state_copy(self):
        return (
            {k: v.data.copy() for k, v in self.params.items()},
            {k: s.copy() for k, s in self.bn_states.items()},
        )

    def load_state(self, state) -> None:
        arrays, bns = state
        for k, v in self.params.items():
            v.data = arrays[k].copy()
        for k in self.bn_states:
            self.bn_states[k] = bns[k].copy()

    # -- forward pieces ----------------------------------------------------

    def embed(self, x_cont: Tensor, x_cat: Tensor) -> Tensor:
        cfg = self.cfg
        if x_cont.shape[-1] != cfg.n_cont or x_cat.shape[-1] != cfg.n_onehot:
            raise ShapeError(
                f"inputs {x_cont.shape} / {x_cat.shape} do not match config "
                f"(n_cont={cfg.n_cont}, N={cfg.n_onehot})"
            )
        h_c = T.matmul(x_cont, self.params["cont_proj"])
        z = T.concat_last(h_c, x_cat)  # width d_adj
        e = T.matmul(z, self.params["unified_proj"])
        return T.add(e, self.params["pos_enc"])

    def attention(self, x: Tensor, mask: np.ndarray, block: int) -> Tensor:
        cfg = self.cfg
        b, t, d = x.shape
        if np.any(mask.sum(axis=1) == 0):
            raise MaskingError("a window has every key position masked")
        heads, dh = cfg.n_heads, d // cfg.n_heads
        p = self.params
        q = T.matmul(x, p[f"block{block}.wq"])
        k = T.matmul(x, p[f"block{block}.wk"])
        v = T.matmul(x, p[f"block{block}.wv"])
        q = T.affine(q, 1.0 / np.sqrt(dh))  # scale once on [B,T,d], not on [B,H,T,T]
        qh = T.transpose(T.reshape(q, (b, t, heads, dh)), (0, 2, 1, 3))
        kt = T.transpose(T.reshape(k, (b, t, heads, dh)), (0, 2, 3, 1))
        vh = T.transpose(T.reshape(v, (b, t, heads, dh)), (0, 2, 1, 3))
        scores = T.matmul(qh, kt)
        bias = Tensor((1.0 - mask).reshape(b, 1, 1, t) * -1e9)
        att = T.softmax_lastaxis(T.add(scores, bias))
        ctx = T.reshape(T.transpose(T.matmul(att, vh), (0, 2, 1, 3)), (b, t, d))
        return T.matmul(ctx, p[f"block{block}.wo"])

    def encoder_block(self, x: Tensor, mask: np.ndarray, block: int, mode: str, rng: RngStream | None) -> Tensor:
        cfg = self.cfg
        p = self.params
        p_keep = 1.0 - cfg.dropout_prob
        att = T.dropout(self.attention(x, mask, block), p_keep, mode, rng)
        z = T.batch_norm(
            T.add(x, att),
            p[f"block{block}.bn1.gamma"],
            p[f"block{block}.bn1.beta"],
            self.bn_states[f"block{block}.bn1"],
            mode,
        )
        f = T.relu(T.add(T.matmul(z, p[f"block{block}.ffn.w1"]), p[f"block{block}.ffn.b1"]))
        f = T.add(T.matmul(f, p[f"block{block}.ffn.w2"]), p[f"block{block}.ffn.b2"])
        f = T.dropout(f, p_keep, mode, rng)
        return T.batch_norm(
            T.add(z, f),
            p[f"block{block}.bn2.gamma"],
            p[f"block{block}.bn2.beta"],
            self.bn_states[f"block{block}.bn2"],
            mode,
        )

    def forward(self, batch: WindowBatch, mode: str, dropout_rng: RngStream | None = None) -> Tensor:
        """Predicted voltage [B] in volts, strictly inside (y_min, y_max)."""
        cfg = self.cfg
        h = self.embed(Tensor(batch.x_cont), Tensor(batch.x_cat))
        for i in range(cfg.n_blocks):
            h = self.encoder_block(h, batch.mask, i, mode, dropout_rng)
        if cfg.pool == "last":
            r = T.timestep(h, cfg.t_window - 1)
        else:
            b = h.shape[0]
            r = T.reshape(h, (b, cfg.t_window * cfg.d_eff))
        raw = T.add(T.matmul(r, self.params["head.w"]), self.params["head.b"])
        raw = T.reshape(raw, (raw.shape[0],))
        raw = T.clip(raw, -RAW_OUTPUT_CLAMP, RAW_OUTPUT_CLAMP)
        return T.affine(T.sigmoid(raw), cfg.y_max - cfg.y_min, cfg.y_min)


def init_model(cfg: ModelConfig, rng: RngStream) -> TransformerModel:
    """Glorot-uniform projection weights; small-uniform positions and
    biases; identity batch norm."""

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)

    def small(*shape):
        return Tensor(rng.uniform(-0.02, 0.02, shape), requires_grad=True)

    d, ff = cfg.d_eff, cfg.ff_dim
    params: dict[str, Tensor] = {}
    params["cont_proj"] = glorot(cfg.n_cont, d)
    params["unified_proj"] = glorot(cfg.d_adj, d)
    params["pos_enc"] = small(cfg.t_window, d)
    bn_states: dict[str, BatchNormState] = {}
    for i in range(cfg.n_blocks):
        for name in ("wq", "wk", "wv", "wo"):
            params[f"block{i}.{name}"] = glorot(d, d)
        for bn in ("bn1", "bn2"):
            params[f"block{i}.{bn}.gamma"] = Tensor(np.ones(d), requires_grad=True)
            params[f"block{i}.{bn}.beta"] = Tensor(np.zeros(d), requires_grad=True)
            bn_states[f"block{i}.{bn}"] = BatchNormState.fresh(d)
        params[f"block{i}.ffn.w1"] = glorot(d, ff)
        params[f"block{i}.ffn.b1"] = small(ff)
        params[f"block{i}.ffn.w2"] = glorot(ff, d)
        params[f"block{i}.ffn.b2"] = small(d)
    params["head.w"] = glorot(cfg.head_in, 1)
    params["head.b"] = small(1)
    model = TransformerModel(cfg, params, bn_states)
    total = sum(p.data.size for p in params.values())
    assert total == parameter_count(cfg), f"parameter count {total} != formula {parameter_count(cfg)}"
    return model


def predict(model: TransformerModel, windows: WindowSet, batch_size: int = 256) -> np.ndarray:
    """Eval-mode voltage predictions over a window set, in order."""
    chunks = [model.forward(b, "eval").data for b in batches(windows, batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros(0)


# ---------------------------------------------------------------------------
# checkpoint format MPTF1
# ---------------------------------------------------------------------------

MAGIC = b"MPTF1"
FORMAT_VERSION = 1

_CONFIG_FIELDS = (
    "d_eff",
    "n_heads",
    "ff_dim",
    "n_blocks",
    "dropout_prob",
    "t_window",
    "n_cont",
    "cat_cardinalities",
    "y_min",
    "y_max",
    "pool",
)


def _config_to_text(cfg: ModelConfig) -> str:
    lines = []
    for name in _CONFIG_FIELDS:
        v = getattr(cfg, name)
        if name == "cat_cardinalities":
            v = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{name}={v}")
    return "\n".join(lines) + "\n"


def _config_from_text(text: str) -> ModelConfig:
    kv = {}
    for line in text.splitlines():
        if line:
            key, _, val = line.partition("=")
            kv[key] = val
    try:
        return ModelConfig(
            d_eff=int(kv["d_eff"]),
            n_heads=int(kv["n_heads"]),
            ff_dim=int(kv["ff_dim"]),
            n_blocks=int(kv["n_blocks"]),
            dropout_prob=float(kv["dropout_prob"]),
            t_window=int(kv["t_window"]),
            n_cont=int(kv["n_cont"]),
            cat_cardinalities=tuple(int(x) for x in kv["cat_cardinalities"].split(",")),
            y_min=float(kv["y_min"]),
            y_max=float(kv["y_max"]),
            pool=kv["pool"],
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"bad config block: {exc}") from exc


def _normalizer_to_text(norm: Normalizer) -> str:
    return (
        "lows=" + ",".join(repr(float(x)) for x in norm.lows) + "\n"
        "highs=" + ",".join(repr(float(x)) for x in norm.highs) + "\n"
        f"y_min={norm.y_min!r}\n"
        f"y_max={norm.y_max!r}\n"
    )


def _normalizer_from_text(text: str) -> Normalizer:
    kv = dict(line.partition("=")[::2] for line in text.splitlines() if line)
    try:
        return Normalizer(
            lows=np.array([float(x) for x in kv["lows"].split(",")]),
            highs=np.array([float(x) for x in kv["highs"].split(",")]),
            y_min=float(kv["y_min"]),
            y_max=float(kv["y_max"]),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"bad normalizer block: {exc}") from exc


def _all_tensors(model: TransformerModel) -> dict[str, np.ndarray]:
    out = {name: t.data for name, t in model.params.items()}
    for name, state in model.bn_states.items():
        out[f"{name}.running_mean"] = state.running_mean
        out[f"{name}.running_var"] = state.running_var
    return out


def save_checkpoint(model: TransformerModel, normalizer: Normalizer, path: str | Path) -> None:
    """Bit-exact binary dump: little-endian, IEEE-754 f64, row-major."""
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for text in (_config_to_text(model.cfg), _normalizer_to_text(normalizer)):
        blob = text.encode("utf-8")
        parts.append(struct.pack("<Q", len(blob)))
        parts.append(blob)
    tensors = _all_tensors(model)
    parts.append(struct.pack("<Q", len(tensors)))
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<Q", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<Q", arr.ndim))
        for extent in arr.shape:
            parts.append(struct.pack("<Q", extent))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated checkpoint at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path: str | Path) -> tuple[TransformerModel, Normalizer]:
    """Parse and validate an MPTF1 file; raises on bad magic, version,
    truncation, or config/tensor-shape disagreement."""
    try:
        r = _Reader(Path(path).read_bytes())
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("bad magic (not an MPTF1 checkpoint)")
    version = struct.unpack("<I", r.take(4))[0]
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    cfg = _config_from_text(r.take(r.u64()).decode("utf-8"))
    norm = _normalizer_from_text(r.take(r.u64()).decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u64()):
        name = r.take(r.u64()).decode("utf-8")
        rank = r.u64()
        shape = tuple(r.u64() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).copy()
        tensors[name] = arr
    if r.pos != len(r.data):
        raise CheckpointFormatError(f"{len(r.data) - r.pos} trailing bytes after tensor stream")

    reference = init_model(cfg, RngStream(0))
    expected = _all_tensors(reference)
    if set(expected) != set(tensors):
        missing = sorted(set(expected) ^ set(tensors))
        raise CheckpointFormatError(f"tensor names disagree with config: {missing}")
    for name, arr in tensors.items():
        if arr.shape != expected[name].shape:
            raise CheckpointFormatError(
                f"tensor {name!r} has shape {arr.shape}, config implies {expected[name].shape}"
            )
    for name, t in reference.params.items():
        t.data = tensors[name]
    for name, state in reference.bn_states.items():
        state.running_mean = tensors[f"{name}.running_mean"]
        state.running_var = tensors[f"{name}.running_var"]
    return reference, norm
