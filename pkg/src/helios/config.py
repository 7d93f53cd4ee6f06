"""Plain-text key=value run configuration.

One flat namespace with dotted prefixes: ``seed``, ``data.*``,
``model.*``, ``train.*``, ``module.*`` (single-diode parameters), and
``synth.<i>.*`` (one block per generated location). Unknown keys are
hard errors. Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .pvsim.module import PvModuleParams, module_params_from_kv
from .pvsim.weather import SynthConfig, synth_config_from_kv

_DATA_KEYS = {"data.locations", "data.years", "data.holdout_hours", "data.val_hours", "data.path"}
_MODEL_KEYS = {
    "model.d_eff",
    "model.n_heads",
    "model.ff_dim",
    "model.n_blocks",
    "model.dropout_prob",
    "model.t_window",
    "model.pool",
}
_TRAIN_KEYS = {
    "train.epochs",
    "train.batch_size",
    "train.lr_min",
    "train.lr_max",
    "train.pct_up",
    "train.mom_peak",
    "train.mom_trough",
    "train.cycle_momentum",
    "train.clip_norm",
}
_MODULE_KEYS = {f"module.{f}" for f in PvModuleParams.__dataclass_fields__}
_SYNTH_FIELDS = set(SynthConfig.__dataclass_fields__)


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """key=value lines; blank lines and '#' comments are skipped."""
    kv: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in kv:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        kv[key] = value.strip()
    return kv


def _validate_keys(kv: dict[str, str]) -> None:
    known = {"seed"} | _DATA_KEYS | _MODEL_KEYS | _TRAIN_KEYS | _MODULE_KEYS
    for key in kv:
        if key in known:
            continue
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "synth" and parts[1].isdigit() and parts[2] in _SYNTH_FIELDS:
            continue
        raise ConfigError(f"unrecognized configuration key {key!r}")


def _convert(kv: dict[str, str], key: str, kind, default):
    if key not in kv:
        return default
    raw = kv[key]
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "on", "yes"):
                return True
            if raw.lower() in ("0", "false", "off", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


@dataclass
class RunConfig:
    """Merged view of file values and flag overrides for one CLI run."""

    seed: int = 42
    out_dir: str = "out"
    data_path: str | None = None
    checkpoint_path: str | None = None
    # data generation
    n_locations: int = 5
    years: int = 1
    holdout_hours: int = 200
    val_hours: int = 200
    # model
    d_eff: int = 64
    n_heads: int = 4
    ff_dim: int = 128
    n_blocks: int = 3
    dropout_prob: float = 0.2
    t_window: int = 50
    pool: str = "last"
    # training
    epochs: int = 15
    batch_size: int = 128
    lr_min: float = 1e-6
    lr_max: float = 1e-2
    pct_up: float = 0.3
    mom_peak: float = 0.1
    mom_trough: float = 0.01
    cycle_momentum: bool = True
    clip_norm: float | None = 1.0
    # explicit physics blocks, when present in the file
    module_params: PvModuleParams | None = None
    synth_locations: list[SynthConfig] = field(default_factory=list)

    @staticmethod
    def from_kv(kv: dict[str, str]) -> "RunConfig":
        _validate_keys(kv)
        run = RunConfig()
        run.seed = _convert(kv, "seed", int, run.seed)
        run.data_path = kv.get("data.path", run.data_path)
        run.n_locations = _convert(kv, "data.locations", int, run.n_locations)
        run.years = _convert(kv, "data.years", int, run.years)
        run.holdout_hours = _convert(kv, "data.holdout_hours", int, run.holdout_hours)
        run.val_hours = _convert(kv, "data.val_hours", int, run.val_hours)
        run.d_eff = _convert(kv, "model.d_eff", int, run.d_eff)
        run.n_heads = _convert(kv, "model.n_heads", int, run.n_heads)
        run.ff_dim = _convert(kv, "model.ff_dim", int, run.ff_dim)
        run.n_blocks = _convert(kv, "model.n_blocks", int, run.n_blocks)
        run.dropout_prob = _convert(kv, "model.dropout_prob", float, run.dropout_prob)
        run.t_window = _convert(kv, "model.t_window", int, run.t_window)
        run.pool = kv.get("model.pool", run.pool)
        run.epochs = _convert(kv, "train.epochs", int, run.epochs)
        run.batch_size = _convert(kv, "train.batch_size", int, run.batch_size)
        run.lr_min = _convert(kv, "train.lr_min", float, run.lr_min)
        run.lr_max = _convert(kv, "train.lr_max", float, run.lr_max)
        run.pct_up = _convert(kv, "train.pct_up", float, run.pct_up)
        run.mom_peak = _convert(kv, "train.mom_peak", float, run.mom_peak)
        run.mom_trough = _convert(kv, "train.mom_trough", float, run.mom_trough)
        run.cycle_momentum = _convert(kv, "train.cycle_momentum", bool, run.cycle_momentum)
        if "train.clip_norm" in kv:
            raw = kv["train.clip_norm"]
            run.clip_norm = None if raw.lower() in ("none", "off") else _convert(kv, "train.clip_norm", float, None)

        if any(k.startswith("module.") for k in kv):
            missing = sorted(_MODULE_KEYS - set(kv))
            if missing:
                raise ConfigError(f"module block is incomplete; missing {missing}")
            run.module_params = module_params_from_kv(kv)

        indices = sorted(
            {int(k.split(".")[1]) for k in kv if k.startswith("synth.")}
        )
        for i in indices:
            prefix = f"synth.{i}"
            block = {k: v for k, v in kv.items() if k.startswith(prefix + ".")}
            needed = {f"{prefix}.name", f"{prefix}.latitude", f"{prefix}.seed"}
            if not needed <= set(block):
                raise ConfigError(f"synth block {i} needs at least name, latitude, seed")
            # fill optional fields from dataclass defaults via from_kv
            defaults = SynthConfig(name="x", latitude=0.0, seed=0)
            full = {
                f"{prefix}.{f}": block.get(f"{prefix}.{f}", str(getattr(defaults, f)))
                for f in _SYNTH_FIELDS
            }
            run.synth_locations.append(synth_config_from_kv(full, prefix=prefix))
        return run
