"""Command-line pipeline: gen-data, train, eval, lr-find, sweep, predict.

Exit codes: 0 success, 1 usage, 2 configuration, 3 data integrity,
4 numeric/divergence. Every failure prints a machine-parseable
``error_code=`` line on stderr. All subcommands honor --seed and are
byte-deterministic; HELIOS_THREADS caps generation workers without
affecting any output.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_kv_file
from .dataset import build_windows, prepare_data, read_csv, split_train_test
from .errors import (
    CheckpointFormatError,
    ConfigError,
    DataError,
    HeliosError,
    NumericError,
)
from .evaluator import evaluate, high_pass_filter
from .model import ModelConfig, init_model, load_checkpoint, predict, save_checkpoint
from .pvsim import calibrate_module, generate_dataset, iv_current
from .pvsim.generate import default_locations
from .rng import RngStream
from .trainer import TrainConfig, fit, lr_range_test

_MODEL_INIT_STREAM = 20

SWEEP_GRIDS = {
    "d_eff": (32, 64, 128, 256, 512),
    "ff_dim": (128, 256, 512),
    "dropout": (0.1, 0.2, 0.3, 0.4, 0.5),
    "heads": (4, 8, 16, 32),
}


class _Parser(argparse.ArgumentParser):
    """argparse that treats usage problems as exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\nerror_code=1\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value configuration file")
    common.add_argument("--seed", type=int, help="master seed (default 42)")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--data", metavar="PATH", help="dataset CSV path")
    common.add_argument("--checkpoint", metavar="PATH", help="checkpoint path")
    common.add_argument("--epochs", type=int, help="training epochs (default 15)")
    common.add_argument("--batch-size", type=int, help="windows per batch (default 128)")
    common.add_argument("--d-eff", type=int, help="model width (default 64)")
    common.add_argument("--heads", type=int, help="attention heads (default 4)")
    common.add_argument("--ff-dim", type=int, help="feed-forward width (default 128)")
    common.add_argument("--dropout", type=float, help="dropout probability (default 0.2)")
    common.add_argument("--lr-max", type=float, help="one-cycle peak learning rate (default 1e-2)")

    parser = _Parser(prog="helios", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset CSV")
    p.add_argument("--locations", type=int, help="number of synthetic locations (default 5)")
    p.add_argument("--years", type=int, help="years per location (default 1)")

    sub.add_parser("train", parents=[common], help="train and checkpoint the voltage predictor")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the holdout")

    p = sub.add_parser("lr-find", parents=[common], help="learning-rate range test")
    p.add_argument("--steps", type=int, default=100, help="range-test steps (default 100)")

    p = sub.add_parser("sweep", parents=[common], help="one-axis hyperparameter sweep")
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_GRIDS), help="hyperparameter to vary")
    p.add_argument("--small", action="store_true", help="shrink data and epochs to desk scale")

    sub.add_parser("predict", parents=[common], help="filtered voltage/power predictions for a dataset")
    return parser


def _run_config(args) -> RunConfig:
    kv = parse_kv_file(args.config) if args.config else {}
    run = RunConfig.from_kv(kv)
    if args.seed is not None:
        run.seed = args.seed
    run.out_dir = args.out
    if args.data:
        run.data_path = args.data
    if args.checkpoint:
        run.checkpoint_path = args.checkpoint
    for flag, attr in (
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("d_eff", "d_eff"),
        ("heads", "n_heads"),
        ("ff_dim", "ff_dim"),
        ("dropout", "dropout_prob"),
        ("lr_max", "lr_max"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(run, attr, value)
    if getattr(args, "locations", None) is not None:
        run.n_locations = args.locations
    if getattr(args, "years", None) is not None:
        run.years = args.years
    return run


def _out_dir(run: RunConfig) -> Path:
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_path(run: RunConfig, default_name: str = "dataset.csv") -> Path:
    return Path(run.data_path) if run.data_path else _out_dir(run) / default_name


def _module_params(run: RunConfig):
    return run.module_params if run.module_params is not None else calibrate_module()


def _locations(run: RunConfig):
    return run.synth_locations or default_locations(run.n_locations, run.seed)


def _model_config(run: RunConfig, normalizer) -> ModelConfig:
    return ModelConfig(
        d_eff=run.d_eff,
        n_heads=run.n_heads,
        ff_dim=run.ff_dim,
        n_blocks=run.n_blocks,
        dropout_prob=run.dropout_prob,
        t_window=run.t_window,
        pool=run.pool,
        y_min=normalizer.y_min,
        y_max=normalizer.y_max,
    )


def _train_config(run: RunConfig, epochs: int | None = None) -> TrainConfig:
    return TrainConfig(
        epochs=run.epochs if epochs is None else epochs,
        batch_size=run.batch_size,
        lr_min=run.lr_min,
        lr_max=run.lr_max,
        pct_up=run.pct_up,
        mom_peak=run.mom_peak,
        mom_trough=run.mom_trough,
        cycle_momentum=run.cycle_momentum,
        clip_norm=run.clip_norm,
        seed=run.seed,
    )


def cmd_gen_data(run: RunConfig) -> int:
    path = _data_path(run)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = _module_params(run)
    locations = _locations(run)
    by_loc = generate_dataset(locations, run.years, params, path)
    rows = sum(len(v) for v in by_loc.values())
    print(f"wrote {rows} rows for {len(by_loc)} locations to {path}")
    return 0


def _prepared(run: RunConfig):
    by_loc = read_csv(_data_path(run))
    return prepare_data(by_loc, run.seed, run.holdout_hours, run.val_hours, run.t_window)


def cmd_train(run: RunConfig) -> int:
    out = _out_dir(run)
    prep = _prepared(run)
    cfg = _model_config(run, prep.normalizer)
    model = init_model(cfg, RngStream(run.seed, _MODEL_INIT_STREAM))
    params = _module_params(run)
    metrics = fit(
        model,
        prep.train_windows,
        prep.val_windows,
        _train_config(run),
        module_params=params,
        metrics_path=out / "metrics.jsonl",
    )
    ck = Path(run.checkpoint_path) if run.checkpoint_path else out / "checkpoint.bin"
    save_checkpoint(model, prep.normalizer, ck)
    last = metrics[-1] if metrics else {}
    print(f"trained {len(metrics)} epochs on {len(prep.train_windows)} windows; checkpoint: {ck}")
    if last.get("val_map_pct") is not None:
        print(f"final val MAP {last['val_map_pct']:.3f}% | val efficiency {last['val_eff_pct']:.3f}%")
    return 0


def _test_windows(run: RunConfig, normalizer):
    by_loc = read_csv(_data_path(run))
    split = split_train_test(by_loc, run.seed, run.holdout_hours, run.t_window)
    if split.test_location is None:
        raise DataError("holdout_hours is 0; nothing to evaluate")
    full = build_windows({split.test_location: split.test_records}, run.t_window, normalizer)
    return full.tail(run.holdout_hours)


def cmd_eval(run: RunConfig) -> int:
    out = _out_dir(run)
    ck = Path(run.checkpoint_path) if run.checkpoint_path else out / "checkpoint.bin"
    model, normalizer = load_checkpoint(ck)
    windows = _test_windows(run, normalizer)
    report = evaluate(
        model,
        windows,
        _module_params(run),
        trace_path=out / "trace.csv",
        report_path=out / "report.json",
    )
    print(
        f"MAP {report.map_error_pct:.3f}% | avg eff {report.avg_efficiency_pct:.3f}% | "
        f"peak eff {report.peak_efficiency_pct:.3f}% | baseline MAP {report.baseline_map_pct:.3f}% "
        f"({report.n_nonzero_points}/{report.n_points} non-zero points)"
    )
    return 0


def cmd_lr_find(run: RunConfig, steps: int) -> int:
    out = _out_dir(run)
    prep = _prepared(run)
    cfg = _model_config(run, prep.normalizer)
    model = init_model(cfg, RngStream(run.seed, _MODEL_INIT_STREAM))
    rows = lr_range_test(
        model, prep.train_windows, steps, run.batch_size, run.lr_min, run.lr_max, seed=run.seed
    )
    path = out / "lr_finder.csv"
    path.write_text(
        "lr,loss\n" + "".join(f"{lr!r},{loss!r}\n" for lr, loss in rows), encoding="utf-8"
    )
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def cmd_sweep(run: RunConfig, axis: str, small: bool) -> int:
    out = _out_dir(run)
    if small:
        run.holdout_hours = min(run.holdout_hours, 100)
        run.val_hours = min(run.val_hours, 100)
        run.epochs = 1
        base = {"d_eff": 64, "heads": 4, "ff_dim": 128, "dropout": 0.2}
    else:
        base = {"d_eff": 256, "heads": 16, "ff_dim": 256, "dropout": 0.2}

    data = _data_path(run)
    if not data.exists():
        params = _module_params(run)
        generate_dataset(default_locations(1 if small else run.n_locations, run.seed), run.years, params, data)
    by_loc = read_csv(data)
    prep = prepare_data(by_loc, run.seed, run.holdout_hours, run.val_hours, run.t_window)
    train_windows = prep.train_windows
    if small and len(train_windows) > 1024:
        train_windows = train_windows.select(np.arange(1024))
    params = _module_params(run)

    rows = []
    for cell, value in enumerate(SWEEP_GRIDS[axis]):
        knobs = dict(base)
        knobs[axis] = value
        cfg = ModelConfig(
            d_eff=knobs["d_eff"],
            n_heads=knobs["heads"],
            ff_dim=knobs["ff_dim"],
            n_blocks=run.n_blocks,
            dropout_prob=knobs["dropout"],
            t_window=run.t_window,
            pool=run.pool,
            y_min=prep.normalizer.y_min,
            y_max=prep.normalizer.y_max,
        )
        model = init_model(cfg, RngStream(run.seed + cell, _MODEL_INIT_STREAM))
        tc = _train_config(run)
        tc.seed = run.seed + cell
        fit(model, train_windows, prep.val_windows, tc, module_params=params)
        report = evaluate(model, prep.test_windows, params)
        row = {axis: value, "map_pct": report.map_error_pct, "avg_eff_pct": report.avg_efficiency_pct}
        if axis == "d_eff":
            row["d_adj"] = cfg.d_adj
        rows.append(row)
        print(
            f"{axis}={value}"
            + (f" d_adj={cfg.d_adj}" if axis == "d_eff" else "")
            + f" MAP={report.map_error_pct:.3f}% avg_eff={report.avg_efficiency_pct:.3f}%"
        )

    header = [axis] + (["d_adj"] if axis == "d_eff" else []) + ["map_pct", "avg_eff_pct"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(row[h]) if isinstance(row[h], float) else str(row[h]) for h in header))
    path = out / f"sweep_{axis}.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {path}")
    return 0


def cmd_predict(run: RunConfig) -> int:
    out = _out_dir(run)
    ck = Path(run.checkpoint_path) if run.checkpoint_path else out / "checkpoint.bin"
    model, normalizer = load_checkpoint(ck)
    by_loc = read_csv(_data_path(run))
    params = _module_params(run)
    lines = ["location_id,year,month,day,hour,v_pred_v,p_pred_w"]
    for loc, records in by_loc.items():
        windows = build_windows({loc: records}, run.t_window, normalizer)
        if len(windows) == 0:
            continue
        v_pred = predict(model, windows)
        env = windows.env()
        p_pred = np.clip(v_pred, 0.0, None) * iv_current(
            np.clip(v_pred, 0.0, None), env[:, 0], env[:, 1], params
        )
        v_filt, p_filt = high_pass_filter(v_pred, p_pred)
        for k, end in enumerate(windows.w_end):
            r = records[end]
            lines.append(f"{loc},{r.year},{r.month},{r.day},{r.hour},{v_filt[k]!r},{p_filt[k]!r}")
    path = out / "predictions.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines) - 1} predictions to {path}")
    return 0


_ERROR_EXIT = (
    (ConfigError, 2),
    (CheckpointFormatError, 2),
    (DataError, 3),
    (NumericError, 4),
    (HeliosError, 4),
)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        run = _run_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(run)
        if args.command == "train":
            return cmd_train(run)
        if args.command == "eval":
            return cmd_eval(run)
        if args.command == "lr-find":
            return cmd_lr_find(run, args.steps)
        if args.command == "sweep":
            return cmd_sweep(run, args.axis, args.small)
        if args.command == "predict":
            return cmd_predict(run)
        raise AssertionError(f"unhandled command {args.command}")
    except HeliosError as exc:
        code = next(c for klass, c in _ERROR_EXIT if isinstance(exc, klass))
        sys.stderr.write(f"{type(exc).__name__}: {exc}\nerror_code={code}\n")
        return code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
