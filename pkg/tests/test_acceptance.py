"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to watch). Criteria 8 and 9 share one
end-to-end pipeline fixture; everything else is self-contained."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from helios.cli import main
from helios.dataset import WindowBatch
from helios.model import ModelConfig, init_model
from helios.pvsim import iv_current, open_circuit_voltage, solve_mpp_batch
from helios.pvsim.module import _stc_measurements, cell_temperature
from helios.rng import RngStream
from helios.tensor import Tensor, dropout, grad_check
from helios.trainer import TrainConfig, one_cycle_at, peak_step, mse_loss


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


def make_batch(b, t, seed):
    rng = RngStream(seed)
    cat = np.zeros((b, t, 36))
    for i in range(b):
        for j in range(t):
            cat[i, j, int(rng.integers(0, 12))] = 1.0
            cat[i, j, 12 + int(rng.integers(0, 24))] = 1.0
    return WindowBatch(
        x_cont=rng.normal(0, 1, (b, t, 8)),
        x_cat=cat,
        mask=np.ones((b, t)),
        target=rng.uniform(5, 35, b),
        g_eff=rng.uniform(100, 1000, b),
        t_cell=rng.uniform(10, 60, b),
        pmp=rng.uniform(20, 220, b),
        imp=rng.uniform(1, 7, b),
    )


# -- criterion 1: equation suite --------------------------------------------


def test_c01_equation_suite():
    start = time.time()
    cfg = ModelConfig(d_eff=8, n_heads=2, ff_dim=8, n_blocks=1, dropout_prob=0.0, t_window=4)
    model = init_model(cfg, RngStream(1))

    # embedding lookup == one-hot matmul, exact
    rows = model.embedding_rows()
    lookup_ok = True
    for k in range(36):
        onehot = np.zeros(36)
        onehot[k] = 1.0
        lookup_ok &= bool(np.array_equal(onehot @ rows, rows[k]))

    # adjusted-width relation for the five reference widths
    pairs_ok = all(
        ModelConfig(d_eff=d, n_heads=4, ff_dim=32).d_adj == adj
        for d, adj in ((32, 68), (64, 100), (128, 164), (256, 292), (512, 548))
    )

    # scaled-sigmoid head: strict bounds on 1000 random batches
    bounds_ok = True
    for seed in range(1000):
        out = model.forward(make_batch(2, 4, seed=seed), "eval").data
        bounds_ok &= bool(np.all(out > cfg.y_min) and np.all(out < cfg.y_max))

    # three analytic sigmoid cases: 0 -> midpoint, +/-50 -> saturated ends
    model.params["head.w"].data[:] = 0.0
    batch = make_batch(2, 4, seed=7)
    model.params["head.b"].data[:] = 0.0
    mid = model.forward(batch, "eval").data
    model.params["head.b"].data[:] = 50.0
    hi = model.forward(batch, "eval").data
    model.params["head.b"].data[:] = -50.0
    lo = model.forward(batch, "eval").data
    analytic_ok = (
        np.allclose(mid, (cfg.y_min + cfg.y_max) / 2, atol=1e-12)
        and np.allclose(hi, cfg.y_max, atol=1e-12)
        and np.allclose(lo, cfg.y_min, atol=1e-12)
    )
    elapsed = time.time() - start
    ok = lookup_ok and pairs_ok and bounds_ok and analytic_ok and elapsed < 10.0
    report(
        "C1 equation suite",
        ok,
        f"lookup={lookup_ok} pairs={pairs_ok} bounds={bounds_ok} "
        f"analytic={analytic_ok} in {elapsed:.1f}s (<10s)",
    )


# -- criterion 2: gradient correctness ---------------------------------------


def test_c02_gradients_match_finite_differences():
    start = time.time()
    cfg = ModelConfig(d_eff=8, n_heads=2, ff_dim=8, n_blocks=2, dropout_prob=0.0, t_window=4)
    worst = 0.0
    for seed in range(20):
        model = init_model(cfg, RngStream(100 + seed))
        batch = make_batch(2, 4, seed=200 + seed)

        def loss_wrt(name):
            def f(x):
                saved = model.params[name]
                model.params[name] = x
                try:
                    return mse_loss(model.forward(batch, "eval"), batch.target)
                finally:
                    model.params[name] = saved

            return f

        for name in model.params:
            err = grad_check(loss_wrt(name), Tensor(model.params[name].data.copy()), step=1e-5)
            worst = max(worst, err)
    elapsed = time.time() - start
    ok = worst < 1e-4 and elapsed < 120.0
    report(
        "C2 gradient check",
        ok,
        f"max rel err {worst:.2e} (<1e-4) over 20 seeds, all parameters, in {elapsed:.0f}s (<120s)",
    )


# -- criterion 3: PV oracle equivalence --------------------------------------


def test_c03_mpp_matches_dense_sweep(module_params):
    start = time.time()
    rng = RngStream(33)
    g = rng.uniform(50.0, 1100.0, 200)
    t = rng.uniform(0.0, 70.0, 200)
    _, _, pmp = solve_mpp_batch(g, t, module_params)
    worst = 0.0
    for k in range(200):
        voc = open_circuit_voltage(float(g[k]), float(t[k]), module_params)
        grid = np.linspace(0.0, voc, 100_000)
        p = grid * iv_current(grid, float(g[k]), float(t[k]), module_params)
        worst = max(worst, abs(p.max() - pmp[k]) / pmp[k])
    elapsed = time.time() - start
    ok = worst <= 1e-4 and elapsed < 60.0
    report(
        "C3 MPP oracle",
        ok,
        f"max |dP|/Pmp {worst:.2e} (<=1e-4) over 200 states vs 100k-point sweep in {elapsed:.0f}s (<60s)",
    )


# -- criterion 4: nameplate calibration ---------------------------------------


def test_c04_calibration_bands(module_params):
    start = time.time()
    pmp, ff, gamma = _stc_measurements(module_params)
    ok = (
        abs(pmp - 230.0) / 230.0 <= 0.02
        and abs(ff - 0.778) <= 0.01
        and abs(gamma - (-0.37)) <= 0.05
        and (time.time() - start) < 60.0
    )
    report(
        "C4 calibration",
        ok,
        f"Pmp {pmp:.1f}W (230 +/-2%), FF {ff:.4f} (0.778 +/-0.01), gamma {gamma:.3f}%%/C (-0.37 +/-0.05)",
    )


# -- criterion 5: physics sign properties -------------------------------------


def test_c05_physics_signs(module_params):
    rng = RngStream(55)
    ok = True
    for _ in range(10):
        g = float(rng.uniform(200.0, 1100.0))
        t = float(rng.uniform(5.0, 60.0))
        w = float(rng.uniform(0.5, 9.0))
        dvoc = open_circuit_voltage(g, t + 1.0, module_params) - open_circuit_voltage(
            g, t - 1.0, module_params
        )
        disc = iv_current(0.0, g, t + 1.0, module_params) - iv_current(0.0, g, t - 1.0, module_params)
        _, _, p_lo = solve_mpp_batch(np.asarray([g - 10.0]), np.asarray([t]), module_params)
        _, _, p_hi = solve_mpp_batch(np.asarray([g + 10.0]), np.asarray([t]), module_params)
        dtc = cell_temperature(25.0, g, w + 0.5, module_params) - cell_temperature(
            25.0, g, w - 0.5, module_params
        )
        ok &= dvoc < 0 and disc > 0 and p_hi[0] > p_lo[0] and dtc < 0
    report("C5 physics signs", ok, "dVoc/dT<0, dIsc/dT>0, dPmp/dG>0, dTcell/dwind<0 at 10 states")


# -- criterion 6: dropout inference scaling -----------------------------------


def test_c06_dropout_retention_scaling():
    rng = RngStream(66)
    w = rng.normal(0, 1, (16, 8))
    x = rng.normal(0, 1, 16)
    # 1e5 independent train-mode masks, one eval-mode scaled pass
    tiled = Tensor(np.tile(x @ w, (100_000, 1)))
    train_mean = dropout(tiled, 0.8, "train", RngStream(67)).data.mean(axis=0)
    eval_out = dropout(Tensor(x @ w), 0.8, "eval").data
    rel = np.max(np.abs(train_mean - eval_out) / np.maximum(np.abs(eval_out), 1e-12))
    ok = rel < 0.01
    report("C6 dropout scaling", ok, f"mean-of-masks vs retention-scaled within {rel:.4f} (<0.01)")


# -- criterion 7: schedule shape ----------------------------------------------


def test_c07_schedule_shape():
    cfg = TrainConfig(seed=0)
    total = 500
    peak = peak_step(cfg, total)
    lr0, b0 = one_cycle_at(0, cfg, total)
    lrp, bp = one_cycle_at(peak, cfg, total)
    lre, be = one_cycle_at(total - 1, cfg, total)
    lrs = [one_cycle_at(s, cfg, total)[0] for s in range(total)]
    up_ok = all(a <= b for a, b in zip(lrs[: peak + 1], lrs[1 : peak + 1]))
    down_ok = all(a >= b for a, b in zip(lrs[peak:], lrs[peak + 1 :]))
    grid = [1e-6 * (1e-2 / 1e-6) ** (k / 49) for k in range(50)]
    geometric_ok = all(
        abs(grid[k + 1] / grid[k] - grid[1] / grid[0]) < 1e-12 for k in range(48)
    )
    ok = (
        math.isclose(lr0, 1e-6)
        and math.isclose(lrp, 1e-2)
        and lre <= 1e-6 + 1e-12
        and peak == round(0.3 * total)
        and math.isclose(b0, 0.1)
        and math.isclose(bp, 0.01)
        and math.isclose(be, 0.1)
        and up_ok
        and down_ok
        and geometric_ok
    )
    report(
        "C7 schedule shape",
        ok,
        f"lr {lr0:g}->{lrp:g}@{peak}/{total}->{lre:g}, beta1 {b0}->{bp}->{be}, "
        f"monotone phases, geometric finder grid",
    )


# -- criteria 8 + 9: end-to-end desk-scale run --------------------------------

E2E_SEED = 42
# peak lr from the range test's steep region; conventional Adam momentum
# (the cycled 0.01-0.1 band destabilizes this loss surface)
E2E_FLAGS = [
    "--epochs", "3",
    "--batch-size", "128",
    "--d-eff", "64",
    "--heads", "4",
    "--ff-dim", "128",
    "--lr-max", "3e-3",
]
E2E_CONFIG = "train.cycle_momentum=false\n"


def _pipeline(root: Path, threads: str) -> dict:
    """gen-data + train + eval with a fixed seed under a worker cap."""
    import os

    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "run.cfg"
    cfg.write_text(E2E_CONFIG)
    data = str(root / "dataset.csv")
    out = str(root)
    old = os.environ.get("HELIOS_THREADS")
    os.environ["HELIOS_THREADS"] = threads
    try:
        base = ["--config", str(cfg), "--seed", str(E2E_SEED), "--data", data, "--out", out]
        assert main(["gen-data", "--locations", "5", "--years", "1", *base]) == 0
        assert main(["train", *base, *E2E_FLAGS]) == 0
        assert main(["eval", *base]) == 0
    finally:
        if old is None:
            del os.environ["HELIOS_THREADS"]
        else:
            os.environ["HELIOS_THREADS"] = old
    return {
        "dataset": (root / "dataset.csv").read_bytes(),
        "checkpoint": (root / "checkpoint.bin").read_bytes(),
        "metrics": (root / "metrics.jsonl").read_bytes(),
        "report": json.loads((root / "report.json").read_text()),
    }


@pytest.fixture(scope="module")
def e2e_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("e2e")
    start = time.time()
    first = _pipeline(base / "run1", threads="1")
    first_elapsed = time.time() - start
    repeat = _pipeline(base / "run2", threads="1")
    threaded = _pipeline(base / "run3", threads="4")
    return {"first": first, "repeat": repeat, "threaded": threaded, "elapsed": first_elapsed}


def test_c08_end_to_end_quality(e2e_runs):
    rep = e2e_runs["first"]["report"]
    elapsed = e2e_runs["elapsed"]
    ok = (
        rep["map_error_pct"] <= 5.0
        and rep["avg_efficiency_pct"] >= 97.0
        and rep["map_error_pct"] < rep["baseline_map_pct"]
        and elapsed <= 1800.0
    )
    report(
        "C8 end-to-end",
        ok,
        f"MAP {rep['map_error_pct']:.2f}% (<=5), avg eff {rep['avg_efficiency_pct']:.2f}% (>=97), "
        f"baseline {rep['baseline_map_pct']:.2f}% (model beats it), {elapsed:.0f}s (<=1800s)",
    )


def test_c09_determinism(e2e_runs):
    a, b, c = e2e_runs["first"], e2e_runs["repeat"], e2e_runs["threaded"]
    same_repeat = all(a[k] == b[k] for k in ("dataset", "checkpoint", "metrics"))
    same_threads = all(a[k] == c[k] for k in ("dataset", "checkpoint", "metrics"))
    ok = same_repeat and same_threads
    report(
        "C9 determinism",
        ok,
        f"same-seed repeat bit-identical={same_repeat}, HELIOS_THREADS 1 vs 4 identical={same_threads}",
    )


# -- criterion 10: overfit sanity ---------------------------------------------


def test_c10_overfit_single_batch():
    from helios.trainer import AdamState, _train_step

    cfg = ModelConfig(d_eff=16, n_heads=4, ff_dim=32, n_blocks=2, dropout_prob=0.0, t_window=6)
    model = init_model(cfg, RngStream(10))
    batch = make_batch(8, 6, seed=11)
    tc = TrainConfig(seed=0)
    adam = AdamState.fresh(model.params)
    drng = RngStream(0, 11)
    first = last = None
    for k in range(500):
        last = _train_step(model, batch, drng, 1e-3, 0.9, tc, adam, k)
        if first is None:
            first = last
    ratio = first / last
    ok = ratio >= 100.0
    report("C10 overfit sanity", ok, f"single-batch loss {first:.3f} -> {last:.5f} ({ratio:.0f}x >= 100x)")


# -- criterion 11: sweep harness ----------------------------------------------


def test_c11_sweep_small(tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--axis", "d_eff", "--small", "--seed", "3", "--out", str(out)])
    table = (out / "sweep_d_eff.csv").read_text().splitlines()
    header = table[0].split(",")
    rows = [line.split(",") for line in table[1:]]
    d_adj_col = [int(r[header.index("d_adj")]) for r in rows]
    ok = (
        code == 0
        and header == ["d_eff", "d_adj", "map_pct", "avg_eff_pct"]
        and [int(r[0]) for r in rows] == [32, 64, 128, 256, 512]
        and d_adj_col == [68, 100, 164, 292, 548]
        and all(float(r[2]) >= 0.0 and 0.0 <= float(r[3]) <= 100.0 for r in rows)
    )
    report("C11 sweep harness", ok, f"5 rows, d_adj column {d_adj_col}")
