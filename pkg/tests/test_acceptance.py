"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (``pytest tests/test_acceptance.py -v``) or directly with
``python tests/test_acceptance.py`` for the bare summary.
"""

import contextlib
import io
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from conftest import EXCERPT_CSV, desk_fade_series, overfit_fixture  # noqa: E402
from gradcheck import max_relative_error, random_case  # noqa: E402

from battrul.baselines import forest_fit, linreg_fit, tree_fit  # noqa: E402
from battrul.cli import main as cli_main  # noqa: E402
from battrul.dataset import CycleRecord, read_battery_csv  # noqa: E402
from battrul.estimators import NetRegressor  # noqa: E402
from battrul.evaluation import GridSpec, grid_search, score  # noqa: E402
from battrul.features import (  # noqa: E402
    SplitSpec,
    build_supervised_set,
    fit_on_train,
    holdout_indices,
    kfold_indices,
)
from battrul.net import (  # noqa: E402
    AdamState,
    NetworkSpec,
    TrainConfig,
    adam_step,
    init_network,
    layer_param_counts,
    make_spec,
    param_count,
    train,
)

_overfit_cache = {}


def _overfit_run(seed=0):
    """Default net with dropout 0, 5000 full-batch epochs on the 16-row fixture."""
    if seed not in _overfit_cache:
        s = overfit_fixture()
        _overfit_cache[seed] = train(init_network(make_spec(dropout=0.0, seed=3)), s.features, s.targets,
                                     TrainConfig(epochs=5000, batch_size=16, seed=seed))
    return _overfit_cache[seed]


def check_param_count():
    spec = NetworkSpec(5, ((10, "relu"), (7, "relu"), (3, "identity")))
    counts = layer_param_counts(spec)
    return param_count(spec) == 161 and counts == [60, 77, 24], f"total {param_count(spec)}, per layer {counts}"


def check_gradients():
    kinds = ("tanh", "sigmoid", "relu", "identity")
    t0 = time.perf_counter()
    worst = max(max_relative_error(*random_case(kinds[i % 4], 1000 + i)) for i in range(25))
    elapsed = time.perf_counter() - t0
    return worst < 1e-4 and elapsed < 10, f"max rel err {worst:.2e} over 25 nets in {elapsed:.1f}s"


def check_adam():
    cfg = TrainConfig(learning_rate=0.01)
    w = [np.array([1.0])]
    state = AdamState.zeros_like(w)
    first = None
    hit = None
    for t in range(1, 2001):
        before = w[0][0]
        adam_step(w, [2 * w[0]], state, cfg)
        if t == 1:
            first = before - w[0][0]
        if abs(w[0][0]) < 1e-3:
            hit = t
            break
    ok = hit is not None and abs(first - 0.01) <= 0.01 * 0.01
    return ok, f"|w| < 1e-3 at step {hit}, first step {first:.10f}"


def check_overfit():
    net_a, hist_a = _overfit_run(0)
    s = overfit_fixture()
    again, hist_again = train(init_network(make_spec(dropout=0.0, seed=3)), s.features, s.targets,
                              TrainConfig(epochs=5000, batch_size=16, seed=0))
    mse = hist_a.train_loss[-1]
    same = again == net_a and hist_again.train_loss == hist_a.train_loss
    return mse < 1e-3 and same, f"train MSE {mse:.2e} after 5000 epochs, rerun identical: {same}"


def check_synthetic_end_to_end():
    t0 = time.perf_counter()
    data = build_supervised_set(desk_fade_series(noise=0.01, seed=3, n_cycles=200))
    tr, te = holdout_indices(len(data), 0.2, 0)
    train_set, test_set = fit_on_train(data, tr, te)
    # selection uses an inner split of the training side; the 20% holdout only scores the winner
    grid = GridSpec(activations=("relu", "tanh"), learning_rates=(0.01, 0.003), epochs=(300,),
                    dropouts=(0.0, 0.2))
    report = grid_search(grid, train_set, SplitSpec("holdout", 0.2, seed=1))
    best = report.best
    est = NetRegressor(seed=best.seed, **best.config).fit(train_set)
    r2 = score(est, test_set).accuracy
    elapsed = time.perf_counter() - t0
    cfg = f"{best.config['activation']} lr={best.config['learning_rate']} dropout={best.config['dropout']}"
    return r2 >= 0.95 and elapsed < 120, f"holdout capacity r2 {r2:.4f} ({cfg}) in {elapsed:.1f}s"


def check_fixture():
    ds = read_battery_csv(EXCERPT_CSV)
    shape = {b: len(r) for b, r in ds.groups().items()}
    expected = CycleRecord(0, 3690.234, 3.277169977, -0.006528351, 34.23085284, 1.856487421, "B0005")
    ok = len(shape) == 4 and set(shape.values()) == {6} and ds.records[0] == expected
    return ok, f"{len(shape)} batteries x {sorted(set(shape.values()))} cycles, first row exact: {ds.records[0] == expected}"


def check_baselines():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    X = rng.random((50, 5))
    B, c = rng.normal(size=(3, 5)), rng.normal(size=3)
    Y = X @ B.T + c
    ols_resid = float(np.abs(linreg_fit(X, Y).predict(X) - Y).max())
    Yr = rng.random((50, 3))
    tree_err = float(np.abs(tree_fit(X, Yr, max_depth=None, min_samples_leaf=1).predict(X) - Yr).max())
    forest = forest_fit(X, Yr, n_trees=10, seed=2)
    gap = float(np.abs(forest.predict(X) - forest.member_predictions(X).mean(axis=0)).max())
    elapsed = time.perf_counter() - t0
    ok = ols_resid < 1e-8 and tree_err == 0.0 and gap <= 1e-12 and elapsed < 5
    return ok, f"OLS residual {ols_resid:.1e}, tree train error {tree_err}, forest-mean gap {gap:.1e}"


def check_cross_validation():
    data = build_supervised_set(desk_fade_series())
    folds = kfold_indices(len(data), 5, 7)
    vals = np.concatenate([v for _, v in folds])
    partition = sorted(vals.tolist()) == list(range(len(data)))
    sizes = [len(v) for _, v in folds]
    balanced = max(sizes) - min(sizes) <= 1
    leak_free = True
    for tr, va in folds:
        clean, _ = fit_on_train(data, tr, va)
        raw = data.raw_features.copy()
        raw[va] = 1e9 * (1 + np.arange(raw.shape[1]))
        corrupted = data.subset(np.arange(len(data)))
        corrupted.raw_features = raw
        dirty, _ = fit_on_train(corrupted, tr, va)
        leak_free &= dirty.normalizer == clean.normalizer
    return partition and balanced and leak_free, f"partition {partition}, sizes {sizes}, normalizer unchanged {leak_free}"


def _cli_outputs(workdir):
    d = Path(workdir)
    data = d / "syn.csv"
    steps = [
        ["synth", "--n-cycles", "80", "--noise", "0.01", "--seed", "4", "--out", str(data)],
        ["train", "--data", str(data), "--epochs", "20", "--seed", "6", "--out", str(d / "m.json"),
         "--curves", str(d / "curves.csv")],
        ["grid", "--data", str(data), "--lrs", "0.01,0.003", "--epochs-list", "10", "--seed", "2",
         "--out", str(d / "grid.json")],
        ["predict", "--model", str(d / "m.json"), "--data", str(data), "--out", str(d / "pred.csv")],
    ]
    for argv in steps:
        with contextlib.redirect_stdout(io.StringIO()):
            code = cli_main(argv)
        if code != 0:
            raise RuntimeError(f"command failed: {argv[0]}")
    return {name: (d / name).read_bytes() for name in ("syn.csv", "m.json", "curves.csv", "grid.json", "pred.csv")}


def check_determinism():
    # both runs share one data path so the flags recorded inside the model file match
    with tempfile.TemporaryDirectory() as a:
        first = _cli_outputs(a)
        second = _cli_outputs(a)
    diff = [k for k in first if first[k] != second[k]]
    return not diff, "byte-identical: " + ", ".join(sorted(first)) if not diff else f"differs: {diff}"


def check_curves():
    with tempfile.TemporaryDirectory() as d:
        data, curves = Path(d) / "syn.csv", Path(d) / "curves.csv"
        with contextlib.redirect_stdout(io.StringIO()):
            cli_main(["synth", "--noise", "0.01", "--out", str(data)])
            code = cli_main(["train", "--data", str(data), "--epochs", "200", "--out", str(Path(d) / "m.json"),
                             "--curves", str(curves)])
        lines = curves.read_text().splitlines() if code == 0 else []
    rows = [line.split(",") for line in lines[1:]]
    epochs = [int(r[0]) for r in rows]
    finite = all(math.isfinite(float(v)) for r in rows for v in r[1:])
    structural = code == 0 and len(rows) == 200 and epochs == list(range(1, 201)) and finite
    loss = np.array(_overfit_run(0)[1].train_loss)
    smooth = np.convolve(loss, np.ones(50) / 50, mode="valid")
    rises = int(np.sum(np.diff(smooth) > 0))
    return structural and rises == 0, f"{len(rows)} rows, epochs monotone, finite {finite}, smoothed loss rises {rises}"


CRITERIA = [
    (1, "parameter count 161 (60/77/24)", check_param_count),
    (2, "gradients vs central differences", check_gradients),
    (3, "Adam on w^2", check_adam),
    (4, "overfit 16-row fixture", check_overfit),
    (5, "synthetic end-to-end r2 >= 0.95", check_synthetic_end_to_end),
    (6, "bundled fixture fidelity", check_fixture),
    (7, "baseline oracles", check_baselines),
    (8, "cross-validation properties", check_cross_validation),
    (9, "CLI determinism", check_determinism),
    (10, "curve emission", check_curves),
]


def _line(number, title, ok, detail):
    return f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}: {detail}"


@pytest.mark.parametrize("number,title,check", CRITERIA, ids=[f"criterion_{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(number, title, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print("\n" + _line(number, title, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failures = 0
    for number, title, check in CRITERIA:
        ok, detail = check()
        failures += not ok
        print(_line(number, title, ok, detail))
    sys.exit(1 if failures else 0)
