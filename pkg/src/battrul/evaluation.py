"""Metrics, cross-validation, grid search and model comparison.

"Accuracy" throughout is an alias for the coefficient of determination (r2)
of the capacity head, the first target column. It is reported next to the
full per-head MAE / MSE / RMSE / r2 table.
"""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from battrul.errors import DivergedError
from battrul.estimators import NetRegressor
from battrul.features import TARGET_NAMES, SplitSpec, SupervisedSet, fit_on_train
from battrul.seeding import derive_seed

# published Keras figures, for side-by-side display only; never computed here
EXTERNAL_REFERENCE_ACCURACY = {"Functional (Keras API)": 0.95, "Sequential (Keras API)": 0.985}


@dataclass
class Metrics:
    heads: tuple
    mae: list
    mse: list
    rmse: list
    r2: list          # None per head when undefined (fewer than two rows)
    n: int

    @property
    def accuracy(self):
        return self.r2[0]

    def to_dict(self) -> dict:
        per_head = {h: {"mae": self.mae[i], "mse": self.mse[i], "rmse": self.rmse[i], "r2": self.r2[i]}
                    for i, h in enumerate(self.heads)}
        return {"n": self.n, "accuracy": self.accuracy, "heads": per_head}


def r2_score(pred, target):
    ss_res = float(np.sum((target - pred) ** 2))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else 0.0
    return 1.0 - ss_res / ss_tot


def compute_metrics(pred, target, heads: Sequence[str] | None = None) -> Metrics:
    P = np.asarray(pred, dtype=np.float64)
    T = np.asarray(target, dtype=np.float64)
    if P.shape != T.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {T.shape}")
    if P.ndim == 1:
        P, T = P[:, None], T[:, None]
    d = P.shape[1]
    heads = tuple(heads) if heads is not None else (TARGET_NAMES if d == 3 else tuple(f"y{i}" for i in range(d)))
    err = P - T
    mse = [float(np.mean(err[:, j] ** 2)) for j in range(d)]
    return Metrics(
        heads=heads,
        mae=[float(np.mean(np.abs(err[:, j]))) for j in range(d)],
        mse=mse,
        rmse=[math.sqrt(m) for m in mse],
        r2=[r2_score(P[:, j], T[:, j]) if P.shape[0] >= 2 else None for j in range(d)],
        n=P.shape[0],
    )


def score(estimator, data: SupervisedSet) -> Metrics:
    return compute_metrics(estimator.predict(data.features), data.targets)


class FoldError(RuntimeError):
    def __init__(self, fold, cause):
        self.fold = fold
        super().__init__(f"fold {fold}: {cause}")


def _summary(metrics: list[Metrics]) -> dict:
    out = {}
    heads = metrics[0].heads
    for name in ("mae", "mse", "rmse", "r2"):
        out[name] = {}
        for j, h in enumerate(heads):
            vals = [getattr(m, name)[j] for m in metrics if getattr(m, name)[j] is not None]
            if not vals:
                out[name][h] = None
                continue
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            out[name][h] = {"mean": float(np.mean(vals)), "std": std}
    acc = [m.accuracy for m in metrics if m.accuracy is not None]
    out["accuracy"] = ({"mean": float(np.mean(acc)), "std": float(np.std(acc, ddof=1)) if len(acc) > 1 else 0.0}
                       if acc else None)
    return out


@dataclass
class CVResult:
    folds: list
    summary: dict
    indices: list
    normalizers: list
    rul_denominators: list

    def to_dict(self):
        return {"folds": [m.to_dict() for m in self.folds], "summary": self.summary}


def cross_validate(factory: Callable[[int], object], data: SupervisedSet, k: int, seed: int,
                   split: SplitSpec | None = None) -> CVResult:
    """k-fold CV; each fold refits scaling statistics on its training side and trains ``factory(fold_seed)``."""
    split = split or SplitSpec("kfold", k=k, seed=seed)
    indices = split.indices(data)
    folds, norms, dens = [], [], []
    for i, (tr, va) in enumerate(indices):
        try:
            train, val = fit_on_train(data, tr, va)
            est = factory(derive_seed(seed, i)).fit(train)
            folds.append(score(est, val))
        except Exception as exc:
            raise FoldError(i, exc) from exc
        norms.append(train.normalizer)
        dens.append(train.rul_denominator)
    return CVResult(folds, _summary(folds), indices, norms, dens)


@dataclass(frozen=True)
class GridSpec:
    layer_configs: tuple = ((10, 7, 3),)
    activations: tuple = ("relu",)
    learning_rates: tuple = (0.001,)
    batch_sizes: tuple = (32,)
    epochs: tuple = (200,)
    dropouts: tuple = (0.2,)
    base_seed: int = 0

    AXES = ("layer_configs", "activations", "learning_rates", "batch_sizes", "epochs", "dropouts")

    def __post_init__(self):
        for axis in self.AXES:
            if len(getattr(self, axis)) == 0:
                raise ValueError(f"grid axis {axis!r} is empty")

    def __len__(self):
        return math.prod(len(getattr(self, a)) for a in self.AXES)

    def combinations(self) -> list[dict]:
        out = []
        for units, act, lr, bs, ep, dr in itertools.product(*(getattr(self, a) for a in self.AXES)):
            out.append({"units": tuple(units), "activation": act, "learning_rate": lr,
                        "batch_size": bs, "epochs": ep, "dropout": dr})
        return out


@dataclass
class ReportRow:
    index: int
    name: str
    config: dict
    seed: int
    train: Metrics | None = None
    validation: Metrics | None = None
    cv: dict | None = None
    history: object = None
    diverged: bool = False
    error: str | None = None
    wall_time_s: float = 0.0
    split: object = field(default=None, repr=False)

    @property
    def accuracy(self):
        if self.validation is not None:
            return self.validation.accuracy
        if self.cv is not None and self.cv.get("accuracy"):
            return self.cv["accuracy"]["mean"]
        return None

    @property
    def val_mae(self):
        if self.validation is not None:
            return float(np.mean(self.validation.mae))
        if self.cv is not None:
            return float(np.mean([v["mean"] for v in self.cv["mae"].values() if v]))
        return math.inf

    def rank_key(self):
        acc = self.accuracy
        bad = self.diverged or self.error is not None
        acc_key = -acc if acc is not None and math.isfinite(acc) else math.inf
        mae = self.val_mae if math.isfinite(self.val_mae) else math.inf
        return (bad, acc_key, mae, self.index)

    def to_dict(self, with_history=False) -> dict:
        d = {"index": self.index, "name": self.name, "config": _jsonable(self.config), "seed": str(self.seed),
             "diverged": self.diverged, "error": self.error, "accuracy": self.accuracy,
             "train": self.train.to_dict() if self.train else None,
             "validation": self.validation.to_dict() if self.validation else None}
        if self.cv is not None:
            d["cv"] = self.cv
        if with_history and self.history is not None:
            d["history"] = {"train_loss": self.history.train_loss, "train_mae": self.history.train_mae,
                            "val_loss": self.history.val_loss, "val_mae": self.history.val_mae}
        return d


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class EvalReport:
    kind: str
    rows: list
    split: object = None
    best: ReportRow | None = None

    def ranked(self) -> list:
        return sorted(self.rows, key=ReportRow.rank_key)

    def timings(self) -> dict:
        return {str(r.index): r.wall_time_s for r in self.rows}

    def to_dict(self, with_history=False) -> dict:
        return {
            "report_kind": self.kind,
            "accuracy_definition": "r2 of the capacity head (capacity_norm)",
            "best_index": self.best.index if self.best is not None else None,
            "rows": [r.to_dict(with_history) for r in self.ranked()],
            "external_reference_accuracy": EXTERNAL_REFERENCE_ACCURACY,
        }


def _fit_and_score(estimator, train: SupervisedSet, val: SupervisedSet):
    estimator.fit(train, val)
    return score(estimator, train), score(estimator, val), getattr(estimator, "history", None)


def _run_combination(args):
    index, combo, seed, data, split, use_cv = args
    est_factory = lambda s: NetRegressor(seed=s, **combo)  # noqa: E731
    row = ReportRow(index, f"net[{index}]", dict(combo), seed)
    t0 = time.perf_counter()
    try:
        with np.errstate(all="ignore"):
            if use_cv:
                row.cv = cross_validate(est_factory, data, split.k, seed, split=split).summary
            else:
                tr, va = split.indices(data)[0]
                train, val = fit_on_train(data, tr, va)
                row.train, row.validation, row.history = _fit_and_score(est_factory(seed), train, val)
    except (DivergedError, FoldError) as exc:
        if isinstance(exc, DivergedError) or isinstance(exc.__cause__, DivergedError):
            row.diverged = True
            row.error = str(exc)
        else:
            raise
    row.wall_time_s = time.perf_counter() - t0
    return row


def grid_search(grid: GridSpec, data: SupervisedSet, split: SplitSpec | None = None,
                use_cv: bool = False, workers: int = 1) -> EvalReport:
    """Train every grid combination and rank by validation accuracy.

    Combination ``i`` trains with seed ``derive_seed(grid.base_seed, i)``.
    Order: non-diverged first, accuracy descending, validation MAE (mean over
    heads) ascending, combination index ascending. Diverged runs stay in
    the report with ``diverged`` set.
    """
    split = split or SplitSpec("holdout", 0.2, seed=grid.base_seed)
    args = [(i, c, derive_seed(grid.base_seed, i), data, split, use_cv) for i, c in enumerate(grid.combinations())]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_combination, args))
    else:
        rows = [_run_combination(a) for a in args]
    rows.sort(key=lambda r: r.index)
    report = EvalReport("grid", rows, split)
    report.best = report.ranked()[0]
    return report


def compare_models(data: SupervisedSet, split: SplitSpec, configs: Sequence[tuple[str, Callable[[int], object]]],
                   seed: int = 0) -> EvalReport:
    """Score every ``(name, factory)`` on one shared train/test split.

    All rows reference the same ``(train_idx, test_idx)`` tuple. A model that
    fails is recorded with its error and the remaining rows still run.
    """
    if not configs:
        raise ValueError("no models to compare")
    if split.kind != "holdout":
        raise ValueError("compare_models uses a single holdout split")
    shared = split.indices(data)[0]
    train, test = fit_on_train(data, *shared)
    rows = []
    for i, (name, factory) in enumerate(configs):
        s = derive_seed(seed, i)
        row = ReportRow(i, name, {}, s, split=shared)
        t0 = time.perf_counter()
        try:
            est = factory(s)
            row.config = est.config()
            row.train, row.validation, row.history = _fit_and_score(est, train, test)
        except DivergedError as exc:
            row.diverged, row.error = True, str(exc)
        except Exception as exc:   # one broken model must not sink the table
            row.error = f"{type(exc).__name__}: {exc}"
        row.wall_time_s = time.perf_counter() - t0
        rows.append(row)
    report = EvalReport("comparison", rows, shared)
    report.best = report.ranked()[0]
    return report


def accuracy_table(report: EvalReport) -> str:
    """Plain-text accuracy table: computed rows, then the external reference figures."""
    lines = [f"{'model':<28}{'accuracy':>10}{'val_mae':>10}"]
    for r in report.ranked():
        acc = "diverged" if r.diverged else ("error" if r.error else f"{r.accuracy:.4f}")
        mae = "" if r.diverged or r.error else f"{r.val_mae:.4f}"
        lines.append(f"{r.name:<28}{acc:>10}{mae:>10}")
    for name, acc in EXTERNAL_REFERENCE_ACCURACY.items():
        lines.append(f"{name + ' (external)':<28}{acc:>10.3f}{'':>10}")
    return "\n".join(lines)
