"""Feature matrices and SOH / RUL labels derived from capacity fade.

Inputs are five min-max scaled columns (cycle, time, voltage, current,
temperature). Targets are three columns:

* ``capacity_norm`` = clip(capacity / rated, 0, 1.2) / 1.2
* ``soh``           = capacity / rated
* ``rul_norm``      = clip(rul / rul_denominator, 0, 1), the denominator being
  the largest RUL among training rows

Scaling statistics are always fitted on training rows only; ``split_holdout``
and ``kfold_split`` refit them per split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from battrul.dataset import BatteryDataset

FEATURE_NAMES = ("cycle", "time_s", "voltage_v", "current_a", "temp_c")
TARGET_NAMES = ("capacity_norm", "soh", "rul_norm")
DEFAULT_RATED_CAPACITY_AH = 2.0
DEFAULT_EOL_THRESHOLD = 0.7
CAPACITY_OVERSHOOT = 1.2


def compute_soh(capacity_ah, rated_capacity_ah):
    if not rated_capacity_ah > 0:
        raise ValueError(f"rated capacity must be > 0, got {rated_capacity_ah}")
    return capacity_ah / rated_capacity_ah


def compute_eol_cycle(series: Sequence[tuple[int, float]], rated_capacity_ah: float,
                      eol_threshold: float = DEFAULT_EOL_THRESHOLD) -> int | None:
    """First cycle whose capacity is strictly below ``eol_threshold * rated``, or None."""
    if len(series) == 0:
        raise ValueError("empty capacity series")
    limit = eol_threshold * rated_capacity_ah
    for cycle, cap in series:
        if cap < limit:
            return int(cycle)
    return None


def compute_rul(current_cycle: int, eol_cycle: int) -> int:
    # past EOL clamps to zero remaining life
    return max(int(eol_cycle) - int(current_cycle), 0)


@dataclass(frozen=True)
class Normalizer:
    mins: np.ndarray
    maxes: np.ndarray
    mode: str = "min-max"

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxes = np.asarray(self.maxes, dtype=np.float64)
        if mins.shape != maxes.shape or mins.ndim != 1:
            raise ValueError("mins and maxes must be 1-d vectors of equal length")
        if np.any(mins > maxes):
            raise ValueError("normalizer requires min <= max per column")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxes", maxes)

    @property
    def width(self) -> int:
        return self.mins.shape[0]

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=np.float64) * (self.maxes - self.mins) + self.mins

    def __eq__(self, other):
        if not isinstance(other, Normalizer):
            return NotImplemented
        return (self.mode == other.mode and np.array_equal(self.mins, other.mins)
                and np.array_equal(self.maxes, other.maxes))

    __hash__ = None


def fit_normalizer(features: np.ndarray) -> Normalizer:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[0] < 1:
        raise ValueError("cannot fit a normalizer on zero rows")
    return Normalizer(X.min(axis=0), X.max(axis=0))


def apply_normalizer(norm: Normalizer, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != norm.width:
        raise ValueError(f"expected {norm.width} feature columns, got shape {X.shape}")
    span = norm.maxes - norm.mins
    degenerate = span == 0
    scaled = (X - norm.mins) / np.where(degenerate, 1.0, span)
    scaled[:, degenerate] = 0.0
    return np.clip(scaled, 0.0, 1.0)


@dataclass
class SupervisedSet:
    raw_features: np.ndarray          # n x 5, unscaled
    capacity_ah: np.ndarray
    rul_cycles: np.ndarray
    battery_ids: list[str]
    cycles: np.ndarray
    eol_censored: np.ndarray          # True where the battery never crossed EOL
    rated_capacity_ah: float
    eol_threshold: float
    normalizer: Normalizer
    rul_denominator: float
    capacity_overshoot: float = CAPACITY_OVERSHOOT
    features: np.ndarray = field(init=False)
    targets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.features = apply_normalizer(self.normalizer, self.raw_features)
        self.targets = make_targets(self.capacity_ah, self.rul_cycles, self.rated_capacity_ah,
                                    self.rul_denominator, self.capacity_overshoot)

    def __len__(self):
        return self.raw_features.shape[0]

    @property
    def meta(self) -> list[tuple[str, int]]:
        return list(zip(self.battery_ids, self.cycles.tolist()))

    def subset(self, idx) -> "SupervisedSet":
        """Rows ``idx`` with the current scaling statistics kept."""
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            raw_features=self.raw_features[idx],
            capacity_ah=self.capacity_ah[idx],
            rul_cycles=self.rul_cycles[idx],
            battery_ids=[self.battery_ids[i] for i in idx],
            cycles=self.cycles[idx],
            eol_censored=self.eol_censored[idx],
        )

    def rescaled(self, normalizer: Normalizer, rul_denominator: float) -> "SupervisedSet":
        return replace(self, normalizer=normalizer, rul_denominator=rul_denominator)

    def label_constants(self) -> dict:
        return {
            "rated_capacity_ah": self.rated_capacity_ah,
            "eol_threshold": self.eol_threshold,
            "rul_denominator": self.rul_denominator,
            "capacity_overshoot_factor": self.capacity_overshoot,
        }


def make_targets(capacity_ah, rul_cycles, rated_capacity_ah, rul_denominator,
                 overshoot=CAPACITY_OVERSHOOT) -> np.ndarray:
    soh = np.asarray(capacity_ah, dtype=np.float64) / rated_capacity_ah
    cap_norm = np.clip(soh, 0.0, overshoot) / overshoot
    rul_norm = np.clip(np.asarray(rul_cycles, dtype=np.float64) / rul_denominator, 0.0, 1.0)
    return np.column_stack([cap_norm, soh, rul_norm])


def decode_targets(outputs: np.ndarray, labels: dict) -> np.ndarray:
    """Map network heads back to (capacity_ah, soh, rul_cycles)."""
    out = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    rated = labels["rated_capacity_ah"]
    cap = out[:, 0] * labels["capacity_overshoot_factor"] * rated
    return np.column_stack([cap, out[:, 1], out[:, 2] * labels["rul_denominator"]])


def fit_rul_denominator(rul_cycles) -> float:
    top = float(np.max(rul_cycles)) if len(rul_cycles) else 0.0
    return top if top > 0 else 1.0


def build_supervised_set(ds: BatteryDataset, rated_capacity_ah: float = DEFAULT_RATED_CAPACITY_AH,
                         eol_threshold: float = DEFAULT_EOL_THRESHOLD,
                         normalizer: Normalizer | None = None,
                         rul_denominator: float | None = None) -> SupervisedSet:
    """Label every record and scale its features.

    RUL counts cycles until the battery's first EOL crossing. A battery that
    never crosses is labelled against its last observed cycle and its rows are
    flagged in ``eol_censored``. Without an explicit ``normalizer`` or
    ``rul_denominator`` the statistics are fitted on all rows of ``ds``.
    """
    if len(ds) == 0:
        raise ValueError("cannot build a supervised set from an empty dataset")
    if not rated_capacity_ah > 0:
        raise ValueError(f"rated capacity must be > 0, got {rated_capacity_ah}")
    rul = []
    censored = []
    for bid, recs in ds.groups().items():
        eol = compute_eol_cycle([(r.cycle, r.capacity_ah) for r in recs], rated_capacity_ah, eol_threshold)
        flag = eol is None
        if flag:
            eol = recs[-1].cycle
        rul.extend(compute_rul(r.cycle, eol) for r in recs)
        censored.extend([flag] * len(recs))
    raw = np.column_stack([ds.column(name) for name in FEATURE_NAMES])
    rul = np.array(rul, dtype=np.int64)
    return SupervisedSet(
        raw_features=raw,
        capacity_ah=ds.column("capacity_ah"),
        rul_cycles=rul,
        battery_ids=[r.battery_id for r in ds.records],
        cycles=np.array([r.cycle for r in ds.records], dtype=np.int64),
        eol_censored=np.array(censored, dtype=bool),
        rated_capacity_ah=float(rated_capacity_ah),
        eol_threshold=float(eol_threshold),
        normalizer=normalizer if normalizer is not None else fit_normalizer(raw),
        rul_denominator=float(rul_denominator) if rul_denominator is not None else fit_rul_denominator(rul),
    )


def fit_on_train(data: SupervisedSet, train_idx, other_idx) -> tuple[SupervisedSet, SupervisedSet]:
    """Subset both sides and rescale them with statistics from the training rows alone."""
    train = data.subset(train_idx)
    norm = fit_normalizer(train.raw_features)
    den = fit_rul_denominator(train.rul_cycles)
    return train.rescaled(norm, den), data.subset(other_idx).rescaled(norm, den)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def holdout_indices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(math.floor(n * test_fraction + 0.5))
    if n_test == 0 or n_test == n:
        raise ValueError(f"test_fraction {test_fraction} on {n} rows leaves one side empty")
    perm = _rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def kfold_indices(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of rows ({n})")
    folds = np.array_split(_rng(seed).permutation(n), k)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(val)))
    return out


def battery_indices(battery_ids: Sequence[str]) -> list[tuple[np.ndarray, np.ndarray]]:
    ids = np.asarray(battery_ids)
    groups = list(dict.fromkeys(battery_ids))
    if len(groups) < 2:
        raise ValueError("leave-one-battery-out needs at least two batteries")
    return [(np.flatnonzero(ids != g), np.flatnonzero(ids == g)) for g in groups]


def split_holdout(data: SupervisedSet, test_fraction: float, seed: int) -> tuple[SupervisedSet, SupervisedSet]:
    if len(data) == 0:
        raise ValueError("cannot split an empty set")
    return fit_on_train(data, *holdout_indices(len(data), test_fraction, seed))


def kfold_split(data: SupervisedSet, k: int, seed: int) -> list[tuple[SupervisedSet, SupervisedSet]]:
    return [fit_on_train(data, tr, va) for tr, va in kfold_indices(len(data), k, seed)]


@dataclass(frozen=True)
class SplitSpec:
    kind: Literal["holdout", "kfold", "leave-one-battery-out"] = "holdout"
    test_fraction: float = 0.2
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind == "holdout" and not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.kind == "kfold" and self.k < 2:
            raise ValueError("k must be >= 2")
        if self.kind not in ("holdout", "kfold", "leave-one-battery-out"):
            raise ValueError(f"unknown split kind {self.kind!r}")

    def indices(self, data: SupervisedSet) -> list[tuple[np.ndarray, np.ndarray]]:
        if self.kind == "holdout":
            return [holdout_indices(len(data), self.test_fraction, self.seed)]
        if self.kind == "kfold":
            return kfold_indices(len(data), self.k, self.seed)
        return battery_indices(data.battery_ids)
