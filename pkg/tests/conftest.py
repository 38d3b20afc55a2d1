import os
import sys
from pathlib import Path

import numpy as np
import pytest

from battrul.dataset import FadeModel, read_battery_csv, synthesize_fade_series
from battrul.features import build_supervised_set, fit_normalizer, fit_rul_denominator

sys.path.insert(0, os.path.dirname(__file__))

DATA_DIR = Path(__file__).parent / "data"
EXCERPT_CSV = DATA_DIR / "nasa_excerpt.csv"


@pytest.fixture
def excerpt_path():
    return EXCERPT_CSV


@pytest.fixture
def excerpt():
    return read_battery_csv(EXCERPT_CSV)


def desk_fade_series(noise=0.01, seed=3, n_cycles=200):
    return synthesize_fade_series(FadeModel(2.0, 0.004, noise, "linear", seed), n_cycles, "SYN01")


def overfit_fixture():
    """16 rows spread over a 200-cycle low-noise fade series, scaled on themselves."""
    data = build_supervised_set(desk_fade_series())
    rows = data.subset(np.linspace(0, 199, 16).astype(int))
    return rows.rescaled(fit_normalizer(rows.raw_features), fit_rul_denominator(rows.rul_cycles))


@pytest.fixture
def synthetic_set():
    return build_supervised_set(desk_fade_series())


@pytest.fixture
def overfit_set():
    return overfit_fixture()
