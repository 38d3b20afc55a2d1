import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import eol_scan

from battrul.dataset import FadeModel, concat, synthesize_fade_series
from battrul.features import (
    SplitSpec,
    apply_normalizer,
    build_supervised_set,
    compute_eol_cycle,
    compute_rul,
    compute_soh,
    decode_targets,
    fit_normalizer,
    holdout_indices,
    kfold_indices,
    kfold_split,
    split_holdout,
)


def test_soh_examples():
    assert compute_soh(2.0, 2.0) == 1.0
    assert compute_soh(1.856487421, 2.0) == pytest.approx(0.9282437105, abs=1e-15)
    assert compute_soh(1.4, 2.0) == pytest.approx(0.7, abs=1e-15)


def test_soh_rejects_bad_rating():
    with pytest.raises(ValueError):
        compute_soh(1.0, 0.0)


def _linear_series(rate, n=300, c0=2.0):
    ds = synthesize_fade_series(FadeModel(c0, rate, 0.0, "linear", 0), n)
    return [(r.cycle, r.capacity_ah) for r in ds.records]


def test_eol_crossing_is_strict():
    # c0=2.0, rate=0.0025: C(120) = 1.4 exactly is not below 1.4, C(121) is
    series = _linear_series(0.0025)
    caps = dict(series)
    assert not caps[120] < 1.4 and caps[121] < 1.4
    assert compute_eol_cycle(series, 2.0, 0.7) == 121


def test_eol_rate_0005_matches_scan():
    series = _linear_series(0.005)
    cycles, caps = zip(*series)
    assert compute_eol_cycle(series, 2.0, 0.7) == eol_scan(caps, cycles, 1.4) == 61


@pytest.mark.parametrize("seed", range(8))
def test_eol_equals_brute_force_on_noisy_series(seed):
    rng = np.random.default_rng(seed)
    model = FadeModel(2.0, float(rng.uniform(0.001, 0.01)), float(rng.uniform(0, 0.05)),
                      ["linear", "exponential"][seed % 2], seed)
    ds = synthesize_fade_series(model, 250)
    caps = [r.capacity_ah for r in ds.records]
    cycles = [r.cycle for r in ds.records]
    thr = float(rng.uniform(0.6, 0.9))
    assert compute_eol_cycle(list(zip(cycles, caps)), 2.0, thr) == eol_scan(caps, cycles, thr * 2.0)


def test_eol_never_crossed_and_first_sample():
    assert compute_eol_cycle([(0, 2.0), (1, 1.9)], 2.0, 0.7) is None
    assert compute_eol_cycle([(3, 1.0), (4, 0.9)], 2.0, 0.7) == 3
    with pytest.raises(ValueError):
        compute_eol_cycle([], 2.0, 0.7)


def test_rul_examples():
    assert compute_rul(100, 100) == 0
    assert compute_rul(20, 121) == 101
    assert compute_rul(130, 121) == 0


@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(0, 10_000))
def test_rul_monotone_non_increasing(a, b, eol):
    lo, hi = sorted((a, b))
    assert compute_rul(lo, eol) >= compute_rul(hi, eol) >= 0


def test_fit_normalizer_examples():
    n = fit_normalizer(np.array([[1.0], [2.0], [3.0]]))
    assert n.mins.tolist() == [1.0] and n.maxes.tolist() == [3.0]
    n = fit_normalizer(np.array([[5.0], [5.0]]))
    assert n.mins.tolist() == n.maxes.tolist() == [5.0]
    n = fit_normalizer(np.array([[0.0, 10.0], [4.0, 30.0]]))
    assert n.mins.tolist() == [0.0, 10.0] and n.maxes.tolist() == [4.0, 30.0]


def test_apply_normalizer_examples():
    n = fit_normalizer(np.array([[1.0], [2.0], [3.0]]))
    assert apply_normalizer(n, np.array([[1.0], [2.0], [3.0]])).ravel().tolist() == [0.0, 0.5, 1.0]
    assert apply_normalizer(n, np.array([[4.0]])).item() == 1.0
    const = fit_normalizer(np.array([[5.0], [5.0]]))
    assert apply_normalizer(const, np.array([[5.0], [7.0]])).ravel().tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        apply_normalizer(n, np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), min_size=2, max_size=20))
def test_normalizer_inverse_round_trip(rows):
    X = np.array(rows)
    n = fit_normalizer(X)
    back = n.inverse(apply_normalizer(n, X))
    ok = n.maxes > n.mins
    np.testing.assert_allclose(back[:, ok], X[:, ok], rtol=1e-9, atol=1e-9 * np.abs(X).max())


def test_supervised_set_on_excerpt(excerpt):
    s = build_supervised_set(excerpt, 2.0)
    assert s.features.shape == (24, 5) and s.targets.shape == (24, 3)
    assert s.features.min() >= 0 and s.features.max() <= 1
    assert [m[0] for m in s.meta] == [r.battery_id for r in excerpt.records]
    # no excerpt battery reaches 1.4 Ah: RUL falls back to the last cycle
    assert s.eol_censored.all()
    assert s.rul_cycles.tolist() == [5, 4, 3, 2, 1, 0] * 4


def test_supervised_targets_formula(excerpt):
    s = build_supervised_set(excerpt, 2.0)
    cap = excerpt.column("capacity_ah")
    np.testing.assert_allclose(s.targets[:, 1], cap / 2.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(s.targets[:, 0], np.clip(cap / 2.0, 0, 1.2) / 1.2, rtol=0, atol=1e-15)
    assert s.targets[:, 2].max() == 1.0


def test_rul_norm_affine_decreasing():
    ds = synthesize_fade_series(FadeModel(2.0, 0.002, 0.0, "linear", 0), 100)
    s = build_supervised_set(ds, 2.0, 0.9)          # EOL at cycle 51
    assert not s.eol_censored.any()
    before = s.cycles < 51
    d = np.diff(s.targets[before, 2])
    np.testing.assert_allclose(d, d[0], atol=1e-12)
    assert d[0] < 0
    assert np.all(s.targets[~before, 2] == 0)


def test_non_crossing_battery_is_flagged_not_an_error():
    ds = synthesize_fade_series(FadeModel(2.0, 0.0001, 0.0, "linear", 0), 30)
    s = build_supervised_set(ds)
    assert s.eol_censored.all() and s.rul_cycles[0] == 29


def test_capacity_overshoot_decodes_to_24_ah():
    labels = {"rated_capacity_ah": 2.0, "capacity_overshoot_factor": 1.2, "rul_denominator": 10.0}
    assert decode_targets(np.array([[1.0, 0.5, 0.5]]), labels)[0].tolist() == pytest.approx([2.4, 0.5, 5.0])


def test_holdout_examples():
    tr, te = holdout_indices(10, 0.2, 0)
    assert (len(tr), len(te)) == (8, 2)
    tr, te = holdout_indices(24, 0.25, 0)
    assert (len(tr), len(te)) == (18, 6)
    a, b = holdout_indices(24, 0.25, 7), holdout_indices(24, 0.25, 7)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    with pytest.raises(ValueError):
        holdout_indices(3, 0.1, 0)
    with pytest.raises(ValueError):
        holdout_indices(10, 1.0, 0)


def test_split_holdout_fits_on_train_only(synthetic_set):
    train, test = split_holdout(synthetic_set, 0.2, 4)
    assert train.normalizer.mins.tolist() == train.raw_features.min(axis=0).tolist()
    assert train.features.min() == 0.0 and train.features.max() == 1.0
    assert test.normalizer == train.normalizer
    assert len(train) + len(test) == len(synthetic_set)


def test_kfold_examples():
    assert [len(v) for _, v in kfold_indices(10, 5, 0)] == [2] * 5
    assert [len(v) for _, v in kfold_indices(11, 5, 0)] == [3, 2, 2, 2, 2]
    with pytest.raises(ValueError):
        kfold_indices(4, 5, 0)
    with pytest.raises(ValueError):
        kfold_indices(4, 1, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60).flatmap(lambda n: st.tuples(st.just(n), st.integers(2, n))), st.integers(0, 2**32))
def test_kfold_partition_property(nk, seed):
    n, k = nk
    folds = kfold_indices(n, k, seed)
    vals = np.concatenate([v for _, v in folds])
    assert sorted(vals.tolist()) == list(range(n))
    sizes = [len(v) for _, v in folds]
    assert max(sizes) - min(sizes) <= 1
    for tr, va in folds:
        assert not set(tr) & set(va) and len(tr) + len(va) == n


def test_kfold_split_refits(synthetic_set):
    for train, val in kfold_split(synthetic_set, 4, 1):
        assert train.normalizer == fit_normalizer(train.raw_features)
        assert train.rul_denominator == train.rul_cycles.max()


def test_leave_one_battery_out():
    ds = concat(*(synthesize_fade_series(FadeModel(seed=i), 20, f"S{i}") for i in range(3)))
    s = build_supervised_set(ds)
    pairs = SplitSpec("leave-one-battery-out").indices(s)
    assert len(pairs) == 3
    for i, (tr, va) in enumerate(pairs):
        assert {s.battery_ids[j] for j in va} == {f"S{i}"}
        assert f"S{i}" not in {s.battery_ids[j] for j in tr}
