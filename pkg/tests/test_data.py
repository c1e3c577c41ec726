import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from citycond.backbones import Adjacency
from citycond.data import (CitySeries, SyntheticSpec, TrajectorySpec, build_windows, city_batches, gather,
                           generate_synthetic, generate_synthetic_trajectories, load_csv, read_ground_truth,
                           split_bounds, subsample_lowdata, window_count, write_adjacency, write_csv,
                           write_ground_truth, zscore_fit_transform)
from citycond.errors import ConfigError, ContractError, CsvParseError, DataError

from oracles import window_count_loop


def series(T, N=2, city=0, seed=0):
    return CitySeries(city, f"c{city}", np.random.default_rng(seed).standard_normal((T, N, 1)))


# ------------------------------------------------------------------ csv

def test_toy_csv_round_trip(tmp_path):
    p = tmp_path / "toy.csv"
    p.write_text("timestamp,a,b\n0,1.5,2\n1,3,4\n2,5,6.25\n")
    s = load_csv(p)
    assert s.values.shape == (3, 2, 1)
    assert s.node_ids == ("a", "b")
    assert np.array_equal(s.values[:, :, 0], [[1.5, 2], [3, 4], [5, 6.25]])


def test_missing_cell_forward_filled(tmp_path):
    p = tmp_path / "gap.csv"
    p.write_text("timestamp,a,b\n0,1,2\n1,,4\n2,5,NA\n")
    v = load_csv(p).values[:, :, 0]
    assert v[1, 0] == 1.0 and v[2, 1] == 4.0


def test_leading_missing_back_filled(tmp_path):
    p = tmp_path / "lead.csv"
    p.write_text("timestamp,a\n0,\n1,nan\n2,7\n")
    assert np.array_equal(load_csv(p).values[:, 0, 0], [7.0, 7.0, 7.0])


def test_ragged_row_reports_line(tmp_path):
    p = tmp_path / "ragged.csv"
    p.write_text("timestamp,a,b\n0,1,2\n1,3\n")
    with pytest.raises(CsvParseError) as err:
        load_csv(p)
    assert err.value.line == 3 and "line 3" in str(err.value)


def test_all_missing_column_names_node(tmp_path):
    p = tmp_path / "empty_col.csv"
    p.write_text("timestamp,a,ghost\n0,1,\n1,2,\n")
    with pytest.raises(DataError, match="ghost"):
        load_csv(p)


def test_non_numeric_cell(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("timestamp,a\n0,1,5\n")
    with pytest.raises(CsvParseError):
        load_csv(p)
    p.write_text("timestamp,a\n0,1;5\n")
    with pytest.raises(CsvParseError, match="line 2"):
        load_csv(p)


def test_comma_decimal_is_not_accepted(tmp_path):
    p = tmp_path / "locale.csv"
    p.write_text('timestamp,a\n0,"1,5"\n')
    with pytest.raises(CsvParseError):
        load_csv(p)


def test_synthetic_export_round_trips_bit_exactly(tmp_path):
    cities, truth = generate_synthetic(SyntheticSpec(num_cities=2, nodes=(4, 6), steps=300, seed=5))
    for c in cities:
        write_csv(c, tmp_path / f"{c.name}.csv")
        write_adjacency(c.adjacency, tmp_path / f"{c.name}.adj.csv")
        back = load_csv(tmp_path / f"{c.name}.csv", adjacency_path=tmp_path / f"{c.name}.adj.csv")
        assert np.array_equal(back.values, c.values)
        assert np.array_equal(back.adjacency.weights, c.adjacency.weights)
    write_ground_truth(truth, tmp_path / "truth.yaml")
    assert read_ground_truth(tmp_path / "truth.yaml") == truth


def test_trajectory_csv_round_trip(tmp_path):
    from citycond.data import CsvSchema
    scene = generate_synthetic_trajectories(TrajectorySpec(num_scenes=1, agents=3, steps=40, speed_range=((1, 2),),
                                                           turn_rate=(0.1,), left_turn_prob=(0.5,)))[0]
    write_csv(scene, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv", CsvSchema(mode="trajectory"))
    assert back.values.shape == (40, 3, 2) and np.array_equal(back.values, scene.values)


# ------------------------------------------------------------------ normalization

def test_constant_node_normalizes_to_zero():
    s = CitySeries(0, "flat", np.full((10, 1, 1), 4.2))
    z = zscore_fit_transform(s, (0, 7))
    assert np.all(z.values == 0.0) and z.std[0, 0] == 1e-6


def test_zscore_arithmetic():
    s = CitySeries(0, "x", np.array([0.0, 10.0, 0.0, 10.0])[:, None])
    z = zscore_fit_transform(s, (0, 4))
    assert z.mean[0, 0] == 5.0 and z.std[0, 0] == 5.0
    assert np.array_equal(z.values[:, 0, 0], [-1.0, 1.0, -1.0, 1.0])


def test_val_normalized_with_train_stats():
    rng = np.random.default_rng(1)
    raw = np.concatenate([rng.normal(0, 1, (70, 3, 1)), rng.normal(50, 9, (30, 3, 1))])
    s = CitySeries(0, "shift", raw)
    z = zscore_fit_transform(s, (0, 70))
    mu, sd = raw[:70].mean(axis=0), raw[:70].std(axis=0)
    assert np.max(np.abs(z.values[70:] - (raw[70:] - mu) / sd)) < 1e-12
    assert abs(z.values[70:].mean()) > 10  # val stats clearly differ


def test_empty_train_range_is_contract_error():
    with pytest.raises(ContractError):
        zscore_fit_transform(series(10), (3, 3))
    with pytest.raises(ContractError):
        zscore_fit_transform(zscore_fit_transform(series(10), (0, 5)), (0, 5))


@given(st.integers(0, 10_000), st.floats(-1e3, 1e3), st.floats(1e-3, 1e3))
def test_normalization_invertible(seed, loc, scale):
    raw = np.random.default_rng(seed).normal(loc, scale, (30, 4, 2))
    z = zscore_fit_transform(CitySeries(0, "p", raw), (0, 20))
    assert np.max(np.abs(z.raw_values() - raw)) <= 1e-9 * max(1.0, np.max(np.abs(raw)))
    assert np.all(z.std >= 1e-6)


def test_series_shape_contract():
    with pytest.raises(ContractError):
        CitySeries(0, "bad", np.zeros(5))
    with pytest.raises(ContractError):
        CitySeries(0, "bad", np.zeros((5, 3)), adjacency=Adjacency(np.zeros((2, 2))))


# ------------------------------------------------------------------ windows

def test_exactly_one_window_at_boundary():
    idx = build_windows(series(20), 12, 8, splits=(1.0, 0.0, 0.0))
    assert idx.count("train") == 1 and idx.count("val") == 0


def test_window_count_example():
    assert window_count(100, 12, 12) == 77
    idx = build_windows(series(100), 12, 12, splits=(1.0, 0.0, 0.0))
    assert idx.count("train") == 77


def test_no_window_crosses_split_end_exhaustive():
    s = series(57)
    for L_h in range(1, 6):
        for L_f in range(1, 5):
            idx = build_windows(s, L_h, L_f)
            b = idx.bounds[0]
            for split in ("train", "val", "test"):
                lo, hi = b[split]
                for _, start in idx.windows[split]:
                    assert lo <= start and start + L_h + L_f <= hi


def test_splits_are_chronological():
    b = split_bounds(1000)
    assert b == {"train": (0, 700), "val": (700, 800), "test": (800, 1000)}
    with pytest.raises(ContractError):
        split_bounds(10, (0.5, 0.5, 0.5))


def test_window_lengths_must_be_positive():
    with pytest.raises(ContractError):
        build_windows(series(10), 0, 1)
    with pytest.raises(ContractError):
        build_windows(series(10), 1, 0)


@given(st.integers(1, 120), st.integers(1, 15), st.integers(1, 15))
def test_window_count_formula_matches_loop(T, L_h, L_f):
    idx = build_windows(series(T), L_h, L_f)
    for split, (lo, hi) in idx.bounds[0].items():
        assert idx.count(split) == window_count(hi - lo, L_h, L_f) == window_count_loop(hi - lo, L_h, L_f)


def test_gather_slices_history_and_future():
    s = CitySeries(0, "ramp", np.arange(30, dtype=float)[:, None])
    x, y = gather(s.values, np.array([0, 5]), 4, 3)
    assert x.shape == (2, 4, 1, 1) and y.shape == (2, 3, 1, 1)
    assert np.array_equal(x[1, :, 0, 0], [5, 6, 7, 8]) and np.array_equal(y[1, :, 0, 0], [9, 10, 11])


def test_city_batches_homogeneous_and_round_robin():
    idx = build_windows([series(60, city=0), series(90, city=1, seed=1)], 3, 2)
    rows = idx.windows["train"]
    batches = city_batches(rows, 8)
    assert all(len(np.unique(b[:, 0])) == 1 for b in batches)
    assert [int(b[0, 0]) for b in batches[:4]] == [0, 1, 0, 1]
    assert sum(len(b) for b in batches) == len(rows)
    shuffled = city_batches(rows, 8, np.random.default_rng(0))
    assert sorted(map(tuple, np.concatenate(shuffled))) == sorted(map(tuple, rows))
    with pytest.raises(ContractError):
        city_batches(rows, 0)


# ------------------------------------------------------------------ low-data

def _index_with_train(n_per_city):
    # a train split holding exactly n windows per city
    cities = [series(n + 4, city=c) for c, n in enumerate(n_per_city)]
    return build_windows(cities, 2, 3, splits=(1.0, 0.0, 0.0))


def test_full_fraction_keeps_everything():
    idx = _index_with_train([40, 17])
    sub = subsample_lowdata(idx, 1.0, seed=3)
    assert sorted(map(tuple, sub.windows["train"])) == sorted(map(tuple, idx.windows["train"]))


def test_ceiling_count():
    idx = _index_with_train([100, 30])
    sub = subsample_lowdata(idx, 0.05, seed=0)
    assert sub.count("train", 0) == 5 and sub.count("train", 1) == 2


def test_subsample_deterministic_and_touches_train_only():
    cities = [series(300, city=c, seed=c) for c in range(2)]
    idx = build_windows(cities, 4, 4)
    a = subsample_lowdata(idx, 0.2, seed=9)
    b = subsample_lowdata(idx, 0.2, seed=9)
    c = subsample_lowdata(idx, 0.2, seed=10)
    assert np.array_equal(a.windows["train"], b.windows["train"])
    assert not np.array_equal(a.windows["train"], c.windows["train"])
    for split in ("val", "test"):
        assert np.array_equal(a.windows[split], idx.windows[split])
    train = set(map(tuple, idx.windows["train"]))
    assert set(map(tuple, a.windows["train"])) <= train


@pytest.mark.parametrize("frac", [0.0, -0.1, 1.5])
def test_bad_fraction(frac):
    with pytest.raises(ContractError):
        subsample_lowdata(_index_with_train([10]), frac, 0)


@given(st.lists(st.integers(20, 200), min_size=1, max_size=4), st.sampled_from([0.05, 0.10, 0.20, 0.50]),
       st.integers(0, 1000))
def test_every_city_survives_subsampling(ns, frac, seed):
    sub = subsample_lowdata(_index_with_train(ns), frac, seed)
    for c, n in enumerate(ns):
        assert sub.count("train", c) == math.ceil(frac * n - 1e-9) >= 1
    assert len(set(map(tuple, sub.windows["train"]))) == sub.count("train")


# ------------------------------------------------------------------ synthetic traffic

def test_degenerate_generator_equals_motif():
    spec = SyntheticSpec(num_cities=1, nodes=5, steps=250, num_motifs=1, noise_std=0.0, diffusion=0.0,
                         city_amplitude=0.0, node_jitter=0.0)
    (city,), truth = generate_synthetic(spec)
    motif = np.array(truth["motifs"][0])
    expected = motif[np.arange(250) % spec.period]
    assert np.max(np.abs(city.values[:, :, 0] - expected[:, None])) == 0.0


def test_shared_weights_without_city_component_identical_up_to_noise():
    spec = SyntheticSpec(num_cities=2, nodes=6, steps=400, shared_weights=True, city_amplitude=0.0, noise_std=0.0)
    (a, b), _ = generate_synthetic(spec)
    assert np.array_equal(a.values, b.values)
    noisy = SyntheticSpec(num_cities=2, nodes=6, steps=400, shared_weights=True, city_amplitude=0.0, noise_std=0.5)
    (a, b), _ = generate_synthetic(noisy)
    diff = a.values - b.values
    assert abs(diff.std() - 0.5 * math.sqrt(2)) < 0.05


@pytest.mark.parametrize("period", [48, 96])
def test_autocorrelation_peak_at_period(period):
    (city, *_), _ = generate_synthetic(SyntheticSpec(num_cities=1, steps=20 * period, period=period, seed=4))
    x = city.values[:, :, 0].mean(axis=1)
    x = x - x.mean()
    lags = np.arange(period // 2, 3 * period // 2)
    ac = np.array([np.dot(x[:-k], x[k:]) / (len(x) - k) for k in lags])
    assert abs(int(lags[np.argmax(ac)]) - period) <= 1


def test_generator_is_deterministic():
    spec = SyntheticSpec(num_cities=3, nodes=(4, 5, 6), steps=300, seed=11)
    (c1, t1), (c2, t2) = generate_synthetic(spec), generate_synthetic(spec)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(c1, c2)) and t1 == t2
    other, _ = generate_synthetic(SyntheticSpec(num_cities=3, nodes=(4, 5, 6), steps=300, seed=12))
    assert not np.array_equal(other[0].values, c1[0].values)


def test_ground_truth_weights_are_convex():
    cities, truth = generate_synthetic(SyntheticSpec(num_cities=2, nodes=7, steps=200))
    for rec, c in zip(truth["cities"], cities):
        w = np.array(rec["weights"])
        assert w.shape == (c.N, 3) and np.allclose(w.sum(axis=1), 1.0) and np.all(w >= 0)


@pytest.mark.parametrize("kwargs", [dict(num_cities=0), dict(steps=1), dict(nodes=(3,), num_cities=2),
                                    dict(noise_std=-1.0), dict(diffusion=2.0), dict(city_concentration=0.0)])
def test_invalid_synthetic_spec(kwargs):
    with pytest.raises(ConfigError):
        SyntheticSpec(**kwargs)


# ------------------------------------------------------------------ synthetic trajectories

def test_straight_agent_future_is_linear_extrapolation():
    spec = TrajectorySpec(num_scenes=1, agents=4, steps=60, turn_rate=(0.0,), speed_range=((1.0, 2.0),),
                          left_turn_prob=(0.5,))
    (scene,) = generate_synthetic_trajectories(spec)
    x, y = gather(scene.values, np.array([0, 13]), 20, 10)
    step = x[:, -1] - x[:, -2]
    extrap = x[:, -1][:, None] + np.arange(1, 11)[None, :, None, None] * step[:, None]
    assert np.max(np.abs(extrap - y)) < 1e-9


def test_trajectory_window_shapes():
    scenes = generate_synthetic_trajectories(TrajectorySpec(steps=200))
    idx = build_windows(scenes, 20, 10)
    x, y = gather(scenes[1].values, idx.for_city("train", 1)[:4, 1], 20, 10)
    assert x.shape == (4, 20, 16, 2) and y.shape == (4, 10, 16, 2)
    assert scenes[0].mode == "trajectory"


def test_trajectories_deterministic():
    spec = TrajectorySpec(steps=100, seed=3)
    a, b = generate_synthetic_trajectories(spec), generate_synthetic_trajectories(spec)
    assert all(np.array_equal(s.values, t.values) for s, t in zip(a, b))


def test_scene_turn_preferences_differ():
    spec = TrajectorySpec(agents=60, steps=400, turn_rate=(0.05, 0.05), left_turn_prob=(0.1, 0.9))
    scenes = generate_synthetic_trajectories(spec)
    signs = []
    for s in scenes:
        v = np.diff(s.values, axis=0)
        cross = v[:-1, :, 0] * v[1:, :, 1] - v[:-1, :, 1] * v[1:, :, 0]
        turns = cross[np.abs(cross) > 1e-6]
        signs.append(np.mean(turns > 0))
    assert signs[0] < 0.3 and signs[1] > 0.7
