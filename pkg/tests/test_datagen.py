import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigmoid_inference.datagen import (
    Dataset,
    NoiseModel,
    ScenarioConfig,
    default_scenario,
    generate_dataset,
    mask_components,
    merged_schedule,
)
from sigmoid_inference.systems import integrate_rk4, make_system


def test_merged_identical_grids():
    s = merged_schedule({1: [0, 1, 2], 2: [0, 1, 2]})
    np.testing.assert_array_equal(s.times, [0, 1, 2])
    assert s.mask.all() and s.flat_dim == 6


def test_merged_disjoint_grids():
    s = merged_schedule({1: [0, 2], 2: [1]})
    np.testing.assert_array_equal(s.times, [0, 1, 2])
    np.testing.assert_array_equal(s.mask, [[True, False, True], [False, True, False]])
    assert s.flat_dim == 3


def test_merged_empty_rejected():
    with pytest.raises(ValueError):
        merged_schedule({})


def test_hes1_asynchronous_schedule():
    sc = default_scenario("hes1_log")
    s = merged_schedule(sc.observation_times)
    assert s.times.size == 33 and s.flat_dim == 33


def test_flatten_order_component_major():
    s = merged_schedule({0: [0, 1], 1: [1, 2]})
    states = np.array([[10, 20], [11, 21], [12, 22]], float)  # (T, d_y)
    np.testing.assert_array_equal(s.flatten(states), [10, 11, 21, 22])
    assert s.entry_labels() == [(0, 0.0), (0, 1.0), (1, 1.0), (1, 2.0)]


def test_zero_noise_equals_truth():
    sc = default_scenario("fitzhugh_nagumo", n_replicates=3)
    sc.noise = NoiseModel("additive_gaussian", 0.0)
    ds = generate_dataset(sc)
    for row in ds.replicates:
        np.testing.assert_array_equal(row, ds.true_values())


def test_fn_noise_statistics():
    ds = generate_dataset(default_scenario("fitzhugh_nagumo", seed=11))
    err = ds.replicates - ds.true_values()
    assert ds.flat_dim == 82 and ds.n_replicates == 100
    assert np.all(np.abs(err.mean(axis=0)) < 4 * 0.2 / 10)
    sd = err.std(axis=0, ddof=1)
    assert np.mean((sd >= 0.14) & (sd <= 0.26)) >= 0.95


def test_noise_empiricals_large_sample():
    sc = default_scenario("exp_decay", seed=2, n_replicates=10_000)
    ds = generate_dataset(sc)
    err = ds.replicates - ds.true_values()
    assert np.all(np.abs(err.mean(axis=0)) < 0.05 * 0.05 * 4)
    np.testing.assert_allclose(err.std(axis=0, ddof=1), 0.05, rtol=0.05)


def test_truth_matches_integrator():
    ds = generate_dataset(default_scenario("lorenz", n_replicates=2))
    lz = make_system("lorenz")
    ref = integrate_rk4(lz, lz.true_params, grid=ds.schedule.times).states
    np.testing.assert_allclose(ds.true_trajectory.states, ref, rtol=1e-12)


def test_lorenz_x_only_flat_dim():
    ds = generate_dataset(default_scenario("lorenz", observed=["X"], n_replicates=2))
    assert ds.flat_dim == 9


def test_log_space_noise_is_additive_in_log():
    sc = default_scenario("hes1_log", seed=4, n_replicates=4000)
    ds = generate_dataset(sc)
    err = ds.replicates - ds.true_values()
    np.testing.assert_allclose(err.std(axis=0, ddof=1), 0.15, rtol=0.06)


def test_multiplicative_noise_is_lognormal():
    sc = default_scenario("hes1", seed=4, n_replicates=4000)
    ds = generate_dataset(sc)
    ratio = np.log(ds.replicates / ds.true_values())
    np.testing.assert_allclose(ratio.std(axis=0, ddof=1), 0.15, rtol=0.06)


def test_multiplicative_needs_positive_values():
    sc = default_scenario("fitzhugh_nagumo", n_replicates=2)
    sc.noise = NoiseModel("multiplicative_lognormal", 0.1)
    with pytest.raises(ValueError, match="positive"):
        generate_dataset(sc)


def test_reproducible_bitwise():
    sc = default_scenario("fitzhugh_nagumo", seed=9)
    a, b = generate_dataset(sc), generate_dataset(sc)
    assert a.replicates.tobytes() == b.replicates.tobytes()
    c = generate_dataset(default_scenario("fitzhugh_nagumo", seed=10))
    assert not np.array_equal(a.replicates, c.replicates)


def test_replicate_streams_are_independent_of_count():
    a = generate_dataset(default_scenario("fitzhugh_nagumo", seed=9, n_replicates=5))
    b = generate_dataset(default_scenario("fitzhugh_nagumo", seed=9, n_replicates=8))
    np.testing.assert_array_equal(a.replicates, b.replicates[:5])


def test_mask_components():
    ds = generate_dataset(default_scenario("fitzhugh_nagumo", n_replicates=5))
    v_only = mask_components(ds, [0])
    assert v_only.flat_dim == 41
    np.testing.assert_array_equal(v_only.replicates, ds.replicates[:, :41])
    assert v_only.true_trajectory is ds.true_trajectory
    same = mask_components(ds, [0, 1])
    assert same.replicates.tobytes() == ds.replicates.tobytes()
    with pytest.raises(ValueError):
        mask_components(ds, [])
    with pytest.raises(ValueError):
        mask_components(v_only, [1])


def test_protein_keep_rpp():
    ds = generate_dataset(default_scenario("protein_transduction", n_replicates=3))
    assert mask_components(ds, [4]).flat_dim == 26


def test_dataset_json_round_trip(tmp_path):
    ds = generate_dataset(default_scenario("hes1_log", n_replicates=3))
    ds.save(tmp_path / "d.json")
    back = Dataset.load(tmp_path / "d.json")
    np.testing.assert_array_equal(back.replicates, ds.replicates)
    np.testing.assert_array_equal(back.schedule.mask, ds.schedule.mask)
    assert back.scenario.to_dict() == ds.scenario.to_dict()


def test_dataset_csv(tmp_path):
    ds = generate_dataset(default_scenario("fitzhugh_nagumo", n_replicates=2))
    ds.write_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "replicate,component,t,value"
    assert len(lines) == 1 + 2 * 82
    assert lines[1].startswith("0,V,0.0,")


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.integers(0, 3),
                       st.lists(st.integers(0, 40), min_size=1, max_size=8, unique=True),
                       min_size=1, max_size=4))
def test_merged_schedule_property(grids):
    grids = {k: sorted(v) for k, v in grids.items()}
    s = merged_schedule(grids)
    assert list(s.times) == sorted(set().union(*grids.values()))
    assert s.flat_dim == sum(len(v) for v in grids.values())
    for r, comp in enumerate(s.components):
        assert set(s.times[s.mask[r]]) == set(grids[comp])
