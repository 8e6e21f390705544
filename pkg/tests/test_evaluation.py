import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigmoid_inference.datagen import NoiseModel, default_scenario, generate_dataset
from sigmoid_inference.evaluation import (
    eval_grid,
    observed_band,
    reconstruct_missing,
    trajectory_rmse,
    write_report,
)
from sigmoid_inference.systems import IntegrationError, OdeSystem, Trajectory, integrate_rk4, make_system

FN = make_system("fitzhugh_nagumo")


def test_single_true_draw_collapses_band():
    rec = reconstruct_missing(FN, FN.true_params[None])
    truth = integrate_rk4(FN, FN.true_params, grid=eval_grid(FN)).states
    for arr in (rec.mean, rec.lo, rec.hi):
        np.testing.assert_array_equal(arr, truth)
    assert rec.grid.size == 161 and rec.n_dropped == 0


def test_band_contains_mean():
    rng = np.random.default_rng(0)
    draws = FN.true_params * rng.uniform(0.9, 1.1, (50, 3))
    rec = reconstruct_missing(FN, draws)
    assert np.all(rec.lo <= rec.mean + 1e-15) and np.all(rec.mean <= rec.hi + 1e-15)
    assert rec.ensemble.shape == (161, 50, 2)


def test_reconstruction_returns_unobserved_components():
    rec = reconstruct_missing(FN, FN.true_params[None])
    assert rec.component_names == ("V", "R") and rec.mean.shape[1] == 2


def test_reconstruction_drops_blow_ups():
    grow = OdeSystem("grow", lambda y, p: [p[0] * y[0] * y[0]], ("y",), ("k",), np.array([0.1]),
                     np.array([1.0]), 2.0)
    draws = np.full((20, 1), 0.1)
    draws[3] = 5.0  # blows up before t = 2
    rec = reconstruct_missing(grow, draws, np.linspace(0, 2, 11))
    assert rec.n_dropped == 1 and rec.n_draws == 19
    draws[:5] = 5.0
    with pytest.raises(IntegrationError, match="blew up"):
        reconstruct_missing(grow, draws, np.linspace(0, 2, 11))
    with pytest.raises(ValueError):
        reconstruct_missing(grow, np.empty((0, 1)))


def test_log_space_reconstruction_is_natural_scale():
    hl, h = make_system("hes1_log"), make_system("hes1")
    grid = np.linspace(0, 240, 33)
    rec = reconstruct_missing(hl, hl.true_params[None], grid, substeps=50)
    ref = integrate_rk4(h, h.true_params, grid=grid, substeps=50).states
    np.testing.assert_allclose(rec.mean, ref, rtol=1e-6)


def test_rmse_identities():
    grid = np.linspace(0, 1, 11)
    a = Trajectory(grid, np.random.default_rng(0).standard_normal((11, 2)), np.empty(0), ("V", "R"))
    assert np.all(trajectory_rmse(a, a, grid).values == 0)
    b = Trajectory(grid, a.states + np.array([0.0, 0.25]), np.empty(0), ("V", "R"))
    r = trajectory_rmse(b, a, grid)
    assert r.values[0] == 0 and np.isclose(r.values[1], 0.25, rtol=1e-14)
    assert r.component_names == ("V", "R")
    with pytest.raises(ValueError):
        trajectory_rmse(a, a, np.linspace(0, 1, 12))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 9), st.floats(1e-6, 1.0))
def test_rmse_detects_any_perturbation(seed, j, eps):
    y = np.random.default_rng(seed).standard_normal((10, 2))
    z = y.copy()
    z[j, 1] += eps
    r = trajectory_rmse(z, y).values
    assert r[0] == 0 and r[1] > 0


def test_observed_band():
    sc = default_scenario("fitzhugh_nagumo", seed=3)
    ds = generate_dataset(sc)
    mean, lo, hi = observed_band(ds)
    np.testing.assert_allclose(hi - mean, mean - lo, rtol=1e-12)
    assert 0.3 < np.median(hi - mean) < 0.48
    q_mean, q_lo, q_hi = observed_band(ds, mode="quantile")
    assert np.all(q_lo <= q_hi)
    sc.noise = NoiseModel("additive_gaussian", 0.0)
    clean = generate_dataset(sc)
    mean, lo, hi = observed_band(clean)
    np.testing.assert_allclose(hi - lo, 0.0, atol=1e-12)
    np.testing.assert_allclose(mean, clean.true_values(), rtol=1e-14)


def test_write_report(tmp_path):
    rng = np.random.default_rng(1)
    draws = FN.true_params * rng.uniform(0.97, 1.03, (30, 3))
    out = write_report(tmp_path / "rep", FN, draws, run_info={"note": "x"})
    names = sorted(p.name for p in (tmp_path / "rep").iterdir())
    assert names == ["params.csv", "reconstruction.csv", "rmse.csv", "run.json"]
    params = (tmp_path / "rep" / "params.csv").read_text().splitlines()
    assert params[0] == "parameter,mean,std,true_value"
    assert params[1].startswith("a,") and params[1].endswith(",0.20000000000000001")
    rec = (tmp_path / "rep" / "reconstruction.csv").read_text().splitlines()
    assert rec[0] == "t,V_true,V_mean,V_lo,V_hi,R_true,R_mean,R_lo,R_hi" and len(rec) == 162
    run = json.loads((tmp_path / "rep" / "run.json").read_text())
    assert run["schema_version"] == 1 and run["note"] == "x" and "numpy" in run["versions"]
    assert out["rmse"].values.shape == (2,)

    write_report(tmp_path / "rep2", FN, draws, run_info={"note": "y"})
    for f in ("rmse.csv", "params.csv", "reconstruction.csv"):
        assert (tmp_path / "rep" / f).read_bytes() == (tmp_path / "rep2" / f).read_bytes()


def test_write_report_empty_sample(tmp_path):
    with pytest.raises(ValueError):
        write_report(tmp_path / "none", FN, np.empty((0, 3)))
    assert not (tmp_path / "none").exists()


def test_protein_rmse_scale_tag(tmp_path):
    pt = make_system("protein_transduction")
    out = write_report(tmp_path, pt, pt.true_params[None])
    assert out["rmse"].scale == 1e3
