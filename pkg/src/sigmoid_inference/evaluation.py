"""Trajectory RMSE, parameter summaries, bands and missing-component reconstruction."""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .systems import IntegrationError, OdeSystem, Trajectory, integrate_rk4, uniform_grid, validate_grid

log = logging.getLogger(__name__)

__all__ = [
    "Reconstruction",
    "RmseReport",
    "eval_grid",
    "reconstruct_missing",
    "trajectory_rmse",
    "observed_band",
    "write_report",
    "REPORT_SCHEMA_VERSION",
]

REPORT_SCHEMA_VERSION = 1
# reporting scale per system (protein errors are tiny, so they are shown x1e3)
_RMSE_SCALE = {"protein_transduction": 1e3}


def eval_grid(system: OdeSystem, n: int = 161) -> np.ndarray:
    return uniform_grid(n, system.horizon)


@dataclass
class Reconstruction:
    grid: np.ndarray
    ensemble: np.ndarray  # (n_times, n_draws, d_y)
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_dropped: int
    component_names: tuple

    @property
    def n_draws(self) -> int:
        return self.ensemble.shape[1]

    def mean_trajectory(self) -> Trajectory:
        return Trajectory(self.grid, self.mean, np.empty(0), self.component_names)


@dataclass
class RmseReport:
    component_names: tuple
    values: np.ndarray
    grid_points: int
    n_draws: int
    scale: float = 1.0

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("RMSE values must be nonnegative")


def _natural(system: OdeSystem, states):
    return np.exp(states) if system.log_space else states


def reconstruct_missing(system: OdeSystem, draws, grid=None, substeps=None,
                        max_drop_frac: float = 0.1) -> Reconstruction:
    """Re-integrate the ODE for every parameter draw; all components, natural scale.

    Draws whose integration blows up are dropped; more than ``max_drop_frac``
    dropped is an error.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] == 0:
        raise ValueError("no parameter draws given")
    if draws.shape[1] != system.d_p:
        raise ValueError(f"draws must have {system.d_p} columns")
    grid = eval_grid(system) if grid is None else validate_grid(grid, system.horizon)
    full = grid if grid[0] == 0 else np.concatenate([[0.0], grid])

    keep = np.ones(len(draws), dtype=bool)
    while True:
        try:
            states = integrate_rk4(system, draws[keep], None, full, substeps).states
            break
        except IntegrationError as err:
            idx = np.flatnonzero(keep)[err.rows]
            keep[idx] = False
            if (~keep).sum() > max_drop_frac * len(draws):
                raise IntegrationError(
                    f"{(~keep).sum()} of {len(draws)} draws blew up during reconstruction",
                    time=err.time) from err
    n_dropped = int((~keep).sum())
    if n_dropped:
        log.warning("dropped %d diverging draws from the reconstruction", n_dropped)
    if full.size != grid.size:
        states = states[1:]
    states = _natural(system, states)
    return Reconstruction(grid, states, states.mean(axis=1), states.min(axis=1), states.max(axis=1),
                          n_dropped, system.component_names)


def _states_on(traj, grid):
    if isinstance(traj, Reconstruction):
        traj = traj.mean_trajectory()
    if isinstance(traj, Trajectory):
        if grid is not None and (traj.grid.shape != np.shape(grid) or not np.allclose(traj.grid, grid)):
            raise ValueError("trajectory is not defined on the evaluation grid")
        return traj.states
    return np.asarray(traj, dtype=float)


def trajectory_rmse(estimate, truth, grid=None, component_names=(), n_draws: int = 1,
                    scale: float = 1.0) -> RmseReport:
    """Per-component root-mean-square error between two trajectories on one grid."""
    a = _states_on(estimate, grid)
    b = _states_on(truth, grid)
    if a.shape != b.shape:
        raise ValueError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    values = np.sqrt(np.mean((a - b) ** 2, axis=0))
    if not component_names and isinstance(truth, Trajectory):
        component_names = truth.component_names
    return RmseReport(tuple(component_names), values, a.shape[0], n_draws, scale)


def observed_band(dataset: Dataset, mode: str = "normal", level: float = 0.95):
    """Per-entry replicate mean with a ``level`` band.

    ``normal`` uses mean +- z * sample std; ``quantile`` uses empirical quantiles.
    Returns ``(mean, lo, hi)`` in flattening order.
    """
    y = dataset.replicates
    if y.shape[0] < 2:
        raise ValueError("observed band needs at least two replicates")
    mean = y.mean(axis=0)
    if mode == "normal":
        from scipy.stats import norm
        half = norm.ppf(0.5 + level / 2) * y.std(axis=0, ddof=1)
        return mean, mean - half, mean + half
    if mode == "quantile":
        lo, hi = np.quantile(y, [(1 - level) / 2, (1 + level) / 2], axis=0)
        return mean, lo, hi
    raise ValueError(f"unknown band mode {mode!r}")


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _versions():
    import numpy
    import sklearn
    from importlib.metadata import PackageNotFoundError, version
    try:
        own = version("artifact")
    except PackageNotFoundError:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": numpy.__version__,
            "scikit-learn": sklearn.__version__, "artifact": own}


def write_report(out_dir, system: OdeSystem, draws, param_names=None, truth=None, grid=None,
                 run_info=None, dataset: Dataset | None = None) -> dict:
    """Write rmse.csv, params.csv, reconstruction.csv and run.json into ``out_dir``.

    ``truth`` defaults to RK4 at the registry's true parameters.  Returns a dict
    with the reconstruction, the RMSE report and the written paths.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.size == 0:
        raise ValueError("empty parameter sample")
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"cannot write to {out_dir}")
    grid = eval_grid(system) if grid is None else validate_grid(grid, system.horizon)
    rec = reconstruct_missing(system, draws, grid)
    if truth is None:
        full = grid if grid[0] == 0 else np.concatenate([[0.0], grid])
        tr = integrate_rk4(system, system.true_params, None, full)
        truth_states = _natural(system, tr.states[-grid.size:])
    else:
        truth_states = _states_on(truth, grid)
    names = system.component_names
    rmse = trajectory_rmse(rec.mean, truth_states, component_names=names, n_draws=rec.n_draws,
                           scale=_RMSE_SCALE.get(system.name.removesuffix("_log"), 1.0))
    param_names = list(param_names or system.param_names)

    paths = {k: os.path.join(out_dir, k) for k in ("rmse.csv", "params.csv", "reconstruction.csv", "run.json")}
    with open(paths["rmse.csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "rmse", "scale", "rmse_scaled", "grid_points", "n_draws"])
        for name, v in zip(names, rmse.values):
            w.writerow([name, _fmt(v), _fmt(rmse.scale), _fmt(v * rmse.scale), rmse.grid_points, rmse.n_draws])
    with open(paths["params.csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "mean", "std", "true_value"])
        std = draws.std(axis=0, ddof=1) if len(draws) > 1 else np.zeros(draws.shape[1])
        for k, name in enumerate(param_names):
            w.writerow([name, _fmt(draws[:, k].mean()), _fmt(std[k]), _fmt(system.true_params[k])])
    with open(paths["reconstruction.csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        cols = [f"{n}_{s}" for n in names for s in ("true", "mean", "lo", "hi")]
        w.writerow(["t", *cols])
        for j, t in enumerate(grid):
            row = [_fmt(t)]
            for i in range(len(names)):
                row += [_fmt(truth_states[j, i]), _fmt(rec.mean[j, i]), _fmt(rec.lo[j, i]), _fmt(rec.hi[j, i])]
            w.writerow(row)
    run = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "system": system.name,
        "versions": _versions(),
        "n_draws": rec.n_draws,
        "n_dropped": rec.n_dropped,
        "grid_points": int(grid.size),
        "rmse": dict(zip(names, rmse.values.tolist())),
        **(run_info or {}),
    }
    if dataset is not None:
        run["dataset"] = {"n_replicates": dataset.n_replicates, "flat_dim": dataset.flat_dim,
                          "observed_components": [names[i] for i in dataset.schedule.components]}
    with open(paths["run.json"], "w") as fh:
        json.dump(run, fh, indent=2, default=str)
    return {"reconstruction": rec, "rmse": rmse, "paths": paths}
