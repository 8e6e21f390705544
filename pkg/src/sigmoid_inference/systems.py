"""Benchmark ODE systems and a fixed-step RK4 integrator.

Right-hand sides are written component-wise with plain arithmetic so the same
function evaluates numpy arrays (data generation, reconstruction) and autodiff
graph nodes (physics loss).  Every RHS takes ``y`` and ``p`` as sequences of
components and returns a list of components.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "OdeSystem",
    "Trajectory",
    "IntegrationError",
    "make_system",
    "register_system",
    "registry_names",
    "eval_rhs",
    "integrate_rk4",
    "log_transform_system",
    "default_substeps",
    "uniform_grid",
    "validate_grid",
    "write_trajectory_csv",
]


class IntegrationError(ArithmeticError):
    """Raised when a state becomes non-finite during integration."""

    def __init__(self, message, time=None, rows=None):
        super().__init__(message)
        self.time = time
        self.rows = rows


def _exp(x):
    # graph nodes carry their own exp; numpy arrays use np.exp
    return x.exp() if hasattr(x, "exp") else np.exp(x)


@dataclass(frozen=True)
class OdeSystem:
    name: str
    rhs: Callable[[Sequence, Sequence], list]
    component_names: tuple[str, ...]
    param_names: tuple[str, ...]
    true_params: np.ndarray
    initial_state: np.ndarray
    horizon: float
    steps_per_unit: float = 20.0
    log_space: bool = False
    time_unit: str = "dimensionless"

    @property
    def d_y(self) -> int:
        return len(self.component_names)

    @property
    def d_p(self) -> int:
        return len(self.param_names)

    def __post_init__(self):
        object.__setattr__(self, "true_params", np.asarray(self.true_params, dtype=float))
        object.__setattr__(self, "initial_state", np.asarray(self.initial_state, dtype=float))
        if self.true_params.shape != (self.d_p,):
            raise ValueError(f"{self.name}: true_params must have length {self.d_p}")
        if self.initial_state.shape != (self.d_y,):
            raise ValueError(f"{self.name}: initial_state must have length {self.d_y}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def component_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            if not 0 <= name_or_index < self.d_y:
                raise ValueError(f"component index {name_or_index} out of range for {self.name}")
            return int(name_or_index)
        try:
            return self.component_names.index(name_or_index)
        except ValueError:
            raise ValueError(
                f"unknown component {name_or_index!r} for {self.name}; "
                f"expected one of {self.component_names}"
            ) from None


@dataclass(frozen=True)
class Trajectory:
    grid: np.ndarray
    states: np.ndarray
    params: np.ndarray
    component_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.states.shape[0] != self.grid.shape[0]:
            raise ValueError("states row count must equal grid length")

    def component(self, i) -> np.ndarray:
        if isinstance(i, str):
            i = self.component_names.index(i)
        return self.states[:, i]


# -- right-hand sides -------------------------------------------------------


def fitzhugh_nagumo_rhs(y, p):
    V, R = y
    a, b, c = p
    return [c * (V - V * V * V / 3.0 + R), -(V - a + b * R) / c]


def protein_transduction_rhs(y, p):
    # Term signs follow the published display, which differs from the
    # mass-conserving textbook form in rows 1 and 3.
    S, Sd, R, SR, Rpp = y
    k1, k2, k3, k4, Vmax, Km = p
    deact = Vmax * Rpp / (Km + Rpp)
    return [
        -k1 * S - k2 * S + k3 * SR,
        k1 * S,
        -k2 * S * R - k3 * SR + deact,
        k2 * S * R - k3 * SR - k4 * SR,
        k4 * SR - deact,
    ]


def hes1_rhs(y, p):
    P, M, H = y
    a, b, c, d, e, f, g = p
    repress = 1.0 / (1.0 + P * P)
    return [
        -a * P * H + b * M - c * P,
        -d * M + e * repress,
        -a * P * H + f * repress - g * H,
    ]


def lorenz_rhs(y, p):
    X, Y, Z = y
    sigma, rho, beta = p
    return [sigma * (Y - X), X * (rho - Z) - Y, X * Y - beta * Z]


def exponential_decay_rhs(y, p):
    (u,) = y
    (k,) = p
    return [-k * u]


def log_transform_system(base: OdeSystem) -> OdeSystem:
    """Return ``base`` rewritten over ``u = log y``: du/dt = f(exp u, p) / exp u."""

    def rhs(u, p):
        y = [_exp(ui) for ui in u]
        f = base.rhs(y, p)
        return [fi / yi for fi, yi in zip(f, y)]

    return replace(
        base,
        name=f"{base.name}_log",
        rhs=rhs,
        initial_state=np.log(base.initial_state),
        log_space=True,
    )


def _fitzhugh_nagumo():
    return OdeSystem(
        name="fitzhugh_nagumo",
        rhs=fitzhugh_nagumo_rhs,
        component_names=("V", "R"),
        param_names=("a", "b", "c"),
        true_params=(0.2, 0.2, 3.0),
        initial_state=(-1.0, 1.0),
        horizon=20.0,
    )


def _protein_transduction():
    return OdeSystem(
        name="protein_transduction",
        rhs=protein_transduction_rhs,
        component_names=("S", "S_d", "R", "S_R", "R_pp"),
        param_names=("k1", "k2", "k3", "k4", "V", "K_m"),
        true_params=(0.07, 0.6, 0.05, 0.3, 0.017, 0.3),
        initial_state=(1.0, 0.0, 1.0, 0.0, 0.0),
        horizon=100.0,
    )


def _hes1():
    return OdeSystem(
        name="hes1",
        rhs=hes1_rhs,
        component_names=("P", "M", "H"),
        param_names=("a", "b", "c", "d", "e", "f", "g"),
        true_params=(0.022, 0.3, 0.031, 0.028, 0.5, 20.0, 0.3),
        initial_state=(1.439, 2.037, 17.904),
        horizon=240.0,
        time_unit="minutes",
    )


def _lorenz():
    return OdeSystem(
        name="lorenz",
        rhs=lorenz_rhs,
        component_names=("X", "Y", "Z"),
        param_names=("sigma", "rho", "beta"),
        true_params=(10.0, 28.0, 8.0 / 3.0),
        initial_state=(4.67, 5.49, 9.06),
        horizon=2.0,
        steps_per_unit=200.0,
    )


def exponential_decay(rate: float = 1.0, y0: float = 1.0, horizon: float = 2.0) -> OdeSystem:
    """Scalar test system dy/dt = -k y (closed form ``y0 * exp(-k t)``)."""
    return OdeSystem(
        name="exp_decay",
        rhs=exponential_decay_rhs,
        component_names=("y",),
        param_names=("k",),
        true_params=(rate,),
        initial_state=(y0,),
        horizon=horizon,
    )


_BUILTIN = {
    "fitzhugh_nagumo": _fitzhugh_nagumo,
    "protein_transduction": _protein_transduction,
    "hes1": _hes1,
    "hes1_log": lambda: log_transform_system(_hes1()),
    "lorenz": _lorenz,
}
_EXTRA: dict[str, Callable[[], OdeSystem]] = {"exp_decay": exponential_decay}


def registry_names() -> list[str]:
    """Names of the built-in benchmark systems."""
    return list(_BUILTIN)


def register_system(name: str, factory: Callable[[], OdeSystem]) -> None:
    """Extension point: make ``factory()`` available through :func:`make_system`."""
    if name in _BUILTIN:
        raise ValueError(f"{name!r} is a built-in system")
    _EXTRA[name] = factory


def make_system(name: str) -> OdeSystem:
    factory = _BUILTIN.get(name) or _EXTRA.get(name)
    if factory is None:
        known = ", ".join(list(_BUILTIN) + list(_EXTRA))
        raise KeyError(f"unknown system {name!r}; registry: {known}")
    return factory()


# -- evaluation and integration ---------------------------------------------


def eval_rhs(system: OdeSystem, y, p) -> np.ndarray:
    """Evaluate f(y, p) for one state or a batch (leading axes broadcast)."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape[-1] != system.d_y:
        raise ValueError(f"{system.name}: state has {y.shape[-1]} components, expected {system.d_y}")
    if p.shape[-1] != system.d_p:
        raise ValueError(f"{system.name}: params have {p.shape[-1]} entries, expected {system.d_p}")
    with np.errstate(all="ignore"):
        out = system.rhs([y[..., i] for i in range(system.d_y)], [p[..., k] for k in range(system.d_p)])
        out = np.stack(np.broadcast_arrays(*out), axis=-1).astype(float)
    bad = ~np.isfinite(out)
    if bad.any():
        comp = system.component_names[int(np.argwhere(bad)[0][-1])]
        raise FloatingPointError(f"{system.name}: non-finite derivative in component {comp}")
    return out


def validate_grid(grid, horizon: float | None = None) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("time grid must be a non-empty 1-D array")
    if not np.all(np.isfinite(grid)):
        raise ValueError("time grid must be finite")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be strictly increasing")
    if grid[0] < 0:
        raise ValueError("time grid must start at t >= 0")
    if horizon is not None and grid[-1] > horizon * (1 + 1e-12):
        raise ValueError(f"time grid ends at {grid[-1]} beyond horizon {horizon}")
    return grid


def uniform_grid(n: int, horizon: float, start: float = 0.0) -> np.ndarray:
    return np.linspace(start, horizon, n)


def default_substeps(system: OdeSystem, grid) -> int:
    """Substeps per grid interval giving about ``steps_per_unit`` steps per time unit."""
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        return 1
    return max(1, math.ceil(system.steps_per_unit * float(np.max(np.diff(grid))) - 1e-9))


def _derivative(system, y, p):
    with np.errstate(all="ignore"):
        out = system.rhs([y[..., i] for i in range(system.d_y)], p)
        return np.stack(np.broadcast_arrays(*out), axis=-1)


def integrate_rk4(system: OdeSystem, p, y0=None, grid=None, substeps: int | None = None) -> Trajectory:
    """Classical RK4 with ``substeps`` equal steps inside every grid interval.

    ``p`` may be a single parameter vector or a batch of shape (B, d_p); in the
    batched case ``states`` has shape (n, B, d_y) and each batch row is
    integrated with exactly the same arithmetic as a single call.
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != system.d_p or p.ndim > 2:
        raise ValueError(f"{system.name}: params must have trailing dimension {system.d_p}")
    y0 = system.initial_state if y0 is None else np.asarray(y0, dtype=float)
    if y0.shape[-1] != system.d_y:
        raise ValueError(f"{system.name}: initial state must have {system.d_y} components")
    grid = validate_grid(uniform_grid(161, system.horizon) if grid is None else grid)
    if substeps is None:
        substeps = default_substeps(system, grid)
    if substeps < 1:
        raise ValueError("substeps must be >= 1")

    pk = [p[..., k] for k in range(system.d_p)]
    y = np.broadcast_to(y0, p.shape[:-1] + (system.d_y,)).astype(float)
    states = np.empty((grid.size,) + y.shape)
    states[0] = y
    for j in range(grid.size - 1):
        h = (grid[j + 1] - grid[j]) / substeps
        for _ in range(substeps):
            k1 = _derivative(system, y, pk)
            k2 = _derivative(system, y + (h / 2) * k1, pk)
            k3 = _derivative(system, y + (h / 2) * k2, pk)
            k4 = _derivative(system, y + h * k3, pk)
            y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            bad = ~np.all(np.isfinite(y.reshape(-1, system.d_y)), axis=-1)
            raise IntegrationError(
                f"{system.name}: non-finite state at t={grid[j + 1]:.6g}",
                time=float(grid[j + 1]),
                rows=np.flatnonzero(bad),
            )
        states[j + 1] = y
    return Trajectory(grid=grid, states=states, params=p, component_names=system.component_names)


def write_trajectory_csv(traj: Trajectory, path, component_names=None) -> None:
    names = component_names or traj.component_names
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *names])
        for t, row in zip(traj.grid, traj.states):
            writer.writerow([repr(float(t))] + [format(float(v), ".17g") for v in row])
