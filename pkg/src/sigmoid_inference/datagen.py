"""Synthetic noisy / sparse / partially observed datasets.

Observed entries are flattened component-major then time-major: for each
observed component (in sorted order) every scheduled time at which that
component is observed, in time order.  This order is shared by the noise
generator output and the discriminator input.

Gaussian variates come from numpy's ``PCG64`` bit generator through
``Generator.standard_normal`` (ziggurat method).  Replicate ``n`` draws from
its own stream ``SeedSequence(seed).spawn(N_o)[n]`` so replicates can be
generated independently.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from typing import Mapping, Sequence

import numpy as np

from .systems import OdeSystem, Trajectory, integrate_rk4, make_system, validate_grid

__all__ = [
    "ObservationSchedule",
    "NoiseModel",
    "ScenarioConfig",
    "Dataset",
    "merged_schedule",
    "generate_dataset",
    "mask_components",
    "default_scenario",
]


@dataclass(frozen=True)
class ObservationSchedule:
    components: tuple[int, ...]
    times: np.ndarray
    mask: np.ndarray  # bool (len(components), len(times))

    def __post_init__(self):
        if not self.components:
            raise ValueError("at least one observed component is required")
        if list(self.components) != sorted(set(self.components)):
            raise ValueError("observed components must be sorted and unique")
        validate_grid(self.times)
        if self.mask.shape != (len(self.components), self.times.size):
            raise ValueError("mask shape must be (n_components, n_times)")
        if not self.mask.any():
            raise ValueError("schedule observes nothing")

    @property
    def flat_dim(self) -> int:
        return int(self.mask.sum())

    def flat_index(self, d_y: int) -> np.ndarray:
        """Indices into a ``(d_y, n_times)`` array raveled row-major."""
        rows, cols = np.nonzero(self.mask)
        comps = np.asarray(self.components)[rows]
        return comps * self.times.size + cols

    def flatten(self, states: np.ndarray) -> np.ndarray:
        """Select observed entries from ``states`` of shape (..., n_times, d_y)."""
        states = np.asarray(states)
        d_y = states.shape[-1]
        swapped = np.swapaxes(states, -1, -2).reshape(states.shape[:-2] + (-1,))
        return swapped[..., self.flat_index(d_y)]

    def entry_labels(self) -> list[tuple[int, float]]:
        rows, cols = np.nonzero(self.mask)
        return [(self.components[r], float(self.times[c])) for r, c in zip(rows, cols)]

    def to_dict(self) -> dict:
        return {
            "components": list(self.components),
            "times": self.times.tolist(),
            "mask": self.mask.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "ObservationSchedule":
        return cls(tuple(d["components"]), np.asarray(d["times"], float), np.asarray(d["mask"], bool))


def merged_schedule(per_component_times: Mapping[int, Sequence[float]]) -> ObservationSchedule:
    """Merge per-component time grids into one ordered set plus an observation mask."""
    if not per_component_times:
        raise ValueError("no components given")
    grids = {int(i): validate_grid(t) for i, t in per_component_times.items()}
    times = np.unique(np.concatenate(list(grids.values())))
    comps = tuple(sorted(grids))
    mask = np.zeros((len(comps), times.size), dtype=bool)
    for r, i in enumerate(comps):
        mask[r] = np.isin(times, grids[i])
    return ObservationSchedule(comps, times, mask)


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "additive_gaussian"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("additive_gaussian", "multiplicative_lognormal"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not self.sigma >= 0:
            raise ValueError("noise sigma must be >= 0")


@dataclass
class ScenarioConfig:
    system_name: str
    n_replicates: int = 100
    observation_times: dict = field(default_factory=dict)  # component index -> list of times
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    horizon: float | None = None
    substeps: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["observation_times"] = {str(k): list(map(float, v)) for k, v in self.observation_times.items()}
        return d

    @classmethod
    def from_dict(cls, d) -> "ScenarioConfig":
        d = dict(d)
        d["noise"] = NoiseModel(**d.get("noise", {}))
        d["observation_times"] = {int(k): list(v) for k, v in d.get("observation_times", {}).items()}
        return cls(**d)


@dataclass
class Dataset:
    system_name: str
    schedule: ObservationSchedule
    replicates: np.ndarray  # (N_o, flat_dim)
    true_trajectory: Trajectory
    noise: NoiseModel
    seed: int
    scenario: ScenarioConfig | None = None

    def __post_init__(self):
        if self.replicates.ndim != 2 or self.replicates.shape[0] < 1:
            raise ValueError("replicates must be a non-empty 2-D array")
        if self.replicates.shape[1] != self.schedule.flat_dim:
            raise ValueError("replicate width must equal the schedule's flat_dim")
        if not np.all(np.isfinite(self.replicates)):
            raise ValueError("replicates must be finite")

    @property
    def n_replicates(self) -> int:
        return self.replicates.shape[0]

    @property
    def flat_dim(self) -> int:
        return self.schedule.flat_dim

    def true_values(self) -> np.ndarray:
        """Noise-free values of the observed entries, in flattening order."""
        return self.schedule.flatten(self.true_trajectory.states)

    def to_dict(self) -> dict:
        tr = self.true_trajectory
        return {
            "meta": {
                "system_name": self.system_name,
                "noise": asdict(self.noise),
                "seed": self.seed,
                "scenario": self.scenario.to_dict() if self.scenario else None,
            },
            "schedule": self.schedule.to_dict(),
            "replicates": self.replicates.tolist(),
            "true_trajectory": {
                "grid": tr.grid.tolist(),
                "states": tr.states.tolist(),
                "params": np.asarray(tr.params).tolist(),
                "component_names": list(tr.component_names),
            },
        }

    @classmethod
    def from_dict(cls, d) -> "Dataset":
        meta = d["meta"]
        tr = d["true_trajectory"]
        return cls(
            system_name=meta["system_name"],
            schedule=ObservationSchedule.from_dict(d["schedule"]),
            replicates=np.asarray(d["replicates"], float),
            true_trajectory=Trajectory(
                np.asarray(tr["grid"], float),
                np.asarray(tr["states"], float),
                np.asarray(tr["params"], float),
                tuple(tr["component_names"]),
            ),
            noise=NoiseModel(**meta["noise"]),
            seed=meta["seed"],
            scenario=ScenarioConfig.from_dict(meta["scenario"]) if meta.get("scenario") else None,
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_csv(self, path, component_names=None) -> None:
        labels = self.schedule.entry_labels()
        names = component_names or self.true_trajectory.component_names
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "component", "t", "value"])
            for n, row in enumerate(self.replicates):
                for (i, t), v in zip(labels, row):
                    w.writerow([n, names[i] if names else i, repr(t), format(float(v), ".17g")])


def _noisy(values: np.ndarray, noise: NoiseModel, log_space: bool, rng: np.random.Generator) -> np.ndarray:
    eps = rng.standard_normal(values.shape) * noise.sigma
    if noise.kind == "additive_gaussian" or log_space:
        # in log space multiplicative lognormal noise is additive Gaussian
        return values + eps
    return values * np.exp(eps)


def generate_dataset(scenario: ScenarioConfig, system: OdeSystem | None = None) -> Dataset:
    system = system or make_system(scenario.system_name)
    if scenario.n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    if not scenario.observation_times:
        raise ValueError("scenario has no observation times")
    for i in scenario.observation_times:
        system.component_index(int(i))
    schedule = merged_schedule(scenario.observation_times)
    horizon = scenario.horizon or system.horizon
    if schedule.times[-1] > horizon * (1 + 1e-12):
        raise ValueError("observation times exceed the horizon")

    grid = schedule.times if schedule.times[0] == 0 else np.concatenate([[0.0], schedule.times])
    traj = integrate_rk4(system, system.true_params, system.initial_state, grid, scenario.substeps)
    if grid.size != schedule.times.size:
        traj = Trajectory(grid[1:], traj.states[1:], traj.params, traj.component_names)
    clean = schedule.flatten(traj.states)
    if (scenario.noise.kind == "multiplicative_lognormal" and not system.log_space
            and np.any(clean <= 0)):
        raise ValueError("multiplicative noise requires strictly positive true values")

    streams = np.random.SeedSequence(scenario.seed).spawn(scenario.n_replicates)
    reps = np.stack([
        _noisy(clean, scenario.noise, system.log_space, np.random.Generator(np.random.PCG64(s)))
        for s in streams
    ])
    return Dataset(system.name, schedule, reps, traj, scenario.noise, scenario.seed, scenario)


def mask_components(dataset: Dataset, keep) -> Dataset:
    """Keep only the observed components in ``keep`` (NS -> NSMC)."""
    keep = sorted({int(k) for k in keep})
    sched = dataset.schedule
    if not keep:
        raise ValueError("keep must be non-empty")
    if not set(keep) <= set(sched.components):
        raise ValueError(f"keep {keep} is not a subset of observed components {sched.components}")
    rows = [sched.components.index(k) for k in keep]
    row_of_entry = np.repeat(np.arange(len(sched.components)), sched.mask.sum(axis=1))
    cols = np.isin(row_of_entry, rows)
    mask = sched.mask[rows]
    used = mask.any(axis=0)
    new_sched = ObservationSchedule(tuple(keep), sched.times[used], mask[:, used])
    return Dataset(
        dataset.system_name,
        new_sched,
        dataset.replicates[:, cols].copy(),
        dataset.true_trajectory,
        dataset.noise,
        dataset.seed,
        dataset.scenario,
    )


def default_scenario(system_name: str, seed: int = 0, n_replicates: int = 100,
                     observed=None) -> ScenarioConfig:
    """Default observation design per benchmark system.

    Grids are uniform with the published observation counts (FN 41 on [0, 20],
    protein 26 on [0, 100], Lorenz 9 on [0, 2]); Hes1 alternates P and M every
    7.5 minutes over [0, 240].  ``observed`` limits the observed components.
    """
    system = make_system(system_name)
    name = system_name.removesuffix("_log")
    if name == "fitzhugh_nagumo":
        times = {i: np.linspace(0, 20, 41) for i in range(2)}
        noise = NoiseModel("additive_gaussian", 0.2)
    elif name == "protein_transduction":
        times = {i: np.linspace(0, 100, 26) for i in range(5)}
        noise = NoiseModel("additive_gaussian", 0.01)
    elif name == "hes1":
        times = {0: np.arange(0, 240.0 + 1e-9, 15.0), 1: np.arange(7.5, 240.0, 15.0)}
        noise = NoiseModel("multiplicative_lognormal", 0.15)
    elif name == "lorenz":
        times = {i: np.linspace(0, 2, 9) for i in range(3)}
        noise = NoiseModel("additive_gaussian", 0.1)
    elif name == "exp_decay":
        times = {0: np.linspace(0, 2, 11)}
        noise = NoiseModel("additive_gaussian", 0.05)
    else:
        raise KeyError(f"no default scenario for {system_name!r}")
    if observed is not None:
        idx = {system.component_index(c) for c in observed}
        times = {i: t for i, t in times.items() if i in idx}
    return ScenarioConfig(
        system_name=system_name,
        n_replicates=n_replicates,
        observation_times={i: [float(x) for x in t] for i, t in times.items()},
        noise=noise,
        seed=seed,
    )
