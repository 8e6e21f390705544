"""Run configuration, named presets and seed fan-out."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .datagen import ScenarioConfig, default_scenario
from .hyperpinn import PinnTrainConfig
from .systems import make_system
from .wgan import WganConfig

__all__ = ["RunConfig", "ConfigError", "PRESETS", "preset", "stage_seed", "load_config"]

STAGES = ("simulate", "pinn", "gan")


class ConfigError(ValueError):
    pass


def stage_seed(master: int, stage: str) -> int:
    """First 8 bytes (big endian) of sha256("<master>:<stage>"), kept below 2**63."""
    digest = hashlib.sha256(f"{int(master)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & (2**63 - 1)


@dataclass
class RunConfig:
    system: str
    scenario: ScenarioConfig
    pinn: PinnTrainConfig
    gan: WganConfig
    keep_components: list | None = None  # observed components kept for NSMC; None keeps all
    eval_points: int = 161
    out_dir: str = "runs/out"
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        try:
            system = make_system(self.system)
        except KeyError as err:
            raise ConfigError(str(err)) from None
        if self.scenario.system_name != self.system:
            raise ConfigError("scenario system does not match run system")
        if self.keep_components is not None:
            try:
                keep = [system.component_index(c) for c in self.keep_components]
            except ValueError as err:
                raise ConfigError(str(err)) from None
            if not set(keep) <= {int(i) for i in self.scenario.observation_times}:
                raise ConfigError("keep_components must be observed in the scenario")
            self.keep_components = sorted(keep)
        if self.eval_points < 2:
            raise ConfigError("eval_points must be >= 2")

    def with_seed(self, master: int) -> "RunConfig":
        """Copy with every stage seed derived from ``master``."""
        d = self.to_dict()
        d["seed"] = int(master)
        d["scenario"]["seed"] = stage_seed(master, "simulate")
        d["pinn"]["seed"] = stage_seed(master, "pinn")
        d["gan"]["seed"] = stage_seed(master, "gan")
        return RunConfig.from_dict(d)

    def with_epochs(self, pinn_epochs=None, gan_epochs=None) -> "RunConfig":
        d = self.to_dict()
        if pinn_epochs is not None:
            d["pinn"]["epochs"] = int(pinn_epochs)
        if gan_epochs is not None:
            d["gan"]["epochs"] = int(gan_epochs)
        return RunConfig.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": self.system,
            "seed": self.seed,
            "scenario": self.scenario.to_dict(),
            "keep_components": self.keep_components,
            "pinn": self.pinn.to_dict(),
            "gan": self.gan.to_dict(),
            "eval_points": self.eval_points,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        try:
            return cls(
                system=d["system"],
                scenario=ScenarioConfig.from_dict(d["scenario"]),
                pinn=PinnTrainConfig(**d.get("pinn", {})),
                gan=WganConfig(**d.get("gan", {})),
                keep_components=d.get("keep_components"),
                eval_points=d.get("eval_points", 161),
                out_dir=d.get("out_dir", "runs/out"),
                seed=d.get("seed", 0),
                name=d.get("name", "custom"),
            )
        except (KeyError, TypeError) as err:
            raise ConfigError(f"invalid run config: {err}") from None

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    return RunConfig.from_dict(d)


# Per-system training settings; HyperPINN fields follow the published table
# (lr, batch, N_p, alpha, beta, epochs), GAN fields likewise (lr, lambda_e,
# noise dim 32, Adam(0, 0.9), epochs).
_PINN = {
    "fitzhugh_nagumo": dict(alpha=1.0, beta=1e-3, n_params=1000, lr=5e-4),
    "protein_transduction": dict(alpha=1.0, beta=0.0, n_params=1000, lr=1e-5),
    "hes1_log": dict(alpha=1.0, beta=0.0, n_params=5000, lr=1e-4),
    "lorenz": dict(alpha=1.0, beta=0.0, n_params=2000, lr=1e-4),
    "exp_decay": dict(alpha=1.0, beta=0.0, n_params=100, n_col=51, lr=1e-3, epochs=5000,
                      hyper_hidden=(32, 32), main_hidden=(16, 16)),
}
_GAN = {
    "fitzhugh_nagumo": dict(lr=1e-5, lambda_e=100.0),
    "protein_transduction": dict(lr=1e-5, lambda_e=1000.0),
    "hes1_log": dict(lr=5e-5, lambda_e=1.0),
    "lorenz": dict(lr=1e-5, lambda_e=1.0),
    "exp_decay": dict(lr=3e-4, lambda_e=1.0, epochs=20_000, gp_hidden=(32, 32), ge_hidden=(32, 32),
                      d_hidden=(32, 32), standardize=True, decay_start=0.5),
}

# name -> (system, observed components kept, seed)
_PRESETS = {
    "fn_ns": ("fitzhugh_nagumo", None),
    "fn_nsmc": ("fitzhugh_nagumo", ["V"]),
    "protein_ns": ("protein_transduction", None),
    "protein_nsmc": ("protein_transduction", ["R_pp"]),
    "hes1_nsmc": ("hes1_log", None),
    "lorenz_ns": ("lorenz", None),
    "lorenz_nsmc_z": ("lorenz", ["X", "Y"]),
    "lorenz_nsmc_yz": ("lorenz", ["X"]),
    "toy": ("exp_decay", None),
}
PRESETS = tuple(_PRESETS)


def preset(name: str, seed: int = 0) -> RunConfig:
    """Named configuration with stage seeds fanned out from ``seed``."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    system, keep = _PRESETS[name]
    pinn = PinnTrainConfig(**{"batch_size": 10_000, "epochs": 30_000, **_PINN[system]})
    gan = WganConfig(**{"epochs": 100_000, "noise_dim": 32, "beta1": 0.0, "beta2": 0.9, **_GAN[system]})
    cfg = RunConfig(system=system, scenario=default_scenario(system), pinn=pinn, gan=gan,
                    keep_components=keep, out_dir=f"runs/{name}", name=name)
    return cfg.with_seed(seed)
