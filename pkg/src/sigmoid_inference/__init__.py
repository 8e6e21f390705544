"""Simulation-based inference for ODE systems from noisy, sparse and partially observed data."""

from .systems import OdeSystem, Trajectory, IntegrationError, integrate_rk4, make_system, registry_names
from .datagen import Dataset, NoiseModel, ObservationSchedule, ScenarioConfig, generate_dataset, mask_components
from .hyperpinn import HyperPinnModel, HyperPinnSolver, ParamBounds, PinnTrainConfig, train_hyperpinn
from .wgan import InferenceResult, WganConfig, WganInference, train_wgan
from .evaluation import observed_band, reconstruct_missing, trajectory_rmse, write_report
from .config import RunConfig, preset, stage_seed

__all__ = [
    "OdeSystem", "Trajectory", "IntegrationError", "integrate_rk4", "make_system", "registry_names",
    "Dataset", "NoiseModel", "ObservationSchedule", "ScenarioConfig", "generate_dataset", "mask_components",
    "HyperPinnModel", "HyperPinnSolver", "ParamBounds", "PinnTrainConfig", "train_hyperpinn",
    "InferenceResult", "WganConfig", "WganInference", "train_wgan",
    "observed_band", "reconstruct_missing", "trajectory_rmse", "write_report",
    "RunConfig", "preset", "stage_seed",
]
