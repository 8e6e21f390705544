"""Parameter and noise inference with a Wasserstein GAN (gradient penalty).

Two generators map standard-normal latents to ODE parameters (squashed into
the emulator's training box) and to observation noise.  Fake replicates are
``emulator(p) + noise`` at the observed entries; a discriminator trained with
a gradient penalty scores real against fake replicates.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import Graph, Var
from .datagen import Dataset, ObservationSchedule
from .hyperpinn import HyperPinnModel, ParamBounds
from .nets import AdamState, MlpSpec, adam_step, init_weights, input_gradient_norm, mlp_forward
from .validation import check_observations

log = logging.getLogger(__name__)

__all__ = [
    "WganConfig",
    "GanNets",
    "InferenceResult",
    "sample_latent",
    "generate",
    "assemble_fake",
    "loss_e",
    "gradient_penalty",
    "loss_discriminator",
    "loss_generator",
    "train_wgan",
    "summarize",
    "WganInference",
    "GanDiverged",
]


class GanDiverged(FloatingPointError):
    pass


def _tanh(x):
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


@dataclass
class WganConfig:
    noise_dim: int = 32
    lambda_d: float = 10.0
    lambda_e: float = 1.0
    lr: float = 1e-5
    beta1: float = 0.0
    beta2: float = 0.9
    epochs: int = 100_000
    critic_steps: int = 5
    seed: int = 0
    gp_hidden: tuple = (64, 64, 64)
    ge_hidden: tuple = (64, 64, 64)
    d_hidden: tuple = (128, 128, 128)
    gp_init_scale: float = 0.1
    ge_init_scale: float = 1.0
    n_terminal: int = 10_000
    log_every: int = 100
    score_limit: float = 1e6
    standardize: bool = False  # feed the critic per-entry standardized replicates
    decay_start: float = 1.0  # fraction of epochs after which lr decays linearly to 0; 1 keeps it constant

    def __post_init__(self):
        if self.lambda_d < 0 or self.lambda_e < 0:
            raise ValueError("lambda_d and lambda_e must be >= 0")
        if self.noise_dim < 1:
            raise ValueError("noise_dim must be >= 1")
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        if not 0.0 <= self.decay_start <= 1.0:
            raise ValueError("decay_start must lie in [0, 1]")
        for k in ("gp_hidden", "ge_hidden", "d_hidden"):
            setattr(self, k, tuple(getattr(self, k)))

    def to_dict(self):
        d = asdict(self)
        for k in ("gp_hidden", "ge_hidden", "d_hidden"):
            d[k] = list(d[k])
        return d


@dataclass
class GanNets:
    gp_spec: MlpSpec
    ge_spec: MlpSpec
    d_spec: MlpSpec
    theta_gp: np.ndarray
    theta_ge: np.ndarray
    theta_d: np.ndarray

    @classmethod
    def init(cls, d_p: int, flat_dim: int, config: WganConfig, rng) -> "GanNets":
        gp = MlpSpec(config.noise_dim, d_p, config.gp_hidden)
        ge = MlpSpec(config.noise_dim, flat_dim, config.ge_hidden)
        d = MlpSpec(flat_dim, 1, config.d_hidden)
        return cls(gp, ge, d,
                   init_weights(gp, rng, config.gp_init_scale),
                   init_weights(ge, rng, config.ge_init_scale),
                   init_weights(d, rng))

    def to_dict(self):
        return {
            "gp_spec": self.gp_spec.to_dict(), "ge_spec": self.ge_spec.to_dict(),
            "d_spec": self.d_spec.to_dict(), "theta_gp": self.theta_gp.tolist(),
            "theta_ge": self.theta_ge.tolist(), "theta_d": self.theta_d.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(MlpSpec.from_dict(d["gp_spec"]), MlpSpec.from_dict(d["ge_spec"]),
                   MlpSpec.from_dict(d["d_spec"]), np.asarray(d["theta_gp"]),
                   np.asarray(d["theta_ge"]), np.asarray(d["theta_d"]))


def sample_latent(n: int, d_n: int, seed) -> np.ndarray:
    """Standard-normal latents of shape (n, d_n); ``seed`` may be a Generator."""
    if n < 1 or d_n < 1:
        raise ValueError("latent shape must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((n, d_n))


def generate(nets: GanNets, zp, ze, bounds: ParamBounds, theta_gp=None, theta_ge=None):
    """Map latents to parameters (inside ``bounds``) and noise."""
    theta_gp = nets.theta_gp if theta_gp is None else theta_gp
    theta_ge = nets.theta_ge if theta_ge is None else theta_ge
    raw = mlp_forward(nets.gp_spec, theta_gp, zp)
    p = _tanh(raw) * bounds.halfwidth + bounds.mid
    if not isinstance(p, Var):
        # a saturated tanh can round one ulp past the box edge
        p = np.clip(p, bounds.low, bounds.high)
    e = mlp_forward(nets.ge_spec, theta_ge, ze)
    return p, e


def _flatten(states, schedule: ObservationSchedule):
    """(N, T, d_y) states -> (N, flat_dim) observed entries (graph-aware)."""
    n, t, d_y = states.shape
    idx = schedule.flat_index(d_y)
    return states.swapaxes(-1, -2).reshape(n, d_y * t)[:, idx]


def assemble_fake(model: HyperPinnModel, schedule: ObservationSchedule, p, e):
    """Emulator trajectories at the schedule's observed entries plus generated noise."""
    if schedule.times[-1] > model.horizon * (1 + 1e-12):
        raise ValueError("observation schedule extends beyond the emulator horizon")
    if max(schedule.components) >= model.d_y:
        raise ValueError("schedule observes components the emulator does not have")
    states = model.predict_states(p, schedule.times)
    return _flatten(states, schedule) + e


def _unbiased_var(x, axis=0):
    n = x.shape[axis]
    c = x - x.mean(axis=axis, keepdims=True)
    return (c * c).sum(axis=axis) * (1.0 / (n - 1))


def loss_e(e, obs_var) -> "Var | float":
    """Second moment of the generated noise plus squared variance mismatch.

    ``obs_var`` holds the per-entry unbiased replicate variance of the data.
    """
    if e.shape[0] < 2:
        raise ValueError("noise loss needs at least two generated samples")
    second_moment = (e * e).mean(axis=0).sum()
    gap = obs_var - _unbiased_var(e)
    return second_moment + (gap * gap).sum()


def _interpolate(y_real, y_fake, rng):
    perm = rng.permutation(y_real.shape[0])
    gamma = rng.random(y_fake.shape)
    return gamma * y_fake + (1.0 - gamma) * y_real[perm]


def gradient_penalty(d_spec: MlpSpec, theta_d, y_real, y_fake, rng, y_hat=None):
    """mean_n (||grad_Y D(Y_hat_n)|| - 1)^2 at random element-wise interpolates.

    Real rows are shuffled before pairing with fake rows; ``y_hat`` overrides
    the interpolates (used by tests).
    """
    y_real = np.asarray(y_real, dtype=float)
    y_fake = np.asarray(y_fake, dtype=float)
    if y_real.shape != y_fake.shape:
        raise ValueError("real and fake batches must have the same shape")
    if y_hat is None:
        y_hat = _interpolate(y_real, y_fake, rng)
    _, norms = input_gradient_norm(d_spec, theta_d, y_hat)
    dev = norms - 1.0
    return (dev * dev).mean()


def loss_discriminator(nets: GanNets, y_real, y_fake, lambda_d: float, rng, theta_d=None):
    """-mean D(real) + mean D(fake) + lambda_d * gradient penalty.

    Returns ``(loss, wasserstein_estimate, penalty)``.
    """
    theta_d = nets.theta_d if theta_d is None else theta_d
    y_real = np.asarray(y_real, dtype=float)
    y_fake = np.asarray(y_fake, dtype=float)
    if y_real.shape[1] != y_fake.shape[1]:
        raise ValueError("real and fake replicates must have the same width")
    scores = mlp_forward(nets.d_spec, theta_d, np.concatenate([y_real, y_fake]))
    n = y_real.shape[0]
    wdist = scores[:n].mean() - scores[n:].mean()
    if lambda_d == 0:
        return -wdist, wdist, 0.0 * wdist
    gp = gradient_penalty(nets.d_spec, theta_d, y_real, y_fake, rng)
    return -wdist + lambda_d * gp, wdist, gp


def loss_generator(nets: GanNets, real_score_mean: float, y_fake, e, obs_var, lambda_e: float,
                   theta_d=None):
    """mean D(real) - mean D(fake) + lambda_e * L_e; returns ``(loss, L_e)``."""
    theta_d = nets.theta_d if theta_d is None else theta_d
    fake_scores = mlp_forward(nets.d_spec, theta_d, y_fake)
    le = loss_e(e, obs_var)
    return real_score_mean - fake_scores.mean() + lambda_e * le, le


@dataclass
class InferenceResult:
    system_name: str
    param_names: list
    nets: GanNets
    params: np.ndarray  # terminal draws (M, d_p)
    noise: np.ndarray  # terminal draws (M, flat_dim)
    history: list
    config: dict
    seed: int
    true_params: np.ndarray | None = None
    wall_time: float = 0.0
    lambda_e: float | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.params)):
            raise ValueError("terminal parameter draws must be finite")

    @property
    def noise_mean(self):
        return self.noise.mean(axis=0)

    @property
    def noise_var(self):
        return self.noise.var(axis=0, ddof=1)

    def to_dict(self):
        return {
            "system_name": self.system_name,
            "param_names": list(self.param_names),
            "config": self.config,
            "seed": self.seed,
            "lambda_e": self.lambda_e,
            "true_params": None if self.true_params is None else np.asarray(self.true_params).tolist(),
            "history": self.history,
            "params": self.params.tolist(),
            "noise_mean": self.noise_mean.tolist(),
            "noise_var": self.noise_var.tolist(),
            "noise": self.noise.tolist(),
            "nets": self.nets.to_dict(),
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            system_name=d["system_name"], param_names=d["param_names"],
            nets=GanNets.from_dict(d["nets"]), params=np.asarray(d["params"], float),
            noise=np.asarray(d["noise"], float), history=d["history"], config=d["config"],
            seed=d["seed"], true_params=None if d.get("true_params") is None else np.asarray(d["true_params"]),
            wall_time=d.get("wall_time", 0.0), lambda_e=d.get("lambda_e"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_params_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["draw", *self.param_names])
            for k, row in enumerate(self.params):
                w.writerow([k] + [format(float(v), ".17g") for v in row])


def train_wgan(model: HyperPinnModel, dataset: Dataset, config: WganConfig, param_names=None,
               true_params=None, callback=None) -> InferenceResult:
    """Alternate ``critic_steps`` discriminator updates with one generator update.

    Full batch: every step uses all N_o real replicates and N_G = N_o fakes
    built from fresh latents.
    """
    if model.system_name != dataset.system_name:
        raise ValueError(f"emulator is for {model.system_name!r}, dataset for {dataset.system_name!r}")
    t_start = time.perf_counter()
    y_obs = check_observations(dataset.replicates, dataset.flat_dim)
    schedule = dataset.schedule
    n = y_obs.shape[0]
    obs_var = _unbiased_var(y_obs)
    # optional fixed affine map in front of the critic, so it sees noise at unit scale
    if config.standardize:
        centre, spread = y_obs.mean(axis=0), np.sqrt(obs_var)
        spread = np.where(spread > 0, spread, 1.0)
    else:
        centre, spread = 0.0, 1.0
    y_real = (y_obs - centre) / spread
    bounds = model.bounds
    rng = np.random.default_rng(config.seed)
    nets = GanNets.init(model.d_p, dataset.flat_dim, config, rng)
    d_adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    g_adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    history = []
    d_n = config.noise_dim

    def fakes():
        zp, ze = sample_latent(n, d_n, rng), sample_latent(n, d_n, rng)
        p, e = generate(nets, zp, ze, bounds)
        return (assemble_fake(model, schedule, p, e) - centre) / spread

    decay_from = int(config.decay_start * config.epochs)
    for epoch in range(config.epochs):
        if epoch >= decay_from:
            d_adam.lr = g_adam.lr = config.lr * (config.epochs - epoch) / (config.epochs - decay_from)
        for _ in range(config.critic_steps):
            y_fake = fakes()
            g = Graph()
            th = g.param("theta_d", nets.theta_d)
            ld, wdist, gp = loss_discriminator(nets, y_real, y_fake, config.lambda_d, rng, th)
            if not np.isfinite(ld.value):
                raise GanDiverged(f"non-finite discriminator loss at epoch {epoch}")
            nets.theta_d = adam_step(d_adam, {"theta_d": nets.theta_d}, g.grad(ld, ["theta_d"]))["theta_d"]

        real_scores = mlp_forward(nets.d_spec, nets.theta_d, y_real)
        if np.abs(real_scores).max() > config.score_limit:
            raise GanDiverged(f"discriminator scores diverged at epoch {epoch}")
        g = Graph()
        tp = g.param("theta_gp", nets.theta_gp)
        te = g.param("theta_ge", nets.theta_ge)
        zp, ze = sample_latent(n, d_n, rng), sample_latent(n, d_n, rng)
        p, e = generate(nets, zp, ze, bounds, tp, te)
        y_fake = (assemble_fake(model, schedule, p, e) - centre) / spread
        lg, le = loss_generator(nets, float(real_scores.mean()), y_fake, e, obs_var, config.lambda_e)
        if not np.isfinite(lg.value):
            raise GanDiverged(f"non-finite generator loss at epoch {epoch}")
        grads = g.grad(lg, ["theta_gp", "theta_ge"])
        upd = adam_step(g_adam, {"theta_gp": nets.theta_gp, "theta_ge": nets.theta_ge}, grads)
        nets.theta_gp, nets.theta_ge = upd["theta_gp"], upd["theta_ge"]

        if epoch % config.log_every == 0 or epoch == config.epochs - 1:
            rec = {
                "epoch": epoch,
                "loss_g": float(lg.value),
                "loss_d": float(ld.value),
                "loss_e": float(le.value),
                "gradient_penalty": float(gp.value),
                "wasserstein": float(wdist.value),
                "param_mean": p.value.mean(axis=0).tolist(),
                "noise_var": float(_unbiased_var(e.value).mean()),
            }
            history.append(rec)
            if callback is not None:
                callback(rec)

    zp = sample_latent(config.n_terminal, d_n, rng)
    ze = sample_latent(config.n_terminal, d_n, rng)
    p_draws, e_draws = generate(nets, zp, ze, bounds)
    return InferenceResult(
        system_name=dataset.system_name,
        param_names=list(param_names) if param_names is not None else [f"p{k}" for k in range(model.d_p)],
        nets=nets, params=p_draws, noise=e_draws, history=history, config=config.to_dict(),
        seed=config.seed, true_params=true_params, wall_time=time.perf_counter() - t_start,
        lambda_e=config.lambda_e,
    )


def summarize(result) -> dict:
    """Componentwise mean/std of parameter draws and per-entry noise statistics.

    Accepts an :class:`InferenceResult` or a previous summary (means carry over).
    """
    if isinstance(result, dict):
        return dict(result)
    return {
        "param_names": list(result.param_names),
        "param_mean": result.params.mean(axis=0),
        "param_std": result.params.std(axis=0, ddof=1) if len(result.params) > 1
        else np.zeros(result.params.shape[1]),
        "true_params": result.true_params,
        "noise_mean": result.noise_mean,
        "noise_var": result.noise_var,
    }


class WganInference(BaseEstimator):
    """Estimator wrapper around :func:`train_wgan`.

    ``fit(Y)`` takes the replicate matrix (N_o, flat_dim) observed on
    ``schedule``; afterwards ``params_`` holds the terminal parameter draws,
    ``sample(m)`` draws fresh ones and ``transform(Y)`` returns the fitted
    parameter mean for any replicate batch (one row).
    """

    def __init__(self, emulator=None, schedule=None, noise_dim=32, lambda_d=10.0, lambda_e=1.0,
                 lr=1e-5, epochs=100_000, critic_steps=5, n_terminal=10_000, standardize=False,
                 decay_start=1.0, random_state=0):
        self.emulator = emulator
        self.schedule = schedule
        self.noise_dim = noise_dim
        self.lambda_d = lambda_d
        self.lambda_e = lambda_e
        self.lr = lr
        self.epochs = epochs
        self.critic_steps = critic_steps
        self.n_terminal = n_terminal
        self.standardize = standardize
        self.decay_start = decay_start
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.emulator is None or self.schedule is None:
            raise ValueError("emulator and schedule must be set before fit")
        X = check_observations(X, self.schedule.flat_dim)
        from .systems import Trajectory
        ds = Dataset(self.emulator.system_name, self.schedule, X,
                     Trajectory(self.schedule.times, np.zeros((self.schedule.times.size, self.emulator.d_y)),
                                np.zeros(self.emulator.d_p)),
                     None, self.random_state)
        cfg = WganConfig(noise_dim=self.noise_dim, lambda_d=self.lambda_d, lambda_e=self.lambda_e,
                         lr=self.lr, epochs=self.epochs, critic_steps=self.critic_steps,
                         n_terminal=self.n_terminal, standardize=self.standardize,
                         decay_start=self.decay_start, seed=self.random_state)
        self.result_ = train_wgan(self.emulator, ds, cfg)
        self.params_ = self.result_.params
        self.noise_ = self.result_.noise
        return self

    def sample(self, m: int, seed=None):
        check_is_fitted(self, "result_")
        rng = np.random.default_rng(seed)
        nets = self.result_.nets
        p, e = generate(nets, sample_latent(m, nets.gp_spec.input_dim, rng),
                        sample_latent(m, nets.ge_spec.input_dim, rng), self.emulator.bounds)
        return p, e

    def transform(self, X):
        check_is_fitted(self, "result_")
        return self.params_.mean(axis=0, keepdims=True)
