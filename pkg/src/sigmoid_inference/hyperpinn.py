"""Hypernetwork-based PINN: a trained map from ODE parameters to solutions.

The hypernetwork ``h`` maps normalized parameters to the flat weights of a
small main network ``m(t)``; ``m`` evaluated at normalized time, followed by a
fixed per-component affine output scaling, approximates ``y(t; p)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import Graph, Var, stack
from .nets import AdamState, MlpSpec, adam_step, init_weights, mlp_forward, mlp_time_tangent
from .systems import IntegrationError, OdeSystem, Trajectory, integrate_rk4, make_system, validate_grid
from .validation import check_params

log = logging.getLogger(__name__)

__all__ = [
    "ParamBounds",
    "TrainingSet",
    "PinnTrainConfig",
    "HyperPinnModel",
    "HyperPinnSolver",
    "sample_parameters",
    "build_training_set",
    "emit_weights",
    "main_forward",
    "loss_data",
    "loss_physics",
    "total_loss",
    "train_hyperpinn",
    "TrainingDiverged",
]


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class ParamBounds:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=float)
        high = np.asarray(self.high, dtype=float)
        if low.shape != high.shape or low.ndim != 1:
            raise ValueError("bounds must be 1-D arrays of equal length")
        if not np.all(low < high):
            raise ValueError("bounds need low < high in every component")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def around(cls, p_true, lower: float = 0.5, upper: float = 1.5) -> "ParamBounds":
        p_true = np.asarray(p_true, dtype=float)
        a, b = lower * p_true, upper * p_true
        return cls(np.minimum(a, b), np.maximum(a, b))

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    @property
    def halfwidth(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)

    def normalize(self, p):
        return (p - self.mid) / self.halfwidth

    def contains(self, p) -> np.ndarray:
        p = np.asarray(p)
        return np.all((p >= self.low) & (p <= self.high), axis=-1)

    def to_dict(self):
        return {"low": self.low.tolist(), "high": self.high.tolist()}


def sample_parameters(bounds: ParamBounds, n: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return bounds.low + (bounds.high - bounds.low) * rng.random((n, bounds.low.size))


@dataclass
class TrainingSet:
    params: np.ndarray  # (N_p, d_p)
    collocation: np.ndarray  # (T_col,)
    solutions: np.ndarray  # (N_p, T_col, d_y)
    n_resampled: int = 0

    def __post_init__(self):
        if self.solutions.shape[:2] != (self.params.shape[0], self.collocation.size):
            raise ValueError("solutions must have shape (N_p, T_col, d_y)")

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for a in (self.params, self.collocation, self.solutions):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        return h.hexdigest()


def _cache_key(system, bounds, n_params, n_col, seed, substeps):
    blob = json.dumps([system.name, bounds.to_dict(), n_params, n_col, seed, substeps,
                       float(system.horizon), system.initial_state.tolist()])
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def build_training_set(system: OdeSystem, bounds: ParamBounds, n_params: int, n_col: int,
                       seed, substeps: int | None = None, cache_dir=None,
                       max_resample_frac: float = 0.1) -> TrainingSet:
    """Sample parameters and integrate each from the system's initial state.

    Parameters whose trajectory blows up are redrawn; more than
    ``max_resample_frac`` redraws aborts.
    """
    if bounds.low.size != system.d_p:
        raise ValueError("bounds dimension does not match the system")
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"trainset-{_cache_key(system, bounds, n_params, n_col, seed, substeps)}.npz"
        if path.exists():
            log.info("training-set cache hit: %s", path)
            with np.load(path) as z:
                return TrainingSet(z["params"], z["collocation"], z["solutions"], int(z["n_resampled"]))

    rng = np.random.default_rng(seed)
    params = bounds.low + (bounds.high - bounds.low) * rng.random((n_params, system.d_p))
    grid = np.linspace(0.0, system.horizon, n_col)
    solutions = np.empty((n_params, n_col, system.d_y))
    todo = np.arange(n_params)
    resampled = 0
    while todo.size:
        try:
            traj = integrate_rk4(system, params[todo], system.initial_state, grid, substeps)
        except IntegrationError as err:
            bad = todo[err.rows]
            resampled += bad.size
            if resampled > max_resample_frac * n_params:
                raise IntegrationError(
                    f"{system.name}: {resampled} of {n_params} sampled parameters blew up "
                    f"(last at t={err.time}); bounds are too wide", err.time, err.rows) from err
            log.warning("resampling %d parameter vectors after blow-up at t=%s", bad.size, err.time)
            params[bad] = bounds.low + (bounds.high - bounds.low) * rng.random((bad.size, system.d_p))
            continue
        solutions[todo] = np.swapaxes(traj.states, 0, 1)
        todo = todo[:0]
    ts = TrainingSet(params, grid, solutions, resampled)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, params=params, collocation=grid, solutions=solutions, n_resampled=resampled)
    return ts


@dataclass
class PinnTrainConfig:
    alpha: float = 1.0
    beta: float = 0.0
    n_params: int = 1000
    n_col: int = 101
    batch_size: int = 10_000
    lr: float = 1e-4
    epochs: int = 30_000
    seed: int = 0
    hyper_hidden: tuple = (64, 64, 64)
    main_hidden: tuple = (32, 32)
    bounds_scale: tuple = (0.5, 1.5)
    log_every: int = 100
    substeps: int | None = None
    decay_start: float = 1.0  # fraction of epochs after which lr decays linearly to 0; 1 keeps it constant

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("need alpha, beta >= 0 and alpha + beta > 0")
        if not 0.0 <= self.decay_start <= 1.0:
            raise ValueError("decay_start must lie in [0, 1]")
        self.hyper_hidden = tuple(self.hyper_hidden)
        self.main_hidden = tuple(self.main_hidden)
        self.bounds_scale = tuple(self.bounds_scale)

    def to_dict(self):
        d = asdict(self)
        for k in ("hyper_hidden", "main_hidden", "bounds_scale"):
            d[k] = list(d[k])
        return d


@dataclass
class HyperPinnModel:
    system_name: str
    hyper_spec: MlpSpec
    main_spec: MlpSpec
    theta_h: np.ndarray
    bounds: ParamBounds
    horizon: float
    y_shift: np.ndarray
    y_scale: np.ndarray
    log_space: bool = False
    history: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.hyper_spec.output_dim != self.main_spec.n_params:
            raise ValueError("hypernetwork output must match the main network's weight count")
        if self.hyper_spec.input_dim != self.bounds.low.size:
            raise ValueError("hypernetwork input must match the parameter dimension")
        self.theta_h = np.asarray(self.theta_h, dtype=float)
        if self.theta_h.shape != (self.hyper_spec.n_params,):
            raise ValueError("theta_h has the wrong length")

    @property
    def d_p(self):
        return self.hyper_spec.input_dim

    @property
    def d_y(self):
        return self.main_spec.output_dim

    def emit_weights(self, p, theta_h=None):
        return emit_weights(self, p, theta_h)

    def predict_states(self, p, times, theta_h=None):
        """Model-space outputs, shape (U, T, d_y) (log values for log-space systems)."""
        theta_m = emit_weights(self, p, theta_h)
        if theta_m.ndim == 1:
            theta_m = theta_m.reshape(1, -1)
        raw = main_forward(theta_m, self.main_spec, times, self.horizon)
        return raw * self.y_scale + self.y_shift

    def solve(self, p, times=None) -> Trajectory:
        """Trajectory at ``times`` for one parameter vector (natural scale)."""
        times = np.linspace(0, self.horizon, 161) if times is None else validate_grid(times)
        if times[0] < 0 or times[-1] > self.horizon * (1 + 1e-12):
            raise ValueError(f"times must lie within [0, {self.horizon}]")
        p = np.asarray(p, dtype=float)
        if p.shape != (self.d_p,):
            raise ValueError(f"expected a parameter vector of length {self.d_p}")
        states = self.predict_states(p[None], times)[0]
        if self.log_space:
            states = np.exp(states)
        return Trajectory(times, states, p)

    def to_dict(self) -> dict:
        return {
            "system_name": self.system_name,
            "hyper_spec": self.hyper_spec.to_dict(),
            "main_spec": self.main_spec.to_dict(),
            "theta_h": self.theta_h.tolist(),
            "bounds": self.bounds.to_dict(),
            "horizon": self.horizon,
            "normalization": {
                "p_mid": self.bounds.mid.tolist(),
                "p_halfwidth": self.bounds.halfwidth.tolist(),
                "t_map": "2*t/horizon - 1",
                "y_shift": self.y_shift.tolist(),
                "y_scale": self.y_scale.tolist(),
            },
            "log_space": self.log_space,
            "history": self.history,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d) -> "HyperPinnModel":
        norm = d["normalization"]
        return cls(
            system_name=d["system_name"],
            hyper_spec=MlpSpec.from_dict(d["hyper_spec"]),
            main_spec=MlpSpec.from_dict(d["main_spec"]),
            theta_h=np.asarray(d["theta_h"], float),
            bounds=ParamBounds(np.asarray(d["bounds"]["low"]), np.asarray(d["bounds"]["high"])),
            horizon=float(d["horizon"]),
            y_shift=np.asarray(norm["y_shift"], float),
            y_scale=np.asarray(norm["y_scale"], float),
            log_space=bool(d.get("log_space", False)),
            history=d.get("history", []),
            metadata=d.get("metadata", {}),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "HyperPinnModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def emit_weights(model: HyperPinnModel, p, theta_h=None):
    """Main-network weights for parameter vector(s) ``p``.

    ``p`` may be an array or a graph node of shape (d_p,) or (U, d_p);
    ``theta_h`` overrides the model's hypernetwork weights (e.g. a graph node).
    """
    theta_h = model.theta_h if theta_h is None else theta_h
    if p.shape[-1] != model.d_p:
        raise ValueError(f"parameter vector has {p.shape[-1]} entries, model expects {model.d_p}")
    if not isinstance(p, Var):
        p = np.asarray(p, dtype=float)
        if not np.all(model.bounds.contains(p)):
            log.warning("parameter outside the training box; emulator is extrapolating")
    z = (p - model.bounds.mid) / model.bounds.halfwidth
    return mlp_forward(model.hyper_spec, theta_h, z)


def _tau(times, horizon):
    times = np.asarray(times, dtype=float)
    return (2.0 * times / horizon - 1.0).reshape(1, -1, 1)


def main_forward(theta_m, main_spec: MlpSpec, t, horizon: float):
    """Raw main-network output at times ``t`` (mapped to [-1, 1] over [0, horizon]).

    ``theta_m`` of shape (n,) gives (T, d_y); (U, n) gives (U, T, d_y).
    """
    if theta_m.shape[-1] != main_spec.n_params:
        raise ValueError(f"theta_m has length {theta_m.shape[-1]}, main network needs {main_spec.n_params}")
    single = theta_m.ndim == 1
    if single:
        theta_m = theta_m.reshape(1, -1)
    out = mlp_forward(main_spec, theta_m, _tau(np.atleast_1d(t), horizon))
    return out[0] if single else out


def _grid_eval(model, ts, p_idx, theta_h, with_tangent):
    """Outputs on the (unique params) x (collocation) grid."""
    uniq, inv = np.unique(p_idx, return_inverse=True)
    theta_m = emit_weights(model, ts.params[uniq], theta_h)
    tau = _tau(ts.collocation, model.horizon)
    if with_tangent:
        dtau = np.full_like(tau, 2.0 / model.horizon)
        raw, draw = mlp_time_tangent(model.main_spec, theta_m, tau, dtau)
        return uniq, inv, raw * model.y_scale + model.y_shift, draw * model.y_scale
    raw = mlp_forward(model.main_spec, theta_m, tau)
    return uniq, inv, raw * model.y_scale + model.y_shift, None


def _select(grid_vals, inv, t_idx):
    if t_idx is None:
        return grid_vals  # every collocation point of every parameter in the batch
    return grid_vals[inv, np.asarray(t_idx)]


def _check_batch(p_idx, t_idx):
    p_idx = np.asarray(p_idx)
    if p_idx.size == 0:
        raise ValueError("empty batch")
    if t_idx is not None and np.shape(t_idx) != p_idx.shape:
        raise ValueError("p_idx and t_idx must have equal length")
    return p_idx


def _mean_sq(res):
    per = (res * res).sum(axis=-1)
    return per.mean()


def loss_data(model: HyperPinnModel, ts: TrainingSet, p_idx, t_idx=None, theta_h=None):
    """Mean squared Euclidean misfit to stored solutions over the batch.

    The batch is the pairs ``(p_idx[k], t_idx[k])``; with ``t_idx=None`` it is
    every collocation time of each parameter in ``p_idx`` (which must then be
    unique).
    """
    p_idx = _check_batch(p_idx, t_idx)
    uniq, inv, y, _ = _grid_eval(model, ts, p_idx, theta_h, False)
    target = ts.solutions[uniq]
    return _mean_sq(_select(y, inv, t_idx) - _select(target, inv, t_idx))


def _physics_residual(model, system, ts, uniq, y, dy):
    p = ts.params[uniq]
    ycomp = [y[..., i] for i in range(system.d_y)]
    pcomp = [p[:, k:k + 1] for k in range(system.d_p)]
    f = system.rhs(ycomp, pcomp)
    f = stack(f, axis=-1) if isinstance(y, Var) else np.stack(np.broadcast_arrays(*f), axis=-1)
    return dy - f


def loss_physics(model: HyperPinnModel, ts: TrainingSet, system: OdeSystem, p_idx, t_idx=None,
                 theta_h=None):
    """Mean squared ODE residual ||dm/dt - f(m, p)||^2 over the batch."""
    p_idx = _check_batch(p_idx, t_idx)
    uniq, inv, y, dy = _grid_eval(model, ts, p_idx, theta_h, True)
    res = _physics_residual(model, system, ts, uniq, y, dy)
    return _mean_sq(_select(res, inv, t_idx))


def total_loss(model, ts, system, p_idx, t_idx=None, theta_h=None, alpha=1.0, beta=0.0):
    """alpha * data loss + beta * physics loss, sharing one forward pass."""
    p_idx = _check_batch(p_idx, t_idx)
    need_dy = beta != 0
    uniq, inv, y, dy = _grid_eval(model, ts, p_idx, theta_h, need_dy)
    l_data = _mean_sq(_select(y, inv, t_idx) - _select(ts.solutions[uniq], inv, t_idx))
    if not need_dy:
        return alpha * l_data, l_data, None
    res = _physics_residual(model, system, ts, uniq, y, dy)
    l_phys = _mean_sq(_select(res, inv, t_idx))
    return alpha * l_data + beta * l_phys, l_data, l_phys


def init_model(system: OdeSystem, config: PinnTrainConfig, ts: TrainingSet, rng) -> HyperPinnModel:
    bounds = ParamBounds.around(system.true_params, *config.bounds_scale)
    main_spec = MlpSpec(1, system.d_y, config.main_hidden)
    hyper_spec = MlpSpec(system.d_p, main_spec.n_params, config.hyper_hidden)
    theta_h = init_weights(hyper_spec, rng, last_scale=0.1)
    # output bias of h starts at a Glorot draw of the main network
    fi, fo, s, e = hyper_spec.layers[-1]
    theta_h[s + fi * fo:e] = init_weights(main_spec, rng)
    y_shift = ts.solutions.mean(axis=(0, 1))
    y_scale = ts.solutions.std(axis=(0, 1))
    y_scale = np.where(y_scale > 1e-12, y_scale, 1.0)
    return HyperPinnModel(system.name, hyper_spec, main_spec, theta_h, bounds, float(system.horizon),
                          y_shift, y_scale, system.log_space)


def train_hyperpinn(system: OdeSystem, config: PinnTrainConfig, training_set: TrainingSet | None = None,
                    cache_dir=None, callback=None) -> HyperPinnModel:
    """Minimize alpha * L_data + beta * L_physics with Adam.

    Each epoch shuffles the parameter samples and splits them into batches of
    about ``batch_size`` (parameter, collocation time) pairs, every parameter
    contributing all of its collocation times.
    """
    bounds = ParamBounds.around(system.true_params, *config.bounds_scale)
    ts = training_set or build_training_set(system, bounds, config.n_params, config.n_col,
                                            config.seed, config.substeps, cache_dir)
    rng = np.random.default_rng([config.seed, 1])
    model = init_model(system, config, ts, rng)
    if config.beta == 0:
        log.info("beta = 0: physics-loss graph disabled")
    n_p = ts.params.shape[0]
    per_batch = max(1, config.batch_size // ts.collocation.size)
    n_batches = max(1, -(-n_p // per_batch))
    adam = AdamState(lr=config.lr)
    theta_h = model.theta_h.copy()
    history = []
    decay_from = int(config.decay_start * config.epochs)
    for epoch in range(config.epochs):
        if epoch >= decay_from:
            adam.lr = config.lr * (config.epochs - epoch) / (config.epochs - decay_from)
        order = rng.permutation(n_p)
        sums = np.zeros(3)
        for b, chunk in enumerate(np.array_split(order, n_batches)):
            g = Graph()
            th = g.param("theta_h", theta_h)
            loss, l_data, l_phys = total_loss(model, ts, system, np.sort(chunk), None, th,
                                              config.alpha, config.beta)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(f"non-finite HyperPINN loss at epoch {epoch}, batch {b}")
            grads = g.grad(loss, wrt=["theta_h"])
            theta_h = adam_step(adam, {"theta_h": theta_h}, grads)["theta_h"]
            w = chunk.size / n_p
            sums += w * np.array([float(loss.value), float(l_data.value),
                                  float(l_phys.value) if l_phys is not None else 0.0])
        if epoch % config.log_every == 0 or epoch == config.epochs - 1:
            history.append({"epoch": epoch, "loss": sums[0], "data": sums[1], "physics": sums[2]})
            if callback is not None:
                callback(epoch, sums)
    model.theta_h = theta_h
    model.history = history
    model.metadata = {
        "config": config.to_dict(),
        "training_set_hash": ts.content_hash(),
        "n_resampled": ts.n_resampled,
        "final_loss": history[-1] if history else None,
    }
    return model


class HyperPinnSolver(BaseEstimator):
    """Estimator wrapper: ``fit`` trains the emulator, ``predict`` maps parameters to trajectories.

    ``predict(P)`` returns an array (n, len(times), d_y) evaluated at
    ``self.times_`` (``n_eval`` uniform points on [0, horizon]).
    """

    def __init__(self, system="fitzhugh_nagumo", alpha=1.0, beta=0.0, n_params=1000, n_col=101,
                 batch_size=10_000, lr=1e-4, epochs=30_000, hyper_hidden=(64, 64, 64),
                 main_hidden=(32, 32), bounds_scale=(0.5, 1.5), n_eval=161, cache_dir=None,
                 random_state=0):
        self.system = system
        self.alpha = alpha
        self.beta = beta
        self.n_params = n_params
        self.n_col = n_col
        self.batch_size = batch_size
        self.lr = lr
        self.epochs = epochs
        self.hyper_hidden = hyper_hidden
        self.main_hidden = main_hidden
        self.bounds_scale = bounds_scale
        self.n_eval = n_eval
        self.cache_dir = cache_dir
        self.random_state = random_state

    def _system(self):
        return make_system(self.system) if isinstance(self.system, str) else self.system

    def _config(self):
        return PinnTrainConfig(
            alpha=self.alpha, beta=self.beta, n_params=self.n_params, n_col=self.n_col,
            batch_size=self.batch_size, lr=self.lr, epochs=self.epochs, seed=self.random_state,
            hyper_hidden=self.hyper_hidden, main_hidden=self.main_hidden,
            bounds_scale=self.bounds_scale,
        )

    def fit(self, X=None, y=None):
        """Train on a :class:`TrainingSet` ``X`` (built from the config when None)."""
        system = self._system()
        self.model_ = train_hyperpinn(system, self._config(), X, self.cache_dir)
        self.times_ = np.linspace(0, system.horizon, self.n_eval)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        P = check_params(X, self.model_.d_p)
        states = self.model_.predict_states(P, self.times_)
        return np.exp(states) if self.model_.log_space else states

    def solve(self, p, times=None) -> Trajectory:
        check_is_fitted(self, "model_")
        return self.model_.solve(p, times)
