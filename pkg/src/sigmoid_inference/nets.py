"""Fully connected tanh networks over flat weight vectors, plus Adam.

Every function here works on plain numpy arrays (fast path, no tape) and on
:class:`~sigmoid_inference.autodiff.Var` nodes (differentiable path) with the
same code.  A weight vector ``theta`` is laid out layer by layer as the
row-major matrix ``W`` of shape (in, out) followed by the bias ``b``, so a
layer computes ``x @ W + b``.  A 2-D
``theta`` of shape (U, n) holds one weight set per row ("per-sample" weights,
as emitted by a hypernetwork).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var, tanh_tangent

__all__ = [
    "MlpSpec",
    "init_weights",
    "mlp_forward",
    "mlp_time_tangent",
    "time_derivative",
    "mlp_input_gradient",
    "input_gradient_norm",
    "AdamState",
    "adam_step",
]


def _tanh(x):
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


def _sqrt(x):
    return x.sqrt() if isinstance(x, Var) else np.sqrt(x)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = (64, 64, 64)
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")
        if self.activation != "tanh":
            raise ValueError("only tanh hidden activations are supported")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def layers(self) -> list[tuple[int, int, int, int]]:
        """(fan_in, fan_out, start, stop) of each layer's block in ``theta``."""
        out, pos = [], 0
        w = self.widths
        for fi, fo in zip(w[:-1], w[1:]):
            n = fo * fi + fo
            out.append((fi, fo, pos, pos + n))
            pos += n
        return out

    @property
    def n_params(self) -> int:
        return self.layers[-1][3]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim,
                "hidden": list(self.hidden), "activation": self.activation}

    @classmethod
    def from_dict(cls, d) -> "MlpSpec":
        return cls(d["input_dim"], d["output_dim"], tuple(d["hidden"]), d.get("activation", "tanh"))


def init_weights(spec: MlpSpec, rng: np.random.Generator, last_scale: float = 1.0) -> np.ndarray:
    """Glorot-normal weights, zero biases."""
    theta = np.zeros(spec.n_params)
    layers = spec.layers
    for k, (fi, fo, s, _) in enumerate(layers):
        std = np.sqrt(2.0 / (fi + fo))
        if k == len(layers) - 1:
            std *= last_scale
        theta[s:s + fi * fo] = rng.standard_normal(fi * fo) * std
    return theta


def _unpack(spec: MlpSpec, theta, layer):
    fi, fo, s, e = spec.layers[layer]
    batch = tuple(theta.shape[:-1])
    W = theta[..., s:s + fi * fo].reshape(batch + (fi, fo))
    b = theta[..., s + fi * fo:e]
    if batch:
        b = b.reshape(batch + (1, fo))
    return W, b


def _check(spec, theta):
    if theta.shape[-1] != spec.n_params:
        raise ValueError(f"weight vector has length {theta.shape[-1]}, spec needs {spec.n_params}")


def mlp_forward(spec: MlpSpec, theta, x, return_hidden: bool = False):
    """Evaluate the network.

    Shared weights: ``x`` is (..., input_dim).  Per-sample weights (``theta``
    of shape (U, n)): ``x`` is (U or 1, T, input_dim) and the result is
    (U, T, output_dim).
    """
    _check(spec, theta)
    h = x
    hidden = []
    n_layers = len(spec.layers)
    for k in range(n_layers):
        W, b = _unpack(spec, theta, k)
        z = h @ W + b
        if k < n_layers - 1:
            h = _tanh(z)
            hidden.append(h)
        else:
            h = z
    return (h, hidden) if return_hidden else h


def mlp_time_tangent(spec: MlpSpec, theta, x, dx):
    """Forward-mode tangent of the network output along input direction ``dx``.

    Built from ordinary arithmetic, so when ``theta`` is a graph node the
    tangent is itself differentiable with respect to the weights.
    Returns ``(output, tangent)``.
    """
    _check(spec, theta)
    h, dh = x, dx
    n_layers = len(spec.layers)
    for k in range(n_layers):
        W, b = _unpack(spec, theta, k)
        z = h @ W + b
        dz = dh @ W
        if k < n_layers - 1:
            h = _tanh(z)
            dh = tanh_tangent(h, dz)
        else:
            h, dh = z, dz
    return h, dh


def time_derivative(spec: MlpSpec, theta, t):
    """``(m(t), dm/dt)`` for a scalar-input network at scalar time ``t``."""
    if spec.input_dim != 1:
        raise ValueError("time derivative needs a network with scalar input")
    if (t.ndim if isinstance(t, Var) else np.ndim(t)) != 0:
        raise ValueError("t must be a scalar")
    x = t.reshape(1, 1) if isinstance(t, Var) else np.full((1, 1), float(t))
    out, tangent = mlp_time_tangent(spec, theta, x, np.ones((1, 1)))
    return out.reshape(spec.output_dim), tangent.reshape(spec.output_dim)


def mlp_input_gradient(spec: MlpSpec, theta, x):
    """Gradient of a scalar-output network with respect to its input, per row.

    Uses the transposed (backward) chain written as forward graph nodes, so
    reverse mode over the result yields second-order weight gradients.
    """
    if spec.output_dim != 1:
        raise ValueError("input gradient needs a scalar-output network")
    out, hidden = mlp_forward(spec, theta, x, return_hidden=True)
    n_layers = len(spec.layers)
    W_last, _ = _unpack(spec, theta, n_layers - 1)
    g = W_last.swapaxes(-1, -2)  # d out / d h_L, shape (1, H_L)
    for k in range(n_layers - 2, -1, -1):
        gz = tanh_tangent(hidden[k], g)
        W, _ = _unpack(spec, theta, k)
        g = gz @ W.swapaxes(-1, -2)
    return out, g


def input_gradient_norm(spec: MlpSpec, theta, x):
    """Euclidean norm of d net / d x for each row of ``x``; returns (output, norms)."""
    out, g = mlp_input_gradient(spec, theta, x)
    return out, _sqrt((g * g).sum(axis=-1))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update; returns new parameter arrays and updates ``state``."""
    state.step += 1
    t = state.step
    new = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=float)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, param has {np.shape(p)}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        elif m.shape != g.shape:
            raise ValueError(f"moment shape mismatch for {name!r}")
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        new[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return new
