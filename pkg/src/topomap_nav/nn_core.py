"""Dense networks with hand-written reverse-mode gradients and Adam.

Inputs may be a single vector ``(in,)`` or a batch ``(B, in)``; parameter
gradients are summed over the batch, so callers average their loss themselves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import NumericError, ParameterError

ACTIVATIONS = ("relu", "sigmoid", "linear")


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    act: str = "linear"

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.act!r}")
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ParameterError(f"layer shapes w{self.w.shape} b{self.b.shape} do not match")


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if b.w.shape[1] != a.w.shape[0]:
                raise ParameterError("adjacent layer dimensions do not compose")

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[0]

    def params(self) -> list[np.ndarray]:
        """Flat list ``[w0, b0, w1, b1, ...]``; gradients use the same layout."""
        out = []
        for layer in self.layers:
            out += [layer.w, layer.b]
        return out

    def copy(self) -> Network:
        return Network([Layer(l.w.copy(), l.b.copy(), l.act) for l in self.layers])

    def __call__(self, x):
        return forward(self, x)[0]


@dataclass
class Cache:
    inputs: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]  # pre-activation of each layer
    outputs: list[np.ndarray]  # post-activation of each layer
    single: bool


def init_network(sizes: list[int], acts: list[str], seed: int) -> Network:
    """Xavier-uniform weights, zero biases."""
    if len(acts) != len(sizes) - 1:
        raise ParameterError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], acts):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(Layer(rng.uniform(-lim, lim, size=(fan_out, fan_in)), np.zeros(fan_out), act))
    return Network(layers)


def _activate(act, z):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "sigmoid":
        return sigmoid(z)
    return z


def forward(p: Network, x) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != p.in_dim:
        raise ParameterError(f"input dim {x.shape} does not match network input {p.in_dim}")
    cache = Cache([], [], [], single)
    for layer in p.layers:
        cache.inputs.append(h)
        z = h @ layer.w.T + layer.b
        h = _activate(layer.act, z)
        cache.preacts.append(z)
        cache.outputs.append(h)
    return (h[0] if single else h), cache


def backward(p: Network, cache: Cache, upstream, wrt_preact: bool = False):
    """Gradients of ``sum(upstream * output)``.

    With ``wrt_preact=True`` the upstream gradient is taken with respect to the
    last layer's pre-activation, which lets losses fold a final sigmoid into a
    numerically stable logit form.
    Returns ``(param_grads, input_grad)`` with ``param_grads`` laid out as ``Network.params()``.
    """
    g = np.asarray(upstream, dtype=np.float64)
    if cache.single:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise ParameterError(f"upstream gradient {g.shape} does not match output {cache.outputs[-1].shape}")
    grads: list[np.ndarray] = []
    for idx in range(len(p.layers) - 1, -1, -1):
        layer = p.layers[idx]
        if not (wrt_preact and idx == len(p.layers) - 1):
            if layer.act == "relu":
                g = g * (cache.preacts[idx] > 0)
            elif layer.act == "sigmoid":
                s = cache.outputs[idx]
                g = g * s * (1.0 - s)
        grads = [g.T @ cache.inputs[idx], g.sum(axis=0)] + grads
        g = g @ layer.w
    return grads, (g[0] if cache.single else g)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0


def adam_init(params: list[np.ndarray], lr: float = 1e-3) -> AdamState:
    return AdamState([np.zeros_like(q) for q in params], [np.zeros_like(q) for q in params], lr=lr)


def adam_update(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """One bias-corrected Adam step, applied in place. Returns ``(params, state)``."""
    if len(params) != len(grads) or any(q.shape != g.shape for q, g in zip(params, grads)):
        raise ParameterError("gradient shapes do not match parameters")
    if not all(np.isfinite(g).all() for g in grads):
        raise NumericError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for q, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        q -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    n_checked: int
    worst: tuple = field(default=())


def finite_diff_check(
    params: list[np.ndarray],
    loss_fn: Callable[[], tuple[float, list[np.ndarray]]],
    tolerance: float = 1e-4,
    eps: float = 1e-6,
    floor: float = 1e-6,
    max_per_tensor: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn()`` evaluates the loss at the current values of ``params`` (which
    are perturbed in place) and returns ``(loss, grads)``. The per-entry error
    is ``|a - n| / max(|a|, |n|, floor)``.
    """
    _, analytic = loss_fn()
    analytic = [np.array(g, dtype=np.float64) for g in analytic]
    rng = np.random.default_rng(seed)
    worst, worst_at, checked = 0.0, (), 0
    for t, (q, g) in enumerate(zip(params, analytic)):
        flat_idx = np.arange(q.size)
        if max_per_tensor is not None and q.size > max_per_tensor:
            flat_idx = rng.choice(q.size, size=max_per_tensor, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, q.shape)
            orig = q[idx]
            q[idx] = orig + eps
            lp = loss_fn()[0]
            q[idx] = orig - eps
            lm = loss_fn()[0]
            q[idx] = orig
            num = (lp - lm) / (2 * eps)
            a = g[idx]
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            checked += 1
            if rel > worst:
                worst, worst_at = rel, (t, idx, float(a), float(num))
    return GradCheckReport(worst <= tolerance, float(worst), checked, worst_at)


def network_to_dict(p: Network) -> dict:
    return {
        "format_version": 1,
        "layers": [{"act": l.act, "w": l.w.tolist(), "b": l.b.tolist()} for l in p.layers],
    }


def network_from_dict(d: dict) -> Network:
    if d.get("format_version") != 1:
        raise ParameterError(f"unsupported checkpoint version {d.get('format_version')!r}")
    return Network([Layer(np.array(l["w"], dtype=np.float64).reshape(len(l["b"]), -1), np.array(l["b"]), l["act"]) for l in d["layers"]])


def save_network(p: Network, path) -> None:
    # json writes floats with repr(), which round-trips doubles exactly
    Path(path).write_text(json.dumps(network_to_dict(p)))


def load_network(path) -> Network:
    return network_from_dict(json.loads(Path(path).read_text()))
