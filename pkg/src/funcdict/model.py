"""PointNet-lite dictionary network in numpy, with an exact backward pass and Adam.

Per point: 3 -> 64 -> 64 (ReLU). A global feature is max-pooled over points and
concatenated back onto every point (128), followed by 128 -> 64 (ReLU) -> k
logits. The constraint mode picks the output activation:

* ``seg``: softmax over atoms (rows of A sum to one)
* ``key``: softmax over points (columns of A sum to one)
* ``map``: linear logits, each column scaled to unit Euclidean norm

All functions accept a single cloud ``(n, 3)`` or a batch ``(B, n, 3)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, InvalidInput, InvalidState, NumericError
from .numerics import RngStream

NORM_GUARD = 1e-12


class ConstraintMode(str, enum.Enum):
    SEG = "seg"
    KEY = "key"
    MAP = "map"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"segmentation": "seg", "keypoint": "key", "smoothmap": "map", "smooth": "map"}
        v = str(value).lower()
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise InvalidConfig(f"unknown constraint mode {value!r}") from None


@dataclass(frozen=True)
class Architecture:
    k: int = 10
    local: tuple = (64, 64)
    head: tuple = (64,)
    in_dim: int = 3

    def __post_init__(self):
        if int(self.k) < 1:
            raise InvalidConfig(f"k must be >= 1, got {self.k}")
        if not self.local:
            raise InvalidConfig("need at least one per-point layer before pooling")

    def layer_shapes(self):
        dims = [self.in_dim, *self.local]
        shapes = [(dims[i], dims[i + 1]) for i in range(len(self.local))]
        dims = [2 * self.local[-1], *self.head, self.k]
        shapes += [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        return shapes

    def to_dict(self):
        return {"k": self.k, "local": list(self.local), "head": list(self.head), "in_dim": self.in_dim}

    @classmethod
    def from_dict(cls, d):
        return cls(k=int(d["k"]), local=tuple(d["local"]), head=tuple(d["head"]), in_dim=int(d["in_dim"]))


@dataclass
class ModelParams:
    arch: Architecture
    weights: list  # [W0, b0, W1, b1, ...] in layer order

    def copy(self):
        return ModelParams(self.arch, [w.copy() for w in self.weights])

    def names(self):
        return [f"{kind}{i}" for i in range(len(self.weights) // 2) for kind in ("W", "b")]

    def flat(self):
        return np.concatenate([w.ravel() for w in self.weights])


@dataclass
class ForwardTrace:
    params: ModelParams
    mode: ConstraintMode
    x: np.ndarray
    pre: list  # pre-activations of every hidden layer
    post: list  # post-ReLU activations (inputs to the next layer)
    pool_idx: np.ndarray  # (B, C) argmax point per pooled channel
    concat: np.ndarray
    logits: np.ndarray
    A: np.ndarray
    col_norm: np.ndarray | None = None
    single: bool = False


def init_params(arch: Architecture, rng: RngStream) -> ModelParams:
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases."""
    if not isinstance(arch, Architecture):
        arch = Architecture(**arch)
    gen = rng.gen
    weights = []
    for fan_in, fan_out in arch.layer_shapes():
        weights.append(gen.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        weights.append(np.zeros(fan_out))
    return ModelParams(arch, weights)


def _check(arr, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation at layer {layer}", layer=layer)


def activate(logits, mode):
    """Apply the mode's output activation; returns (A, column norms or None)."""
    if mode is ConstraintMode.SEG:
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True), None
    if mode is ConstraintMode.KEY:
        e = np.exp(logits - logits.max(axis=-2, keepdims=True))
        return e / e.sum(axis=-2, keepdims=True), None
    r = np.sqrt((logits**2).sum(axis=-2, keepdims=True))
    r = np.where(r < NORM_GUARD, r + NORM_GUARD, r)
    return logits / r, r


def activation_backward(G, A, mode, col_norm=None):
    """Gradient w.r.t. logits given G = dL/dA."""
    if mode is ConstraintMode.SEG:
        return A * (G - (G * A).sum(axis=-1, keepdims=True))
    if mode is ConstraintMode.KEY:
        return A * (G - (G * A).sum(axis=-2, keepdims=True))
    return (G - A * (G * A).sum(axis=-2, keepdims=True)) / col_norm


def forward(params: ModelParams, cloud, mode):
    mode = ConstraintMode.parse(mode)
    x = np.asarray(cloud, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != params.arch.in_dim:
        raise InvalidInput(f"expected (B, n, {params.arch.in_dim}) points, got {x.shape}")
    if x.shape[1] < params.arch.k:
        raise InvalidInput(f"need n >= k, got n={x.shape[1]}, k={params.arch.k}")
    W = params.weights
    n_local = len(params.arch.local)
    n_layers = len(W) // 2
    pre, post = [], []
    h = x
    for i in range(n_local):
        z = h @ W[2 * i] + W[2 * i + 1]
        _check(z, i)
        h = np.maximum(z, 0.0)
        pre.append(z)
        post.append(h)
    # argmax returns the first maximal index, i.e. ties go to the lowest point id
    pool_idx = h.argmax(axis=1)
    g = np.take_along_axis(h, pool_idx[:, None, :], axis=1)
    concat = np.concatenate([h, np.broadcast_to(g, h.shape)], axis=-1)
    h = concat
    for i in range(n_local, n_layers - 1):
        z = h @ W[2 * i] + W[2 * i + 1]
        _check(z, i)
        h = np.maximum(z, 0.0)
        pre.append(z)
        post.append(h)
    logits = h @ W[-2] + W[-1]
    _check(logits, n_layers - 1)
    A, col_norm = activate(logits, mode)
    _check(A, n_layers)
    trace = ForwardTrace(params, mode, x, pre, post, pool_idx, concat, logits, A, col_norm, single)
    return (A[0] if single else A), trace


def backward(trace: ForwardTrace, dLdA, params: ModelParams | None = None):
    """Gradients of sum_b <dLdA_b, A_b> w.r.t. every weight, as a list aligned with params.weights."""
    if params is not None and params is not trace.params:
        if params.arch != trace.params.arch or any(
            a.shape != b.shape for a, b in zip(params.weights, trace.params.weights)
        ):
            raise InvalidState("trace was produced by a different parameter set")
    G = np.asarray(dLdA, dtype=float)
    if trace.single and G.ndim == 2:
        G = G[None]
    if G.shape != trace.A.shape:
        raise InvalidState(f"dLdA shape {G.shape} does not match dictionary shape {trace.A.shape}")
    if not np.all(np.isfinite(G)):
        raise NumericError("non-finite upstream gradient")
    W = trace.params.weights
    arch = trace.params.arch
    n_local = len(arch.local)
    n_layers = len(W) // 2
    grads = [None] * len(W)

    d = activation_backward(G, trace.A, trace.mode, trace.col_norm)
    inputs = [trace.x, *trace.post[: n_local - 1], trace.concat, *trace.post[n_local:]]
    for i in range(n_layers - 1, n_local - 1, -1):
        h_in = inputs[i]
        grads[2 * i] = np.einsum("bni,bnj->ij", h_in, d)
        grads[2 * i + 1] = d.sum(axis=(0, 1))
        d = d @ W[2 * i].T
        if i > n_local:
            d = d * (trace.pre[i - 1] > 0)
    C = arch.local[-1]
    dh = d[..., :C].copy()
    dg = d[..., C:].sum(axis=1)  # (B, C)
    b_idx = np.arange(dh.shape[0])[:, None]
    c_idx = np.arange(C)[None, :]
    np.add.at(dh, (b_idx, trace.pool_idx, c_idx), dg)
    d = dh
    for i in range(n_local - 1, -1, -1):
        d = d * (trace.pre[i] > 0)
        grads[2 * i] = np.einsum("bni,bnj->ij", inputs[i], d)
        grads[2 * i + 1] = d.sum(axis=(0, 1))
        if i > 0:
            d = d @ W[2 * i].T
    return grads


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(w) for w in params.weights],
            0, lr, beta1, beta2, eps,
        )


def adam_step(params: ModelParams, grads, state: OptimizerState):
    """One bias-corrected Adam update. Returns new (params, state); inputs are not modified."""
    if len(grads) != len(params.weights):
        raise InvalidInput("gradient list does not match parameters")
    for g, w in zip(grads, params.weights):
        if g.shape != w.shape:
            raise InvalidInput(f"gradient shape {g.shape} != parameter shape {w.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; Adam step aborted")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_w, new_m, new_v = [], [], []
    for w, g, m, v in zip(params.weights, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_w.append(w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = OptimizerState(new_m, new_v, t, state.lr, b1, b2, state.eps)
    return ModelParams(params.arch, new_w), new_state
