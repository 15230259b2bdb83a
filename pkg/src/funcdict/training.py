"""Alternating min-min training: solve for x at fixed A, then step the network at fixed x."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import geometry as geo
from .errors import InvalidConfig, InvalidInput, NumericError
from .loss import grad_wrt_A, l21_norm
from .model import (
    Architecture,
    ConstraintMode,
    ModelParams,
    OptimizerState,
    adam_step,
    backward,
    forward,
    init_params,
)
from .numerics import RngStream
from .solver import solve_box_ls, solve_ridge_ls, solve_shared_box_ls

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    k: int = 10
    gamma: float = 1.0
    eta: float = 1e-3
    mode: str = "seg"
    batch_size: int = 16
    epochs: int = 20
    steps: int = 0  # if > 0, overrides epochs
    noise_prob: float = 0.0
    partial_fraction: float = 0.0
    siamese: bool = False
    seed: int = 0
    sigma: float = geo.DEFAULT_SIGMA
    num_bases: int = 10
    knn: int = 12
    ridge_eps: float = 1e-9
    local: tuple = (64, 64)
    head: tuple = (64,)

    def __post_init__(self):
        self.mode = ConstraintMode.parse(self.mode).value
        self.local, self.head = tuple(self.local), tuple(self.head)
        if self.k < 1:
            raise InvalidConfig("k must be >= 1")
        if self.gamma < 0:
            raise InvalidConfig("gamma must be >= 0")
        if not self.eta > 0:
            raise InvalidConfig("eta must be > 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not 0 <= self.noise_prob <= 1 or not 0 <= self.partial_fraction < 1:
            raise InvalidConfig("noise_prob must lie in [0, 1] and partial_fraction in [0, 1)")
        if self.siamese and self.mode == "map":
            raise InvalidConfig("siamese training needs labelled functions (seg or key mode)")

    @property
    def arch(self):
        return Architecture(k=self.k, local=self.local, head=self.head)

    def to_dict(self):
        d = asdict(self)
        d["local"], d["head"] = list(self.local), list(self.head)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StepMetrics:
    F_mean: float
    l21_mean: float
    loss: float
    solver_iters_mean: float
    solver_iters_max: int
    unconverged: int = 0


def _stack(shapes):
    n = {s.n for s in shapes}
    if len(n) != 1:
        raise InvalidInput(f"batch mixes point counts {sorted(n)}")
    return np.stack([s.points for s in shapes])


def _inner_solve(A, f, mode, cfg):
    if mode is ConstraintMode.MAP:
        x = solve_ridge_ls(A, f, cfg.ridge_eps)
        return x, 0, True
    x, rep = solve_box_ls(A, f)
    return x, rep.iterations, rep.converged


def _finish(params, state, grads, F, l21, iters, unconv, ids, gamma):
    loss = F + gamma * l21
    bad = ~np.isfinite(loss)
    if bad.any():
        raise NumericError(f"non-finite loss for sample {ids[int(np.argmax(bad))]}", sample_id=ids[int(np.argmax(bad))])
    new_params, new_state = adam_step(params, grads, state)
    metrics = StepMetrics(
        float(F.mean()), float(l21.mean()), float(loss.mean()),
        float(np.mean(iters)), int(np.max(iters)), int(unconv),
    )
    return new_params, new_state, metrics


def batch_gradients(params: ModelParams, batch, cfg: TrainConfig):
    """Mean-over-batch gradient of the loss at the inner optimum, plus per-sample stats."""
    mode = ConstraintMode(cfg.mode)
    shapes = [s for s, _ in batch]
    fs = [np.asarray(p.values, dtype=float) for _, p in batch]
    A, trace = forward(params, _stack(shapes), mode)
    B = len(batch)
    G = np.empty_like(A)
    F, l21, iters, unconv = np.empty(B), np.empty(B), [], 0
    for b in range(B):
        x, it, ok = _inner_solve(A[b], fs[b], mode, cfg)
        r = A[b] @ x - fs[b]
        F[b], l21[b] = r @ r, l21_norm(A[b])
        G[b] = grad_wrt_A(A[b], x, fs[b], cfg.gamma) / B
        iters.append(it)
        unconv += not ok
    return backward(trace, G), F, l21, iters, unconv


def train_step(params: ModelParams, state: OptimizerState, batch, cfg: TrainConfig):
    grads, F, l21, iters, unconv = batch_gradients(params, batch, cfg)
    return _finish(params, state, grads, F, l21, iters, unconv, [s.shape_id for s, _ in batch], cfg.gamma)


def siamese_gradients(params: ModelParams, pairs, cfg: TrainConfig):
    mode = ConstraintMode(cfg.mode)
    if mode is ConstraintMode.MAP:
        raise InvalidConfig("siamese training is defined for box-constrained modes")
    for pair in pairs:
        if len(pair) != 2 or pair[1] is None:
            raise InvalidInput("siamese batch entries must be ((shape, f), (shape, f)) pairs")
    B = len(pairs)
    shapes = [p[0][0] for p in pairs] + [p[1][0] for p in pairs]
    fs = [np.asarray(p[0][1].values, dtype=float) for p in pairs] + [
        np.asarray(p[1][1].values, dtype=float) for p in pairs
    ]
    A, trace = forward(params, _stack(shapes), mode)
    G = np.empty_like(A)
    F, l21, iters, unconv = np.empty(B), np.empty(B), [], 0
    for b in range(B):
        A1, A2, f1, f2 = A[b], A[B + b], fs[b], fs[B + b]
        x, rep = solve_shared_box_ls(A1, f1, A2, f2)
        F[b] = rep.residual
        l21[b] = l21_norm(A1) + l21_norm(A2)
        G[b] = grad_wrt_A(A1, x, f1, cfg.gamma) / B
        G[B + b] = grad_wrt_A(A2, x, f2, cfg.gamma) / B
        iters.append(rep.iterations)
        unconv += not rep.converged
    return backward(trace, G), F, l21, iters, unconv


def train_step_siamese(params: ModelParams, state: OptimizerState, pairs, cfg: TrainConfig):
    grads, F, l21, iters, unconv = siamese_gradients(params, pairs, cfg)
    ids = [f"{p[0][0].shape_id}|{p[1][0].shape_id}" for p in pairs]
    return _finish(params, state, grads, F, l21, iters, unconv, ids, cfg.gamma)


# ---------------------------------------------------------------------------
# probe sampling schedule


def partial_blacklist(shapes, fraction, rng: RngStream):
    """Allowed part ids per shape after globally hiding ``fraction`` of (shape, part) pairs."""
    pairs = [(i, p) for i, s in enumerate(shapes) for p in range(s.num_parts)]
    hidden = set()
    if fraction > 0:
        n_hide = int(round(fraction * len(pairs)))
        pick = rng.gen.choice(len(pairs), size=n_hide, replace=False)
        hidden = {pairs[j] for j in pick.tolist()}
    return [tuple(p for p in range(s.num_parts) if (i, p) not in hidden) for i, s in enumerate(shapes)]


class ProbeSampler:
    """Draws the training function for a shape at a given (step, slot).

    Every draw comes from its own substream keyed by (step, slot), so a
    resumed run sees exactly the functions an uninterrupted run would.
    """

    def __init__(self, shapes, cfg: TrainConfig, rng: RngStream):
        self.shapes = shapes
        self.cfg = cfg
        self.mode = ConstraintMode(cfg.mode)
        self.rng = rng
        self.allowed = partial_blacklist(shapes, cfg.partial_fraction, rng.child("partial"))
        self.bases = None
        if self.mode is ConstraintMode.MAP:
            self.bases = [geo.laplacian_basis(s.points, cfg.num_bases, cfg.knn) for s in shapes]
        if self.mode is ConstraintMode.KEY and any(len(s.keypoint_labels) == 0 for s in shapes):
            raise InvalidInput("keypoint training needs keypoints on every shape")

    def usable(self):
        if self.mode is ConstraintMode.SEG:
            return [i for i, a in enumerate(self.allowed) if a]
        return list(range(len(self.shapes)))

    def draw(self, i, step, slot):
        gen = self.rng.child("probe").child(step).child(slot).gen
        shape = self.shapes[i]
        if self.mode is ConstraintMode.SEG:
            probe = geo.sample_part_indicator(shape, gen, allowed=self.allowed[i])
            probe = geo.flip_bits(probe, self.cfg.noise_prob, gen)
        elif self.mode is ConstraintMode.KEY:
            probe = geo.sample_keypoint_subset(shape, self.cfg.sigma, gen)
        else:
            probe = geo.smooth_from_basis(self.bases[i], gen)
        if not self.cfg.siamese:
            return (shape, probe)
        return ((shape, probe), self._partner(i, probe, gen))

    def _partner(self, i, probe, gen):
        need = set(probe.subset)
        if self.mode is ConstraintMode.SEG:
            cands = [j for j, a in enumerate(self.allowed) if j != i and need <= set(a)]
        else:
            cands = [j for j, s in enumerate(self.shapes) if j != i and need <= set(s.keypoint_labels.tolist())]
        j = int(cands[gen.integers(len(cands))]) if cands else i
        other = self.shapes[j]
        if self.mode is ConstraintMode.SEG:
            f2 = geo.part_indicator(other, probe.subset)
            f2 = geo.flip_bits(f2, self.cfg.noise_prob, gen)
        else:
            f2 = geo.keypoint_subset_function(other, probe.subset, self.cfg.sigma)
        return (other, f2)


@dataclass
class TrainResult:
    params: ModelParams
    state: OptimizerState
    rows: list = field(default_factory=list)


def make_sampler(shapes, cfg: TrainConfig):
    return ProbeSampler(shapes, cfg, RngStream(cfg.seed).child("training"))


def schedule(n_usable, cfg: TrainConfig):
    per_epoch = max(1, math.ceil(n_usable / cfg.batch_size))
    total = cfg.steps if cfg.steps > 0 else cfg.epochs * per_epoch
    return per_epoch, total


def fit(shapes, cfg: TrainConfig, params=None, state=None, on_step=None, max_new_steps=None, sampler=None):
    """Train on ``shapes``; resumes from ``state.step`` when params/state are given.

    ``on_step(row)`` is called with a training-log dict after every step. The
    schedule depends only on (cfg, step), so training in chunks of
    ``max_new_steps`` reproduces a single uninterrupted run exactly. A
    ``ProbeSampler`` built for the same shapes and cfg may be passed in to
    avoid rebuilding it per chunk.
    """
    root = RngStream(cfg.seed)
    if params is None:
        params = init_params(cfg.arch, root.child("init"))
        state = OptimizerState.fresh(params, lr=cfg.eta)
    if sampler is None:
        sampler = make_sampler(shapes, cfg)
    usable = sampler.usable()
    if not usable:
        raise InvalidConfig("no shape has any usable training function")
    per_epoch, total = schedule(len(usable), cfg)
    stop = total if max_new_steps is None else min(total, state.step + max_new_steps)
    step_fn = train_step_siamese if cfg.siamese else train_step
    rows = []
    perm, perm_epoch = None, -1
    while state.step < stop:
        step = state.step
        epoch, j = divmod(step, per_epoch)
        if epoch != perm_epoch:
            perm = root.child("epoch").child(epoch).gen.permutation(usable)
            perm_epoch = epoch
        idx = perm[j * cfg.batch_size:(j + 1) * cfg.batch_size]
        batch = [sampler.draw(int(i), step, slot) for slot, i in enumerate(idx)]
        params, state, m = step_fn(params, state, batch, cfg)
        row = {"step": state.step, "F_mean": m.F_mean, "l21_mean": m.l21_mean, "loss": m.loss, "lr": state.lr}
        rows.append(row)
        if on_step is not None:
            on_step(row)
        if state.step % 50 == 0:
            log.info("step %d/%d F=%.4f l21=%.3f", state.step, total, m.F_mean, m.l21_mean)
    return TrainResult(params, state, rows)


def predict(params: ModelParams, shapes, mode, chunk=64):
    """Dictionaries for a list of equal-size shapes, as an array (S, n, k)."""
    out = []
    for i in range(0, len(shapes), chunk):
        A, _ = forward(params, _stack(shapes[i:i + chunk]), mode)
        out.append(A)
    return np.concatenate(out) if out else np.zeros((0, 0, params.arch.k))
