"""Synthetic shape families and the probe functions defined on them.

Shapes are unions of axis-aligned cuboids whose surfaces are sampled with a
point budget proportional to area. Every family keeps part ids and keypoint
labels semantically fixed across shapes, so that part 0 of a ``table4`` is
always the top and keypoint 0 is always the same top corner.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, InvalidInput
from .numerics import RngStream, sym_eigen

log = logging.getLogger(__name__)

PRESETS = ("table4", "chair6", "boxesP", "lamp3")
DEFAULT_SIGMA = 1e-3
MIN_POINTS = 64
INDICATOR, KEYPOINT_DISTANCE, SMOOTH = "indicator", "keypoint_distance", "smooth"


@dataclass
class ShapeSample:
    shape_id: str
    family: str
    points: np.ndarray  # (n, 3)
    part_labels: np.ndarray  # (n,) int
    keypoint_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    keypoint_xyz: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def num_parts(self):
        return int(self.part_labels.max()) + 1

    @property
    def keypoints(self):
        return [(int(l), self.keypoint_xyz[i]) for i, l in enumerate(self.keypoint_labels)]


@dataclass
class ProbeFunction:
    values: np.ndarray
    kind: str
    # part ids or keypoint labels the function was built from (None for smooth)
    subset: tuple | None = None


@dataclass
class GraphLaplacian:
    L: np.ndarray
    W: np.ndarray


# ---------------------------------------------------------------------------
# normalization


def normalize_transform(raw):
    """Return (normalized points, center, scale) with points = (raw - center) / scale."""
    P = np.asarray(raw, dtype=float)
    if P.ndim != 2 or P.shape[0] == 0 or P.shape[1] != 3:
        raise InvalidInput(f"expected a non-empty (n, 3) array, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise InvalidInput("point coordinates must be finite")
    center = P.mean(axis=0)
    Q = P - center
    r = np.sqrt((Q**2).sum(axis=1)).max()
    scale = r if r > 0 else 1.0
    Q = Q / scale
    # the division leaves O(eps) drift in the centroid; remove it
    Q -= Q.mean(axis=0)
    return Q, center, scale


def normalize_cloud(raw):
    return normalize_transform(raw)[0]


# ---------------------------------------------------------------------------
# cuboid sampling


def _box(lo, hi):
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def _box_area(box):
    lo, hi = box
    dx, dy, dz = hi - lo
    return 2.0 * (dx * dy + dy * dz + dx * dz)


def _sample_face(lo2, hi2, m, gen):
    # jittered grid on a rectangle: near-uniform spacing keeps k-NN graphs connected
    a, b = hi2 - lo2
    nx = max(1, int(round(np.sqrt(m * a / b)))) if b > 0 else m
    ny = int(np.ceil(m / nx))
    cells = gen.permutation(nx * ny)[:m]
    ix, iy = cells % nx, cells // nx
    u = (ix + gen.random(m)) / nx
    v = (iy + gen.random(m)) / ny
    return lo2 + np.stack([u, v], axis=1) * (hi2 - lo2)


def _sample_box_surface(box, m, gen):
    lo, hi = box
    d = hi - lo
    out = []
    faces = [(ax, side) for ax in range(3) for side in (0, 1)]
    areas = [np.prod(np.delete(d, ax)) for ax, _ in faces]
    for (ax, side), mf in zip(faces, _allocate(areas, m, minimum=0)):
        if mf == 0:
            continue
        keep = [i for i in range(3) if i != ax]
        uv = _sample_face(lo[keep], hi[keep], mf, gen)
        pts = np.empty((mf, 3))
        pts[:, keep] = uv
        pts[:, ax] = hi[ax] if side else lo[ax]
        out.append(pts)
    return np.vstack(out)


def _allocate(areas, n, minimum):
    areas = np.asarray(areas, dtype=float)
    share = areas / areas.sum() * (n - minimum * len(areas))
    counts = np.floor(share).astype(int) + minimum
    rem = n - counts.sum()
    order = np.argsort(-(share - np.floor(share)), kind="stable")
    counts[order[:rem]] += 1
    return counts


def _u(gen, lo, hi, jitter):
    mid = 0.5 * (lo + hi)
    return mid + (gen.random() - 0.5) * (hi - lo) * jitter


def _table4(gen, jitter):
    W, D = _u(gen, 1.2, 2.0, jitter), _u(gen, 0.7, 1.2, jitter)
    H, t = _u(gen, 0.6, 1.0, jitter), _u(gen, 0.04, 0.08, jitter)
    leg, inset = _u(gen, 0.06, 0.12, jitter), _u(gen, 0.02, 0.10, jitter)
    boxes = [_box((-W / 2, H - t, -D / 2), (W / 2, H, D / 2))]
    corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    for sx, sz in corners:
        cx = sx * (W / 2 - inset - leg / 2)
        cz = sz * (D / 2 - inset - leg / 2)
        boxes.append(_box((cx - leg / 2, 0.0, cz - leg / 2), (cx + leg / 2, H - t, cz + leg / 2)))
    keypoints = [(0, (sx * W / 2, H, sz * D / 2)) for sx, sz in corners]
    return boxes, [(i, 0, xyz) for i, (_, xyz) in enumerate(keypoints)]


def _chair6(gen, jitter):
    W, D = _u(gen, 0.8, 1.1, jitter), _u(gen, 0.8, 1.1, jitter)
    H, t = _u(gen, 0.7, 0.9, jitter), _u(gen, 0.05, 0.10, jitter)
    B, bt = _u(gen, 0.8, 1.2, jitter), _u(gen, 0.05, 0.10, jitter)
    leg = _u(gen, 0.08, 0.12, jitter)
    boxes = [
        _box((-W / 2, H - t, -D / 2), (W / 2, H, D / 2)),
        _box((-W / 2, H, -D / 2), (W / 2, H + B, -D / 2 + bt)),
    ]
    corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    for sx, sz in corners:
        cx, cz = sx * (W / 2 - leg / 2), sz * (D / 2 - leg / 2)
        boxes.append(_box((cx - leg / 2, 0.0, cz - leg / 2), (cx + leg / 2, H - t, cz + leg / 2)))
    kps = [(i, 0, (sx * W / 2, H, sz * D / 2)) for i, (sx, sz) in enumerate(corners)]
    kps += [(4, 1, (-W / 2, H + B, -D / 2)), (5, 1, (W / 2, H + B, -D / 2))]
    return boxes, kps


def _boxes(gen, jitter, parts):
    # a row of cuboids along x, growing in height: fixed relative layout
    boxes, kps, x = [], [], 0.0
    for p in range(parts):
        w = _u(gen, 0.4, 0.6, jitter)
        h = _u(gen, 0.3, 0.5, jitter) * (1.0 + 0.5 * p)
        d = _u(gen, 0.4, 0.6, jitter)
        boxes.append(_box((x, 0.0, -d / 2), (x + w, h, d / 2)))
        kps.append((p, p, (x + w, h, d / 2)))
        x += w
    return boxes, kps


def _lamp3(gen, jitter, variant):
    """Shade / tube / base lamp. Variant 0 stands (shade on top), variant 1 hangs
    (mount on top, shade below), swapping the vertical roles of parts 0 and 2."""
    S, sh = _u(gen, 0.8, 1.0, jitter), _u(gen, 0.30, 0.40, jitter)
    T, tw = _u(gen, 1.0, 1.4, jitter), _u(gen, 0.05, 0.08, jitter)
    Bw, bh = _u(gen, 0.35, 0.45, jitter), _u(gen, 0.06, 0.10, jitter)
    if variant == 0:
        base = _box((-Bw / 2, 0.0, -Bw / 2), (Bw / 2, bh, Bw / 2))
        tube = _box((-tw / 2, bh, -tw / 2), (tw / 2, bh + T, tw / 2))
        shade = _box((-S / 2, bh + T, -S / 2), (S / 2, bh + T + sh, S / 2))
    else:
        shade = _box((-S / 2, 0.0, -S / 2), (S / 2, sh, S / 2))
        tube = _box((-tw / 2, sh, -tw / 2), (tw / 2, sh + T, tw / 2))
        base = _box((-Bw / 2, sh + T, -Bw / 2), (Bw / 2, sh + T + bh, Bw / 2))
    return [shade, tube, base], []


def _make_shape(preset, gen, n_points, jitter, parts, idx):
    if preset == "table4":
        boxes, kps = _table4(gen, jitter)
    elif preset == "chair6":
        boxes, kps = _chair6(gen, jitter)
    elif preset == "boxesP":
        boxes, kps = _boxes(gen, jitter, parts)
    else:
        boxes, kps = _lamp3(gen, jitter, variant=int(gen.random() < 0.5))
    P = len(boxes)
    kp_per_part = np.bincount([part for _, part, _ in kps], minlength=P)
    counts = _allocate([_box_area(b) for b in boxes], n_points, minimum=2 + kp_per_part.max(initial=0))
    pts, labels = [], []
    for p, b in enumerate(boxes):
        exact = [np.asarray(xyz, dtype=float) for _, part, xyz in kps if part == p]
        m = counts[p] - len(exact)
        sampled = _sample_box_surface(b, m, gen)
        # keypoints sit on the surface, so include them as actual samples
        pts.append(np.vstack(exact + [sampled]) if exact else sampled)
        labels.append(np.full(counts[p], p))
    pts, labels = np.vstack(pts), np.concatenate(labels)
    perm = gen.permutation(n_points)
    pts, labels = pts[perm], labels[perm]
    pts, center, scale = normalize_transform(pts)
    kp_xyz = np.array([xyz for _, _, xyz in kps], dtype=float).reshape(-1, 3)
    kp_xyz = (kp_xyz - center) / scale
    # snap keypoints to the matching cloud point, so they are exactly on the cloud
    for i in range(len(kp_xyz)):
        j = np.argmin(((pts - kp_xyz[i]) ** 2).sum(axis=1))
        kp_xyz[i] = pts[j]
    return ShapeSample(
        shape_id=f"{preset}-{idx:05d}",
        family=preset,
        points=pts,
        part_labels=labels.astype(int),
        keypoint_labels=np.array([l for l, _, _ in kps], dtype=int),
        keypoint_xyz=kp_xyz,
    )


def preset_num_parts(preset, parts=5):
    return {"table4": 5, "chair6": 6, "lamp3": 3}.get(preset, parts)


def generate_family(preset, count, n_points, rng: RngStream, jitter=1.0, parts=5):
    """Generate ``count`` shapes of one family. Deterministic given ``rng``."""
    if preset not in PRESETS:
        raise InvalidConfig(f"unknown preset {preset!r}; choose from {PRESETS}")
    if count < 1:
        raise InvalidConfig("count must be >= 1")
    if preset == "boxesP" and parts < 1:
        raise InvalidConfig("boxesP needs at least one part")
    P = preset_num_parts(preset, parts)
    if n_points < MIN_POINTS or n_points < 8 * P:
        raise InvalidConfig(f"n_points={n_points} is too small to populate {P} parts")
    if not 0.0 <= jitter <= 1.0:
        raise InvalidConfig("jitter must lie in [0, 1]")
    return [
        _make_shape(preset, rng.child(i).gen, n_points, jitter, parts, i) for i in range(count)
    ]


# ---------------------------------------------------------------------------
# probe functions


def draw_subset(items, gen):
    """Nonempty subset by independent coin flips per item, rejecting the empty set."""
    items = list(items)
    if not items:
        raise InvalidInput("cannot draw a nonempty subset of an empty set")
    while True:
        keep = gen.random(len(items)) < 0.5
        if keep.any():
            return tuple(x for x, k in zip(items, keep) if k)


def part_indicator(shape: ShapeSample, subset):
    f = np.isin(shape.part_labels, np.asarray(subset, dtype=int)).astype(float)
    return ProbeFunction(f, INDICATOR, tuple(int(s) for s in subset))


def sample_part_indicator(shape: ShapeSample, rng, allowed=None):
    gen = rng.gen if isinstance(rng, RngStream) else rng
    parts = range(shape.num_parts) if allowed is None else allowed
    return part_indicator(shape, draw_subset(parts, gen))


def flip_bits(probe: ProbeFunction, prob, rng):
    """Independently flip each entry of a binary indicator with probability ``prob``."""
    if prob <= 0:
        return probe
    gen = rng.gen if isinstance(rng, RngStream) else rng
    flip = gen.random(probe.values.shape[0]) < prob
    return ProbeFunction(np.where(flip, 1.0 - probe.values, probe.values), probe.kind, probe.subset)


def keypoint_distance_function(points, keypoint, sigma=DEFAULT_SIGMA):
    if not sigma > 0:
        raise InvalidConfig(f"sigma must be positive, got {sigma}")
    P = np.asarray(points, dtype=float)
    d2 = ((P - np.asarray(keypoint, dtype=float)) ** 2).sum(axis=1)
    z = -d2 / sigma
    g = np.exp(z - z.max())
    return ProbeFunction(g / g.sum(), KEYPOINT_DISTANCE)


def keypoint_subset_function(shape: ShapeSample, labels, sigma=DEFAULT_SIGMA):
    lookup = dict(zip(shape.keypoint_labels.tolist(), shape.keypoint_xyz))
    f = np.zeros(shape.n)
    for l in labels:
        f += keypoint_distance_function(shape.points, lookup[int(l)], sigma).values
    return ProbeFunction(f, KEYPOINT_DISTANCE, tuple(int(l) for l in labels))


def sample_keypoint_subset(shape: ShapeSample, sigma, rng):
    if len(shape.keypoint_labels) == 0:
        raise InvalidInput(f"shape {shape.shape_id} has no keypoints")
    gen = rng.gen if isinstance(rng, RngStream) else rng
    return keypoint_subset_function(shape, draw_subset(shape.keypoint_labels.tolist(), gen), sigma)


def knn_graph_laplacian(points, K):
    P = np.asarray(points, dtype=float)
    n = P.shape[0]
    if not 1 <= K < n:
        raise InvalidConfig(f"K must satisfy 1 <= K < n={n}, got {K}")
    if n > 1024:
        raise InvalidConfig(f"dense Laplacian limited to n <= 1024, got {n}")
    d2 = ((P[:, None, :] - P[None, :, :]) ** 2).sum(axis=-1)
    np.fill_diagonal(d2, np.inf)
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :K]
    W = np.zeros((n, n))
    W[np.repeat(np.arange(n), K), nbrs.ravel()] = 1.0
    W = np.maximum(W, W.T)
    L = np.diag(W.sum(axis=1)) - W
    return GraphLaplacian(L, W)


def laplacian_basis(points, num_bases=10, K=12):
    """First ``num_bases`` Laplacian eigenvectors (ascending, constant one included)."""
    n = len(points)
    if not 1 <= num_bases <= n:
        raise InvalidConfig(f"num_bases must lie in [1, n={n}]")
    w, V = sym_eigen(knn_graph_laplacian(points, K).L)
    n_zero = int(np.sum(w < 1e-8))
    if n_zero > 1:
        msg = f"k-NN graph has {n_zero} connected components (K={K})"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.warning(msg)
    return V[:, :num_bases]


def smooth_from_basis(basis, rng):
    gen = rng.gen if isinstance(rng, RngStream) else rng
    f = basis @ gen.standard_normal(basis.shape[1])
    return ProbeFunction(f / np.linalg.norm(f), SMOOTH)


def random_smooth_function(points, num_bases=10, rng=None, K=12):
    return smooth_from_basis(laplacian_basis(points, num_bases, K), rng)
