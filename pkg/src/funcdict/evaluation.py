"""Segmentation, keypoint and proposal metrics with Hungarian label/atom matching."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import hungarian_max

EMPTY_ATOM = 1e-6
# stands in for "no prediction" in summed distance tables; farther than any
# two points of a unit-radius cloud
MISSING_DIST = 4.0


def binarize_rows(A):
    """Per-point atom of maximal value; ties resolve to the lowest atom index."""
    return np.asarray(A).argmax(axis=-1)


def iou_matrix(pred, gt, num_labels, k):
    """IoU between every ground-truth part (rows) and predicted atom (columns).

    Points with ``pred < 0`` belong to no atom.
    """
    pred = np.asarray(pred, dtype=int)
    gt = np.asarray(gt, dtype=int)
    hit = pred >= 0
    inter = np.zeros((num_labels, k))
    np.add.at(inter, (gt[hit], pred[hit]), 1.0)
    g = np.bincount(gt, minlength=num_labels)[:, None].astype(float)
    p = np.bincount(pred[hit], minlength=k)[None, :k].astype(float)
    union = g + p - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def matched_miou_shape(pred, gt, k=None):
    """Mean IoU over the shape's parts under the best one-to-one part/atom matching."""
    pred, gt = np.asarray(pred, dtype=int), np.asarray(gt, dtype=int)
    k = int(pred.max()) + 1 if k is None else k
    present = np.unique(gt)
    M = iou_matrix(pred, gt, int(gt.max()) + 1, k)[present]
    return hungarian_max(M).total_profit / len(present)


def _present_weights(gts, num_labels):
    """(S, P) matrix holding 1/|present parts| where part p occurs in shape s."""
    W = np.zeros((len(gts), num_labels))
    for s, gt in enumerate(gts):
        present = np.unique(gt)
        W[s, present] = 1.0 / len(present)
    return W


def category_matching(preds, gts, num_labels, k):
    """One label -> atom matching for a whole category, maximizing summed per-shape mIoU."""
    W = _present_weights(gts, num_labels)
    total = np.zeros((num_labels, k))
    for s, (pred, gt) in enumerate(zip(preds, gts)):
        total += W[s][:, None] * iou_matrix(pred, gt, num_labels, k)
    return hungarian_max(total).mapping


def matched_miou_category(preds, gts, num_labels=None, k=None):
    """Mean over shapes of mIoU under a single category-wide label/atom matching."""
    num_labels = max(int(np.max(g)) for g in gts) + 1 if num_labels is None else num_labels
    k = max(int(np.max(p)) for p in preds) + 1 if k is None else k
    mapping = category_matching(preds, gts, num_labels, k)
    W = _present_weights(gts, num_labels)
    scores = []
    for s, (pred, gt) in enumerate(zip(preds, gts)):
        M = iou_matrix(pred, gt, num_labels, k)
        scores.append(sum(W[s, l] * M[l, a] for l, a in mapping.items()))
    return float(np.mean(scores)), mapping


# ---------------------------------------------------------------------------
# keypoints


def predicted_keypoints(A, points):
    """Argmax point of every atom; rows of NaN for near-empty atoms."""
    A = np.asarray(A)
    idx = A.argmax(axis=0)
    out = np.asarray(points, dtype=float)[idx].copy()
    out[A.max(axis=0) < EMPTY_ATOM] = np.nan
    return out


def _distance_table(pred_xyz, gt_labels, gt_xyz, labels):
    """(len(labels), k) distances; MISSING_DIST where either side is absent."""
    D = np.full((len(labels), len(pred_xyz)), MISSING_DIST)
    row = {l: i for i, l in enumerate(labels)}
    for l, xyz in zip(gt_labels, gt_xyz):
        d = np.sqrt(((pred_xyz - xyz) ** 2).sum(axis=1))
        D[row[int(l)]] = np.where(np.isnan(d), MISSING_DIST, d)
    return D


def _hits(errors, thresholds, total):
    errors = np.asarray(errors, dtype=float)
    return [float(np.sum(errors <= t) / total) if total else 0.0 for t in thresholds]


def pck_curve(pred_xyz_list, gt_labels_list, gt_xyz_list, thresholds):
    """PCK under per-shape matching and under one global label/atom matching.

    Returns {"per_shape": [...], "global": [...], "mapping": {label: atom},
    "shape_values": [[...], ...]} with one value per threshold (``shape_values``
    holds each shape's own per-shape-matched PCK). Unmatched ground-truth
    keypoints count as misses.
    """
    thresholds = [float(t) for t in thresholds]
    labels = sorted({int(l) for ls in gt_labels_list for l in ls})
    total = sum(len(ls) for ls in gt_labels_list)
    tables = [
        _distance_table(np.asarray(p, dtype=float), ls, xyz, labels)
        for p, ls, xyz in zip(pred_xyz_list, gt_labels_list, gt_xyz_list)
    ]
    row = {l: i for i, l in enumerate(labels)}
    err_shape, per_shape = [], []
    for D, ls in zip(tables, gt_labels_list):
        rows = [row[int(l)] for l in ls]
        if not rows:
            per_shape.append([0.0] * len(thresholds))
            continue
        mapping = hungarian_max(-D[rows]).mapping
        errs = [D[rows[r], mapping[r]] if r in mapping else np.inf for r in range(len(rows))]
        err_shape += errs
        per_shape.append(_hits(errs, thresholds, len(errs)))
    mapping = hungarian_max(-np.sum(tables, axis=0)).mapping if tables else {}
    err_glob = []
    for D, ls in zip(tables, gt_labels_list):
        for l in ls:
            r = row[int(l)]
            err_glob.append(D[r, mapping[r]] if r in mapping else np.inf)
    return {
        "thresholds": thresholds,
        "per_shape": _hits(err_shape, thresholds, total),
        "global": _hits(err_glob, thresholds, total),
        "mapping": {labels[r]: int(a) for r, a in mapping.items()},
        "shape_values": per_shape,
    }


# ---------------------------------------------------------------------------
# proposals and label confusion


def proposal_recall(preds, gts, iou_threshold=0.5):
    """Fraction of ground-truth instances with some predicted segment at IoU >= threshold.

    Returns (recall, {label: recall}). An empty prediction covers nothing.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    covered, total = {}, {}
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred, dtype=int)
        gt = np.asarray(gt, dtype=int)
        present = np.unique(gt)
        k = int(pred.max()) + 1 if pred.size and pred.max() >= 0 else 0
        if k == 0:
            best = np.zeros(len(present))
        else:
            best = iou_matrix(pred, gt, int(gt.max()) + 1, k)[present].max(axis=1)
        for l, b in zip(present.tolist(), best):
            total[l] = total.get(l, 0) + 1
            covered[l] = covered.get(l, 0) + int(b >= iou_threshold)
    n = sum(total.values())
    recall = sum(covered.values()) / n if n else 0.0
    return recall, {l: covered[l] / total[l] for l in sorted(total)}


def atom_counts(preds, gts, num_labels, k):
    V = np.zeros((num_labels, k))
    for pred, gt in zip(preds, gts):
        np.add.at(V, (np.asarray(gt, dtype=int), np.asarray(pred, dtype=int)), 1.0)
    return V


def label_confusion(preds, gts, num_labels, k):
    """Cosine similarity between per-label atom-count vectors.

    Returns (matrix, missing) where ``missing`` lists labels never observed;
    their rows and columns are zero.
    """
    return confusion_from_counts(atom_counts(preds, gts, num_labels, k))


def confusion_from_counts(V):
    V = np.asarray(V, dtype=float)
    norms = np.sqrt((V**2).sum(axis=1))
    missing = [int(l) for l in np.flatnonzero(norms == 0)]
    U = np.divide(V, norms[:, None], out=np.zeros_like(V), where=norms[:, None] > 0)
    return U @ U.T, missing


@dataclass
class MetricReport:
    shape_ids: list = field(default_factory=list)
    per_shape_miou: list = field(default_factory=list)
    mean_shape_miou: float | None = None
    category_miou: dict = field(default_factory=dict)
    category_mapping: dict = field(default_factory=dict)
    pck: dict | None = None
    recall: dict = field(default_factory=dict)
    recall_per_class: dict = field(default_factory=dict)
    confusion: list | None = None
    confusion_missing: list = field(default_factory=list)
    atom_mass: list | None = None


def segmentation_report(shapes, A_all, thresholds=(0.5, 0.6, 0.7, 0.8, 0.9, 1.0)):
    """All segmentation metrics for a list of shapes and their dictionaries (S, n, k)."""
    k = A_all.shape[-1]
    preds = [binarize_rows(A) for A in A_all]
    gts = [s.part_labels for s in shapes]
    rep = MetricReport(shape_ids=[s.shape_id for s in shapes])
    rep.per_shape_miou = [matched_miou_shape(p, g, k) for p, g in zip(preds, gts)]
    rep.mean_shape_miou = float(np.mean(rep.per_shape_miou))
    for fam in sorted({s.family for s in shapes}):
        sel = [i for i, s in enumerate(shapes) if s.family == fam]
        P = max(shapes[i].num_parts for i in sel)
        score, mapping = matched_miou_category([preds[i] for i in sel], [gts[i] for i in sel], P, k)
        rep.category_miou[fam] = score
        rep.category_mapping[fam] = {int(l): int(a) for l, a in mapping.items()}
    for t in thresholds:
        r, per = proposal_recall(preds, gts, t)
        rep.recall[f"{t:g}"] = r
        rep.recall_per_class[f"{t:g}"] = {str(l): v for l, v in per.items()}
    P = max(s.num_parts for s in shapes)
    C, missing = label_confusion(preds, gts, P, k)
    rep.confusion = C.tolist()
    rep.confusion_missing = missing
    rep.atom_mass = atom_mass(A_all).tolist()
    return rep


def atom_mass(A_all):
    """Mean over shapes of each column's sum divided by n (share of points an atom carries)."""
    A_all = np.asarray(A_all)
    return A_all.sum(axis=1).mean(axis=0) / A_all.shape[1]


def keypoint_report(shapes, A_all, thresholds):
    preds = [predicted_keypoints(A, s.points) for A, s in zip(A_all, shapes)]
    rep = MetricReport(shape_ids=[s.shape_id for s in shapes])
    rep.pck = pck_curve(preds, [s.keypoint_labels for s in shapes], [s.keypoint_xyz for s in shapes], thresholds)
    return rep
