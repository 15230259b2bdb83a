"""Dataset, checkpoint, and log/metric file formats. All writes are atomic."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .geometry import ShapeSample
from .model import Architecture, ModelParams, OptimizerState

TRAIN_LOG_COLUMNS = ("step", "F_mean", "l21_mean", "loss", "lr")


def atomic_write_text(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _floats(a):
    # json encodes floats with repr(), the shortest string that round-trips exactly
    return np.asarray(a, dtype=float).tolist()


# ---------------------------------------------------------------------------
# datasets (JSON Lines, one shape per line)


def shape_to_dict(s: ShapeSample):
    return {
        "shape_id": s.shape_id,
        "family": s.family,
        "points": _floats(s.points),
        "part_labels": [int(v) for v in s.part_labels],
        "keypoints": [{"label": int(l), "xyz": _floats(xyz)} for l, xyz in s.keypoints],
    }


def shape_from_dict(d):
    try:
        kps = d.get("keypoints", [])
        return ShapeSample(
            shape_id=str(d["shape_id"]),
            family=str(d["family"]),
            points=np.array(d["points"], dtype=float).reshape(-1, 3),
            part_labels=np.array(d["part_labels"], dtype=int),
            keypoint_labels=np.array([k["label"] for k in kps], dtype=int),
            keypoint_xyz=np.array([k["xyz"] for k in kps], dtype=float).reshape(-1, 3),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"malformed shape record: {exc}") from exc


def dumps_dataset(shapes):
    return "".join(json.dumps(shape_to_dict(s)) + "\n" for s in shapes)


def write_dataset(path, shapes):
    atomic_write_text(path, dumps_dataset(shapes))


def read_dataset(path):
    with open(path) as fh:
        return [shape_from_dict(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint_dict(params: ModelParams, state: OptimizerState, mode, extra=None):
    names = params.names()
    doc = {
        "architecture": params.arch.to_dict(),
        "mode": str(mode),
        "k": params.arch.k,
        "step": state.step,
        "layers": [
            {"name": n, "shape": list(w.shape), "values": _floats(w.ravel())}
            for n, w in zip(names, params.weights)
        ],
        "optimizer": {
            "step": state.step,
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "m": [_floats(m.ravel()) for m in state.m],
            "v": [_floats(v.ravel()) for v in state.v],
        },
    }
    if extra:
        doc.update(extra)
    return doc


def save_checkpoint(path, params, state, mode, extra=None):
    atomic_write_text(path, json.dumps(checkpoint_dict(params, state, mode, extra)))


def checkpoint_from_dict(doc):
    arch = Architecture.from_dict(doc["architecture"])
    shapes = [tuple(layer["shape"]) for layer in doc["layers"]]
    weights = [np.array(l["values"], dtype=float).reshape(s) for l, s in zip(doc["layers"], shapes)]
    opt = doc["optimizer"]
    state = OptimizerState(
        m=[np.array(m, dtype=float).reshape(s) for m, s in zip(opt["m"], shapes)],
        v=[np.array(v, dtype=float).reshape(s) for v, s in zip(opt["v"], shapes)],
        step=int(opt["step"]),
        lr=float(opt["lr"]),
        beta1=float(opt["beta1"]),
        beta2=float(opt["beta2"]),
        eps=float(opt["eps"]),
    )
    return ModelParams(arch, weights), state, doc


def load_checkpoint(path):
    with open(path) as fh:
        return checkpoint_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# CSV


def csv_text(rows, columns):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in columns})
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_train_log(path, rows):
    atomic_write_text(path, csv_text(rows, TRAIN_LOG_COLUMNS))


def read_train_log(path):
    rows = []
    for r in read_csv(path):
        rows.append({c: (int(r[c]) if c == "step" else float(r[c])) for c in TRAIN_LOG_COLUMNS})
    return rows
