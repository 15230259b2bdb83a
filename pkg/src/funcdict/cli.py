"""Command-line driver: ``funcdict gen-data|train|eval --config run.toml [--set k=v ...]``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import evaluation as ev
from . import geometry as geo
from . import io
from .errors import FuncDictError, InvalidConfig, InvalidInput, NumericError
from .model import ConstraintMode
from .numerics import RngStream
from .solver import solve_ridge_ls
from .training import TrainConfig, fit, make_sampler, predict

log = logging.getLogger("funcdict")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

METRICS_BY_MODE = {
    "seg": ("miou", "recall", "confusion"),
    "key": ("pck",),
    "map": ("reconstruction",),
}


@dataclass
class DataSection:
    path: str = "data/dataset.jsonl"
    preset: str = "table4"
    count: int = 600
    n_points: int = 512
    seed: int = 0
    jitter: float = 1.0
    parts: int = 5


@dataclass
class TrainSection(TrainConfig):
    split: float = 0.8
    split_seed: int = 0
    resume: bool = False
    checkpoint_every: int = 100
    max_new_steps: int = -1  # < 0: train to the end of the schedule

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})


@dataclass
class EvalSection:
    checkpoint: str = ""  # defaults to <out_dir>/checkpoint.json
    split: str = "test"
    metrics: list = field(default_factory=list)  # empty: every metric of the checkpoint's mode
    iou_thresholds: list = field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
    pck_thresholds: list = field(default_factory=lambda: [0.01, 0.02, 0.05, 0.1, 0.2])
    debug_oracle: bool = False
    seed: int = 0


@dataclass
class RunSection:
    out_dir: str = "runs/default"
    log_level: str = "INFO"


SECTIONS = {"data": DataSection, "train": TrainSection, "eval": EvalSection, "run": RunSection}


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self):
        out = {}
        for name in SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
        return out

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise InvalidConfig(f"unknown config sections: {sorted(unknown)}")
        built = {}
        for name, klass in SECTIONS.items():
            sec = d.get(name, {})
            if not isinstance(sec, dict):
                raise InvalidConfig(f"[{name}] must be a table")
            known = {f.name for f in fields(klass)}
            bad = set(sec) - known
            if bad:
                raise InvalidConfig(f"unknown keys in [{name}]: {sorted(bad)}")
            try:
                built[name] = klass(**sec)
            except TypeError as exc:
                raise InvalidConfig(f"[{name}]: {exc}") from exc
        return cls(**built)


def _parse_value(text):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def load_config(path=None, overrides=()):
    base = RunConfig().to_dict()
    if path:
        try:
            with open(path, "rb") as fh:
                user = tomli.load(fh)
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
        except tomli.TOMLDecodeError as exc:
            raise InvalidConfig(f"invalid TOML in {path}: {exc}") from exc
        for sec, vals in user.items():
            if sec not in base:
                raise InvalidConfig(f"unknown config section [{sec}]")
            if not isinstance(vals, dict):
                raise InvalidConfig(f"[{sec}] must be a table")
            unknown = set(vals) - set(base[sec])
            if unknown:
                raise InvalidConfig(f"unknown keys in [{sec}]: {sorted(unknown)}")
            base[sec].update(vals)
    for item in overrides:
        key, sep, value = item.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot or sec not in base or name not in base[sec]:
            raise InvalidConfig(f"bad --set {item!r}; expected section.key=value with a known key")
        base[sec][name] = _parse_value(value.strip())
    return RunConfig.from_dict(base)


# ---------------------------------------------------------------------------
# commands


def split_indices(n, frac, seed):
    perm = RngStream(seed).child("split").gen.permutation(n)
    n_train = int(round(frac * n))
    return sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist())


def cmd_gen_data(cfg: RunConfig):
    d = cfg.data
    shapes = geo.generate_family(d.preset, d.count, d.n_points, RngStream(d.seed), d.jitter, d.parts)
    path = Path(d.path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        io.write_dataset(path, shapes)
    except OSError as exc:
        raise InvalidConfig(f"cannot write dataset to {path}: {exc}") from exc
    hist = np.zeros(max(s.num_parts for s in shapes), dtype=int)
    for s in shapes:
        hist[: s.num_parts] += np.bincount(s.part_labels, minlength=s.num_parts)
    print(f"wrote {len(shapes)} shapes to {path}")
    print("points per part: " + ", ".join(f"{p}:{c}" for p, c in enumerate(hist)))
    return EXIT_OK


def _load_shapes(cfg: RunConfig):
    try:
        return io.read_dataset(cfg.data.path)
    except OSError as exc:
        raise InvalidInput(f"cannot read dataset {cfg.data.path}: {exc}") from exc


def _subset(shapes, cfg: RunConfig, which):
    tr, te = split_indices(len(shapes), cfg.train.split, cfg.train.split_seed)
    idx = {"train": tr, "test": te, "all": range(len(shapes))}.get(which)
    if idx is None:
        raise InvalidConfig(f"unknown split {which!r}")
    return [shapes[i] for i in idx]


def cmd_train(cfg: RunConfig):
    tcfg = cfg.train.train_config()
    shapes = _subset(_load_shapes(cfg), cfg, "train")
    out = Path(cfg.run.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidConfig(f"cannot create {out}: {exc}") from exc
    io.atomic_write_text(out / "config.toml", cfg.to_toml())
    ckpt_path, log_path = out / "checkpoint.json", out / "train_log.csv"
    params = state = None
    rows = []
    if cfg.train.resume and ckpt_path.exists():
        params, state, doc = io.load_checkpoint(ckpt_path)
        if doc.get("mode") != tcfg.mode or params.arch != tcfg.arch:
            raise InvalidConfig("checkpoint does not match the configured mode/architecture")
        if log_path.exists():
            rows = [r for r in io.read_train_log(log_path) if r["step"] <= state.step]
        log.info("resuming from step %d", state.step)
    sampler = make_sampler(shapes, tcfg)
    budget = None if cfg.train.max_new_steps < 0 else cfg.train.max_new_steps
    every = max(1, cfg.train.checkpoint_every)
    extra = {"train_config": tcfg.to_dict()}

    def save(p, s):
        io.save_checkpoint(ckpt_path, p, s, tcfg.mode, extra)
        io.write_train_log(log_path, rows)

    if params is None:
        res = fit(shapes, tcfg, max_new_steps=0, sampler=sampler)
        params, state = res.params, res.state
        save(params, state)
    while budget is None or budget > 0:
        chunk = every if budget is None else min(every, budget)
        start = state.step
        try:
            res = fit(shapes, tcfg, params, state, max_new_steps=chunk, sampler=sampler, on_step=rows.append)
        except NumericError as exc:
            # rows past the last checkpoint belong to the failed chunk
            rows[:] = [r for r in rows if r["step"] <= start]
            io.write_train_log(log_path, rows)
            raise NumericError(f"{exc}; last good checkpoint at step {start} kept in {ckpt_path}") from exc
        params, state = res.params, res.state
        if state.step == start:
            break
        save(params, state)
        if budget is not None:
            budget -= state.step - start
    save(params, state)
    print(f"trained to step {state.step}; bundle in {out}")
    return EXIT_OK


def _oracle_dictionary(shape, k):
    A = np.zeros((shape.n, k))
    A[np.arange(shape.n), shape.part_labels] = 1.0
    return A


def evaluate(cfg: RunConfig):
    """Compute the configured metrics; returns (report dict, csv rows, csv columns)."""
    ckpt = Path(cfg.eval.checkpoint or Path(cfg.run.out_dir) / "checkpoint.json")
    try:
        params, _, doc = io.load_checkpoint(ckpt)
    except OSError as exc:
        raise InvalidInput(f"cannot read checkpoint {ckpt}: {exc}") from exc
    mode = ConstraintMode.parse(doc["mode"]).value
    wanted = list(cfg.eval.metrics) or list(METRICS_BY_MODE[mode])
    wrong = [m for m in wanted if m not in METRICS_BY_MODE[mode]]
    if wrong:
        raise InvalidConfig(f"metrics {wrong} are not available for a {mode!r} checkpoint")
    shapes = _subset(_load_shapes(cfg), cfg, cfg.eval.split)
    if not shapes:
        raise InvalidInput("evaluation split is empty")
    k = params.arch.k
    if cfg.eval.debug_oracle:
        if mode != "seg":
            raise InvalidConfig("debug_oracle is only defined for segmentation")
        A_all = np.stack([_oracle_dictionary(s, k) for s in shapes])
    else:
        A_all = predict(params, shapes, mode)

    report = {"mode": mode, "checkpoint_step": int(doc["step"]), "shape_ids": [s.shape_id for s in shapes]}
    columns = ["shape_id", "family"]
    rows = [{"shape_id": s.shape_id, "family": s.family} for s in shapes]
    if mode == "seg":
        rep = ev.segmentation_report(shapes, A_all, cfg.eval.iou_thresholds)
        if "miou" in wanted:
            report.update(
                per_shape_miou=rep.per_shape_miou,
                mean_shape_miou=rep.mean_shape_miou,
                category_miou=rep.category_miou,
                category_mapping={f: {str(l): a for l, a in m.items()} for f, m in rep.category_mapping.items()},
                atom_mass=rep.atom_mass,
            )
            columns.append("miou")
            for r, v in zip(rows, rep.per_shape_miou):
                r["miou"] = v
        if "recall" in wanted:
            report.update(recall=rep.recall, recall_per_class=rep.recall_per_class)
        if "confusion" in wanted:
            report.update(confusion=rep.confusion, confusion_missing=rep.confusion_missing)
    elif mode == "key":
        rep = ev.keypoint_report(shapes, A_all, cfg.eval.pck_thresholds)
        pck = dict(rep.pck)
        shape_values = pck.pop("shape_values")
        pck["mapping"] = {str(l): a for l, a in pck["mapping"].items()}
        report["pck"] = pck
        report["per_shape_pck"] = shape_values
        for t_i, t in enumerate(cfg.eval.pck_thresholds):
            col = f"pck@{t:g}"
            columns.append(col)
            for r, vals in zip(rows, shape_values):
                r[col] = vals[t_i]
    else:
        errs = []
        for i, (s, A) in enumerate(zip(shapes, A_all)):
            basis = geo.laplacian_basis(s.points, cfg.train.num_bases, cfg.train.knn)
            f = geo.smooth_from_basis(basis, RngStream(cfg.eval.seed).child("eval").child(i).gen).values
            x = solve_ridge_ls(A, f, cfg.train.ridge_eps)
            errs.append(float(np.linalg.norm(A @ x - f) / np.linalg.norm(f)))
        report["reconstruction"] = {"per_shape": errs, "mean": float(np.mean(errs))}
        columns.append("relative_residual")
        for r, v in zip(rows, errs):
            r["relative_residual"] = v
    return report, rows, columns


def cmd_eval(cfg: RunConfig):
    report, rows, columns = evaluate(cfg)
    out = Path(cfg.run.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidConfig(f"cannot create {out}: {exc}") from exc
    io.atomic_write_text(out / "metrics.json", json.dumps(report, sort_keys=True, indent=1) + "\n")
    io.atomic_write_text(out / "metrics.csv", io.csv_text(rows, columns))
    if "mean_shape_miou" in report:
        print(f"per-shape mIoU {report['mean_shape_miou']:.4f}; per-category {report['category_miou']}")
    if "pck" in report:
        print(f"PCK per-shape {report['pck']['per_shape']}; global {report['pck']['global']}")
    if "reconstruction" in report:
        print(f"mean relative residual {report['reconstruction']['mean']:.4f}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval}


def build_parser():
    parser = argparse.ArgumentParser(prog="funcdict", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (TOML literal syntax)")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
    except FuncDictError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        sys.stdout.write(cfg.to_toml())
        return EXIT_OK
    logging.basicConfig(level=getattr(logging, str(cfg.run.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](cfg)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidConfig, InvalidInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
