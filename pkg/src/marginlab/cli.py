"""Command-line front end: ``marginlab gen|train|eval|gradcheck|sweep``.

An experiment is one JSON file; ``--set a.b=value`` overrides any dotted
path (values are parsed as JSON when possible). Output layout under
``output_dir``::

    data/train.csv data/holdout.csv data/distractors.csv data/ledger.csv
    runs/{head}_{seed}.ckpt.json runs/{head}_{seed}.metrics.csv
    eval/comparison.csv eval/summary.csv eval/{head}_{seed}.detection.csv
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as mio
from .evaluation import aggregate, detection_curve, verification_accuracy
from .heads import HeadConfig, HeadKind, make_head
from .noisegen import DatasetSpec, generate, make_noisy, make_verification_pairs
from .trainer import EmbeddingModel, MetricsLog, TrainConfig, finite_diff_audit, train

log = logging.getLogger("marginlab")

OUTPUT_ENV = "MARGINLAB_OUTPUT"
DEFAULT_NOISE_GRID = [[0.2, 0.2], [0.1, 0.3], [0.3, 0.1]]

DEFAULT_CONFIG = {
    "dataset": {
        "num_classes": 20, "samples_per_class": 200, "input_dim": 64,
        "concentration": 4.0, "num_distractor_classes": 5,
        "num_holdout_classes": 20, "seed": 0,
    },
    "noise": {"closed_ratio": 0.2, "open_ratio": 0.0, "seed": 1},
    "model": {"embed_dim": 32, "hidden_dim": 0, "out_bias": False},
    "train": {"epochs": 30, "batch_size": 64, "lr": 0.1, "momentum": 0.9, "weight_decay": 5e-4},
    "heads": [{"kind": "ArcFace"}, {"kind": "BoundaryFace"}],
    "seeds": [1],
    "eval": {"num_pairs": 500, "seed": 2},
    "sweep": {"grid": DEFAULT_NOISE_GRID},
}


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    closed_ratio: float
    open_ratio: float
    noise_seed: int
    model: dict
    train: dict
    heads: list[tuple[str, HeadConfig]]
    output_dir: Path
    seeds: list[int]
    eval: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        merged = copy.deepcopy(DEFAULT_CONFIG)
        for key, val in doc.items():
            if isinstance(val, dict) and isinstance(merged.get(key), dict):
                merged[key].update(val)
            else:
                merged[key] = val
        noise = merged["noise"]
        closed, opened = float(noise.get("closed_ratio", 0.0)), float(noise.get("open_ratio", 0.0))
        if not (0 <= closed and 0 <= opened and closed + opened < 1):
            raise ValueError("need closed_ratio, open_ratio >= 0 and closed_ratio + open_ratio < 1")
        heads = []
        for h in merged["heads"]:
            h = dict(h)
            name = h.pop("name", None) or HeadKind(h["kind"]).value
            heads.append((name, make_head(h.pop("kind"), **h)))
        if not heads:
            raise ValueError("at least one head is required")
        seeds = [int(s) for s in merged["seeds"]]
        if not seeds:
            raise ValueError("at least one seed is required")
        out = merged.get("output_dir") or os.environ.get(OUTPUT_ENV) or "marginlab-out"
        return cls(
            dataset=DatasetSpec(**merged["dataset"]),
            closed_ratio=closed,
            open_ratio=opened,
            noise_seed=int(noise.get("seed", merged["dataset"].get("seed", 0) + 1)),
            model=merged["model"],
            train=merged["train"],
            heads=heads,
            output_dir=Path(out),
            seeds=seeds,
            eval=merged["eval"],
            sweep=merged["sweep"],
            raw=merged,
        )

    def data_dir(self) -> Path:
        return self.output_dir / "data"

    def runs_dir(self) -> Path:
        return self.output_dir / "runs"

    def eval_dir(self) -> Path:
        return self.output_dir / "eval"

    def train_config(self, head: HeadConfig, seed: int) -> TrainConfig:
        params = dict(self.train)
        if "lr_milestones" in params and params["lr_milestones"] is not None:
            params["lr_milestones"] = tuple(params["lr_milestones"])
        return TrainConfig(head=head, seed=seed, **params)


def set_dotted(doc: dict, key: str, raw_value: str):
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node = doc
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def load_config(path, overrides=()) -> ExperimentConfig:
    doc = json.loads(Path(path).read_text()) if path else {}
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        set_dotted(doc, key, val)
    return ExperimentConfig.from_dict(doc)


def cmd_gen(cfg: ExperimentConfig) -> dict:
    g = generate(cfg.dataset)
    noisy, ledger = make_noisy(g.train, cfg.closed_ratio, cfg.open_ratio, g.distractors, cfg.noise_seed)
    d = cfg.data_dir()
    mio.save_dataset(d / "train.csv", noisy)
    mio.save_dataset(d / "holdout.csv", g.holdout)
    mio.save_distractors(d / "distractors.csv", g.distractors)
    mio.save_ledger(d / "ledger.csv", ledger)
    closed = {e.index for e in ledger.of_kind("ClosedSet")}
    opened = {e.index for e in ledger.of_kind("OpenSet")}
    summary = {
        "train": len(noisy), "holdout": len(g.holdout), "distractors": len(g.distractors),
        "closed_set": len(closed), "open_set": len(opened), "disjoint": not (closed & opened),
    }
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return summary


def run_name(head_name: str, seed: int) -> str:
    return f"{head_name}_{seed}"


def _train_one(job):
    cfg, head_name, head, seed = job
    data = mio.load_dataset(cfg.data_dir() / "train.csv")
    ledger = mio.load_ledger(cfg.data_dir() / "ledger.csv")
    model = EmbeddingModel.init(
        data.inputs.shape[1], int(cfg.model["embed_dim"]), data.num_classes,
        hidden_dim=int(cfg.model.get("hidden_dim", 0)),
        out_bias=bool(cfg.model.get("out_bias", False)), seed=seed)
    trained, metrics = train(model, data, ledger, cfg.train_config(head, seed))
    name = run_name(head_name, seed)
    meta = {"head": head.to_dict(), "head_name": head_name, "seed": seed}
    mio.save_checkpoint(cfg.runs_dir() / f"{name}.ckpt.json", trained, meta)
    mio.atomic_write(cfg.runs_dir() / f"{name}.metrics.csv", metrics.to_csv())
    return name


def cmd_train(cfg: ExperimentConfig, heads=None, jobs: int = 1) -> list[str]:
    if not (cfg.data_dir() / "train.csv").exists():
        raise FileNotFoundError(f"no dataset under {cfg.data_dir()}; run `gen` first")
    selected = [(n, h) for n, h in cfg.heads if not heads or n in heads]
    work = [(cfg, n, h, s) for n, h in selected for s in cfg.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            names = list(pool.map(_train_one, work))
    else:
        names = [_train_one(w) for w in work]
    for n in names:
        print(f"trained {n}")
    return names


def cmd_eval(cfg: ExperimentConfig) -> list[dict]:
    holdout = mio.load_dataset(cfg.data_dir() / "holdout.csv")
    ledger = mio.load_ledger(cfg.data_dir() / "ledger.csv")
    pairs = make_verification_pairs(holdout, int(cfg.eval.get("num_pairs", 500)), cfg.eval.get("seed", 0))
    rows = []
    for head_name, head in cfg.heads:
        for seed in cfg.seeds:
            name = run_name(head_name, seed)
            ckpt = cfg.runs_dir() / f"{name}.ckpt.json"
            if not ckpt.exists():
                raise FileNotFoundError(f"missing checkpoint {ckpt}")
            model, _ = mio.load_checkpoint(ckpt)
            res = verification_accuracy(model, pairs, holdout)
            rows.append({"run": name, "head": head_name, "seed": seed,
                         "accuracy": res.accuracy, "best_threshold": res.best_threshold})
            if head.correction_enabled:
                metrics = MetricsLog.from_csv((cfg.runs_dir() / f"{name}.metrics.csv").read_text())
                mio.atomic_write(cfg.eval_dir() / f"{name}.detection.csv",
                                 mio.detection_csv(detection_curve(metrics, ledger)))
    mio.atomic_write(cfg.eval_dir() / "comparison.csv", mio.rows_to_csv(
        mio.COMPARISON_HEADER,
        [[r["run"], r["head"], r["seed"], repr(r["accuracy"]), repr(r["best_threshold"])] for r in rows]))
    summary = []
    for head_name, _ in cfg.heads:
        accs = [r["accuracy"] for r in rows if r["head"] == head_name]
        mean, std = aggregate(accs)
        summary.append([head_name, len(accs), repr(mean), repr(std)])
        print(f"{head_name}: accuracy {mean:.4f} +- {std:.4f} over {len(accs)} seed(s)")
    mio.atomic_write(cfg.eval_dir() / "summary.csv",
                     mio.rows_to_csv(["head", "runs", "mean_accuracy", "std_accuracy"], summary))
    return rows


def gradcheck_batch(seed: int, n_samples=8, num_classes=10, input_dim=12, embed_dim=16):
    rng = np.random.default_rng(seed)
    model = EmbeddingModel.init(input_dim, embed_dim, num_classes, seed=seed)
    inputs = rng.standard_normal((n_samples, input_dim))
    labels = rng.integers(0, num_classes, n_samples)
    return model, inputs, labels


def gradcheck_heads() -> list[tuple[str, HeadConfig]]:
    heads = []
    for kind in HeadKind:
        overrides = {"t": 0.3} if kind is HeadKind.CURRICULAR else {}
        heads.append((kind.value, make_head(kind, **overrides)))
    return heads


def _corrupted_grad(model, head, inputs, labels):
    from .trainer import train_step
    _, grads = train_step(model, head, inputs, labels)
    return {k: v * 1.01 for k, v in grads.items()}


def cmd_gradcheck(tol: float = 1e-5, seeds=(0, 1, 2, 3, 4), corrupt: bool = False) -> bool:
    ok = True
    for name, head in gradcheck_heads():
        worst = 0.0
        for seed in seeds:
            model, x, y = gradcheck_batch(seed)
            err = finite_diff_audit(model, x, y, head, grad_fn=_corrupted_grad if corrupt else None)
            worst = max(worst, err)
        passed = worst <= tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name} max_rel_err={worst:.3e} tol={tol:.0e}")
    return ok


def cmd_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[list]:
    rows = []
    for closed, opened in cfg.sweep.get("grid", DEFAULT_NOISE_GRID):
        doc = copy.deepcopy(cfg.raw)
        doc["noise"] = dict(doc["noise"], closed_ratio=closed, open_ratio=opened)
        doc["output_dir"] = str(cfg.output_dir / "sweep" / f"C{closed:g}_O{opened:g}")
        cell = ExperimentConfig.from_dict(doc)
        print(f"== closed={closed:g} open={opened:g}")
        cmd_gen(cell)
        cmd_train(cell, jobs=jobs)
        results = cmd_eval(cell)
        for head_name, _ in cell.heads:
            mean, std = aggregate([r["accuracy"] for r in results if r["head"] == head_name])
            rows.append([closed, opened, head_name, repr(mean), repr(std)])
    mio.atomic_write(cfg.output_dir / "sweep" / "summary.csv", mio.rows_to_csv(
        ["closed_ratio", "open_ratio", "head", "mean_accuracy", "std_accuracy"], rows))
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marginlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "train", "eval", "gradcheck", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment JSON file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config path")
        p.add_argument("--jobs", type=int, default=1, help="parallel training runs")
        if name == "train":
            p.add_argument("--head", action="append", help="train only these head names")
        if name == "gradcheck":
            p.add_argument("--tol", type=float, default=1e-5)
            p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.command == "gradcheck":
            return 0 if cmd_gradcheck(args.tol, corrupt=args.corrupt) else 1
        cfg = load_config(args.config, args.set)
        if args.command == "gen":
            cmd_gen(cfg)
        elif args.command == "train":
            cmd_train(cfg, heads=args.head, jobs=args.jobs)
        elif args.command == "eval":
            cmd_eval(cfg)
        elif args.command == "sweep":
            cmd_sweep(cfg, jobs=args.jobs)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
