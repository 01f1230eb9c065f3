"""Text persistence for datasets, ledgers, checkpoints and result tables.

Dataset file (one sample per line, comma separated, 17 significant digits)::

    # num_classes=<n> dim=<D>
    <label>,<x_1>,...,<x_D>

Distractor pools use label -1. Ledger file (CSV with header)::

    index,kind,original_label,assigned_label

``original_label`` is empty for open-set entries. Checkpoints are JSON:
``{"format": 1, "state": {...}, "tensors": {name: {"shape": [...], "data": [...]}}}``
with floats written via ``repr`` so they round-trip exactly.

Every writer goes through a temp file and ``os.replace`` so an interrupted
run never leaves a half-written file behind.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .noisegen import NoiseEntry, NoiseKind, NoiseLedger, NoisyDataset
from .trainer import EmbeddingModel

CHECKPOINT_FORMAT = 1
COMPARISON_HEADER = ["run", "head", "seed", "accuracy", "best_threshold"]
DETECTION_HEADER = ["epoch", "detected", "correct", "wrong", "precision", "recall"]


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dump_dataset(inputs, labels, num_classes: int) -> str:
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    dim = inputs.shape[1] if inputs.size else 0
    lines = [f"# num_classes={num_classes} dim={dim}"]
    for lab, row in zip(labels, inputs):
        lines.append(",".join([str(int(lab))] + [_fmt(v) for v in row]))
    return "\n".join(lines) + "\n"


def parse_dataset(text: str) -> NoisyDataset:
    lines = text.splitlines()
    header = dict(kv.split("=") for kv in lines[0].lstrip("# ").split())
    dim = int(header["dim"])
    body = [ln for ln in lines[1:] if ln.strip()]
    labels = np.array([int(ln.split(",", 1)[0]) for ln in body], dtype=np.int64)
    inputs = np.array([[float(v) for v in ln.split(",")[1:]] for ln in body]).reshape(len(body), dim)
    return NoisyDataset(inputs, labels, int(header["num_classes"]))


def save_dataset(path, data: NoisyDataset) -> Path:
    return atomic_write(path, dump_dataset(data.inputs, data.labels, data.num_classes))


def load_dataset(path) -> NoisyDataset:
    return parse_dataset(Path(path).read_text())


def save_distractors(path, pool) -> Path:
    pool = np.atleast_2d(np.asarray(pool, dtype=np.float64))
    return atomic_write(path, dump_dataset(pool, [-1] * len(pool), 0))


def load_distractors(path) -> np.ndarray:
    return load_dataset(path).inputs


def dump_ledger(ledger: NoiseLedger) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "kind", "original_label", "assigned_label"])
    for e in sorted(ledger, key=lambda e: e.index):
        orig = "" if e.original_label is None else e.original_label
        w.writerow([e.index, e.kind.value, orig, e.assigned_label])
    return buf.getvalue()


def parse_ledger(text: str) -> NoiseLedger:
    entries = []
    for r in csv.DictReader(io.StringIO(text)):
        orig = r["original_label"]
        entries.append(NoiseEntry(
            int(r["index"]), NoiseKind(r["kind"]),
            None if orig == "" else int(orig), int(r["assigned_label"])))
    return NoiseLedger(entries)


def save_ledger(path, ledger: NoiseLedger) -> Path:
    return atomic_write(path, dump_ledger(ledger))


def load_ledger(path) -> NoiseLedger:
    return parse_ledger(Path(path).read_text())


def dump_checkpoint(model: EmbeddingModel, meta: dict | None = None) -> str:
    tensors = {
        name: {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
        for name, arr in model.params.items()
    }
    doc = {"format": CHECKPOINT_FORMAT, "meta": meta or {}, "state": model.state, "tensors": tensors}
    return json.dumps(doc, indent=1) + "\n"


def parse_checkpoint(text: str) -> tuple[EmbeddingModel, dict]:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    params = {
        name: np.array(t["data"], dtype=np.float64).reshape(t["shape"])
        for name, t in doc["tensors"].items()
    }
    return EmbeddingModel(params, dict(doc.get("state", {}))), doc.get("meta", {})


def save_checkpoint(path, model: EmbeddingModel, meta: dict | None = None) -> Path:
    return atomic_write(path, dump_checkpoint(model, meta))


def load_checkpoint(path) -> tuple[EmbeddingModel, dict]:
    return parse_checkpoint(Path(path).read_text())


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def detection_csv(points) -> str:
    return rows_to_csv(DETECTION_HEADER, [
        [p.epoch, p.detected, p.correct, p.wrong, _fmt(p.precision), _fmt(p.recall)]
        for p in points
    ])
