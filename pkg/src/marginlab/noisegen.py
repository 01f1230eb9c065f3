"""Synthetic clustered datasets on the unit sphere with injectable label noise.

Class centers are normalized Gaussians. A sample is its center plus isotropic
Gaussian noise of standard deviation ``1 / concentration``, projected back
onto the sphere (a cheap stand-in for von Mises-Fisher sampling).

Closed-set noise flips a label to another training class; open-set noise
replaces the input with a sample from a distractor class that is not in the
label set. Every corruption is recorded in a :class:`NoiseLedger`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .hypersphere import normalize


class InvalidSpecError(ValueError):
    pass


class InsufficientDistractorsError(ValueError):
    pass


class InsufficientHoldoutError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int
    samples_per_class: int
    input_dim: int
    concentration: float = 4.0
    num_distractor_classes: int = 0
    num_holdout_classes: int = 0
    seed: int = 0

    def validate(self):
        if self.num_classes < 1 or self.samples_per_class < 1 or self.input_dim < 1:
            raise InvalidSpecError("num_classes, samples_per_class and input_dim must be >= 1")
        if not self.concentration > 0:
            raise InvalidSpecError("concentration must be > 0")
        if self.num_distractor_classes < 0 or self.num_holdout_classes < 0:
            raise InvalidSpecError("class counts must be non-negative")


@dataclass
class NoisyDataset:
    inputs: np.ndarray  # (N, D), unit rows
    labels: np.ndarray  # (N,), int64
    num_classes: int

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def copy(self) -> "NoisyDataset":
        return NoisyDataset(self.inputs.copy(), self.labels.copy(), self.num_classes)


class NoiseKind(str, Enum):
    CLOSED = "ClosedSet"
    OPEN = "OpenSet"


@dataclass(frozen=True)
class NoiseEntry:
    index: int
    kind: NoiseKind
    original_label: int | None
    assigned_label: int


@dataclass
class NoiseLedger:
    entries: list[NoiseEntry] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.index in seen:
                raise ValueError(f"index {e.index} corrupted twice")
            if e.kind is NoiseKind.CLOSED and e.original_label == e.assigned_label:
                raise ValueError("closed-set entry must change the label")
            seen.add(e.index)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def indices(self) -> set[int]:
        return {e.index for e in self.entries}

    def of_kind(self, kind: NoiseKind) -> list[NoiseEntry]:
        return [e for e in self.entries if e.kind is NoiseKind(kind)]

    @property
    def closed_count(self) -> int:
        return len(self.of_kind(NoiseKind.CLOSED))

    def merged(self, other: "NoiseLedger") -> "NoiseLedger":
        return NoiseLedger(sorted(self.entries + other.entries, key=lambda e: e.index))

    def clean_labels(self, labels) -> np.ndarray:
        """Undo every closed-set flip."""
        out = np.array(labels, dtype=np.int64, copy=True)
        for e in self.of_kind(NoiseKind.CLOSED):
            out[e.index] = e.original_label
        return out

    def open_mask(self, size: int) -> np.ndarray:
        mask = np.zeros(size, dtype=bool)
        idx = [e.index for e in self.of_kind(NoiseKind.OPEN)]
        mask[idx] = True
        return mask


class GeneratedData(NamedTuple):
    train: NoisyDataset
    holdout: NoisyDataset
    distractors: np.ndarray
    class_centers: np.ndarray  # training-class centers, (n, D)


def _sample_clusters(rng, centers, per_class, std):
    reps = np.repeat(centers, per_class, axis=0)
    labels = np.repeat(np.arange(len(centers)), per_class)
    noise = rng.standard_normal(reps.shape)
    if std > 0:
        reps = reps + std * noise
    return normalize(reps), labels


def generate(spec: DatasetSpec) -> GeneratedData:
    """Draw train, holdout and distractor sets. Deterministic given ``spec.seed``.

    Holdout and distractor classes get their own independently drawn
    centers, disjoint from training identities.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    total = spec.num_classes + spec.num_holdout_classes + spec.num_distractor_classes
    centers = normalize(rng.standard_normal((total, spec.input_dim)))
    std = 0.0 if math.isinf(spec.concentration) else 1.0 / spec.concentration

    n, h = spec.num_classes, spec.num_holdout_classes
    x, y = _sample_clusters(rng, centers[:n], spec.samples_per_class, std)
    train = NoisyDataset(x, y, n)

    if h:
        hx, hy = _sample_clusters(rng, centers[n:n + h], spec.samples_per_class, std)
    else:
        hx, hy = np.empty((0, spec.input_dim)), np.empty(0, dtype=np.int64)
    holdout = NoisyDataset(hx, hy, h)

    if spec.num_distractor_classes:
        dx, _ = _sample_clusters(rng, centers[n + h:], spec.samples_per_class, std)
    else:
        dx = np.empty((0, spec.input_dim))
    return GeneratedData(train, holdout, dx, centers[:n].copy())


def _pick(rng, size, count, avoid):
    pool = np.setdiff1d(np.arange(size), np.fromiter(avoid, dtype=np.int64, count=len(avoid)))
    if count > len(pool):
        raise ValueError(f"cannot corrupt {count} samples, only {len(pool)} eligible")
    return np.sort(rng.choice(pool, size=count, replace=False))


def _avoid_set(avoid) -> set[int]:
    if avoid is None:
        return set()
    if isinstance(avoid, NoiseLedger):
        return avoid.indices
    return {int(i) for i in avoid}


def flip_labels(data: NoisyDataset, indices, new_labels) -> NoisyDataset:
    out = data.copy()
    out.labels[np.asarray(indices, dtype=np.int64)] = new_labels
    return out


def replace_inputs(data: NoisyDataset, indices, replacements) -> NoisyDataset:
    out = data.copy()
    out.inputs[np.asarray(indices, dtype=np.int64)] = replacements
    return out


def inject_closed_noise(data: NoisyDataset, ratio: float, seed, avoid=None):
    """Flip ``round(ratio * len(data))`` labels to a uniformly chosen other class.

    ``avoid`` (indices or a ledger) keeps the corrupted index set disjoint
    from earlier injections.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must lie in [0, 1)")
    count = int(round(ratio * len(data)))
    if count and data.num_classes < 2:
        raise ValueError("closed-set noise needs at least two classes")
    rng = np.random.default_rng(seed)
    idx = _pick(rng, len(data), count, _avoid_set(avoid))
    original = data.labels[idx]
    shift = rng.integers(1, data.num_classes, size=count) if count else np.empty(0, dtype=np.int64)
    assigned = (original + shift) % data.num_classes
    entries = [
        NoiseEntry(int(i), NoiseKind.CLOSED, int(o), int(a))
        for i, o, a in zip(idx, original, assigned)
    ]
    return flip_labels(data, idx, assigned), NoiseLedger(entries)


def inject_open_noise(data: NoisyDataset, ratio: float, distractors, seed, avoid=None):
    """Replace inputs of ``round(ratio * len(data))`` samples with distinct distractors.

    Labels are kept, so each replaced sample now carries the label of an
    identity it does not belong to.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError("ratio must lie in [0, 1)")
    distractors = np.atleast_2d(np.asarray(distractors, dtype=np.float64))
    count = int(round(ratio * len(data)))
    if count > len(distractors) or (count and distractors.shape[1] != data.inputs.shape[1]):
        raise InsufficientDistractorsError(
            f"need {count} distractors of dim {data.inputs.shape[1]}, have {distractors.shape}"
        )
    rng = np.random.default_rng(seed)
    idx = _pick(rng, len(data), count, _avoid_set(avoid))
    chosen = rng.choice(len(distractors), size=count, replace=False) if count else []
    entries = [
        NoiseEntry(int(i), NoiseKind.OPEN, None, int(data.labels[i])) for i in idx
    ]
    return replace_inputs(data, idx, distractors[chosen]), NoiseLedger(entries)


def make_noisy(data: NoisyDataset, closed_ratio: float, open_ratio: float, distractors, seed):
    """Closed-set flips then open-set replacement on disjoint index sets."""
    if closed_ratio + open_ratio >= 1:
        raise ValueError("closed_ratio + open_ratio must be < 1")
    ss = np.random.SeedSequence(seed)
    closed_seed, open_seed = ss.spawn(2)
    noisy, ledger = inject_closed_noise(data, closed_ratio, closed_seed)
    noisy, open_ledger = inject_open_noise(noisy, open_ratio, distractors, open_seed, avoid=ledger)
    return noisy, ledger.merged(open_ledger)


def make_verification_pairs(holdout: NoisyDataset, num_pairs: int, seed):
    """``num_pairs`` genuine and ``num_pairs`` impostor index pairs.

    Genuine pairs are two distinct samples of one identity, impostor pairs
    span two identities. Returned as a list of ``(i, j, same_identity)``.
    """
    if num_pairs < 1:
        raise ValueError("num_pairs must be positive")
    labels = holdout.labels
    classes, counts = np.unique(labels, return_counts=True)
    multi = classes[counts >= 2]
    if len(classes) < 2 or len(multi) < 1:
        raise InsufficientHoldoutError("holdout needs >= 2 classes and a class with >= 2 samples")
    by_class = {c: np.flatnonzero(labels == c) for c in classes}
    rng = np.random.default_rng(seed)

    pairs = []
    for _ in range(num_pairs):
        c = multi[rng.integers(len(multi))]
        i, j = rng.choice(by_class[c], size=2, replace=False)
        pairs.append((int(i), int(j), True))
    for _ in range(num_pairs):
        a, b = rng.choice(classes, size=2, replace=False)
        i = rng.choice(by_class[a])
        j = rng.choice(by_class[b])
        pairs.append((int(i), int(j), False))
    return pairs
