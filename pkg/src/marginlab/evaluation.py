"""Verification accuracy, noise-detection curves and the frozen-center oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import _correction_targets
from .hypersphere import cosine_matrix, normalize
from .noisegen import NoiseKind, NoiseLedger, NoisyDataset
from .trainer import MetricsLog

THRESHOLDS = np.arange(-1000, 1001) / 1000.0


class EmptyPairsError(ValueError):
    pass


class LedgerMissingError(ValueError):
    pass


@dataclass
class VerificationResult:
    best_threshold: float
    accuracy: float
    genuine_mean_cos: float
    impostor_mean_cos: float


def sweep_threshold(similarities, same, thresholds=THRESHOLDS):
    """Best accuracy of the rule ``similarity >= threshold``.

    Returns ``(threshold, accuracy)``; ties go to the lowest threshold.
    """
    sim = np.asarray(similarities, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if sim.size == 0:
        raise EmptyPairsError("no pairs to evaluate")
    # sort once, then count how many of each class sit at or above every threshold
    order = np.argsort(sim, kind="stable")
    sorted_sim = sim[order]
    same_sorted = same[order]
    cum_same = np.concatenate([[0], np.cumsum(same_sorted)])
    below = np.searchsorted(sorted_sim, thresholds, side="left")
    n_same = int(same.sum())
    same_below = cum_same[below]
    diff_below = below - same_below
    correct = (n_same - same_below) + diff_below
    acc = correct / len(sim)
    best = int(np.argmax(acc))
    return float(thresholds[best]), float(acc[best])


def _embed(embedder, inputs):
    if hasattr(embedder, "embed"):
        return embedder.embed(inputs)
    return embedder(inputs)


def verification_accuracy(embedder, pairs, holdout: NoisyDataset) -> VerificationResult:
    """Threshold-swept pair verification on unseen identities.

    ``embedder`` is a trained model (anything with ``.embed``) or a plain
    callable mapping inputs to embeddings.
    """
    if not pairs:
        raise EmptyPairsError("no pairs to evaluate")
    emb = normalize(_embed(embedder, holdout.inputs))
    i = np.array([p[0] for p in pairs])
    j = np.array([p[1] for p in pairs])
    same = np.array([bool(p[2]) for p in pairs])
    sim = np.clip(np.sum(emb[i] * emb[j], axis=1), -1.0, 1.0)
    thr, acc = sweep_threshold(sim, same)
    return VerificationResult(
        best_threshold=thr,
        accuracy=acc,
        genuine_mean_cos=float(sim[same].mean()) if same.any() else float("nan"),
        impostor_mean_cos=float(sim[~same].mean()) if (~same).any() else float("nan"),
    )


@dataclass
class DetectionPoint:
    epoch: int
    detected: int
    correct: int
    wrong: int
    precision: float
    recall: float


def detection_curve(log: MetricsLog, ledger: NoiseLedger | None) -> list[DetectionPoint]:
    """Per-epoch correction counts with precision and recall against the ledger.

    Recall is measured against the number of closed-set entries;
    precision is ``correct / max(detected, 1)``.
    """
    if ledger is None or (log.iterations and not log.has_ledger):
        raise LedgerMissingError("detection curve needs a ledger-attached run")
    total = ledger.closed_count
    out = []
    for ep in log.epochs():
        out.append(DetectionPoint(
            epoch=ep.epoch,
            detected=ep.detected,
            correct=ep.correct,
            wrong=ep.wrong,
            precision=ep.correct / max(ep.detected, 1),
            recall=ep.correct / total if total else 0.0,
        ))
    return out


@dataclass
class OracleCorrectionResult:
    recovered_fraction: float
    false_positives: int
    detected: int


def oracle_correction_test(centers, data: NoisyDataset, ledger: NoiseLedger, m: float) -> OracleCorrectionResult:
    """Run the relabel rule with class centers frozen at the ground truth.

    Each sample is compared directly against the true centers; a flipped
    sample counts as recovered when it is relabelled to its original class,
    and any relabel of a clean sample is a false positive.
    """
    cos = cosine_matrix(normalize(data.inputs), normalize(centers))
    target, fire = _correction_targets(cos, data.labels, m)
    flipped = {e.index: e.original_label for e in ledger.of_kind(NoiseKind.CLOSED)}
    recovered = sum(1 for i, orig in flipped.items() if fire[i] and target[i] == orig)
    noisy = ledger.indices
    false_pos = sum(1 for i in np.flatnonzero(fire) if int(i) not in noisy)
    frac = recovered / len(flipped) if flipped else 1.0
    return OracleCorrectionResult(frac, false_pos, int(fire.sum()))


def aggregate(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return float(v.mean()), std
