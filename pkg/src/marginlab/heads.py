"""Margin and mining softmax heads with hand-written backward passes.

Every head maps a cosine matrix (samples x classes) and integer labels to a
mean loss. ``backward`` chains the cosine gradient through the cosine
clamp and the l2 normalization of both features and class centers, so the
returned gradients are with respect to the raw (unnormalized) parameters.

The boundary heads share one label self-correction rule: a sample whose
margin-shifted cosine to some other class beats its own cosine is
relabelled to that class for the current iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .hypersphere import EPS, margin_cos, margin_cos_grad


class InvalidHeadStateError(RuntimeError):
    pass


class HeadKind(str, Enum):
    NORMFACE = "NormFace"
    ARCFACE = "ArcFace"
    COSFACE = "CosFace"
    FOCAL = "Focal"
    MVARC = "MVArc"
    CURRICULAR = "Curricular"
    BOUNDARY_F1 = "BoundaryF1"
    BOUNDARY_FACE = "BoundaryFace"


BOUNDARY_KINDS = (HeadKind.BOUNDARY_F1, HeadKind.BOUNDARY_FACE)
MINING_KINDS = (HeadKind.MVARC, HeadKind.CURRICULAR)


@dataclass(frozen=True)
class HeadConfig:
    """Hyperparameters of one loss head.

    ``m`` is an angle in radians except for CosFace, where it is subtracted
    from the cosine directly. ``t`` is the fixed modulator for MVArc and the
    running EMA state for Curricular. ``lam`` weights the boundary
    regularizer and is only read by BoundaryFace.
    """

    kind: HeadKind
    s: float = 32.0
    m: float = 0.5
    t: float | None = None
    lam: float = math.pi
    focal_gamma: float = 2.0
    correction_enabled: bool = False
    ema_alpha: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "kind", HeadKind(self.kind))
        if self.s <= 0:
            raise ValueError("scale s must be positive")
        if self.m < 0:
            raise ValueError("margin m must be non-negative")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be non-negative")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must lie in [0, 1]")

    @property
    def name(self) -> str:
        return self.kind.value

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "s": self.s,
            "m": self.m,
            "t": self.t,
            "lam": self.lam,
            "focal_gamma": self.focal_gamma,
            "correction_enabled": self.correction_enabled,
            "ema_alpha": self.ema_alpha,
        }


_KIND_DEFAULTS = {
    HeadKind.NORMFACE: {"m": 0.0},
    HeadKind.ARCFACE: {},
    HeadKind.COSFACE: {"m": 0.35},
    HeadKind.FOCAL: {"m": 0.0},
    HeadKind.MVARC: {"t": 0.2},
    HeadKind.CURRICULAR: {"t": 0.0},
    HeadKind.BOUNDARY_F1: {"correction_enabled": True},
    HeadKind.BOUNDARY_FACE: {"correction_enabled": True},
}


def make_head(kind, **overrides) -> HeadConfig:
    """HeadConfig with per-kind defaults, e.g. ``make_head("MVArc", s=16)``."""
    kind = HeadKind(kind)
    params = dict(_KIND_DEFAULTS[kind])
    params.update(overrides)
    return HeadConfig(kind=kind, **params)


@dataclass
class BatchRecord:
    """Per-sample forward bookkeeping for one batch, stored column-wise.

    ``hard`` is ``regularizer > 0`` for every head, but only BoundaryFace
    adds the regularizer to its loss.
    """

    original_label: np.ndarray
    effective_label: np.ndarray
    corrected: np.ndarray
    hard: np.ndarray
    regularizer: np.ndarray
    loss: np.ndarray
    cosines: np.ndarray
    probs: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.original_label)

    def sample(self, i: int) -> dict:
        return {
            "original_label": int(self.original_label[i]),
            "effective_label": int(self.effective_label[i]),
            "corrected": bool(self.corrected[i]),
            "hard": bool(self.hard[i]),
            "regularizer_value": float(self.regularizer[i]),
            "loss_value": float(self.loss[i]),
            "cosine_row": self.cosines[i].copy(),
        }


@dataclass
class ForwardResult:
    loss: float
    records: BatchRecord
    t: float | None  # Curricular state after this batch; None for other heads


def positive_transform(config: HeadConfig, cos_pos):
    """Margin applied to the ground-truth cosine."""
    if config.kind is HeadKind.NORMFACE:
        c = np.asarray(cos_pos, dtype=np.float64)
        return c if c.ndim else float(c)
    if config.kind is HeadKind.COSFACE:
        c = np.asarray(cos_pos, dtype=np.float64) - config.m
        return c if c.ndim else float(c)
    return margin_cos(cos_pos, config.m)


def _positive_transform_grad(config: HeadConfig, cos_pos):
    if config.kind in (HeadKind.NORMFACE, HeadKind.COSFACE):
        return np.ones_like(np.asarray(cos_pos, dtype=np.float64))
    return np.asarray(margin_cos_grad(cos_pos, config.m))


def _require_t(config: HeadConfig) -> float:
    if config.t is None:
        raise InvalidHeadStateError(f"{config.name} head needs a modulator t")
    return config.t


def negative_transform(config: HeadConfig, cos_neg, t_pos):
    """Mining transform of a negative cosine.

    A negative is hard when it exceeds the margin-adjusted positive
    ``t_pos``; only MVArc and Curricular reshape hard negatives.
    """
    c = np.asarray(cos_neg, dtype=np.float64)
    if config.kind not in MINING_KINDS:
        return c if c.ndim else float(c)
    t = _require_t(config)
    hard = (np.asarray(t_pos) - c) < 0
    if config.kind is HeadKind.MVARC:
        out = np.where(hard, c + t, c)
    else:
        out = np.where(hard, c * (t + c), c)
    return out if out.ndim else float(out)


def focal_indicator(p, focal_gamma: float):
    """Focal weight ``(1 - p) ** focal_gamma``."""
    out = (1.0 - np.asarray(p, dtype=np.float64)) ** focal_gamma
    return out if out.ndim else float(out)


def _nearest_negative(cos: np.ndarray, labels: np.ndarray):
    """Argmax over j != label of cos, lowest index on ties."""
    rows = np.arange(len(labels))
    masked = cos.copy()
    masked[rows, labels] = -np.inf
    j = np.argmax(masked, axis=1)
    return j, masked[rows, j]


def _correction_targets(cos: np.ndarray, labels: np.ndarray, m: float):
    rows = np.arange(len(labels))
    shifted = margin_cos(cos, m)
    shifted = np.atleast_2d(shifted).copy()
    shifted[rows, labels] = -np.inf
    k = np.argmax(shifted, axis=1)
    fire = shifted[rows, k] > cos[rows, labels]
    return k, fire


def correction_check(row, y: int, m: float) -> int | None:
    """Class the sample should be relabelled to, or None.

    Relabel to k* = argmax_{k != y} cos(theta_k + m) when that value is
    strictly larger than cos(theta_y). Past theta + m = pi the shifted
    cosine continues linearly (see ``margin_cos``).
    """
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or len(row) < 2:
        raise ValueError("row must be a 1-d cosine vector of length >= 2")
    k, fire = _correction_targets(row[None, :], np.array([y]), m)
    return int(k[0]) if fire[0] else None


def boundary_regularizer(row, y: int, m: float) -> float:
    """``max(0, max_{j != y} cos_j - cos(theta_y + m))``; positive means hard."""
    row = np.asarray(row, dtype=np.float64)
    _, max_neg = _nearest_negative(row[None, :], np.array([y]))
    return float(max(0.0, max_neg[0] - margin_cos(row[y], m)))


def _effective_labels(config: HeadConfig, cos: np.ndarray, labels: np.ndarray):
    if not config.correction_enabled:
        return labels.copy(), np.zeros(len(labels), dtype=bool)
    if config.kind not in BOUNDARY_KINDS:
        raise ValueError(f"label correction is not defined for {config.name}")
    k, fire = _correction_targets(cos, labels, config.m)
    return np.where(fire, k, labels), fire


def _logits(config: HeadConfig, cos: np.ndarray, eff: np.ndarray):
    rows = np.arange(len(eff))
    pos = cos[rows, eff]
    tpos = np.asarray(positive_transform(config, pos))
    logits = config.s * np.asarray(negative_transform(config, cos, tpos[:, None]))
    logits[rows, eff] = config.s * tpos
    return logits, pos, tpos


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _uses_regularizer(config: HeadConfig) -> bool:
    return config.kind is HeadKind.BOUNDARY_FACE and config.lam != 0


def forward_loss(config: HeadConfig, cos_matrix, labels) -> ForwardResult:
    """Mean batch loss plus per-sample records.

    Per sample: optional label correction, margin/mining logits, softmax
    cross-entropy (focal-weighted for Focal), and for BoundaryFace
    ``+ lam * f`` with ``f`` the boundary regularizer.
    """
    cos = np.atleast_2d(np.asarray(cos_matrix, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if cos.shape[0] < 1 or cos.shape[0] != len(labels):
        raise ValueError("need one label per cosine row and at least one row")
    if labels.min() < 0 or labels.max() >= cos.shape[1]:
        raise ValueError("label out of range")
    if config.kind in MINING_KINDS:
        _require_t(config)

    rows = np.arange(len(labels))
    eff, corrected = _effective_labels(config, cos, labels)
    logits, pos, tpos = _logits(config, cos, eff)
    logp = _log_softmax(logits)
    logp_y = logp[rows, eff]
    per_sample = -logp_y
    if config.kind is HeadKind.FOCAL:
        # 1 - p via expm1 keeps precision when p is close to 1
        per_sample = (-np.expm1(logp_y)) ** config.focal_gamma * per_sample

    _, max_neg = _nearest_negative(cos, eff)
    f = np.maximum(0.0, max_neg - tpos)
    if _uses_regularizer(config):
        per_sample = per_sample + config.lam * f

    t_next = None
    if config.kind is HeadKind.CURRICULAR:
        t_next = config.ema_alpha * float(pos.mean()) + (1.0 - config.ema_alpha) * config.t

    records = BatchRecord(
        original_label=labels.copy(),
        effective_label=eff,
        corrected=corrected,
        hard=f > 0,
        regularizer=f,
        loss=per_sample,
        cosines=cos.copy(),
        probs=np.exp(logp),
    )
    return ForwardResult(loss=float(per_sample.mean()), records=records, t=t_next)


def cosine_grad(config: HeadConfig, records: BatchRecord) -> np.ndarray:
    """Gradient of the mean batch loss with respect to the cosine matrix."""
    cos = records.cosines
    eff = records.effective_label
    n_samples = len(eff)
    rows = np.arange(n_samples)
    logits, pos, tpos = _logits(config, cos, eff)
    logp = _log_softmax(logits)
    probs = np.exp(logp)
    onehot = np.zeros_like(cos)
    onehot[rows, eff] = 1.0

    dlogits = probs - onehot
    if config.kind is HeadKind.FOCAL:
        gamma = config.focal_gamma
        logp_y = logp[rows, eff]
        p = np.exp(logp_y)
        one_minus_p = -np.expm1(logp_y)
        weight = one_minus_p**gamma
        if gamma == 0:
            scale = weight
        else:
            scale = weight + gamma * one_minus_p ** (gamma - 1.0) * p * (-logp_y)
        dlogits = dlogits * scale[:, None]
    dlogits /= n_samples

    # d(logit)/d(cos): s * g'(c) off the label, s * T'(c) on it
    dneg = np.ones_like(cos)
    if config.kind is HeadKind.CURRICULAR:
        hard_neg = (tpos[:, None] - cos) < 0
        dneg = np.where(hard_neg, config.t + 2.0 * cos, 1.0)
    tgrad = _positive_transform_grad(config, pos)
    grad = config.s * dlogits * dneg
    grad[rows, eff] = config.s * dlogits[rows, eff] * tgrad

    if _uses_regularizer(config):
        j, max_neg = _nearest_negative(cos, eff)
        hard = (max_neg - tpos) > 0
        w = config.lam / n_samples
        grad[rows[hard], j[hard]] += w
        grad[rows[hard], eff[hard]] -= w * tgrad[hard]
    return grad


def chain_normalized(grad_cos: np.ndarray, features, centers):
    """Push a cosine-matrix gradient back to raw features and centers.

    Accounts for the clamp to [-1+EPS, 1-EPS] (zero gradient where it
    binds) and for l2 normalization of both operands.
    """
    x = np.asarray(features, dtype=np.float64)
    w = np.asarray(centers, dtype=np.float64)
    xn = np.linalg.norm(x, axis=1, keepdims=True)
    wn = np.linalg.norm(w, axis=1, keepdims=True)
    xh, wh = x / xn, w / wn
    dots = xh @ wh.T
    g = np.where((dots > -1.0 + EPS) & (dots < 1.0 - EPS), grad_cos, 0.0)
    gxh = g @ wh
    gwh = g.T @ xh
    gx = (gxh - xh * np.sum(gxh * xh, axis=1, keepdims=True)) / xn
    gw = (gwh - wh * np.sum(gwh * wh, axis=1, keepdims=True)) / wn
    return gx, gw


def backward(config: HeadConfig, records: BatchRecord, features, centers):
    """Gradients of the mean batch loss w.r.t. raw features and raw centers.

    ``records`` must come from ``forward_loss`` on the cosines of these same
    features and centers with the same ``config``. Label corrections are
    piecewise constant, so the effective labels simply define the positive
    class; the regularizer contributes only on hard samples (subgradient 0
    at f = 0).
    """
    return chain_normalized(cosine_grad(config, records), features, centers)


def warmup_variant(config: HeadConfig, disable_correction: bool = True, disable_mining: bool = True) -> HeadConfig:
    """The plain margin head a boundary head degenerates to during warm-up."""
    if config.kind not in BOUNDARY_KINDS:
        return config
    changes = {}
    if disable_correction:
        changes["correction_enabled"] = False
    if disable_mining:
        changes["lam"] = 0.0
    return replace(config, **changes)
