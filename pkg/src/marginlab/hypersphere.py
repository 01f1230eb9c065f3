"""Unit-sphere geometry shared by every loss head.

All arithmetic is float64. Cosines fed to ``arccos`` are clamped first so
that the poles never produce NaN.
"""
from __future__ import annotations

import numpy as np

EPS = 1e-7
_MIN_NORM = 1e-12


class ZeroVectorError(ValueError):
    """Raised when a vector is too short to be normalized."""


class DimensionMismatchError(ValueError):
    pass


def normalize(v, axis: int = -1) -> np.ndarray:
    """L2-normalize ``v`` along ``axis``.

    Works on a single vector or on a stack of row vectors.

    >>> normalize([3.0, 4.0])
    array([0.6, 0.8])
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm <= _MIN_NORM):
        raise ZeroVectorError(f"cannot normalize vector with norm <= {_MIN_NORM}")
    return v / norm


def cosine_matrix(features, centers) -> np.ndarray:
    """Cosine of every (sample, class center) pair, clamped to [-1+EPS, 1-EPS].

    Both arguments must already be unit-norm rows of the same width.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if features.shape[1] != centers.shape[1]:
        raise DimensionMismatchError(
            f"feature dim {features.shape[1]} != center dim {centers.shape[1]}"
        )
    return np.clip(features @ centers.T, -1.0 + EPS, 1.0 - EPS)


def angular_add(cos_theta, m: float):
    """Return cos(theta + m) given cos(theta).

    The input is clipped to [-1, 1]. There is no easy-margin fallback for
    theta + m > pi: the raw expression is evaluated.
    """
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0)
    if m == 0:
        out = c
    else:
        out = np.cos(np.arccos(c) + m)
    return out if out.ndim else float(out)


def angular_add_grad(cos_theta, m: float):
    """d/dc of cos(arccos(c) + m), i.e. sin(theta + m) / sin(theta).

    Undefined at c = +-1; callers pass cosines already clamped away from
    the poles.
    """
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0)
    if m == 0:
        out = np.ones_like(c)
    else:
        theta = np.arccos(c)
        out = np.sin(theta + m) / np.sin(theta)
    return out if out.ndim else float(out)


def margin_cos(cos_theta, m: float):
    """cos(theta + m), continued as ``c + cos(m) - 1`` once theta + m > pi.

    Past pi the raw expression turns back upward, which lets a model lower
    its loss by pushing every feature antipodal to every center. The
    continuation is the unit-slope line through -1 at the switch point, so
    the result stays continuous and strictly increasing in c.
    """
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0)
    if m == 0:
        out = c
    else:
        out = np.where(c > np.cos(np.pi - m), np.cos(np.arccos(c) + m), c + np.cos(m) - 1.0)
    return out if out.ndim else float(out)


def margin_cos_grad(cos_theta, m: float):
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0)
    if m == 0:
        out = np.ones_like(c)
    else:
        inside = c > np.cos(np.pi - m)
        theta = np.arccos(c)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.sin(theta + m) / np.sin(theta)
        out = np.where(inside, ratio, 1.0)
    return out if out.ndim else float(out)
