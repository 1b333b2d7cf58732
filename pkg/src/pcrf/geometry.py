"""Geometric feature templates over landmark frames.

Two static templates: normalized point-to-point distance (template 1) and
the cosine/sine of the signed angle spanned by three points (template 2).
Their pairwise derivatives (templates 4 and 5) are differences of the
static value between the two frames of a pair.

All evaluators are vectorized over parameter arrays; the scalar entry
points route through the vectorized kernels so that a value computed one
feature at a time is bit-identical to the batched path.
"""

from __future__ import annotations

import numpy as np

from .frames import LandmarkFrame, DataError


def inter_ocular_distance_many(lm: np.ndarray, eye_indices) -> np.ndarray:
    """Eye-center distances for a stack of landmark sets (n, L, 2)."""
    e0, e1 = eye_indices
    d = lm[..., e0, :] - lm[..., e1, :]
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])


def inter_ocular_distance(frame: LandmarkFrame) -> float:
    """Distance between the frame's two designated eye-center landmarks."""
    v = float(inter_ocular_distance_many(frame.landmarks, frame.eye_indices))
    if not v > 0:
        raise DataError("degenerate frame: coincident eye landmarks")
    return v


def point_distance(pa: np.ndarray, pb: np.ndarray, iod) -> np.ndarray:
    """Normalized Euclidean distance between point arrays (..., 2)."""
    d = pa - pb
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]) / iod


def angle_feature(pa: np.ndarray, pb: np.ndarray, pc: np.ndarray, lam) -> np.ndarray:
    """lam*cos + (1-lam)*sin of the signed angle from ray b->a to ray b->c.

    A zero-length ray makes the feature evaluate to 0 so tree traversal
    never aborts mid-sequence.
    """
    v1 = pa - pb
    v2 = pc - pb
    dot = v1[..., 0] * v2[..., 0] + v1[..., 1] * v2[..., 1]
    cross = v1[..., 0] * v2[..., 1] - v1[..., 1] * v2[..., 0]
    n1 = np.sqrt(v1[..., 0] * v1[..., 0] + v1[..., 1] * v1[..., 1])
    n2 = np.sqrt(v2[..., 0] * v2[..., 0] + v2[..., 1] * v2[..., 1])
    denom = n1 * n2
    ok = denom > 0
    safe = np.where(ok, denom, 1.0)
    lam = np.asarray(lam, dtype=np.float64)
    val = (lam * dot + (1.0 - lam) * cross) / safe
    return np.where(ok, val, 0.0)


def phi1_many(lm: np.ndarray, iod, a, b) -> np.ndarray:
    """Template 1 over broadcastable index arrays a, b.

    lm is (..., L, 2); a, b index landmarks; iod broadcasts against the
    result.  Returns ||f_a - f_b|| / iod.
    """
    return point_distance(np.take(lm, a, axis=-2), np.take(lm, b, axis=-2), iod)


def phi2_many(lm: np.ndarray, a, b, c, lam) -> np.ndarray:
    """Template 2: lam*cos + (1-lam)*sin of the signed angle a-b-c."""
    return angle_feature(np.take(lm, a, axis=-2), np.take(lm, b, axis=-2),
                         np.take(lm, c, axis=-2), lam)


def _frame_iod(frame: LandmarkFrame) -> float:
    return inter_ocular_distance(frame)


def phi1(frame: LandmarkFrame, a: int, b: int) -> float:
    """Normalized distance between landmarks a and b."""
    if a == b:
        raise ValueError("phi1 requires a != b")
    return float(phi1_many(frame.landmarks, _frame_iod(frame), a, b))


def phi2(frame: LandmarkFrame, a: int, b: int, c: int, lam: bool) -> float:
    """Cosine (lam=True) or sine (lam=False) of the signed angle a-b-c."""
    if len({a, b, c}) != 3:
        raise ValueError("phi2 requires pairwise distinct a, b, c")
    return float(phi2_many(frame.landmarks, a, b, c, 1.0 if lam else 0.0))


def phi4(prev: LandmarkFrame, cur: LandmarkFrame, a: int, b: int) -> float:
    """Derivative of template 1 over a frame pair."""
    return phi1(cur, a, b) - phi1(prev, a, b)


def phi5(prev: LandmarkFrame, cur: LandmarkFrame, a: int, b: int, c: int, lam: bool) -> float:
    """Derivative of template 2 over a frame pair."""
    return phi2(cur, a, b, c, lam) - phi2(prev, a, b, c, lam)
