"""Flat-vector helpers shared by the model, the aggregators and the attacks.

Parameter vectors are plain 1-D ``float64`` numpy arrays. Every public
function here validates its inputs so that NaN/Inf and silent broadcasting
never leak into the aggregation math.
"""

from __future__ import annotations

import numpy as np

ZERO_NORM = 1e-12


class DimensionError(ValueError):
    """Raised when two vectors that must line up have different lengths."""


def as_vector(values) -> np.ndarray:
    """Return ``values`` as a finite, non-empty 1-D float64 array."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {vec.shape}")
    if vec.size == 0:
        raise ValueError("vector must have at least one entry")
    if not np.all(np.isfinite(vec)):
        raise ValueError("vector contains NaN or Inf")
    return vec


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_vector(a), as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.size} vs {b.size}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return a + b


def scale(a, k: float) -> np.ndarray:
    if not np.isfinite(k):
        raise ValueError(f"scale factor must be finite, got {k}")
    return float(k) * as_vector(a)


def dot(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.dot(a, b))


def l2_norm(a) -> float:
    a = as_vector(a)
    return float(np.sqrt(np.dot(a, a)))


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``, clamped to [-1, 1].

    A vector with norm below ``ZERO_NORM`` carries no direction, so the
    similarity is defined as 0 in that case.
    """
    a, b = _pair(a, b)
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na < ZERO_NORM or nb < ZERO_NORM:
        return 0.0
    cos = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, cos))


def stack(vectors) -> np.ndarray:
    """Stack equal-length vectors into an ``(n, d)`` matrix."""
    rows = [as_vector(v) for v in vectors]
    if not rows:
        raise ValueError("need at least one vector")
    dim = rows[0].size
    for r in rows[1:]:
        if r.size != dim:
            raise DimensionError(f"dimension mismatch: {dim} vs {r.size}")
    return np.vstack(rows)
