"""Pure numpy kernels for packed-key polynomial arithmetic.

A polynomial in d variables is a pair (keys, coeffs): ``keys`` is a sorted
int64 array of packed exponent multi-indices (8 bits per axis, axis 0 in
the most significant position so numeric order equals lexicographic order)
and ``coeffs`` the matching float64 coefficients, none exactly zero.

The compiled twin in ``_polycore`` implements the same contract.  merge
results are bit-identical across backends; mul results agree exactly
whenever the per-key accumulated sums are exactly representable (as with
grid-snapped random coefficients) and to round-off otherwise, since the
two backends may associate the additions differently.
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def _dedupe(keys: np.ndarray, coeffs: np.ndarray):
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    coeffs = coeffs[order]
    boundary = np.empty(keys.shape[0], dtype=bool)
    boundary[0] = True
    np.not_equal(keys[1:], keys[:-1], out=boundary[1:])
    starts = np.flatnonzero(boundary)
    sums = np.add.reduceat(coeffs, starts)
    ukeys = keys[starts]
    keep = sums != 0.0
    return ukeys[keep], sums[keep]


def mul(ka, ca, kb, cb, dims: int):
    """Product of two packed polynomials; sorted, zero-free output."""
    if ka.shape[0] == 0 or kb.shape[0] == 0:
        return np.empty(0, np.int64), np.empty(0, np.float64)
    keys = (ka[:, None] + kb[None, :]).ravel()
    coeffs = (ca[:, None] * cb[None, :]).ravel()
    return _dedupe(keys, coeffs)


def merge(ka, ca, kb, cb, s: float):
    """a + s*b for packed polynomials; sorted, zero-free output."""
    if kb.shape[0] == 0:
        return ka.copy(), ca.copy()
    if ka.shape[0] == 0:
        scaled = cb * s
        keep = scaled != 0.0
        return kb[keep], scaled[keep]
    keys = np.concatenate([ka, kb])
    coeffs = np.concatenate([ca, cb * s])
    return _dedupe(keys, coeffs)


def scale(keys, coeffs, s: float):
    scaled = coeffs * s
    keep = scaled != 0.0
    return keys[keep], scaled[keep]


def unpack(keys: np.ndarray, dims: int) -> np.ndarray:
    """(n,) packed keys -> (n, dims) uint8-range exponent matrix."""
    out = np.empty((keys.shape[0], dims), dtype=np.int64)
    for axis in range(dims):
        shift = 8 * (dims - 1 - axis)
        out[:, axis] = (keys >> shift) & 0xFF
    return out


def pack(exps: np.ndarray, dims: int) -> np.ndarray:
    keys = np.zeros(exps.shape[0], dtype=np.int64)
    for axis in range(dims):
        shift = 8 * (dims - 1 - axis)
        keys |= exps[:, axis].astype(np.int64) << shift
    return keys


def diff(keys, coeffs, axis: int, dims: int):
    """Partial derivative along one axis."""
    shift = 8 * (dims - 1 - axis)
    e = (keys >> shift) & 0xFF
    keep = e > 0
    if not keep.any():
        return np.empty(0, np.int64), np.empty(0, np.float64)
    keys = keys[keep] - (np.int64(1) << shift)
    coeffs = coeffs[keep] * e[keep].astype(np.float64)
    return keys, coeffs


def eval_batch(keys, coeffs, dims: int, pts: np.ndarray) -> np.ndarray:
    """Evaluate at pts of shape (P, dims); returns (P,)."""
    if keys.shape[0] == 0:
        return np.zeros(pts.shape[0], dtype=np.float64)
    exps = unpack(keys, dims)
    powers = pts[:, None, :] ** exps[None, :, :]
    return np.prod(powers, axis=2) @ coeffs
