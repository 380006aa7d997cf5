"""Exact multivariate polynomial calculus.

Polynomials over (t, x_1..x_m) are the universal smooth test functions of
this package: every derivative needed by the weighted-identity checks is
produced here in closed form, so verification residuals contain round-off
only, never truncation error.

Coefficients are float64; "exact" means all algebra (sums, products,
derivatives) is closed-form on coefficients.  Two interchangeable kernel
backends do the heavy lifting: a compiled extension (``_polycore``) and a
pure numpy twin (``_polynum``).  The compiled one is preferred when it
imported cleanly; set ``CTRLOBS_POLY_BACKEND=python`` or ``=c`` to force a
choice.  Both produce bit-identical coefficient arrays.

Exponent multi-indices are packed into int64 keys, 8 bits per axis, axis 0
(time) most significant, so numeric key order is lexicographic order.
"""
from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from . import _polynum

_requested = os.environ.get("CTRLOBS_POLY_BACKEND", "auto")
if _requested not in ("auto", "c", "python"):
    raise ValueError(f"CTRLOBS_POLY_BACKEND must be auto, c or python, got {_requested!r}")
if _requested in ("auto", "c"):
    try:
        from . import _polycore as _kernel  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "c":
            raise
        _kernel = _polynum
else:
    _kernel = _polynum

MAX_DIMS = 4
MAX_AXIS_EXPONENT = 255
DEFAULT_DEGREE_CAP = 4

__all__ = [
    "MultiPoly",
    "ComplexPoly",
    "SamplePoint",
    "differentiate",
    "evaluate",
    "random_poly",
    "poly_to_text",
    "poly_from_text",
    "kernel_name",
]


def kernel_name() -> str:
    """Name of the active arithmetic backend: 'c' or 'numpy'."""
    return _kernel.BACKEND_NAME


def _shift(axis: int, dims: int) -> int:
    return 8 * (dims - 1 - axis)


@dataclass(frozen=True)
class SamplePoint:
    """A point in (t, x_1..x_m) space at which polynomials are evaluated."""

    coords: tuple

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError("sample point coordinates must be finite")
        object.__setattr__(self, "coords", coords)

    @property
    def dims(self) -> int:
        return len(self.coords)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=np.float64)


class MultiPoly:
    """Immutable multivariate polynomial in canonical form.

    Parameters
    ----------
    dims : int
        Number of variables; variable 0 is time t, variables 1..dims-1
        are space.  At most ``MAX_DIMS``.
    terms : dict | iterable
        Mapping from exponent multi-index (tuple of non-negative ints of
        length ``dims``) to coefficient, or an iterable of such pairs.
        Exactly-zero coefficients are dropped; duplicate indices are
        summed.
    degree_cap : int
        Largest admitted total degree.  Construction fails if any term
        exceeds it.  Arithmetic propagates caps (max for sums, sum for
        products) so results always satisfy their own cap.
    """

    __slots__ = ("dims", "degree_cap", "_keys", "_coeffs", "_degree")

    def __init__(self, dims: int, terms=None, degree_cap: int = DEFAULT_DEGREE_CAP):
        dims = int(dims)
        if not 1 <= dims <= MAX_DIMS:
            raise ValueError(f"dims must be between 1 and {MAX_DIMS}, got {dims}")
        self.dims = dims
        self.degree_cap = int(degree_cap)

        if terms is None:
            terms = {}
        if isinstance(terms, dict):
            items = terms.items()
        else:
            items = list(terms)
        accum: dict = {}
        for exps, coeff in items:
            exps = tuple(int(e) for e in exps)
            if len(exps) != dims:
                raise ValueError(f"multi-index {exps} has wrong length for dims={dims}")
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            if any(e > MAX_AXIS_EXPONENT for e in exps):
                raise ValueError(f"exponent exceeds {MAX_AXIS_EXPONENT} in {exps}")
            total = sum(exps)
            if total > self.degree_cap:
                raise ValueError(
                    f"term {exps} has total degree {total} > cap {self.degree_cap}"
                )
            accum[exps] = accum.get(exps, 0.0) + float(coeff)
        pairs = [(e, c) for e, c in accum.items() if c != 0.0]
        pairs.sort(key=lambda ec: ec[0])
        if pairs:
            exps_arr = np.array([e for e, _ in pairs], dtype=np.int64)
            keys = _kernel.pack(exps_arr, dims)
            coeffs = np.array([c for _, c in pairs], dtype=np.float64)
        else:
            keys = np.empty(0, np.int64)
            coeffs = np.empty(0, np.float64)
        self._keys = keys
        self._coeffs = coeffs
        self._degree = int(max((sum(e) for e, _ in pairs), default=-1))

    @classmethod
    def _raw(cls, dims: int, keys: np.ndarray, coeffs: np.ndarray, degree_cap: int):
        """Internal constructor from already-canonical kernel arrays."""
        self = object.__new__(cls)
        self.dims = dims
        self.degree_cap = degree_cap
        self._keys = keys
        self._coeffs = coeffs
        if keys.shape[0]:
            exps = _kernel.unpack(keys, dims)
            self._degree = int(np.max(np.sum(exps, axis=1)))
        else:
            self._degree = -1
        return self

    @classmethod
    def zero(cls, dims: int, degree_cap: int = DEFAULT_DEGREE_CAP) -> "MultiPoly":
        return cls(dims, {}, degree_cap)

    @classmethod
    def constant(cls, dims: int, value: float, degree_cap: int = DEFAULT_DEGREE_CAP) -> "MultiPoly":
        return cls(dims, {(0,) * dims: value}, degree_cap)

    @classmethod
    def variable(cls, dims: int, axis: int, degree_cap: int = DEFAULT_DEGREE_CAP) -> "MultiPoly":
        if not 0 <= axis < dims:
            raise ValueError(f"axis {axis} out of range for dims={dims}")
        exps = tuple(1 if i == axis else 0 for i in range(dims))
        return cls(dims, {exps: 1.0}, degree_cap)

    @property
    def terms(self) -> dict:
        """Canonical mapping multi-index -> coefficient (no exact zeros)."""
        if self._keys.shape[0] == 0:
            return {}
        exps = _kernel.unpack(self._keys, self.dims)
        return {tuple(int(v) for v in row): float(c) for row, c in zip(exps, self._coeffs)}

    @property
    def total_degree(self) -> int:
        """Largest total degree among stored terms; -1 for the zero polynomial."""
        return self._degree

    def is_zero(self) -> bool:
        return self._keys.shape[0] == 0

    def __len__(self) -> int:
        return int(self._keys.shape[0])

    def _check_compat(self, other: "MultiPoly"):
        if self.dims != other.dims:
            raise ValueError(f"dims mismatch: {self.dims} vs {other.dims}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = MultiPoly.constant(self.dims, other)
        if not isinstance(other, MultiPoly):
            return NotImplemented
        self._check_compat(other)
        keys, coeffs = _kernel.merge(self._keys, self._coeffs, other._keys, other._coeffs, 1.0)
        cap = max(self.degree_cap, other.degree_cap)
        return MultiPoly._raw(self.dims, keys, coeffs, cap)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = MultiPoly.constant(self.dims, other)
        if not isinstance(other, MultiPoly):
            return NotImplemented
        self._check_compat(other)
        keys, coeffs = _kernel.merge(self._keys, self._coeffs, other._keys, other._coeffs, -1.0)
        cap = max(self.degree_cap, other.degree_cap)
        return MultiPoly._raw(self.dims, keys, coeffs, cap)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __neg__(self):
        keys, coeffs = _kernel.scale(self._keys, self._coeffs, -1.0)
        return MultiPoly._raw(self.dims, keys, coeffs, self.degree_cap)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            keys, coeffs = _kernel.scale(self._keys, self._coeffs, float(other))
            return MultiPoly._raw(self.dims, keys, coeffs, self.degree_cap)
        if not isinstance(other, MultiPoly):
            return NotImplemented
        self._check_compat(other)
        if self._degree + other._degree > MAX_AXIS_EXPONENT:
            raise ValueError("product degree would overflow the packed representation")
        keys, coeffs = _kernel.mul(self._keys, self._coeffs, other._keys, other._coeffs, self.dims)
        cap = self.degree_cap + other.degree_cap
        return MultiPoly._raw(self.dims, keys, coeffs, cap)

    __rmul__ = __mul__

    def diff(self, axis: int) -> "MultiPoly":
        """Exact partial derivative along the given variable."""
        if not 0 <= axis < self.dims:
            raise ValueError(f"axis {axis} out of range for dims={self.dims}")
        keys, coeffs = _kernel.diff(self._keys, self._coeffs, axis, self.dims)
        return MultiPoly._raw(self.dims, keys, coeffs, self.degree_cap)

    def eval_batch(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate at many points; pts has shape (P, dims)."""
        pts = np.asarray(pts, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.dims:
            raise ValueError(f"points must have shape (P, {self.dims})")
        return _kernel.eval_batch(self._keys, self._coeffs, self.dims, pts)

    def __call__(self, pt) -> float:
        if isinstance(pt, SamplePoint):
            coords = pt.as_array()
        else:
            coords = np.asarray(pt, dtype=np.float64).reshape(-1)
        if coords.shape[0] != self.dims:
            raise ValueError(f"point has {coords.shape[0]} coordinates, need {self.dims}")
        return float(_kernel.eval_batch(self._keys, self._coeffs, self.dims, coords[None, :])[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiPoly):
            return NotImplemented
        return (
            self.dims == other.dims
            and self._keys.shape == other._keys.shape
            and bool(np.all(self._keys == other._keys))
            and bool(np.all(self._coeffs == other._coeffs))
        )

    def __hash__(self):
        return hash((self.dims, self._keys.tobytes(), self._coeffs.tobytes()))

    def __repr__(self) -> str:
        n = len(self)
        return f"MultiPoly(dims={self.dims}, terms={n}, degree={self._degree})"


def differentiate(p: MultiPoly, axis: int) -> MultiPoly:
    """Exact partial derivative of ``p`` along variable ``axis``."""
    return p.diff(axis)


def evaluate(p: MultiPoly, pt) -> float:
    """Evaluate ``p`` at a SamplePoint (or coordinate sequence)."""
    return p(pt)


COEFF_GRID = 2.0 ** -18


def random_poly(dims: int, degree: int, seed: int, coeff_range=(-1.0, 1.0)) -> MultiPoly:
    """Dense random polynomial, deterministic per seed on every platform.

    Every multi-index of total degree <= ``degree`` receives a coefficient
    drawn uniformly from ``coeff_range``.  Draws are made in lexicographic
    multi-index order from the Philox stream keyed by
    ``derive_key(seed, "polyjet.random_poly", 0)`` (see ``ctrlobs.rng``),
    which pins the construction bit-for-bit across platforms.

    Coefficients are snapped to the dyadic grid ``COEFF_GRID`` (2^-18), so
    for unit-range inputs the pair products and small sums arising in
    product-rule checks are exactly representable in float64.  That makes
    algebraic invariants (Leibniz, commutation of derivatives) hold with
    bitwise coefficient equality, not just to round-off.
    """
    if dims < 1:
        raise ValueError("dims must be >= 1")
    if degree < 0:
        raise ValueError("degree must be >= 0")
    lo, hi = float(coeff_range[0]), float(coeff_range[1])
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise ValueError("coeff_range must be a non-empty finite interval")
    indices = [
        exps
        for exps in itertools.product(range(degree + 1), repeat=dims)
        if sum(exps) <= degree
    ]
    indices.sort()
    gen = _rng.stream(seed, "polyjet.random_poly")
    draws = gen.uniform(lo, hi, size=len(indices))
    draws = np.clip(np.round(draws / COEFF_GRID) * COEFF_GRID, lo, hi)
    cap = max(DEFAULT_DEGREE_CAP, degree)
    return MultiPoly(dims, zip(indices, draws), degree_cap=cap)


def poly_to_text(p: MultiPoly) -> str:
    """Serialize as one line per term: ``e0 e1 ... ek : coeff``."""
    lines = []
    for exps, coeff in sorted(p.terms.items()):
        lines.append(" ".join(str(e) for e in exps) + " : " + repr(coeff))
    return "\n".join(lines)


def poly_from_text(text: str, dims: int | None = None, degree_cap: int | None = None) -> MultiPoly:
    """Parse the ``poly_to_text`` format; dims inferred from the first line."""
    terms = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ValueError(f"line {lineno}: missing ':' separator")
        left, _, right = line.partition(":")
        exps = tuple(int(tok) for tok in left.split())
        coeff = float(right.strip())
        if dims is None:
            dims = len(exps)
        terms[exps] = terms.get(exps, 0.0) + coeff
    if dims is None:
        raise ValueError("cannot infer dims from empty text; pass dims explicitly")
    if degree_cap is None:
        degree_cap = max(
            DEFAULT_DEGREE_CAP, max((sum(e) for e in terms), default=0)
        )
    return MultiPoly(dims, terms, degree_cap=degree_cap)


class ComplexPoly:
    """Complex polynomial stored as a real/imaginary pair of MultiPoly."""

    __slots__ = ("re", "im")

    def __init__(self, re: MultiPoly, im: MultiPoly | None = None):
        if im is None:
            im = MultiPoly.zero(re.dims, re.degree_cap)
        if re.dims != im.dims:
            raise ValueError("re and im must share dims")
        self.re = re
        self.im = im

    @classmethod
    def zero(cls, dims: int, degree_cap: int = DEFAULT_DEGREE_CAP) -> "ComplexPoly":
        z = MultiPoly.zero(dims, degree_cap)
        return cls(z, z)

    @property
    def dims(self) -> int:
        return self.re.dims

    def is_zero(self) -> bool:
        return self.re.is_zero() and self.im.is_zero()

    def conj(self) -> "ComplexPoly":
        return ComplexPoly(self.re, -self.im)

    @staticmethod
    def _coerce(other, dims) -> "ComplexPoly":
        if isinstance(other, ComplexPoly):
            return other
        if isinstance(other, MultiPoly):
            return ComplexPoly(other)
        if isinstance(other, (int, float)):
            return ComplexPoly(MultiPoly.constant(dims, float(other)))
        if isinstance(other, complex):
            return ComplexPoly(
                MultiPoly.constant(dims, other.real),
                MultiPoly.constant(dims, other.imag),
            )
        return None

    def __add__(self, other):
        other = self._coerce(other, self.dims)
        if other is None:
            return NotImplemented
        return ComplexPoly(self.re + other.re, self.im + other.im)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other, self.dims)
        if other is None:
            return NotImplemented
        return ComplexPoly(self.re - other.re, self.im - other.im)

    def __rsub__(self, other):
        other = self._coerce(other, self.dims)
        if other is None:
            return NotImplemented
        return ComplexPoly(other.re - self.re, other.im - self.im)

    def __neg__(self):
        return ComplexPoly(-self.re, -self.im)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return ComplexPoly(self.re * other, self.im * other)
        other = self._coerce(other, self.dims)
        if other is None:
            return NotImplemented
        re = self.re * other.re - self.im * other.im
        im = self.re * other.im + self.im * other.re
        return ComplexPoly(re, im)

    __rmul__ = __mul__

    def times_i(self) -> "ComplexPoly":
        """Multiplication by the imaginary unit (exact, no scalar round trip)."""
        return ComplexPoly(-self.im, self.re)

    def diff(self, axis: int) -> "ComplexPoly":
        return ComplexPoly(self.re.diff(axis), self.im.diff(axis))

    def __call__(self, pt) -> complex:
        return complex(self.re(pt), self.im(pt))

    def eval_batch(self, pts: np.ndarray) -> np.ndarray:
        return self.re.eval_batch(pts) + 1j * self.im.eval_batch(pts)

    def __repr__(self) -> str:
        return f"ComplexPoly(re={self.re!r}, im={self.im!r})"
