"""Pointwise weighted identity verification.

Each identity in scope equates a combination of a differential expression,
exact divergence terms and quadratic forms.  This module evaluates both
sides on concrete polynomial data and reports residuals.

The weight is theta = e^l with polynomial l, and v = theta*z.  Nothing is
differenced numerically: every derivative of v is expanded through the
product rule into theta times a polynomial ("twisted" derivatives,
D_a w = l_a*w + d_a w), so both sides reduce to e^{2l(pt)} times exact
polynomial evaluations and residuals are round-off only.

Stochastic identities are verified in integrated form on a uniform time
grid: Lebesgue integrals by left Riemann sums, stochastic integrals by
left-point Ito sums with exact path increments, quadratic variation by
squared increments, and time-boundary terms exactly at the endpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .polyjet import ComplexPoly, MultiPoly, SamplePoint, random_poly

__all__ = [
    "DetIdentityInstance",
    "StochIdentityInstance",
    "IdentityReport",
    "eval_ode_identity",
    "eval_multiplier_identity",
    "eval_det_identity",
    "eval_stoch_parabolic_residual",
    "eval_stoch_hyperbolic_residual",
    "verify_identity_suite",
    "stoch_residual_slope",
    "random_det_instance",
    "random_stoch_instance",
    "IDENTITY_KINDS",
    "DEFAULT_TOLERANCES",
]

IDENTITY_KINDS = (
    "ode",
    "multiplier",
    "deterministic",
    "stoch_parabolic_drift",
    "stoch_hyperbolic_drift",
)

DEFAULT_TOLERANCES = {
    "ode": 1e-12,
    "multiplier": 1e-11,
    "deterministic": 1e-9,
    "stoch_parabolic_drift": 5e-2,
    "stoch_hyperbolic_drift": 5e-2,
}


# ---------------------------------------------------------------------------
# domain types


class DetIdentityInstance:
    """One randomized instantiation of the fundamental weighted identity.

    Fields: space dimension m; complex test function z; real weight
    exponent l; operator coefficients alpha, beta and the symmetric
    polynomial matrix b; free real parameters a_param, b_param, lam_param.
    theta = e^l and v = theta*z are derived at evaluation time, never
    stored.
    """

    __slots__ = (
        "m", "z", "ell", "alpha", "beta", "b",
        "a_param", "b_param", "lam_param", "_cores",
    )

    def __init__(self, m, z, ell, alpha, beta, b, a_param, b_param, lam_param):
        self.m = int(m)
        if self.m < 1:
            raise ValueError("m must be >= 1")
        dims = 1 + self.m
        if isinstance(z, MultiPoly):
            z = ComplexPoly(z)
        for name, p in (("z", z.re), ("ell", ell), ("alpha", alpha), ("beta", beta)):
            if p.dims != dims:
                raise ValueError(f"{name} must have dims={dims}, got {p.dims}")
        if len(b) != self.m or any(len(row) != self.m for row in b):
            raise ValueError(f"b must be an {self.m}x{self.m} matrix")
        for j in range(self.m):
            for k in range(self.m):
                if b[j][k].dims != dims:
                    raise ValueError(f"b[{j}][{k}] must have dims={dims}")
                if b[j][k] != b[k][j]:
                    raise ValueError("coefficient matrix b must be symmetric")
        self.z = z
        self.ell = ell
        self.alpha = alpha
        self.beta = beta
        self.b = [list(row) for row in b]
        self.a_param = float(a_param)
        self.b_param = float(b_param)
        self.lam_param = float(lam_param)
        self._cores = None

    def scaled(self, c: float) -> "DetIdentityInstance":
        """Same instance with z replaced by c*z (for scaling checks)."""
        return DetIdentityInstance(
            self.m, self.z * float(c), self.ell, self.alpha, self.beta,
            self.b, self.a_param, self.b_param, self.lam_param,
        )


class StochIdentityInstance:
    """Data for one stochastic weighted-identity verification.

    The test semimartingale is u(t,x) = drift(t,x) + noise_shape(x)*B(t)
    with a single scalar Brownian motion B.  For the hyperbolic identity,
    whose semimartingale is u_t, the same decomposition applies to u_t:
    the state is u(t,x) = drift(t,x) + noise_shape(x)*I(t) with
    I(t) = int_0^t B(s) ds accumulated by left sums, so that
    u_t = drift_t + noise_shape*B is the verified process.

    The time grid stores dt = T/steps and then T = dt*steps, making the
    invariant dt*steps == T hold exactly in floating point.
    """

    __slots__ = ("m", "drift", "noise_shape", "ell", "Psi", "b",
                 "T", "steps", "dt", "seed", "brownian_path")

    def __init__(self, m, drift, noise_shape, ell, Psi, b, T, steps, seed):
        self.m = int(m)
        dims = 1 + self.m
        for name, p in (("drift", drift), ("noise_shape", noise_shape),
                        ("ell", ell), ("Psi", Psi)):
            if p.dims != dims:
                raise ValueError(f"{name} must have dims={dims}, got {p.dims}")
        if not noise_shape.diff(0).is_zero():
            raise ValueError("noise_shape must not depend on time")
        if len(b) != self.m or any(len(row) != self.m for row in b):
            raise ValueError(f"b must be an {self.m}x{self.m} matrix")
        for j in range(self.m):
            for k in range(self.m):
                if b[j][k] != b[k][j]:
                    raise ValueError("coefficient matrix b must be symmetric")
        self.drift = drift
        self.noise_shape = noise_shape
        self.ell = ell
        self.Psi = Psi
        self.b = [list(row) for row in b]
        self.steps = int(steps)
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        self.dt = float(T) / self.steps
        self.T = self.dt * self.steps
        self.seed = int(seed)
        self.brownian_path = brownian_increments(self.seed, 0, self.steps, self.dt)

    def with_steps(self, steps: int) -> "StochIdentityInstance":
        """Same data on a refined grid (fresh path for the new step count)."""
        return StochIdentityInstance(
            self.m, self.drift, self.noise_shape, self.ell, self.Psi,
            self.b, self.T, steps, self.seed,
        )


def brownian_increments(seed: int, path_index: int, steps: int, dt: float) -> np.ndarray:
    """Increments dB_k ~ Normal(0, dt) from the derived (seed, path) stream."""
    gen = _rng.stream(seed, "identities.brownian", path_index)
    return gen.normal(0.0, math.sqrt(dt), size=steps)


@dataclass
class IdentityReport:
    """Residual statistics for a batch of identity evaluations."""

    kind: str
    samples: int
    max_abs_residual: float
    max_rel_residual: float
    scale: float
    tolerance: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "samples": self.samples,
            "max_abs_residual": self.max_abs_residual,
            "max_rel_residual": self.max_rel_residual,
            "scale": self.scale,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }


@dataclass
class DetIntermediates:
    """Values of the named intermediate quantities at one sample point."""

    I1: complex
    A: float
    B: float
    M: complex
    V: tuple
    theta: float


# ---------------------------------------------------------------------------
# ODE identity


def eval_ode_identity(lam: float, x_path, t_pt: float):
    """Both sides of the weighted ODE identity at time t_pt.

    LHS = 2 e^{-lam t} x'(t).x(t); RHS = d/dt(e^{-lam t}|x|^2)
    + lam e^{-lam t}|x|^2, with the exponential factor evaluated
    numerically and every polynomial derivative taken analytically.
    """
    lam = float(lam)
    for p in x_path:
        if p.dims != 1:
            raise ValueError("ODE path components must be polynomials in t only")
    w = math.exp(-lam * t_pt)
    lhs = 2.0 * w * sum(p.diff(0)(t_pt) * p(t_pt) for p in x_path)
    sq = None
    for p in x_path:
        sq = p * p if sq is None else sq + p * p
    if sq is None:
        return 0.0, 0.0
    # d/dt(e^{-lam t} S) = e^{-lam t} (S' - lam S), then + lam e^{-lam t} S
    rhs = w * (sq.diff(0)(t_pt) - lam * sq(t_pt)) + lam * w * sq(t_pt)
    return lhs, rhs


# ---------------------------------------------------------------------------
# multiplier identity


def eval_multiplier_identity(h, z: MultiPoly, pt):
    """Both sides of the divergence (multiplier) identity at one point.

    h is the vector field (length m), z the scalar test function, both
    polynomials in (t, x_1..x_m).
    """
    dims = z.dims
    m = dims - 1
    if len(h) != m:
        raise ValueError(f"h must have {m} components for dims={dims}")
    for comp in h:
        if comp.dims != dims:
            raise ValueError("h components must share dims with z")
    if isinstance(pt, SamplePoint):
        coords = pt.as_array()
    else:
        coords = np.asarray(pt, dtype=np.float64).reshape(-1)
    if coords.shape[0] != dims:
        raise ValueError(f"point must have {dims} coordinates")

    zt = z.diff(0)
    grad = [z.diff(k) for k in range(1, dims)]
    hdg = None
    for hk, gk in zip(h, grad):
        term = hk * gk
        hdg = term if hdg is None else hdg + term
    lag = zt * zt
    for gk in grad:
        lag = lag - gk * gk

    lhs_poly = MultiPoly.zero(dims)
    for k in range(m):
        flux = 2.0 * hdg * grad[k] + h[k] * lag
        lhs_poly = lhs_poly + flux.diff(k + 1)

    box = z.diff(0).diff(0)
    for k in range(1, dims):
        box = box - z.diff(k).diff(k)
    div_h = MultiPoly.zero(dims)
    for k in range(m):
        div_h = div_h + h[k].diff(k + 1)
    rhs_poly = -2.0 * box * hdg + (2.0 * zt * hdg).diff(0)
    cross = MultiPoly.zero(dims)
    for i in range(m):
        cross = cross + h[i].diff(0) * grad[i]
    rhs_poly = rhs_poly - 2.0 * zt * cross + div_h * lag
    for i in range(m):
        for j in range(m):
            rhs_poly = rhs_poly + 2.0 * h[j].diff(i + 1) * grad[i] * grad[j]

    return lhs_poly(coords), rhs_poly(coords)


# ---------------------------------------------------------------------------
# deterministic weighted identity


def _tw(ell: MultiPoly, w, axis: int):
    """Core of theta^{-1} d_axis(theta*w): the twisted derivative."""
    return ell.diff(axis) * w + w.diff(axis)


def _det_cores(inst: DetIdentityInstance):
    """Point-independent polynomial cores of both sides (theta^2 stripped)."""
    if inst._cores is not None:
        return inst._cores
    m = inst.m
    ell, alpha, beta = inst.ell, inst.alpha, inst.beta
    a_p, b_p, lam = inst.a_param, inst.b_param, inst.lam_param
    z = inst.z
    zb = z.conj()
    dims = 1 + m

    def b(j, k):
        return inst.b[j - 1][k - 1]

    lt = ell.diff(0)
    lx = {j: ell.diff(j) for j in range(1, dims)}
    lxx = {(j, k): lx[j].diff(k) for j in range(1, dims) for k in range(1, dims)}

    sp = range(1, dims)

    def tw(w, axis):
        return _tw(ell, w, axis)

    # A = sum b^{jk} l_j l_k - (1+a) sum b^{jk} l_{jk} - b*lam
    A = MultiPoly.constant(dims, -b_p * lam)
    for j in sp:
        for k in sp:
            A = A + b(j, k) * lx[j] * lx[k] - (1.0 + a_p) * (b(j, k) * lxx[(j, k)])

    # I1 = i beta v_t - alpha l_t v + sum (b^{jk} v_{x_j})_{x_k} + A v  (cores)
    I1 = (beta * tw(z, 0)).times_i() - alpha * lt * z + A * z
    for j in sp:
        for k in sp:
            I1 = I1 + tw(b(j, k) * tw(z, j), k)
    I1c = I1.conj()

    # B = (alpha^2 l_t + beta^2 l_t - alpha A)_t
    #     + 2 sum [ (b l_j A)_k - (alpha b l_j l_t)_k + a (A - alpha l_t) b l_{jk} ]
    B = (alpha * alpha * lt + beta * beta * lt - alpha * A).diff(0)
    for j in sp:
        for k in sp:
            B = B + 2.0 * (
                (b(j, k) * lx[j] * A).diff(k)
                - (alpha * b(j, k) * lx[j] * lt).diff(k)
                + a_p * ((A - alpha * lt) * b(j, k) * lxx[(j, k)])
            )

    # M = ((alpha^2+beta^2) l_t - alpha A)|v|^2 + alpha sum b v_j conj(v_k)
    #     + i beta sum b l_j (conj(v_k) v - v_k conj(v))
    M = ((alpha * alpha + beta * beta) * lt - alpha * A) * (z * zb)
    ib_part = ComplexPoly.zero(dims)
    for j in sp:
        for k in sp:
            M = M + alpha * b(j, k) * (tw(z, j) * tw(zb, k))
            ib_part = ib_part + b(j, k) * lx[j] * (tw(zb, k) * z - tw(z, k) * zb)
    M = M + (beta * ib_part).times_i()

    # V^k groups, per-summand natural indices
    V = {}
    for k in sp:
        acc = ComplexPoly.zero(dims)
        for j in sp:
            g1 = b(j, k) * lx[j] * (z * tw(zb, 0) - zb * tw(z, 0)) \
                + b(j, k) * lt * (tw(z, j) * zb - tw(zb, j) * z)
            acc = acc - (beta * g1).times_i()
            acc = acc - alpha * b(j, k) * (tw(z, j) * tw(zb, 0) + tw(zb, j) * tw(z, 0))
            acc = acc + 2.0 * b(j, k) * (A * lx[j] - alpha * lx[j] * lt) * (z * zb)
            for jp in sp:
                for kp in sp:
                    coeff = 2.0 * (b(j, kp) * b(jp, k)) - b(j, k) * b(jp, kp)
                    acc = acc + coeff * lx[j] * (
                        tw(z, jp) * tw(zb, kp) + tw(zb, jp) * tw(z, kp)
                    )
                    acc = acc - a_p * (b(jp, kp) * lxx[(jp, kp)] * b(j, k)) * (
                        tw(z, j) * zb + tw(zb, j) * z
                    )
        V[k] = acc

    # P z = (alpha + i beta) z_t + sum (b^{jk} z_{x_j})_{x_k}   (plain derivatives)
    zt = z.diff(0)
    Pz = alpha * zt + (beta * zt).times_i()
    for j in sp:
        for k in sp:
            Pz = Pz + (b(j, k) * z.diff(j)).diff(k)

    # LHS core: P z conj(I1) + conj(P z) I1 + (M_t + sum V^k_{x_k}) cores,
    # outer derivatives of theta^2-weighted quantities expanded analytically
    lhs = Pz * I1c + Pz.conj() * I1
    lhs = lhs + 2.0 * lt * M + M.diff(0)
    for k in sp:
        lhs = lhs + 2.0 * lx[k] * V[k] + V[k].diff(k)

    # RHS core
    rhs = 2.0 * (I1 * I1c)
    for j in sp:
        for k in sp:
            pair = tw(z, k) * tw(zb, j) + tw(zb, k) * tw(z, j)
            rhs = rhs + 0.5 * (alpha * b(j, k)).diff(0) * pair
            for jp in sp:
                for kp in sp:
                    coeff = (
                        2.0 * (b(jp, k) * lx[jp]).diff(kp) * b(j, kp)
                        - (b(j, k) * b(jp, kp) * lx[jp]).diff(kp)
                        - a_p * (b(j, k) * b(jp, kp) * lxx[(jp, kp)])
                    )
                    rhs = rhs + coeff * pair
    lower = MultiPoly.constant(dims, b_p * lam)
    for j in sp:
        for k in sp:
            lower = lower - b(j, k).diff(k) * lx[j]
    rhs = rhs + lower * (I1 * zb + I1c * z)
    imag_sum = ComplexPoly.zero(dims)
    for j in sp:
        for k in sp:
            c1 = (beta * b(j, k) * lx[j]).diff(0) + b(j, k) * (beta * lt).diff(j)
            c2 = (beta * b(j, k) * lx[j]).diff(k) + a_p * (beta * b(j, k) * lxx[(j, k)])
            imag_sum = imag_sum + c1 * (tw(zb, k) * z - tw(z, k) * zb)
            imag_sum = imag_sum + c2 * (zb * tw(z, 0) - z * tw(zb, 0))
    rhs = rhs + imag_sum.times_i()
    for j in sp:
        for k in sp:
            rhs = rhs - b(j, k) * alpha.diff(k) * (
                tw(z, j) * tw(zb, 0) + tw(zb, j) * tw(z, 0)
            )
    for j in sp:
        for k in sp:
            for jp in sp:
                for kp in sp:
                    rhs = rhs - a_p * b(j, k) * (b(jp, kp) * lxx[(jp, kp)]).diff(k) * (
                        tw(zb, j) * z + tw(z, j) * zb
                    )
    rhs = rhs + B * (z * zb)

    inst._cores = {
        "lhs": lhs, "rhs": rhs, "I1": I1, "A": A, "B": B, "M": M, "V": V,
    }
    return inst._cores


def eval_det_identity(inst: DetIdentityInstance, pt):
    """Evaluate both sides of the fundamental identity at one point.

    Returns (lhs, rhs, intermediates); lhs and rhs are complex with
    imaginary parts at round-off level.  All outer derivatives are
    expanded analytically; the only transcendental factor e^{2l(pt)} is
    evaluated numerically.
    """
    cores = _det_cores(inst)
    if isinstance(pt, SamplePoint):
        coords = pt.as_array()
    else:
        coords = np.asarray(pt, dtype=np.float64).reshape(-1)
    if coords.shape[0] != 1 + inst.m:
        raise ValueError(f"point must have {1 + inst.m} coordinates")
    theta = math.exp(inst.ell(coords))
    t2 = theta * theta
    lhs = t2 * cores["lhs"](coords)
    rhs = t2 * cores["rhs"](coords)
    inter = DetIntermediates(
        I1=theta * cores["I1"](coords),
        A=cores["A"](coords),
        B=cores["B"](coords),
        M=t2 * cores["M"](coords),
        V=tuple(t2 * cores["V"][k](coords) for k in sorted(cores["V"])),
        theta=theta,
    )
    return lhs, rhs, inter


def _det_eval_batch(inst: DetIdentityInstance, pts: np.ndarray):
    """Vectorized lhs/rhs arrays over sample points (P, 1+m)."""
    cores = _det_cores(inst)
    t2 = np.exp(2.0 * inst.ell.eval_batch(pts))
    lhs = t2 * cores["lhs"].eval_batch(pts)
    rhs = t2 * cores["rhs"].eval_batch(pts)
    return lhs, rhs


# ---------------------------------------------------------------------------
# path polynomials: coefficients in (t, x), inert path symbols B and I


class _PathPoly:
    """Polynomial in two inert path symbols with MultiPoly coefficients.

    Represents sums c_{pq}(t,x) * B^p * I^q where B is the Brownian value
    and I its running time integral.  Both symbols are constants for
    spatial differentiation.
    """

    __slots__ = ("dims", "c")

    def __init__(self, dims, c=None):
        self.dims = dims
        self.c = dict(c or {})

    @classmethod
    def lift(cls, p: MultiPoly):
        return cls(p.dims, {(0, 0): p})

    def __add__(self, other):
        if isinstance(other, MultiPoly):
            other = _PathPoly.lift(other)
        out = dict(self.c)
        for key, p in other.c.items():
            out[key] = out[key] + p if key in out else p
        return _PathPoly(self.dims, out)

    def __sub__(self, other):
        if isinstance(other, MultiPoly):
            other = _PathPoly.lift(other)
        out = dict(self.c)
        for key, p in other.c.items():
            out[key] = out[key] - p if key in out else -p
        return _PathPoly(self.dims, out)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return _PathPoly(self.dims, {k: p * other for k, p in self.c.items()})
        if isinstance(other, MultiPoly):
            return _PathPoly(self.dims, {k: p * other for k, p in self.c.items()})
        out = {}
        for (p1, q1), c1 in self.c.items():
            for (p2, q2), c2 in other.c.items():
                key = (p1 + p2, q1 + q2)
                prod = c1 * c2
                out[key] = out[key] + prod if key in out else prod
        return _PathPoly(self.dims, out)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def diff(self, axis):
        if axis == 0:
            raise ValueError("path polynomials support spatial derivatives only")
        return _PathPoly(self.dims, {k: p.diff(axis) for k, p in self.c.items()})

    def grid_coeffs(self, pts: np.ndarray):
        """Evaluate every coefficient on the (K+1, dims) grid points."""
        return {key: p.eval_batch(pts) for key, p in self.c.items()}


def _pp_values(coeffs: dict, Bp: dict, Ip: dict) -> np.ndarray:
    """Combine grid coefficient arrays with path power arrays."""
    out = None
    for (p, q), arr in coeffs.items():
        term = arr[None, :] * Bp[p] * Ip[q]
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------------------
# stochastic identity evaluation


def _stoch_setup(inst: StochIdentityInstance, hyperbolic: bool):
    """Point-independent path polynomials for one identity instance."""
    m = inst.m
    dims = 1 + m
    ell, Psi = inst.ell, inst.Psi
    sp = range(1, dims)

    def b(i, j):
        return inst.b[i - 1][j - 1]

    lt = ell.diff(0)
    lx = {i: ell.diff(i) for i in sp}
    lxx = {(i, j): lx[i].diff(j) for i in sp for j in sp}

    def tw(w, axis):
        return ell.diff(axis) * w + w.diff(axis)

    if hyperbolic:
        # state u = drift + sigma * I, verified semimartingale u_t
        U = _PathPoly(dims, {(0, 0): inst.drift, (0, 1): inst.noise_shape})
        UT = _PathPoly(dims, {(0, 0): inst.drift.diff(0), (1, 0): inst.noise_shape})
    else:
        U = _PathPoly(dims, {(0, 0): inst.drift, (1, 0): inst.noise_shape})
        UT = None

    Ti = {i: tw(U, i) for i in sp}

    terms = {"U": U, "UT": UT, "Ti": Ti, "lt": lt, "lx": lx, "lxx": lxx,
             "b": b, "sp": sp, "tw": tw, "dims": dims}
    return terms


def _grid_points(inst: StochIdentityInstance, x_pt) -> tuple:
    x = np.asarray(x_pt, dtype=np.float64).reshape(-1)
    if x.shape[0] != inst.m:
        raise ValueError(f"x_pt must have {inst.m} coordinates")
    ts = np.arange(inst.steps + 1) * inst.dt
    pts = np.empty((inst.steps + 1, 1 + inst.m))
    pts[:, 0] = ts
    pts[:, 1:] = x[None, :]
    return ts, pts


def _path_arrays(inst: StochIdentityInstance, paths: np.ndarray):
    """B and its left-sum running integral I on the grid, per path."""
    n = paths.shape[0]
    K = inst.steps
    B = np.zeros((n, K + 1))
    np.cumsum(paths, axis=1, out=B[:, 1:])
    I = np.zeros((n, K + 1))
    np.cumsum(B[:, :-1] * inst.dt, axis=1, out=I[:, 1:])
    Bp = {0: np.ones((n, 1)), 1: B, 2: B * B}
    Ip = {0: np.ones((n, 1)), 1: I, 2: I * I}
    return Bp, Ip


def _stoch_parabolic_terms(inst: StochIdentityInstance):
    s = _stoch_setup(inst, hyperbolic=False)
    dims, sp, b = s["dims"], s["sp"], s["b"]
    lt, lx, lxx, tw = s["lt"], s["lx"], s["lxx"], s["tw"]
    U, Ti = s["U"], s["Ti"]
    Psi = inst.Psi

    A = -Psi
    for i in sp:
        for j in sp:
            A = A - (b(i, j) * lx[i] * lx[j] - b(i, j).diff(j) * lx[i]
                     - b(i, j) * lxx[(i, j)])
    # B = 2[A Psi - sum (A b l_i)_j] - A_t - sum (b Psi_j)_i
    Bc = 2.0 * (A * Psi) - A.diff(0)
    for i in sp:
        for j in sp:
            Bc = Bc - 2.0 * (A * b(i, j) * lx[i]).diff(j)
            Bc = Bc - (b(i, j) * Psi.diff(j)).diff(i)

    ELv = A * U
    DU = _PathPoly(dims)
    EL2 = (A - lt) * U
    for i in sp:
        for j in sp:
            ELv = ELv - tw(b(i, j) * Ti[i], j)
            EL2 = EL2 - tw(b(i, j) * Ti[i], j)
            DU = DU + (b(i, j) * U.diff(i)).diff(j)

    # LHS divergence integrand: 2 sum_ij [G_ij]_{x_j} with theta^2 stripped
    lhs_div = _PathPoly(dims)
    for i in sp:
        for j in sp:
            G = Psi * b(i, j) * Ti[i] * U - (b(i, j) * (A * lx[i] + 0.5 * Psi.diff(i))) * (U * U)
            for ip in sp:
                for jp in sp:
                    G = G + 2.0 * (b(i, j) * b(ip, jp) * lx[ip]) * (Ti[i] * Ti[jp])
                    G = G - (b(i, j) * b(ip, jp) * lx[i]) * (Ti[ip] * Ti[jp])
            lhs_div = lhs_div + 2.0 * (2.0 * lx[j] * G + G.diff(j))

    # RHS gradient integrand
    rhs_grad = _PathPoly(dims)
    for i in sp:
        for j in sp:
            C = Psi * b(i, j) - 0.5 * b(i, j).diff(0)
            for ip in sp:
                for jp in sp:
                    C = C + 2.0 * b(i, jp) * (b(ip, j) * lx[ip]).diff(jp)
                    C = C - (b(i, j) * b(ip, jp) * lx[ip]).diff(jp)
            rhs_grad = rhs_grad + 2.0 * C * (Ti[i] * Ti[j])

    rhs_B = Bc * (U * U)
    rhs_cross = ELv * EL2

    boundary = A * (U * U)
    for i in sp:
        for j in sp:
            boundary = boundary + b(i, j) * (Ti[i] * Ti[j])

    # factors for the Ito / quadratic-variation sums
    flux1 = {}   # (b v_{x_i})_{x_j} cores against dv
    flux2 = {}   # b v_{x_i} cores against d(v_{x_j})
    for i in sp:
        for j in sp:
            flux1[(i, j)] = tw(b(i, j) * Ti[i], j)
            flux2[(i, j)] = b(i, j) * Ti[i]

    return {
        "A": A, "ELv": ELv, "DU": DU, "U": U, "Ti": Ti,
        "lhs_div": lhs_div, "rhs_grad": rhs_grad, "rhs_B": rhs_B,
        "rhs_cross": rhs_cross, "boundary": boundary,
        "flux1": flux1, "flux2": flux2, "lx": lx, "b": b, "sp": sp,
    }


def _eval_stoch_parabolic(inst, x_pt, paths):
    """Term-group totals for a batch of paths at one spatial point.

    Returns (lhs_total, rhs_total, scale) arrays of shape (n_paths,).
    """
    terms = _stoch_parabolic_terms(inst)
    ts, pts = _grid_points(inst, x_pt)
    dt = inst.dt
    sp = terms["sp"]
    b = terms["b"]
    lx = terms["lx"]

    theta = np.exp(inst.ell.eval_batch(pts))
    t2 = theta * theta

    gc = {name: terms[name].grid_coeffs(pts)
          for name in ("ELv", "DU", "U", "lhs_div", "rhs_grad", "rhs_B",
                       "rhs_cross", "boundary")}
    gti = {i: terms["Ti"][i].grid_coeffs(pts) for i in sp}
    gf1 = {key: pp.grid_coeffs(pts) for key, pp in terms["flux1"].items()}
    gf2 = {key: pp.grid_coeffs(pts) for key, pp in terms["flux2"].items()}
    A_g = terms["A"].eval_batch(pts)
    ud_g = inst.drift.eval_batch(pts)
    sg = inst.noise_shape(np.concatenate([[0.0], np.atleast_1d(x_pt)]))
    udx = {i: inst.drift.diff(i).eval_batch(pts) for i in sp}
    sgx = {i: inst.noise_shape.diff(i)(np.concatenate([[0.0], np.atleast_1d(x_pt)]))
           for i in sp}
    b_g = {(i, j): b(i, j).eval_batch(pts) for i in sp for j in sp}
    lx_g = {i: lx[i].eval_batch(pts) for i in sp}

    Bp, Ip = _path_arrays(inst, paths)
    B = Bp[1]

    u_grid = ud_g[None, :] + sg * B
    du = np.diff(u_grid, axis=1)
    dux = {i: np.diff(udx[i][None, :] + sgx[i] * B, axis=1) for i in sp}

    def val(coeffs):
        return _pp_values(coeffs, Bp, Ip)

    ELv = val(gc["ELv"])
    DU = val(gc["DU"])
    T1 = 2.0 * np.sum(t2[None, :-1] * ELv[:, :-1] * (du - DU[:, :-1] * dt), axis=1)

    T2 = np.zeros(paths.shape[0])
    v_grid = theta[None, :] * val(gc["U"])
    for i in sp:
        for j in sp:
            vxj = theta[None, :] * val(gti[j])
            f1 = val(gf1[(i, j)])
            f2 = val(gf2[(i, j)])
            T2 += 2.0 * np.sum(theta[None, :-1] * f1[:, :-1] * np.diff(v_grid, axis=1), axis=1)
            T2 += 2.0 * np.sum(theta[None, :-1] * f2[:, :-1] * np.diff(vxj, axis=1), axis=1)

    T3 = np.sum(t2[None, :-1] * val(gc["lhs_div"])[:, :-1], axis=1) * dt

    T4 = np.sum(t2[None, :-1] * val(gc["rhs_grad"])[:, :-1], axis=1) * dt
    T5 = np.sum(t2[None, :-1] * val(gc["rhs_B"])[:, :-1], axis=1) * dt
    T6 = 2.0 * np.sum(t2[None, :-1] * val(gc["rhs_cross"])[:, :-1], axis=1) * dt
    bound = t2[None, :] * val(gc["boundary"])
    T7 = bound[:, -1] - bound[:, 0]

    T8 = np.zeros(paths.shape[0])
    for i in sp:
        for j in sp:
            gi = dux[i] + lx_g[i][None, :-1] * du
            gj = dux[j] + lx_g[j][None, :-1] * du
            T8 -= np.sum(t2[None, :-1] * b_g[(i, j)][None, :-1] * gi * gj, axis=1)
    T9 = -np.sum(t2[None, :-1] * A_g[None, :-1] * du * du, axis=1)

    lhs = T1 + T2 + T3
    rhs = T4 + T5 + T6 + T7 + T8 + T9
    groups = [T1, T2, T3, T4, T5, T6, T7, T8, T9]
    scale = np.max(np.abs(np.stack(groups)), axis=0)
    return lhs, rhs, scale


def _stoch_hyperbolic_terms(inst: StochIdentityInstance):
    s = _stoch_setup(inst, hyperbolic=True)
    dims, sp, b = s["dims"], s["sp"], s["b"]
    lt, lx, lxx, tw = s["lt"], s["lx"], s["lxx"], s["tw"]
    U, UT, Ti = s["U"], s["UT"], s["Ti"]
    Psi = inst.Psi
    ell = inst.ell
    ltt = lt.diff(0)

    S = lt * U + UT  # core of v_t

    A = (lt * lt - ltt) - Psi
    for i in sp:
        for j in sp:
            A = A - (b(i, j) * lx[i] * lx[j] - b(i, j).diff(j) * lx[i]
                     - b(i, j) * lxx[(i, j)])
    Bc = A * Psi + (A * lt).diff(0) + 0.5 * Psi.diff(0).diff(0)
    for i in sp:
        for j in sp:
            Bc = Bc - (A * b(i, j) * lx[i]).diff(j)
            Bc = Bc - 0.5 * (b(i, j) * Psi.diff(i)).diff(j)

    I1 = -2.0 * lt * S + Psi * U
    for i in sp:
        for j in sp:
            I1 = I1 + 2.0 * (b(i, j) * lx[i]) * Ti[j]

    DDU = _PathPoly(dims)
    for i in sp:
        for j in sp:
            DDU = DDU + (b(i, j) * U.diff(i)).diff(j)

    lhs_div = _PathPoly(dims)
    for i in sp:
        for j in sp:
            Br = -2.0 * (b(i, j) * lt) * (Ti[i] * S) + (b(i, j) * lx[i]) * (S * S)
            Br = Br + Psi * b(i, j) * (Ti[i] * U)
            Br = Br - ((A * lx[i] + 0.5 * Psi.diff(i)) * b(i, j)) * (U * U)
            for ip in sp:
                for jp in sp:
                    Br = Br + 2.0 * (b(i, j) * b(ip, jp) * lx[ip]) * (Ti[i] * Ti[jp])
                    Br = Br - (b(i, j) * b(ip, jp) * lx[i]) * (Ti[ip] * Ti[jp])
            lhs_div = lhs_div + 2.0 * lx[j] * Br + Br.diff(j)

    Mh = lt * (S * S) - Psi * (S * U) + (A * lt + 0.5 * Psi.diff(0)) * (U * U)
    for i in sp:
        for j in sp:
            Mh = Mh + (b(i, j) * lt) * (Ti[i] * Ti[j])
            Mh = Mh - 2.0 * (b(i, j) * lx[i]) * (Ti[j] * S)

    c_tt = ltt - Psi
    for i in sp:
        for j in sp:
            c_tt = c_tt + (b(i, j) * lx[i]).diff(j)
    rhs_int = c_tt * (S * S) + Bc * (U * U) + I1 * I1
    for i in sp:
        for j in sp:
            cby = (b(i, j) * lx[j]).diff(0) + b(i, j) * lx[j].diff(0)
            rhs_int = rhs_int - 2.0 * cby * (Ti[i] * S)
            cg = (b(i, j) * lt).diff(0) + Psi * b(i, j)
            for ip in sp:
                for jp in sp:
                    cg = cg + 2.0 * b(i, jp) * (b(ip, j) * lx[ip]).diff(jp)
                    cg = cg - (b(i, j) * b(ip, jp) * lx[ip]).diff(jp)
            rhs_int = rhs_int + cg * (Ti[i] * Ti[j])

    return {"I1": I1, "DDU": DDU, "lhs_div": lhs_div, "Mh": Mh,
            "rhs_int": rhs_int, "lt": lt, "sp": sp}


def _eval_stoch_hyperbolic(inst, x_pt, paths):
    terms = _stoch_hyperbolic_terms(inst)
    ts, pts = _grid_points(inst, x_pt)
    dt = inst.dt

    theta = np.exp(inst.ell.eval_batch(pts))
    t2 = theta * theta
    lt_g = terms["lt"].eval_batch(pts)

    gc = {name: terms[name].grid_coeffs(pts)
          for name in ("I1", "DDU", "lhs_div", "Mh", "rhs_int")}
    udt_g = inst.drift.diff(0).eval_batch(pts)
    sg = inst.noise_shape(np.concatenate([[0.0], np.atleast_1d(x_pt)]))

    Bp, Ip = _path_arrays(inst, paths)
    B = Bp[1]

    ut_grid = udt_g[None, :] + sg * B
    dut = np.diff(ut_grid, axis=1)

    def val(coeffs):
        return _pp_values(coeffs, Bp, Ip)

    I1 = val(gc["I1"])
    DDU = val(gc["DDU"])
    H1 = np.sum(t2[None, :-1] * I1[:, :-1] * (dut - DDU[:, :-1] * dt), axis=1)
    H2 = np.sum(t2[None, :-1] * val(gc["lhs_div"])[:, :-1], axis=1) * dt
    mh = t2[None, :] * val(gc["Mh"])
    H3 = mh[:, -1] - mh[:, 0]

    R1 = np.sum(t2[None, :-1] * val(gc["rhs_int"])[:, :-1], axis=1) * dt
    R2 = np.sum(t2[None, :-1] * lt_g[None, :-1] * dut * dut, axis=1)

    lhs = H1 + H2 + H3
    rhs = R1 + R2
    groups = [H1, H2, H3, R1, R2]
    scale = np.max(np.abs(np.stack(groups)), axis=0)
    return lhs, rhs, scale


def eval_stoch_parabolic_residual(inst: StochIdentityInstance, x_pt) -> float:
    """Absolute residual of the stochastic parabolic identity at x_pt
    for the instance's stored Brownian path."""
    lhs, rhs, _ = _eval_stoch_parabolic(inst, x_pt, inst.brownian_path[None, :])
    return float(abs(lhs[0] - rhs[0]))


def eval_stoch_hyperbolic_residual(inst: StochIdentityInstance, x_pt) -> float:
    """Absolute residual of the stochastic hyperbolic identity at x_pt
    for the instance's stored Brownian path (semimartingale u_t)."""
    lhs, rhs, _ = _eval_stoch_hyperbolic(inst, x_pt, inst.brownian_path[None, :])
    return float(abs(lhs[0] - rhs[0]))


def stoch_residual_slope(inst: StochIdentityInstance, x_pt, kind: str,
                         halvings: int = 3, n_paths: int = 1,
                         chunk: int = 512):
    """Mean absolute residual across dt-halvings and the fitted log2 slope.

    Level k runs the identity on 2^k times as many steps as the base
    instance.  Paths are drawn per (seed, path_index); n_paths=1 with a
    zero noise_shape gives the drift-only convergence study.
    """
    if kind == "parabolic":
        evaluate = _eval_stoch_parabolic
    elif kind == "hyperbolic":
        evaluate = _eval_stoch_hyperbolic
    else:
        raise ValueError(f"unknown stochastic kind {kind!r}")
    residuals = []
    dts = []
    for level in range(halvings + 1):
        steps = inst.steps * (2 ** level)
        lev_inst = inst.with_steps(steps)
        total = 0.0
        count = 0
        for start in range(0, n_paths, chunk):
            n = min(chunk, n_paths - start)
            paths = np.stack([
                brownian_increments(inst.seed, start + k, steps, lev_inst.dt)
                for k in range(n)
            ])
            lhs, rhs, _ = evaluate(lev_inst, x_pt, paths)
            total += float(np.sum(np.abs(lhs - rhs)))
            count += n
        residuals.append(total / count)
        dts.append(lev_inst.dt)
    # data that the discretization integrates exactly (for example drift
    # linear in t with time-independent weight) leaves only round-off;
    # fit the rate over the positive residuals and report +inf if the
    # sequence has already collapsed to zero
    res = np.asarray(residuals)
    pos = res > 0
    if int(pos.sum()) >= 2:
        slope = float(np.polyfit(np.log2(np.asarray(dts))[pos], np.log2(res[pos]), 1)[0])
    else:
        slope = math.inf
    return {"dts": dts, "residuals": residuals, "slope": slope}


# ---------------------------------------------------------------------------
# random instances and the suite runner


def _key(seed, label, index):
    return _rng.derive_key(seed, label, index)


def random_det_instance(seed: int, index: int, m: int | None = None) -> DetIdentityInstance:
    """Random instance of the fundamental identity, derived from (seed, index)."""
    gen = _rng.stream(seed, "identities.det", index)
    if m is None:
        m = int(gen.integers(1, 3))
    dims = 1 + m
    z = ComplexPoly(
        random_poly(dims, 3, _key(seed, "det.z.re", index)),
        random_poly(dims, 3, _key(seed, "det.z.im", index)),
    )
    ell = random_poly(dims, 2, _key(seed, "det.ell", index))
    alpha = random_poly(dims, 2, _key(seed, "det.alpha", index))
    beta = random_poly(dims, 2, _key(seed, "det.beta", index))
    b = [[None] * m for _ in range(m)]
    for j in range(m):
        for k in range(j, m):
            p = random_poly(dims, 2, _key(seed, f"det.b{j}{k}", index))
            b[j][k] = p
            b[k][j] = p
    a_p, b_p, lam = gen.uniform(-1.0, 1.0, size=3)
    return DetIdentityInstance(m, z, ell, alpha, beta, b, a_p, b_p, 1.0 + lam)


def random_stoch_instance(seed: int, index: int, m: int = 1,
                          drift_only: bool = True, steps: int = 256,
                          T: float = 1.0) -> StochIdentityInstance:
    """Random stochastic identity instance derived from (seed, index)."""
    dims = 1 + m
    drift = random_poly(dims, 3, _key(seed, "stoch.drift", index))
    ell = random_poly(dims, 2, _key(seed, "stoch.ell", index))
    Psi = random_poly(dims, 2, _key(seed, "stoch.psi", index))
    b = [[None] * m for _ in range(m)]
    for j in range(m):
        for k in range(j, m):
            p = random_poly(dims, 2, _key(seed, f"stoch.b{j}{k}", index))
            b[j][k] = p
            b[k][j] = p
    if drift_only:
        sigma = MultiPoly.zero(dims)
    else:
        # x_1(1-x_1)-style spatial profile
        x1 = MultiPoly.variable(dims, 1)
        sigma = x1 - x1 * x1
    return StochIdentityInstance(m, drift, sigma, ell, Psi, b, T, steps,
                                 _key(seed, "stoch.path", index))


def _suite_points(seed, index, dims, n=100):
    gen = _rng.stream(seed, "identities.points", index)
    return gen.uniform(-1.0, 1.0, size=(n, dims))


def verify_identity_suite(kind: str, n_instances: int, seed: int,
                          tol: float | None = None,
                          points_per_instance: int = 100) -> IdentityReport:
    """Run n_instances random instances x sample points; aggregate residuals.

    kind is one of: ode, multiplier, deterministic, stoch_parabolic_drift,
    stoch_hyperbolic_drift.  Deterministic per seed.
    """
    if kind not in IDENTITY_KINDS:
        raise ValueError(f"unknown identity kind {kind!r}; expected one of {IDENTITY_KINDS}")
    if tol is None:
        tol = DEFAULT_TOLERANCES[kind]
    max_abs = 0.0
    max_rel = 0.0
    scale = 0.0
    samples = 0

    for idx in range(n_instances):
        if kind == "ode":
            gen = _rng.stream(seed, "identities.ode", idx)
            dim_state = int(gen.integers(1, 4))
            lam = float(gen.uniform(-3.0, 3.0))
            path = [random_poly(1, 3, _key(seed, f"ode.x{c}", idx))
                    for c in range(dim_state)]
            tpts = _suite_points(seed, idx, 1, points_per_instance)[:, 0]
            for t in tpts:
                lhs, rhs = eval_ode_identity(lam, path, float(t))
                r = abs(lhs - rhs)
                s = max(abs(lhs), abs(rhs))
                max_abs = max(max_abs, r)
                max_rel = max(max_rel, r / max(s, 1.0))
                scale = max(scale, s)
                samples += 1
        elif kind == "multiplier":
            gen = _rng.stream(seed, "identities.multiplier", idx)
            m = int(gen.integers(1, 4))
            dims = 1 + m
            z = random_poly(dims, 3, _key(seed, "mult.z", idx))
            h = [random_poly(dims, 2, _key(seed, f"mult.h{c}", idx))
                 for c in range(m)]
            pts = _suite_points(seed, idx, dims, points_per_instance)
            for row in pts:
                lhs, rhs = eval_multiplier_identity(h, z, row)
                r = abs(lhs - rhs)
                s = max(abs(lhs), abs(rhs))
                max_abs = max(max_abs, r)
                max_rel = max(max_rel, r / max(s, 1.0))
                scale = max(scale, s)
                samples += 1
        elif kind == "deterministic":
            inst = random_det_instance(seed, idx)
            pts = _suite_points(seed, idx, 1 + inst.m, points_per_instance)
            lhs, rhs = _det_eval_batch(inst, pts)
            r = np.abs(lhs - rhs)
            s = np.maximum(np.abs(lhs), np.abs(rhs))
            max_abs = max(max_abs, float(np.max(r)))
            max_rel = max(max_rel, float(np.max(r / np.maximum(s, 1.0))))
            scale = max(scale, float(np.max(s)))
            samples += pts.shape[0]
        else:
            hyper = kind == "stoch_hyperbolic_drift"
            inst = random_stoch_instance(seed, idx, drift_only=True)
            evaluate = _eval_stoch_hyperbolic if hyper else _eval_stoch_parabolic
            gen = _rng.stream(seed, "identities.xpts", idx)
            xs = gen.uniform(-1.0, 1.0, size=(points_per_instance, inst.m))
            path = inst.brownian_path[None, :]
            for row in xs:
                lhs, rhs, sc = evaluate(inst, row, path)
                r = float(abs(lhs[0] - rhs[0]))
                s = float(max(abs(lhs[0]), abs(rhs[0]), sc[0]))
                max_abs = max(max_abs, r)
                max_rel = max(max_rel, r / max(s, 1.0))
                scale = max(scale, s)
                samples += 1

    passed = bool(max_rel <= tol) if samples else True
    return IdentityReport(
        kind=kind, samples=samples, max_abs_residual=max_abs,
        max_rel_residual=max_rel, scale=scale, tolerance=float(tol),
        passed=passed,
    )
