"""Finite-difference solvers on intervals and rectangles with Dirichlet walls.

Space is discretized by second-order centered differences on uniform
interior nodes; the divergence-form diffusion term uses harmonic-mean
diffusivity at half nodes.  Time stepping:

* heat: Crank-Nicolson.  The backward direction applies the exact
  transpose of the forward step, so the discrete duality pairing
  <y(T), psi(T)> - <y(0), psi(0)> = dt * sum_k <masked control at the
  step midpoint, (psi_k + psi_{k+1})/2> holds to round-off.
* wave: implicit midpoint.  For the undamped scheme the discrete energy
  (trapezoidal kinetic term plus half-node stiffness form) is a conserved
  quadratic invariant; with damping it is exactly non-increasing.
* stochastic equations: the deterministic drift is stepped exactly as in
  the matching deterministic solver and the noise increment is added
  explicitly at the left endpoint (Ito convention), one shared scalar
  Brownian path per sample.  Noise off therefore reproduces the
  deterministic solver bit for bit.

Boundary damping for the wave equation replaces the Dirichlet condition
at an endpoint with gain a > 0 by a Robin ghost-node condition
p u_x nu + a u_t = 0; the endpoint value becomes an extra unknown with
mass h/2, which keeps the energy decay exact step by step.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import rng as _rng

__all__ = [
    "Grid",
    "GridFunction",
    "Trajectory",
    "CoefficientField",
    "StochasticEnsemble",
    "SolveError",
    "solve_heat",
    "solve_wave",
    "wave_energy",
    "solve_semilinear_heat",
    "solve_stoch_heat",
    "solve_stoch_wave",
    "export_trajectory_csv",
    "write_trajectory_binary",
    "read_trajectory_binary",
    "l2_inner",
    "l2_norm",
    "linf_norm",
    "sine_mode",
    "fd_laplacian_eigenvalue",
    "box_mask",
    "BLOWUP_THRESHOLD",
]

BLOWUP_THRESHOLD = 1e8


class SolveError(RuntimeError):
    """A linear solve inside a time stepper failed (singular system)."""


def _as_axis_tuple(value, dim: int, name: str) -> tuple:
    if np.isscalar(value):
        return (value,) * dim
    out = tuple(value)
    if len(out) != dim:
        raise ValueError(f"{name} must have one entry per axis, got {out!r} for dim={dim}")
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid of interior nodes on a box, plus the time grid.

    Dirichlet boundary values are implied and never stored.  ``n`` counts
    interior nodes per axis, so the mesh width is ``h = extent/(n+1)``.
    """

    dim: int
    n: tuple
    extents: tuple
    dt: float
    steps: int

    def __init__(self, dim: int, n, dt: float, steps: int, extents=1.0):
        if dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {dim}")
        n = tuple(int(v) for v in _as_axis_tuple(n, dim, "n"))
        extents = tuple(float(v) for v in _as_axis_tuple(extents, dim, "extents"))
        if any(v < 3 for v in n):
            raise ValueError(f"need at least 3 interior nodes per axis, got {n}")
        if any(v <= 0 for v in extents):
            raise ValueError(f"extents must be positive, got {extents}")
        dt = float(dt)
        steps = int(steps)
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if steps < 1:
            raise ValueError(f"steps must be at least 1, got {steps}")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "steps", steps)

    @property
    def h(self) -> tuple:
        return tuple(ext / (ni + 1) for ext, ni in zip(self.extents, self.n))

    @property
    def T(self) -> float:
        return self.dt * self.steps

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axis_nodes(self, axis: int) -> np.ndarray:
        """Interior node coordinates along one axis."""
        h = self.h[axis]
        return h * np.arange(1, self.n[axis] + 1)

    def coords(self) -> np.ndarray:
        """(size, dim) array of interior node coordinates, axis 0 slowest."""
        axes = [self.axis_nodes(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    def with_time(self, dt: float, steps: int) -> "Grid":
        return Grid(self.dim, self.n, dt, steps, self.extents)


@dataclass
class GridFunction:
    """Real values on the interior nodes of a grid (zero on the boundary)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float).reshape(-1)
        if self.values.shape[0] != self.grid.size:
            raise ValueError(
                f"expected {self.grid.size} node values, got {self.values.shape[0]}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    @classmethod
    def zeros(cls, grid: Grid) -> "GridFunction":
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def from_callable(cls, grid: Grid, fn: Callable) -> "GridFunction":
        cols = grid.coords().T
        return cls(grid, np.asarray(fn(*cols), dtype=float))

    def l2(self) -> float:
        return l2_norm(self.grid, self.values)

    def linf(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass
class Trajectory:
    """Time-indexed snapshots of a grid function, velocity included for waves.

    ``snapshots[k]`` is the state at time ``k*dt``.  For a run that blew up
    the array is truncated at the step where the max norm crossed the
    threshold and ``blown_up``/``blowup_step`` record the event.  Wave runs
    with boundary damping carry the moving endpoint values separately so
    the energy audit can include them.
    """

    grid: Grid
    snapshots: np.ndarray
    velocities: Optional[np.ndarray] = None
    boundary_values: Optional[np.ndarray] = None
    boundary_velocities: Optional[np.ndarray] = None
    blown_up: bool = False
    blowup_step: Optional[int] = None

    def __post_init__(self):
        self.snapshots = np.asarray(self.snapshots, dtype=float)
        if self.snapshots.ndim != 2 or self.snapshots.shape[1] != self.grid.size:
            raise ValueError("snapshots must be (times, grid.size)")
        if not self.blown_up and self.snapshots.shape[0] != self.grid.steps + 1:
            raise ValueError(
                f"expected {self.grid.steps + 1} snapshots, got {self.snapshots.shape[0]}"
            )
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=float)
            if self.velocities.shape != self.snapshots.shape:
                raise ValueError("velocity snapshots must match displacement snapshots")

    @property
    def times(self) -> np.ndarray:
        return self.grid.dt * np.arange(self.snapshots.shape[0])

    def snapshot(self, k: int) -> GridFunction:
        return GridFunction(self.grid, self.snapshots[k].copy())

    def terminal_values(self) -> np.ndarray:
        return self.snapshots[-1]


@dataclass
class CoefficientField:
    """Coefficients of the model equations on one grid.

    Each entry is a constant, an array over interior nodes, or a callable
    of the node coordinates.  ``potential`` may also be an array of shape
    (steps+1, size): a potential sampled on the time grid, which the heat
    stepper averages to the step midpoint.  ``convection`` is one entry
    per axis.  ``mask`` is the control/observation indicator.
    """

    diffusivity: Union[float, np.ndarray, Callable] = 1.0
    potential: Union[float, np.ndarray, Callable] = 0.0
    convection: Optional[Sequence] = None
    damping: Union[float, np.ndarray, Callable] = 0.0
    noise_gain: Union[float, np.ndarray, Callable] = 0.0
    mask: Union[None, np.ndarray, Callable] = None


def l2_inner(grid: Grid, u: np.ndarray, v: np.ndarray) -> float:
    """L2 inner product of interior node values (cell-volume weighted)."""
    return grid.cell_volume * float(np.dot(np.ravel(u), np.ravel(v)))


def l2_norm(grid: Grid, u: np.ndarray) -> float:
    return math.sqrt(max(l2_inner(grid, u, u), 0.0))


def linf_norm(u: np.ndarray) -> float:
    u = np.ravel(u)
    return float(np.max(np.abs(u))) if u.size else 0.0


def sine_mode(grid: Grid, k) -> np.ndarray:
    """Product Dirichlet mode sin(k_1 pi x_1/L_1) * ... with amplitude one."""
    k = _as_axis_tuple(k, grid.dim, "k")
    vals = np.ones(grid.size)
    coords = grid.coords()
    for axis in range(grid.dim):
        vals = vals * np.sin(k[axis] * math.pi * coords[:, axis] / grid.extents[axis])
    return vals


def fd_laplacian_eigenvalue(grid: Grid, k) -> float:
    """Eigenvalue of the discrete (negative) Dirichlet Laplacian for sine_mode(k)."""
    k = _as_axis_tuple(k, grid.dim, "k")
    out = 0.0
    for axis in range(grid.dim):
        h = grid.h[axis]
        out += (4.0 / h**2) * math.sin(k[axis] * math.pi * h / (2.0 * grid.extents[axis])) ** 2
    return out


def box_mask(grid: Grid, bounds) -> np.ndarray:
    """Indicator of a closed axis-aligned box; bounds is (a, b) per axis."""
    if grid.dim == 1 and np.isscalar(bounds[0]):
        bounds = (bounds,)
    coords = grid.coords()
    keep = np.ones(grid.size, dtype=bool)
    for axis, (a, b) in enumerate(bounds):
        keep &= (coords[:, axis] >= a - 1e-12) & (coords[:, axis] <= b + 1e-12)
    return keep.astype(float)


# ---------------------------------------------------------------------------
# coefficient materialization


def _node_field(value, grid: Grid, name: str) -> np.ndarray:
    if value is None:
        raise ValueError(f"{name} must not be None")
    if callable(value):
        cols = grid.coords().T
        arr = np.broadcast_to(np.asarray(value(*cols), dtype=float), (grid.size,))
        return np.ascontiguousarray(arr)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.size, float(arr))
    arr = arr.reshape(-1)
    if arr.shape[0] != grid.size:
        raise ValueError(f"{name} has {arr.shape[0]} values, grid has {grid.size} nodes")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return np.ascontiguousarray(arr)


def _diffusivity(coef: CoefficientField, grid: Grid) -> np.ndarray:
    p = _node_field(coef.diffusivity, grid, "diffusivity")
    if np.min(p) <= 0.0:
        raise ValueError(f"diffusivity must be positive everywhere, min is {np.min(p)}")
    return p


def _mask_field(coef: CoefficientField, grid: Grid) -> np.ndarray:
    if coef.mask is None:
        return np.ones(grid.size)
    m = _node_field(coef.mask, grid, "mask")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask values must be 0 or 1")
    return m


def _damping_field(coef: CoefficientField, grid: Grid) -> np.ndarray:
    b = _node_field(coef.damping, grid, "damping")
    if np.min(b) < 0.0:
        raise ValueError(f"damping must be nonnegative, min is {np.min(b)}")
    return b


def _convection_field(coef: CoefficientField, grid: Grid):
    if coef.convection is None:
        return None
    value = coef.convection
    if np.isscalar(value) or callable(value):
        value = (value,) * grid.dim
    value = tuple(value)
    if len(value) != grid.dim:
        raise ValueError(f"convection needs {grid.dim} components, got {len(value)}")
    comps = np.stack([_node_field(c, grid, "convection") for c in value])
    if not np.any(comps):
        return None
    return comps


def _potential_series(coef: CoefficientField, grid: Grid):
    """Return (static part over nodes, optional per-time-node series)."""
    value = coef.potential
    if not callable(value):
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 2:
            if arr.shape != (grid.steps + 1, grid.size):
                raise ValueError(
                    f"time-dependent potential must be (steps+1, size)="
                    f"({grid.steps + 1}, {grid.size}), got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError("potential must be finite")
            return np.zeros(grid.size), np.ascontiguousarray(arr)
    return _node_field(value, grid, "potential"), None


def _control_series(control, grid: Grid) -> Optional[np.ndarray]:
    if control is None:
        return None
    if isinstance(control, Trajectory):
        control = control.snapshots
    if isinstance(control, GridFunction):
        arr = np.tile(control.values, (grid.steps + 1, 1))
    else:
        arr = np.asarray(control, dtype=float)
        if arr.ndim == 0 and float(arr) == 0.0:
            return None
        if arr.ndim == 1 and arr.shape[0] == grid.size:
            arr = np.tile(arr, (grid.steps + 1, 1))
    if arr.shape != (grid.steps + 1, grid.size):
        raise ValueError(
            f"control must be (steps+1, size)=({grid.steps + 1}, {grid.size}), "
            f"got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("control values must be finite")
    return arr


def _initial_values(data, grid: Grid, name: str) -> np.ndarray:
    if isinstance(data, GridFunction):
        if data.grid.n != grid.n or data.grid.dim != grid.dim:
            raise ValueError(f"{name} lives on a different grid")
        return data.values.copy()
    return _node_field(data, grid, name)


# ---------------------------------------------------------------------------
# spatial operators


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def _half_diffusivity_1d(p: np.ndarray) -> np.ndarray:
    """Diffusivity at the n+1 half nodes, boundary values by replication."""
    p_ext = np.concatenate([p[:1], p, p[-1:]])
    return _harmonic(p_ext[:-1], p_ext[1:])


class _Tridiag:
    """Tridiagonal operator rows: sub[i]*x[i-1] + dia[i]*x[i] + sup[i]*x[i+1]."""

    __slots__ = ("sub", "dia", "sup")

    def __init__(self, sub, dia, sup):
        self.sub = np.asarray(sub, dtype=float)
        self.dia = np.asarray(dia, dtype=float)
        self.sup = np.asarray(sup, dtype=float)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.dia.reshape(-1, *([1] * (x.ndim - 1))) * x
        y[1:] += self.sub[1:].reshape(-1, *([1] * (x.ndim - 1))) * x[:-1]
        y[:-1] += self.sup[:-1].reshape(-1, *([1] * (x.ndim - 1))) * x[1:]
        return y

    def transpose(self) -> "_Tridiag":
        n = self.dia.shape[0]
        sub = np.zeros(n)
        sup = np.zeros(n)
        sub[1:] = self.sup[:-1]
        sup[:-1] = self.sub[1:]
        return _Tridiag(sub, self.dia.copy(), sup)

    def shifted(self, scale: float, dia_extra: Optional[np.ndarray] = None):
        """Banded storage of I + scale*(self + diag(dia_extra))."""
        n = self.dia.shape[0]
        ab = np.zeros((3, n))
        dia = self.dia if dia_extra is None else self.dia + dia_extra
        ab[0, 1:] = scale * self.sup[:-1]
        ab[1, :] = 1.0 + scale * dia
        ab[2, :-1] = scale * self.sub[1:]
        return ab


def _tri_solve(ab: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        return scipy.linalg.solve_banded(
            (1, 1), ab, rhs, overwrite_ab=True, check_finite=False
        )
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SolveError(f"singular tridiagonal system in {what}: {exc}") from exc


def _assemble_1d(grid: Grid, p, conv, pot_static) -> _Tridiag:
    """Rows of L = d/dx(p d/dx) + conv*d/dx + pot on interior nodes."""
    n = grid.n[0]
    h = grid.h[0]
    ph = _half_diffusivity_1d(p)
    sub = ph[:-1] / h**2
    sup = ph[1:] / h**2
    dia = -(ph[:-1] + ph[1:]) / h**2 + pot_static
    if conv is not None:
        sub = sub - conv[0] / (2.0 * h)
        sup = sup + conv[0] / (2.0 * h)
    out = _Tridiag(sub.copy(), dia, sup.copy())
    out.sub[0] = 0.0
    out.sup[-1] = 0.0
    return out


def _assemble_2d(grid: Grid, p, conv, pot_static) -> scipy.sparse.csr_matrix:
    """Sparse L = div(p grad) + conv . grad + pot on interior nodes."""
    n1, n2 = grid.n
    h1, h2 = grid.h
    P = p.reshape(n1, n2)
    dia = np.full((n1, n2), 0.0)
    dia += pot_static.reshape(n1, n2)

    up0 = _harmonic(P[:-1, :], P[1:, :]) / h1**2    # link (i,j)-(i+1,j)
    up1 = _harmonic(P[:, :-1], P[:, 1:]) / h2**2    # link (i,j)-(i,j+1)
    dia[:-1, :] -= up0
    dia[1:, :] -= up0
    dia[0, :] -= P[0, :] / h1**2                    # boundary half links
    dia[-1, :] -= P[-1, :] / h1**2
    dia[:, :-1] -= up1
    dia[:, 1:] -= up1
    dia[:, 0] -= P[:, 0] / h2**2
    dia[:, -1] -= P[:, -1] / h2**2

    lower0 = up0.copy()
    upper0 = up0.copy()
    lower1 = up1.copy()
    upper1 = up1.copy()
    if conv is not None:
        c0 = conv[0].reshape(n1, n2)
        c1 = conv[1].reshape(n1, n2)
        upper0 += c0[:-1, :] / (2.0 * h1)
        lower0 -= c0[1:, :] / (2.0 * h1)
        upper1 += c1[:, :-1] / (2.0 * h2)
        lower1 -= c1[:, 1:] / (2.0 * h2)

    size = n1 * n2
    idx = np.arange(size).reshape(n1, n2)
    rows = [idx.ravel()]
    cols = [idx.ravel()]
    vals = [dia.ravel()]
    rows += [idx[:-1, :].ravel(), idx[1:, :].ravel()]
    cols += [idx[1:, :].ravel(), idx[:-1, :].ravel()]
    vals += [upper0.ravel(), lower0.ravel()]
    rows += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    cols += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    vals += [upper1.ravel(), lower1.ravel()]
    mat = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    )
    return mat.tocsr()


def _splu(mat: scipy.sparse.spmatrix, what: str):
    try:
        return scipy.sparse.linalg.splu(mat.tocsc())
    except RuntimeError as exc:
        raise SolveError(f"singular sparse system in {what}: {exc}") from exc


# ---------------------------------------------------------------------------
# heat


def solve_heat(
    coef: CoefficientField,
    grid: Grid,
    data,
    control=None,
    direction: str = "forward",
) -> Trajectory:
    """Crank-Nicolson heat solve, forward from initial or backward from
    terminal data.

    Forward integrates y_t = div(p grad y) + conv . grad y + pot * y
    + mask * control.  Backward applies the exact transpose of each
    forward step in reverse order: snapshots[k] is the adjoint state at
    time k*dt and snapshots[steps] the given terminal data, so forward
    and backward runs are adjoint to each other to round-off.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    y = _initial_values(data, grid, "data")
    p = _diffusivity(coef, grid)
    mask = _mask_field(coef, grid)
    conv = _convection_field(coef, grid)
    pot_static, pot_series = _potential_series(coef, grid)
    ctrl = _control_series(control, grid)
    if ctrl is not None:
        ctrl = ctrl * mask[None, :]

    alpha = 0.5 * grid.dt
    snaps = np.zeros((grid.steps + 1, grid.size))
    forward = direction == "forward"
    order = range(grid.steps) if forward else range(grid.steps - 1, -1, -1)
    snaps[0 if forward else grid.steps] = y

    if grid.dim == 1:
        L = _assemble_1d(grid, p, conv, pot_static)
        Lop = L if forward else L.transpose()
        for k in order:
            extra = None
            if pot_series is not None:
                extra = 0.5 * (pot_series[k] + pot_series[k + 1])
            rhs = Lop.matvec(y) if extra is None else Lop.matvec(y) + extra * y
            rhs = y + alpha * rhs
            if ctrl is not None:
                rhs += alpha * (ctrl[k] + ctrl[k + 1])
            ab = Lop.shifted(-alpha, extra)
            y = _tri_solve(ab, rhs, "solve_heat")
            snaps[k + 1 if forward else k] = y
    else:
        L = _assemble_2d(grid, p, conv, pot_static)
        Lop = L if forward else L.T.tocsr()
        eye = scipy.sparse.identity(grid.size, format="csr")
        lu = None if pot_series is not None else _splu(eye - alpha * Lop, "solve_heat")
        for k in order:
            if pot_series is not None:
                extra = 0.5 * (pot_series[k] + pot_series[k + 1])
                Lk = Lop + scipy.sparse.diags(extra)
                lu_k = _splu(eye - alpha * Lk, "solve_heat")
                rhs = y + alpha * (Lk @ y)
            else:
                lu_k = lu
                rhs = y + alpha * (Lop @ y)
            if ctrl is not None:
                rhs = rhs + alpha * (ctrl[k] + ctrl[k + 1])
            y = lu_k.solve(rhs)
            snaps[k + 1 if forward else k] = y

    return Trajectory(grid, snaps)


# ---------------------------------------------------------------------------
# wave


def _boundary_gains(boundary_gain, dim: int) -> tuple:
    if np.isscalar(boundary_gain):
        gains = (0.0, float(boundary_gain))
    else:
        gains = tuple(float(g) for g in boundary_gain)
        if len(gains) != 2:
            raise ValueError("boundary_gain must be a scalar or (left, right)")
    if any(g < 0 for g in gains):
        raise ValueError(f"boundary gains must be nonnegative, got {gains}")
    return gains


def solve_wave(
    coef: CoefficientField,
    grid: Grid,
    data,
    velocity,
    control=None,
    damping_mode: str = "none",
    boundary_gain=0.0,
    c0: float = 1.0,
    nonlinearity: Optional[Callable] = None,
) -> Trajectory:
    """Implicit-midpoint wave solve.

    Integrates u_tt = div(p grad u) + conv . grad u + pot * u
    - damping_term(u_t) - nonlinearity(u) + mask * control.  Damping modes:
    ``none``, ``interior`` (term b(x)*c0*u_t with b = coef.damping), and
    ``boundary`` (1-d only: Robin ghost-node condition p u_x nu + a u_t = 0
    at each endpoint with gain a > 0; gain 0 keeps the Dirichlet wall).
    The nonlinearity is evaluated explicitly at the previous step, so the
    linear undamped scheme stays exactly conservative.
    """
    if damping_mode not in ("none", "interior", "boundary"):
        raise ValueError(f"unknown damping_mode {damping_mode!r}")
    u = _initial_values(data, grid, "data")
    v = _initial_values(velocity, grid, "velocity")
    p = _diffusivity(coef, grid)
    mask = _mask_field(coef, grid)
    conv = _convection_field(coef, grid)
    pot_static, pot_series = _potential_series(coef, grid)
    if pot_series is not None:
        raise ValueError("time-dependent potential is not supported for wave solves")
    ctrl = _control_series(control, grid)
    if ctrl is not None:
        ctrl = ctrl * mask[None, :]

    damping = np.zeros(grid.size)
    if damping_mode == "interior":
        damping = _damping_field(coef, grid) * float(c0)
    gains = (0.0, 0.0)
    if damping_mode == "boundary":
        if grid.dim != 1:
            raise ValueError("boundary damping requires a 1-d grid")
        if conv is not None or np.any(pot_static):
            raise ValueError(
                "boundary damping supports the pure diffusion wave operator only"
            )
        gains = _boundary_gains(boundary_gain, grid.dim)
        if np.any(_damping_field(coef, grid)):
            damping = _damping_field(coef, grid) * float(c0)

    dt = grid.dt
    steps = grid.steps

    if grid.dim == 1 and damping_mode == "boundary":
        return _solve_wave_boundary_1d(
            coef, grid, u, v, ctrl, gains, damping, nonlinearity, p
        )

    snaps = np.zeros((steps + 1, grid.size))
    vels = np.zeros((steps + 1, grid.size))
    snaps[0] = u
    vels[0] = v

    if grid.dim == 1:
        L = _assemble_1d(grid, p, conv, pot_static)

        def solve_step(rhs, k):
            ab = L.shifted(-0.25 * dt * dt, None)
            ab[1, :] += 0.5 * dt * damping
            return _tri_solve(ab, rhs, "solve_wave")

        matvec = L.matvec
    else:
        L = _assemble_2d(grid, p, conv, pot_static)
        eye = scipy.sparse.identity(grid.size, format="csr")
        M = eye + scipy.sparse.diags(0.5 * dt * damping) - 0.25 * dt * dt * L
        lu = _splu(M, "solve_wave")

        def solve_step(rhs, k):
            return lu.solve(rhs)

        matvec = L.__matmul__

    quarter = 0.25 * dt * dt
    for k in range(steps):
        g = np.zeros(grid.size)
        if ctrl is not None:
            g += 0.5 * (ctrl[k] + ctrl[k + 1])
        if nonlinearity is not None:
            g = g - np.asarray(nonlinearity(u), dtype=float)
        rhs = v - 0.5 * dt * damping * v + quarter * matvec(v) + dt * matvec(u) + dt * g
        v_new = solve_step(rhs, k)
        u = u + 0.5 * dt * (v + v_new)
        v = v_new
        snaps[k + 1] = u
        vels[k + 1] = v

    return Trajectory(grid, snaps, velocities=vels)


def _solve_wave_boundary_1d(
    coef, grid, u0, v0, ctrl, gains, damping, nonlinearity, p
) -> Trajectory:
    """Midpoint stepping for the 1-d wave with Robin-damped endpoints.

    Endpoints with positive gain join the unknown vector (ordered left
    endpoint, interior, right endpoint) with lumped mass h/2, which makes
    the semi-discrete energy derivative exactly -a_L v_L^2 - a_R v_R^2
    - sum_i h b_i c0 v_i^2 and keeps the stepped energy non-increasing.
    """
    n = grid.n[0]
    h = grid.h[0]
    dt = grid.dt
    steps = grid.steps
    aL, aR = gains
    activeL = aL > 0.0
    activeR = aR > 0.0
    N = n + int(activeL) + int(activeR)
    lo = 1 if activeL else 0

    ph = _half_diffusivity_1d(p)

    # generator rows: v' = Au*u + Av*v on the extended vector
    sub = np.zeros(N)
    dia = np.zeros(N)
    sup = np.zeros(N)
    dia[lo:lo + n] = -(ph[:-1] + ph[1:]) / h**2
    sub[lo:lo + n] = ph[:-1] / h**2
    sup[lo:lo + n] = ph[1:] / h**2
    if not activeL:
        sub[lo] = 0.0
    if not activeR:
        sup[lo + n - 1] = 0.0
    dvals = np.zeros(N)
    dvals[lo:lo + n] = damping
    if activeL:
        dia[0] = -2.0 * ph[0] / h**2
        sup[0] = 2.0 * ph[0] / h**2
        dvals[0] = 2.0 * aL / h
    if activeR:
        dia[-1] = -2.0 * ph[-1] / h**2
        sub[-1] = 2.0 * ph[-1] / h**2
        dvals[-1] = 2.0 * aR / h
    Au = _Tridiag(sub, dia, sup)

    u = np.zeros(N)
    v = np.zeros(N)
    u[lo:lo + n] = u0
    v[lo:lo + n] = v0

    snaps = np.zeros((steps + 1, n))
    vels = np.zeros((steps + 1, n))
    b_vals = np.zeros((steps + 1, 2))
    b_vels = np.zeros((steps + 1, 2))
    snaps[0] = u0
    vels[0] = v0

    quarter = 0.25 * dt * dt
    for k in range(steps):
        g = np.zeros(N)
        if ctrl is not None:
            g[lo:lo + n] += 0.5 * (ctrl[k] + ctrl[k + 1])
        if nonlinearity is not None:
            g[lo:lo + n] -= np.asarray(nonlinearity(u[lo:lo + n]), dtype=float)
        rhs = v - 0.5 * dt * dvals * v + quarter * Au.matvec(v) + dt * Au.matvec(u) + dt * g
        ab = Au.shifted(-quarter, None)
        ab[1, :] += 0.5 * dt * dvals
        v_new = _tri_solve(ab, rhs, "solve_wave")
        u = u + 0.5 * dt * (v + v_new)
        v = v_new
        snaps[k + 1] = u[lo:lo + n]
        vels[k + 1] = v[lo:lo + n]
        if activeL:
            b_vals[k + 1, 0] = u[0]
            b_vels[k + 1, 0] = v[0]
        if activeR:
            b_vals[k + 1, 1] = u[-1]
            b_vels[k + 1, 1] = v[-1]

    return Trajectory(
        grid,
        snaps,
        velocities=vels,
        boundary_values=b_vals,
        boundary_velocities=b_vels,
    )


def _stiffness_energy(grid: Grid, p: np.ndarray, u: np.ndarray, boundary=None) -> np.ndarray:
    """Half-node stiffness form sum p_half |grad u|^2 dx for each snapshot row."""
    if grid.dim == 1:
        n = grid.n[0]
        h = grid.h[0]
        ph = _half_diffusivity_1d(p)
        m = u.shape[0]
        full = np.zeros((m, n + 2))
        full[:, 1:-1] = u
        if boundary is not None:
            full[:, 0] = boundary[:, 0]
            full[:, -1] = boundary[:, 1]
        diff = np.diff(full, axis=1) / h
        return (diff**2 @ ph) * h
    n1, n2 = grid.n
    h1, h2 = grid.h
    P = p.reshape(n1, n2)
    m = u.shape[0]
    U = np.zeros((m, n1 + 2, n2 + 2))
    U[:, 1:-1, 1:-1] = u.reshape(m, n1, n2)
    P_ext = np.pad(P, 1, mode="edge")
    ph0 = _harmonic(P_ext[:-1, 1:-1], P_ext[1:, 1:-1])
    ph1 = _harmonic(P_ext[1:-1, :-1], P_ext[1:-1, 1:])
    dx0 = np.diff(U[:, :, 1:-1], axis=1) / h1
    dx1 = np.diff(U[:, 1:-1, :], axis=2) / h2
    e0 = np.einsum("mij,ij->m", dx0**2, ph0)
    e1 = np.einsum("mij,ij->m", dx1**2, ph1)
    return (e0 + e1) * h1 * h2


def wave_energy(
    traj: Trajectory,
    coef: CoefficientField,
    nonlinearity: Optional[Callable] = None,
) -> np.ndarray:
    """Energy series E(t_k) = (kinetic + stiffness)/2 + nonlinear potential.

    Kinetic and stiffness terms use the same trapezoidal/half-node
    quadratures as the wave stepper, so the undamped series is constant
    and a damped series non-increasing to round-off.  When a nonlinearity
    f is given, the potential integral of f from 0 to u is evaluated per
    node by adaptive quadrature and added.
    """
    grid = traj.grid
    if traj.velocities is None:
        raise ValueError("wave_energy needs a trajectory with velocities")
    p = _diffusivity(coef, grid)
    vol = grid.cell_volume
    kinetic = vol * np.sum(traj.velocities**2, axis=1)
    if traj.boundary_velocities is not None:
        kinetic = kinetic + 0.5 * grid.h[0] * np.sum(traj.boundary_velocities**2, axis=1)
    stiff = _stiffness_energy(grid, p, traj.snapshots, traj.boundary_values)
    energy = 0.5 * (kinetic + stiff)
    if nonlinearity is not None:
        u = traj.snapshots
        primitive, _ = scipy.integrate.quad_vec(
            lambda s: u * np.asarray(nonlinearity(s * u), dtype=float), 0.0, 1.0
        )
        energy = energy + vol * np.sum(primitive, axis=1)
    return energy


# ---------------------------------------------------------------------------
# semilinear heat


def solve_semilinear_heat(
    coef: CoefficientField,
    grid: Grid,
    data,
    control=None,
    r_exponent: float = 1.0,
    sign: int = -1,
) -> Trajectory:
    """Semi-implicit solve of y_t = div(p grad y) + a y + g(y) + mask*control
    with g(s) = -sign * s * ln(1+|s|)^r.

    The nonlinearity is frozen at the previous step as a multiplicative
    potential and the resulting linear step is Crank-Nicolson, so r = 0
    reproduces solve_heat with potential a -sign exactly.  sign = -1 is
    the focusing case: runs whose max norm crosses 1e8 stop early with
    the blow-up flag and step recorded.
    """
    if r_exponent < 0:
        raise ValueError(f"r_exponent must be nonnegative, got {r_exponent}")
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    y = _initial_values(data, grid, "data")
    p = _diffusivity(coef, grid)
    mask = _mask_field(coef, grid)
    conv = _convection_field(coef, grid)
    pot_static, pot_series = _potential_series(coef, grid)
    if pot_series is not None:
        raise ValueError("time-dependent potential is not supported here; "
                         "fold it into the control or use solve_heat")
    ctrl = _control_series(control, grid)
    if ctrl is not None:
        ctrl = ctrl * mask[None, :]

    alpha = 0.5 * grid.dt
    snaps = [y.copy()]
    blown_up = False
    blowup_step = None

    if grid.dim == 1:
        L = _assemble_1d(grid, p, conv, pot_static)
    else:
        L = _assemble_2d(grid, p, conv, pot_static)
        eye = scipy.sparse.identity(grid.size, format="csr")

    for k in range(grid.steps):
        frozen = -float(sign) * np.log1p(np.abs(y)) ** r_exponent
        if grid.dim == 1:
            rhs = y + alpha * (L.matvec(y) + frozen * y)
            if ctrl is not None:
                rhs += alpha * (ctrl[k] + ctrl[k + 1])
            ab = L.shifted(-alpha, frozen)
            y = _tri_solve(ab, rhs, "solve_semilinear_heat")
        else:
            Lk = L + scipy.sparse.diags(frozen)
            rhs = y + alpha * (Lk @ y)
            if ctrl is not None:
                rhs = rhs + alpha * (ctrl[k] + ctrl[k + 1])
            y = _splu(eye - alpha * Lk, "solve_semilinear_heat").solve(rhs)
        snaps.append(y.copy())
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > BLOWUP_THRESHOLD:
            blown_up = True
            blowup_step = k + 1
            break

    return Trajectory(
        grid, np.array(snaps), blown_up=blown_up, blowup_step=blowup_step
    )


# ---------------------------------------------------------------------------
# stochastic solvers


@dataclass
class StochasticEnsemble:
    """Monte Carlo sample of trajectories driven by one Brownian path each.

    ``terminal`` always holds the final state of every path.  With
    ``keep="all"`` the full snapshot arrays are retained and individual
    paths are available through :meth:`trajectory`.
    """

    grid: Grid
    seed: int
    n_paths: int
    terminal: np.ndarray
    terminal_velocity: Optional[np.ndarray] = None
    snapshots: Optional[np.ndarray] = None
    velocity_snapshots: Optional[np.ndarray] = None

    def trajectory(self, path: int) -> Trajectory:
        if self.snapshots is None:
            raise ValueError('ensemble was run with keep="terminal"; no snapshots kept')
        vel = None if self.velocity_snapshots is None else self.velocity_snapshots[path]
        return Trajectory(self.grid, self.snapshots[path], velocities=vel)


def _path_increments(seed: int, label: str, first: int, count: int, steps: int, dt: float):
    """(steps, count) Brownian increments, one derived stream per path."""
    out = np.empty((steps, count))
    scale = math.sqrt(dt)
    for j in range(count):
        out[:, j] = _rng.stream(seed, label, first + j).normal(0.0, scale, size=steps)
    return out


def _ensemble_storage(grid: Grid, n_paths: int, keep: str, with_velocity: bool):
    if keep not in ("all", "terminal"):
        raise ValueError(f'keep must be "all" or "terminal", got {keep!r}')
    if keep == "terminal":
        return None
    per_field = n_paths * (grid.steps + 1) * grid.size
    fields = 2 if with_velocity else 1
    if per_field * fields > 2 * 10**8:
        raise ValueError(
            "full snapshot storage for this ensemble exceeds the memory budget; "
            'pass keep="terminal"'
        )
    return np.zeros((n_paths, grid.steps + 1, grid.size))


def solve_stoch_heat(
    coef: CoefficientField,
    grid: Grid,
    data,
    seed: int,
    n_paths: int,
    keep: str = "all",
    path_chunk: int = 2048,
) -> StochasticEnsemble:
    """Ensemble solve of dz = [div(p grad z) + conv . grad z + pot z] dt
    + noise_gain * z dB with one scalar Brownian path per sample.

    The drift is stepped with the same Crank-Nicolson scheme as
    solve_heat and the noise increment enters explicitly at the left
    endpoint of each step, so noise_gain = 0 reproduces the deterministic
    solution exactly.  Path ``j`` is driven by the stream derived from
    (seed, j) and does not depend on n_paths or chunking.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be at least 1, got {n_paths}")
    z0 = _initial_values(data, grid, "data")
    p = _diffusivity(coef, grid)
    conv = _convection_field(coef, grid)
    pot_static, pot_series = _potential_series(coef, grid)
    if pot_series is not None:
        raise ValueError("time-dependent potential is not supported in stochastic solves")
    gain = _node_field(coef.noise_gain, grid, "noise_gain")

    alpha = 0.5 * grid.dt
    store = _ensemble_storage(grid, n_paths, keep, with_velocity=False)
    terminal = np.zeros((n_paths, grid.size))

    if grid.dim == 1:
        L = _assemble_1d(grid, p, conv, pot_static)
        ab0 = L.shifted(-alpha, None)
        lu_solve = None
    else:
        L = _assemble_2d(grid, p, conv, pot_static)
        eye = scipy.sparse.identity(grid.size, format="csr")
        lu_solve = _splu(eye - alpha * L, "solve_stoch_heat").solve

    for first in range(0, n_paths, path_chunk):
        count = min(path_chunk, n_paths - first)
        dB = _path_increments(seed, "pde.stoch_heat", first, count, grid.steps, grid.dt)
        Z = np.tile(z0[:, None], (1, count))
        if store is not None:
            store[first:first + count, 0, :] = Z.T
        for k in range(grid.steps):
            rhs = Z + alpha * (L.matvec(Z) if grid.dim == 1 else L @ Z)
            rhs += (gain[:, None] * Z) * dB[k][None, :]
            if grid.dim == 1:
                Z = _tri_solve(ab0.copy(), rhs, "solve_stoch_heat")
            else:
                Z = lu_solve(rhs)
            if store is not None:
                store[first:first + count, k + 1, :] = Z.T
        terminal[first:first + count] = Z.T

    return StochasticEnsemble(
        grid, int(seed), int(n_paths), terminal, snapshots=store
    )


def solve_stoch_wave(
    coef: CoefficientField,
    grid: Grid,
    data,
    velocity,
    seed: int,
    n_paths: int,
    keep: str = "all",
    path_chunk: int = 2048,
    c0: float = 1.0,
    forcing_drift=None,
    forcing_noise=None,
) -> StochasticEnsemble:
    """Ensemble solve of the stochastic wave equation
    dz_t = [div(p grad z) + conv . grad z + pot z - damping c0 z_t + f] dt
    + (noise_gain z + g) dB.

    The deterministic part is the implicit-midpoint step of solve_wave;
    the Ito increment is added to the velocity after the midpoint solve,
    so it influences the displacement from the next step on and noise off
    reproduces solve_wave exactly.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be at least 1, got {n_paths}")
    z0 = _initial_values(data, grid, "data")
    v0 = _initial_values(velocity, grid, "velocity")
    p = _diffusivity(coef, grid)
    conv = _convection_field(coef, grid)
    pot_static, pot_series = _potential_series(coef, grid)
    if pot_series is not None:
        raise ValueError("time-dependent potential is not supported in stochastic solves")
    gain = _node_field(coef.noise_gain, grid, "noise_gain")
    damping = _damping_field(coef, grid) * float(c0)
    f_drift = None if forcing_drift is None else _node_field(forcing_drift, grid, "forcing_drift")
    g_noise = None if forcing_noise is None else _node_field(forcing_noise, grid, "forcing_noise")

    dt = grid.dt
    quarter = 0.25 * dt * dt
    store = _ensemble_storage(grid, n_paths, keep, with_velocity=True)
    vstore = None if store is None else np.zeros_like(store)
    terminal = np.zeros((n_paths, grid.size))
    terminal_v = np.zeros((n_paths, grid.size))

    if grid.dim == 1:
        L = _assemble_1d(grid, p, conv, pot_static)
        ab0 = L.shifted(-quarter, None)
        ab0[1, :] += 0.5 * dt * damping
        matvec = L.matvec
        solve = lambda rhs: _tri_solve(ab0.copy(), rhs, "solve_stoch_wave")
    else:
        L = _assemble_2d(grid, p, conv, pot_static)
        eye = scipy.sparse.identity(grid.size, format="csr")
        M = eye + scipy.sparse.diags(0.5 * dt * damping) - quarter * L
        solve = _splu(M, "solve_stoch_wave").solve
        matvec = L.__matmul__

    for first in range(0, n_paths, path_chunk):
        count = min(path_chunk, n_paths - first)
        dB = _path_increments(seed, "pde.stoch_wave", first, count, grid.steps, dt)
        Z = np.tile(z0[:, None], (1, count))
        V = np.tile(v0[:, None], (1, count))
        if store is not None:
            store[first:first + count, 0, :] = Z.T
            vstore[first:first + count, 0, :] = V.T
        for k in range(grid.steps):
            rhs = V - 0.5 * dt * damping[:, None] * V + quarter * matvec(V) + dt * matvec(Z)
            if f_drift is not None:
                rhs += dt * f_drift[:, None]
            V_det = solve(rhs)
            # Ito convention: the noise coefficient uses the pre-step state
            kick = gain[:, None] * Z
            if g_noise is not None:
                kick = kick + g_noise[:, None]
            Z = Z + 0.5 * dt * (V + V_det)
            V = V_det + kick * dB[k][None, :]
            if store is not None:
                store[first:first + count, k + 1, :] = Z.T
                vstore[first:first + count, k + 1, :] = V.T
        terminal[first:first + count] = Z.T
        terminal_v[first:first + count] = V.T

    return StochasticEnsemble(
        grid, int(seed), int(n_paths), terminal,
        terminal_velocity=terminal_v, snapshots=store, velocity_snapshots=vstore,
    )


# ---------------------------------------------------------------------------
# trajectory export


def export_trajectory_csv(traj: Trajectory, path: str, every: int = 1) -> None:
    """Write (step, time, node index per axis, value) rows, thinned in time."""
    if every < 1:
        raise ValueError(f"every must be at least 1, got {every}")
    grid = traj.grid
    node_cols = ",".join(f"node{a + 1}" for a in range(grid.dim))
    if grid.dim == 1:
        idx = np.arange(1, grid.n[0] + 1)[:, None]
    else:
        i1, i2 = np.meshgrid(
            np.arange(1, grid.n[0] + 1), np.arange(1, grid.n[1] + 1), indexing="ij"
        )
        idx = np.column_stack([i1.ravel(), i2.ravel()])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"step,time,{node_cols},value\n")
        for k in range(0, traj.snapshots.shape[0], every):
            t = float(k * grid.dt)
            for j in range(grid.size):
                nodes = ",".join(str(int(v)) for v in idx[j])
                fh.write(f"{k},{t!r},{nodes},{float(traj.snapshots[k, j])!r}\n")


def write_trajectory_binary(traj: Trajectory, path: str) -> None:
    """Binary snapshot dump: header (dims, n, dt, steps), then row-major
    doubles; a velocity block of the same shape follows when present."""
    grid = traj.grid
    with open(path, "wb") as fh:
        np.array([grid.dim, *grid.n], dtype=np.int64).tofile(fh)
        np.array([grid.dt], dtype=np.float64).tofile(fh)
        np.array([traj.snapshots.shape[0] - 1], dtype=np.int64).tofile(fh)
        np.ascontiguousarray(traj.snapshots, dtype=np.float64).tofile(fh)
        if traj.velocities is not None:
            np.ascontiguousarray(traj.velocities, dtype=np.float64).tofile(fh)


def read_trajectory_binary(path: str, extents=1.0) -> Trajectory:
    """Read a write_trajectory_binary file back (extents are not stored)."""
    with open(path, "rb") as fh:
        dim = int(np.fromfile(fh, dtype=np.int64, count=1)[0])
        if dim not in (1, 2):
            raise ValueError(f"corrupt trajectory file: dim={dim}")
        n = tuple(int(v) for v in np.fromfile(fh, dtype=np.int64, count=dim))
        dt = float(np.fromfile(fh, dtype=np.float64, count=1)[0])
        steps = int(np.fromfile(fh, dtype=np.int64, count=1)[0])
        rest = np.fromfile(fh, dtype=np.float64)
    grid = Grid(dim, n, dt, steps, extents)
    block = (steps + 1) * grid.size
    if rest.size == block:
        return Trajectory(grid, rest.reshape(steps + 1, grid.size))
    if rest.size == 2 * block:
        return Trajectory(
            grid,
            rest[:block].reshape(steps + 1, grid.size),
            velocities=rest[block:].reshape(steps + 1, grid.size),
        )
    raise ValueError(
        f"corrupt trajectory file: {rest.size} doubles, expected {block} or {2 * block}"
    )
