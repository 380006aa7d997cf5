"""Damped-wave experiments: energy trajectories and decay-law fits.

The midpoint wave stepper removes a computable quadrature from the
discrete energy at every step (midpoint velocities against the damping
weights), so a damped linear run is non-increasing to round-off.  The
experiments here drive the solver, verify that monotonicity, fit decay
models on the tail half of the horizon, and report the fit quality.  No
continuum rate law is asserted: the fits are measurements.
"""
import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from . import pde
from .pde import CoefficientField, Grid, Trajectory

EXPONENTIAL = "exponential"
LOGARITHMIC = "logarithmic"

# fitted |rate| at or below this is indistinguishable from conservation
DISSIPATION_FLOOR = 1e-6


class StabilizationError(RuntimeError):
    """Raised when a damped run violates discrete energy monotonicity."""


@dataclass
class DecayFit:
    """One decay model fitted to an energy tail.

    model 'exponential' fits log E = log(M E(0)) - rate * t and stores
    rate; model 'logarithmic' fits sqrt(E) = C * sqrt(E(0)) / ln(2 + t)
    through the origin and stores C (the unquantified graph-norm factor
    of the underlying bound is proxied by E(0), which is documented
    rather than hidden).  r_squared is clamped to [0, 1]; a fit over a
    window with fewer than four positive energies is degenerate.
    """

    model: str
    rate_or_c: float
    r_squared: float
    window: tuple
    degenerate: bool = False


@dataclass
class StabilizationRun:
    """Energy series of one damped run plus tail fits.

    fits holds the exponential fit first; boundary experiments append
    the logarithmic fit.  dissipative is False when the fitted
    exponential rate is below the conservation floor.
    """

    times: np.ndarray
    energy: np.ndarray
    fits: tuple
    dissipative: bool
    trajectory: Trajectory


def _with_horizon(grid: Grid, horizon: Optional[float]) -> Grid:
    if horizon is None:
        return grid
    if horizon <= 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    steps = int(round(horizon / grid.dt))
    if steps < 4 or abs(steps * grid.dt - horizon) > 1e-9 * horizon:
        raise ValueError(
            f"horizon {horizon} is not a multiple (>= 4) of dt {grid.dt}")
    return grid.with_time(grid.dt, steps)


def _default_data(grid: Grid):
    return pde.sine_mode(grid, (1,) * grid.dim), np.zeros(grid.size)


def matched_packet(grid: Grid, center: float = 0.3, width: float = 0.08):
    """Rightward-travelling Gaussian pair (u0, v0 = -u0_x) on (0, 1).

    With unit diffusivity the packet reaches the right endpoint in one
    transit; a gain-1 Robin end there absorbs it up to the discrete
    dispersion and tail-clipping remnants.
    """
    if grid.dim != 1:
        raise ValueError("matched_packet is defined on 1-d grids")
    x = grid.axis_nodes(0)
    u0 = np.exp(-(((x - center) / width) ** 2))
    v0 = 2.0 * (x - center) / width**2 * u0
    return u0, v0


def dissipation_series(traj: Trajectory, coef: CoefficientField,
                       c0: float = 1.0, boundary_gain=0.0) -> np.ndarray:
    """Per-step damping quadrature the midpoint scheme removes.

    Entry k is dt * (vol * sum_i b_i c0 vmid_i^2 + sum_ends a vmid_end^2)
    with vmid the step's velocity midpoint; for the linear schemes this
    equals E(t_k) - E(t_{k+1}) to round-off.
    """
    grid = traj.grid
    if traj.velocities is None:
        raise ValueError("dissipation_series needs stored velocities")
    b = np.zeros(grid.size)
    if traj.boundary_velocities is not None or coef.damping is not None:
        if coef.damping is not None:
            b = pde._damping_field(coef, grid) * float(c0)
    vmid = 0.5 * (traj.velocities[:-1] + traj.velocities[1:])
    out = grid.dt * grid.cell_volume * (vmid**2 @ b)
    if traj.boundary_velocities is not None:
        gains = np.asarray(pde._boundary_gains(boundary_gain, grid.dim))
        bmid = 0.5 * (traj.boundary_velocities[:-1]
                      + traj.boundary_velocities[1:])
        out = out + grid.dt * (bmid**2 @ gains)
    return out


def _check_monotone(times: np.ndarray, energy: np.ndarray,
                    slack: float) -> None:
    e0 = float(energy[0])
    rises = np.diff(energy)
    worst = float(np.max(rises, initial=0.0))
    if worst > slack * max(e0, 1e-300):
        k = int(np.argmax(rises))
        raise StabilizationError(
            f"energy rose by {worst:.3e} at t={times[k + 1]:.6g} "
            f"(allowed {slack:.1e} of E(0)={e0:.3e})")


def _fit_exponential(times: np.ndarray, energy: np.ndarray,
                     window: tuple) -> DecayFit:
    keep = energy > 0.0
    if np.count_nonzero(keep) < 4:
        return DecayFit(EXPONENTIAL, 0.0, 0.0, window, degenerate=True)
    t = times[keep]
    y = np.log(energy[keep])
    slope, intercept = np.polyfit(t, y, 1)
    fitted = slope * t + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return DecayFit(EXPONENTIAL, float(-slope), max(0.0, min(1.0, r2)),
                    window)


def _fit_logarithmic(times: np.ndarray, energy: np.ndarray, e0: float,
                     window: tuple) -> DecayFit:
    keep = energy > 0.0
    if np.count_nonzero(keep) < 4 or e0 <= 0.0:
        return DecayFit(LOGARITHMIC, 0.0, 0.0, window, degenerate=True)
    x = 1.0 / np.log(2.0 + times[keep])
    y = np.sqrt(energy[keep])
    scale = float(x @ y) / float(x @ x)
    fitted = scale * x
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return DecayFit(LOGARITHMIC, scale / math.sqrt(e0),
                    max(0.0, min(1.0, r2)), window)


def _tail(times: np.ndarray, energy: np.ndarray):
    lo = times >= 0.5 * times[-1]
    return times[lo], energy[lo], (float(times[lo][0]), float(times[-1]))


def _run_fits(times, energy, want_logarithmic: bool):
    e0 = float(energy[0])
    t_tail, e_tail, window = _tail(times, energy)
    if e0 == 0.0:
        fits = [DecayFit(EXPONENTIAL, 0.0, 0.0, window, degenerate=True)]
        if want_logarithmic:
            fits.append(DecayFit(LOGARITHMIC, 0.0, 0.0, window,
                                 degenerate=True))
        return tuple(fits), False
    fits = [_fit_exponential(t_tail, e_tail, window)]
    if want_logarithmic:
        fits.append(_fit_logarithmic(t_tail, e_tail, e0, window))
    dissipative = (not fits[0].degenerate
                   and fits[0].rate_or_c > DISSIPATION_FLOOR)
    return tuple(fits), dissipative


def boundary_damping_experiment(coef: CoefficientField, grid: Grid,
                                a_gain, horizon: Optional[float] = None,
                                data=None,
                                velocity=None) -> StabilizationRun:
    """Robin-damped wave run with both decay models fitted on the tail.

    a_gain is the endpoint gain (scalar acts on the right end, pair on
    both); zero gain keeps the Dirichlet wall, so the run is conservative
    and flagged non-dissipative.  The energy series must be non-increasing
    to round-off, which is checked, and both an exponential and a
    logarithmic fit of the tail half are returned; which one wins is
    reported through r_squared, never asserted.
    """
    gains = pde._boundary_gains(a_gain, grid.dim)
    if min(gains) < 0.0:
        raise ValueError(f"boundary gains must be nonnegative, got {gains}")
    grid = _with_horizon(grid, horizon)
    u0, v0 = _data_pair(grid, data, velocity)
    traj = pde.solve_wave(coef, grid, u0, v0,
                          damping_mode="boundary", boundary_gain=gains)
    energy = pde.wave_energy(traj, coef)
    times = traj.times
    _check_monotone(times, energy, 1e-11)
    fits, dissipative = _run_fits(times, energy, want_logarithmic=True)
    return StabilizationRun(times, energy, fits, dissipative, traj)


def _resolve_nonlinearity(f_nonlinearity, dim: int):
    if f_nonlinearity is None:
        return None
    if callable(f_nonlinearity):
        return f_nonlinearity
    q, coeff = f_nonlinearity
    q = float(q)
    coeff = float(coeff)
    if q < 1.0:
        raise ValueError(f"nonlinearity exponent must be >= 1, got {q}")
    if coeff < 0.0:
        raise ValueError(
            f"nonlinearity coefficient must be >= 0 (s f(s) >= 0), got {coeff}")
    if (dim - 2) * q > 2.0:
        raise ValueError(
            f"exponent {q} violates the growth restriction in dimension {dim}")

    def f(u):
        return coeff * np.abs(u) ** (q - 1.0) * u

    return f


def local_damping_experiment(coef: CoefficientField, grid: Grid, b_profile,
                             c0: float = 1.0, f_nonlinearity=None,
                             horizon: Optional[float] = None, data=None,
                             velocity=None) -> StabilizationRun:
    """Interior-damped wave run with an exponential fit on the tail.

    b_profile is the damping weight field (b >= 0); the damping term is
    b(x) * c0 * u_t, the linear representative of the admissible class.
    f_nonlinearity is either a callable f(u) or a pair (q, coeff) for
    coeff |u|^(q-1) u; the energy then includes the potential integral.
    b = 0 runs conservative and is flagged non-dissipative.
    """
    if c0 <= 0.0:
        raise ValueError(f"c0 must be positive, got {c0}")
    grid = _with_horizon(grid, horizon)
    b = pde._node_field(b_profile, grid, "damping profile")
    if np.min(b) < 0.0:
        raise ValueError("damping profile must be nonnegative")
    f = _resolve_nonlinearity(f_nonlinearity, grid.dim)
    coef = dataclasses.replace(coef, damping=b)
    traj = pde.solve_wave(coef, grid, *_data_pair(grid, data, velocity),
                          damping_mode="interior", c0=c0, nonlinearity=f)
    energy = pde.wave_energy(traj, coef, nonlinearity=f)
    times = traj.times
    _check_monotone(times, energy, 1e-11 if f is None else 1e-8)
    fits, dissipative = _run_fits(times, energy, want_logarithmic=False)
    return StabilizationRun(times, energy, fits, dissipative, traj)


def _data_pair(grid: Grid, data, velocity):
    if data is None:
        u0, v0 = _default_data(grid)
        return u0, (v0 if velocity is None else velocity)
    return data, (np.zeros(grid.size) if velocity is None else velocity)
