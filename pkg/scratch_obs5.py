import math
import time

import numpy as np
import scipy.linalg

from ctrlobs import control, observability as obs, pde, rng

coef = pde.CoefficientField(diffusivity=1.0)


def make(n, dt, steps, eps=0.15):
    grid = pde.Grid(1, n, dt, steps)
    geo = control.make_control_geometry(grid, (-0.1,), eps, grid.T)
    return grid, geo


# --- dual route: assembled forms vs actual wave solve ---
grid, geo = make(60, 5e-3, 200)  # T = 1.0
A, B, _ = obs._wave_quotient(coef, grid, geo, "interior", False)
K = obs._stiffness_matrix(grid, pde._diffusivity(coef, grid))
cho = scipy.linalg.cho_factor(K)
vol = grid.cell_volume
gen = rng.stream(3, "scratch", 0)
worst_a = worst_b = 0.0
for _ in range(4):
    u0 = gen.standard_normal(grid.size)
    v0 = gen.standard_normal(grid.size)
    xi = np.concatenate([u0, v0])
    traj = pde.solve_wave(coef, grid, u0, v0)
    low2 = vol * float(u0 @ u0) + vol * vol * float(v0 @ scipy.linalg.cho_solve(cho, v0))
    mid = 0.5 * (traj.snapshots[:-1] + traj.snapshots[1:]) * geo.omega[None, :]
    den = grid.dt * vol * float(np.sum(mid**2))
    worst_a = max(worst_a, abs(float(xi @ (A @ xi)) - low2) / low2)
    worst_b = max(worst_b, abs(float(xi @ (B @ xi)) - den) / den)
print("wave dual-route interior: relA", worst_a, "relB", worst_b)

A3, B3, _ = obs._wave_quotient(coef, grid, geo, "boundary_trace", False)
worst_a = worst_b = 0.0
for _ in range(4):
    u0 = gen.standard_normal(grid.size)
    v0 = gen.standard_normal(grid.size)
    xi = np.concatenate([u0, v0])
    traj = pde.solve_wave(coef, grid, u0, v0)
    en2 = 2.0 * pde.wave_energy(traj, coef)[0]
    tr = traj.snapshots[:, -1] / grid.h[0]
    mid = 0.5 * (tr[:-1] + tr[1:])
    den = grid.dt * float(np.sum(mid**2))
    worst_a = max(worst_a, abs(float(xi @ (A3 @ xi)) - en2) / en2)
    worst_b = max(worst_b, abs(float(xi @ (B3 @ xi)) - den) / den)
print("wave dual-route boundary trace: relA", worst_a, "relB", worst_b)

# --- refinement sweeps ---
for label, steps, dt in [("T=1.0 < T*", 400, 2.5e-3), ("T=2.5 > T*", 1000, 2.5e-3)]:
    cs = {}
    for n in (50, 100, 200):
        grid, geo = make(n, dt, steps)
        t0 = time.time()
        est = obs.obs_constant_wave(coef, grid, geo)
        cs[n] = est
        print(label, "n=%d" % n, "C=%.6g" % est.constant, "iters", est.iterations,
              "res %.2e" % est.residual, "%.1fs" % (time.time() - t0))
    print("   ratio C(200)/C(50) = %.3f  C(200)/C(100) = %.3f"
          % (cs[200].constant / cs[50].constant, cs[200].constant / cs[100].constant))

# --- time reversal (T > T*, n=100) ---
grid, geo = make(100, 2.5e-3, 1000)
t0 = time.time()
fwd = obs.obs_constant_wave(coef, grid, geo)
rev = obs.obs_constant_wave(coef, grid, geo, time_reversed=True)
print("time reversal: fwd %.8g rev %.8g rel %.3e (%.1fs)"
      % (fwd.constant, rev.constant, abs(fwd.constant - rev.constant) / fwd.constant,
         time.time() - t0))

# --- boundary trace constant (T > T*) ---
for n in (50, 100, 200):
    grid, geo = make(n, 2.5e-3, 1000)
    est_tr = obs.obs_constant_wave(coef, grid, geo, observation="boundary_trace")
    print("boundary trace n=%d T=2.5: C=%.6g iters %d res %.2e"
          % (n, est_tr.constant, est_tr.iterations, est_tr.residual))

# --- omega = G ---
grid2 = pde.Grid(1, 60, 2.5e-3, 1000)
geoG = control.make_control_geometry(grid2, (-0.1,), 1.5, grid2.T)
estG = obs.obs_constant_wave(coef, grid2, geoG)
xi = np.concatenate([estG.maximizer.values, estG.maximizer_velocity.values])
AG, _unused, _ = obs._wave_quotient(coef, grid2, geoG, "interior", False)
print("omega=G: C=%.6g, maximizer norm = %.12f, above_critical %s"
      % (estG.constant, math.sqrt(xi @ (AG @ xi)), estG.above_critical_time))

# --- eigen-residual of returned maximizer (clean case, filtered coords) ---
grid, geo = make(100, 2.5e-3, 1000)
est = obs.obs_constant_wave(coef, grid, geo)
print("wave T>T* n=100 reported residual:", est.residual, "iters", est.iterations)
