import math
import time
import warnings

import numpy as np

from ctrlobs import control, pde
from ctrlobs.control import ControlError
from ctrlobs.pde import CoefficientField, Grid

# T=1.0 < T*=2.2 plateau, same dt as the converging case
t0 = time.time()
g_short = Grid(1, 100, 6.25e-4, 1600)
geo_short = control.make_control_geometry(g_short, -0.1, 0.15, 1.0)
y0s = pde.sine_mode(g_short, 1)
with warnings.catch_warnings(record=True) as wlist:
    warnings.simplefilter("always")
    try:
        res = control.hum_exact_control_wave(
            CoefficientField(), g_short, geo_short, (y0s, np.zeros(g_short.size)),
            (np.zeros(g_short.size), np.zeros(g_short.size)), cg_tol=2e-4, max_iter=500,
        )
        print("T=1.0 converged unexpectedly:", res.cg_residual)
    except ControlError as e:
        print(f"T=1.0: best plateau {e.residual:.3e} after {e.iterations} its, "
              f"warned={len(wlist)>0} [{time.time()-t0:.0f}s]")

# semilinear r=0 equivalence
t0 = time.time()
g = Grid(1, 60, 2e-3, 200)
y0 = pde.sine_mode(g, 1)
lin = control.hum_null_control_heat(
    CoefficientField(potential=1.0), g, (0.3, 0.6), y0, epsilon=1e-8)
sem = control.semilinear_null_control(
    CoefficientField(), g, (0.3, 0.6), y0, r_exponent=0.0, sign=-1, epsilon=1e-8)
d = np.max(np.abs(sem.control.snapshots - lin.control.snapshots))
s = np.max(np.abs(lin.control.snapshots))
print(f"r=0 focusing: control diff rel {d/s:.2e} outers {len(sem.outer_history)} "
      f"resid {sem.terminal_residual:.2e} [{time.time()-t0:.0f}s]")

lin2 = control.hum_null_control_heat(
    CoefficientField(potential=-1.0), g, (0.3, 0.6), y0, epsilon=1e-8)
sem2 = control.semilinear_null_control(
    CoefficientField(), g, (0.3, 0.6), y0, r_exponent=0.0, sign=1, epsilon=1e-8)
d2 = np.max(np.abs(sem2.control.snapshots - lin2.control.snapshots))
print(f"r=0 defocusing: control diff rel {d2/np.max(np.abs(lin2.control.snapshots)):.2e}")

# trivial y0 = 0
sem0 = control.semilinear_null_control(
    CoefficientField(), g, (0.3, 0.6), np.zeros(g.size), r_exponent=1.2)
print("y0=0:", len(sem0.outer_history), sem0.terminal_residual,
      np.max(np.abs(sem0.control.snapshots)))

# r=1.2, A=2000: uncontrolled blows, controlled avoids
t0 = time.time()
g_un = Grid(1, 99, 1e-3, 3000)
y0_un = 2000.0 * pde.sine_mode(g_un, 1)
free = pde.solve_semilinear_heat(CoefficientField(), g_un, y0_un, r_exponent=1.2, sign=-1)
print(f"uncontrolled A=2000 r=1.2: blown={free.blown_up} at t="
      f"{(free.blowup_step or 0)*g_un.dt:.2f} [{time.time()-t0:.0f}s]")

t0 = time.time()
g_c = Grid(1, 60, 2e-3, 200)  # T = 0.4
y0_c = 2000.0 * pde.sine_mode(g_c, 1)
try:
    res = control.semilinear_null_control(
        CoefficientField(), g_c, (0.3, 0.6), y0_c, r_exponent=1.2, sign=-1,
        epsilon=1e-8, outer_tol=1e-6, max_outer=20)
    rel = res.terminal_residual / pde.l2_norm(g_c, y0_c)
    print(f"controlled: rel {rel:.3e} outers {len(res.outer_history)} "
          f"history tail {['%.1e' % h for h in res.outer_history[-3:]]} "
          f"cost {res.cost:.1f} [{time.time()-t0:.0f}s]")
except ControlError as e:
    print("controlled FAILED:", e, e.history, f"[{time.time()-t0:.0f}s]")
