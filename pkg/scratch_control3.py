import math
import time
import warnings

import numpy as np

from ctrlobs import control, pde
from ctrlobs.control import ControlError
from ctrlobs.pde import CoefficientField, Grid

# wave exact control, T=2.5 > T*=2.2
t0 = time.time()
g = Grid(1, 100, 2.5e-3, 1000)
geo = control.make_control_geometry(g, -0.1, 0.15, 2.5)
y0 = pde.sine_mode(g, 1)
v0 = np.zeros(g.size)
for tol in (1e-2, 5e-3, 1e-3, 1e-4):
    try:
        res = control.hum_exact_control_wave(
            CoefficientField(), g, geo, (y0, v0), (np.zeros(g.size), np.zeros(g.size)),
            cg_tol=tol, max_iter=500,
        )
        init_norm = control._pair_energy_norm(g, CoefficientField(), y0, v0)
        print(f"tol {tol:.0e}: iters {res.cg_iterations} cg_res {res.cg_residual:.2e} "
              f"steer rel {res.terminal_residual / init_norm:.3e} cost {res.cost:.3f} "
              f"[{time.time()-t0:.0f}s]")
    except ControlError as e:
        print(f"tol {tol:.0e}: STALLED resid {e.residual:.3e} iters {e.iterations}")

# below critical time
t1 = time.time()
g_short = Grid(1, 100, 2.5e-3, 400)  # T=1.0
geo_short = control.make_control_geometry(g_short, -0.1, 0.15, 1.0)
y0s = pde.sine_mode(g_short, 1)
with warnings.catch_warnings(record=True) as wlist:
    warnings.simplefilter("always")
    try:
        res = control.hum_exact_control_wave(
            CoefficientField(), g_short, geo_short, (y0s, np.zeros(g_short.size)),
            (np.zeros(g_short.size), np.zeros(g_short.size)), cg_tol=1e-3, max_iter=500,
        )
        print("T=1.0 unexpectedly converged:", res.cg_residual, res.cg_iterations)
    except ControlError as e:
        print(f"T=1.0: stalled at {e.residual:.3e} after {e.iterations} iters "
              f"(warning issued: {len(wlist) > 0}) [{time.time()-t1:.0f}s]")

# trivial zero-to-zero
res0 = control.hum_exact_control_wave(
    CoefficientField(), g, geo, (np.zeros(g.size), np.zeros(g.size)),
    (np.zeros(g.size), np.zeros(g.size)),
)
print("zero-to-zero:", res0.cg_iterations, np.max(np.abs(res0.control.snapshots)))
