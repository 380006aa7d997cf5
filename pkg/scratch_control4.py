import math
import time
import warnings

import numpy as np

from ctrlobs import control, pde
from ctrlobs.control import ControlError
from ctrlobs.pde import CoefficientField, Grid

for dt, steps in ((2.5e-3, 1000), (1.25e-3, 2000), (6.25e-4, 4000)):
    g = Grid(1, 100, dt, steps)
    geo = control.make_control_geometry(g, -0.1, 0.15, 2.5)
    y0 = pde.sine_mode(g, 1)
    v0 = np.zeros(g.size)
    init_norm = control._pair_energy_norm(g, CoefficientField(), y0, v0)
    for tol in (1e-3, 2e-4):
        t0 = time.time()
        try:
            res = control.hum_exact_control_wave(
                CoefficientField(), g, geo, (y0, v0),
                (np.zeros(g.size), np.zeros(g.size)), cg_tol=tol, max_iter=500,
            )
            print(f"dt {dt:.2e} tol {tol:.0e}: iters {res.cg_iterations} "
                  f"cg_res {res.cg_residual:.2e} steer_rel {res.terminal_residual/init_norm:.3e} "
                  f"cost {res.cost:.2f} [{time.time()-t0:.0f}s]")
        except ControlError as e:
            print(f"dt {dt:.2e} tol {tol:.0e}: STALL best {e.residual:.3e} "
                  f"iters {e.iterations} [{time.time()-t0:.0f}s]")
