import time

from ctrlobs import control, observability as obs, pde


coef = pde.CoefficientField(diffusivity=1.0)


def make(n, dt, steps):
    grid = pde.Grid(1, n, dt, steps)
    geo = control.make_control_geometry(grid, (-0.1,), 0.15, grid.T)
    return grid, geo


for frac in (0.05, 0.075):
    print("=== filter_fraction", frac)
    for label, steps in [("T=1.0", 400), ("T=2.5", 1000)]:
        cs = {}
        for n in (50, 100, 200):
            grid, geo = make(n, 2.5e-3, steps)
            t0 = time.time()
            est = obs.obs_constant_wave(coef, grid, geo, filter_fraction=frac)
            cs[n] = est.constant
            print("  %s n=%d C=%.6g iters %d res %.2e %.1fs"
                  % (label, n, est.constant, est.iterations, est.residual,
                     time.time() - t0))
        print("  -> C(200)/C(50) = %.3f  C(200)/C(100) = %.3f"
              % (cs[200] / cs[50], cs[200] / cs[100]))
