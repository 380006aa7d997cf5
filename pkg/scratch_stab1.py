import time

import numpy as np

from ctrlobs import pde, stabilization as stab
from ctrlobs.pde import CoefficientField, Grid

coef = CoefficientField(diffusivity=1.0)

# --- zero gain conserves energy over 1e4 steps ---
g = Grid(1, 100, 1.2e-3, 10000)
t0 = time.time()
run0 = stab.boundary_damping_experiment(coef, g, 0.0)
drift = np.max(np.abs(run0.energy - run0.energy[0])) / run0.energy[0]
print("a=0: drift %.3e dissipative %s rate %.3e (%.1fs)"
      % (drift, run0.dissipative, run0.fits[0].rate_or_c, time.time() - t0))

# --- generic boundary damping a=1, default sine data, H=12 ---
g = Grid(1, 200, 2.5e-3, 4800)
t0 = time.time()
run1 = stab.boundary_damping_experiment(coef, g, 1.0, horizon=12.0)
exp_fit, log_fit = run1.fits
print("a=1 sine: r=%.6g r2=%.6g | log C=%.4g r2=%.4g | dissip %s (%.1fs)"
      % (exp_fit.rate_or_c, exp_fit.r_squared, log_fit.rate_or_c,
         log_fit.r_squared, run1.dissipative, time.time() - t0))
print("   window", exp_fit.window, "E(0)=%.4g E(T)=%.4g" % (run1.energy[0], run1.energy[-1]))

# --- matched packet extinction ---
for n, dt in [(200, 2.5e-3), (400, 1.25e-3)]:
    g = Grid(1, n, dt, int(round(4.0 / dt)))
    u0, v0 = stab.matched_packet(g)
    t0 = time.time()
    run2 = stab.boundary_damping_experiment(coef, g, 1.0, data=u0, velocity=v0)
    times = run2.times
    tail = run2.energy[times >= 2.5] / run2.energy[0]
    print("packet n=%d: max E(t>=2.5)/E0 = %.3e  E(1.5)/E0 = %.3e (%.1fs)"
          % (n, float(np.max(tail)),
             float(run2.energy[np.searchsorted(times, 1.5)] / run2.energy[0]),
             time.time() - t0))

# --- dissipation identity per step (boundary) ---
g = Grid(1, 100, 2.5e-3, 400)
run3 = stab.boundary_damping_experiment(coef, g, 0.7)
diss = stab.dissipation_series(run3.trajectory, coef, boundary_gain=0.7)
dE = run3.energy[:-1] - run3.energy[1:]
rel = np.abs(dE - diss) / np.maximum(np.abs(dE), 1e-300)
mask = diss > 1e-14 * run3.energy[0]
print("boundary dissipation identity: max rel %.3e over %d live steps"
      % (float(np.max(rel[mask])), int(np.sum(mask))))

# --- local damping b = chi_(0.6,1), c0=1, H=30 ---
g = Grid(1, 100, 5e-3, 6000)
b = pde.box_mask(g, (0.6, 1.0)).astype(float)
t0 = time.time()
run4 = stab.local_damping_experiment(coef, g, b, c0=1.0, horizon=30.0)
fit4 = run4.fits[0]
print("local linear: r=%.6g r2=%.8g dissip %s (%.1fs)"
      % (fit4.rate_or_c, fit4.r_squared, run4.dissipative, time.time() - t0))

# --- dissipation identity per step (interior) ---
g5 = Grid(1, 100, 5e-3, 400)
run5 = stab.local_damping_experiment(coef, g5, b, c0=1.3)
coef_b = CoefficientField(diffusivity=1.0, damping=b)
diss5 = stab.dissipation_series(run5.trajectory, coef_b, c0=1.3)
dE5 = run5.energy[:-1] - run5.energy[1:]
rel5 = np.abs(dE5 - diss5) / np.maximum(np.abs(dE5), 1e-300)
print("interior dissipation identity: max rel %.3e" % float(np.max(rel5)))

# --- b=0 conservative flagged ---
run6 = stab.local_damping_experiment(coef, g5, 0.0)
print("b=0: rate %.3e dissipative %s" % (run6.fits[0].rate_or_c, run6.dissipative))

# --- doubling data quadruples energy (linear) ---
g7 = Grid(1, 100, 5e-3, 400)
u0 = pde.sine_mode(g7, 1)
runA = stab.local_damping_experiment(coef, g7, b, data=u0)
runB = stab.local_damping_experiment(coef, g7, b, data=2.0 * u0)
ratio = runB.energy / np.maximum(runA.energy, 1e-300)
print("doubling: max |ratio-4| = %.3e" % float(np.max(np.abs(ratio - 4.0))))

# --- nonlinear u^3 small data vs linear rate ---
g8 = Grid(1, 100, 5e-3, 6000)
u0 = 0.05 * pde.sine_mode(g8, 1)
t0 = time.time()
lin = stab.local_damping_experiment(coef, g8, b, data=u0)
non = stab.local_damping_experiment(coef, g8, b, f_nonlinearity=(3, 1.0), data=u0)
print("nonlinear: lin r=%.6g non r=%.6g rel gap %.3g r2=%.4g (%.1fs)"
      % (lin.fits[0].rate_or_c, non.fits[0].rate_or_c,
         abs(non.fits[0].rate_or_c - lin.fits[0].rate_or_c) / lin.fits[0].rate_or_c,
         non.fits[0].r_squared, time.time() - t0))

# --- zero data degenerate ---
run9 = stab.local_damping_experiment(coef, g5, b, data=np.zeros(g5.size))
print("zero data: degenerate %s rate %.1f dissip %s"
      % (run9.fits[0].degenerate, run9.fits[0].rate_or_c, run9.dissipative))
