import math
import time

import numpy as np
import scipy.linalg

from ctrlobs import control, observability as obs, pde, rng

grid = pde.Grid(1, 60, 1e-3, 50)  # T = 0.05
coef = pde.CoefficientField(diffusivity=1.0)


def eigh_oracle(A, B, delta):
    Breg = B + delta * np.eye(B.shape[0])
    R = scipy.linalg.cholesky(Breg)
    Rinv = scipy.linalg.solve_triangular(R, np.eye(B.shape[0]), lower=False)
    C = Rinv.T @ A @ Rinv
    return float(scipy.linalg.eigvalsh(0.5 * (C + C.T))[-1])


# --- dual route: assembled quotient forms vs actual solver runs ---
mask = pde.box_mask(grid, (0.3, 0.6))
A, B = obs._heat_quotient(coef, grid, mask, "terminal")
gen = rng.stream(1, "scratch", 0)
worst_a = worst_b = 0.0
for _ in range(5):
    z0 = gen.standard_normal(grid.size)
    traj = pde.solve_heat(coef, grid, z0)
    num = pde.l2_norm(grid, traj.snapshots[-1]) ** 2
    mid = 0.5 * (traj.snapshots[:-1] + traj.snapshots[1:]) * mask[None, :]
    den = grid.dt * grid.cell_volume * float(np.sum(mid**2))
    worst_a = max(worst_a, abs(float(z0 @ (A @ z0)) - num) / num)
    worst_b = max(worst_b, abs(float(z0 @ (B @ z0)) - den) / den)
print("dual-route terminal: relA", worst_a, "relB", worst_b)

A2, B2 = obs._heat_quotient(coef, grid, mask, "initial")
worst_a = worst_b = 0.0
for _ in range(5):
    zT = gen.standard_normal(grid.size)
    traj = pde.solve_heat(coef, grid, zT, direction="backward")
    num = pde.l2_norm(grid, traj.snapshots[0]) ** 2
    mid = 0.5 * (traj.snapshots[:-1] + traj.snapshots[1:]) * mask[None, :]
    den = grid.dt * grid.cell_volume * float(np.sum(mid**2))
    worst_a = max(worst_a, abs(float(zT @ (A2 @ zT)) - num) / num)
    worst_b = max(worst_b, abs(float(zT @ (B2 @ zT)) - den) / den)
print("dual-route initial: relA", worst_a, "relB", worst_b)

# --- constants, iterate vs eigh oracle ---
t0 = time.time()
est_full = obs.obs_constant_heat(coef, grid, (0.0, 1.0), mode="initial")
print("omega=G initial:", est_full.constant, "iters", est_full.iterations,
      "reg %.3e" % est_full.regularization, "time %.2f" % (time.time() - t0))
print("   sqrt(1/T) heuristic:", math.sqrt(1 / grid.T))

regions = [(0.05, 0.95), (0.1, 0.9), (0.15, 0.85), (0.2, 0.8), (0.25, 0.75),
           (0.3, 0.7), (0.32, 0.68), (0.35, 0.65), (0.38, 0.62), (0.4, 0.6), (0.42, 0.58)]
consts = []
t0 = time.time()
for reg_b in regions:
    e = obs.obs_constant_heat(coef, grid, reg_b, mode="initial")
    m = pde.box_mask(grid, reg_b)
    Ar, Br = obs._heat_quotient(coef, grid, m, "initial")
    lam_o = eigh_oracle(Ar, Br, e.regularization)
    consts.append((e.constant, e.iterations, abs(e.constant - math.sqrt(lam_o)) / e.constant))
print("nested chain (const, iters, rel-vs-eigh):")
for reg_b, c in zip(regions, consts):
    print("   ", reg_b, "%.6g" % c[0], c[1], "%.2e" % c[2])
vals = [c[0] for c in consts]
print("monotone:", all(vals[i] <= vals[i + 1] for i in range(len(vals) - 1)),
      "all > full:", all(v > est_full.constant for v in vals),
      "time %.2f" % (time.time() - t0))

e_term = obs.obs_constant_heat(coef, grid, (0.3, 0.6), mode="terminal")
print("terminal (0.3,0.6):", e_term.constant, "iters", e_term.iterations)

# --- maximizer eigen-residual in original pencil coordinates ---
est = obs.obs_constant_heat(coef, grid, (0.3, 0.6), mode="initial")
lam = est.constant**2
delta = est.regularization
m = pde.box_mask(grid, (0.3, 0.6))
Ar, Br = obs._heat_quotient(coef, grid, m, "initial")
Breg = Br + delta * np.eye(grid.size)
v = est.maximizer.values
v = v / np.linalg.norm(v)
Mv = np.linalg.solve(Breg, Ar @ v)
res_orig = np.linalg.norm(Mv - lam * v)
res_pencil = np.linalg.norm(Ar @ v - lam * (Breg @ v)) / np.linalg.norm(Breg @ v)
print("initial (0.3,0.6): const", est.constant, "iters", est.iterations)
print("residual original-coord:", res_orig / lam, " pencil:", res_pencil / lam, "(rel to lam)")

# --- kappa sweep, potential +kappa ---
t0 = time.time()
kappas = [0.0, 5.0, 10.0, 20.0, 40.0]
cs = []
for kap in kappas:
    ck = pde.CoefficientField(diffusivity=1.0, potential=kap)
    e = obs.obs_constant_heat(ck, grid, (0.3, 0.6), mode="initial")
    cs.append(e.constant)
print("kappa sweep:", ["%.6g" % c for c in cs], "time %.2f" % (time.time() - t0))
xs = np.array(kappas) ** (2.0 / 3.0)
ys = np.log(np.array(cs))
c1, c0 = np.polyfit(xs, ys, 1)
fitted = c1 * xs + c0
print("fit c0 %.4f c1 %.4f rms %.4f" % (c0, c1, float(np.sqrt(np.mean((ys - fitted) ** 2)))))
print("r2", 1 - np.sum((ys - fitted) ** 2) / np.sum((ys - np.mean(ys)) ** 2))
