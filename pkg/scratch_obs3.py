import numpy as np
import scipy.linalg

from ctrlobs import observability as obs, pde

grid = pde.Grid(1, 60, 1e-3, 50)
mask = pde.box_mask(grid, (0.3, 0.6))

for kap in [0.0, 5.0, 10.0, 40.0]:
    coef = pde.CoefficientField(diffusivity=1.0, potential=kap)
    A, B = obs._heat_quotient(coef, grid, mask, "initial")
    delta = 1e-12 * np.trace(B) / B.shape[0]
    R = scipy.linalg.cholesky(B + delta * np.eye(B.shape[0]))
    Rinv = scipy.linalg.solve_triangular(R, np.eye(B.shape[0]), lower=False)
    C = Rinv.T @ A @ Rinv
    w = scipy.linalg.eigvalsh(0.5 * (C + C.T))
    print("kappa", kap, "top6:", ["%.8g" % x for x in w[-6:]])
    print("    gap ratio lam2/lam1 = %.10f" % (w[-2] / w[-1]), " delta %.3e" % delta)
