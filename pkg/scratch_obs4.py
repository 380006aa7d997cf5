import numpy as np
import scipy.linalg

from ctrlobs import control, observability as obs, pde, rng

coef = pde.CoefficientField(diffusivity=1.0)
grid = pde.Grid(1, 200, 2.5e-3, 400)  # T = 1.0
geo = control.make_control_geometry(grid, (-0.1,), 0.15, grid.T)
A, B, P = obs._wave_quotient(coef, grid, geo, "interior", False, 0.1)
print("filtered dim:", A.shape[0])
delta = 1e-12 * np.trace(B) / B.shape[0]
print("delta %.3e  |B| %.3e  eigB min/max %.3e %.3e"
      % (delta, np.linalg.norm(B, 2), *np.linalg.eigvalsh(B)[[0, -1]]))

Breg = B + delta * np.eye(B.shape[0])
R = scipy.linalg.cholesky(Breg)
Rinv = scipy.linalg.solve_triangular(R, np.eye(B.shape[0]), lower=False)
C = Rinv.T @ A @ Rinv
w = scipy.linalg.eigvalsh(0.5 * (C + C.T))
print("eigh top8:", ["%.6g" % x for x in w[-8:]])
print("gap ratios:", ["%.8f" % (w[-k - 1] / w[-1]) for k in range(1, 6)])


def quotient_apply(X):
    Z = scipy.linalg.solve_triangular(R, X, lower=False)
    Z = A @ Z
    return scipy.linalg.solve_triangular(R, Z, trans="T", lower=False)


X = np.linalg.qr(rng.stream(0, "observability.power", 1).standard_normal((A.shape[0], 8)))[0]
lam = None
for it in range(1, 61):
    Z = quotient_apply(X)
    H = 0.5 * (X.T @ Z + Z.T @ X)
    vals, vecs = scipy.linalg.eigh(H)
    lam_new = float(vals[-1])
    xhat = X @ vecs[:, -1]
    res = np.linalg.norm(Z @ vecs[:, -1] - lam_new * xhat)
    if it < 12 or it % 10 == 0:
        print(it, "lam %.10g" % lam_new, "res/lam %.3e" % (res / lam_new),
              "settle %.2e" % (abs(lam_new - lam) / lam_new if lam else float("nan")))
    X = np.linalg.qr(Z)[0]
    lam = lam_new
