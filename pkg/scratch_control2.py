import math
import time
import warnings

import numpy as np

from ctrlobs import control, pde
from ctrlobs.control import ControlError, LinearODE
from ctrlobs.pde import CoefficientField, Grid

# seed scan for rank/gramian equivalence margins
def scan(seed):
    rng = np.random.default_rng(seed)
    lam_ctrl, lam_unctrl = [], []
    for trial in range(100):
        n = int(rng.integers(2, 6))
        if trial % 2 == 0:
            A = rng.standard_normal((n, n))
            B = rng.standard_normal((n, 1))
            full = True
        else:
            k = int(rng.integers(1, n))
            A = np.zeros((n, n))
            A[:k, :k] = rng.standard_normal((k, k))
            A[k:, k:] = rng.standard_normal((n - k, n - k))
            B = np.zeros((n, 1))
            B[:k] = rng.standard_normal((k, 1))
            Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
            A = Q @ A @ Q.T
            B = Q @ B
            full = False
        sys = LinearODE(A, B)
        r = control.kalman_rank(sys)
        lam = np.linalg.eigvalsh(control.controllability_gramian(sys, 1.0))[0]
        if r == n:
            lam_ctrl.append(lam)
        else:
            lam_unctrl.append(abs(lam))
        if full != (r == n):
            return None  # rank itself disagreed with construction
    return min(lam_ctrl), max(lam_unctrl)

for seed in (77, 5, 11, 23, 1234, 2024):
    out = scan(seed)
    print("seed", seed, "->", out)
