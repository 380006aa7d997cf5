import math
import time

import numpy as np

from ctrlobs import control, observability as obs, pde

t0 = time.time()

# --- LR closed forms ---
spec = obs.lr_gram_constant((0.0, 1.0), n_modes=5)
print("full-domain gram == I:", np.max(np.abs(spec.gram - np.eye(5))), "const", spec.constant)

spec = obs.lr_gram_constant((0.0, 0.5), n_modes=2)
print("omega=(0,0.5) modes{1,2} gram:\n", spec.gram)
print("expected offdiag 4/(3pi) =", 4 / (3 * math.pi))
lam_exact = 0.5 - 4 / (3 * math.pi)
print("lambda_min", spec.lambda_min, "exact", lam_exact, "diff", abs(spec.lambda_min - lam_exact))

# strict decrease up to 30 modes
prev = math.inf
ok = True
lams = []
for k in range(1, 31):
    s = obs.lr_gram_constant((0.2, 0.4), n_modes=k)
    lams.append(s.lambda_min)
    if not (s.lambda_min < prev or k == 1):
        ok = False
    if s.lambda_min <= 0:
        ok = False
    prev = s.lambda_min
print("strict decrease to 30 modes:", ok, "lam[0]", lams[0], "lam[9]", lams[9], "lam[19]", lams[19], "lam[29]", lams[29])
print("escalation kicked in at k where lam < 1e-12*lmax:")
s40 = obs.lr_gram_constant((0.2, 0.4), n_modes=40)
print("lam(40 modes) =", s40.lambda_min, " logC =", math.log(s40.constant))
print("LR time", time.time() - t0)

# growth fit 1D: r over first 40 modes
t0 = time.time()
rvals = [(math.pi * k) ** 2 for k in range(1, 41)]
fit = obs.lr_growth_fit((0.2, 0.4), rvals)
print("1D growth fit:", fit)
print("fit time", time.time() - t0)

# omega = G slope ~ 0
fitG = obs.lr_growth_fit((0.0, 1.0), [(math.pi * k) ** 2 for k in (1, 2, 3, 4, 5)])
print("full-domain fit:", fitG)

# 2D fit, mu <= 800
t0 = time.time()
mus = sorted({math.pi**2 * (i * i + j * j) for i in range(1, 10) for j in range(1, 10) if math.pi**2 * (i*i + j*j) <= 800})
print("2D cutoffs count:", len(mus))
fit2 = obs.lr_growth_fit(((0.2, 0.4), (0.2, 0.4)), mus)
print("2D growth fit:", fit2, "time", time.time() - t0)
