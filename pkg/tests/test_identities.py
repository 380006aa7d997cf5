"""Identity evaluators against trivial cases, sympy oracles, and convergence.

The sympy oracles are independent routes: they differentiate theta = exp(l)
and v = theta*z directly (no twisted-derivative expansion, no shared code
with the package) and evaluate at rational points in high precision.
"""
import math

import numpy as np
import pytest
import sympy as sp

from ctrlobs.identities import (
    DetIdentityInstance,
    StochIdentityInstance,
    brownian_increments,
    eval_det_identity,
    eval_multiplier_identity,
    eval_ode_identity,
    eval_stoch_hyperbolic_residual,
    eval_stoch_parabolic_residual,
    random_det_instance,
    random_stoch_instance,
    stoch_residual_slope,
    verify_identity_suite,
)
from ctrlobs.polyjet import ComplexPoly, MultiPoly, random_poly

T_SYM = sp.Symbol("t", real=True)
X_SYM = [sp.Symbol(f"x{i}", real=True) for i in range(1, 4)]


def to_sympy(p: MultiPoly):
    """Exact conversion: dyadic-grid coefficients become rationals."""
    syms = [T_SYM] + X_SYM[: p.dims - 1]
    expr = sp.Integer(0)
    for exps, c in p.terms.items():
        num = c * 2.0 ** 40
        assert num == int(num), "coefficient not exactly dyadic"
        mon = sp.Rational(int(num), 2 ** 40)
        for s, e in zip(syms, exps):
            mon *= s ** e
        expr += mon
    return expr


# --- ODE identity ----------------------------------------------------------


def test_ode_constant_path_zero_lambda():
    path = [MultiPoly.constant(1, 2.0), MultiPoly.constant(1, -1.0)]
    lhs, rhs = eval_ode_identity(0.0, path, 0.7)
    assert lhs == 0.0
    assert abs(rhs) <= 1e-15


def test_ode_linear_path_at_origin():
    # x(t) = (t), lam = 1: both sides vanish at t = 0
    lhs, rhs = eval_ode_identity(1.0, [MultiPoly.variable(1, 0)], 0.0)
    assert lhs == 0.0 and rhs == 0.0


def test_ode_random_cubic_r2():
    path = [random_poly(1, 3, 101), random_poly(1, 3, 102)]
    gen = np.random.default_rng(3)
    for t in gen.uniform(0.0, 1.0, 100):
        lhs, rhs = eval_ode_identity(2.5, path, float(t))
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


def test_ode_rejects_spatial_polys():
    with pytest.raises(ValueError):
        eval_ode_identity(1.0, [MultiPoly.constant(2, 1.0)], 0.0)


# --- multiplier identity -----------------------------------------------------


def test_multiplier_zero_z():
    h = [random_poly(3, 2, 7), random_poly(3, 2, 8)]
    lhs, rhs = eval_multiplier_identity(h, MultiPoly.zero(3), (0.1, 0.2, 0.3))
    assert lhs == 0.0 and rhs == 0.0


def test_multiplier_zero_h():
    z = random_poly(3, 3, 9)
    h = [MultiPoly.zero(3), MultiPoly.zero(3)]
    lhs, rhs = eval_multiplier_identity(h, z, (0.1, -0.2, 0.5))
    assert lhs == 0.0 and rhs == 0.0


def test_multiplier_random_m2():
    z = random_poly(3, 3, 201)
    h = [random_poly(3, 2, 202), random_poly(3, 2, 203)]
    gen = np.random.default_rng(11)
    for pt in gen.uniform(-1.0, 1.0, (200, 3)):
        lhs, rhs = eval_multiplier_identity(h, z, pt)
        assert abs(lhs - rhs) <= 1e-11 * max(abs(lhs), abs(rhs), 1.0)


def test_multiplier_dimension_mismatch():
    z = random_poly(3, 3, 204)
    with pytest.raises(ValueError):
        eval_multiplier_identity([random_poly(3, 2, 205)], z, (0, 0, 0))
    with pytest.raises(ValueError):
        eval_multiplier_identity(
            [random_poly(2, 2, 206), random_poly(2, 2, 207)], z, (0, 0, 0))


def test_multiplier_sympy_oracle():
    """Both sides must match an independent direct-differentiation route."""
    z = random_poly(3, 3, 211)
    h = [random_poly(3, 2, 212), random_poly(3, 2, 213)]
    zs = to_sympy(z)
    hs = [to_sympy(c) for c in h]
    xs = X_SYM[:2]
    zt = sp.diff(zs, T_SYM)
    grad = [sp.diff(zs, x) for x in xs]
    hdg = sum(hs[i] * grad[i] for i in range(2))
    lag = zt ** 2 - sum(g ** 2 for g in grad)
    lhs_s = sum(sp.diff(2 * hdg * grad[k] + hs[k] * lag, xs[k]) for k in range(2))
    box = sp.diff(zs, T_SYM, 2) - sum(sp.diff(zs, x, 2) for x in xs)
    rhs_s = (-2 * box * hdg + sp.diff(2 * zt * hdg, T_SYM)
             - 2 * zt * sum(sp.diff(hs[i], T_SYM) * grad[i] for i in range(2))
             + sum(sp.diff(hs[k], xs[k]) for k in range(2)) * lag
             + 2 * sum(sp.diff(hs[j], xs[i]) * grad[i] * grad[j]
                       for i in range(2) for j in range(2)))
    for pt in [(0.25, -0.5, 0.75), (0.1, 0.2, 0.3), (-0.8, 0.4, -0.6)]:
        subs = dict(zip([T_SYM] + xs, [sp.Rational(c).limit_denominator(100) for c in pt]))
        want_l = float(lhs_s.subs(subs).evalf(40))
        want_r = float(rhs_s.subs(subs).evalf(40))
        got_l, got_r = eval_multiplier_identity(h, z, pt)
        scale = max(abs(want_l), abs(want_r), 1.0)
        assert abs(got_l - want_l) <= 1e-11 * scale
        assert abs(got_r - want_r) <= 1e-11 * scale


# --- deterministic weighted identity ----------------------------------------


def small_det_instance_m1() -> DetIdentityInstance:
    # tiny exact-coefficient instance exercising every term group
    t, x1 = (1, 0), (0, 1)
    z = ComplexPoly(
        MultiPoly(2, {(0, 0): 0.5, t: 1.0, (1, 1): -0.75, (0, 2): 0.25}),
        MultiPoly(2, {t: 0.25, x1: -1.0, (2, 0): 0.5}),
    )
    ell = MultiPoly(2, {t: 0.5, x1: 1.0, (1, 1): 0.25})
    alpha = MultiPoly(2, {(0, 0): 1.0, x1: 0.5})
    beta = MultiPoly(2, {t: 1.0, x1: -0.5})
    b = [[MultiPoly(2, {(0, 0): 1.0, (0, 2): 0.5, t: 0.25})]]
    return DetIdentityInstance(1, z, ell, alpha, beta, b, 0.7, -0.3, 1.2)


def test_det_zero_z():
    inst = small_det_instance_m1()
    zero = DetIdentityInstance(1, ComplexPoly.zero(2), inst.ell, inst.alpha,
                               inst.beta, inst.b, 0.7, -0.3, 1.2)
    lhs, rhs, inter = eval_det_identity(zero, (0.3, -0.4))
    assert lhs == 0 and rhs == 0
    assert inter.I1 == 0 and inter.M == 0 and all(v == 0 for v in inter.V)


def test_det_sympy_oracle_m1():
    """LHS and RHS each match direct differentiation of exp(l)*z."""
    inst = small_det_instance_m1()
    t, x1 = T_SYM, X_SYM[0]
    a_p = sp.Rational(7, 10)
    b_p = sp.Rational(-3, 10)
    lam = sp.Rational(12, 10)
    zs = to_sympy(inst.z.re) + sp.I * to_sympy(inst.z.im)
    ell = to_sympy(inst.ell)
    al = to_sympy(inst.alpha)
    be = to_sympy(inst.beta)
    b00 = to_sympy(inst.b[0][0])
    b = [[b00]]
    m = 1
    xs = [x1]

    theta = sp.exp(ell)
    v = theta * zs
    vb = sp.conjugate(v)
    d = sp.diff
    dx = lambda e, j: sp.diff(e, xs[j])

    A = sum(b[j][k] * dx(ell, j) * dx(ell, k) for j in range(m) for k in range(m)) \
        - (1 + a_p) * sum(b[j][k] * dx(dx(ell, j), k) for j in range(m) for k in range(m)) \
        - b_p * lam
    I1 = sp.I * be * d(v, t) - al * d(ell, t) * v \
        + sum(dx(b[j][k] * dx(v, j), k) for j in range(m) for k in range(m)) + A * v
    I1b = sp.conjugate(I1)
    B = d(al ** 2 * d(ell, t) + be ** 2 * d(ell, t) - al * A, t) \
        + 2 * sum(dx(b[j][k] * dx(ell, j) * A, k)
                  - dx(al * b[j][k] * dx(ell, j) * d(ell, t), k)
                  + a_p * (A - al * d(ell, t)) * b[j][k] * dx(dx(ell, j), k)
                  for j in range(m) for k in range(m))
    M = ((al ** 2 + be ** 2) * d(ell, t) - al * A) * v * vb \
        + al * sum(b[j][k] * dx(v, j) * dx(vb, k) for j in range(m) for k in range(m)) \
        + sp.I * be * sum(b[j][k] * dx(ell, j) * (dx(vb, k) * v - dx(v, k) * vb)
                          for j in range(m) for k in range(m))
    V = []
    for k in range(m):
        term = sp.Integer(0)
        for j in range(m):
            term += -sp.I * be * (b[j][k] * dx(ell, j) * (v * d(vb, t) - vb * d(v, t))
                                  + b[j][k] * d(ell, t) * (dx(v, j) * vb - dx(vb, j) * v))
            term += -al * b[j][k] * (dx(v, j) * d(vb, t) + dx(vb, j) * d(v, t))
            term += 2 * b[j][k] * (A * dx(ell, j) - al * dx(ell, j) * d(ell, t)) * v * vb
            for jp in range(m):
                for kp in range(m):
                    term += (2 * b[j][kp] * b[jp][k] - b[j][k] * b[jp][kp]) * dx(ell, j) \
                        * (dx(v, jp) * dx(vb, kp) + dx(vb, jp) * dx(v, kp))
                    term += -a_p * b[jp][kp] * dx(dx(ell, jp), kp) * b[j][k] \
                        * (dx(v, j) * vb + dx(vb, j) * v)
        V.append(term)
    Pz = (al + sp.I * be) * d(zs, t) + sum(dx(b[j][k] * dx(zs, j), k)
                                           for j in range(m) for k in range(m))
    lhs_s = theta * (Pz * I1b + sp.conjugate(Pz) * I1) + d(M, t) \
        + sum(dx(V[k], k) for k in range(m))

    rhs_s = 2 * I1 * I1b
    for j in range(m):
        for k in range(m):
            pair = dx(v, k) * dx(vb, j) + dx(vb, k) * dx(v, j)
            rhs_s += sp.Rational(1, 2) * d(al * b[j][k], t) * pair
            for jp in range(m):
                for kp in range(m):
                    rhs_s += (2 * dx(b[jp][k] * dx(ell, jp), kp) * b[j][kp]
                              - dx(b[j][k] * b[jp][kp] * dx(ell, jp), kp)
                              - a_p * b[j][k] * b[jp][kp] * dx(dx(ell, jp), kp)) * pair
    rhs_s += (-sum(dx(b[j][k], k) * dx(ell, j) for j in range(m) for k in range(m))
              + b_p * lam) * (I1 * vb + I1b * v)
    rhs_s += sp.I * sum(
        (d(be * b[j][k] * dx(ell, j), t) + b[j][k] * dx(be * d(ell, t), j))
        * (dx(vb, k) * v - dx(v, k) * vb)
        + (dx(be * b[j][k] * dx(ell, j), k) + a_p * be * b[j][k] * dx(dx(ell, j), k))
        * (vb * d(v, t) - v * d(vb, t))
        for j in range(m) for k in range(m))
    rhs_s += -sum(b[j][k] * dx(al, k) * (dx(v, j) * d(vb, t) + dx(vb, j) * d(v, t))
                  for j in range(m) for k in range(m))
    rhs_s += -a_p * sum(b[j][k] * dx(b[jp][kp] * dx(dx(ell, jp), kp), k)
                        * (dx(vb, j) * v + dx(v, j) * vb)
                        for j in range(m) for k in range(m)
                        for jp in range(m) for kp in range(m))
    rhs_s += B * v * vb

    for pt in [(0.5, 0.25), (-0.25, 0.75), (0.125, -0.5)]:
        subs = {t: sp.Rational(pt[0]), x1: sp.Rational(pt[1])}
        want_l = complex(lhs_s.subs(subs).evalf(50))
        want_r = complex(rhs_s.subs(subs).evalf(50))
        got_l, got_r, _ = eval_det_identity(inst, pt)
        scale = max(abs(want_l), abs(want_r), 1.0)
        assert abs(got_l - want_l) <= 1e-10 * scale
        assert abs(got_r - want_r) <= 1e-10 * scale
        assert abs(want_l - want_r) <= 1e-30 * scale  # oracle self-consistency


def test_det_spec_worked_example_m2():
    # m=2, alpha=1, beta=t+x1, b=[[1+x2^2, x1 x2/2], [x1 x2/2, 2]]
    dims = 3
    one = MultiPoly.constant(dims, 1.0)
    tpoly = MultiPoly.variable(dims, 0)
    x1 = MultiPoly.variable(dims, 1)
    x2 = MultiPoly.variable(dims, 2)
    beta = tpoly + x1
    b11 = one + x2 * x2
    b12 = 0.5 * (x1 * x2)
    b22 = MultiPoly.constant(dims, 2.0)
    z = ComplexPoly(random_poly(dims, 3, 301), random_poly(dims, 3, 302))
    ell = random_poly(dims, 2, 303)
    inst = DetIdentityInstance(2, z, ell, one, beta, [[b11, b12], [b12, b22]],
                               0.7, -0.3, 1.2)
    gen = np.random.default_rng(17)
    worst = 0.0
    for pt in gen.uniform(-1.0, 1.0, (200, 3)):
        lhs, rhs, _ = eval_det_identity(inst, pt)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0))
    assert worst <= 1e-9


def test_det_conjugation_symmetry():
    for idx in range(5):
        inst = random_det_instance(404, idx)
        gen = np.random.default_rng(idx)
        for pt in gen.uniform(-1.0, 1.0, (20, 1 + inst.m)):
            lhs, rhs, _ = eval_det_identity(inst, pt)
            scale = max(abs(lhs), abs(rhs), 1.0)
            assert abs(lhs.imag) <= 1e-12 * scale
            assert abs(rhs.imag) <= 1e-12 * scale


def test_det_scaling_quadratic_in_z():
    inst = random_det_instance(505, 0)
    gen = np.random.default_rng(21)
    pts = gen.uniform(-1.0, 1.0, (50, 1 + inst.m))
    for c in (2.0, -3.0):
        scaled = inst.scaled(c)
        for pt in pts:
            l0, r0, _ = eval_det_identity(inst, pt)
            l1, r1, _ = eval_det_identity(scaled, pt)
            assert abs(l1 - c * c * l0) <= 1e-10 * max(abs(l1), 1.0)
            assert abs(r1 - c * c * r0) <= 1e-10 * max(abs(r1), 1.0)


def test_det_parabolic_specialization():
    # alpha=1, beta=0 with real z: both sides real to 1e-12*scale, identity holds
    dims = 2
    z = ComplexPoly(random_poly(dims, 3, 601))
    ell = random_poly(dims, 2, 602)
    alpha = MultiPoly.constant(dims, 1.0)
    beta = MultiPoly.zero(dims)
    b = [[random_poly(dims, 2, 603)]]
    inst = DetIdentityInstance(1, z, ell, alpha, beta, b, 0.4, 0.2, 1.5)
    gen = np.random.default_rng(31)
    for pt in gen.uniform(-1.0, 1.0, (100, 2)):
        lhs, rhs, _ = eval_det_identity(inst, pt)
        scale = max(abs(lhs), abs(rhs), 1.0)
        assert abs(lhs - rhs) <= 1e-9 * scale
        assert abs(lhs.imag) <= 1e-12 * scale and abs(rhs.imag) <= 1e-12 * scale


def test_det_hyperbolic_specialization():
    # alpha=beta=0 and b=b(x) time-independent
    dims = 2
    x1 = MultiPoly.variable(dims, 1)
    z = ComplexPoly(random_poly(dims, 3, 604))
    ell = random_poly(dims, 2, 605)
    zero = MultiPoly.zero(dims)
    b = [[MultiPoly.constant(dims, 1.0) + x1 * x1]]
    inst = DetIdentityInstance(1, z, ell, zero, zero, b, 0.9, -0.1, 0.8)
    gen = np.random.default_rng(37)
    for pt in gen.uniform(-1.0, 1.0, (100, 2)):
        lhs, rhs, _ = eval_det_identity(inst, pt)
        scale = max(abs(lhs), abs(rhs), 1.0)
        assert abs(lhs - rhs) <= 1e-9 * scale
        assert abs(lhs.imag) <= 1e-12 * scale


def test_det_nonsymmetric_b_rejected():
    dims = 3
    b11 = MultiPoly.constant(dims, 1.0)
    b12 = MultiPoly.variable(dims, 1)
    b21 = MultiPoly.variable(dims, 2)  # != b12
    b22 = MultiPoly.constant(dims, 2.0)
    with pytest.raises(ValueError):
        DetIdentityInstance(2, ComplexPoly.zero(dims), MultiPoly.zero(dims),
                            MultiPoly.zero(dims), MultiPoly.zero(dims),
                            [[b11, b12], [b21, b22]], 0.0, 0.0, 1.0)


def test_det_wrong_point_arity():
    inst = small_det_instance_m1()
    with pytest.raises(ValueError):
        eval_det_identity(inst, (0.1, 0.2, 0.3))


# --- stochastic identities ---------------------------------------------------


def drift_instance(u_terms, ell_terms, psi_terms, steps=64, m=1):
    dims = 1 + m
    return StochIdentityInstance(
        m, MultiPoly(dims, u_terms), MultiPoly.zero(dims),
        MultiPoly(dims, ell_terms), MultiPoly(dims, psi_terms),
        [[MultiPoly.constant(dims, 1.0)] * m for _ in range(m)]
        if m == 1 else _identity_b(dims, m),
        T=1.0, steps=steps, seed=4242)


def _identity_b(dims, m):
    b = [[MultiPoly.zero(dims) for _ in range(m)] for _ in range(m)]
    for i in range(m):
        b[i][i] = MultiPoly.constant(dims, 1.0)
    return b


def test_stoch_trivial_zero_data():
    inst = drift_instance({}, {(1, 0): 1.0}, {(0, 0): 1.0})
    assert eval_stoch_parabolic_residual(inst, [0.4]) == 0.0
    assert eval_stoch_hyperbolic_residual(inst, [0.4]) == 0.0


def test_stoch_parabolic_drift_example():
    # u_d = t x1^2, l = x1, Psi = 1, b = [[1]]; dt in {1/64, 1/128, 1/256}.
    # With drift linear in t and a time-independent weight every increment
    # and quadrature step is exact, so the residual is round-off, which is
    # stronger than the O(dt) decay expected for generic data.
    inst = drift_instance({(1, 2): 1.0}, {(0, 1): 1.0}, {(0, 0): 1.0})
    out = stoch_residual_slope(inst, [0.5], "parabolic", halvings=2)
    assert all(r <= 1e-12 for r in out["residuals"])


def test_stoch_parabolic_drift_generic_slope():
    # t-quadratic drift and t-dependent weight give the generic O(dt) decay
    inst = drift_instance({(2, 2): 1.0, (1, 1): 0.5}, {(1, 0): 0.5, (0, 1): 1.0},
                          {(0, 0): 1.0})
    out = stoch_residual_slope(inst, [0.5], "parabolic", halvings=2)
    assert out["slope"] >= 0.9


def test_stoch_hyperbolic_drift_example():
    # u_d = x1^2 t^2, l = t + x1, Psi = 0
    inst = drift_instance({(2, 2): 1.0}, {(1, 0): 1.0, (0, 1): 1.0}, {})
    out = stoch_residual_slope(inst, [0.5], "hyperbolic", halvings=3)
    assert out["slope"] >= 0.9


def test_stoch_drift_slope_random_m2():
    inst = random_stoch_instance(777, 0, m=2, drift_only=True, steps=64)
    for kind in ("parabolic", "hyperbolic"):
        out = stoch_residual_slope(inst, [0.3, -0.2], kind, halvings=3)
        assert out["slope"] >= 0.9


def test_stoch_noisy_slope_smoke():
    # small Monte Carlo version; acceptance runs the full 4096-path study
    inst = random_stoch_instance(778, 1, drift_only=False, steps=64)
    for kind in ("parabolic", "hyperbolic"):
        out = stoch_residual_slope(inst, [0.3], kind, halvings=3, n_paths=256)
        assert out["slope"] >= 0.4


def test_brownian_path_reproducible():
    inst = random_stoch_instance(779, 0, drift_only=False)
    again = brownian_increments(inst.seed, 0, inst.steps, inst.dt)
    assert np.array_equal(inst.brownian_path, again)
    assert math.fsum(inst.brownian_path) == pytest.approx(
        float(np.sum(inst.brownian_path)), abs=1e-15)
    assert inst.dt * inst.steps == inst.T  # exact grid invariant


def test_stoch_rejects_time_dependent_sigma():
    dims = 2
    with pytest.raises(ValueError):
        StochIdentityInstance(
            1, MultiPoly.zero(dims), MultiPoly.variable(dims, 0),
            MultiPoly.zero(dims), MultiPoly.zero(dims),
            [[MultiPoly.constant(dims, 1.0)]], 1.0, 16, 1)


def test_with_steps_preserves_T():
    inst = random_stoch_instance(780, 0)
    fine = inst.with_steps(inst.steps * 2)
    assert fine.T == inst.T
    assert fine.dt == inst.dt / 2
    assert fine.brownian_path.shape[0] == 2 * inst.brownian_path.shape[0]


# --- frozen structural oracles for the stochastic identities -----------------


def _rand_rational_poly(rng, vars_, deg):
    import itertools
    terms = []
    for exps in itertools.product(range(deg + 1), repeat=len(vars_)):
        if sum(exps) > deg:
            continue
        c = sp.Rational(int(rng.integers(-3, 4)), int(rng.integers(1, 5)))
        mon = sp.Integer(1)
        for v, e in zip(vars_, exps):
            mon *= v ** e
        terms.append(c * mon)
    return sp.Add(*terms)


def test_stoch_parabolic_structure_oracle():
    """Drift-only pointwise form of the parabolic identity is exactly zero."""
    rng = np.random.default_rng(91)
    t, x1 = T_SYM, X_SYM[0]
    xs = [x1]
    m = 1
    u = _rand_rational_poly(rng, [t, x1], 2)
    ell = _rand_rational_poly(rng, [t, x1], 2)
    Psi = _rand_rational_poly(rng, [t, x1], 2)
    b = [[_rand_rational_poly(rng, [t, x1], 2)]]
    theta = sp.exp(ell)
    v = theta * u
    dx = lambda e, i: sp.diff(e, xs[i])
    dt = lambda e: sp.diff(e, t)
    A = -sum(b[i][j] * dx(ell, i) * dx(ell, j) - dx(b[i][j], j) * dx(ell, i)
             - b[i][j] * dx(dx(ell, i), j) for i in range(m) for j in range(m)) - Psi
    B = 2 * (A * Psi - sum(dx(A * b[i][j] * dx(ell, i), j)
                           for i in range(m) for j in range(m))) \
        - dt(A) - sum(dx(b[i][j] * dx(Psi, j), i) for i in range(m) for j in range(m))
    Lv = -sum(dx(b[i][j] * dx(v, i), j) for i in range(m) for j in range(m)) + A * v
    drift_u = dt(u) - sum(dx(b[i][j] * dx(u, i), j) for i in range(m) for j in range(m))
    LHS = 2 * theta * Lv * drift_u
    LHS += 2 * sum(dx(b[i][j] * dx(v, i) * dt(v), j) for i in range(m) for j in range(m))
    for i in range(m):
        for j in range(m):
            G = sum(2 * b[i][j] * b[ip][jp] * dx(ell, ip) * dx(v, i) * dx(v, jp)
                    - b[i][j] * b[ip][jp] * dx(ell, i) * dx(v, ip) * dx(v, jp)
                    for ip in range(m) for jp in range(m)) \
                + Psi * b[i][j] * dx(v, i) * v \
                - b[i][j] * (A * dx(ell, i) + dx(Psi, i) / 2) * v ** 2
            LHS += 2 * dx(G, j)
    RHS = 2 * sum((sum(2 * b[i][jp] * dx(b[ip][j] * dx(ell, ip), jp)
                       - dx(b[i][j] * b[ip][jp] * dx(ell, ip), jp)
                       for ip in range(m) for jp in range(m))
                   - dt(b[i][j]) / 2 + Psi * b[i][j]) * dx(v, i) * dx(v, j)
                  for i in range(m) for j in range(m))
    RHS += B * v ** 2
    RHS += 2 * Lv * (-sum(dx(b[i][j] * dx(v, i), j)
                          for i in range(m) for j in range(m)) + (A - dt(ell)) * v)
    RHS += dt(sum(b[i][j] * dx(v, i) * dx(v, j)
                  for i in range(m) for j in range(m)) + A * v ** 2)
    assert sp.simplify(sp.expand(LHS - RHS)) == 0


def test_stoch_hyperbolic_structure_oracle():
    """Drift-only pointwise form of the hyperbolic identity is exactly zero."""
    rng = np.random.default_rng(92)
    t, x1 = T_SYM, X_SYM[0]
    xs = [x1]
    n = 1
    u = _rand_rational_poly(rng, [t, x1], 2)
    ell = _rand_rational_poly(rng, [t, x1], 2)
    Psi = _rand_rational_poly(rng, [t, x1], 2)
    b = [[_rand_rational_poly(rng, [t, x1], 2)]]
    theta = sp.exp(ell)
    v = theta * u
    dx = lambda e, i: sp.diff(e, xs[i])
    dt = lambda e: sp.diff(e, t)
    vt = dt(v)
    A = (dt(ell) ** 2 - dt(dt(ell))) \
        - sum(b[i][j] * dx(ell, i) * dx(ell, j) - dx(b[i][j], j) * dx(ell, i)
              - b[i][j] * dx(dx(ell, i), j) for i in range(n) for j in range(n)) - Psi
    B = A * Psi + dt(A * dt(ell)) \
        - sum(dx(A * b[i][j] * dx(ell, i), j) for i in range(n) for j in range(n)) \
        + sp.Rational(1, 2) * (dt(dt(Psi)) - sum(dx(b[i][j] * dx(Psi, i), j)
                                                 for i in range(n) for j in range(n)))
    I1 = -2 * dt(ell) * vt \
        + 2 * sum(b[i][j] * dx(ell, i) * dx(v, j) for i in range(n) for j in range(n)) \
        + Psi * v
    drift_ut = dt(dt(u)) - sum(dx(b[i][j] * dx(u, i), j)
                               for i in range(n) for j in range(n))
    LHS = theta * I1 * drift_ut
    for i in range(n):
        for j in range(n):
            Br = sum(2 * b[i][j] * b[ip][jp] * dx(ell, ip) * dx(v, i) * dx(v, jp)
                     - b[i][j] * b[ip][jp] * dx(ell, i) * dx(v, ip) * dx(v, jp)
                     for ip in range(n) for jp in range(n)) \
                - 2 * b[i][j] * dt(ell) * dx(v, i) * vt \
                + b[i][j] * dx(ell, i) * vt ** 2 \
                + Psi * b[i][j] * dx(v, i) * v \
                - (A * dx(ell, i) + dx(Psi, i) / 2) * b[i][j] * v ** 2
            LHS += dx(Br, j)
    Mterm = sum(b[i][j] * dt(ell) * dx(v, i) * dx(v, j) for i in range(n) for j in range(n)) \
        - 2 * sum(b[i][j] * dx(ell, i) * dx(v, j) * vt for i in range(n) for j in range(n)) \
        + dt(ell) * vt ** 2 - Psi * vt * v + (A * dt(ell) + dt(Psi) / 2) * v ** 2
    LHS += dt(Mterm)
    RHS = (dt(dt(ell)) + sum(dx(b[i][j] * dx(ell, i), j)
                             for i in range(n) for j in range(n)) - Psi) * vt ** 2
    RHS += -2 * sum((dt(b[i][j] * dx(ell, j)) + b[i][j] * dt(dx(ell, j))) * dx(v, i) * vt
                    for i in range(n) for j in range(n))
    RHS += sum((dt(b[i][j] * dt(ell))
                + sum(2 * b[i][jp] * dx(b[ip][j] * dx(ell, ip), jp)
                      - dx(b[i][j] * b[ip][jp] * dx(ell, ip), jp)
                      for ip in range(n) for jp in range(n))
                + Psi * b[i][j]) * dx(v, i) * dx(v, j)
               for i in range(n) for j in range(n))
    RHS += B * v ** 2 + I1 ** 2
    assert sp.simplify(sp.expand(LHS - RHS)) == 0


# --- suite ------------------------------------------------------------------


def test_suite_ode_example():
    rep = verify_identity_suite("ode", 10, seed=7, tol=1e-10)
    assert rep.passed and rep.samples == 1000


def test_suite_vacuous():
    rep = verify_identity_suite("deterministic", 0, seed=1, tol=1e-9)
    assert rep.samples == 0 and rep.passed


def test_suite_multiplier():
    rep = verify_identity_suite("multiplier", 20, seed=11, tol=1e-10)
    assert rep.passed
    assert rep.max_rel_residual <= 1e-10


def test_suite_unknown_kind():
    with pytest.raises(ValueError):
        verify_identity_suite("elliptic", 1, seed=0)


def test_suite_deterministic_per_seed():
    a = verify_identity_suite("deterministic", 3, seed=55)
    b = verify_identity_suite("deterministic", 3, seed=55)
    assert a.max_abs_residual == b.max_abs_residual
    assert a.max_rel_residual == b.max_rel_residual
    assert a.as_dict()["pass"] is True


def test_report_pass_is_threshold():
    rep = verify_identity_suite("ode", 2, seed=3, tol=0.0)
    # nonzero round-off residual with zero tolerance must fail
    assert rep.max_rel_residual > 0.0
    assert not rep.passed
