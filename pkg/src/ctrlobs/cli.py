"""Unified experiment runner behind the ``ctrlobs`` console command.

Eleven subcommands dispatch to the library modules, each reading the
same configuration record (INI file via ``--config``, then command-line
overrides) and writing the same report shape: a JSON file with the
config echo, the asserted checks, free-form metrics, and artifact
paths, plus per-kind CSV artifacts.  The process exits 0 exactly when
every asserted check passed, 1 on a failed check or a module error,
and 2 on a usage or configuration error.

One 64-bit seed drives everything; consumers derive independent
streams from (seed, label, index), so reports are byte-identical
across runs up to the wall-time field.

CSV schemas:

observability, lr-constant
    ``param,constant,iterations,regularization`` one row per sweep
    point (for lr-constant, one row per mode count; the iterations
    column holds the mode count).
stabilize
    ``t,E,fit_residual`` where the residual is against the
    best-quality fitted model evaluated on the whole horizon.
control kinds
    the synthesized control field in long form ``step,time,node,value``.

Trajectory dumps (``--dump-every K`` with ``--dump PATH``) use the same
long form, one row per node per kept step.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
import time

import numpy as np

from . import control, identities, observability, pde, rng, stabilization
from .config import (KIND_OPTIONS, KINDS, ConfigError, ExperimentConfig,
                     apply_overrides, config_echo, default_config,
                     load_config, validate)
from .pde import CoefficientField, Grid
from .report import CheckOutcome, RunReport, emit_report

__all__ = ["main", "run_experiment", "build_parser"]


# ---------------------------------------------------------------------------
# shared pieces


def _grid(cfg: ExperimentConfig) -> Grid:
    return Grid(cfg.dim, cfg.n, cfg.dt, cfg.steps)


def _coef(cfg: ExperimentConfig) -> CoefficientField:
    return CoefficientField(
        diffusivity=cfg.diffusivity,
        potential=cfg.potential,
        convection=cfg.convection if cfg.convection else None,
        damping=cfg.damping,
        noise_gain=cfg.noise_gain,
    )


def _parse_data(spec: str, grid: Grid, amplitude: float, allow_packet: bool = False):
    """Initial datum from its textual name: zero, sine:k, or packet."""
    spec = spec.strip()
    if spec == "zero":
        return np.zeros(grid.size), np.zeros(grid.size)
    if spec.startswith("sine:"):
        try:
            k = tuple(int(part) for part in spec[5:].split(","))
        except ValueError:
            raise ConfigError(f"bad mode list in data spec {spec!r}") from None
        if len(k) == 1:
            k = k[0]
        return amplitude * pde.sine_mode(grid, k), np.zeros(grid.size)
    if spec == "packet":
        if not allow_packet:
            raise ConfigError("data = packet applies to wave experiments only")
        u0, v0 = stabilization.matched_packet(grid)
        return amplitude * u0, amplitude * v0
    raise ConfigError(
        f"data must be zero, sine:<modes>, or packet, got {spec!r}"
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path: str, header: str, rows: list) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(cell) for cell in row))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def _dump_rows(traj, every: int) -> list:
    rows = []
    times = traj.grid.times
    for step in range(0, traj.snapshots.shape[0], every):
        state = traj.snapshots[step]
        for node in range(state.shape[0]):
            rows.append((step, float(times[step]), node, float(state[node])))
    return rows


# ---------------------------------------------------------------------------
# runners: cfg -> (checks, metrics, csv (header, rows) or None, traj or None)


_IDENTITY_ALIASES = {"parabolic": "stoch_parabolic_drift",
                     "hyperbolic": "stoch_hyperbolic_drift"}


def _run_verify_identity(cfg: ExperimentConfig):
    opt = cfg.options
    name = opt["identity"]
    if name == "all":
        kinds = list(identities.IDENTITY_KINDS)
    elif name in identities.IDENTITY_KINDS:
        kinds = [name]
    else:
        raise ConfigError(
            f"identity must be all or one of {', '.join(identities.IDENTITY_KINDS)}, "
            f"got {name!r}"
        )
    tol = opt["identity_tol"] if opt["identity_tol"] > 0 else None
    checks, metrics = [], {}
    for kind in kinds:
        rep = identities.verify_identity_suite(
            kind, opt["instances"], cfg.seed, tol=tol,
            points_per_instance=opt["points"],
        )
        checks.append(CheckOutcome.evaluate(
            f"max_rel_residual[{kind}]", rep.max_rel_residual, "<=", rep.tolerance))
        metrics[kind] = rep.as_dict()
    return checks, metrics, None, None


def _run_null_control(cfg: ExperimentConfig):
    opt = cfg.options
    grid = _grid(cfg)
    y0, _ = _parse_data(opt["data"], grid, opt["amplitude"])
    res = control.hum_null_control_heat(
        _coef(cfg), grid, tuple(opt["region"]), y0,
        epsilon=cfg.epsilon, cg_tol=cfg.cg_tol, max_iter=cfg.max_iter,
    )
    norm0 = pde.l2_norm(grid, y0)
    checks = [CheckOutcome.evaluate(
        "terminal_residual", res.terminal_residual, "<=",
        opt["check_factor"] * norm0)]
    metrics = {
        "terminal_residual": res.terminal_residual,
        "initial_norm": norm0,
        "cg_iterations": res.cg_iterations,
        "cg_residual": res.cg_residual,
        "cost": res.cost,
        "epsilon": res.epsilon,
    }
    csv = ("step,time,node,value", _control_rows(res.control))
    return checks, metrics, csv, res.control


def _control_rows(traj) -> list:
    rows = []
    times = traj.grid.times
    for step in range(traj.snapshots.shape[0]):
        state = traj.snapshots[step]
        for node in range(state.shape[0]):
            rows.append((step, float(times[step]), node, float(state[node])))
    return rows


def _run_exact_control(cfg: ExperimentConfig):
    opt = cfg.options
    grid = _grid(cfg)
    geometry = control.make_control_geometry(grid, cfg.x0, cfg.eps, cfg.t)
    u0, v0 = _parse_data(opt["data"], grid, opt["amplitude"], allow_packet=True)
    zero = np.zeros(grid.size)
    res = control.hum_exact_control_wave(
        _coef(cfg), grid, geometry, (u0, v0), (zero, zero),
        cg_tol=cfg.cg_tol, max_iter=cfg.max_iter,
    )
    init_norm = control._pair_energy_norm(grid, _coef(cfg), u0, v0)
    checks = [CheckOutcome.evaluate(
        "terminal_residual", res.terminal_residual, "<=",
        opt["residual_factor"] * init_norm)]
    metrics = {
        "terminal_residual": res.terminal_residual,
        "initial_pair_norm": init_norm,
        "cg_iterations": res.cg_iterations,
        "cg_residual": res.cg_residual,
        "cost": res.cost,
        "t_star": geometry.t_star,
        "horizon": cfg.t,
        "above_critical_time": bool(cfg.t > geometry.t_star),
    }
    csv = ("step,time,node,value", _control_rows(res.control))
    return checks, metrics, csv, res.control


def _run_semilinear_control(cfg: ExperimentConfig):
    opt = cfg.options
    grid = _grid(cfg)
    y0, _ = _parse_data(opt["data"], grid, opt["amplitude"])
    res = control.semilinear_null_control(
        _coef(cfg), grid, tuple(opt["region"]), y0,
        r_exponent=opt["r_exponent"], sign=opt["sign"],
        outer_tol=opt["outer_tol"], max_outer=opt["max_outer"],
        epsilon=cfg.epsilon, cg_tol=cfg.cg_tol, max_iter=cfg.max_iter,
    )
    norm0 = pde.l2_norm(grid, y0)
    outer = len(res.outer_history)
    checks = [
        CheckOutcome.evaluate("terminal_residual", res.terminal_residual,
                              "<=", opt["check_factor"] * norm0),
        CheckOutcome.evaluate("outer_iterations", outer, "<=", opt["max_outer"]),
    ]
    metrics = {
        "terminal_residual": res.terminal_residual,
        "initial_norm": norm0,
        "outer_iterations": outer,
        "outer_history": [float(v) for v in res.outer_history],
        "cg_iterations": res.cg_iterations,
        "cost": res.cost,
    }
    csv = ("step,time,node,value", _control_rows(res.control))
    return checks, metrics, csv, res.control


_SWEEPABLE = {
    "n": int, "dt": float, "t": float, "eps": float,
    "diffusivity": float, "potential": float, "damping": float,
    "noise_gain": float, "filter_fraction": float,
}


def _parse_sweep(spec: str, cfg: ExperimentConfig) -> list:
    """One (key, value, derived config) triple per sweep point."""
    if not spec:
        return [("n", cfg.n, cfg)]
    if "=" not in spec:
        raise ConfigError(f"sweep must look like key=v1,v2,..., got {spec!r}")
    key, _, tail = spec.partition("=")
    key = key.strip()
    if key not in _SWEEPABLE:
        raise ConfigError(
            f"sweep key must be one of {', '.join(sorted(_SWEEPABLE))}, got {key!r}"
        )
    caster = _SWEEPABLE[key]
    points = []
    for part in tail.split(","):
        try:
            value = caster(part.strip())
        except ValueError:
            raise ConfigError(f"bad sweep value {part.strip()!r} for {key}") from None
        points.append((key, value, validate(dataclasses.replace(cfg, **{key: value}))))
    return points


def _run_observability(cfg: ExperimentConfig):
    opt = cfg.options
    equation = opt["equation"]
    if equation not in ("heat", "wave"):
        raise ConfigError(f"equation must be heat or wave, got {equation!r}")
    checks, rows, points = [], [], []
    for key, value, cfg_i in _parse_sweep(opt["sweep"], cfg):
        grid = _grid(cfg_i)
        coef = _coef(cfg_i)
        if equation == "heat":
            est = observability.obs_constant_heat(
                coef, grid, tuple(opt["region"]), mode=opt["mode"],
                tol=cfg_i.tol, max_iter=cfg_i.max_iter)
        else:
            geometry = control.make_control_geometry(
                grid, cfg_i.x0, cfg_i.eps, cfg_i.t)
            est = observability.obs_constant_wave(
                coef, grid, geometry, observation=opt["observation"],
                time_reversed=opt["time_reversed"], tol=cfg_i.tol,
                max_iter=cfg_i.max_iter,
                filter_fraction=cfg_i.filter_fraction)
        label = f"{key}={_fmt(value)}"
        rows.append((label, est.constant, est.iterations, est.regularization))
        checks.append(CheckOutcome.evaluate(
            f"constant_positive[{label}]", est.constant, ">", 0.0))
        point = {"param": label, "constant": float(est.constant),
                 "iterations": int(est.iterations),
                 "regularization": float(est.regularization),
                 "residual": float(est.residual)}
        if est.above_critical_time is not None:
            point["above_critical_time"] = bool(est.above_critical_time)
        points.append(point)
    metrics = {"equation": equation, "points": points}
    return checks, metrics, ("param,constant,iterations,regularization", rows), None


def _run_lr_constant(cfg: ExperimentConfig):
    opt = cfg.options
    omega = tuple(opt["omega"])
    if len(omega) == 4:
        omega = (omega[:2], omega[2:])
    elif len(omega) != 2:
        raise ConfigError(
            f"omega needs 2 entries (interval) or 4 (square), got {len(omega)}"
        )
    modes = opt["modes"]
    if modes < 1:
        raise ConfigError(f"modes must be at least 1, got {modes}")
    rows, lams = [], []
    for k in range(1, modes + 1):
        spec = observability.lr_gram_constant(omega, n_modes=k)
        rows.append((f"modes={k}", spec.constant, len(spec.modes), 0.0))
        lams.append(spec.lambda_min)
    worst_ratio = max(
        (lams[i + 1] / lams[i] for i in range(len(lams) - 1)), default=0.0)
    checks = [
        CheckOutcome.evaluate("lambda_min_positive", lams[-1], ">", 0.0),
        CheckOutcome.evaluate(
            "lambda_min_nonincreasing", worst_ratio, "<=", 1.0 + 1e-12),
    ]
    metrics = {"lambda_min": [float(v) for v in lams]}
    if len(omega) == 2 and not hasattr(omega[0], "__len__") and modes >= 4:
        fit = observability.lr_growth_fit(
            omega, [(math.pi * k) ** 2 for k in range(1, modes + 1)])
        metrics["growth_fit"] = fit
    return checks, metrics, ("param,constant,iterations,regularization", rows), None


def _fit_prediction(fit, times: np.ndarray, energy: np.ndarray) -> np.ndarray:
    """Evaluate a fitted decay model over the whole horizon."""
    if fit.degenerate:
        return np.zeros_like(energy)
    if fit.model == stabilization.EXPONENTIAL:
        rate = fit.rate_or_c
        lo, hi = fit.window
        window = (times >= lo) & (times <= hi) & (energy > 0)
        if not window.any():
            return np.zeros_like(energy)
        log_m = float(np.mean(np.log(energy[window]) + rate * times[window]))
        return np.exp(log_m - rate * times)
    scale = fit.rate_or_c * math.sqrt(max(energy[0], 0.0))
    return (scale / np.log(2.0 + times)) ** 2


def _run_stabilize(cfg: ExperimentConfig):
    opt = cfg.options
    grid = _grid(cfg)
    coef = _coef(cfg)
    u0, v0 = _parse_data(opt["data"], grid, opt["amplitude"], allow_packet=True)
    if opt["data"].startswith("sine:"):
        v0 = None
    mode = opt["damping"]
    if mode == "boundary":
        run = stabilization.boundary_damping_experiment(
            coef, grid, opt["a_gain"], data=u0, velocity=v0)
    elif mode == "local":
        nonlin = None
        if opt["q"] > 0:
            nonlin = (opt["q"], opt["growth_coeff"])
        b_profile = pde.box_mask(grid, tuple(opt["b_region"]))
        run = stabilization.local_damping_experiment(
            coef, grid, b_profile, c0=opt["c0"], f_nonlinearity=nonlin,
            data=u0, velocity=v0)
    else:
        raise ConfigError(f"damping must be boundary or local, got {mode!r}")

    energy0 = float(run.energy[0])
    rises = np.diff(run.energy)
    max_rise = float(rises.max()) if rises.size else 0.0
    checks = [CheckOutcome.evaluate(
        "energy_monotone", max(max_rise, 0.0), "<=",
        1e-11 * max(energy0, 1.0))]
    if mode == "local":
        exp_fit = run.fits[0]
        checks.append(CheckOutcome.evaluate(
            "decay_rate", exp_fit.rate_or_c, ">", 0.0))
        checks.append(CheckOutcome.evaluate(
            "fit_quality", exp_fit.r_squared, ">=", 0.95))
    metrics = {
        "damping": mode,
        "initial_energy": energy0,
        "final_energy": float(run.energy[-1]),
        "dissipative": bool(run.dissipative),
        "fits": [
            {"model": fit.model, "rate_or_c": float(fit.rate_or_c),
             "r_squared": float(fit.r_squared),
             "window": [float(fit.window[0]), float(fit.window[1])],
             "degenerate": bool(fit.degenerate)}
            for fit in run.fits
        ],
    }
    best = max(run.fits, key=lambda fit: fit.r_squared)
    prediction = _fit_prediction(best, run.times, run.energy)
    rows = [
        (float(t), float(e), float(e - p))
        for t, e, p in zip(run.times, run.energy, prediction)
    ]
    return checks, metrics, ("t,E,fit_residual", rows), run.trajectory


def _run_stoch_heat(cfg: ExperimentConfig):
    opt = cfg.options
    grid = _grid(cfg)
    coef = _coef(cfg)
    y0, _ = _parse_data(opt["data"], grid, opt["amplitude"])
    ensemble = pde.solve_stoch_heat(
        coef, grid, y0, seed=cfg.seed, n_paths=opt["paths"], keep="terminal")
    msq = float(np.mean([pde.l2_inner(grid, z, z) for z in ensemble.terminal]))
    if not math.isfinite(msq):
        raise RuntimeError("ensemble second moment is not finite")
    norm0_sq = pde.l2_inner(grid, y0, y0)
    metrics = {"paths": opt["paths"], "mean_sq_terminal": msq,
               "initial_sq_norm": norm0_sq}
    modal = (opt["data"].startswith("sine:") and norm0_sq > 0
             and cfg.potential == 0.0 and not cfg.convection
             and cfg.damping == 0.0)
    if modal:
        ks = opt["data"][5:].split(",")
        mu = cfg.diffusivity * math.pi ** 2 * sum(int(k) ** 2 for k in ks)
        exact = math.exp((-2.0 * mu + cfg.noise_gain ** 2) * cfg.t) * norm0_sq
        gap = abs(msq - exact) / exact
        metrics["modal_law_exact"] = exact
        checks = [CheckOutcome.evaluate("modal_law_gap", gap, "<=", opt["law_tol"])]
    else:
        checks = [CheckOutcome.evaluate("mean_sq_terminal", msq, ">=", 0.0)]
    return checks, metrics, None, None


def _run_stoch_identity(cfg: ExperimentConfig):
    opt = cfg.options
    short = opt["identity"]
    if short not in _IDENTITY_ALIASES:
        raise ConfigError(
            f"identity must be parabolic or hyperbolic, got {short!r}")
    rep = identities.verify_identity_suite(
        _IDENTITY_ALIASES[short], opt["instances"], cfg.seed)
    checks = [CheckOutcome.evaluate(
        "max_rel_residual", rep.max_rel_residual, "<=", rep.tolerance)]
    metrics = {"suite": rep.as_dict()}
    if opt["halvings"] > 0:
        inst = identities.random_stoch_instance(cfg.seed, 0, drift_only=True)
        x_pt = rng.stream(cfg.seed, "cli.stoch-identity", 0).uniform(
            -1.0, 1.0, inst.m)
        audit = identities.stoch_residual_slope(
            inst, x_pt, short, halvings=opt["halvings"])
        slope = audit["slope"]
        metrics["slope_audit"] = {
            "dts": [float(v) for v in audit["dts"]],
            "residuals": [float(v) for v in audit["residuals"]],
            "slope": None if math.isinf(slope) else slope,
        }
        if math.isinf(slope):
            # residuals already at round-off; treat as passing the order bound
            checks.append(CheckOutcome.evaluate(
                "drift_slope", opt["slope_min"], ">=", opt["slope_min"]))
        else:
            checks.append(CheckOutcome.evaluate(
                "drift_slope", slope, ">=", opt["slope_min"]))
    return checks, metrics, None, None


def _run_geometry(cfg: ExperimentConfig):
    opt = cfg.options
    grid = _grid(cfg)
    geometry = control.make_control_geometry(grid, cfg.x0, cfg.eps, cfg.t)
    report = control.check_assumption_d(grid, cfg.x0, p=opt["principal"])
    checks = [
        CheckOutcome.evaluate("no_critical_point", report.min_d, ">", 0.0),
        CheckOutcome.evaluate("mu0", report.mu0, ">=", 4.0),
    ]
    metrics = {
        "t_star": geometry.t_star,
        "horizon": cfg.t,
        "above_critical_time": bool(cfg.t > geometry.t_star),
        "faces": [[axis, side] for axis, side in geometry.gamma0],
        "omega_fraction": float(np.mean(geometry.omega)),
        "mu0": report.mu0,
        "min_grad_d": report.min_grad_d,
        "min_d": report.min_d,
        "max_d": report.max_d,
        "condition_iii_margin": report.condition_iii_margin,
        "rescale_factor": report.rescale_factor,
    }
    return checks, metrics, None, None


def _run_kalman(cfg: ExperimentConfig):
    opt = cfg.options
    systems, size_max = opt["systems"], opt["size_max"]
    if systems < 1 or size_max < 1:
        raise ConfigError("kalman needs systems >= 1 and size_max >= 1")
    disagreements = 0
    controllable = 0
    for index in range(systems):
        gen = rng.stream(cfg.seed, "cli.kalman", index)
        n = 1 + int(gen.integers(size_max))
        m = 1 + int(gen.integers(n))
        a = gen.standard_normal((n, n))
        b = gen.standard_normal((n, m))
        if index % 3 == 2 and n >= 2:
            # plant an unreachable block: decoupled states with no input
            k = 1 + int(gen.integers(n - 1))
            a[:k, k:] = 0.0
            a[k:, :k] = 0.0
            b[k:, :] = 0.0
        sys_i = control.LinearODE(a, b)
        rank = control.kalman_rank(sys_i)
        gram = control.controllability_gramian(sys_i, opt["horizon"])
        lam_min = float(np.linalg.eigvalsh(gram)[0])
        full = rank == n
        definite = lam_min > opt["gram_tol"]
        controllable += int(full)
        disagreements += int(full != definite)
    checks = [CheckOutcome.evaluate("rank_gramian_disagreements",
                                    disagreements, "<=", 0)]
    metrics = {"systems": systems, "controllable": controllable,
               "deficient": systems - controllable}
    return checks, metrics, None, None


_RUNNERS = {
    "verify-identity": _run_verify_identity,
    "null-control": _run_null_control,
    "exact-control": _run_exact_control,
    "semilinear-control": _run_semilinear_control,
    "observability": _run_observability,
    "lr-constant": _run_lr_constant,
    "stabilize": _run_stabilize,
    "stoch-heat": _run_stoch_heat,
    "stoch-identity": _run_stoch_identity,
    "geometry": _run_geometry,
    "kalman": _run_kalman,
}


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Dispatch one validated config, write its artifacts, return the report."""
    validate(cfg)
    if cfg.dump_every > 0 and not cfg.dump:
        raise ConfigError("output.dump_every > 0 requires an output.dump path")
    start = time.perf_counter()
    checks, metrics, csv_spec, trajectory = _RUNNERS[cfg.kind](cfg)
    artifacts = {}
    if cfg.csv:
        if csv_spec is None:
            raise ConfigError(f"kind {cfg.kind!r} produces no CSV artifact")
        header, rows = csv_spec
        _write_csv(cfg.csv, header, rows)
        artifacts["csv"] = cfg.csv
    if cfg.dump_every > 0:
        if trajectory is None:
            raise ConfigError(f"kind {cfg.kind!r} produces no trajectory to dump")
        _write_csv(cfg.dump, "step,time,node,value",
                   _dump_rows(trajectory, cfg.dump_every))
        artifacts["trajectory"] = cfg.dump
    report = RunReport(
        experiment=cfg.kind,
        config=config_echo(cfg),
        checks=checks,
        metrics=metrics,
        artifacts=artifacts,
    )
    report.wall_time_s = time.perf_counter() - start
    if cfg.json:
        emit_report(report, "json", cfg.json)
    return report


# ---------------------------------------------------------------------------
# argument parsing


_FIELD_FLAGS = {
    "dim": int, "n": int, "dt": float, "t": float,
    "diffusivity": float, "potential": float, "damping": float,
    "noise_gain": float,
    "eps": float, "tol": float, "max_iter": int, "epsilon": float,
    "cg_tol": float, "filter_fraction": float,
    "seed": int, "json": str, "csv": str, "dump_every": int, "dump": str,
}

_OPTION_FLAGS = {
    "verify-identity": {"identity": ("--kind", str), "instances": ("--instances", int),
                        "points": ("--points", int),
                        "identity_tol": ("--identity-tol", float)},
    "null-control": {"region": ("--region", "floats"), "data": ("--data", str),
                     "amplitude": ("--amplitude", float),
                     "check_factor": ("--check-factor", float)},
    "exact-control": {"data": ("--data", str), "amplitude": ("--amplitude", float),
                      "residual_factor": ("--residual-factor", float)},
    "semilinear-control": {"region": ("--region", "floats"), "data": ("--data", str),
                           "amplitude": ("--amplitude", float),
                           "r_exponent": ("--r-exponent", float),
                           "sign": ("--sign", int),
                           "outer_tol": ("--outer-tol", float),
                           "max_outer": ("--max-outer", int),
                           "check_factor": ("--check-factor", float)},
    "observability": {"equation": ("--equation", str), "mode": ("--mode", str),
                      "observation": ("--observation", str),
                      "region": ("--region", "floats"),
                      "time_reversed": ("--time-reversed", "flag"),
                      "sweep": ("--sweep", str)},
    "lr-constant": {"omega": ("--omega", "floats"), "modes": ("--modes", int)},
    "stabilize": {"damping": ("--damping", str), "a_gain": ("--a-gain", float),
                  "c0": ("--c0", float), "b_region": ("--b-region", "floats"),
                  "q": ("--q", float), "growth_coeff": ("--growth-coeff", float),
                  "data": ("--data", str), "amplitude": ("--amplitude", float)},
    "stoch-heat": {"paths": ("--paths", int), "data": ("--data", str),
                   "amplitude": ("--amplitude", float),
                   "law_tol": ("--law-tol", float)},
    "stoch-identity": {"identity": ("--kind", str), "instances": ("--instances", int),
                       "halvings": ("--halvings", int),
                       "slope_min": ("--slope-min", float)},
    "geometry": {"principal": ("--principal", float)},
    "kalman": {"systems": ("--systems", int), "size_max": ("--size-max", int),
               "horizon": ("--horizon", float), "gram_tol": ("--gram-tol", float)},
}


# field flags whose name is taken by a kind-specific option on that
# subcommand: --tol is the identity tolerance, --damping the damping mode
_FIELD_FLAG_SKIPS = {("verify-identity", "tol"), ("stabilize", "damping")}


def _floats(raw: str) -> tuple:
    try:
        return tuple(float(part) for part in raw.split(",")) if raw else ()
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma list of numbers: {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrlobs",
        description="controllability and observability experiment runner",
    )
    subparsers = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sub = subparsers.add_parser(kind, help=f"run the {kind} experiment")
        sub.add_argument("--config", default=None,
                         help="INI config file; flags override its values")
        sub.add_argument("--x0", type=_floats, default=None, dest="field_x0",
                         help="exterior point, comma separated")
        for field_name, caster in _FIELD_FLAGS.items():
            if (kind, field_name) in _FIELD_FLAG_SKIPS:
                continue
            flag = "--" + field_name.replace("_", "-")
            sub.add_argument(flag, type=caster, default=None,
                             dest=f"field_{field_name}")
        for option, (flag, tag) in _OPTION_FLAGS[kind].items():
            dest = f"option_{option}"
            if tag == "flag":
                sub.add_argument(flag, action="store_const", const=True,
                                 default=None, dest=dest)
            elif tag == "floats":
                sub.add_argument(flag, type=_floats, default=None, dest=dest)
            else:
                sub.add_argument(flag, type=tag, default=None, dest=dest)
        if kind == "verify-identity":
            sub.add_argument("--tol", type=float, default=None,
                             dest="option_identity_tol",
                             help="identity residual tolerance")
    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config, kind=args.kind)
    else:
        cfg = default_config(args.kind)
    fields, options = {}, {}
    for name, value in vars(args).items():
        if name.startswith("field_"):
            fields[name[6:]] = value
        elif name.startswith("option_"):
            options[name[7:]] = value
    return validate(apply_overrides(cfg, fields, options))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (control.ControlError, stabilization.StabilizationError,
            ValueError, RuntimeError) as exc:
        print(f"error: {cfg.kind}: {exc}", file=sys.stderr)
        return 1
    for check in report.checks:
        state = "pass" if check.passed else "FAIL"
        print(f"{state}  {check.name}: {_fmt(check.value)} "
              f"{check.op} {_fmt(check.threshold)}")
    print(f"{cfg.kind}: {'pass' if report.passed else 'FAIL'} "
          f"({report.wall_time_s:.2f} s)")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
