"""Experiment configuration: INI tables parsed into one validated record.

A config file is a set of ``[section]`` tables of ``key = value`` lines
(the :mod:`configparser` dialect, no interpolation).  Every key has a
documented default below, so an empty file, or no file at all, is a
complete configuration.  Unknown sections or keys are rejected with the
offending ``section.key`` named; silent typos in sweep scripts are worse
than a hard stop.

Sections and their keys:

``[experiment]``
    ``kind`` selects the runner; the remaining keys are kind-specific
    and are listed in :data:`KIND_OPTIONS`.
``[grid]``
    ``dim``, ``n`` (interior nodes per axis), ``dt``, ``t`` (horizon).
    The step count is ``round(t / dt)`` and ``t`` must be an integer
    multiple of ``dt`` to relative 1e-9.
``[coefficient]``
    ``diffusivity``, ``potential``, ``damping``, ``noise_gain``
    (constants) and ``convection`` (comma list, one entry per axis,
    empty for none).
``[geometry]``
    ``x0`` (comma list, exterior point) and ``eps`` (collar width).
``[solver]``
    ``tol``, ``max_iter``, ``epsilon`` (HUM penalization), ``cg_tol``,
    ``filter_fraction``.
``[rng]``
    ``seed``, the single 64-bit seed; every consumer derives its own
    stream from (seed, label, index) via :mod:`ctrlobs.rng`.
``[output]``
    ``json``, ``csv`` (artifact paths, empty to skip), ``dump_every``
    (trajectory CSV cadence in steps, 0 to skip) and ``dump`` (its
    path).
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "KINDS",
    "KIND_OPTIONS",
    "default_config",
    "load_config",
    "apply_overrides",
    "config_echo",
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


KINDS = (
    "verify-identity",
    "null-control",
    "exact-control",
    "semilinear-control",
    "observability",
    "lr-constant",
    "stabilize",
    "stoch-heat",
    "stoch-identity",
    "geometry",
    "kalman",
)

# key -> (parser tag, default); tags are resolved by _parse_value
_GRID_KEYS = {
    "dim": ("int", 1),
    "n": ("int", 60),
    "dt": ("float", 1e-3),
    "t": ("float", 0.05),
}
_COEF_KEYS = {
    "diffusivity": ("float", 1.0),
    "potential": ("float", 0.0),
    "convection": ("floats", ()),
    "damping": ("float", 0.0),
    "noise_gain": ("float", 0.0),
}
_GEOM_KEYS = {
    "x0": ("floats", (-0.1,)),
    "eps": ("float", 0.15),
}
_SOLVER_KEYS = {
    "tol": ("float", 1e-6),
    "max_iter": ("int", 500),
    "epsilon": ("float", 1e-8),
    "cg_tol": ("float", 1e-8),
    "filter_fraction": ("float", 0.05),
}
_RNG_KEYS = {"seed": ("int", 0)}
_OUTPUT_KEYS = {
    "json": ("str", ""),
    "csv": ("str", ""),
    "dump_every": ("int", 0),
    "dump": ("str", ""),
}

SECTION_KEYS = {
    "grid": _GRID_KEYS,
    "coefficient": _COEF_KEYS,
    "geometry": _GEOM_KEYS,
    "solver": _SOLVER_KEYS,
    "rng": _RNG_KEYS,
    "output": _OUTPUT_KEYS,
}

# [experiment] keys allowed per kind, beyond "kind" itself.  Defaults
# here are the documented defaults of each runner.
KIND_OPTIONS = {
    "verify-identity": {
        "identity": ("str", "all"),
        "instances": ("int", 20),
        "points": ("int", 100),
        "identity_tol": ("float", 0.0),  # 0 = per-kind default tolerance
    },
    "null-control": {
        "region": ("floats", (0.3, 0.6)),
        "data": ("str", "sine:1"),
        "amplitude": ("float", 1.0),
        "check_factor": ("float", 1e-3),
    },
    "exact-control": {
        "data": ("str", "sine:1"),
        "amplitude": ("float", 1.0),
        "residual_factor": ("float", 1e-2),
    },
    "semilinear-control": {
        "region": ("floats", (0.3, 0.6)),
        "data": ("str", "sine:1"),
        "amplitude": ("float", 1.0),
        "r_exponent": ("float", 1.2),
        "sign": ("int", -1),
        "outer_tol": ("float", 1e-6),
        "max_outer": ("int", 20),
        "check_factor": ("float", 1e-2),
    },
    "observability": {
        "equation": ("str", "heat"),
        "mode": ("str", "initial"),
        "observation": ("str", "interior"),
        "region": ("floats", (0.3, 0.6)),
        "time_reversed": ("bool", False),
        "sweep": ("str", ""),
    },
    "lr-constant": {
        "omega": ("floats", (0.2, 0.4)),
        "modes": ("int", 10),
    },
    "stabilize": {
        "damping": ("str", "boundary"),
        "a_gain": ("float", 1.0),
        "c0": ("float", 1.0),
        "b_region": ("floats", (0.6, 1.0)),
        "q": ("float", 0.0),  # 0 = linear damping, no nonlinearity
        "growth_coeff": ("float", 0.0),
        "data": ("str", "sine:1"),
        "amplitude": ("float", 1.0),
    },
    "stoch-heat": {
        "paths": ("int", 512),
        "data": ("str", "sine:1"),
        "amplitude": ("float", 1.0),
        "law_tol": ("float", 0.15),
    },
    "stoch-identity": {
        "identity": ("str", "parabolic"),
        "instances": ("int", 10),
        "halvings": ("int", 0),  # 0 = skip the dt-refinement slope audit
        "slope_min": ("float", 0.9),
    },
    "geometry": {
        "principal": ("float", 1.0),
    },
    "kalman": {
        "systems": ("int", 100),
        "size_max": ("int", 5),
        "horizon": ("float", 1.0),
        "gram_tol": ("float", 1e-8),
    },
}

# kind-specific replacements for the generic section defaults; these are
# the grids the runners' asserted checks were calibrated on
KIND_DEFAULTS = {
    "null-control": {"n": 100, "dt": 2.5e-3, "t": 0.5},
    "exact-control": {"n": 100, "dt": 6.25e-4, "t": 2.5, "cg_tol": 2e-4},
    "semilinear-control": {"n": 60, "dt": 2e-3, "t": 0.4},
    "lr-constant": {},
    "stabilize": {"n": 200, "dt": 2.5e-3, "t": 12.0},
    "stoch-heat": {"n": 49, "dt": 2e-3, "t": 0.5, "noise_gain": 0.5},
    "geometry": {"dt": 2.5e-3, "t": 2.5},
    "kalman": {},
}

_FIELD_SECTION = {}  # config field name -> section, filled below


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment, fully resolved: every field set, every key known."""

    kind: str = "verify-identity"
    options: dict = field(default_factory=dict)
    # grid
    dim: int = 1
    n: int = 60
    dt: float = 1e-3
    t: float = 0.05
    # coefficient
    diffusivity: float = 1.0
    potential: float = 0.0
    convection: tuple = ()
    damping: float = 0.0
    noise_gain: float = 0.0
    # geometry
    x0: tuple = (-0.1,)
    eps: float = 0.15
    # solver
    tol: float = 1e-6
    max_iter: int = 500
    epsilon: float = 1e-8
    cg_tol: float = 1e-8
    filter_fraction: float = 0.05
    # rng
    seed: int = 0
    # output
    json: str = ""
    csv: str = ""
    dump_every: int = 0
    dump: str = ""

    @property
    def steps(self) -> int:
        steps = int(round(self.t / self.dt))
        if steps < 1 or abs(steps * self.dt - self.t) > 1e-9 * self.t:
            raise ConfigError(
                f"grid.t = {self.t} is not a positive integer multiple of "
                f"grid.dt = {self.dt}"
            )
        return steps


for _section, _keys in SECTION_KEYS.items():
    for _key in _keys:
        _FIELD_SECTION[_key] = _section


def _parse_value(raw: str, tag: str, where: str):
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "str":
            return raw
        if tag == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if tag == "floats":
            if not raw:
                return ()
            return tuple(float(part) for part in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise AssertionError(f"unknown schema tag {tag}")


def _kind_table(kind: str) -> dict:
    if kind not in KINDS:
        raise ConfigError(
            f"experiment.kind must be one of {', '.join(KINDS)}, got {kind!r}"
        )
    return KIND_OPTIONS[kind]


def default_config(kind: str = "verify-identity") -> ExperimentConfig:
    """The documented defaults for one experiment kind."""
    table = _kind_table(kind)
    fields = dict(KIND_DEFAULTS.get(kind, {}))
    options = {key: default for key, (_, default) in table.items()}
    return ExperimentConfig(kind=kind, options=options, **fields)


def load_config(path: str, kind: str = None) -> ExperimentConfig:
    """Parse an INI file; reject unknown sections and keys by name.

    When ``kind`` is given (the subcommand name), a conflicting
    ``experiment.kind`` in the file is an error rather than an override.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle, source=path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None

    sections = set(parser.sections())
    unknown = sections - set(SECTION_KEYS) - {"experiment"}
    if unknown:
        raise ConfigError(
            f"{path}: unknown section(s) {', '.join(sorted(unknown))}"
        )

    file_kind = None
    if parser.has_section("experiment") and parser.has_option("experiment", "kind"):
        file_kind = parser.get("experiment", "kind").strip()
    if kind is not None and file_kind is not None and file_kind != kind:
        raise ConfigError(
            f"{path}: experiment.kind = {file_kind!r} conflicts with the "
            f"{kind!r} subcommand"
        )
    resolved_kind = kind if kind is not None else (file_kind or "verify-identity")
    table = _kind_table(resolved_kind)

    cfg = default_config(resolved_kind)
    fields = {}
    options = dict(cfg.options)
    for section in parser.sections():
        for key, raw in parser.items(section):
            where = f"{path}: {section}.{key}"
            if section == "experiment":
                if key == "kind":
                    continue
                if key not in table:
                    raise ConfigError(
                        f"{where}: unknown key for kind {resolved_kind!r} "
                        f"(allowed: {', '.join(sorted(table))})"
                    )
                options[key] = _parse_value(raw, table[key][0], where)
            else:
                keys = SECTION_KEYS[section]
                if key not in keys:
                    raise ConfigError(
                        f"{where}: unknown key "
                        f"(allowed: {', '.join(sorted(keys))})"
                    )
                fields[key] = _parse_value(raw, keys[key][0], where)
    return dataclasses.replace(cfg, options=options, **fields)


def apply_overrides(cfg: ExperimentConfig, field_overrides: dict = None,
                    option_overrides: dict = None) -> ExperimentConfig:
    """Layer command-line values on top of a config; None means unset."""
    fields = {k: v for k, v in (field_overrides or {}).items() if v is not None}
    for key in fields:
        if key not in _FIELD_SECTION:
            raise ConfigError(f"no such config field: {key}")
    options = dict(cfg.options)
    table = _kind_table(cfg.kind)
    for key, value in (option_overrides or {}).items():
        if value is None:
            continue
        if key not in table:
            raise ConfigError(
                f"option {key!r} does not apply to kind {cfg.kind!r}"
            )
        options[key] = value
    return dataclasses.replace(cfg, options=options, **fields)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Cross-field checks shared by every runner; returns cfg unchanged."""
    _kind_table(cfg.kind)
    if cfg.dim < 1:
        raise ConfigError(f"grid.dim must be positive, got {cfg.dim}")
    if cfg.n < 2:
        raise ConfigError(f"grid.n must be at least 2, got {cfg.n}")
    if cfg.dt <= 0 or cfg.t <= 0:
        raise ConfigError(
            f"grid.dt and grid.t must be positive, got {cfg.dt}, {cfg.t}"
        )
    cfg.steps  # raises when t is not a multiple of dt
    if cfg.convection and len(cfg.convection) != cfg.dim:
        raise ConfigError(
            f"coefficient.convection needs {cfg.dim} entries, "
            f"got {len(cfg.convection)}"
        )
    if len(cfg.x0) != cfg.dim:
        raise ConfigError(
            f"geometry.x0 needs {cfg.dim} coordinates, got {len(cfg.x0)}"
        )
    if cfg.dump_every < 0:
        raise ConfigError(f"output.dump_every must be >= 0, got {cfg.dump_every}")
    return cfg


def config_echo(cfg: ExperimentConfig) -> dict:
    """Nested dict mirror of the config, in the documented section order."""
    echo = {"experiment": {"kind": cfg.kind}}
    for key in sorted(cfg.options):
        echo["experiment"][key] = _jsonable(cfg.options[key])
    for section, keys in SECTION_KEYS.items():
        echo[section] = {key: _jsonable(getattr(cfg, key)) for key in keys}
    return echo


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    return value
