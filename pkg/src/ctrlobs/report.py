"""Machine-readable run reports: checks with thresholds, JSON and CSV.

The JSON emitter is hand-rolled for one reason: every float must carry
17 significant digits so that two runs with the same seed produce
byte-identical files, and ``json.dumps`` offers no hook for float
formatting.  Field order is fixed by construction (insertion order),
``wall_time_s`` is always the last top-level field, and no other field
depends on the clock, so "identical modulo timing" is a one-line strip.

A CSV emission is the checks table only; it is an artifact for sweep
tooling, not a round-trippable serialization.  ``parse_report`` reads
the JSON form back into an equal :class:`RunReport`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from . import __version__

__all__ = ["CheckOutcome", "RunReport", "emit_report", "parse_report"]

_OPS = {
    "<=": lambda v, t: v <= t,
    ">=": lambda v, t: v >= t,
    "<": lambda v, t: v < t,
    ">": lambda v, t: v > t,
    "==": lambda v, t: v == t,
}


@dataclass(frozen=True)
class CheckOutcome:
    """One asserted inequality: value against threshold."""

    name: str
    value: float
    threshold: float
    op: str
    passed: bool

    @staticmethod
    def evaluate(name: str, value: float, op: str, threshold: float) -> "CheckOutcome":
        if op not in _OPS:
            raise ValueError(f"unknown comparison {op!r}")
        return CheckOutcome(name, float(value), float(threshold), op,
                            bool(_OPS[op](value, threshold)))


@dataclass
class RunReport:
    """Config echo, check outcomes, free-form metrics, artifact paths."""

    experiment: str
    config: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    version: str = __version__
    wall_time_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite value in report: {x}")
    return f"{x:.17g}"


def _emit_value(value, indent: int, out: list) -> None:
    pad = "  " * indent
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(_fmt_float(value))
    elif isinstance(value, str):
        out.append(json.dumps(value))
    elif isinstance(value, dict):
        if not value:
            out.append("{}")
            return
        out.append("{\n")
        for i, (key, item) in enumerate(value.items()):
            out.append(f"{pad}  {json.dumps(str(key))}: ")
            _emit_value(item, indent + 1, out)
            out.append(",\n" if i + 1 < len(value) else "\n")
        out.append(pad + "}")
    elif isinstance(value, (list, tuple)):
        if not value:
            out.append("[]")
            return
        out.append("[\n")
        for i, item in enumerate(value):
            out.append(pad + "  ")
            _emit_value(item, indent + 1, out)
            out.append(",\n" if i + 1 < len(value) else "\n")
        out.append(pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(value).__name__} in report")


def _check_dict(check: CheckOutcome) -> dict:
    return {
        "name": check.name,
        "value": check.value,
        "threshold": check.threshold,
        "op": check.op,
        "pass": check.passed,
    }


def _report_dict(report: RunReport) -> dict:
    return {
        "version": report.version,
        "experiment": report.experiment,
        "config": report.config,
        "checks": [_check_dict(c) for c in report.checks],
        "metrics": report.metrics,
        "artifacts": report.artifacts,
        "pass": report.passed,
        "wall_time_s": report.wall_time_s,
    }


def emit_report(report: RunReport, format: str = "json", path: str = None) -> str:
    """Serialize the report; write to path when given; return the text."""
    if format == "json":
        out = []
        _emit_value(_report_dict(report), 0, out)
        out.append("\n")
        text = "".join(out)
    elif format == "csv":
        lines = ["name,value,threshold,op,pass"]
        for check in report.checks:
            lines.append(
                f"{check.name},{_fmt_float(check.value)},"
                f"{_fmt_float(check.threshold)},{check.op},{check.passed}"
            )
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"format must be json or csv, got {format!r}")
    if path:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
    return text


def parse_report(text: str) -> RunReport:
    """Inverse of the JSON emission: parse back into an equal RunReport."""
    raw = json.loads(text)
    checks = [
        CheckOutcome(c["name"], c["value"], c["threshold"], c["op"], c["pass"])
        for c in raw.get("checks", [])
    ]
    return RunReport(
        experiment=raw.get("experiment", ""),
        config=raw.get("config", {}),
        checks=checks,
        metrics=raw.get("metrics", {}),
        artifacts=raw.get("artifacts", {}),
        version=raw.get("version", __version__),
        wall_time_s=raw.get("wall_time_s", 0.0),
    )
