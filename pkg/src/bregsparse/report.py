"""Solver reports and the structured-text report format.

A report file is a version header line followed by sections::

    # bregsparse-report v1
    [config]
    mu = 0.10000000000000001
    [table trace]
    iteration objective
    0 1.5
    1 1.25

Key-value sections hold one ``key = value`` per line; table sections start
with a whitespace-separated column header. Floats are written with 17
significant digits so they round-trip exactly.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

import numpy as np

FORMAT_VERSION = "bregsparse-report v1"
HEADER = f"# {FORMAT_VERSION}"


class Termination(str, enum.Enum):
    Converged = "Converged"
    MaxIters = "MaxIters"
    Infeasible = "Infeasible"


@dataclass
class SolverReport:
    objective_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    termination: Termination = Termination.Converged
    wall_time: float = 0.0
    feasibility: dict[str, bool] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    events: list[str] = field(default_factory=list)

    def is_monotone(self, slack: float = 0.0) -> bool:
        t = np.asarray(self.objective_trace, dtype=float)
        return bool(np.all(np.diff(t) <= slack))

    def sections(self) -> list[tuple[str, Any]]:
        """Report sections, excluding wall time so reruns are byte-identical."""
        summary = {
            "termination": self.termination.value,
            "iterations": self.iterations,
            "trace_length": len(self.objective_trace),
            "final_objective": self.objective_trace[-1] if self.objective_trace else float("nan"),
        }
        summary.update({f"feasible_{k}": v for k, v in sorted(self.feasibility.items())})
        out: list[tuple[str, Any]] = [("solver", summary)]
        if self.events:
            out.append(("events", Table(["event"], [[e.replace(" ", "_")] for e in self.events])))
        out.append(("trace", Table(["iteration", "objective"],
                                   [[i, v] for i, v in enumerate(self.objective_trace)])))
        return out


@dataclass
class Table:
    columns: list[str]
    rows: list[list[Any]]

    def column(self, name: str) -> list[str]:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def fmt_value(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(fmt_value(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def format_report(sections: list[tuple[str, Any]]) -> str:
    lines = [HEADER]
    for name, body in sections:
        if isinstance(body, Table):
            lines.append(f"[table {name}]")
            lines.append(" ".join(body.columns))
            lines.extend(" ".join(fmt_value(x) for x in row) for row in body.rows)
        else:
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {fmt_value(v)}" for k, v in body.items())
    return "\n".join(lines) + "\n"


def write_report(path, sections: list[tuple[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report(sections))


class ReportFormatError(ValueError):
    pass


def parse_report(text: str) -> dict[str, Any]:
    """Inverse of :func:`format_report`; values come back as strings."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ReportFormatError(f"missing header {HEADER!r}")
    out: dict[str, Any] = {}
    current = None
    expect_columns = False
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1]
            if name.startswith("table "):
                current = Table([], [])
                out[name[6:]] = current
                expect_columns = True
            else:
                current = {}
                out[name] = current
            continue
        if current is None:
            raise ReportFormatError(f"line {lineno}: content outside a section")
        if isinstance(current, Table):
            if expect_columns:
                current.columns = line.split()
                expect_columns = False
            else:
                row = line.split()
                if len(row) != len(current.columns):
                    raise ReportFormatError(f"line {lineno}: expected {len(current.columns)} fields")
                current.rows.append(row)
        else:
            key, sep, value = line.partition(" = ")
            if not sep:
                raise ReportFormatError(f"line {lineno}: expected 'key = value'")
            current[key] = value
    return out


def read_report(path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return parse_report(fh.read())
