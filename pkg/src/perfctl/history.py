"""Iteration histories and their on-disk formats.

History files are JSON lines, one record per line, with exactly the keys

    {"i": int, "u": [flat control], "radii": [per-step radii] | null,
     "inner_value": float, "step_norm": float | null, "N_i": int,
     "wall_ms": null}

Record 0 is the starting (nominal) control: its radii and step_norm are
null.  ``wall_ms`` is always null in history files so that identical
configuration and seed reproduce byte-identical bytes; measured wall times
live in the summary CSV and run report instead.  Schema versions are
recorded in the run manifest.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatchError

__all__ = [
    "HISTORY_SCHEMA_VERSION",
    "SUMMARY_SCHEMA_VERSION",
    "IterationRecord",
    "IterationHistory",
    "save_history_jsonl",
    "load_history_jsonl",
    "write_summary_csv",
    "compare_histories",
    "CompareReport",
    "synthetic_history",
]

HISTORY_SCHEMA_VERSION = 1
SUMMARY_SCHEMA_VERSION = 1


@dataclass
class IterationRecord:
    i: int
    u: np.ndarray                      # (T, m)
    radii: Optional[np.ndarray]        # (T,) or None for the initial record
    inner_value: float
    step_norm: Optional[float]         # None for the initial record
    N_i: int                           # samples used (0 for ideal / initial)
    seed: Optional[int] = None
    wall_time: float = 0.0             # seconds, in-memory only

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.radii is not None:
            self.radii = np.asarray(self.radii, dtype=float)
            if np.any(self.radii < 0):
                raise ValueError("radii must be nonnegative")
        if self.step_norm is not None and self.step_norm < 0:
            raise ValueError("step_norm must be nonnegative")


@dataclass
class IterationHistory:
    algorithm: str                     # "e_irpc" | "i_irpc"
    n: int
    m: int
    T: int
    p: float
    master_seed: int
    records: list = field(default_factory=list)
    stop_reason: str = ""              # "fix_tol" | "iters_max" | "diverged"
    converged: bool = False
    diverged: bool = False

    @property
    def final_u(self):
        return self.records[-1].u

    def controls(self):
        return np.stack([r.u for r in self.records])

    def step_norms(self):
        return np.array([r.step_norm for r in self.records[1:]], dtype=float)

    def __len__(self):
        return len(self.records)


def _record_line(rec: IterationRecord) -> str:
    payload = {
        "i": rec.i,
        "u": [float(v) for v in rec.u.ravel()],
        "radii": None if rec.radii is None else [float(r) for r in rec.radii],
        "inner_value": float(rec.inner_value),
        "step_norm": None if rec.step_norm is None else float(rec.step_norm),
        "N_i": int(rec.N_i),
        "wall_ms": None,
    }
    return json.dumps(payload, separators=(", ", ": "))


def save_history_jsonl(history: IterationHistory, path_or_file):
    close = False
    if hasattr(path_or_file, "write"):
        fh = path_or_file
    else:
        fh = open(path_or_file, "w", newline="\n")
        close = True
    try:
        for rec in history.records:
            fh.write(_record_line(rec) + "\n")
    finally:
        if close:
            fh.close()


def load_history_jsonl(path_or_file):
    """Parse a history file back into a list of plain record dicts."""
    close = False
    if hasattr(path_or_file, "read"):
        fh = path_or_file
    else:
        fh = open(path_or_file, "r")
        close = True
    try:
        out = []
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
        return out
    finally:
        if close:
            fh.close()


def write_summary_csv(history: IterationHistory, path_or_file):
    close = False
    if hasattr(path_or_file, "write"):
        fh = path_or_file
    else:
        fh = open(path_or_file, "w", newline="")
        close = True
    try:
        writer = csv.writer(fh)
        mT = history.m * history.T
        header = (
            ["i", "step_norm", "inner_value", "N_i", "wall_ms"]
            + [f"u{j}" for j in range(mT)]
            + [f"r{t}" for t in range(history.T)]
        )
        writer.writerow(header)
        for rec in history.records:
            radii = [""] * history.T if rec.radii is None else [repr(float(r)) for r in rec.radii]
            writer.writerow(
                [
                    rec.i,
                    "" if rec.step_norm is None else repr(float(rec.step_norm)),
                    repr(float(rec.inner_value)),
                    rec.N_i,
                    repr(rec.wall_time * 1000.0),
                ]
                + [repr(float(v)) for v in rec.u.ravel()]
                + radii
            )
    finally:
        if close:
            fh.close()


@dataclass
class CompareReport:
    control_dist: np.ndarray        # per-iteration distance over shared prefix
    radii_dist: np.ndarray          # per-iteration max-abs radii difference
    terminal_dist: float
    len_a: int
    len_b: int

    def to_text(self):
        lines = [
            f"iterations: {self.len_a} vs {self.len_b}",
            f"terminal control distance: {self.terminal_dist:.6e}",
            "iter  |u_a - u_b|      max|r_a - r_b|",
        ]
        for i, (du, dr) in enumerate(zip(self.control_dist, self.radii_dist)):
            dr_s = f"{dr:.6e}" if np.isfinite(dr) else "-"
            lines.append(f"{i:4d}  {du:.6e}    {dr_s}")
        return "\n".join(lines)


def compare_histories(lines_a, lines_b) -> CompareReport:
    """Diff two loaded histories; they must share control and radii widths."""
    if not lines_a or not lines_b:
        raise ValueError("histories must be non-empty")

    def widths(lines):
        u_w = len(lines[0]["u"])
        r_w = next((len(l["radii"]) for l in lines if l["radii"] is not None), None)
        return u_w, r_w

    wa, wb = widths(lines_a), widths(lines_b)
    if wa[0] != wb[0] or (wa[1] is not None and wb[1] is not None and wa[1] != wb[1]):
        raise DimensionMismatchError(
            f"histories have mismatched shapes: controls {wa[0]} vs {wb[0]}, "
            f"radii {wa[1]} vs {wb[1]}"
        )
    k = min(len(lines_a), len(lines_b))
    du = np.empty(k)
    dr = np.empty(k)
    for i in range(k):
        ua = np.asarray(lines_a[i]["u"], dtype=float)
        ub = np.asarray(lines_b[i]["u"], dtype=float)
        du[i] = np.linalg.norm(ua - ub)
        ra, rb = lines_a[i]["radii"], lines_b[i]["radii"]
        if ra is None or rb is None:
            dr[i] = np.nan
        else:
            dr[i] = np.max(np.abs(np.asarray(ra) - np.asarray(rb)))
    term = float(
        np.linalg.norm(
            np.asarray(lines_a[-1]["u"], dtype=float)
            - np.asarray(lines_b[-1]["u"], dtype=float)
        )
    )
    return CompareReport(du, dr, term, len(lines_a), len(lines_b))


def synthetic_history(controls, algorithm="i_irpc", p=0.1) -> IterationHistory:
    """Wrap a plain sequence of controls (K+1, T, m) as a history.

    Handy for feeding diagnostics with externally generated iterates.
    """
    controls = np.asarray(controls, dtype=float)
    K1, T, m = controls.shape
    hist = IterationHistory(algorithm=algorithm, n=0, m=m, T=T, p=p, master_seed=0)
    for i in range(K1):
        step = None if i == 0 else float(np.linalg.norm(controls[i] - controls[i - 1]))
        hist.records.append(
            IterationRecord(i=i, u=controls[i], radii=None if i == 0 else np.zeros(T),
                            inner_value=0.0, step_norm=step, N_i=0)
        )
    return hist
