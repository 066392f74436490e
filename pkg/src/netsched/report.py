"""CSV output for traces, replicate summaries and policy comparisons."""

from __future__ import annotations

import csv
from collections.abc import Sequence
from pathlib import Path
from typing import TextIO

import numpy as np

from .simulator import SimulationTrace

__all__ = ["emit_summary_csv", "emit_trace_csv", "fmt"]


def fmt(x: float) -> str:
    """Shortest text that keeps 17 significant digits (round-trips a double)."""
    return format(float(x), ".17g")


def _open(dest: str | Path | TextIO):
    if isinstance(dest, (str, Path)):
        return open(dest, "w", newline="", encoding="utf-8"), True
    return dest, False


def emit_trace_csv(trace: SimulationTrace, dest: str | Path | TextIO) -> int:
    """Write one row per (step, agent); agents are 1-based.  Returns the row count."""
    fh, owned = _open(dest)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "agent", "error_sq", "gamma", "granted", "policy"])
        rows = 0
        for k in range(trace.horizon):
            pol = trace.policy[k].value
            for i in range(trace.n_agents):
                w.writerow(
                    [k, i + 1, fmt(trace.error_sq[k, i]), int(trace.gamma[k, i]), int(trace.granted[k, i]), pol]
                )
                rows += 1
        return rows
    finally:
        if owned:
            fh.close()


def emit_summary_csv(
    mean: Sequence[float],
    dest: str | Path | TextIO,
    stderr: Sequence[float] | None = None,
) -> int:
    """Write ``step,mean_error_sq`` rows, plus a ``stderr`` column when given."""
    mean = np.asarray(mean, dtype=float)
    if stderr is not None and len(stderr) != len(mean):
        raise ValueError("mean and stderr lengths differ")
    fh, owned = _open(dest)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "mean_error_sq"] + (["stderr"] if stderr is not None else []))
        for k, m in enumerate(mean):
            w.writerow([k, fmt(m)] + ([fmt(stderr[k])] if stderr is not None else []))
        return len(mean)
    finally:
        if owned:
            fh.close()
