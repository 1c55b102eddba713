"""Convergence diagnostics: weighted averages, consensus errors, gaps, rate fits."""

from __future__ import annotations

import csv
import math

import numpy as np

COLUMNS = ("t", "F_bar", "gap", "grad_norm", "cons_theta", "cons_psi", "max_delta")


def average_theta(theta, u) -> np.ndarray:
    """``sum_i u_i theta^i / m`` for stacked ``theta`` of shape (m, d)."""
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    # elementwise product then column sum, so u = 1 reproduces the arithmetic mean bit for bit
    return (u[:, None] * theta).sum(axis=0) / theta.shape[0]


def consensus_errors(theta, psi, u, v) -> tuple[float, float]:
    theta = np.asarray(theta, dtype=float)
    psi = np.asarray(psi, dtype=float)
    theta_bar = average_theta(theta, u)
    psi_bar = psi.mean(axis=0)
    cons_theta = float(np.linalg.norm(theta - theta_bar))
    cons_psi = float(np.linalg.norm(psi - np.outer(v, psi_bar)))
    return cons_theta, cons_psi


def objective_gap(theta_bar, problem) -> float:
    return float(problem.gap(theta_bar))


def trace_row(t, theta, psi, u, v, problem, max_delta=0.0) -> dict:
    theta_bar = average_theta(theta, u)
    cons_theta, cons_psi = consensus_errors(theta, psi, u, v)
    F_bar = problem.objective(theta_bar)
    return {
        "t": int(t),
        "F_bar": float(F_bar),
        "gap": float(F_bar - problem.optimum_value),
        "grad_norm": float(np.linalg.norm(problem.gradient(theta_bar))),
        "cons_theta": cons_theta,
        "cons_psi": cons_psi,
        "max_delta": float(max_delta),
    }


class MetricsTrace:
    def __init__(self, rows=None):
        self.rows: list[dict] = list(rows or [])

    def append(self, row: dict) -> None:
        if self.rows and row["t"] <= self.rows[-1]["t"]:
            raise ValueError("trace rows must have strictly increasing t")
        if not all(math.isfinite(row[c]) for c in COLUMNS):
            raise ValueError(f"non-finite entry in trace row at t={row['t']}")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def last(self) -> dict:
        return self.rows[-1]


def format_row(row: dict) -> list[str]:
    return [str(row["t"])] + [repr(float(row[c])) for c in COLUMNS[1:]]


class TraceWriter:
    """Delimited trace file, flushed every ``flush_interval`` rows."""

    def __init__(self, path, flush_interval: int = 10):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(COLUMNS)
        self.flush_interval = flush_interval
        self._pending = 0

    def __call__(self, row: dict) -> None:
        self._writer.writerow(format_row(row))
        self._pending += 1
        if self._pending >= self.flush_interval:
            self._fh.flush()
            self._pending = 0

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trace(path) -> MetricsTrace:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
        rows = [{k: (int(v) if k == "t" else float(v)) for k, v in r.items()} for r in reader]
    return MetricsTrace(rows)


def rate_fit(trace: MetricsTrace, column: str, window: tuple[float, float], power: float = 1.0) -> float:
    """Least-squares slope of ``log(column**power)`` against ``log t`` over ``window``.

    Zero entries and ``t = 0`` are ignored.
    """
    t = trace.column("t")
    y = np.abs(trace.column(column)) ** power
    keep = (t >= window[0]) & (t <= window[1]) & (t > 0) & (y > 0)
    if keep.sum() < 2:
        raise ValueError(f"need at least two positive points in window {window}")
    slope, _ = np.polyfit(np.log(t[keep]), np.log(y[keep]), 1)
    return float(slope)
