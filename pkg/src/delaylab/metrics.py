"""Derived diagnostics over recorded runs: gradient-velocity ratio, update
alignment, and cross-trial aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .vectors import dot, norm

__all__ = ["TraceRow", "gvr", "update_alignment", "final_metric", "aggregate"]


@dataclass
class TraceRow:
    """One recorded step. Per-group arrays are parallel to the group spec of
    the run; ``gvr`` uses ``inf`` as the zero-velocity sentinel."""

    step: int
    loss: float
    energy: float | None = None
    alpha: np.ndarray | None = None
    grad_norm: np.ndarray | None = None
    vel_norm: np.ndarray | None = None
    gvr: np.ndarray | None = None
    update_alignment: float | None = None
    accuracy: float | None = None


def gvr(g: np.ndarray, v: np.ndarray, start: int = 0, stop: int | None = None) -> float:
    """Gradient-velocity ratio ``||g|| / ||v||`` over one group; ``inf`` when
    the velocity is exactly zero."""
    nv = norm(v, start, stop)
    if nv == 0.0:
        return float("inf")
    return norm(g, start, stop) / nv


def update_alignment(
    g: np.ndarray,
    v: np.ndarray,
    alpha: float,
    momentum: float,
    start: int = 0,
    stop: int | None = None,
) -> float:
    """Cosine of the angle between the applied update ``m*v + alpha*g`` and the
    gradient, over one group. Clipped to [-1, 1] against roundoff."""
    gs = g[start:stop]
    vs = v[start:stop]
    upd = momentum * vs + alpha * gs
    denom = float(np.sqrt(upd @ upd)) * float(np.sqrt(gs @ gs))
    if denom == 0.0:
        return 0.0
    return float(np.clip(float(upd @ gs) / denom, -1.0, 1.0))


def final_metric(values: Sequence[float], last_k: int = 1) -> float:
    """Median over the last ``last_k`` recorded values of one run."""
    if not values:
        raise ValueError("no recorded values")
    tail = np.asarray(values[-last_k:], dtype=float)
    return float(np.median(tail))


def aggregate(
    runs: Sequence[Mapping[str, float]], percentiles: Sequence[float] = (50.0,)
) -> dict[str, dict[float, float]]:
    """Percentiles (linear interpolation) of each metric across trials.

    ``runs`` maps metric name to a scalar per run; every run must report the
    same metric names. The 50th percentile is the median.
    """
    if not runs:
        raise ValueError("aggregate requires at least one run")
    keys = runs[0].keys()
    out: dict[str, dict[float, float]] = {}
    for key in keys:
        vals = np.asarray([r[key] for r in runs], dtype=float)
        out[key] = {float(p): float(np.percentile(vals, p)) for p in percentiles}
    return out
