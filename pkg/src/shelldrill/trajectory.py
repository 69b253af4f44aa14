"""Circular drilling path: discretization, completion-modulated descent, respline.

The path is a ring of n points whose x/y never move.  Each control tick
lowers every point by (1 - completion) * v0 * T, so a point glides to a
halt exactly as its local completion reaches 1.  After each update the
ring is re-fit with the constrained (no-overshoot) spline so the tip can
be commanded anywhere along the lap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import spline
from .errors import InvalidDiscretizationError

log = logging.getLogger(__name__)


@dataclass
class TrajectoryPoint:
    """One discrete path point; index is 1-based along the ring."""

    index: int
    x: float
    y: float
    z: float
    completion: float = 0.0


def discretize_circle(center, radius: float, n: int) -> list[TrajectoryPoint]:
    """n points counter-clockwise from +x on a horizontal circle."""
    if n < 3:
        raise InvalidDiscretizationError(f"need at least 3 points, got n={n}")
    if radius <= 0.0:
        raise InvalidDiscretizationError(f"radius must be positive, got {radius}")
    cx, cy, cz = (float(v) for v in center)
    angles = 2.0 * np.pi * np.arange(n) / n
    return [
        TrajectoryPoint(
            index=k + 1,
            x=cx + radius * math.cos(angles[k]),
            y=cy + radius * math.sin(angles[k]),
            z=cz,
        )
        for k in range(n)
    ]


class PathState:
    """Mutable per-trial ring state: fixed x/y, descending z, last completions.

    Owned by a single control loop; nothing here is thread-safe.
    """

    def __init__(self, points: list[TrajectoryPoint], v0: float, period: float):
        if len(points) < 3:
            raise InvalidDiscretizationError("path needs at least 3 points")
        if v0 <= 0.0:
            raise ValueError(f"v0 must be positive, got {v0}")
        if period <= 0.0:
            raise ValueError(f"tick period must be positive, got {period}")
        z0 = points[0].z
        if any(abs(p.z - z0) > 1e-12 for p in points):
            raise ValueError("all points must share the same initial z")
        self.xy = np.array([[p.x, p.y] for p in points], dtype=float)
        self.xy.setflags(write=False)
        self.z = np.array([p.z for p in points], dtype=float)
        self.completions = np.array([p.completion for p in points], dtype=float)
        self.v0 = float(v0)
        self.period = float(period)
        self.elapsed = 0.0

    @property
    def n(self) -> int:
        return self.xy.shape[0]

    def knots(self) -> np.ndarray:
        return np.column_stack([self.xy, self.z])

    def point(self, i: int) -> TrajectoryPoint:
        """Snapshot of point i (0-based argument, 1-based index field)."""
        return TrajectoryPoint(
            index=i + 1,
            x=float(self.xy[i, 0]),
            y=float(self.xy[i, 1]),
            z=float(self.z[i]),
            completion=float(self.completions[i]),
        )


def lowering_velocity(completion: float, v0: float) -> float:
    """Descent speed for one point: v0 when uncut, zero once complete."""
    if v0 < 0.0:
        raise ValueError(f"v0 must be non-negative, got {v0}")
    c = float(completion)
    if c < 0.0 or c > 1.0:
        log.warning("completion %.4f outside [0, 1]; clamping", c)
        c = min(1.0, max(0.0, c))
    return (1.0 - c) * v0


def integrate_depths(state: PathState, completions) -> PathState:
    """One tick of completion-modulated descent; mutates and returns state."""
    c = np.asarray(completions, dtype=float)
    if c.shape != (state.n,):
        raise ValueError(f"need one completion per point: got {c.shape}, n={state.n}")
    bad = (c < 0.0) | (c > 1.0)
    if bad.any():
        log.warning("%d completion value(s) outside [0, 1]; clamping", int(bad.sum()))
        c = np.clip(c, 0.0, 1.0)
    state.completions = c.copy()
    state.z -= (1.0 - c) * state.v0 * state.period
    state.elapsed += state.period
    return state


def rebuild_path(state: PathState) -> spline.SplinePath:
    """Closed constrained spline through the ring at its current depths."""
    knots = state.knots()
    derivs = spline.compute_knot_derivatives(knots, closed=True)
    return spline.fit_constrained(knots, derivs, closed=True)


def setpoint_at(path: spline.SplinePath, phase: float) -> np.ndarray:
    """Tip setpoint for a lap fraction.

    phase in [0, 1) maps linearly onto the path's segments: phase = k/n
    lands exactly on knot k.  A small snap tolerance keeps k/n arithmetic
    from straddling a segment boundary.
    """
    phase = float(phase)
    if not 0.0 <= phase < 1.0:
        raise ValueError(f"phase={phase} outside [0, 1)")
    n = path.n_segments
    m = phase * n
    seg = min(int(math.floor(m + 1e-9)), n - 1)
    u = min(max(m - seg, 0.0), 1.0)
    return path.evaluate(seg, u)
