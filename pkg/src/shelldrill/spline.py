"""Parametric cubic splines for the drill path, in two flavors.

Both fits interpolate the same ordered 3-D knots with one cubic per
segment, parameterized by u in [0, 1]:

    s(u) = a + b*u + c*u**2 + d*u**3        (a..d are 3-vectors)

* ``fit_natural`` is the classic C2 spline (periodic end conditions when
  the path is closed, zero end curvature otherwise).  Smooth everywhere,
  but free to overshoot between knots.
* ``fit_constrained`` drops C2 continuity and instead prescribes the
  first derivative at every knot.  With the sign-guarded harmonic-mean
  tangent rule from :func:`compute_knot_derivatives`, every coordinate of
  every segment stays inside the closed interval spanned by its two end
  knots, which is what keeps the drill tip from ever dipping below a
  commanded depth.

A fitted :class:`SplinePath` is immutable; evaluation is safe to share
across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSegmentError, SplineFitError

__all__ = [
    "KnotDerivatives",
    "SplineSegment",
    "SplinePath",
    "compute_knot_derivatives",
    "fit_constrained",
    "fit_natural",
    "check_envelope",
    "max_abs_violation",
    "write_comparison_csv",
]


def _validate_knots(knots, closed: bool) -> np.ndarray:
    pts = np.asarray(knots, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"knots must be an (n, 3) array, got shape {pts.shape}")
    least = 3 if closed else 2          # a single open segment is legitimate
    if pts.shape[0] < least:
        raise ValueError(f"need at least {least} knots, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("knots must be finite")
    return pts


def _check_u(u: float) -> float:
    u = float(u)
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u={u} outside [0, 1]; segments do not extrapolate")
    return u


@dataclass(frozen=True, eq=False)
class KnotDerivatives:
    """First-derivative 3-vectors, one per knot, in knot order."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"derivatives must be (n, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("derivatives must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class SplineSegment:
    """One cubic piece; coefficients are 3-vectors, u runs over [0, 1]."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def evaluate(self, u: float) -> np.ndarray:
        u = _check_u(u)
        return self.a + u * (self.b + u * (self.c + u * self.d))

    def derivative1(self, u: float) -> np.ndarray:
        u = _check_u(u)
        return self.b + u * (2.0 * self.c + u * 3.0 * self.d)

    def derivative2(self, u: float) -> np.ndarray:
        u = _check_u(u)
        return 2.0 * self.c + u * 6.0 * self.d

    @property
    def start(self) -> np.ndarray:
        return self.a

    @property
    def end(self) -> np.ndarray:
        return self.a + self.b + self.c + self.d


class SplinePath:
    """An ordered run of cubic segments, open or closed."""

    def __init__(self, segments, closed: bool):
        segments = tuple(segments)
        if not segments:
            raise ValueError("path needs at least one segment")
        self.closed = bool(closed)
        self._a = np.array([s.a for s in segments], dtype=float)
        self._b = np.array([s.b for s in segments], dtype=float)
        self._c = np.array([s.c for s in segments], dtype=float)
        self._d = np.array([s.d for s in segments], dtype=float)
        for arr in (self._a, self._b, self._c, self._d):
            arr.setflags(write=False)
        self._segments = segments

    @classmethod
    def from_coefficients(cls, a, b, c, d, closed: bool) -> "SplinePath":
        a, b, c, d = (np.array(x, dtype=float) for x in (a, b, c, d))
        if a.ndim != 2 or a.shape[1] != 3 or a.shape[0] < 1 or \
                any(x.shape != a.shape for x in (b, c, d)):
            raise ValueError("coefficient arrays must share one (n_segments, 3) shape")
        path = cls.__new__(cls)
        path.closed = bool(closed)
        path._a, path._b, path._c, path._d = a, b, c, d
        for arr in (a, b, c, d):
            arr.setflags(write=False)
        path._segments = None           # built on demand; the hot loop never asks
        return path

    @property
    def segments(self) -> tuple:
        if self._segments is None:
            self._segments = tuple(
                SplineSegment(self._a[i], self._b[i], self._c[i], self._d[i])
                for i in range(self._a.shape[0]))
        return self._segments

    @property
    def n_segments(self) -> int:
        return self._a.shape[0]

    def _check_segment(self, i: int) -> int:
        i = int(i)
        if not 0 <= i < self.n_segments:
            raise IndexError(f"segment {i} out of range [0, {self.n_segments})")
        return i

    def evaluate(self, segment: int, u: float) -> np.ndarray:
        i = self._check_segment(segment)
        u = _check_u(u)
        return self._a[i] + u * (self._b[i] + u * (self._c[i] + u * self._d[i]))

    def evaluate_d1(self, segment: int, u: float) -> np.ndarray:
        i = self._check_segment(segment)
        u = _check_u(u)
        return self._b[i] + u * (2.0 * self._c[i] + u * 3.0 * self._d[i])

    def evaluate_d2(self, segment: int, u: float) -> np.ndarray:
        i = self._check_segment(segment)
        u = _check_u(u)
        return 2.0 * self._c[i] + u * 6.0 * self._d[i]

    def sample(self, us) -> np.ndarray:
        """Evaluate every segment at the given u grid; shape (n_seg, len(us), 3)."""
        u = np.asarray(us, dtype=float)
        if u.ndim != 1:
            raise ValueError("us must be 1-D")
        if u.size and (u.min() < 0.0 or u.max() > 1.0):
            raise ValueError("us outside [0, 1]")
        uu = u[None, :, None]
        return self._a[:, None, :] + uu * (
            self._b[:, None, :] + uu * (self._c[:, None, :] + uu * self._d[:, None, :])
        )

    @property
    def segment_starts(self) -> np.ndarray:
        return self._a

    @property
    def segment_ends(self) -> np.ndarray:
        return self._a + self._b + self._c + self._d

    def knots(self) -> np.ndarray:
        """Interpolated knots: n for a closed path, n+1 for an open one."""
        if self.closed:
            return self._a.copy()
        return np.vstack([self._a, self.segment_ends[-1:]])


def compute_knot_derivatives(knots, closed: bool) -> KnotDerivatives:
    """Per-knot tangents via the sign-guarded harmonic mean of chord slopes.

    Per coordinate: the harmonic mean of the two adjacent chord slopes when
    they share a sign, exactly zero at a local extreme (sign change or a
    zero chord slope).  Zeroing at extremes is what pins the interpolant
    inside the knot envelope.  Closed paths wrap their neighbors; open
    paths take the one-sided chord slope at each end.
    """
    pts = _validate_knots(knots, closed)
    if closed:
        chords = np.roll(pts, -1, axis=0) - pts          # chord i: knot i -> i+1 (wraps)
    else:
        chords = pts[1:] - pts[:-1]
    degenerate = np.all(chords == 0.0, axis=1)
    if degenerate.any():
        first = int(np.argmax(degenerate))
        raise DegenerateSegmentError(
            f"consecutive knots {first} and {first + 1} coincide"
        )
    if closed:
        left = np.roll(chords, 1, axis=0)                # chord arriving at knot i
        m = _harmonic_mean(left, chords)
    else:
        m = np.empty_like(pts)
        m[0] = chords[0]
        m[-1] = chords[-1]
        m[1:-1] = _harmonic_mean(chords[:-1], chords[1:])
    return KnotDerivatives(m)


def _harmonic_mean(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    # 2/(1/s1 + 1/s2) where the slopes agree in sign, else 0.
    same_sign = left * right > 0.0
    denom = left + right
    with np.errstate(divide="ignore", invalid="ignore"):
        hm = 2.0 * left * right / denom
    return np.where(same_sign, hm, 0.0)


def fit_constrained(knots, derivs, closed: bool) -> SplinePath:
    """Cubic interpolant with prescribed first derivatives at the knots.

    Per segment, with end knots p0 -> p1 and end tangents m0, m1, the four
    boundary conditions give the closed-form coefficients

        a = p0
        b = m0
        c = 3*(p1 - p0) - (m1 + 2*m0)
        d = 2*(p0 - p1) + m1 + m0

    componentwise.  Coincident end knots with zero tangents yield a
    constant segment.
    """
    pts = _validate_knots(knots, closed)
    m = derivs.values if isinstance(derivs, KnotDerivatives) else np.asarray(derivs, dtype=float)
    if m.shape != pts.shape:
        raise ValueError(
            f"need one derivative per knot: knots {pts.shape}, derivatives {m.shape}"
        )
    if closed:
        p0, p1 = pts, np.roll(pts, -1, axis=0)
        m0, m1 = m, np.roll(m, -1, axis=0)
    else:
        p0, p1 = pts[:-1], pts[1:]
        m0, m1 = m[:-1], m[1:]
    delta = p1 - p0
    a = p0.copy()
    b = m0.copy()
    c = 3.0 * delta - (m1 + 2.0 * m0)
    d = -2.0 * delta + (m1 + m0)
    return SplinePath.from_coefficients(a, b, c, d, closed)


def fit_natural(knots, closed: bool) -> SplinePath:
    """C2 cubic interpolant; periodic when closed, zero end curvature when open.

    Solves the standard second-derivative system on a uniform parameter
    (one unit per segment).  The system matrix is strictly diagonally
    dominant for distinct knots; a singular solve is re-raised as
    :class:`SplineFitError`.
    """
    pts = _validate_knots(knots, closed)
    n = pts.shape[0]
    if closed:
        system = np.zeros((n, n))
        idx = np.arange(n)
        system[idx, idx] = 4.0
        system[idx, (idx + 1) % n] += 1.0
        system[idx, (idx - 1) % n] += 1.0
        rhs = 6.0 * (np.roll(pts, -1, axis=0) - 2.0 * pts + np.roll(pts, 1, axis=0))
    else:
        system = np.zeros((n, n))
        system[0, 0] = 1.0
        system[n - 1, n - 1] = 1.0
        rhs = np.zeros_like(pts)
        for i in range(1, n - 1):
            system[i, i - 1] = 1.0
            system[i, i] = 4.0
            system[i, i + 1] = 1.0
        rhs[1:-1] = 6.0 * (pts[2:] - 2.0 * pts[1:-1] + pts[:-2])
    try:
        curv = np.linalg.solve(system, rhs)              # second derivatives at knots
    except np.linalg.LinAlgError as exc:
        raise SplineFitError(f"spline system is singular: {exc}") from exc
    if closed:
        p0, p1 = pts, np.roll(pts, -1, axis=0)
        k0, k1 = curv, np.roll(curv, -1, axis=0)
    else:
        p0, p1 = pts[:-1], pts[1:]
        k0, k1 = curv[:-1], curv[1:]
    a = p0.copy()
    b = (p1 - p0) - (2.0 * k0 + k1) / 6.0
    c = k0 / 2.0
    d = (k1 - k0) / 6.0
    return SplinePath.from_coefficients(a, b, c, d, closed)


def check_envelope(path: SplinePath, axis: int, samples_per_segment: int = 1000) -> np.ndarray:
    """Per-segment signed envelope violation along one coordinate axis.

    For each segment the chosen coordinate is densely sampled and compared
    against the closed interval spanned by the segment's two end knots.
    Positive entries exceed the upper bound, negative fall below the lower
    bound, zero means the segment stays inside.  The reported magnitude is
    the worst excursion.
    """
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1, or 2, got {axis}")
    if samples_per_segment < 2:
        raise ValueError("need at least 2 samples per segment")
    us = np.linspace(0.0, 1.0, samples_per_segment)
    vals = path.sample(us)[:, :, axis]
    start = path.segment_starts[:, axis]
    end = path.segment_ends[:, axis]
    lo = np.minimum(start, end)
    hi = np.maximum(start, end)
    above = np.maximum(vals.max(axis=1) - hi, 0.0)
    below = np.maximum(lo - vals.min(axis=1), 0.0)
    return np.where(above >= below, above, -below)


def max_abs_violation(path: SplinePath, samples_per_segment: int = 1000) -> float:
    """Worst envelope violation magnitude over all three axes."""
    worst = 0.0
    for axis in range(3):
        v = np.abs(check_envelope(path, axis, samples_per_segment))
        worst = max(worst, float(v.max()))
    return worst


def write_comparison_csv(fileobj, constrained: SplinePath, natural: SplinePath,
                         samples_per_segment: int = 1000) -> int:
    """Dense-sample both fits over the same knots into a CSV for plotting.

    Columns: segment, u, x, y, z_constrained, z_natural.  The x/y columns
    come from the constrained fit.  Returns the number of data rows,
    which is n_segments * samples_per_segment.
    """
    if constrained.n_segments != natural.n_segments:
        raise ValueError("paths must share the same segment count")
    us = np.linspace(0.0, 1.0, samples_per_segment)
    pc = constrained.sample(us)
    pn = natural.sample(us)
    writer = csv.writer(fileobj)
    writer.writerow(["segment", "u", "x", "y", "z_constrained", "z_natural"])
    rows = 0
    for i in range(constrained.n_segments):
        for j, u in enumerate(us):
            writer.writerow([
                i,
                f"{u:.9f}",
                f"{pc[i, j, 0]:.12g}",
                f"{pc[i, j, 1]:.12g}",
                f"{pc[i, j, 2]:.12g}",
                f"{pn[i, j, 2]:.12g}",
            ])
            rows += 1
    return rows
