"""Virtual eggshell specimen and the drill/material interaction.

The specimen is three height fields on a uniform x/y grid over the
drilling region:

* ``z_out`` — outer surface: a spherical cap (or a plane) plus a tilt,
* ``h``    — shell thickness: base value plus a smooth band-limited
  variation, clipped to a positive floor,
* ``r``    — removal depth, monotonically grown by the drill.

Removal is geometric: the cutter face is a horizontal disk at the tip's
z, and everything above it inside the burr radius is gone.  That makes
removal independent of how finely a sweep is time-sampled.  The membrane
sits at z_out - h; the rupture latch fires when the tip axis is driven
more than the membrane tolerance below it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecimenError, OutOfRegionError

#: completion level treated as a full cut when judging detachability
FULL_CUT_LEVEL = 0.99
#: completion at or below this forms an "uncut bridge" between ring points
BRIDGE_LEVEL = 0.5

_VARIATION_COMPONENTS = 6


@dataclass
class SpecimenConfig:
    """Geometry, material, and grid parameters for one virtual shell.

    Lengths are meters and angles degrees.  ``cap_radius=None`` means a
    flat outer surface.  ``grid_extent`` is the side length of the square
    simulated region; callers usually derive it from the drill circle.
    """

    base_thickness: float = 300e-6
    variation_amplitude: float = 0.2          # relative, peak of the smooth field
    variation_wavelength: float = 5e-3
    cap_radius: float | None = 0.03
    tilt_deg: float = 0.0
    tilt_axis_deg: float = 0.0                # axis the shell rotates about, in the x/y plane
    grid_resolution: int = 256
    grid_extent: float | None = 0.02   # None: the caller derives it from context
    center: tuple[float, float] = (0.0, 0.0)
    h_min: float = 50e-6
    membrane_tolerance: float = 20e-6
    seed: int = 0


@dataclass
class DrillTool:
    """Cylindrical burr: tip position (3,) and cutting radius."""

    tip: np.ndarray
    radius: float
    active: bool = True

    def __post_init__(self):
        self.tip = np.asarray(self.tip, dtype=float).reshape(3)
        if self.radius <= 0.0:
            raise ValueError(f"burr radius must be positive, got {self.radius}")


class ShellSpecimen:
    """Grid-sampled shell state.  Mutated only through :func:`apply_drill`."""

    def __init__(self, config: SpecimenConfig, xs, ys, z_out, h):
        self.config = config
        self.xs = xs                      # (res,) grid node x coordinates
        self.ys = ys                      # (res,) grid node y coordinates
        self.z_out = z_out                # (res, res), indexed [iy, ix]
        self.h = h
        self.r = np.zeros_like(z_out)
        self.membrane_tolerance = float(config.membrane_tolerance)
        self._ruptured = False
        for arr in (self.xs, self.ys, self.z_out, self.h):
            arr.setflags(write=False)
        self._dx = float(xs[1] - xs[0])
        self._dy = float(ys[1] - ys[0])
        self._z_in = self.z_out - self.h  # membrane height field
        self._z_in.setflags(write=False)
        self._cut_cap = self.h + self.membrane_tolerance  # removal ceiling
        self._cut_cap.setflags(write=False)
        self._x0 = float(xs[0])
        self._y0 = float(ys[0])
        self._stamp_cache = {}            # (tx, ty, rb) -> burr footprint
        self._plan_cache = {}             # bbox/size -> pixel sampling plan

    @property
    def resolution(self) -> int:
        return self.z_out.shape[0]

    @property
    def ruptured(self) -> bool:
        return self._ruptured

    # -- interpolation ----------------------------------------------------

    def _fractional_index(self, x, y, clamp: bool):
        fx = (np.asarray(x, dtype=float) - self.xs[0]) / self._dx
        fy = (np.asarray(y, dtype=float) - self.ys[0]) / self._dy
        hi = self.resolution - 1
        if clamp:
            fx = np.clip(fx, 0.0, hi)
            fy = np.clip(fy, 0.0, hi)
        else:
            eps = 1e-9
            if np.any(fx < -eps) or np.any(fx > hi + eps) or \
               np.any(fy < -eps) or np.any(fy > hi + eps):
                raise OutOfRegionError(
                    "query outside the simulated shell region "
                    f"[{self.xs[0]:.6g}, {self.xs[-1]:.6g}] x [{self.ys[0]:.6g}, {self.ys[-1]:.6g}]"
                )
            fx = np.clip(fx, 0.0, hi)
            fy = np.clip(fy, 0.0, hi)
        return fx, fy

    def bilinear(self, fieldname: str, x, y, clamp: bool = False) -> np.ndarray:
        """Bilinear sample of one of the fields ('z_out', 'h', 'r', 'z_in')."""
        grid = {"z_out": self.z_out, "h": self.h, "r": self.r, "z_in": self._z_in}[fieldname]
        fx, fy = self._fractional_index(x, y, clamp)
        ix = np.minimum(fx.astype(int), self.resolution - 2)
        iy = np.minimum(fy.astype(int), self.resolution - 2)
        wx = fx - ix
        wy = fy - iy
        v00 = grid[iy, ix]
        v01 = grid[iy, ix + 1]
        v10 = grid[iy + 1, ix]
        v11 = grid[iy + 1, ix + 1]
        return (v00 * (1 - wy) * (1 - wx) + v01 * (1 - wy) * wx
                + v10 * wy * (1 - wx) + v11 * wy * wx)


def make_specimen(config: SpecimenConfig) -> ShellSpecimen:
    """Build a specimen from its config; identical seeds give identical fields."""
    if config.base_thickness <= 0.0:
        raise InvalidSpecimenError(
            f"base_thickness must be positive, got {config.base_thickness}")
    if config.h_min <= 0.0:
        raise InvalidSpecimenError(f"h_min must be positive, got {config.h_min}")
    if config.grid_resolution < 64:
        raise InvalidSpecimenError(
            f"grid_resolution must be at least 64, got {config.grid_resolution}")
    if config.grid_extent is None or config.grid_extent <= 0.0:
        raise InvalidSpecimenError(f"grid_extent must be positive, got {config.grid_extent}")
    if not 0.0 <= config.variation_amplitude < 1.0:
        raise InvalidSpecimenError(
            f"variation_amplitude must be in [0, 1), got {config.variation_amplitude}")
    if config.variation_wavelength <= 0.0:
        raise InvalidSpecimenError("variation_wavelength must be positive")
    if config.membrane_tolerance < 0.0:
        raise InvalidSpecimenError("membrane_tolerance must be non-negative")

    res = config.grid_resolution
    half = config.grid_extent / 2.0
    cx, cy = (float(v) for v in config.center)
    xs = cx + np.linspace(-half, half, res)
    ys = cy + np.linspace(-half, half, res)
    gx, gy = np.meshgrid(xs, ys)          # [iy, ix]

    # outer surface: spherical cap with apex z=0 at the region center, plus tilt
    if config.cap_radius is None or math.isinf(config.cap_radius):
        z_out = np.zeros((res, res))
    else:
        rc = float(config.cap_radius)
        half_diag = half * math.sqrt(2.0)
        if rc <= half_diag:
            raise InvalidSpecimenError(
                f"cap_radius {rc:.4g} must exceed the region half-diagonal {half_diag:.4g}")
        rho2 = (gx - cx) ** 2 + (gy - cy) ** 2
        z_out = -(rc - np.sqrt(rc * rc - rho2))
    if config.tilt_deg != 0.0:
        tilt = math.radians(config.tilt_deg)
        axis = math.radians(config.tilt_axis_deg)
        # downhill direction is perpendicular to the tilt axis
        z_out = z_out + math.sin(tilt) * (
            -math.sin(axis) * (gx - cx) + math.cos(axis) * (gy - cy)
        )

    h = np.full((res, res), float(config.base_thickness))
    if config.variation_amplitude > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        raw = np.zeros((res, res))
        for _ in range(_VARIATION_COMPONENTS):
            theta = rng.uniform(0.0, np.pi)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            k = 2.0 * np.pi / config.variation_wavelength
            raw += np.sin(k * (gx * math.cos(theta) + gy * math.sin(theta)) + phase)
        peak = np.abs(raw).max()
        if peak > 0.0:
            h = h * (1.0 + config.variation_amplitude * raw / peak)
    h = np.maximum(h, config.h_min)

    return ShellSpecimen(config, xs, ys, np.ascontiguousarray(z_out), np.ascontiguousarray(h))


def apply_drill(specimen: ShellSpecimen, tool: DrillTool, dt: float = 0.0) -> None:
    """Cut with the tool at its current tip position.

    Every grid cell within the burr radius has its removal raised to the
    cutter-face depth (z_out - tip_z), capped at thickness plus membrane
    tolerance.  ``dt`` is accepted for interface stability but unused:
    removal is geometric, not rate-based.  The rupture latch compares the
    tip against the membrane directly beneath the drill axis.
    """
    if not tool.active:
        raise ValueError("drill tool is not active")
    t = tool.tip
    tx, ty, tz = float(t[0]), float(t[1]), float(t[2])
    rb = float(tool.radius)
    res = specimen.z_out.shape[0]
    dx, dy = specimen._dx, specimen._dy

    # membrane check under the tip axis (only meaningful inside the region);
    # inlined scalar bilinear: this is the hottest call in the simulator
    fx = (tx - specimen._x0) / dx
    fy = (ty - specimen._y0) / dy
    hi = res - 1
    if -1e-9 <= fx <= hi + 1e-9 and -1e-9 <= fy <= hi + 1e-9:
        ix = min(max(int(fx), 0), res - 2)
        iy = min(max(int(fy), 0), res - 2)
        wx = min(max(fx - ix, 0.0), 1.0)
        wy = min(max(fy - iy, 0.0), 1.0)
        g = specimen._z_in
        z_in_tip = (g[iy, ix] * (1 - wy) * (1 - wx) + g[iy, ix + 1] * (1 - wy) * wx
                    + g[iy + 1, ix] * wy * (1 - wx) + g[iy + 1, ix + 1] * wy * wx)
        if tz < z_in_tip - specimen.membrane_tolerance:
            specimen._ruptured = True

    # burr footprint: flat indices of the grid cells inside the cutting
    # disk plus their surface and cap values; cached because quasi-static
    # drilling stamps the same (x, y) positions every tick
    key = (tx, ty, rb)
    entry = specimen._stamp_cache.get(key)
    if entry is None:
        # uniform grid, so the window comes from index arithmetic
        ix0 = max(0, math.ceil((tx - rb - specimen._x0) / dx - 1e-12))
        ix1 = min(res, math.floor((tx + rb - specimen._x0) / dx + 1e-12) + 1)
        iy0 = max(0, math.ceil((ty - rb - specimen._y0) / dy - 1e-12))
        iy1 = min(res, math.floor((ty + rb - specimen._y0) / dy + 1e-12) + 1)
        if ix0 >= ix1 or iy0 >= iy1:
            idx = np.empty(0, dtype=np.intp)
        else:
            wxs = specimen.xs[ix0:ix1]
            wys = specimen.ys[iy0:iy1]
            inside = ((wxs[None, :] - tx) ** 2 + (wys[:, None] - ty) ** 2) <= rb * rb
            iyy, ixx = np.nonzero(inside)
            idx = (iyy + iy0) * res + (ixx + ix0)
        entry = (idx, specimen.z_out.ravel()[idx], specimen._cut_cap.ravel()[idx])
        if len(specimen._stamp_cache) < 512:
            specimen._stamp_cache[key] = entry
    idx, z_vals, cap_vals = entry
    if idx.size == 0:
        return
    cut = z_vals - tz
    np.minimum(cut, cap_vals, out=cut)
    r_flat = specimen.r.ravel()
    np.maximum(cut, r_flat[idx], out=cut)
    r_flat[idx] = cut


class BilinearPlan:
    """Precomputed gather indices and weights for one set of sample points.

    Re-sampling a changing field at fixed positions (the camera's pixel
    grid) skips all coordinate math after the first frame.
    """

    __slots__ = ("_i00", "_i01", "_i10", "_i11", "_w00", "_w01", "_w10", "_w11",
                 "shape")

    def __init__(self, ix, iy, wx, wy, res: int, shape):
        base = iy * res + ix
        self._i00 = base
        self._i01 = base + 1
        self._i10 = base + res
        self._i11 = base + res + 1
        self._w00 = (1 - wy) * (1 - wx)
        self._w01 = (1 - wy) * wx
        self._w10 = wy * (1 - wx)
        self._w11 = wy * wx
        self.shape = shape

    def sample(self, grid: np.ndarray) -> np.ndarray:
        flat = grid.ravel()
        out = flat[self._i00] * self._w00
        out += flat[self._i01] * self._w01
        out += flat[self._i10] * self._w10
        out += flat[self._i11] * self._w11
        return out.reshape(self.shape)


def prepare_bilinear(specimen: ShellSpecimen, x, y, clamp: bool = False) -> BilinearPlan:
    """Build a reusable sampling plan for the given query positions."""
    xq = np.asarray(x, dtype=float)
    yq = np.asarray(y, dtype=float)
    fx, fy = specimen._fractional_index(xq, yq, clamp)
    res = specimen.resolution
    ix = np.minimum(fx.astype(np.intp), res - 2)
    iy = np.minimum(fy.astype(np.intp), res - 2)
    return BilinearPlan(ix, iy, fx - ix, fy - iy, res, xq.shape)


def completion_at(specimen: ShellSpecimen, x: float, y: float) -> float:
    """Fraction of shell thickness removed at (x, y), clamped to [0, 1]."""
    r = specimen.bilinear("r", x, y)
    h = specimen.bilinear("h", x, y)
    return float(min(1.0, max(0.0, r / h)))


def completion_grid(specimen: ShellSpecimen, xs, ys, clamp: bool = False) -> np.ndarray:
    """Vectorized :func:`completion_at` over coordinate arrays."""
    r = specimen.bilinear("r", xs, ys, clamp=clamp)
    h = specimen.bilinear("h", xs, ys, clamp=clamp)
    return np.clip(r / h, 0.0, 1.0)


def membrane_ruptured(specimen: ShellSpecimen) -> bool:
    """True once any drill application drove the tip past the membrane."""
    return specimen.ruptured


def patch_detachable(specimen: ShellSpecimen, points_xy,
                     coverage_threshold: float = 0.0,
                     full_cut_level: float = FULL_CUT_LEVEL,
                     bridge_level: float = BRIDGE_LEVEL) -> bool:
    """Can the cut patch be lifted out?

    Two conditions: at least ``coverage_threshold`` of the ring points
    must be fully cut (completion >= ``full_cut_level``), and no two or
    more consecutive ring points may sit at or below ``bridge_level`` —
    a run like that is an uncut bridge that holds the patch in place.
    Consecutiveness wraps around the ring.
    """
    pts = np.asarray(points_xy, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError(f"points_xy must be (n>=3, 2), got {pts.shape}")
    c = completion_grid(specimen, pts[:, 0], pts[:, 1])
    if np.count_nonzero(c >= full_cut_level) / c.size < coverage_threshold:
        return False
    bridged = c <= bridge_level
    if bridged.all():
        return False
    if not bridged.any():
        return True
    # longest cyclic run of bridged points
    doubled = np.concatenate([bridged, bridged])
    run = 0
    longest = 0
    for flag in doubled:
        run = run + 1 if flag else 0
        longest = max(longest, run)
    return min(longest, c.size) < 2


def dump_fields(specimen: ShellSpecimen, thickness_path, removal_path) -> None:
    """Write thickness and removal as comma-separated matrix rows."""
    np.savetxt(thickness_path, specimen.h, delimiter=",")
    np.savetxt(removal_path, specimen.r, delimiter=",")
