"""Completion sensing: rendered maps, corruption, and the progress bar.

The simulated sensor mimics the I/O contract of an image-based completion
predictor: a 128x128 two-channel map (completion in [0, 1] plus a drill
occlusion mask) rendered over a fixed bounding box, corrupted by a
spatially smooth multiplicative error field, and reduced to one value per
ring point by a small-window average that only ever ratchets upward.

The error field is deliberately low-frequency rather than per-pixel
i.i.d.: prediction errors of a real network are regionally coherent, and
independent pixel noise would simply average away inside the bin window.
An optional first-order temporal recursion keeps a region's error
persistent across frames, and an optional angular sector can be rescaled
or offset to reproduce systematic over-/under-prediction of one part of
the ring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    CalibrationError,
    InvalidBBoxError,
    UndefinedMetricError,
)
from .specimen import ShellSpecimen, prepare_bilinear

MAP_SIZE = 128
#: completion values below this are excluded from relative-error metrics
MAPE_TRUTH_FLOOR = 0.05
#: bin window radius around each ring point, in pixels
BIN_WINDOW_RADIUS_PX = 2


@dataclass(frozen=True, eq=False)
class CompletionMap:
    """Two-channel sensor frame over a world-space bounding box.

    ``completion`` and ``drill_mask`` are (128, 128) float arrays indexed
    [row, col] with row along +y and col along +x.  ``bbox`` is
    (x1, y1, x2, y2) in meters.  Mask values >= 0.5 mean the completion
    there is occluded by the drill and suppressed to zero.
    """

    completion: np.ndarray
    drill_mask: np.ndarray
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        for name in ("completion", "drill_mask"):
            arr = getattr(self, name)
            if arr.shape != (MAP_SIZE, MAP_SIZE):
                raise ValueError(f"{name} must be {MAP_SIZE}x{MAP_SIZE}, got {arr.shape}")
        if np.nanmin(self.completion) < 0.0 or np.nanmax(self.completion) > 1.0:
            raise ValueError("completion channel outside [0, 1]")
        _validate_bbox(self.bbox)


def _wrap_map(completion, drill_mask, bbox) -> CompletionMap:
    # validation-free constructor for frames this module built itself
    m = object.__new__(CompletionMap)
    object.__setattr__(m, "completion", completion)
    object.__setattr__(m, "drill_mask", drill_mask)
    object.__setattr__(m, "bbox", bbox)
    return m


def _validate_bbox(bbox) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = (float(v) for v in bbox)
    if not (x2 > x1 and y2 > y1):
        raise InvalidBBoxError(f"degenerate bbox {bbox}")
    return (x1, y1, x2, y2)


@lru_cache(maxsize=16)
def _pixel_centers(bbox: tuple, size: int):
    """World coordinates of pixel centers; cached per bbox."""
    x1, y1, x2, y2 = bbox
    xs = x1 + (np.arange(size) + 0.5) * (x2 - x1) / size
    ys = y1 + (np.arange(size) + 0.5) * (y2 - y1) / size
    gx, gy = np.meshgrid(xs, ys)
    gx.setflags(write=False)
    gy.setflags(write=False)
    return gx, gy


def render_map(specimen: ShellSpecimen, drill_tip, bbox,
               occlusion_radius: float = 0.0) -> CompletionMap:
    """Ground-truth completion frame with the drill occlusion applied.

    ``drill_tip`` may be None for an absent drill.  Pixels within
    ``occlusion_radius`` of the tip's x/y get mask=1 and completion 0,
    matching a predictor that cannot see under the tool.
    """
    bbox = _validate_bbox(bbox)
    gx, gy = _pixel_centers(bbox, MAP_SIZE)
    cache_key = (bbox, MAP_SIZE)
    cached = specimen._plan_cache.get(cache_key)
    if cached is None:
        plan = prepare_bilinear(specimen, gx, gy, clamp=True)
        h_pix = plan.sample(specimen.h)          # thickness never changes
        cached = (plan, h_pix)
        specimen._plan_cache[cache_key] = cached
    plan, h_pix = cached
    comp = np.clip(plan.sample(specimen.r) / h_pix, 0.0, 1.0)
    mask = np.zeros((MAP_SIZE, MAP_SIZE))
    if drill_tip is not None and occlusion_radius > 0.0:
        tx, ty = float(drill_tip[0]), float(drill_tip[1])
        occluded = (gx - tx) ** 2 + (gy - ty) ** 2 <= occlusion_radius ** 2
        mask[occluded] = 1.0
        comp = np.where(occluded, 0.0, comp)
    return _wrap_map(comp, mask, bbox)


@lru_cache(maxsize=8)
def _upsample_plan(coarse_cells: int, size: int):
    """Bilinear plan mapping a (k+1)x(k+1) node grid onto a size x size image."""
    k = coarse_cells
    g = (np.arange(size) + 0.5) / size * k
    i0 = np.minimum(g.astype(int), k - 1)
    w = g - i0
    # per-pixel std of the upsampled field when nodes are i.i.d. unit normal
    wx0, wx1 = (1.0 - w)[None, :], w[None, :]
    wy0, wy1 = (1.0 - w)[:, None], w[:, None]
    var = (wy0 * wx0) ** 2 + (wy0 * wx1) ** 2 + (wy1 * wx0) ** 2 + (wy1 * wx1) ** 2
    norm = np.sqrt(var)
    for arr in (i0, w, norm):
        arr.setflags(write=False)
    return i0, w, norm


class SensorNoiseModel:
    """Stateful corruption model; owns its rng stream and temporal state.

    Each frame every unmasked pixel is multiplied by (1 + e) where
    e = bias + sigma * F and F is a unit-variance smooth field built by
    bilinearly upsampling a coarse grid of normal draws.  With
    ``temporal_rho`` > 0 the coarse grid evolves as a first-order
    autoregression, so errors persist between frames.  ``region`` is an
    optional (start_deg, end_deg, gain, offset) angular sector around
    ``center`` whose estimate is additionally rescaled and offset.
    """

    def __init__(self, sigma: float, bias: float = 0.0,
                 occlusion_radius: float = 0.0,
                 temporal_rho: float = 0.0, coarse_cells: int = 8,
                 seed=0, region=None, center=(0.0, 0.0)):
        if sigma < 0.0:
            raise ValueError(f"sigma must be non-negative, got {sigma}")
        if not 0.0 <= temporal_rho < 1.0:
            raise ValueError(f"temporal_rho must be in [0, 1), got {temporal_rho}")
        if coarse_cells < 1:
            raise ValueError("coarse_cells must be at least 1")
        self.sigma = float(sigma)
        self.bias = float(bias)
        self.occlusion_radius = float(occlusion_radius)
        self.temporal_rho = float(temporal_rho)
        self.coarse_cells = int(coarse_cells)
        self.center = (float(center[0]), float(center[1]))
        if region is not None:
            start, end, gain, offset = region
            region = (float(start), float(end), float(gain), float(offset))
        self.region = region
        self.rng = np.random.default_rng(seed)
        self._coarse = None

    @property
    def is_identity(self) -> bool:
        return self.sigma == 0.0 and self.bias == 0.0 and self.region is None

    def _advance_frame(self) -> None:
        k = self.coarse_cells
        fresh = self.rng.standard_normal((k + 1, k + 1))
        if self._coarse is None or self.temporal_rho == 0.0:
            self._coarse = fresh
        else:
            rho = self.temporal_rho
            self._coarse = rho * self._coarse + math.sqrt(1.0 - rho * rho) * fresh

    def _error_field(self, size: int) -> np.ndarray:
        i0, w, norm = _upsample_plan(self.coarse_cells, size)
        c = self._coarse
        rows0 = c[i0, :]
        rows1 = c[i0 + 1, :]
        rows = rows0 * (1.0 - w)[:, None] + rows1 * w[:, None]
        cols = rows[:, i0] * (1.0 - w)[None, :] + rows[:, i0 + 1] * w[None, :]
        return cols / norm


def _sector_mask(bbox, center, start_deg: float, end_deg: float) -> np.ndarray:
    gx, gy = _pixel_centers(tuple(bbox), MAP_SIZE)
    ang = np.degrees(np.arctan2(gy - center[1], gx - center[0])) % 360.0
    start = start_deg % 360.0
    end = end_deg % 360.0
    if start <= end:
        return (ang >= start) & (ang < end)
    return (ang >= start) | (ang < end)


def corrupt(cmap: CompletionMap, model: SensorNoiseModel | None) -> CompletionMap:
    """Apply one frame of sensor error; masked pixels stay suppressed."""
    if model is None or model.is_identity:
        return _wrap_map(cmap.completion.copy(), cmap.drill_mask.copy(), cmap.bbox)
    model._advance_frame()
    if model.sigma > 0.0:
        e = model.bias + model.sigma * model._error_field(MAP_SIZE)
    else:
        e = model.bias
    est = cmap.completion * (1.0 + e)
    if model.region is not None:
        start, end, gain, offset = model.region
        sector = _sector_mask(cmap.bbox, model.center, start, end)
        est = np.where(sector, est * gain + offset, est)
    unmasked = cmap.drill_mask < 0.5
    est = np.where(unmasked, np.clip(est, 0.0, 1.0), 0.0)
    return _wrap_map(est, cmap.drill_mask.copy(), cmap.bbox)


class ProgressBar:
    """Per-ring-point best-so-far completion; values never decrease."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("need at least one bin")
        self.values = np.zeros(n)

    def observe(self, values, valid=None) -> None:
        v = np.asarray(values, dtype=float)
        # a non-finite reading carries no information, not a maximum
        v = np.clip(np.where(np.isfinite(v), v, 0.0), 0.0, 1.0)
        if v.shape != self.values.shape:
            raise ValueError(f"expected {self.values.shape[0]} bin values, got {v.shape}")
        if valid is not None:
            v = np.where(np.asarray(valid, dtype=bool), v, 0.0)
        np.maximum(self.values, v, out=self.values)


@lru_cache(maxsize=4)
def _window_offsets(radius_px: int):
    span = np.arange(-radius_px, radius_px + 1)
    dr, dc = np.meshgrid(span, span)
    keep = dr ** 2 + dc ** 2 <= radius_px ** 2
    return dr[keep], dc[keep]


@lru_cache(maxsize=64)
def _window_flat_indices(bbox: tuple, pts_bytes: bytes, n: int, radius_px: int):
    """Flat pixel indices of each bin's sampling disk; ring points are
    fixed in world space, so this is constant for a whole trial."""
    pts = np.frombuffer(pts_bytes, dtype=float).reshape(n, 2)
    x1, y1, x2, y2 = bbox
    cols = np.clip(((pts[:, 0] - x1) / (x2 - x1) * MAP_SIZE - 0.5).round().astype(int),
                   0, MAP_SIZE - 1)
    rows = np.clip(((pts[:, 1] - y1) / (y2 - y1) * MAP_SIZE - 0.5).round().astype(int),
                   0, MAP_SIZE - 1)
    dr, dc = _window_offsets(radius_px)
    win_rows = np.clip(rows[:, None] + dr[None, :], 0, MAP_SIZE - 1)
    win_cols = np.clip(cols[:, None] + dc[None, :], 0, MAP_SIZE - 1)
    flat = win_rows * MAP_SIZE + win_cols
    flat.setflags(write=False)
    return flat


def update_progress(bar: ProgressBar, cmap: CompletionMap, points_xy,
                    window_radius_px: int = BIN_WINDOW_RADIUS_PX) -> ProgressBar:
    """Fold one frame into the bar.

    Each ring point's bin is the mean of the unmasked completion pixels
    in a small disk around the point's image position, taken through a
    running max so the bar is monotone.  A fully occluded window leaves
    its bin frozen at the previous value.
    """
    pts = np.ascontiguousarray(points_xy, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] != bar.values.shape[0]:
        raise ValueError("points_xy must be (n_bins, 2)")
    flat = _window_flat_indices(cmap.bbox, pts.tobytes(), pts.shape[0],
                                window_radius_px)
    comp = cmap.completion.ravel()[flat]
    usable = cmap.drill_mask.ravel()[flat] < 0.5
    counts = usable.sum(axis=1)
    sums = np.where(usable, comp, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts
    valid = counts > 0
    bar.observe(np.where(valid, means, 0.0), valid=valid)
    return bar


def sample_completions(bar: ProgressBar) -> np.ndarray:
    """Current per-point completion estimates, aligned with ring point order."""
    return bar.values.copy()


def mape(estimate, truth, truth_floor: float = MAPE_TRUTH_FLOOR) -> float:
    """Mean absolute percentage error over samples with usable truth.

    Truth values below ``truth_floor`` are excluded (relative error blows
    up near zero).  Raises :class:`UndefinedMetricError` when nothing is
    left to average.
    """
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    est, tru = np.broadcast_arrays(est, tru)
    included = tru >= truth_floor
    if not included.any():
        raise UndefinedMetricError(
            f"no truth samples at or above the {truth_floor} floor")
    err = np.abs(est[included] - tru[included]) / tru[included]
    return float(err.mean() * 100.0)


def measure_model_mape(sigma: float, frames: int, seed=0,
                       truth_level: float = 0.5,
                       temporal_rho: float = 0.0,
                       coarse_cells: int = 8) -> float:
    """Mean per-frame MAPE of a fresh model against a mid-range truth map."""
    if frames < 1:
        raise ValueError("need at least one frame")
    model = SensorNoiseModel(sigma=sigma, temporal_rho=temporal_rho,
                             coarse_cells=coarse_cells, seed=seed)
    truth = np.full((MAP_SIZE, MAP_SIZE), float(truth_level))
    frame = CompletionMap(truth, np.zeros_like(truth), (0.0, 0.0, 1.0, 1.0))
    total = 0.0
    for _ in range(frames):
        est = corrupt(frame, model)
        total += mape(est.completion, truth)
    return total / frames


def calibrate_sigma(target_mape: float, frames: int = 2000, seed=0,
                    tolerance: float = 0.5, coarse_cells: int = 8) -> float:
    """Bisect sigma until the measured mid-range MAPE hits the target.

    The measured MAPE saturates near 100 because estimates are clamped to
    [0, 1]; unreachable targets raise :class:`CalibrationError`.
    """
    if target_mape < 0.0:
        raise CalibrationError(f"target MAPE must be non-negative, got {target_mape}")
    if target_mape == 0.0:
        return 0.0

    def measured(s: float) -> float:
        return measure_model_mape(s, frames, seed=seed, coarse_cells=coarse_cells)

    lo, hi = 0.0, 4.0
    top = measured(hi)
    if top < target_mape - tolerance:
        raise CalibrationError(
            f"target MAPE {target_mape:.2f} unreachable: estimates are clamped to "
            f"[0, 1], measured ceiling is about {top:.2f}")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        got = measured(mid)
        if abs(got - target_mape) <= tolerance:
            return mid
        if got < target_mape:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
    raise CalibrationError(
        f"bisection failed to reach MAPE {target_mape:.2f} +/- {tolerance:.2f}")


def write_pgm(channel: np.ndarray, path) -> None:
    """Dump one map channel as an 8-bit binary portable graymap."""
    arr = np.clip(np.asarray(channel, dtype=float), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())
