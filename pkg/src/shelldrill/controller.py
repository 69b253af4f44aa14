"""Closed-loop trial driver: perceive, modulate descent, respline, cut, stop.

One tick, in contract order:

1. render the completion frame and fold it into the progress bar
   (or, with oracle perception, sample the true completions directly),
2. read the per-point estimates,
3. lower every ring point by (1 - estimate) * v0 * T,
4. re-fit the no-overshoot spline through the new depths,
5. advance the drill along the lap (or over every point in quasi-static
   mode) and cut,
6. evaluate the stop rule.

Perception always runs before depth integration inside a tick; driving
the depth update with a stale frame is a contract violation.
"""

from __future__ import annotations

import concurrent.futures
import csv
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from . import perception
from .errors import ConfigError
from .perception import ProgressBar, SensorNoiseModel, sample_completions
from .specimen import DrillTool, ShellSpecimen, SpecimenConfig, apply_drill, completion_grid, make_specimen, patch_detachable
from .trajectory import PathState, discretize_circle, integrate_depths, rebuild_path, setpoint_at

#: published benchmark: 16 of 20 real drilling runs succeeded
BENCHMARK_SUCCESS_RATE = 0.80
BENCHMARK_SUCCESS_NOTE = "reference hardware campaign: 16/20 trials (80%)"


class TrialClassification(str, Enum):
    SUCCESS = "Success"
    MEMBRANE_RUPTURE = "MembraneRupture"
    PATCH_NOT_DETACHABLE = "PatchNotDetachable"
    TIMEOUT = "Timeout"


@dataclass
class NoiseConfig:
    """Sensor corruption parameters; all zeros mean a perfect map."""

    sigma: float = 0.0
    bias: float = 0.0
    occlusion_radius: float = 0.0
    corr_time: float = 0.0            # seconds; 0 means independent frames
    coarse_cells: int = 8
    region_start_deg: float = 0.0
    region_end_deg: float = 0.0
    region_gain: float = 1.0
    region_offset: float = 0.0

    def region_tuple(self):
        active = (self.region_start_deg % 360.0) != (self.region_end_deg % 360.0) and (
            self.region_gain != 1.0 or self.region_offset != 0.0)
        if not active:
            return None
        return (self.region_start_deg, self.region_end_deg,
                self.region_gain, self.region_offset)


@dataclass
class SpecimenRandomization:
    """Uniform ranges drawn per batch trial; None leaves the field fixed."""

    base_thickness: tuple[float, float] | None = None
    variation_amplitude: tuple[float, float] | None = None
    variation_wavelength: tuple[float, float] | None = None
    cap_radius: tuple[float, float] | None = None
    tilt_deg: tuple[float, float] | None = None
    tilt_axis_deg: tuple[float, float] | None = None


@dataclass
class TrialConfig:
    """Everything one trial needs; mirrors the run-config file layout."""

    v0: float = 6e-6                    # initial lowering speed, m/s
    radius: float = 8e-3                # drill circle radius, m
    f: float = 30.0                     # control frequency, Hz
    n: int = 30                         # ring points
    burr_radius: float = 0.7e-3
    lap_period: float = 10.0            # seconds per lap in swept mode
    quasi_static: bool = False          # drill every point each tick
    perception: str = "map"             # "map" | "oracle"
    stop_point_fraction: float = 0.80
    stop_completion_threshold: float = 0.85
    detach_coverage_threshold: float = 0.0
    detach_full_cut_level: float = 0.99
    detach_bridge_level: float = 0.5
    start_clearance: float = 0.0
    max_sim_time: float = 3600.0
    seed: int = 1
    specimen: SpecimenConfig = field(default_factory=SpecimenConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    randomize: SpecimenRandomization | None = None

    def validate(self) -> None:
        if self.v0 <= 0.0:
            raise ConfigError("v0", f"must be positive, got {self.v0}")
        if self.radius <= 0.0:
            raise ConfigError("radius", f"must be positive, got {self.radius}")
        if self.f <= 0.0:
            raise ConfigError("f", f"must be positive, got {self.f}")
        if self.n < 3:
            raise ConfigError("n", f"need at least 3 ring points, got {self.n}")
        if self.burr_radius <= 0.0:
            raise ConfigError("burr_radius", "must be positive")
        if not self.quasi_static and self.lap_period <= 0.0:
            raise ConfigError("lap_period", "must be positive in swept mode")
        if self.perception not in ("map", "oracle"):
            raise ConfigError("perception", f"must be 'map' or 'oracle', got {self.perception!r}")
        if not 0.0 < self.stop_point_fraction <= 1.0:
            raise ConfigError("stop_point_fraction", "must be in (0, 1]")
        if not 0.0 < self.stop_completion_threshold <= 1.0:
            raise ConfigError("stop_completion_threshold", "must be in (0, 1]")
        if not 0.0 <= self.detach_coverage_threshold <= 1.0:
            raise ConfigError("detach_coverage_threshold", "must be in [0, 1]")
        if not 0.0 < self.detach_full_cut_level <= 1.0:
            raise ConfigError("detach_full_cut_level", "must be in (0, 1]")
        if not 0.0 <= self.detach_bridge_level < 1.0:
            raise ConfigError("detach_bridge_level", "must be in [0, 1)")
        if self.max_sim_time <= 0.0:
            raise ConfigError("max_sim_time", "must be positive")
        if self.noise.sigma < 0.0:
            raise ConfigError("noise.sigma", "must be non-negative")
        if self.noise.corr_time < 0.0:
            raise ConfigError("noise.corr_time", "must be non-negative")
        if self.noise.coarse_cells < 1:
            raise ConfigError("noise.coarse_cells", "must be at least 1")
        spec = self.specimen
        if spec.base_thickness <= 0.0:
            raise ConfigError("specimen.base_thickness", "must be positive")
        if spec.grid_resolution < 64:
            raise ConfigError("specimen.grid_resolution", "must be at least 64")
        if not 0.0 <= spec.variation_amplitude < 1.0:
            raise ConfigError("specimen.variation_amplitude", "must be in [0, 1)")
        if spec.membrane_tolerance < 0.0:
            raise ConfigError("specimen.membrane_tolerance", "must be non-negative")

    def resolved_specimen(self) -> SpecimenConfig:
        """Specimen config with the grid sized from the drill circle if unset."""
        spec = replace(self.specimen)
        if spec.grid_extent is None:
            spec.grid_extent = 2.5 * self.radius
        return spec


@dataclass
class TrialTrace:
    """Per-tick history; arrays are (ticks,) or (ticks, n)."""

    t: np.ndarray
    z: np.ndarray
    c_true: np.ndarray
    c_est: np.ndarray
    v: np.ndarray


@dataclass
class TrialOutcome:
    classification: TrialClassification
    drilling_time: float
    ticks: int
    stop_fired: bool
    seed: int
    final_completions: np.ndarray       # ground truth at the ring points
    final_estimates: np.ndarray         # progress-bar values
    trace: TrialTrace | None = None
    specimen: ShellSpecimen | None = None

    def summary(self) -> dict:
        return {
            "classification": self.classification.value,
            "drilling_time_s": self.drilling_time,
            "ticks": self.ticks,
            "stop_fired": self.stop_fired,
            "seed": self.seed,
            "final_completions": [float(v) for v in self.final_completions],
            "final_estimates": [float(v) for v in self.final_estimates],
        }


@dataclass
class TrialState:
    """Everything the loop mutates between ticks."""

    config: TrialConfig
    specimen: ShellSpecimen
    path: PathState
    bar: ProgressBar
    noise: SensorNoiseModel | None
    spline_path: object
    tool: DrillTool
    bbox: tuple[float, float, float, float]
    phase: float = 0.0
    tick_index: int = 0
    stopped: bool = False
    c_est: np.ndarray | None = None
    _trace_rows: list | None = None


def stop_condition(completions, point_fraction: float = 0.80,
                   completion_threshold: float = 0.85) -> bool:
    """True when enough ring points look complete.

    Fires iff at least ceil(point_fraction * n) points have completion at
    or above the threshold.  The ceiling is taken with a small epsilon so
    float products like 0.8 * 30 still count as exactly 24.
    """
    c = np.asarray(completions, dtype=float)
    required = math.ceil(point_fraction * c.size - 1e-9)
    return int(np.count_nonzero(c >= completion_threshold)) >= required


def init_trial(config: TrialConfig, record_trace: bool = False) -> TrialState:
    config.validate()
    spec_cfg = config.resolved_specimen()
    shell = make_specimen(spec_cfg)
    cx, cy = spec_cfg.center

    ring = discretize_circle((cx, cy, 0.0), config.radius, config.n)
    xs = np.array([p.x for p in ring])
    ys = np.array([p.y for p in ring])
    surface = shell.bilinear("z_out", xs, ys)
    z_start = float(surface.max()) + config.start_clearance
    points = discretize_circle((cx, cy, z_start), config.radius, config.n)

    path = PathState(points, v0=config.v0, period=1.0 / config.f)
    bar = ProgressBar(config.n)
    noise = None
    if config.perception == "map":
        rho = 0.0
        if config.noise.corr_time > 0.0:
            rho = math.exp(-(1.0 / config.f) / config.noise.corr_time)
        noise = SensorNoiseModel(
            sigma=config.noise.sigma,
            bias=config.noise.bias,
            occlusion_radius=config.noise.occlusion_radius,
            temporal_rho=rho,
            coarse_cells=config.noise.coarse_cells,
            seed=np.random.SeedSequence(config.seed),
            region=config.noise.region_tuple(),
            center=(cx, cy),
        )
    half = spec_cfg.grid_extent / 2.0
    bbox = (cx - half, cy - half, cx + half, cy + half)
    state = TrialState(
        config=config,
        specimen=shell,
        path=path,
        bar=bar,
        noise=noise,
        spline_path=rebuild_path(path),
        tool=DrillTool(tip=np.array([xs[0], ys[0], z_start]), radius=config.burr_radius),
        bbox=bbox,
    )
    if record_trace:
        state._trace_rows = []
    return state


def tick(state: TrialState) -> TrialState:
    """Advance the loop by one control period (see module docstring for order)."""
    cfg = state.config
    path = state.path

    # 1-2) perceive, then read the per-point estimates
    if cfg.perception == "oracle":
        truth = completion_grid(state.specimen, path.xy[:, 0], path.xy[:, 1])
        state.bar.observe(truth)
    else:
        occl = 0.0 if cfg.quasi_static else state.noise.occlusion_radius
        tip_now = setpoint_at(state.spline_path, state.phase)
        frame = perception.render_map(state.specimen, tip_now, state.bbox,
                                      occlusion_radius=occl)
        frame = perception.corrupt(frame, state.noise)
        perception.update_progress(state.bar, frame, path.xy)
    c_est = sample_completions(state.bar)
    state.c_est = c_est

    # 3) completion-modulated descent
    integrate_depths(path, c_est)

    # 4) respline at the new depths
    state.spline_path = rebuild_path(path)

    # 5) cut
    if cfg.quasi_static:
        for i in range(path.n):
            state.tool.tip = np.array([path.xy[i, 0], path.xy[i, 1], path.z[i]])
            apply_drill(state.specimen, state.tool)
    else:
        d_phase = (1.0 / cfg.f) / cfg.lap_period
        cell = state.specimen.xs[1] - state.specimen.xs[0]
        arc = 2.0 * math.pi * cfg.radius * d_phase
        substeps = max(1, int(math.ceil(arc / (0.5 * cell))))
        for j in range(substeps):
            ph = (state.phase + d_phase * (j + 1) / substeps) % 1.0
            state.tool.tip = setpoint_at(state.spline_path, ph)
            apply_drill(state.specimen, state.tool)
        state.phase = (state.phase + d_phase) % 1.0

    # 6) stop rule on this tick's estimates
    state.stopped = stop_condition(
        c_est, cfg.stop_point_fraction, cfg.stop_completion_threshold)

    if state._trace_rows is not None:
        truth = completion_grid(state.specimen, path.xy[:, 0], path.xy[:, 1])
        state._trace_rows.append((
            path.elapsed, path.z.copy(), truth, c_est.copy(),
            (1.0 - c_est) * cfg.v0,
        ))
    state.tick_index += 1
    return state


def _build_trace(rows) -> TrialTrace:
    return TrialTrace(
        t=np.array([r[0] for r in rows]),
        z=np.array([r[1] for r in rows]),
        c_true=np.array([r[2] for r in rows]),
        c_est=np.array([r[3] for r in rows]),
        v=np.array([r[4] for r in rows]),
    )


def run_trial(config: TrialConfig, record_trace: bool = False) -> TrialOutcome:
    """Run one trial to classification.

    Success requires the stop rule to fire, no membrane rupture, and a
    detachable patch; a latched rupture ends the trial immediately; the
    clock running out is a timeout.
    """
    state = init_trial(config, record_trace=record_trace)
    cfg = config
    while True:
        tick(state)
        if state.specimen.ruptured:
            classification = TrialClassification.MEMBRANE_RUPTURE
            break
        if state.stopped:
            detachable = patch_detachable(
                state.specimen, state.path.xy,
                coverage_threshold=cfg.detach_coverage_threshold,
                full_cut_level=cfg.detach_full_cut_level,
                bridge_level=cfg.detach_bridge_level,
            )
            classification = (TrialClassification.SUCCESS if detachable
                              else TrialClassification.PATCH_NOT_DETACHABLE)
            break
        if state.path.elapsed >= cfg.max_sim_time:
            classification = TrialClassification.TIMEOUT
            break
    truth = completion_grid(state.specimen, state.path.xy[:, 0], state.path.xy[:, 1])
    return TrialOutcome(
        classification=classification,
        drilling_time=state.path.elapsed,
        ticks=state.tick_index,
        stop_fired=state.stopped,
        seed=cfg.seed,
        final_completions=truth,
        final_estimates=state.bar.values.copy(),
        trace=_build_trace(state._trace_rows) if state._trace_rows is not None else None,
        specimen=state.specimen,
    )


def _randomized_config(config: TrialConfig, trial_index: int, seed_base: int) -> TrialConfig:
    seed = seed_base + trial_index
    spec = replace(config.specimen)
    rand = config.randomize
    if rand is not None:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed_base, spawn_key=(trial_index,)))
        for name in ("base_thickness", "variation_amplitude", "variation_wavelength",
                     "cap_radius", "tilt_deg", "tilt_axis_deg"):
            bounds = getattr(rand, name)
            if bounds is not None:
                lo, hi = bounds
                setattr(spec, name, float(rng.uniform(lo, hi)))
        spec.seed = int(rng.integers(0, 2**31 - 1))
    return replace(config, seed=seed, specimen=spec)


def run_batch(config: TrialConfig, trials: int, seed_base: int,
              parallelism: int = 1) -> dict:
    """Run a seeded campaign; the summary is identical for any parallelism."""
    if trials < 1:
        raise ConfigError("trials", f"must be at least 1, got {trials}")
    if parallelism < 1:
        raise ConfigError("parallelism", f"must be at least 1, got {parallelism}")
    configs = [_randomized_config(config, k, seed_base) for k in range(trials)]
    if parallelism == 1:
        outcomes = [run_trial(c) for c in configs]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(run_trial, configs))

    counts = {cls.value: 0 for cls in TrialClassification}
    for o in outcomes:
        counts[o.classification.value] += 1
    successes = counts[TrialClassification.SUCCESS.value]
    success_times = sorted(o.drilling_time for o in outcomes
                           if o.classification is TrialClassification.SUCCESS)

    def pct(q: float):
        if not success_times:
            return None
        pos = q * (len(success_times) - 1)
        lo = int(math.floor(pos))
        hi = min(lo + 1, len(success_times) - 1)
        return success_times[lo] + (pos - lo) * (success_times[hi] - success_times[lo])

    per_trial = [
        {
            "trial": k,
            "seed": o.seed,
            "classification": o.classification.value,
            "drilling_time_s": o.drilling_time,
            "ticks": o.ticks,
        }
        for k, o in enumerate(outcomes)
    ]
    return {
        "trials": trials,
        "seed_base": seed_base,
        "successes": successes,
        "success_rate": successes / trials,
        "benchmark_success_rate": BENCHMARK_SUCCESS_RATE,
        "benchmark_note": BENCHMARK_SUCCESS_NOTE,
        "failure_counts": {k: v for k, v in counts.items()
                           if k != TrialClassification.SUCCESS.value},
        "drilling_time_mean_s": (sum(success_times) / len(success_times)
                                 if success_times else None),
        "drilling_time_p50_s": pct(0.5),
        "drilling_time_p90_s": pct(0.9),
        "per_trial": per_trial,
    }


def write_trace_csv(outcome: TrialOutcome, fileobj) -> int:
    """Trial trace as CSV rows (t, point index, p_z, c_true, c_est, v)."""
    if outcome.trace is None:
        raise ValueError("outcome carries no trace; run the trial with record_trace=True")
    tr = outcome.trace
    writer = csv.writer(fileobj)
    writer.writerow(["t", "point_index", "p_z", "c_true", "c_est", "v"])
    rows = 0
    n = tr.z.shape[1]
    for k in range(tr.t.size):
        for i in range(n):
            writer.writerow([
                f"{tr.t[k]:.9g}", i + 1,
                f"{tr.z[k, i]:.12g}", f"{tr.c_true[k, i]:.9g}",
                f"{tr.c_est[k, i]:.9g}", f"{tr.v[k, i]:.9g}",
            ])
            rows += 1
    return rows


def config_to_dict(config: TrialConfig) -> dict:
    """Plain-dict echo of a config; feeding it back reproduces the run."""
    d = asdict(config)
    if d.get("randomize") is None:
        d.pop("randomize", None)
    return d
