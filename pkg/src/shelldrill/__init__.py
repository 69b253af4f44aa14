"""Deterministic closed-loop simulator for image-feedback eggshell drilling.

The library plans an overshoot-free spline trajectory over a ring of
drilling points, lowers each point at a completion-modulated speed, cuts
a virtual shell specimen, perceives progress through a corruptible
completion-map sensor, and stops when enough of the ring looks done.
"""

from .controller import (
    BENCHMARK_SUCCESS_RATE,
    NoiseConfig,
    SpecimenRandomization,
    TrialClassification,
    TrialConfig,
    TrialOutcome,
    run_batch,
    run_trial,
    stop_condition,
    tick,
    write_trace_csv,
)
from .errors import (
    CalibrationError,
    ConfigError,
    DegenerateSegmentError,
    InvalidBBoxError,
    InvalidDiscretizationError,
    InvalidSpecimenError,
    OutOfRegionError,
    SimulationError,
    SplineFitError,
    UndefinedMetricError,
)
from .perception import (
    CompletionMap,
    ProgressBar,
    SensorNoiseModel,
    calibrate_sigma,
    corrupt,
    mape,
    measure_model_mape,
    render_map,
    sample_completions,
    update_progress,
    write_pgm,
)
from .specimen import (
    DrillTool,
    ShellSpecimen,
    SpecimenConfig,
    apply_drill,
    completion_at,
    completion_grid,
    dump_fields,
    make_specimen,
    membrane_ruptured,
    patch_detachable,
)
from .spline import (
    KnotDerivatives,
    SplinePath,
    SplineSegment,
    check_envelope,
    compute_knot_derivatives,
    fit_constrained,
    fit_natural,
    max_abs_violation,
    write_comparison_csv,
)
from .trajectory import (
    PathState,
    TrajectoryPoint,
    discretize_circle,
    integrate_depths,
    lowering_velocity,
    rebuild_path,
    setpoint_at,
)

__version__ = "0.1.0"

__all__ = [
    "BENCHMARK_SUCCESS_RATE",
    "CalibrationError",
    "CompletionMap",
    "ConfigError",
    "DegenerateSegmentError",
    "DrillTool",
    "InvalidBBoxError",
    "InvalidDiscretizationError",
    "InvalidSpecimenError",
    "KnotDerivatives",
    "NoiseConfig",
    "OutOfRegionError",
    "PathState",
    "ProgressBar",
    "SensorNoiseModel",
    "ShellSpecimen",
    "SimulationError",
    "SpecimenConfig",
    "SpecimenRandomization",
    "SplineFitError",
    "SplinePath",
    "SplineSegment",
    "TrajectoryPoint",
    "TrialClassification",
    "TrialConfig",
    "TrialOutcome",
    "UndefinedMetricError",
    "apply_drill",
    "calibrate_sigma",
    "check_envelope",
    "completion_at",
    "completion_grid",
    "compute_knot_derivatives",
    "corrupt",
    "discretize_circle",
    "dump_fields",
    "fit_constrained",
    "fit_natural",
    "integrate_depths",
    "lowering_velocity",
    "make_specimen",
    "mape",
    "max_abs_violation",
    "measure_model_mape",
    "membrane_ruptured",
    "patch_detachable",
    "rebuild_path",
    "render_map",
    "run_batch",
    "run_trial",
    "sample_completions",
    "setpoint_at",
    "stop_condition",
    "tick",
    "update_progress",
    "write_comparison_csv",
    "write_pgm",
    "write_trace_csv",
]
