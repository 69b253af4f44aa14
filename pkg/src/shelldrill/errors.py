"""Exception types shared across the simulator."""


class SimulationError(Exception):
    """Base class for all simulator-specific errors."""


class DegenerateSegmentError(SimulationError, ValueError):
    """Two consecutive path knots coincide, so a segment has zero length."""


class SplineFitError(SimulationError):
    """The spline coefficient system could not be solved."""


class InvalidDiscretizationError(SimulationError, ValueError):
    """Circle discretization parameters are unusable."""


class InvalidSpecimenError(SimulationError, ValueError):
    """Specimen configuration violates a physical precondition."""


class OutOfRegionError(SimulationError, ValueError):
    """A queried location lies outside the simulated shell region."""


class InvalidBBoxError(SimulationError, ValueError):
    """Degenerate bounding box for a rendered completion map."""


class UndefinedMetricError(SimulationError, ValueError):
    """The requested metric has no includable samples."""


class CalibrationError(SimulationError):
    """The noise calibration target cannot be reached."""


class ConfigError(SimulationError, ValueError):
    """A run configuration field is missing, unknown, or out of range."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field
