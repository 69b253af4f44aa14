"""Command-line front end: run trials and campaigns, export plot-ready data.

Subcommands:

* ``trial``            run one closed-loop trial from a config file
* ``batch``            run a seeded campaign and aggregate statistics
* ``spline-demo``      dense constrained-vs-natural spline comparison CSV
* ``calibrate-noise``  search the sensor sigma that hits a target MAPE

Exit codes: 0 success, 1 membrane rupture, 2 patch not detachable,
3 timeout, 64 configuration or usage error.  All randomness flows from
the seed fields; no wall-clock entropy anywhere.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import types
import typing
from dataclasses import replace
from pathlib import Path

import numpy as np

from .controller import (
    NoiseConfig,
    SpecimenRandomization,
    TrialClassification,
    TrialConfig,
    config_to_dict,
    run_batch,
    run_trial,
    write_trace_csv,
)
from .errors import CalibrationError, ConfigError, SimulationError
from .perception import calibrate_sigma, measure_model_mape
from .specimen import SpecimenConfig, dump_fields
from .spline import check_envelope, compute_knot_derivatives, fit_constrained, fit_natural, write_comparison_csv
from .trajectory import discretize_circle

EXIT_OK = 0
EXIT_RUPTURE = 1
EXIT_NOT_DETACHABLE = 2
EXIT_TIMEOUT = 3
EXIT_CONFIG = 64

_EXIT_BY_CLASS = {
    TrialClassification.SUCCESS: EXIT_OK,
    TrialClassification.MEMBRANE_RUPTURE: EXIT_RUPTURE,
    TrialClassification.PATCH_NOT_DETACHABLE: EXIT_NOT_DETACHABLE,
    TrialClassification.TIMEOUT: EXIT_TIMEOUT,
}

_RANGE_FIELDS = {f.name for f in dataclasses.fields(SpecimenRandomization)}


def _coerce_scalar(value, annotation, name: str):
    """Check a decoded JSON value against a dataclass field annotation."""
    if typing.get_origin(annotation) in (typing.Union, types.UnionType):
        options = typing.get_args(annotation)
    else:
        options = (annotation,)
    if value is None:
        if type(None) in options:
            return None
        raise ConfigError(name, "must not be null")
    if float in options:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"must be a number, got {value!r}")
        return float(value)
    if int in options:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"must be an integer, got {value!r}")
        return value
    if bool in options:
        if not isinstance(value, bool):
            raise ConfigError(name, f"must be true or false, got {value!r}")
        return value
    if str in options:
        if not isinstance(value, str):
            raise ConfigError(name, f"must be a string, got {value!r}")
        return value
    return value


def _parse_section(cls, raw, prefix: str, converters=None):
    if not isinstance(raw, dict):
        raise ConfigError(prefix, f"must be an object, got {type(raw).__name__}")
    allowed = {f.name for f in dataclasses.fields(cls)}
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigError(f"{prefix}.{key}", "unknown field")
        if converters and key in converters:
            value = converters[key](value, f"{prefix}.{key}")
        else:
            value = _coerce_scalar(value, hints[key], f"{prefix}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc)) from exc


def _as_pair(value, name: str) -> tuple:
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(name, f"must be a [low, high] pair, got {value!r}")
    lo, hi = float(value[0]), float(value[1])
    if lo > hi:
        raise ConfigError(name, f"low bound {lo} exceeds high bound {hi}")
    return (lo, hi)


def _as_point(value, name: str) -> tuple:
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(name, f"must be an [x, y] pair, got {value!r}")
    return (float(value[0]), float(value[1]))


def parse_trial_config(data: dict) -> tuple[TrialConfig, dict]:
    """Build a TrialConfig from decoded config data.

    Returns the config plus the optional ``batch`` section (trials,
    seed_base, parallelism) used as flag defaults by ``batch``.  Unknown
    keys anywhere are rejected with the offending dotted field name.
    """
    if not isinstance(data, dict):
        raise ConfigError("<root>", f"config must be an object, got {type(data).__name__}")
    data = dict(data)
    batch_raw = data.pop("batch", None)
    batch = {}
    if batch_raw is not None:
        if not isinstance(batch_raw, dict):
            raise ConfigError("batch", "must be an object")
        for key, value in batch_raw.items():
            if key not in ("trials", "seed_base", "parallelism"):
                raise ConfigError(f"batch.{key}", "unknown field")
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"batch.{key}", f"must be an integer, got {value!r}")
            batch[key] = value

    allowed = {f.name for f in dataclasses.fields(TrialConfig)}
    hints = typing.get_type_hints(TrialConfig)
    kwargs = {}
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(key, "unknown field")
        if key == "specimen":
            value = _parse_section(SpecimenConfig, value, "specimen",
                                   converters={"center": _as_point})
        elif key == "noise":
            value = _parse_section(NoiseConfig, value, "noise")
        elif key == "randomize":
            if value is None:
                continue
            value = _parse_section(
                SpecimenRandomization, value, "randomize",
                converters={name: _as_pair for name in _RANGE_FIELDS})
        else:
            value = _coerce_scalar(value, hints[key], key)
        kwargs[key] = value
    try:
        config = TrialConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("<root>", str(exc)) from exc
    config.validate()
    return config, batch


def load_config(path) -> tuple[TrialConfig, dict]:
    """Read and validate a JSON config file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<config>", f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            "<config>", f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return parse_trial_config(data)


def _prepare_outdir(out, filenames, overwrite: bool) -> Path:
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    existing = [name for name in filenames if (outdir / name).exists()]
    if existing and not overwrite:
        raise ConfigError(
            "<out>",
            f"refusing to overwrite {', '.join(existing)} in {outdir}; pass --overwrite")
    return outdir


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def cmd_trial(args) -> int:
    config, _ = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    artifacts = ["trace.csv", "outcome.json", "config_echo.json",
                 "specimen_thickness.csv", "specimen_removal.csv"]
    outdir = _prepare_outdir(args.out, artifacts, args.overwrite)

    outcome = run_trial(config, record_trace=True)

    with open(outdir / "trace.csv", "w", newline="") as fh:
        write_trace_csv(outcome, fh)
    _write_json(outdir / "outcome.json", outcome.summary())
    _write_json(outdir / "config_echo.json", config_to_dict(config))
    dump_fields(outcome.specimen,
                outdir / "specimen_thickness.csv",
                outdir / "specimen_removal.csv")

    print(f"classification: {outcome.classification.value} "
          f"(drilling time {outcome.drilling_time:.2f} s, {outcome.ticks} ticks)")
    print(f"artifacts written to {outdir}")
    return _EXIT_BY_CLASS[outcome.classification]


def cmd_batch(args) -> int:
    config, batch_defaults = load_config(args.config)
    trials = args.trials if args.trials is not None else batch_defaults.get("trials")
    if trials is None:
        raise ConfigError("trials", "required: pass --trials or a batch.trials config entry")
    seed_base = args.seed if args.seed is not None else \
        batch_defaults.get("seed_base", config.seed)
    parallelism = args.parallel if args.parallel is not None else \
        batch_defaults.get("parallelism", 1)

    artifacts = ["summary.json", "trials.csv", "config_echo.json"]
    outdir = _prepare_outdir(args.out, artifacts, args.overwrite)

    summary = run_batch(config, trials, seed_base, parallelism=parallelism)

    echo = config_to_dict(config)
    echo["batch"] = {"trials": trials, "seed_base": seed_base, "parallelism": parallelism}
    _write_json(outdir / "config_echo.json", echo)
    _write_json(outdir / "summary.json", summary)
    with open(outdir / "trials.csv", "w", newline="") as fh:
        fh.write("trial,seed,classification,drilling_time_s,ticks\n")
        for row in summary["per_trial"]:
            fh.write(f"{row['trial']},{row['seed']},{row['classification']},"
                     f"{row['drilling_time_s']:.9g},{row['ticks']}\n")

    k, n = summary["successes"], summary["trials"]
    print(f"success: {k}/{n} ({round(100 * k / n)}%)")
    print(f"reference success rate: {summary['benchmark_note']}")
    print(f"artifacts written to {outdir}")
    return EXIT_OK


def _demo_knots(n: int, radius: float, step_height: float,
                step_start: int, step_count: int):
    points = discretize_circle((0.0, 0.0, 0.0), radius, n)
    knots = np.array([[p.x, p.y, p.z] for p in points])
    for k in range(step_count):
        knots[(step_start + k) % n, 2] = step_height
    return knots


def cmd_spline_demo(args) -> int:
    if args.n < 3:
        raise ConfigError("n", f"need at least 3 knots, got {args.n}")
    if args.radius <= 0.0:
        raise ConfigError("radius", "must be positive")
    if args.step_count < 0 or args.step_count > args.n:
        raise ConfigError("step_count", f"must be in [0, n], got {args.step_count}")

    out = Path(args.out)
    if out.exists() and not args.overwrite:
        raise ConfigError("<out>", f"refusing to overwrite {out}; pass --overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)

    knots = _demo_knots(args.n, args.radius, args.step_height,
                        args.step_start, args.step_count)
    constrained = fit_constrained(knots, compute_knot_derivatives(knots, closed=True),
                                  closed=True)
    natural = fit_natural(knots, closed=True)
    with open(out, "w", newline="") as fh:
        rows = write_comparison_csv(fh, constrained, natural,
                                    samples_per_segment=args.samples)

    # overshoot along the lowering axis is the safety-relevant number
    v_con = float(np.abs(check_envelope(constrained, axis=2,
                                        samples_per_segment=args.samples)).max())
    v_nat = float(np.abs(check_envelope(natural, axis=2,
                                        samples_per_segment=args.samples)).max())
    print(f"wrote {rows} rows to {out}")
    print(f"constrained max z envelope violation: {v_con:.3e} m")
    print(f"natural     max z envelope violation: {v_nat:.3e} m")
    if args.step_height != 0.0:
        print(f"natural violation / step height:    {v_nat / abs(args.step_height):.3%}")
    return EXIT_OK


def cmd_calibrate_noise(args) -> int:
    if args.target < 0.0:
        raise ConfigError("target", "must be non-negative")
    sigma = calibrate_sigma(args.target, frames=args.frames, seed=args.seed)
    print(f"sigma: {sigma:.6f}")
    if sigma > 0.0:
        measured = measure_model_mape(sigma, frames=args.frames, seed=args.seed)
        print(f"measured MAPE: {measured:.2f}% over {args.frames} frames "
              f"(target {args.target:g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shelldrill",
        description="Closed-loop eggshell drilling simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_trial = sub.add_parser("trial", help="run one trial from a config file")
    p_trial.add_argument("--config", required=True, help="JSON trial config path")
    p_trial.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
    p_trial.add_argument("--out", required=True, help="output directory")
    p_trial.add_argument("--overwrite", action="store_true",
                         help="allow replacing existing artifacts")
    p_trial.set_defaults(func=cmd_trial)

    p_batch = sub.add_parser("batch", help="run a seeded trial campaign")
    p_batch.add_argument("--config", required=True, help="JSON trial config path")
    p_batch.add_argument("--trials", type=int, default=None, help="number of trials")
    p_batch.add_argument("--seed", type=int, default=None,
                         help="seed base; trial k uses seed base + k")
    p_batch.add_argument("--parallel", type=int, default=None,
                         help="worker threads (default 1)")
    p_batch.add_argument("--out", required=True, help="output directory")
    p_batch.add_argument("--overwrite", action="store_true",
                         help="allow replacing existing artifacts")
    p_batch.set_defaults(func=cmd_batch)

    p_demo = sub.add_parser(
        "spline-demo",
        help="constrained vs natural spline comparison on a stepped circle")
    p_demo.add_argument("--n", type=int, default=30, help="knot count (default 30)")
    p_demo.add_argument("--radius", type=float, default=8e-3,
                        help="circle radius in meters (default 0.008)")
    p_demo.add_argument("--step-height", type=float, default=2e-3,
                        help="z step applied to the stepped knots (default 0.002)")
    p_demo.add_argument("--step-start", type=int, default=0,
                        help="index of the first stepped knot (default 0)")
    p_demo.add_argument("--step-count", type=int, default=1,
                        help="number of consecutive stepped knots (default 1)")
    p_demo.add_argument("--samples", type=int, default=1000,
                        help="samples per segment (default 1000)")
    p_demo.add_argument("--out", required=True, help="comparison CSV path")
    p_demo.add_argument("--overwrite", action="store_true",
                        help="allow replacing an existing CSV")
    p_demo.set_defaults(func=cmd_spline_demo)

    p_cal = sub.add_parser("calibrate-noise",
                           help="find the sensor sigma for a target MAPE")
    p_cal.add_argument("--target", type=float, required=True,
                       help="target MAPE in percent")
    p_cal.add_argument("--frames", type=int, default=2000,
                       help="frames per MAPE measurement (default 2000)")
    p_cal.add_argument("--seed", type=int, default=0, help="measurement seed")
    p_cal.set_defaults(func=cmd_calibrate_noise)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"error: calibration failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
