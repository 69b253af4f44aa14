import io
import math

import numpy as np
import pytest

from shelldrill import perception
from shelldrill.controller import (
    BENCHMARK_SUCCESS_RATE,
    NoiseConfig,
    SpecimenRandomization,
    TrialClassification,
    TrialConfig,
    init_trial,
    run_batch,
    run_trial,
    stop_condition,
    tick,
    write_trace_csv,
)
from shelldrill.errors import ConfigError
from shelldrill.perception import MAP_SIZE, CompletionMap
from shelldrill.specimen import SpecimenConfig


def _fast_config(**overrides):
    """Flat specimen, oracle feedback, speed scaled for quick loops."""
    base = dict(
        v0=6e-5, quasi_static=True, perception="oracle", seed=3,
        specimen=SpecimenConfig(base_thickness=300e-6, variation_amplitude=0.0,
                                cap_radius=None, grid_extent=None, seed=5),
    )
    base.update(overrides)
    return TrialConfig(**base)


# -- stop rule ---------------------------------------------------------------

def test_stop_requires_24_of_30():
    c = np.zeros(30)
    c[:23] = 0.85
    assert not stop_condition(c)
    c[23] = 0.85
    assert stop_condition(c)


def test_stop_threshold_is_inclusive():
    c = np.full(30, 0.85)
    assert stop_condition(c)
    assert not stop_condition(np.full(30, 0.8499999))
    assert stop_condition(np.ones(30))


def test_stop_fraction_rounds_up():
    # 0.8 * 10 = 8 exactly; 7 high points must not trip it
    c = np.zeros(10)
    c[:7] = 1.0
    assert not stop_condition(c)
    c[7] = 1.0
    assert stop_condition(c)


# -- loop ordering -----------------------------------------------------------

def _all_done_render(specimen, drill_tip, bbox, occlusion_radius=0.0):
    ones = np.ones((MAP_SIZE, MAP_SIZE))
    return CompletionMap(ones, np.zeros_like(ones), bbox)


def test_estimates_are_read_before_the_tool_moves(monkeypatch):
    # feed a fully-complete frame from the very first tick: if perception
    # runs before depth integration, the ring must never descend
    monkeypatch.setattr(perception, "render_map", _all_done_render)
    cfg = _fast_config(perception="map", quasi_static=False)
    state = init_trial(cfg)
    z0 = state.path.z.copy()
    for _ in range(5):
        tick(state)
        np.testing.assert_array_equal(state.path.z, z0)
    assert state.stopped


def test_quasi_static_never_occludes(monkeypatch):
    seen = []
    real = perception.render_map

    def spy(specimen, drill_tip, bbox, occlusion_radius=0.0):
        seen.append(occlusion_radius)
        return real(specimen, drill_tip, bbox, occlusion_radius=occlusion_radius)

    monkeypatch.setattr(perception, "render_map", spy)
    noise = NoiseConfig(occlusion_radius=5e-3)
    state = init_trial(_fast_config(perception="map", noise=noise))
    tick(state)
    assert seen == [0.0]

    seen.clear()
    state = init_trial(_fast_config(perception="map", quasi_static=False,
                                    noise=noise))
    tick(state)
    assert seen == [5e-3]


# -- whole trials ------------------------------------------------------------

def test_flat_oracle_trial_matches_first_order_model():
    cfg = _fast_config()
    out = run_trial(cfg)
    assert out.classification is TrialClassification.SUCCESS
    assert out.stop_fired
    # completion-modulated descent: c(t) = 1 - exp(-v0 t / h), so the stop
    # estimate 0.85 is reached near (h / v0) ln(1 / 0.15)
    predicted = (300e-6 / cfg.v0) * math.log(1.0 / 0.15)
    assert out.drilling_time == pytest.approx(predicted, rel=0.02)
    assert np.all(out.final_completions >= 0.84)


def test_trial_is_deterministic():
    cfg = _fast_config(perception="map", quasi_static=False,
                       noise=NoiseConfig(sigma=0.15, corr_time=0.5,
                                         occlusion_radius=2e-3))
    a = run_trial(cfg)
    b = run_trial(cfg)
    assert a.classification is b.classification
    assert a.drilling_time == b.drilling_time
    assert a.ticks == b.ticks
    np.testing.assert_array_equal(a.final_completions, b.final_completions)
    np.testing.assert_array_equal(a.final_estimates, b.final_estimates)


def test_timeout_classification():
    out = run_trial(_fast_config(max_sim_time=0.5))
    assert out.classification is TrialClassification.TIMEOUT
    assert not out.stop_fired
    # 0.5 s at 30 Hz; accumulated float steps may round up one tick
    assert out.ticks in (15, 16)


def test_trace_columns_are_consistent():
    cfg = _fast_config(max_sim_time=1.0)
    out = run_trial(cfg, record_trace=True)
    tr = out.trace
    assert tr.z.shape == (out.ticks, cfg.n)
    np.testing.assert_allclose(np.diff(tr.t), 1.0 / cfg.f, rtol=1e-9)
    np.testing.assert_allclose(tr.v, (1.0 - tr.c_est) * cfg.v0, rtol=1e-12)
    # estimates are read before the first descent
    np.testing.assert_array_equal(tr.c_est[0], 0.0)
    assert tr.v[0, 0] == cfg.v0


def test_write_trace_csv_layout():
    cfg = _fast_config(max_sim_time=0.2)
    out = run_trial(cfg, record_trace=True)
    buf = io.StringIO()
    rows = write_trace_csv(out, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,point_index,p_z,c_true,c_est,v"
    assert rows == out.ticks * cfg.n
    assert len(lines) == 1 + rows
    first = lines[1].split(",")
    assert first[1] == "1"                      # point index is 1-based
    assert float(first[5]) == cfg.v0


def test_write_trace_csv_needs_a_trace():
    out = run_trial(_fast_config(max_sim_time=0.2))
    with pytest.raises(ValueError):
        write_trace_csv(out, io.StringIO())


# -- engineered failures -----------------------------------------------------

def test_sector_underestimate_ruptures_membrane():
    # a 0.7x gain wedge over 9 of 30 ring points caps their estimate at
    # 0.7 < 0.85, so the stop rule (needs 24) can never fire and the
    # residual descent drives the tool through the membrane
    cfg = _fast_config(
        perception="map",
        specimen=SpecimenConfig(base_thickness=300e-6, variation_amplitude=0.0,
                                cap_radius=None, grid_extent=None,
                                membrane_tolerance=0.0, seed=5),
        noise=NoiseConfig(region_start_deg=-6.0, region_end_deg=102.0,
                          region_gain=0.7),
    )
    out = run_trial(cfg)
    assert out.classification is TrialClassification.MEMBRANE_RUPTURE
    assert not out.stop_fired
    # faster than pure 0.3 v0 descent, slower than unimpeded v0
    assert 300e-6 / cfg.v0 < out.drilling_time < 300e-6 / (0.3 * cfg.v0)


def test_sector_overestimate_leaves_a_bridge():
    # an offset wedge pins three adjacent estimates at 1.0 from the first
    # frame, so those points are never drilled; the stop rule still fires
    # on the other 27, and the undrilled run fails detachability
    cfg = _fast_config(
        perception="map",
        noise=NoiseConfig(region_start_deg=-6.0, region_end_deg=30.0,
                          region_offset=1.0),
    )
    out = run_trial(cfg)
    assert out.classification is TrialClassification.PATCH_NOT_DETACHABLE
    assert out.stop_fired
    assert np.all(out.final_completions[:3] == 0.0)
    assert np.all(out.final_completions[3:] >= 0.84)


# -- batches -----------------------------------------------------------------

def test_batch_summary_and_parallel_equivalence():
    cfg = _fast_config(randomize=SpecimenRandomization(
        base_thickness=(250e-6, 350e-6), tilt_deg=(0.0, 1.0)))
    serial = run_batch(cfg, trials=4, seed_base=11, parallelism=1)
    threaded = run_batch(cfg, trials=4, seed_base=11, parallelism=4)
    assert serial == threaded
    assert serial["trials"] == 4
    assert serial["successes"] == 4
    assert serial["success_rate"] == 1.0
    assert serial["benchmark_success_rate"] == BENCHMARK_SUCCESS_RATE
    assert set(serial["failure_counts"]) == {
        "MembraneRupture", "PatchNotDetachable", "Timeout"}
    assert sum(serial["failure_counts"].values()) == 0
    times = [row["drilling_time_s"] for row in serial["per_trial"]]
    assert serial["drilling_time_p50_s"] >= min(times)
    assert serial["drilling_time_p90_s"] <= max(times)
    # randomization gives each trial its own seed and its own outcome times
    seeds = [row["seed"] for row in serial["per_trial"]]
    assert len(set(seeds)) == 4
    assert len(set(times)) == 4


def test_batch_seed_base_changes_the_draw():
    cfg = _fast_config(randomize=SpecimenRandomization(
        base_thickness=(250e-6, 350e-6)))
    a = run_batch(cfg, trials=2, seed_base=1)
    b = run_batch(cfg, trials=2, seed_base=2)
    ta = [r["drilling_time_s"] for r in a["per_trial"]]
    tb = [r["drilling_time_s"] for r in b["per_trial"]]
    assert ta != tb


def test_batch_rejects_bad_counts():
    with pytest.raises(ConfigError):
        run_batch(_fast_config(), trials=0, seed_base=1)
    with pytest.raises(ConfigError):
        run_batch(_fast_config(), trials=1, seed_base=1, parallelism=0)


# -- config validation -------------------------------------------------------

@pytest.mark.parametrize("overrides, field", [
    (dict(v0=0.0), "v0"),
    (dict(n=2), "n"),
    (dict(f=-1.0), "f"),
    (dict(perception="orakle"), "perception"),
    (dict(stop_point_fraction=0.0), "stop_point_fraction"),
    (dict(noise=NoiseConfig(sigma=-0.1)), "noise.sigma"),
    (dict(specimen=SpecimenConfig(base_thickness=0.0)), "specimen.base_thickness"),
])
def test_validation_names_the_field(overrides, field):
    cfg = _fast_config(**overrides)
    with pytest.raises(ConfigError) as err:
        cfg.validate()
    assert field in str(err.value)


def test_grid_extent_defaults_to_drill_circle():
    cfg = _fast_config()
    assert cfg.specimen.grid_extent is None
    assert cfg.resolved_specimen().grid_extent == pytest.approx(2.5 * cfg.radius)
    explicit = _fast_config(specimen=SpecimenConfig(grid_extent=0.03))
    assert explicit.resolved_specimen().grid_extent == 0.03


def test_outcome_summary_fields():
    out = run_trial(_fast_config())
    s = out.summary()
    assert s["classification"] == "Success"
    assert s["seed"] == 3
    assert s["ticks"] == out.ticks
    assert s["stop_fired"] is True
    assert len(s["final_completions"]) == 30
