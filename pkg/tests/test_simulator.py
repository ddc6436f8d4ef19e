import numpy as np
import pytest
from scipy.stats import chisquare

from src.model import INFINITE, Configuration, ModelParams, skellam_cdf
from src.simulator import (
    ALL,
    Direction,
    Event,
    SimConfig,
    apply_event,
    cdf_from_samples,
    empirical_cdf,
    enabled_events,
    order_statistic_samples,
    replica_rng,
    run_replica,
    simulate_positions,
    step,
)
from utils.errors import RunawayError, ValidationError


@pytest.fixture
def half():
    """tau = 1/2 with p = 0.6."""
    return ModelParams.from_up(2.0 / 3.0, 0.6)


def _lone(params, t, replicas, seed=1):
    return SimConfig.build(params=params, init=Configuration.from_positions([0]), t_end_physical=t,
                           replicas=replicas, seed=seed)


def test_enabled_events_single_particle():
    params = ModelParams.from_up(0.7, 0.6)
    events = enabled_events(Configuration.from_positions([0]), params)
    assert [(e.site, e.direction, e.size) for e in events] == [(0, Direction.RIGHT, 1), (0, Direction.LEFT, 1)]
    assert [e.rate for e in events] == pytest.approx([0.6, 0.4])


def test_enabled_events_two_stacked(half, one_param):
    events = enabled_events(Configuration.stack(2), half)
    assert len(events) == 4
    assert sum(e.rate for e in events) == pytest.approx(0.6 + 0.4 + 0.4 + 0.4 / 3.0)
    # tau = 2/3: R_2 = 0.36, L_2 = 0.16
    assert sum(e.rate for e in enabled_events(Configuration.stack(2), one_param)) == pytest.approx(1.52)


def test_enabled_events_infinite_site(half):
    events = enabled_events(Configuration.step_initial(3), half, n_max_peel=1)
    assert events == [Event(3, Direction.RIGHT, ALL, pytest.approx(0.3)), Event(3, Direction.LEFT, 1, pytest.approx(0.4))]


def test_apply_event_moves():
    moved = apply_event(Configuration.from_positions([0]), Event(0, Direction.RIGHT, 1, 0.6))
    assert moved.occupancy == {1: 1}
    peeled = apply_event(Configuration.stack(3), Event(0, Direction.LEFT, 2, 0.1))
    assert peeled.occupancy == {-1: 2, 0: 1}
    shifted = apply_event(Configuration(((-2, 1), (0, INFINITE))), Event(0, Direction.RIGHT, ALL, 0.3))
    assert shifted.occupancy == {-2: 1, 1: INFINITE}


def test_apply_event_merges_into_infinite_site():
    config = Configuration(((-1, 2), (0, INFINITE)))
    merged = apply_event(config, Event(-1, Direction.RIGHT, 1, 0.5))
    assert merged.occupancy == {-1: 1, 0: INFINITE}


def test_apply_event_rejects_impossible_moves():
    with pytest.raises(ValidationError):
        apply_event(Configuration.stack(2), Event(0, Direction.LEFT, 3, 0.1))
    with pytest.raises(ValidationError):
        apply_event(Configuration.stack(2), Event(5, Direction.LEFT, 1, 0.1))
    with pytest.raises(ValidationError):
        apply_event(Configuration.step_initial(0), Event(0, Direction.LEFT, ALL, 0.1))


def test_step_conserves_particles(one_param, seed):
    rng = replica_rng(seed, 0)
    config = Configuration.from_positions([0, 0, 0, 1, 3])
    for _ in range(200):
        config, elapsed = step(config, one_param, rng)
        assert elapsed > 0
        assert config.particle_total == 5


def test_step_keeps_infinite_site_rightmost(half, seed):
    rng = replica_rng(seed, 0)
    config = Configuration.step_initial(0)
    for _ in range(300):
        config, _ = step(config, half, rng, n_max_peel=12)
        site = config.infinite_site
        assert site is not None
        assert all(s <= site for s, _ in config.sites)


def test_step_rejects_empty_system(one_param, seed):
    with pytest.raises(ValidationError):
        step(Configuration(()), one_param, replica_rng(seed, 0))


def test_sim_config_validation(one_param):
    with pytest.raises(ValidationError):
        SimConfig.build(params=one_param, init=Configuration.stack(2), t_end_physical=1.0, replicas=0)
    with pytest.raises(ValidationError):
        SimConfig.build(params=one_param, init=Configuration.stack(2), t_end_physical=-1.0, replicas=5)
    cfg = SimConfig.build(params=one_param, init=Configuration.step_initial(0), t_end_physical=1.0, replicas=5)
    assert cfg.n_max_peel >= 1
    assert cfg.tracked == cfg.n_big
    with pytest.raises(ValidationError):
        order_statistic_samples(cfg, 17)


def test_replica_zero_time_returns_initial_positions(one_param):
    cfg = SimConfig.build(params=one_param, init=Configuration.from_positions([-1, 0, 0, 4]),
                          t_end_physical=0.0, replicas=1)
    assert run_replica(cfg, 0).tolist() == [-1, 0, 0, 4]
    step_cfg = SimConfig.build(params=one_param, init=Configuration.step_initial(2), t_end_physical=0.0,
                               replicas=1, n_big=16, step_scheme="infinite")
    assert run_replica(step_cfg, 0).tolist() == [2] * 16


def test_replica_determinism(one_param):
    cfg = SimConfig.build(params=one_param, init=Configuration.stack(5), t_end_physical=3.0, replicas=40, seed=99)
    assert np.array_equal(run_replica(cfg, 7), run_replica(cfg, 7))
    serial = simulate_positions(cfg, workers=1)
    assert np.array_equal(serial[7], run_replica(cfg, 7))
    assert np.all(np.diff(serial, axis=1) >= 0)
    assert serial.shape == (40, 5)


def test_workers_do_not_change_results(one_param, monkeypatch):
    monkeypatch.setattr("src.simulator.REPLICA_CHUNK", 10)
    cfg = SimConfig.build(params=one_param, init=Configuration.stack(3), t_end_physical=2.0, replicas=30, seed=5)
    assert np.array_equal(simulate_positions(cfg, workers=1), simulate_positions(cfg, workers=2))


def test_runaway_guard(one_param):
    cfg = SimConfig.build(params=one_param, init=Configuration.from_positions([0]), t_end_physical=100.0,
                          replicas=1, event_guard=1)
    with pytest.raises(RunawayError):
        run_replica(cfg, 0)
    step_cfg = SimConfig.build(params=one_param, init=Configuration.step_initial(0), t_end_physical=100.0,
                               replicas=1, event_guard=1, step_scheme="infinite")
    with pytest.raises(RunawayError):
        run_replica(step_cfg, 0)


def test_lone_particle_mean_drift():
    params = ModelParams.from_up(0.7, 0.6)
    positions = simulate_positions(_lone(params, 10.0, 20_000), workers=1)[:, 0]
    stderr = np.sqrt(10.0 / len(positions))
    assert abs(positions.mean() - 2.0) < 3.0 * stderr


def test_lone_particle_matches_skellam_chi_square():
    params = ModelParams.from_up(0.7, 0.6)
    positions = simulate_positions(_lone(params, 1.0, 20_000, seed=3), workers=1)[:, 0]
    edges = np.arange(-2, 4)
    cdf = np.array([skellam_cdf(d, 0.6, 0.4) for d in edges])
    expected = np.diff(np.concatenate([[0.0], cdf, [1.0]])) * len(positions)
    observed = np.array([np.sum(positions <= edges[0])]
                        + [np.sum(positions == d) for d in edges[1:]]
                        + [np.sum(positions > edges[-1])])
    assert chisquare(observed, expected).pvalue > 0.01


def test_empirical_cdf_lone_particle(two_param):
    x = np.arange(-4, 6)
    cdf = empirical_cdf(_lone(two_param, 2.0, 20_000, seed=11), 1, x, workers=1)
    exact = np.array([skellam_cdf(d, 2.0 * two_param.p, 2.0 * two_param.q) for d in x])
    assert np.all(np.abs(cdf.values - exact) <= 4.0 * cdf.stderr + 1e-3)
    assert np.all(np.diff(cdf.values) >= 0)
    assert cdf.replicas == 20_000


def test_cdf_from_samples_edges():
    cdf = cdf_from_samples(np.array([0, 1, 1, 3]), [-1, 0, 1, 2, 3, 10])
    assert cdf.values.tolist() == [0.0, 0.25, 0.75, 0.75, 1.0, 1.0]
    assert cdf.stderr[0] == 0.0 and cdf.stderr[-1] == 0.0
    assert cdf.as_map[1] == (0.75, pytest.approx(np.sqrt(0.75 * 0.25 / 4)))


def test_step_mode_insensitive_to_n_big(half):
    x = np.arange(-4, 3)
    runs = []
    for n_big in (32, 64):
        cfg = SimConfig.build(params=half, init=Configuration.step_initial(0), t_end_physical=0.5,
                              replicas=20_000, seed=21, n_big=n_big)
        runs.append(empirical_cdf(cfg, 1, x, workers=1))
    joint = np.sqrt(runs[0].stderr ** 2 + runs[1].stderr ** 2)
    assert np.all(np.abs(runs[0].values - runs[1].values) <= 4.0 * joint + 1e-3)


def test_infinite_scheme_cdf_is_a_cdf(half):
    cfg = SimConfig.build(params=half, init=Configuration.step_initial(0), t_end_physical=1.0,
                          replicas=500, seed=4, n_big=16, step_scheme="infinite")
    cdf = empirical_cdf(cfg, 2, np.arange(-6, 6), workers=1)
    assert np.all((cdf.values >= 0) & (cdf.values <= 1))
    assert np.all(np.diff(cdf.values) >= 0)
    assert cdf.values[-1] == 1.0


def _step_run(params, scheme, replicas, seed, n_max_peel=None):
    return SimConfig.build(params=params, init=Configuration.step_initial(0), t_end_physical=1.0 / params.gamma,
                           replicas=replicas, seed=seed, n_big=32, step_scheme=scheme, n_max_peel=n_max_peel)


@pytest.mark.parametrize("m", [1, 2])
def test_infinite_scheme_insensitive_to_peel_depth(tau_half, m):
    x = np.arange(-3, 3)
    base = _step_run(tau_half, "infinite", 3000, 31)
    deep = _step_run(tau_half, "infinite", 3000, 32, n_max_peel=2 * base.n_max_peel)
    runs = [empirical_cdf(cfg, m, x, workers=1) for cfg in (base, deep)]
    joint = np.sqrt(runs[0].stderr ** 2 + runs[1].stderr ** 2)
    assert np.all(np.abs(runs[0].values - runs[1].values) <= 4.0 * joint + 1e-3)


def test_infinite_scheme_sits_above_stack_scheme(tau_half):
    # tau = 1/2, formula time 1: the one-parameter formula gives P(x_1 <= 0) = 0.5921
    infinite = empirical_cdf(_step_run(tau_half, "infinite", 4000, 41), 1, [0], workers=1)
    stack = empirical_cdf(_step_run(tau_half, "stack", 4000, 42), 1, [0], workers=1)
    assert infinite.values[0] == pytest.approx(0.697, abs=0.035)
    assert stack.values[0] == pytest.approx(0.592, abs=0.035)
    assert infinite.values[0] - stack.values[0] > 0.05


def test_infinite_scheme_logs_a_warning(half, caplog):
    cfg = SimConfig.build(params=half, init=Configuration.step_initial(0), t_end_physical=0.2,
                          replicas=5, seed=1, n_big=16, step_scheme="infinite")
    with caplog.at_level("WARNING", logger="src.simulator"):
        simulate_positions(cfg, workers=1)
    assert any("Infinite-site step scheme" in r.getMessage() for r in caplog.records)
