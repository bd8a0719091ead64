import numpy as np
import pytest

from probcov import (
    EVERY_CROSSING,
    FIRST_CROSSING,
    MonitorSuite,
    SkirmishConfig,
    TamariskConfig,
    TargetInterval,
    alarms_to_csv,
    build_monitor,
    generate_dataset,
)

from conftest import make_rng


TARGET = TargetInterval(-5.0, 25.0)


def test_suite_dimensions(small_skirmish_suite):
    config, suite, test = small_skirmish_suite
    assert suite.horizon == config.horizon == 16
    assert suite.n_calibration == 300
    assert suite.n_features == 5
    assert suite.domain == "skirmish"
    assert all(ep.horizon == 16 for ep in test)


def test_timeline_spans_episode_and_prefix(small_skirmish_suite):
    _, suite, test = small_skirmish_suite
    ep = test[0]
    timeline, _ = suite.monitor_episode(ep, TARGET, threshold=0.0)
    assert len(timeline) == ep.horizon
    short_timeline, _ = suite.monitor_episode(ep.prefix(5), TARGET, 0.0)
    assert len(short_timeline) == 5
    for a, b in zip(short_timeline, timeline[:5]):
        assert a.p_lower == b.p_lower and a.p_upper == b.p_upper


def test_alarm_modes_share_timeline(small_skirmish_suite):
    _, suite, test = small_skirmish_suite
    ep = test[1]
    n = suite.n_calibration
    # p_lower never reaches 1 (it is capped at (n-1)/(n+1)), so a threshold
    # of 1.0 fires at every step in "every" mode and once in "first" mode.
    tl_first, first = suite.monitor_episode(ep, TARGET, 1.0, FIRST_CROSSING)
    tl_every, every = suite.monitor_episode(ep, TARGET, 1.0, EVERY_CROSSING)
    assert len(first) == 1 and first[0].t == 0
    assert [a.t for a in every] == list(range(ep.horizon))
    for a, b in zip(tl_first, tl_every):
        assert a.p_lower == b.p_lower and a.p_upper == b.p_upper
    assert all(a.p_lower <= (n - 1) / (n + 1) for a in tl_first)
    assert all(a.threshold == 1.0 for a in every)
    assert all(a.episode_id == ep.episode_id for a in every)

    _, silent = suite.monitor_episode(ep, TARGET, 0.0)
    assert silent == []


def test_threshold_boundary_is_strict(small_skirmish_suite):
    _, suite, test = small_skirmish_suite
    ep = test[2]
    timeline, _ = suite.monitor_episode(ep, TARGET, 0.0)
    floor = min(b.p_lower for b in timeline)
    _, at_floor = suite.monitor_episode(ep, TARGET, floor)
    assert at_floor == []
    if floor < 1.0:
        bumped = np.nextafter(floor, 1.0)
        _, above = suite.monitor_episode(ep, TARGET, bumped, EVERY_CROSSING)
        assert len(above) >= 1
        assert all(a.p_lower < bumped for a in above)


def test_step_probability_matches_batch(small_skirmish_suite):
    _, suite, test = small_skirmish_suite
    for t in (0, 6, 15):
        F = np.stack([ep.features[t] for ep in test[:20]])
        p_lower, p_upper = suite.step_probability_batch(t, F, TARGET)
        for i, row in enumerate(F):
            single = suite.step_probability(t, row, TARGET)
            assert single.p_lower == p_lower[i]
            assert single.p_upper == p_upper[i]


def test_banked_reward_translates_target(small_skirmish_suite):
    # Two states identical except for banked reward: banking `d` more
    # must read exactly like shifting the target down by `d`.
    _, suite, test = small_skirmish_suite
    x = test[3].features[7].copy()
    y = x.copy()
    y[-1] += 4.0
    lo = suite.step_probability(7, x, TargetInterval(TARGET.lo - 4.0,
                                                     TARGET.hi - 4.0))
    hi = suite.step_probability(7, y, TARGET)
    assert lo.p_lower == hi.p_lower
    assert lo.p_upper == hi.p_upper


def test_reinforcement_shock_moves_probability(small_skirmish_suite):
    config, suite, _ = small_skirmish_suite
    t = config.reinforcement_step
    favourable = TargetInterval(2.0, np.inf)
    calm = np.array([15.0, 2.0, 1.0, float(t), 2.0])
    swarmed = np.array([15.0, 14.0, 1.0, float(t), 2.0])
    b_calm = suite.step_probability(t, calm, favourable)
    b_swarm = suite.step_probability(t, swarmed, favourable)
    assert b_swarm.p_lower < b_calm.p_lower
    assert b_swarm.p_upper <= b_calm.p_upper


def test_unreachable_target_pins_bounds(small_skirmish_suite):
    _, suite, test = small_skirmish_suite
    ep = test[4]
    n = suite.n_calibration
    hopeless = TargetInterval(-np.inf, -1e8)
    bounds = suite.step_probability(0, ep.features[0], hopeless)
    # The cdf band collapses to [0, 0]; only levels exactly at 0 can sit
    # inside it, so the bracket is pinned by their count alone.
    zeros = int(np.sum(suite.levels[0].levels <= 0.0))
    assert bounds.p_lower == max(0, zeros - 1) / (n + 1)
    assert bounds.p_upper == (zeros + 1) / (n + 1)
    certain = TargetInterval(-np.inf, np.inf)
    wide = suite.step_probability(0, ep.features[0], certain)
    assert wide.p_lower == (n - 1) / (n + 1)
    assert wide.p_upper == 1.0


def test_monitor_input_validation(small_skirmish_suite):
    _, suite, test = small_skirmish_suite
    ep = test[5]
    with pytest.raises(ValueError):
        suite.monitor_episode(ep, TARGET, threshold=1.5)
    with pytest.raises(ValueError):
        suite.monitor_episode(ep, TARGET, 0.5, mode="sometimes")
    with pytest.raises(ValueError):
        suite.step_probability(16, ep.features[0], TARGET)
    with pytest.raises(ValueError):
        suite.step_probability(3, ep.features[0][:3], TARGET)
    long_ep = generate_dataset(SkirmishConfig(horizon=17), 1, 3)[0]
    with pytest.raises(ValueError):
        suite.monitor_episode(long_ep, TARGET, 0.5)


def test_build_monitor_validation():
    config = SkirmishConfig(horizon=5)
    eps = generate_dataset(config, 8, 11)
    with pytest.raises(ValueError):
        build_monitor([], eps[:4])
    with pytest.raises(ValueError):
        build_monitor(eps[:4], eps[3:6])  # shared episode id 3
    short = [ep.prefix(3) for ep in eps[4:]]
    with pytest.raises(ValueError):
        build_monitor(eps[:4], short)
    other = generate_dataset(TamariskConfig(horizon=5), 4, 11)
    with pytest.raises(ValueError):
        build_monitor(eps[:4], other)


def test_suite_round_trip(tmp_path, small_skirmish_suite):
    _, suite, test = small_skirmish_suite
    path = tmp_path / "suite.npz"
    suite.save(path)
    back = MonitorSuite.load(path)
    assert back.horizon == suite.horizon
    assert back.domain == suite.domain
    for lv1, lv2 in zip(suite.levels, back.levels):
        assert np.array_equal(lv1.levels, lv2.levels)
    for m1, m2 in zip(suite.models, back.models):
        s1, s2 = m1._state_arrays(), m2._state_arrays()
        assert s1.keys() == s2.keys()
        for key in s1:
            assert np.array_equal(s1[key], s2[key])
    for t in (0, 9):
        x = test[6].features[t]
        a = suite.step_probability(t, x, TARGET)
        b = back.step_probability(t, x, TARGET)
        assert a.p_lower == b.p_lower and a.p_upper == b.p_upper


def test_alarm_csv_format(tmp_path, small_skirmish_suite):
    _, suite, test = small_skirmish_suite
    ep = test[7]
    _, alarms = suite.monitor_episode(ep, TARGET, 1.0, EVERY_CROSSING)
    path = tmp_path / "alarms.csv"
    alarms_to_csv(alarms, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "episode_id,t,p_lower,p_upper,threshold"
    assert len(lines) == len(alarms) + 1
    cells = lines[1].split(",")
    assert int(cells[0]) == ep.episode_id
    assert int(cells[1]) == alarms[0].t
    # repr round-trip keeps the probabilities bit-exact.
    assert float(cells[2]) == alarms[0].p_lower
    assert float(cells[3]) == alarms[0].p_upper
