"""End-to-end acceptance gate.

Each test grades one numbered claim about the finished system, prints a
single PASS/FAIL verdict line (collected again in the terminal summary), and
then asserts.  The two full-scale experiment fixtures are shared session-wide,
so the first tests that touch them pay the simulation and fitting cost.
"""

import itertools
from fractions import Fraction

import numpy as np
import pytest

from probcov import (
    AT_LEAST,
    AT_MOST,
    CalibrationLevels,
    ConformalScores,
    ExperimentConfig,
    MonitorSuite,
    QuantileRegressionForest,
    TamariskConfig,
    TargetInterval,
    calibrate_scores,
    conformal_interval,
    conformity_score,
    coverage_bounds_from_levels,
    cqr_interval,
    empirical_target_interval,
    run_experiment,
    score_order_index,
)
from probcov.sim import load_dataset, save_dataset

import acceptance_log
from conftest import heteroskedastic_xy, make_rng
from oracles import (
    coverage_enum_oracle,
    forest_cdf_oracle,
    forest_quantile_oracle,
    rank_count_oracle,
    score_index_oracle,
)


RESAMPLES = 2000


@pytest.fixture(scope="module")
def hetero_forest():
    # Large leaves keep the estimated conditional CDFs close to the truth;
    # the coverage guarantees hold for any fixed model, but the probability
    # bounds are only informative when the level distribution is near
    # uniform.
    X, y = heteroskedastic_xy(make_rng(2025), 8000)
    return QuantileRegressionForest(n_estimators=100, min_samples_leaf=100,
                                    random_state=33).fit(X, y)


def _resample_scores(forest, rng, n):
    """Conformity scores for RESAMPLES independent draws of n+1 fresh pairs."""
    x = rng.uniform(0.0, 3.0, size=(RESAMPLES, n + 1))
    y = x + np.sqrt(1.0 + x**2) * rng.standard_normal(x.shape)
    scores = conformity_score(forest, x.reshape(-1, 1), y.ravel())
    scores = scores.reshape(RESAMPLES, n + 1)
    return np.sort(scores[:, :n], axis=1), scores[:, n], x, y


def test_acceptance_1_forward_coverage_at_scale(tamarisk_report):
    cov = tamarisk_report.forward_coverage
    mean = float(cov.mean())
    std = float(cov.std(ddof=1))
    passed = 0.785 <= mean <= 0.815 and std <= 0.02
    acceptance_log.record(1, passed,
                          f"step-0 interval coverage mean {mean:.4f} "
                          f"(target [0.785, 0.815]), std {std:.4f} (<= 0.02) "
                          f"over {cov.size} partitions")
    assert passed


def test_acceptance_2_interval_coverage_frequencies(hetero_forest):
    rng = make_rng(91)
    checks = []
    for n, delta in ((99, 0.2), (9, 0.25)):
        cal, test, _, _ = _resample_scores(hetero_forest, rng, n)
        for guarantee in (AT_MOST, AT_LEAST):
            k = score_order_index(n, delta, guarantee)
            expected = k / (n + 1)
            covered = test <= cal[:, k - 1]
            freq = float(covered.mean())
            se = np.sqrt(expected * (1.0 - expected) / RESAMPLES)
            checks.append((n, guarantee, freq, expected,
                           abs(freq - expected) <= 3.0 * se))
    passed = all(ok for *_, ok in checks)
    detail = "; ".join(f"n={n} {g}: {f:.4f} vs {e:.3f}"
                       for n, g, f, e, _ in checks)
    acceptance_log.record(2, passed,
                          f"containment over {RESAMPLES} resamples within "
                          f"3 SE of exact coverage ({detail})")
    assert passed


def test_acceptance_3_probability_bounds_bracket_frequency(hetero_forest):
    n = 99
    rng = make_rng(92)
    # A fixed total-return-style target from a large marginal sample.
    xm = rng.uniform(0.0, 3.0, size=100000)
    ym = xm + np.sqrt(1.0 + xm**2) * rng.standard_normal(xm.shape)
    target = empirical_target_interval(ym, 0.1, 0.9)

    x = rng.uniform(0.0, 3.0, size=(RESAMPLES, n + 1))
    y = x + np.sqrt(1.0 + x**2) * rng.standard_normal(x.shape)
    levels = hetero_forest.predict_cdf(
        x[:, :n].reshape(-1, 1), y[:, :n].ravel()).reshape(RESAMPLES, n)
    x_test = x[:, n].reshape(-1, 1)
    a = hetero_forest.predict_cdf(x_test, target.lo)
    b = hetero_forest.predict_cdf(x_test, target.hi)

    hits = 0
    p_lower = np.empty(RESAMPLES)
    p_upper = np.empty(RESAMPLES)
    widths_exact = True
    unclamped = 0
    for r in range(RESAMPLES):
        bounds = coverage_bounds_from_levels(CalibrationLevels(levels[r]),
                                             float(a[r]), float(b[r]))
        p_lower[r] = bounds.p_lower
        p_upper[r] = bounds.p_upper
        hits += target.lo <= y[r, n] <= target.hi
        gap = bounds.rank_hi - bounds.rank_lo
        if 0 <= gap and gap + 2 <= n + 1:
            unclamped += 1
            widths_exact &= bounds.p_lower == gap / (n + 1)
            widths_exact &= bounds.p_upper == (gap + 2) / (n + 1)
            widths_exact &= (Fraction(gap + 2, n + 1) - Fraction(gap, n + 1)
                             == Fraction(2, n + 1))

    freq = hits / RESAMPLES
    se = np.sqrt(freq * (1.0 - freq) / RESAMPLES)
    lo_gate = float(p_lower.mean()) - 3.0 * se
    hi_gate = float(p_upper.mean()) + 3.0 * se
    bracketed = lo_gate <= freq <= hi_gate
    passed = bracketed and widths_exact and unclamped > 0
    acceptance_log.record(
        3, passed,
        f"target-hit frequency {freq:.4f} inside mean-bound bracket "
        f"[{lo_gate:.4f}, {hi_gate:.4f}]; bound width exactly 2/(n+1) in "
        f"all {unclamped}/{RESAMPLES} unclamped resamples")
    assert passed


def test_acceptance_4_pooled_ece(tamarisk_report, skirmish_report):
    worst_tam = float(tamarisk_report.pooled_ece_lower.max())
    worst_sk = float(skirmish_report.pooled_ece_lower.max())
    passed = worst_tam <= 0.02 and worst_sk <= 0.03
    acceptance_log.record(
        4, passed,
        f"worst pooled lower-bound ECE: tamarisk {worst_tam:.4f} (<= 0.02), "
        f"skirmish {worst_sk:.4f} (<= 0.03)")
    assert passed


def test_acceptance_5_mean_lower_bound_by_step(tamarisk_report):
    curve = tamarisk_report.mean_p_lower_by_step.mean(axis=0)
    lo, hi = float(curve.min()), float(curve.max())
    passed = lo >= 0.77 and hi <= 0.83
    acceptance_log.record(
        5, passed,
        f"tamarisk mean lower bound per step spans [{lo:.4f}, {hi:.4f}], "
        f"inside 0.8 +/- 0.03 at every step")
    assert passed


def test_acceptance_6_quantile_interval_fixture():
    inner = cqr_interval(1.0, 9.0, 0.5)
    outer = cqr_interval(0.0, 10.0, -0.5)
    fixture_ok = inner == (0.5, 9.5) and outer == (0.5, 9.5)

    rng = make_rng(606)
    X = rng.uniform(0.0, 1.0, size=(400, 1))
    y = rng.uniform(0.0, 10.0, size=400)
    # The feature is uninformative, so wide leaves give every query point a
    # conditional CDF spanning the full response range; the quantile levels
    # below then stay inside the attained, strictly increasing interior.
    forest = QuantileRegressionForest(n_estimators=50, min_samples_leaf=80,
                                      random_state=61).fit(X, y)
    scores = calibrate_scores(forest,
                              rng.uniform(0.0, 1.0, size=(99, 1)),
                              rng.uniform(0.0, 10.0, size=99))
    x0 = np.array([0.5])
    invertible = True
    intervals = {}
    for delta in (0.1, 0.2):
        iv = conformal_interval(forest, scores, x0, delta, AT_LEAST)
        k = score_order_index(99, delta, AT_LEAST)
        s = float(scores.scores[k - 1])
        intervals[delta] = (iv.lo, iv.hi)
        # Re-reading the endpoints through the conditional CDF must recover
        # the exact quantile levels the interval was cut at.
        invertible &= abs(forest.cdf(x0, iv.lo) - (0.5 - s)) <= 1e-9
        invertible &= abs(forest.cdf(x0, iv.hi) - (0.5 + s)) <= 1e-9
    distinct = intervals[0.1] != intervals[0.2]
    passed = fixture_ok and invertible and distinct
    acceptance_log.record(
        6, passed,
        f"both corrected quantile fixtures give [0.5, 9.5] exactly "
        f"({fixture_ok}); interval endpoints invert through the CDF to "
        f"within 1e-9 at delta 0.1 and 0.2 ({invertible}, distinct "
        f"intervals {distinct})")
    assert passed


def test_acceptance_7_small_case_enumeration(toy_xy):
    rng = make_rng(4242)
    mismatches = 0
    index_cases = bounds_cases = 0
    for _ in range(500):
        n = int(rng.integers(1, 11))
        delta = float(rng.uniform(0.01, 0.99))
        if rng.random() < 0.3:
            delta = float(rng.choice([0.125, 0.25, 0.5, 0.75]))
        guarantee = AT_LEAST if rng.random() < 0.5 else AT_MOST
        want = score_index_oracle(n, delta, guarantee)
        index_cases += 1
        try:
            got = score_order_index(n, delta, guarantee)
        except ValueError:
            got = None
        if got != want:
            mismatches += 1

        raw = rng.uniform(0.0, 1.0, size=n)
        if rng.random() < 0.2:
            raw[rng.random(n) < 0.5] = float(rng.choice([0.0, 1.0]))
        a, b = np.sort(rng.uniform(0.0, 1.0, size=2))
        if rng.random() < 0.2:
            a, b = 0.0, 1.0
        bounds = coverage_bounds_from_levels(CalibrationLevels(raw), a, b)
        lo, hi = coverage_enum_oracle(np.sort(raw), a, b)
        rank_lo, rank_hi = rank_count_oracle(np.sort(raw), a, b)
        bounds_cases += 1
        if (bounds.p_lower != lo or bounds.p_upper != hi
                or bounds.rank_lo != rank_lo or bounds.rank_hi != rank_hi):
            mismatches += 1

    X_pool, y_pool = toy_xy
    worst = 0.0
    for seed in range(10):
        sub = make_rng(700 + seed)
        rows = sub.choice(X_pool.shape[0], size=int(sub.integers(2, 11)),
                          replace=False)
        X, y = X_pool[rows], y_pool[rows]
        forest = QuantileRegressionForest(
            n_estimators=int(sub.integers(1, 4)), min_samples_leaf=1,
            bootstrap=True, random_state=seed).fit(X, y)
        queries = np.vstack([X, sub.uniform(-1.0, 4.0, size=(3, 1))])
        y_grid = np.concatenate([y, [y.min() - 1.0, y.max() + 1.0]])
        alpha_grid = np.concatenate([[0.0, 1.0], sub.uniform(0.0, 1.0, 5)])
        for vec in queries:
            for val in y_grid:
                worst = max(worst, abs(
                    forest.cdf(vec, float(val))
                    - forest_cdf_oracle(forest, X, vec, float(val))))
            for alpha in alpha_grid:
                worst = max(worst, abs(
                    forest.quantile(vec, float(alpha))
                    - forest_quantile_oracle(forest, X, vec, float(alpha))))

    passed = mismatches == 0 and worst <= 1e-12
    acceptance_log.record(
        7, passed,
        f"{index_cases} index and {bounds_cases} bound fixtures match "
        f"enumeration exactly ({mismatches} mismatches); forest CDF and "
        f"quantile within {worst:.2e} of the interpolation oracle")
    assert passed


def test_acceptance_8_reproducibility(tmp_path, toy_forest, toy_xy,
                                      small_skirmish_suite, tiny_tamarisk):
    artefacts_ok = True

    forest_path = tmp_path / "forest.npz"
    toy_forest.save(forest_path)
    again = QuantileRegressionForest.load(forest_path)
    s1, s2 = toy_forest._state_arrays(), again._state_arrays()
    artefacts_ok &= all(np.array_equal(s1[k], s2[k]) for k in s1)
    X, _ = toy_xy
    artefacts_ok &= np.array_equal(toy_forest.predict_cdf(X[:5], 1.0),
                                   again.predict_cdf(X[:5], 1.0))

    _, suite, test = small_skirmish_suite
    suite_path = tmp_path / "suite.npz"
    suite.save(suite_path)
    suite_back = MonitorSuite.load(suite_path)
    probe = suite.step_probability(3, test[0].features[3],
                                   TargetInterval(-5.0, 25.0))
    probe_back = suite_back.step_probability(3, test[0].features[3],
                                             TargetInterval(-5.0, 25.0))
    artefacts_ok &= probe == probe_back

    ds_path = tmp_path / "dataset"
    save_dataset(tiny_tamarisk, ds_path)
    ds_back, _ = load_dataset(ds_path)
    artefacts_ok &= all(
        np.array_equal(e1.features, e2.features)
        and np.array_equal(e1.rewards, e2.rewards)
        for e1, e2 in zip(tiny_tamarisk, ds_back))

    scores = ConformalScores(make_rng(15).uniform(0.0, 0.5, size=40))
    scores.to_csv(tmp_path / "scores.csv")
    artefacts_ok &= np.array_equal(
        ConformalScores.from_csv(tmp_path / "scores.csv").scores,
        scores.scores)
    levels = CalibrationLevels(make_rng(16).uniform(0.0, 1.0, size=40))
    levels.to_csv(tmp_path / "levels.csv")
    artefacts_ok &= np.array_equal(
        CalibrationLevels.from_csv(tmp_path / "levels.csv").levels,
        levels.levels)

    reduced = ExperimentConfig(
        domain="tamarisk", sim_config=TamariskConfig(horizon=12),
        episode_count=600, n_train=200, n_cal=200, n_test=200,
        partition_seeds=(101,), n_estimators=30, n_trace_episodes=5,
        sim_seed=77)
    first = run_experiment(reduced)
    second = run_experiment(reduced)
    d1, d2 = tmp_path / "run1", tmp_path / "run2"
    first.write(d1)
    second.write(d2)
    files = sorted(p.name for p in d1.iterdir())
    reports_ok = all((d1 / name).read_bytes() == (d2 / name).read_bytes()
                     for name in files)

    passed = artefacts_ok and reports_ok
    acceptance_log.record(
        8, passed,
        f"forest/monitor/dataset/score/level artefacts round-trip bit-exact "
        f"({artefacts_ok}); identical-seed experiment reruns produce "
        f"byte-identical reports across {len(files)} files ({reports_ok})")
    assert passed


def test_acceptance_9_bracket_commitment(tamarisk_report, skirmish_report):
    rates = {}
    for name, report in (("tamarisk", tamarisk_report),
                         ("skirmish", skirmish_report)):
        eligible = report.convergence_eligible.astype(float)
        converged = report.convergence_rate * eligible
        rates[name] = float(converged.sum() / eligible.sum())
    passed = all(rate >= 0.90 for rate in rates.values())
    acceptance_log.record(
        9, passed,
        f"final-step brackets committed for "
        f"{rates['tamarisk']:.4f} of eligible tamarisk episodes and "
        f"{rates['skirmish']:.4f} of eligible skirmish episodes (>= 0.90)")
    assert passed
