import numpy as np
import pytest

from probcov import (
    ExperimentConfig,
    QuantileRegressionForest,
    SkirmishConfig,
    TamariskConfig,
    generate_dataset,
    run_experiment,
)


def make_rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def heteroskedastic_xy(rng, n):
    """x ~ U(0, 3), y | x ~ Normal(x, 1 + x^2); continuous, never tied."""
    x = rng.uniform(0.0, 3.0, size=n)
    y = x + np.sqrt(1.0 + x**2) * rng.standard_normal(n)
    return x.reshape(-1, 1), y


@pytest.fixture(scope="session")
def toy_xy():
    rng = make_rng(1234)
    return heteroskedastic_xy(rng, 90)


@pytest.fixture(scope="session")
def toy_forest(toy_xy):
    X, y = toy_xy
    return QuantileRegressionForest(n_estimators=12, min_samples_leaf=4,
                                    random_state=11).fit(X, y)


@pytest.fixture(scope="session")
def tiny_tamarisk():
    return generate_dataset(TamariskConfig(horizon=10), 60, 9)


@pytest.fixture(scope="session")
def small_skirmish_suite():
    """A desk-scale monitor for a short skirmish with an early shock."""
    from probcov import build_monitor, partition

    config = SkirmishConfig(horizon=16, reinforcement_step=6)
    episodes = generate_dataset(config, 700, 21)
    train, cal, test = partition(episodes, 300, 300, 100, 77)
    suite = build_monitor(train, cal, {"n_estimators": 40}, random_state=5)
    return config, suite, test


@pytest.fixture(scope="session")
def tamarisk_report():
    return run_experiment(ExperimentConfig(domain="tamarisk"))


@pytest.fixture(scope="session")
def skirmish_report():
    return run_experiment(ExperimentConfig(domain="skirmish"))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if not acceptance_log.RECORDS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(acceptance_log.RECORDS):
        terminalreporter.write_line(line)
