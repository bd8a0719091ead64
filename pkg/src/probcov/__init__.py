"""Calibrated prediction intervals and coverage-probability bounds.

The package runs split-conformal calibration through a conditional-CDF
forest in both directions: fix a miscoverage level and get a prediction
interval with finite-sample coverage guarantees, or fix a response-space
target interval and get a calibrated bracket on the probability of landing
in it.  Episode simulators, a per-step runtime monitor, and an evaluation
harness exercise the machinery end to end.
"""

from .conformal import (
    AT_LEAST,
    AT_MOST,
    ConformalIntervalRegressor,
    ConformalScores,
    PredictionInterval,
    calibrate_scores,
    conformal_interval,
    conformal_interval_batch,
    conformity_score,
    cqr_interval,
    score_order_index,
    scores_from_levels,
)
from .coverage import (
    CalibrationLevels,
    CoverageBounds,
    IntervalCoveragePredictor,
    TargetInterval,
    calibrate_levels,
    coverage_bounds,
    coverage_bounds_batch,
    coverage_bounds_from_levels,
    interval_rank_stats,
)
from .evaluate import (
    CalibrationReport,
    ExperimentConfig,
    empirical_target_interval,
    expected_calibration_error,
    forward_coverage,
    partition,
    reliability_table,
    run_experiment,
)
from .forest import QuantileRegressionForest, load_forest, save_forest
from .monitor import (
    AlarmEvent,
    EVERY_CROSSING,
    FIRST_CROSSING,
    MonitorSuite,
    alarms_to_csv,
    build_monitor,
)
from .sim import (
    Episode,
    SkirmishConfig,
    TamariskConfig,
    generate_dataset,
    load_dataset,
    sample_skirmish_episode,
    sample_tamarisk_episode,
    save_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "QuantileRegressionForest", "save_forest", "load_forest",
    "ConformalScores", "PredictionInterval", "ConformalIntervalRegressor",
    "conformity_score", "calibrate_scores", "scores_from_levels",
    "score_order_index", "conformal_interval", "conformal_interval_batch",
    "cqr_interval", "AT_LEAST", "AT_MOST",
    "TargetInterval", "CalibrationLevels", "CoverageBounds",
    "IntervalCoveragePredictor", "calibrate_levels", "interval_rank_stats",
    "coverage_bounds_from_levels", "coverage_bounds", "coverage_bounds_batch",
    "Episode", "TamariskConfig", "SkirmishConfig",
    "sample_tamarisk_episode", "sample_skirmish_episode",
    "generate_dataset", "save_dataset", "load_dataset",
    "MonitorSuite", "AlarmEvent", "build_monitor", "alarms_to_csv",
    "FIRST_CROSSING", "EVERY_CROSSING",
    "partition", "empirical_target_interval", "forward_coverage",
    "expected_calibration_error", "reliability_table",
    "ExperimentConfig", "CalibrationReport", "run_experiment",
    "__version__",
]
