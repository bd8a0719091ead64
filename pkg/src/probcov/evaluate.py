"""End-to-end evaluation: partitions, per-step calibration, ECE, traces.

The experiment mirrors the intended deployment: sample a large episode set,
split it into train / calibration / test, fit a per-step monitor suite,
state a total-return target as empirical test-set quantiles, then grade the
calibrated coverage brackets against what actually happened.  Everything is
repeated over several independent partitions so the headline numbers come
with a spread.

Reported artefacts: forward interval coverage at step 0, expected
calibration error of the bracket endpoints (per step and pooled),
reliability tables, the mean lower bracket by step, per-step traces for a
few sample episodes, and the fraction of episodes whose bracket has
committed (collapsed toward 0 or 1) by the final step.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from ._io import atomic_write_json, atomic_write_text
from ._validation import check_probability, check_vector
from .conformal import AT_LEAST, conformal_interval_batch, scores_from_levels
from .coverage import TargetInterval
from .monitor import build_monitor
from .sim import default_config, generate_dataset

__all__ = [
    "partition",
    "empirical_target_interval",
    "forward_coverage",
    "expected_calibration_error",
    "reliability_table",
    "ExperimentConfig",
    "CalibrationReport",
    "run_experiment",
]

logger = logging.getLogger("probcov.evaluate")


# ----------------------------------------------------------------------
# Building blocks
# ----------------------------------------------------------------------

def partition(episodes, n_train: int, n_cal: int, n_test: int,
              random_state: int):
    """Shuffle episodes and split into train / calibration / test lists."""
    episodes = list(episodes)
    for name, size in (("n_train", n_train), ("n_cal", n_cal),
                       ("n_test", n_test)):
        if not isinstance(size, (int, np.integer)) or size < 1:
            raise ValueError(f"{name} must be a positive integer")
    if n_train + n_cal + n_test > len(episodes):
        raise ValueError("partition sizes exceed the number of episodes")
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(int(random_state))))
    order = rng.permutation(len(episodes))
    picked = [episodes[i] for i in order]
    train = picked[:n_train]
    cal = picked[n_train:n_train + n_cal]
    test = picked[n_train + n_cal:n_train + n_cal + n_test]
    return train, cal, test


def _episode_returns(episodes_or_returns):
    seq = list(episodes_or_returns)
    if seq and hasattr(seq[0], "final_return"):
        return np.array([ep.final_return for ep in seq], dtype=np.float64)
    return check_vector(np.asarray(seq, dtype=np.float64), "returns", min_len=1)


def _type1_quantile(sorted_values, q: float) -> float:
    """Inverse-CDF (type 1) empirical quantile of pre-sorted values.

    The index is ``ceil(q * N)`` (1-based); products within 1e-9 of an
    integer snap to it so that decimal-looking levels such as 0.9 behave as
    written rather than as their binary approximations.
    """
    n = sorted_values.shape[0]
    if q <= 0.0:
        k = 1
    elif q >= 1.0:
        k = n
    else:
        k = int(math.ceil(q * n - 1e-9))
        k = min(max(k, 1), n)
    return float(sorted_values[k - 1])


def empirical_target_interval(episodes_or_returns, lower_q: float = 0.1,
                              upper_q: float = 0.9) -> TargetInterval:
    """Target interval spanning two empirical return quantiles."""
    if not (0.0 <= lower_q <= upper_q <= 1.0):
        raise ValueError("quantile levels must satisfy 0 <= lower <= upper <= 1")
    returns = np.sort(_episode_returns(episodes_or_returns))
    return TargetInterval(_type1_quantile(returns, lower_q),
                          _type1_quantile(returns, upper_q))


def forward_coverage(forest, scores, episodes, delta: float,
                     guarantee: str = AT_LEAST) -> float:
    """Fraction of episodes whose total return the step-0 interval captured."""
    episodes = list(episodes)
    if not episodes:
        raise ValueError("need at least one episode")
    X = np.stack([ep.features[0] for ep in episodes])
    y = np.array([ep.final_return for ep in episodes])
    lo, hi = conformal_interval_batch(forest, scores, X, delta, guarantee)
    return float(np.mean((lo <= y) & (y <= hi)))


def _bin_index(probabilities, n_bins):
    return np.clip(np.floor(probabilities * n_bins).astype(np.int64),
                   0, n_bins - 1)


def expected_calibration_error(predicted, outcomes, n_bins: int = 30) -> float:
    """Bin-weighted gap between predicted probabilities and observed rates.

    Probabilities are bucketed into ``n_bins`` equal-width bins on [0, 1]
    (the last bin closed above); each non-empty bin contributes its share of
    points times the absolute difference between its mean prediction and its
    empirical outcome rate.
    """
    predicted = check_probability(np.asarray(predicted, dtype=np.float64).ravel(),
                                  "predicted")
    outcomes = np.asarray(outcomes, dtype=np.float64).ravel()
    if predicted.shape != outcomes.shape or predicted.size == 0:
        raise ValueError("predicted and outcomes must be equal-length and "
                         "non-empty")
    if np.any((outcomes != 0.0) & (outcomes != 1.0)):
        raise ValueError("outcomes must be binary")
    if not isinstance(n_bins, (int, np.integer)) or n_bins < 1:
        raise ValueError("n_bins must be a positive integer")
    idx = _bin_index(predicted, n_bins)
    total = predicted.size
    ece = 0.0
    for b, count in zip(*np.unique(idx, return_counts=True)):
        mask = idx == b
        gap = abs(float(outcomes[mask].mean()) - float(predicted[mask].mean()))
        ece += (count / total) * gap
    return ece


def reliability_table(predicted, outcomes, n_bins: int = 30):
    """Per-bin calibration summary as a ``(n_bins, 5)`` array.

    Columns: bin lower edge, bin upper edge, count, mean predicted
    probability, observed outcome rate (the last two are NaN for empty bins).
    """
    predicted = check_probability(np.asarray(predicted, dtype=np.float64).ravel(),
                                  "predicted")
    outcomes = np.asarray(outcomes, dtype=np.float64).ravel()
    if predicted.shape != outcomes.shape or predicted.size == 0:
        raise ValueError("predicted and outcomes must be equal-length and "
                         "non-empty")
    idx = _bin_index(predicted, n_bins)
    table = np.empty((n_bins, 5), dtype=np.float64)
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        table[b, 0] = b / n_bins
        table[b, 1] = (b + 1) / n_bins
        table[b, 2] = count
        if count:
            table[b, 3] = float(predicted[mask].mean())
            table[b, 4] = float(outcomes[mask].mean())
        else:
            table[b, 3] = np.nan
            table[b, 4] = np.nan
    return table


# ----------------------------------------------------------------------
# The experiment
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Scale, seeds, and model settings for one evaluation run."""

    domain: str = "tamarisk"
    episode_count: int = 10000
    n_train: int = 2500
    n_cal: int = 2500
    n_test: int = 5000
    partition_seeds: tuple = (101, 102, 103, 104, 105)
    delta: float = 0.2
    target_quantiles: tuple = (0.1, 0.9)
    n_bins: int = 30
    sim_seed: int = 424242
    forest_seed: int = 7
    n_estimators: int = 100
    min_samples_leaf: int = 5
    # Wider than the forest's own default: both simulators carry features
    # that are constant at early timesteps (step index, banked reward), and
    # a larger candidate pool keeps those from starving the split search.
    max_features: float = 0.6
    bootstrap: bool = True
    n_trace_episodes: int = 10
    sim_config: object = None

    def __post_init__(self):
        if self.domain not in ("tamarisk", "skirmish"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.n_train + self.n_cal + self.n_test > self.episode_count:
            raise ValueError("partition sizes exceed episode_count")
        if not self.partition_seeds:
            raise ValueError("need at least one partition seed")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie strictly between 0 and 1")

    def forest_params(self):
        return dict(n_estimators=self.n_estimators,
                    min_samples_leaf=self.min_samples_leaf,
                    max_features=self.max_features,
                    bootstrap=self.bootstrap)


@dataclass
class CalibrationReport:
    """Everything :func:`run_experiment` measured, ready to serialise."""

    domain: str
    config: dict
    horizon: int
    n_calibration: int
    targets: np.ndarray = field(repr=False)           # (k, 2)
    forward_coverage: np.ndarray = field(repr=False)  # (k,)
    ece_lower_by_step: np.ndarray = field(repr=False)   # (k, H)
    ece_upper_by_step: np.ndarray = field(repr=False)   # (k, H)
    pooled_ece_lower: np.ndarray = field(repr=False)    # (k,)
    pooled_ece_upper: np.ndarray = field(repr=False)    # (k,)
    mean_p_lower_by_step: np.ndarray = field(repr=False)  # (k, H)
    outcome_rate: np.ndarray = field(repr=False)        # (k,)
    reliability_lower: np.ndarray = field(repr=False)   # (B, 5)
    reliability_upper: np.ndarray = field(repr=False)   # (B, 5)
    convergence_rate: np.ndarray = field(repr=False)    # (k,)
    convergence_eligible: np.ndarray = field(repr=False)  # (k,)
    trace_episode_ids: np.ndarray = field(repr=False)   # (m,)
    trace_p_lower: np.ndarray = field(repr=False)       # (H, m)
    trace_outcomes: np.ndarray = field(repr=False)      # (m,)

    def summary(self) -> dict:
        return {
            "domain": self.domain,
            "horizon": self.horizon,
            "n_calibration": self.n_calibration,
            "forward_coverage_mean": float(self.forward_coverage.mean()),
            "forward_coverage_std": float(self.forward_coverage.std(ddof=1))
            if self.forward_coverage.size > 1 else 0.0,
            "pooled_ece_lower_mean": float(self.pooled_ece_lower.mean()),
            "pooled_ece_upper_mean": float(self.pooled_ece_upper.mean()),
            "step_ece_lower_mean": float(self.ece_lower_by_step.mean()),
            "step_ece_upper_mean": float(self.ece_upper_by_step.mean()),
            "mean_p_lower_min": float(self.mean_p_lower_by_step.mean(axis=0).min()),
            "mean_p_lower_max": float(self.mean_p_lower_by_step.mean(axis=0).max()),
            "outcome_rate_mean": float(self.outcome_rate.mean()),
            "convergence_rate_mean": float(self.convergence_rate.mean()),
        }

    def summary_lines(self):
        s = self.summary()
        return [f"{k} = {v}" for k, v in sorted(s.items())]

    # ------------------------------------------------------------------

    def write(self, directory):
        """Write the report as CSV tables plus a JSON summary.

        Output is a pure function of the report contents (no timestamps),
        so identical runs produce byte-identical files.
        """
        os.makedirs(directory, exist_ok=True)

        def csv(name, header, rows):
            lines = [header]
            for row in rows:
                lines.append(",".join(
                    repr(float(v)) if isinstance(v, (float, np.floating))
                    else str(v) for v in row))
            atomic_write_text(os.path.join(directory, name),
                              "\n".join(lines) + "\n")

        atomic_write_json(os.path.join(directory, "summary.json"),
                          {"summary": self.summary(), "config": self.config})

        k = self.forward_coverage.shape[0]
        csv("forward_coverage.csv",
            "partition,coverage,target_lo,target_hi,outcome_rate",
            [(p, float(self.forward_coverage[p]), float(self.targets[p, 0]),
              float(self.targets[p, 1]), float(self.outcome_rate[p]))
             for p in range(k)])

        H = self.horizon
        el = self.ece_lower_by_step
        eu = self.ece_upper_by_step
        ml = self.mean_p_lower_by_step
        csv("ece_by_step.csv",
            "t,ece_lower_mean,ece_lower_std,ece_upper_mean,ece_upper_std",
            [(t, float(el[:, t].mean()), float(el[:, t].std(ddof=1)) if k > 1 else 0.0,
              float(eu[:, t].mean()), float(eu[:, t].std(ddof=1)) if k > 1 else 0.0)
             for t in range(H)])
        csv("mean_p_lower_by_step.csv", "t,mean,std",
            [(t, float(ml[:, t].mean()), float(ml[:, t].std(ddof=1)) if k > 1 else 0.0)
             for t in range(H)])
        csv("pooled_ece.csv", "partition,ece_lower,ece_upper",
            [(p, float(self.pooled_ece_lower[p]), float(self.pooled_ece_upper[p]))
             for p in range(k)])
        for name, table in (("reliability_lower.csv", self.reliability_lower),
                            ("reliability_upper.csv", self.reliability_upper)):
            csv(name, "bin_lo,bin_hi,count,mean_predicted,observed_rate",
                [(float(r[0]), float(r[1]), int(r[2]),
                  float(r[3]), float(r[4])) for r in table])
        csv("traces.csv", "episode_id,t,p_lower",
            [(int(self.trace_episode_ids[m]), t, float(self.trace_p_lower[t, m]))
             for m in range(self.trace_episode_ids.shape[0])
             for t in range(H)])
        csv("convergence.csv", "partition,eligible,converged_fraction",
            [(p, int(self.convergence_eligible[p]),
              float(self.convergence_rate[p])) for p in range(k)])


def _config_snapshot(config: ExperimentConfig) -> dict:
    snap = asdict(config)
    sim_cfg = snap.pop("sim_config")
    if sim_cfg is not None:
        snap["sim_config"] = dict(sim_cfg) if isinstance(sim_cfg, dict) else asdict(config.sim_config)
    snap["partition_seeds"] = list(config.partition_seeds)
    snap["target_quantiles"] = list(config.target_quantiles)
    return snap


def run_experiment(config: ExperimentConfig, episodes=None) -> CalibrationReport:
    """Run the full pipeline and collect a :class:`CalibrationReport`.

    ``episodes`` may be supplied to reuse a pre-generated dataset; otherwise
    one is generated from the config's simulator settings.
    """
    sim_cfg = config.sim_config or default_config(config.domain)
    if episodes is None:
        logger.info("generating %d %s episodes", config.episode_count,
                    config.domain)
        episodes = generate_dataset(sim_cfg, config.episode_count,
                                    config.sim_seed)
    else:
        episodes = list(episodes)
        if len(episodes) < config.n_train + config.n_cal + config.n_test:
            raise ValueError("supplied dataset is smaller than the "
                             "configured partition sizes")

    horizon = episodes[0].horizon
    n_parts = len(config.partition_seeds)
    n_test = config.n_test
    noise = getattr(sim_cfg, "noise_scale", 0.0)

    targets = np.empty((n_parts, 2))
    fwd = np.empty(n_parts)
    outcome_rate = np.empty(n_parts)
    ece_lower = np.empty((n_parts, horizon))
    ece_upper = np.empty((n_parts, horizon))
    pooled_lower = np.empty(n_parts)
    pooled_upper = np.empty(n_parts)
    mean_p_lower = np.empty((n_parts, horizon))
    conv_rate = np.empty(n_parts)
    conv_eligible = np.empty(n_parts, dtype=np.int64)
    all_p_lower = []
    all_p_upper = []
    all_outcomes = []
    trace_ids = trace_p = trace_out = None
    n_cal_common = None

    for p, seed in enumerate(config.partition_seeds):
        train, cal, test = partition(episodes, config.n_train, config.n_cal,
                                     n_test, seed)
        target = empirical_target_interval(test, *config.target_quantiles)
        targets[p] = (target.lo, target.hi)
        logger.info("partition %d/%d: target [%.4f, %.4f]; fitting %d models",
                    p + 1, n_parts, target.lo, target.hi, horizon)

        forest_seed = int(np.random.SeedSequence(
            entropy=int(config.forest_seed),
            spawn_key=(p,)).generate_state(1)[0])
        suite = build_monitor(train, cal, config.forest_params(),
                              random_state=forest_seed)
        n_cal_common = suite.n_calibration

        scores = scores_from_levels(suite.levels[0].levels)
        fwd[p] = forward_coverage(suite.models[0], scores, test, config.delta)

        finals = np.array([ep.final_return for ep in test])
        outcomes = ((target.lo <= finals) & (finals <= target.hi)).astype(float)
        outcome_rate[p] = outcomes.mean()

        p_lo_all = np.empty((horizon, n_test))
        p_hi_all = np.empty((horizon, n_test))
        for t in range(horizon):
            F = np.stack([ep.features[t] for ep in test])
            p_lo, p_hi = suite.step_probability_batch(t, F, target)
            p_lo_all[t] = p_lo
            p_hi_all[t] = p_hi
            ece_lower[p, t] = expected_calibration_error(p_lo, outcomes,
                                                         config.n_bins)
            ece_upper[p, t] = expected_calibration_error(p_hi, outcomes,
                                                         config.n_bins)
            mean_p_lower[p, t] = p_lo.mean()

        tiled = np.tile(outcomes, horizon)
        pooled_lower[p] = expected_calibration_error(p_lo_all.ravel(), tiled,
                                                     config.n_bins)
        pooled_upper[p] = expected_calibration_error(p_hi_all.ravel(), tiled,
                                                     config.n_bins)
        all_p_lower.append(p_lo_all.ravel())
        all_p_upper.append(p_hi_all.ravel())
        all_outcomes.append(tiled)

        # Bracket commitment at the last step: outside a small band around
        # the target endpoints (the tie-breaking noise width), the final
        # bracket should have collapsed toward 0 or toward 1.
        margin = np.minimum(np.abs(finals - target.lo),
                            np.abs(finals - target.hi))
        eligible = margin > noise
        m = n_cal_common + 1
        committed = (p_lo_all[horizon - 1] <= 2.0 / m) | (
            p_lo_all[horizon - 1] >= 1.0 - 4.0 / m)
        conv_eligible[p] = int(eligible.sum())
        conv_rate[p] = float(committed[eligible].mean()) if eligible.any() else 1.0

        if p == 0:
            rng = np.random.Generator(np.random.Philox(
                np.random.SeedSequence(int(seed), spawn_key=(1,))))
            m_trace = min(config.n_trace_episodes, n_test)
            pick = np.sort(rng.choice(n_test, size=m_trace, replace=False))
            trace_ids = np.array([test[i].episode_id for i in pick])
            trace_p = p_lo_all[:, pick].copy()
            trace_out = outcomes[pick].copy()

        logger.info("partition %d/%d: forward %.4f, pooled ECE %.4f/%.4f, "
                    "commitment %.3f", p + 1, n_parts, fwd[p],
                    pooled_lower[p], pooled_upper[p], conv_rate[p])

    return CalibrationReport(
        domain=config.domain,
        config=_config_snapshot(config),
        horizon=horizon,
        n_calibration=n_cal_common,
        targets=targets,
        forward_coverage=fwd,
        ece_lower_by_step=ece_lower,
        ece_upper_by_step=ece_upper,
        pooled_ece_lower=pooled_lower,
        pooled_ece_upper=pooled_upper,
        mean_p_lower_by_step=mean_p_lower,
        outcome_rate=outcome_rate,
        reliability_lower=reliability_table(np.concatenate(all_p_lower),
                                            np.concatenate(all_outcomes),
                                            config.n_bins),
        reliability_upper=reliability_table(np.concatenate(all_p_upper),
                                            np.concatenate(all_outcomes),
                                            config.n_bins),
        convergence_rate=conv_rate,
        convergence_eligible=conv_eligible,
        trace_episode_ids=trace_ids,
        trace_p_lower=trace_p,
        trace_outcomes=trace_out,
    )
