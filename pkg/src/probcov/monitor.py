"""Per-step runtime monitoring of an episode's chance to hit a return target.

A monitor suite holds one conditional-distribution model and one calibration
level set per timestep.  At runtime it watches an episode unfold: at step
``t`` it shifts the response-space target by the reward already banked
(models are trained on remaining return, the target is stated for the total
return), queries the step-``t`` model, and produces a calibrated bracket
``(p_lower, p_upper)`` on the probability that the episode's final return
lands in the target.  An alarm fires when the bracket's lower end drops
below a threshold: from that point on, even the optimistic reading of the
calibrated evidence says the target is unlikely to be met.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._io import atomic_savez, atomic_write_text
from ._validation import check_in_closed
from .coverage import (
    CalibrationLevels,
    CoverageBounds,
    TargetInterval,
    calibrate_levels,
    coverage_bounds_batch,
    coverage_bounds_from_levels,
)
from .forest import QuantileRegressionForest
from .sim.episode import Episode

__all__ = [
    "AlarmEvent",
    "MonitorSuite",
    "build_monitor",
    "alarms_to_csv",
    "FIRST_CROSSING",
    "EVERY_CROSSING",
]

_SUITE_FORMAT = "probcov-monitor-v1"

# Alarm emission modes: only the first threshold crossing, or every step
# spent below the threshold.
FIRST_CROSSING = "first"
EVERY_CROSSING = "every"


@dataclass(frozen=True)
class AlarmEvent:
    """One threshold crossing raised while monitoring an episode."""

    episode_id: int
    t: int
    p_lower: float
    p_upper: float
    threshold: float


def alarms_to_csv(alarms, path):
    lines = ["episode_id,t,p_lower,p_upper,threshold"]
    for a in alarms:
        lines.append(f"{a.episode_id},{a.t},{repr(a.p_lower)},"
                     f"{repr(a.p_upper)},{repr(a.threshold)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


class MonitorSuite:
    """Per-timestep models and calibration levels for one domain.

    Build with :func:`build_monitor` or restore with :meth:`load`.
    """

    def __init__(self, models, levels, domain="unknown"):
        models = list(models)
        levels = list(levels)
        if not models or len(models) != len(levels):
            raise ValueError("need one calibration level set per model")
        n_cal = levels[0].n
        d = models[0].n_features_in_
        for m, lv in zip(models, levels):
            if lv.n != n_cal:
                raise ValueError("calibration sets must share a common size")
            if m.n_features_in_ != d:
                raise ValueError("models must share a common feature count")
        self.models = models
        self.levels = levels
        self.domain = domain

    @property
    def horizon(self) -> int:
        return len(self.models)

    @property
    def n_calibration(self) -> int:
        return self.levels[0].n

    @property
    def n_features(self) -> int:
        return self.models[0].n_features_in_

    # ------------------------------------------------------------------

    def _check_step(self, t):
        if not (0 <= t < self.horizon):
            raise ValueError(f"step {t} outside monitored horizon "
                             f"[0, {self.horizon})")

    def step_probability(self, t: int, features,
                         target: TargetInterval) -> CoverageBounds:
        """Coverage bracket for the total-return target at step ``t``.

        ``features`` is the step-``t`` feature vector; its last column (the
        banked reward) is used to translate the target into remaining-return
        space.
        """
        self._check_step(t)
        x = np.asarray(features, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.n_features:
            raise ValueError("feature vector length mismatch")
        banked = float(x[-1])
        shifted = target.shifted(banked)
        model = self.models[t]
        band = []
        for end in (shifted.lo, shifted.hi):
            if np.isinf(end):
                band.append(0.0 if end < 0 else 1.0)
            else:
                band.append(model.cdf(x, end))
        return coverage_bounds_from_levels(self.levels[t], band[0], band[1])

    def step_probability_batch(self, t: int, features,
                               target: TargetInterval):
        """Vectorised :meth:`step_probability` over rows of ``features``."""
        self._check_step(t)
        F = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return coverage_bounds_batch(self.models[t], self.levels[t], F,
                                     target, offsets=F[:, -1])

    def monitor_episode(self, episode: Episode, target: TargetInterval,
                        threshold: float, mode: str = FIRST_CROSSING):
        """Replay an episode (or prefix) step by step.

        Returns ``(timeline, alarms)``: the per-step coverage brackets and
        the alarm events whose ``p_lower`` fell strictly below ``threshold``
        (only the first crossing in ``"first"`` mode, every such step in
        ``"every"`` mode).  The timeline always spans the full replayed
        prefix; alarms do not stop the replay.
        """
        threshold = check_in_closed(threshold, 0.0, 1.0, "threshold")
        if mode not in (FIRST_CROSSING, EVERY_CROSSING):
            raise ValueError(f"mode must be {FIRST_CROSSING!r} or "
                             f"{EVERY_CROSSING!r}")
        if episode.horizon > self.horizon:
            raise ValueError("episode is longer than the monitored horizon")
        if episode.n_features != self.n_features:
            raise ValueError("episode feature count mismatch")
        timeline = []
        alarms = []
        for t in range(episode.horizon):
            bounds = self.step_probability(t, episode.features[t], target)
            timeline.append(bounds)
            if bounds.p_lower < threshold:
                if mode == EVERY_CROSSING or not alarms:
                    alarms.append(AlarmEvent(
                        episode_id=episode.episode_id, t=t,
                        p_lower=bounds.p_lower, p_upper=bounds.p_upper,
                        threshold=threshold))
        return timeline, alarms

    # ------------------------------------------------------------------

    def save(self, path):
        """Serialise the whole suite to a single ``.npz`` archive."""
        arrays = {
            "format": np.array(_SUITE_FORMAT),
            "domain": np.array(self.domain),
            "horizon": np.array(self.horizon),
        }
        for t, (model, levels) in enumerate(zip(self.models, self.levels)):
            prefix = f"m{t:03d}_"
            for key, value in model._state_arrays().items():
                arrays[prefix + key] = value
            arrays[prefix + "levels"] = levels.levels
        atomic_savez(path, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            fmt = str(data["format"])
            if fmt != _SUITE_FORMAT:
                raise ValueError(f"unrecognised monitor format {fmt!r}")
            horizon = int(data["horizon"])
            domain = str(data["domain"])
            models = []
            levels = []
            for t in range(horizon):
                prefix = f"m{t:03d}_"
                models.append(QuantileRegressionForest._from_state(data, prefix))
                levels.append(CalibrationLevels(data[prefix + "levels"]))
        return cls(models, levels, domain=domain)


def _episode_matrix(episodes, t):
    return np.stack([ep.features[t] for ep in episodes])


def build_monitor(train_episodes, cal_episodes, forest_params=None,
                  random_state: int = 0, progress=None) -> MonitorSuite:
    """Fit one model per timestep on training episodes, calibrate on others.

    The step-``t`` model regresses the remaining return (final minus banked)
    on the step-``t`` features.  Training and calibration episodes must be
    disjoint — the calibration levels are only exchangeable with a future
    episode's level if the model never saw the calibration episodes.
    """
    train_episodes = list(train_episodes)
    cal_episodes = list(cal_episodes)
    if not train_episodes or not cal_episodes:
        raise ValueError("need non-empty training and calibration sets")
    horizon = train_episodes[0].horizon
    domain = train_episodes[0].domain
    for ep in train_episodes + cal_episodes:
        if ep.horizon != horizon:
            raise ValueError("episodes must share a common horizon")
        if ep.domain != domain:
            raise ValueError("episodes must share a common domain")
    train_ids = {ep.episode_id for ep in train_episodes}
    overlap = train_ids.intersection(ep.episode_id for ep in cal_episodes)
    if overlap:
        raise ValueError(f"training and calibration episodes overlap: "
                         f"{sorted(overlap)[:5]}")

    params = dict(forest_params or {})
    train_final = np.array([ep.final_return for ep in train_episodes])
    cal_final = np.array([ep.final_return for ep in cal_episodes])

    models = []
    levels = []
    for t in range(horizon):
        X_train = _episode_matrix(train_episodes, t)
        y_train = train_final - X_train[:, -1]
        seed = int(np.random.SeedSequence(
            entropy=int(random_state), spawn_key=(t,)).generate_state(1)[0])
        model = QuantileRegressionForest(random_state=seed, **params)
        model.fit(X_train, y_train)
        X_cal = _episode_matrix(cal_episodes, t)
        y_cal = cal_final - X_cal[:, -1]
        models.append(model)
        levels.append(calibrate_levels(model, X_cal, y_cal))
        if progress is not None:
            progress(t, horizon)
    return MonitorSuite(models, levels, domain=domain)
