"""Attrition skirmish between two forces with a mid-episode reinforcement.

Blue and red forces trade simultaneous volleys: each surviving soldier on a
side independently downs an opponent with a fixed hit probability, and both
sides' casualties are resolved from the *pre-volley* counts.  At a known
step the red side receives a reinforcement column of compound-uniform size
(a column capacity is drawn uniformly, then the arriving count uniformly up
to that capacity) — arriving before that step's observation, so a monitor
watching the features sees the shock the moment it lands.  The step reward is the casualty differential
(red losses minus blue losses), making the total return a measure of how
decisively blue won the exchange.

A final-step perturbation of ±``noise_scale`` makes total returns
continuously distributed despite the integer-valued rewards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episode import Episode

__all__ = ["SkirmishConfig", "sample_skirmish_episode"]

DOMAIN = "skirmish"


@dataclass(frozen=True)
class SkirmishConfig:
    """Dynamics parameters for the skirmish domain."""

    horizon: int = 57
    blue_min: int = 5
    blue_max: int = 20
    red_min: int = 5
    red_max: int = 10
    reinforcement_step: int = 14
    reinforcement_max: int = 15
    blue_hit_prob: float = 0.1
    red_hit_prob: float = 0.1
    noise_scale: float = 5e-6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if not (0 <= self.blue_min <= self.blue_max):
            raise ValueError("blue force bounds out of order")
        if not (0 <= self.red_min <= self.red_max):
            raise ValueError("red force bounds out of order")
        if self.reinforcement_max < 0:
            raise ValueError("reinforcement_max must be >= 0")
        for name in ("blue_hit_prob", "red_hit_prob"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")

    @property
    def feature_names(self):
        return ["blue", "red", "reinforced", "step", "banked_reward"]


def sample_skirmish_episode(config: SkirmishConfig, rng: np.random.Generator,
                            episode_id: int = 0) -> Episode:
    """Simulate one episode; initial force sizes are drawn uniformly."""
    horizon = config.horizon
    blue = int(rng.integers(config.blue_min, config.blue_max + 1))
    red = int(rng.integers(config.red_min, config.red_max + 1))

    features = np.empty((horizon, 5), dtype=np.float64)
    rewards = np.empty(horizon, dtype=np.float64)
    banked = 0.0
    for t in range(horizon):
        if t == config.reinforcement_step:
            cap = int(rng.integers(0, config.reinforcement_max + 1))
            red += int(rng.integers(0, cap + 1))
        reinforced = 1.0 if t >= config.reinforcement_step else 0.0
        features[t] = (blue, red, reinforced, t, banked)

        # Simultaneous volleys resolved from pre-volley strengths; kills
        # cannot exceed the opposing force.
        red_losses = min(int(rng.binomial(blue, config.blue_hit_prob)), red)
        blue_losses = min(int(rng.binomial(red, config.red_hit_prob)), blue)
        red -= red_losses
        blue -= blue_losses

        reward = float(red_losses - blue_losses)
        if t == horizon - 1:
            reward += rng.uniform(-config.noise_scale, config.noise_scale)
        rewards[t] = reward
        banked += reward

    return Episode(episode_id=episode_id, domain=DOMAIN, features=features,
                   rewards=rewards)
