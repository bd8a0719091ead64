"""Episode simulators and dataset utilities."""

from __future__ import annotations

import numpy as np

from .episode import Episode, load_dataset, save_dataset
from .skirmish import SkirmishConfig, sample_skirmish_episode
from .tamarisk import TamariskConfig, sample_tamarisk_episode

__all__ = [
    "Episode",
    "TamariskConfig",
    "SkirmishConfig",
    "sample_tamarisk_episode",
    "sample_skirmish_episode",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "default_config",
    "DOMAINS",
]

DOMAINS = ("tamarisk", "skirmish")


def default_config(domain: str):
    """Default simulator configuration for a domain name."""
    if domain == "tamarisk":
        return TamariskConfig()
    if domain == "skirmish":
        return SkirmishConfig()
    raise ValueError(f"unknown domain {domain!r}; expected one of {DOMAINS}")


def _sampler_for(config):
    if isinstance(config, TamariskConfig):
        return sample_tamarisk_episode
    if isinstance(config, SkirmishConfig):
        return sample_skirmish_episode
    raise TypeError(f"unsupported simulator config type {type(config).__name__}")


def generate_dataset(config, episode_count: int, random_state: int):
    """Sample ``episode_count`` episodes with independent per-episode streams.

    Episode ``i`` gets its own counter-based generator derived from
    ``(random_state, i)``, so datasets are reproducible and individual
    episodes can be regenerated without replaying the whole dataset.
    """
    if episode_count < 1:
        raise ValueError("episode_count must be positive")
    sampler = _sampler_for(config)
    episodes = []
    for i in range(int(episode_count)):
        ss = np.random.SeedSequence(entropy=int(random_state), spawn_key=(i,))
        rng = np.random.Generator(np.random.Philox(ss))
        episodes.append(sampler(config, rng, episode_id=i))
    return episodes
