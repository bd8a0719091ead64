"""Episode container and dataset round-tripping.

An episode is a fixed-horizon trajectory.  ``features[t]`` is the monitor's
view of the state *before* step ``t`` acts; by convention its last two
columns are the step index ``t`` and the reward accumulated so far (the
exclusive prefix sum of ``rewards``), so downstream models can condition on
both elapsed time and banked return.  ``rewards[t]`` is the reward earned
during step ``t``; the final step's reward carries a tiny tie-breaking
perturbation so that total returns are continuously distributed even when
the raw dynamics live on a discrete lattice.

Datasets are written as a directory holding ``episodes.csv`` (one row per
step, floats serialised with ``repr`` so parsing reproduces the exact same
doubles) and ``meta.json``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .._io import atomic_write_json, atomic_write_text

__all__ = ["Episode", "save_dataset", "load_dataset"]

_DATASET_FORMAT = "probcov-dataset-v1"

# Columns validated against the prefix-sum convention.
STEP_COLUMN = -2
BANKED_COLUMN = -1


@dataclass(frozen=True)
class Episode:
    """One fixed-horizon trajectory.

    Attributes
    ----------
    episode_id : int
    domain : str
    features : ndarray of shape (horizon, n_features)
        Per-step feature vectors; last two columns are ``t`` and the banked
        (already accumulated) reward before step ``t``.
    rewards : ndarray of shape (horizon,)
    """

    episode_id: int
    domain: str
    features: np.ndarray = field(repr=False)
    rewards: np.ndarray = field(repr=False)

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        rewards = np.ascontiguousarray(self.rewards, dtype=np.float64)
        if features.ndim != 2 or rewards.ndim != 1:
            raise ValueError("features must be 2-D and rewards 1-D")
        if features.shape[0] != rewards.shape[0] or rewards.shape[0] < 1:
            raise ValueError("features and rewards must share a positive horizon")
        if features.shape[1] < 3:
            raise ValueError("features need at least one state column plus "
                             "the step and banked-reward columns")
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(rewards))):
            raise ValueError("episode contains non-finite values")
        horizon = rewards.shape[0]
        if not np.array_equal(features[:, STEP_COLUMN], np.arange(horizon)):
            raise ValueError("step column must equal 0..horizon-1")
        banked = np.concatenate([[0.0], np.cumsum(rewards)[:-1]])
        if not np.allclose(features[:, BANKED_COLUMN], banked, atol=1e-9):
            raise ValueError("banked-reward column must be the exclusive "
                             "prefix sum of rewards")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "rewards", rewards)

    @property
    def horizon(self) -> int:
        return int(self.rewards.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def final_return(self) -> float:
        return float(np.sum(self.rewards))

    def banked(self, t: int) -> float:
        """Reward accumulated strictly before step ``t``."""
        return float(self.features[t, BANKED_COLUMN])

    def remaining_return(self, t: int) -> float:
        """Reward still to come from step ``t`` on (``final - banked``)."""
        return self.final_return - self.banked(t)

    def prefix(self, length: int) -> "Episode":
        """The first ``length`` steps as a standalone episode view."""
        if not (1 <= length <= self.horizon):
            raise ValueError("prefix length out of range")
        return Episode(self.episode_id, self.domain,
                       self.features[:length].copy(),
                       self.rewards[:length].copy())


def save_dataset(episodes, directory, meta=None):
    """Write episodes to ``directory`` as ``episodes.csv`` + ``meta.json``.

    Floats are serialised with ``repr`` so a round-trip reproduces bit-equal
    values.
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("no episodes to save")
    domain = episodes[0].domain
    horizon = episodes[0].horizon
    n_features = episodes[0].n_features
    for ep in episodes:
        if ep.domain != domain or ep.horizon != horizon or ep.n_features != n_features:
            raise ValueError("episodes in one dataset must share domain, "
                             "horizon, and feature count")

    os.makedirs(directory, exist_ok=True)
    header = ["episode_id", "t", "reward"] + [f"f{j}" for j in range(n_features)]
    lines = [",".join(header)]
    for ep in episodes:
        for t in range(horizon):
            row = [str(ep.episode_id), str(t), repr(float(ep.rewards[t]))]
            row.extend(repr(float(v)) for v in ep.features[t])
            lines.append(",".join(row))
    atomic_write_text(os.path.join(directory, "episodes.csv"),
                      "\n".join(lines) + "\n")

    meta_out = {
        "format": _DATASET_FORMAT,
        "domain": domain,
        "horizon": horizon,
        "n_features": n_features,
        "episode_count": len(episodes),
    }
    if meta:
        meta_out.update(meta)
    atomic_write_json(os.path.join(directory, "meta.json"), meta_out)


def load_dataset(directory):
    """Read a dataset directory; returns ``(episodes, meta)``."""
    with open(os.path.join(directory, "meta.json")) as fh:
        meta = json.load(fh)
    if meta.get("format") != _DATASET_FORMAT:
        raise ValueError(f"unrecognised dataset format {meta.get('format')!r}")
    horizon = int(meta["horizon"])
    n_features = int(meta["n_features"])

    path = os.path.join(directory, "episodes.csv")
    episodes = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["episode_id", "t", "reward"]:
            raise ValueError("unexpected dataset CSV header")
        current_id = None
        feats = np.empty((horizon, n_features), dtype=np.float64)
        rewards = np.empty(horizon, dtype=np.float64)
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) != 3 + n_features:
                raise ValueError("malformed dataset row")
            eid = int(parts[0])
            t = int(parts[1])
            if current_id is None:
                current_id = eid
            elif eid != current_id:
                episodes.append(Episode(current_id, meta["domain"],
                                        feats.copy(), rewards.copy()))
                current_id = eid
            rewards[t] = float(parts[2])
            for j in range(n_features):
                feats[t, j] = float(parts[3 + j])
        if current_id is not None:
            episodes.append(Episode(current_id, meta["domain"],
                                    feats.copy(), rewards.copy()))
    if len(episodes) != int(meta["episode_count"]):
        raise ValueError("episode count mismatch between CSV and metadata")
    return episodes, meta
