"""Invasive-plant management on a small river network.

Seven river edges form a heap-indexed binary tree (edge 0 is the most
downstream; the parent of edge ``e`` is ``(e - 1) // 2``).  Each edge is
empty (0), holds native vegetation (1), or is occupied by the invader (2).
Every step a budget-limited greedy manager treats edges in downstream-first
order — restoring an invaded edge (eradicate + replant) when affordable,
otherwise just eradicating, then planting empty edges with leftover budget.
The step reward is the negative of treatment spending plus an occupancy
penalty for every invaded edge in the state the manager faced.  After
acting, natives die off at a small rate and the invader colonises empty
edges, pushing hardest onto the edge's *downstream* neighbour (seeds travel
with the current) and more weakly upstream.

A final-step perturbation of ±``noise_scale`` makes total returns
continuously distributed despite the lattice-valued rewards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episode import Episode

__all__ = ["TamariskConfig", "sample_tamarisk_episode", "EMPTY", "NATIVE", "INVADED"]

EMPTY, NATIVE, INVADED = 0, 1, 2

DOMAIN = "tamarisk"


@dataclass(frozen=True)
class TamariskConfig:
    """Dynamics and policy parameters for the river-network domain.

    Initial states are drawn hierarchically: each episode first draws a
    latent invasion pressure ``q ~ U(pressure_min, pressure_max)``, then each
    edge independently starts invaded with probability ``q`` (otherwise
    native with probability ``native_fraction``, else empty).  The latent
    pressure spreads episodes along a smooth severity gradient, so initial
    configurations carry real signal about the eventual return instead of
    being isolated lattice points.
    """

    horizon: int = 50
    n_edges: int = 7
    eradicate_cost: float = 0.5
    plant_cost: float = 0.9
    budget: float = 3.0
    occupancy_penalty: float = 1.0
    death_rate: float = 0.02
    spread_rate: float = 0.1
    upstream_spread_factor: float = 0.5
    pressure_min: float = 0.15
    pressure_max: float = 0.85
    native_fraction: float = 0.75
    noise_scale: float = 5e-6

    def __post_init__(self):
        if self.horizon < 1 or self.n_edges < 1:
            raise ValueError("horizon and n_edges must be positive")
        if not (0.0 <= self.pressure_min <= self.pressure_max <= 1.0):
            raise ValueError("invasion pressure range must satisfy "
                             "0 <= pressure_min <= pressure_max <= 1")
        for name in ("death_rate", "spread_rate", "upstream_spread_factor",
                     "native_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if min(self.eradicate_cost, self.plant_cost, self.budget,
               self.occupancy_penalty, self.noise_scale) < 0:
            raise ValueError("costs, budget, penalty, and noise must be >= 0")

    @property
    def feature_names(self):
        return ([f"edge{e}" for e in range(self.n_edges)]
                + ["step", "banked_reward"])


def _greedy_actions(codes, config):
    """Treatment pass; mutates ``codes``; returns the money spent.

    Invaded edges are visited downstream-first with restore preferred over
    bare eradication; leftover budget plants empty edges.
    """
    budget = config.budget
    restore_cost = config.eradicate_cost + config.plant_cost
    spent = 0.0
    for e in range(codes.shape[0]):
        if codes[e] != INVADED:
            continue
        if budget - spent >= restore_cost - 1e-12:
            codes[e] = NATIVE
            spent += restore_cost
        elif budget - spent >= config.eradicate_cost - 1e-12:
            codes[e] = EMPTY
            spent += config.eradicate_cost
    for e in range(codes.shape[0]):
        if codes[e] == EMPTY and budget - spent >= config.plant_cost - 1e-12:
            codes[e] = NATIVE
            spent += config.plant_cost
    return spent


def _spread_probabilities(codes, config):
    """Per-edge colonisation probability given the current invaded set.

    An empty edge is pressured by each invaded neighbour independently:
    upstream neighbours (children in the heap layout) push at the full
    spread rate, the downstream neighbour (parent) at a reduced rate.
    """
    n = codes.shape[0]
    miss = np.ones(n, dtype=np.float64)
    down_rate = config.spread_rate
    up_rate = config.spread_rate * config.upstream_spread_factor
    for e in range(n):
        if codes[e] != INVADED:
            continue
        if e > 0:
            parent = (e - 1) // 2
            miss[parent] *= 1.0 - down_rate
        for child in (2 * e + 1, 2 * e + 2):
            if child < n:
                miss[child] *= 1.0 - up_rate
    return 1.0 - miss


def sample_tamarisk_episode(config: TamariskConfig, rng: np.random.Generator,
                            episode_id: int = 0) -> Episode:
    """Simulate one episode under the built-in greedy policy."""
    n = config.n_edges
    horizon = config.horizon
    pressure = rng.uniform(config.pressure_min, config.pressure_max)
    draws = rng.random(n)
    codes = np.where(draws < pressure, INVADED,
                     np.where(rng.random(n) < config.native_fraction,
                              NATIVE, EMPTY)).astype(np.int64)

    features = np.empty((horizon, n + 2), dtype=np.float64)
    rewards = np.empty(horizon, dtype=np.float64)
    banked = 0.0
    for t in range(horizon):
        features[t, :n] = codes
        features[t, n] = t
        features[t, n + 1] = banked

        occupancy = int(np.sum(codes == INVADED))
        spent = _greedy_actions(codes, config)
        reward = -(spent + config.occupancy_penalty * occupancy)

        # Natural dynamics: die-off first, then colonisation of whatever is
        # empty afterwards, both evaluated simultaneously across edges.
        native = codes == NATIVE
        if config.death_rate > 0.0 and np.any(native):
            dies = rng.random(n) < config.death_rate
            codes[native & dies] = EMPTY
        empty = codes == EMPTY
        if np.any(empty):
            pressure = _spread_probabilities(codes, config)
            colonised = rng.random(n) < pressure
            codes[empty & colonised] = INVADED

        if t == horizon - 1:
            reward += rng.uniform(-config.noise_scale, config.noise_scale)
        rewards[t] = reward
        banked += reward

    return Episode(episode_id=episode_id, domain=DOMAIN, features=features,
                   rewards=rewards)
