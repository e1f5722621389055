"""Stealthy load-altering attack on aggregator schedules.

A compromised aggregator's reported load at bus i and hour t is scaled by
``1 + delta`` with ``delta ~ Uniform[0, gamma]`` drawn independently per
(bus, hour). The bound gamma is a fraction of the load, not an absolute kW
offset: an additive 0.1 kW alteration would be invisible at feeder scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .market import HOURS, AggregatorMap


@dataclass(frozen=True)
class AttackConfig:
    compromised_aggregators: frozenset[int]
    gamma: float = 0.1
    seed: int = 0
    hours: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "compromised_aggregators", frozenset(self.compromised_aggregators))
        if not self.compromised_aggregators:
            raise ConfigError("at least one aggregator must be compromised")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.hours is not None:
            hours = tuple(sorted(set(int(h) for h in self.hours)))
            if not all(0 <= h < HOURS for h in hours):
                raise ConfigError("attack hours must lie in 0..23")
            object.__setattr__(self, "hours", hours)


def attack_factors(schedule_shape: tuple[int, int], amap: AggregatorMap, config: AttackConfig) -> np.ndarray:
    """Multiplicative factors (bus x hour); 1.0 wherever the attack does not reach."""
    for a in config.compromised_aggregators:
        if a not in amap.members:
            raise ConfigError(f"unknown aggregator {a}")
    factors = np.ones(schedule_shape)
    hours = np.arange(HOURS) if config.hours is None else np.asarray(config.hours)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 202]))
    for a in sorted(config.compromised_aggregators):
        buses = amap.buses_of(a)
        delta = rng.uniform(0.0, 1.0, size=(len(buses), len(hours))) * config.gamma
        factors[np.ix_(buses, hours)] = 1.0 + delta
    return factors


def inject_laa(schedule, amap: AggregatorMap, config: AttackConfig) -> np.ndarray:
    """Return the schedule the DSO would receive from the compromised aggregators.

    The input is never modified; untouched entries are copied bit-for-bit.
    """
    schedule = np.asarray(schedule, dtype=float)
    if schedule.shape != (amap.bus_count, HOURS):
        raise ShapeError(f"schedule must be {amap.bus_count} x {HOURS}, got {schedule.shape}")
    out = schedule.copy()
    factors = attack_factors(schedule.shape, amap, config)
    mask = factors != 1.0
    out[mask] = schedule[mask] * factors[mask]
    return out
