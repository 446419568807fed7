"""Flexibility-envelope bookkeeping for the buildings served by the network.

A building is reduced to a heat capacity and the running energy deviation
``F`` between the heat it received and its nominal demand.  The envelope
keeps ``C * dT_lower <= F <= C * dT_upper``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import EnvelopeViolation

ENVELOPE_RTOL = 1e-6  # tolerance on F, as a fraction of C (J per J/K)


@dataclass(frozen=True)
class DemandProfile:
    """Nominal heat demand sampled at the control rate, held between samples."""

    times: np.ndarray  # s, strictly increasing
    values: np.ndarray  # W

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or len(t) == 0:
            raise ValueError("demand profile needs matching 1-D time and value arrays")
        if np.any(np.diff(t) <= 0):
            raise ValueError("demand profile times must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("nominal demand must be non-negative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def at(self, t: float) -> float:
        i = np.searchsorted(self.times, t, side="right") - 1
        if i < 0:
            raise ValueError(f"time {t} precedes the demand profile")
        return float(self.values[i])

    def sample(self, t0: float, dt: float, n: int) -> np.ndarray:
        return np.array([self.at(t0 + k * dt) for k in range(n)])

    def covers(self, t0: float, horizon: float) -> bool:
        return self.times[0] <= t0 and t0 + horizon <= self.times[-1] + (
            self.times[-1] - self.times[-2] if len(self.times) > 1 else 0.0
        )

    @classmethod
    def constant(cls, value: float, duration: float, dt: float) -> "DemandProfile":
        t = np.arange(0.0, duration + dt, dt)
        return cls(t, np.full(len(t), float(value)))


@dataclass(frozen=True)
class Building:
    id: str
    heat_capacity: float  # J/K
    demand: DemandProfile
    dT_lower: float = -2.0  # K
    dT_upper: float = 2.0  # K
    nominal_temperature: float = 21.0  # degC
    used_flexibility: float = 0.0  # J

    def __post_init__(self):
        if not self.heat_capacity > 0:
            raise ValueError("heat capacity must be positive")
        if not self.dT_lower <= 0 <= self.dT_upper:
            raise ValueError("envelope must bracket zero")

    @property
    def lower_bound(self) -> float:
        return self.heat_capacity * self.dT_lower

    @property
    def upper_bound(self) -> float:
        return self.heat_capacity * self.dT_upper

    @property
    def tolerance(self) -> float:
        return ENVELOPE_RTOL * self.heat_capacity

    def with_flexibility(self, value: float) -> "Building":
        return replace(self, used_flexibility=float(value))


def initial_flexibility(b: Building, temperature: float) -> float:
    """Energy offset of a building that starts away from its nominal temperature."""
    return b.heat_capacity * (b.nominal_temperature - temperature)


def update_flexibility(b: Building, heat: float, dt: float, t: float, check: bool = True) -> Building:
    """Accumulate ``(heat - demand(t)) * dt`` into the used flexibility.

    ``heat`` is the average power delivered over ``[t, t + dt)``.  Raises
    :class:`EnvelopeViolation` when the result leaves the envelope by more
    than the tolerance.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    f = b.used_flexibility + (heat - b.demand.at(t)) * dt
    if check and not (b.lower_bound - b.tolerance <= f <= b.upper_bound + b.tolerance):
        raise EnvelopeViolation(b.id, f, b.lower_bound, b.upper_bound)
    return b.with_flexibility(f)


def equivalent_temperature_deviation(b: Building) -> float:
    return b.used_flexibility / b.heat_capacity
