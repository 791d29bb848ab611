"""Vehicle battery response to a pilot signal.

Two models:

* ``ideal``: the battery draws the full pilot until its capacity is reached.
* ``two_stage``: constant-current bulk phase up to a state-of-charge knee,
  then a tail whose acceptance falls off linearly to zero at full charge,
  mimicking the constant-voltage taper of real chargers.

Charge and capacity are in amp-periods at nominal voltage, currents in amps.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["BatteryState", "response", "fit_to_session", "IDEAL", "TWO_STAGE"]

IDEAL = "ideal"
TWO_STAGE = "two_stage"


@dataclass
class BatteryState:
    capacity: float
    charge: float
    max_current: float
    model: str = IDEAL
    tail_start_soc: float = 0.8

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise ValueError("capacity must be nonnegative")
        if not 0 <= self.charge <= self.capacity + 1e-12:
            raise ValueError("charge must lie in [0, capacity]")
        if self.max_current <= 0:
            raise ValueError("max_current must be positive")
        if self.model not in (IDEAL, TWO_STAGE):
            raise ValueError(f"unknown battery model {self.model!r}")
        if not 0.0 < self.tail_start_soc < 1.0:
            raise ValueError("tail_start_soc must lie strictly inside (0, 1)")

    @property
    def soc(self) -> float:
        return 1.0 if self.capacity == 0 else self.charge / self.capacity

    def acceptance_limit(self) -> float:
        """Largest current the battery will draw at its present state of charge."""
        if self.model == IDEAL or self.soc <= self.tail_start_soc:
            return self.max_current
        return self.max_current * (1.0 - self.soc) / (1.0 - self.tail_start_soc)


def response(state: BatteryState, pilot: float, period_length: float = 1.0) -> float:
    """Current drawn over one period of the given pilot; advances the charge.

    The draw is limited by the pilot, the battery's acceptance at the current
    state of charge, its rated current, and the room left in the pack.
    """
    if pilot < 0:
        raise ValueError("pilot must be nonnegative")
    if period_length <= 0:
        raise ValueError("period_length must be positive")
    headroom = max(state.capacity - state.charge, 0.0) / period_length
    drawn = max(min(pilot, state.max_current, state.acceptance_limit(), headroom), 0.0)
    state.charge = min(state.charge + drawn * period_length, state.capacity)
    return drawn


def fit_to_session(requested_energy: float, max_current: float, model: str = IDEAL, tail_start_soc: float = 0.8) -> BatteryState:
    """Fresh battery sized so a full charge equals the session's energy request."""
    return BatteryState(
        capacity=requested_energy,
        charge=0.0,
        max_current=max_current,
        model=model,
        tail_start_soc=tail_start_soc,
    )
