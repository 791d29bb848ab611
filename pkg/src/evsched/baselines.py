"""Sorting-based schedulers to compare the optimizing scheduler against.

Each takes the active EV states and greedily hands out the largest feasible
rate in a fixed priority order: least laxity first, earliest deadline first,
or round-robin one increment at a time. In quantized mode everyone is first
pinned at their minimum nonzero pilot (falling back to a priority subset when
even that does not fit), then raised along each stall's allowed pilot list.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from evsched.network import ChargingNetwork
from evsched.scheduler import EvState, laxity, minimum_rate_fallback

__all__ = [
    "llf_pilots",
    "edf_pilots",
    "rr_pilots",
    "uncontrolled_pilots",
    "BaselineScheduler",
]

_BISECT_STEPS = 40


def _rate_cap(state: EvState, quantized: bool) -> float:
    """Largest useful pilot: hardware bound, tapered bound, and need."""
    bound = min(state.evse.max_pilot, state.pilot_upper_bound)
    need = state.remaining_energy
    if need >= bound:
        return bound
    if quantized:
        return min(state.evse.ceil_rate(need), bound)
    return need


def _max_feasible(
    rates: dict[str, float],
    state: EvState,
    network: ChargingNetwork,
    cap: float,
    quantized: bool,
    t: int,
    mode: str,
    tol: float,
) -> float:
    """Largest rate for one EV keeping the partial allocation feasible."""
    evse = state.evse
    base = rates[evse.id]

    def ok(r: float) -> bool:
        rates[evse.id] = r
        good = network.is_feasible(rates, t, mode, tol)
        rates[evse.id] = base
        return good

    if quantized:
        candidates = [r for r in evse.allowable_rates if base <= r <= cap + 1e-9] if not evse.continuous else []
        if evse.continuous:
            step = evse.min_nonzero_rate
            candidates = [base] + [r for r in np.arange(step, cap + 1e-9, 1.0)]
        for r in sorted(set(candidates), reverse=True):
            if r >= base - 1e-9 and ok(r):
                return max(r, base)
        return base
    if ok(cap):
        return cap
    lo, hi = base, cap
    if not ok(lo):
        return base
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _priority_pilots(
    active: Sequence[EvState],
    network: ChargingNetwork,
    key: Callable[[EvState], float],
    quantized: bool,
    t: int,
    mode: str,
    tol: float,
) -> dict[str, float]:
    order = sorted(active, key=lambda s: (key(s), s.session.arrival, s.session.id))
    rates = {s.evse.id: 0.0 for s in active}
    if quantized:
        mins = {s.evse.id: min(s.evse.min_rate, s.pilot_upper_bound, s.evse.max_pilot) for s in active}
        if not network.is_feasible(mins, t, mode, tol):
            return minimum_rate_fallback(active, network, key, t, mode, tol)
        rates = dict(mins)
    out = {}
    for state in order:
        cap = _rate_cap(state, quantized)
        best = _max_feasible(rates, state, network, cap, quantized, t, mode, tol)
        rates[state.evse.id] = best
        out[state.session.id] = best
    return out


def llf_pilots(
    active: Sequence[EvState],
    network: ChargingNetwork,
    quantized: bool = False,
    t: int = 0,
    mode: str = "affine",
    tol: float = 1e-6,
) -> dict[str, float]:
    """Least laxity first: urgency = slack periods left at full blast."""
    return _priority_pilots(active, network, laxity, quantized, t, mode, tol)


def edf_pilots(
    active: Sequence[EvState],
    network: ChargingNetwork,
    quantized: bool = False,
    t: int = 0,
    mode: str = "affine",
    tol: float = 1e-6,
) -> dict[str, float]:
    """Earliest departure first."""
    return _priority_pilots(active, network, lambda s: float(s.session.departure), quantized, t, mode, tol)


def rr_pilots(
    active: Sequence[EvState],
    network: ChargingNetwork,
    quantized: bool = False,
    t: int = 0,
    mode: str = "affine",
    tol: float = 1e-6,
) -> dict[str, float]:
    """Round-robin: cycle arrivals, raising each pilot one step while it fits."""
    order = sorted(active, key=lambda s: (s.session.arrival, s.session.id))
    rates = {s.evse.id: 0.0 for s in active}
    if quantized:
        mins = {s.evse.id: min(s.evse.min_rate, s.pilot_upper_bound, s.evse.max_pilot) for s in active}
        if not network.is_feasible(mins, t, mode, tol):
            return minimum_rate_fallback(active, network, lambda s: float(s.session.arrival), t, mode, tol)
        rates = dict(mins)
    caps = {s.evse.id: _rate_cap(s, quantized) for s in active}
    blocked: set[str] = set()
    while len(blocked) < len(order):
        for state in order:
            evse = state.evse
            if evse.id in blocked:
                continue
            nxt = evse.next_rate(rates[evse.id]) if quantized else rates[evse.id] + 1.0
            if nxt is None or nxt > caps[evse.id] + 1e-9:
                blocked.add(evse.id)
                continue
            trial = dict(rates)
            trial[evse.id] = nxt
            if network.is_feasible(trial, t, mode, tol):
                rates[evse.id] = nxt
            else:
                blocked.add(evse.id)
    return {s.session.id: rates[s.evse.id] for s in active}


def uncontrolled_pilots(active: Sequence[EvState]) -> dict[str, float]:
    """Dumb EVSEs: everyone gets the hardware maximum, limits be damned."""
    return {s.session.id: s.evse.max_pilot for s in active}


class BaselineScheduler:
    """Adapts the stateless pilot functions to the simulator's interface."""

    _FNS = {
        "llf": llf_pilots,
        "edf": edf_pilots,
        "rr": rr_pilots,
    }

    def __init__(
        self,
        name: str,
        network: ChargingNetwork,
        *,
        quantized: bool = False,
        constraint_mode: str = "affine",
        tol: float = 1e-6,
    ):
        if name not in self._FNS and name != "uncontrolled":
            raise ValueError(f"unknown baseline {name!r}")
        self.name = name
        self.network = network
        self.quantized = quantized
        self.constraint_mode = constraint_mode
        self.tol = tol

    def pilots(self, states, k: int, event: bool) -> dict[str, float]:
        from evsched.scheduler import active_set

        active = active_set(states.values())
        if not active:
            return {}
        if self.name == "uncontrolled":
            return uncontrolled_pilots(active)
        fn = self._FNS[self.name]
        return fn(active, self.network, self.quantized, k, self.constraint_mode, self.tol)
