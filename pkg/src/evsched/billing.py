"""Time-of-use energy pricing, demand charges, and site profit accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "TouWindow",
    "Tariff",
    "BillingResult",
    "sce_ev_tou4",
    "tou_rate",
    "bill",
    "demand_charge_proxy",
    "peak_hint",
    "day_is_weekend",
    "DAYS_PER_MONTH",
]

DAYS_PER_MONTH = 30.0


@dataclass(frozen=True)
class TouWindow:
    """Half-open minute-of-day window [start, end) priced at rate $/kWh."""

    start_minute: int
    end_minute: int
    rate: float


@dataclass(frozen=True)
class Tariff:
    """Weekday/weekend time-of-use windows plus a monthly demand charge.

    Windows must partition the day: sorted, contiguous, covering [0, 1440).
    ``demand_charge_rate`` is $ per kW of monthly peak demand.
    """

    weekday: tuple[TouWindow, ...]
    weekend: tuple[TouWindow, ...]
    demand_charge_rate: float

    def __post_init__(self) -> None:
        for name, windows in (("weekday", self.weekday), ("weekend", self.weekend)):
            if not windows:
                raise ValueError(f"{name} windows missing")
            cursor = 0
            for w in windows:
                if w.start_minute != cursor or w.end_minute <= w.start_minute or w.rate < 0:
                    raise ValueError(f"{name} windows must be contiguous from midnight with nonnegative rates")
                cursor = w.end_minute
            if cursor != 1440:
                raise ValueError(f"{name} windows must cover the full day")
        if self.demand_charge_rate < 0:
            raise ValueError("demand charge rate must be nonnegative")


def sce_ev_tou4() -> Tariff:
    """Commercial EV time-of-use rate: cheap nights, pricey weekday afternoons."""
    weekday = (
        TouWindow(0, 8 * 60, 0.056),
        TouWindow(8 * 60, 12 * 60, 0.092),
        TouWindow(12 * 60, 18 * 60, 0.267),
        TouWindow(18 * 60, 23 * 60, 0.092),
        TouWindow(23 * 60, 1440, 0.056),
    )
    weekend = (TouWindow(0, 1440, 0.056),)
    return Tariff(weekday, weekend, 15.51)


def day_is_weekend(day_index: int, start_day: str = "mon") -> bool:
    """Whether day ``day_index`` (0-based from the billing start) is Sat/Sun."""
    names = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")
    if start_day not in names:
        raise ValueError(f"unknown start day {start_day!r}")
    return names[(names.index(start_day) + day_index) % 7] in ("sat", "sun")


def tou_rate(tariff: Tariff, absolute_minute: float, weekend: bool) -> float:
    """$/kWh price in force at a given absolute minute."""
    minute = absolute_minute % 1440
    for w in tariff.weekend if weekend else tariff.weekday:
        if w.start_minute <= minute < w.end_minute:
            return w.rate
    raise AssertionError("tariff windows cover the day; unreachable")


@dataclass(frozen=True)
class BillingResult:
    revenue: float
    energy_cost: float
    demand_charge: float
    peak_kw: float

    @property
    def profit(self) -> float:
        return self.revenue - self.energy_cost - self.demand_charge


def bill(
    load_profile_kw: Sequence[float] | np.ndarray,
    delivered_kwh: float,
    tariff: Tariff,
    revenue_per_kwh: float,
    period_minutes: float = 5.0,
    start_day: str = "mon",
    billing_days: float | None = None,
) -> BillingResult:
    """Operator economics for a load profile and the energy actually sold.

    Energy cost prices each period's kWh at the time-of-use rate. The demand
    charge applies the monthly rate to the profile's peak kW, prorated by
    ``billing_days / 30`` when the profile covers less than a month (pass
    None to charge the full monthly rate regardless of length).
    """
    profile = np.asarray(load_profile_kw, dtype=float)
    if profile.ndim != 1:
        raise ValueError("load profile must be one-dimensional")
    if np.any(profile < 0):
        raise ValueError("load profile has negative entries")

    hours_per_period = period_minutes / 60.0
    energy_cost = 0.0
    for t, kw in enumerate(profile):
        minute = t * period_minutes
        weekend = day_is_weekend(int(minute // 1440), start_day)
        energy_cost += tou_rate(tariff, minute, weekend) * kw * hours_per_period

    peak_kw = float(profile.max()) if len(profile) else 0.0
    proration = 1.0 if billing_days is None else billing_days / DAYS_PER_MONTH
    demand_charge = tariff.demand_charge_rate * proration * peak_kw
    return BillingResult(
        revenue=revenue_per_kwh * delivered_kwh,
        energy_cost=energy_cost,
        demand_charge=demand_charge,
        peak_kw=peak_kw,
    )


def demand_charge_proxy(window_rate: float, days_in_window: float, day_index: int) -> float:
    """Per-kW price a scheduler should charge today against a new peak.

    ``window_rate`` is the $/kW demand charge the whole billing window will
    pay (prorate the monthly rate first for short windows). Spreading it over
    the days that remain makes early days cautious and the final day pay full
    freight: rate / (D - d).
    """
    if not 0 <= day_index < days_in_window:
        raise ValueError("day_index must lie inside the billing window")
    return window_rate / (days_in_window - day_index)


def peak_hint(optimal_peak_kw: float | None) -> float:
    """Peak-demand target seeded from a known good peak (zero when unknown)."""
    if optimal_peak_kw is None or optimal_peak_kw <= 0:
        return 0.0
    return 0.75 * optimal_peak_kw
