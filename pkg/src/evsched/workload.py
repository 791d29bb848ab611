"""Charging sessions: dataset loading and statistical generation.

A session is a car occupying one EVSE for a window of whole periods and
asking for a fixed amount of energy. Energy is stored in amp-periods at the
site's nominal voltage so rates and energy share one unit system.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from evsched.network import ChargingNetwork

__all__ = [
    "Session",
    "DayStats",
    "WorkloadStats",
    "kwh_to_amp_periods",
    "amp_periods_to_kwh",
    "load_dataset",
    "generate_workload",
    "caltech_stats",
    "scaled_stats",
    "DAY_NAMES",
]

logger = logging.getLogger(__name__)

DAY_NAMES = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")
WEEKEND = frozenset({"sat", "sun"})


def kwh_to_amp_periods(kwh: float, voltage: float, period_minutes: float) -> float:
    """Energy in kWh -> equivalent amp-periods at the given voltage."""
    return kwh * 1000.0 / voltage / (period_minutes / 60.0)


def amp_periods_to_kwh(amp_periods: float, voltage: float, period_minutes: float) -> float:
    return amp_periods * voltage / 1000.0 * (period_minutes / 60.0)


@dataclass(frozen=True)
class Session:
    """One car: occupies ``evse_id`` for periods [arrival, departure)."""

    id: str
    evse_id: str
    arrival: int
    departure: int
    requested_energy: float  # amp-periods

    def __post_init__(self) -> None:
        if self.arrival < 0:
            raise ValueError(f"session {self.id}: arrival must be nonnegative")
        if self.departure <= self.arrival:
            raise ValueError(f"session {self.id}: departure must follow arrival")
        if self.requested_energy <= 0:
            raise ValueError(f"session {self.id}: requested energy must be positive")

    @property
    def duration(self) -> int:
        return self.departure - self.arrival


@dataclass(frozen=True)
class DayStats:
    """Arrival process parameters for one day of the week."""

    mean_sessions: float
    mean_duration_hours: float
    mean_energy_kwh: float
    hourly_weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.hourly_weights) != 24:
            raise ValueError("need one arrival weight per hour of day")
        if min(self.hourly_weights) < 0 or sum(self.hourly_weights) <= 0:
            raise ValueError("arrival weights must be nonnegative and not all zero")
        if self.mean_duration_hours <= 0.5:
            raise ValueError("mean duration must exceed the 0.5 h floor")


@dataclass(frozen=True)
class WorkloadStats:
    days: dict[str, DayStats]

    def __post_init__(self) -> None:
        missing = set(DAY_NAMES) - set(self.days)
        if missing:
            raise ValueError(f"missing day statistics: {sorted(missing)}")


# Weekday arrivals cluster in the morning commute with a small evening bump;
# weekend arrivals spread over the day.
_WEEKDAY_HOURLY = (
    0.2, 0.1, 0.1, 0.1, 0.2, 0.5, 1.5, 6.0, 9.0, 8.0,
    4.5, 3.0, 2.5, 2.2, 2.0, 1.8, 1.5, 1.5, 2.5, 1.5,
    1.0, 0.8, 0.5, 0.3,
)
_WEEKEND_HOURLY = (
    0.4, 0.3, 0.2, 0.2, 0.3, 0.5, 1.0, 1.5, 2.2, 2.8,
    3.2, 3.4, 3.4, 3.2, 3.0, 2.8, 2.5, 2.2, 2.0, 1.6,
    1.2, 0.9, 0.7, 0.5,
)

_CALTECH_DAY_TABLE = {
    "sun": (41.32, 3.94, 10.05),
    "mon": (71.00, 6.14, 9.54),
    "tue": (76.73, 6.24, 8.94),
    "wed": (75.45, 6.22, 8.75),
    "thu": (78.50, 5.96, 8.47),
    "fri": (77.18, 6.71, 9.04),
    "sat": (43.32, 5.01, 10.15),
}


def caltech_stats() -> WorkloadStats:
    """Average weekday/weekend behaviour of a busy campus garage."""
    days = {}
    for name, (n, dur, kwh) in _CALTECH_DAY_TABLE.items():
        weights = _WEEKEND_HOURLY if name in WEEKEND else _WEEKDAY_HOURLY
        days[name] = DayStats(n, dur, kwh, weights)
    return WorkloadStats(days)


def scaled_stats(base: WorkloadStats, session_scale: float) -> WorkloadStats:
    """Same shape, mean daily session counts scaled (for small test sites)."""
    if session_scale <= 0:
        raise ValueError("session scale must be positive")
    return WorkloadStats(
        {name: replace(d, mean_sessions=d.mean_sessions * session_scale) for name, d in base.days.items()}
    )


def load_dataset(
    path: str | Path,
    network: ChargingNetwork | None = None,
    voltage: float = 208.0,
    period_minutes: float = 5.0,
) -> list[Session]:
    """Read sessions from a JSON list of records.

    Each record carries ``id``, ``evse_id``, ``connect_minute``,
    ``disconnect_minute`` and ``kwh``. Connect times are floored and
    disconnect times ceiled to whole periods. Records with non-positive energy
    or an empty window after rounding are dropped with a logged count; an
    unknown EVSE id (when a network is given) is an error.
    """
    try:
        records = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read session dataset {path}: {exc}") from exc
    if not isinstance(records, list):
        raise ValueError(f"session dataset {path} must be a JSON list")

    sessions: list[Session] = []
    dropped = 0
    for rec in records:
        try:
            sid = str(rec["id"])
            evse_id = str(rec["evse_id"])
            connect = float(rec["connect_minute"])
            disconnect = float(rec["disconnect_minute"])
            kwh = float(rec["kwh"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed session record {rec!r}: {exc}") from exc
        if network is not None and evse_id not in network.evse_index:
            raise ValueError(f"session {sid} references unknown EVSE {evse_id!r}")
        arrival = int(connect // period_minutes)
        departure = int(np.ceil(disconnect / period_minutes))
        if kwh <= 0 or departure <= arrival or connect < 0:
            dropped += 1
            continue
        sessions.append(
            Session(sid, evse_id, arrival, departure, kwh_to_amp_periods(kwh, voltage, period_minutes))
        )
    if dropped:
        logger.warning("dropped %d unusable session records from %s", dropped, path)
    sessions.sort(key=lambda s: (s.arrival, s.id))
    return sessions


def save_dataset(sessions: Sequence[Session], path: str | Path, voltage: float = 208.0, period_minutes: float = 5.0) -> None:
    records = [
        {
            "id": s.id,
            "evse_id": s.evse_id,
            "connect_minute": s.arrival * period_minutes,
            "disconnect_minute": s.departure * period_minutes,
            "kwh": amp_periods_to_kwh(s.requested_energy, voltage, period_minutes),
        }
        for s in sessions
    ]
    Path(path).write_text(json.dumps(records, indent=2))


def generate_workload(
    stats: WorkloadStats,
    day_sequence: Sequence[str],
    network: ChargingNetwork,
    seed: int,
    period_minutes: float = 5.0,
) -> list[Session]:
    """Draw a synthetic multi-day workload and assign sessions to free stalls.

    Daily session counts are Poisson around the day's mean; arrival hours
    follow the day's weight profile with uniform minutes; durations are a
    half-hour floor plus an exponential; energies are exponential, clipped to
    what the stall's max pilot can deliver over the stay. Stalls are chosen
    uniformly among those free for the whole window; when none is free the
    session is dropped. Everything is driven by one seeded generator, so a
    given (stats, days, network, seed) tuple always yields the same workload.
    """
    rng = np.random.default_rng(seed)
    periods_per_day = int(round(1440 / period_minutes))
    end_minute = len(day_sequence) * 1440.0
    voltage = network.nominal_voltage

    free_from = {e.id: [] for e in network.evses}  # occupied [start, end) windows
    sessions: list[Session] = []
    dropped = 0

    draws = []
    for day_i, day_name in enumerate(day_sequence):
        if day_name not in stats.days:
            raise ValueError(f"no statistics for day {day_name!r}")
        day = stats.days[day_name]
        count = int(rng.poisson(day.mean_sessions))
        if count == 0:
            continue
        weights = np.asarray(day.hourly_weights, dtype=float)
        hours = rng.choice(24, size=count, p=weights / weights.sum())
        minutes = rng.uniform(0, 60, size=count)
        durations = 0.5 + rng.exponential(day.mean_duration_hours - 0.5, size=count)
        energies = rng.exponential(day.mean_energy_kwh, size=count)
        for j in range(count):
            start = day_i * 1440.0 + hours[j] * 60.0 + minutes[j]
            end = min(start + durations[j] * 60.0, end_minute)
            draws.append((start, end, energies[j], day_i, j))

    draws.sort(key=lambda d: (d[0], d[3], d[4]))
    for start, end, kwh, day_i, j in draws:
        arrival = int(start // period_minutes)
        departure = int(np.ceil(end / period_minutes))
        if departure <= arrival or departure > len(day_sequence) * periods_per_day:
            departure = min(arrival + 1, len(day_sequence) * periods_per_day)
            if departure <= arrival:
                dropped += 1
                continue
        candidates = [
            e for e in network.evses
            if all(departure <= s or arrival >= e_end for s, e_end in free_from[e.id])
        ]
        if not candidates:
            dropped += 1
            continue
        evse = candidates[rng.integers(len(candidates))]
        free_from[evse.id].append((arrival, departure))
        cap = evse.max_pilot * (departure - arrival)
        energy = min(kwh_to_amp_periods(max(kwh, 0.5), voltage, period_minutes), cap)
        sessions.append(
            Session(f"gen-{day_i}-{j:03d}", evse.id, arrival, departure, energy)
        )
    if dropped:
        logger.info("generator dropped %d sessions (no free stall or empty window)", dropped)
    sessions.sort(key=lambda s: (s.arrival, s.id))
    return sessions
