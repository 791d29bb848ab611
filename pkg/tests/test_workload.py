import json

import numpy as np
import pytest

from evsched.network import caltech_preset, synthetic_preset
from evsched.workload import (
    Session,
    amp_periods_to_kwh,
    caltech_stats,
    generate_workload,
    kwh_to_amp_periods,
    load_dataset,
    save_dataset,
    scaled_stats,
)


def test_unit_conversions():
    # 1 kWh at 208 V with 5-minute periods: 1000/208 A-hours = 57.69 amp-periods
    assert kwh_to_amp_periods(1.0, 208.0, 5.0) == pytest.approx(1000.0 / 208.0 * 12.0)
    assert kwh_to_amp_periods(9.54, 208.0, 5.0) == pytest.approx(550.3846, abs=1e-3)
    for kwh in (0.3, 7.2, 41.0):
        back = amp_periods_to_kwh(kwh_to_amp_periods(kwh, 208.0, 5.0), 208.0, 5.0)
        assert back == pytest.approx(kwh)


def test_session_validation():
    with pytest.raises(ValueError):
        Session("s", "E1", arrival=5, departure=5, requested_energy=10.0)
    with pytest.raises(ValueError):
        Session("s", "E1", arrival=-1, departure=5, requested_energy=10.0)
    with pytest.raises(ValueError):
        Session("s", "E1", arrival=0, departure=5, requested_energy=-2.0)
    s = Session("s", "E1", 0, 5, 10.0)
    assert s.duration == 5


def _write_records(tmp_path, records):
    path = tmp_path / "sessions.json"
    path.write_text(json.dumps(records))
    return path


def test_load_dataset_rounds_toward_the_window(tmp_path):
    net = synthetic_preset(n_evse=4)
    ids = [e.id for e in net.evses]
    records = [
        {"id": "a", "evse_id": ids[0], "connect_minute": 7.0, "disconnect_minute": 23.0, "kwh": 1.0},
        {"id": "b", "evse_id": ids[1], "connect_minute": 0.0, "disconnect_minute": 5.0, "kwh": 0.5},
    ]
    sessions = {s.id: s for s in load_dataset(_write_records(tmp_path, records),
                                              network=net, voltage=208.0, period_minutes=5.0)}
    # arrival floors (7 -> period 1), departure ceils (23 -> period 5)
    assert sessions["a"].arrival == 1 and sessions["a"].departure == 5
    assert sessions["b"].arrival == 0 and sessions["b"].departure == 1
    assert sessions["a"].requested_energy == pytest.approx(kwh_to_amp_periods(1.0, 208.0, 5.0))


def test_load_dataset_drops_and_errors(tmp_path):
    net = synthetic_preset(n_evse=4)
    ids = [e.id for e in net.evses]
    good = {"id": "ok", "evse_id": ids[0], "connect_minute": 0.0, "disconnect_minute": 60.0, "kwh": 3.0}
    degenerate = {"id": "zero", "evse_id": ids[1], "connect_minute": 10.0, "disconnect_minute": 10.0, "kwh": 3.0}
    negative = {"id": "neg", "evse_id": ids[2], "connect_minute": 0.0, "disconnect_minute": 30.0, "kwh": -1.0}
    sessions = load_dataset(_write_records(tmp_path, [good, degenerate, negative]), network=net)
    assert [s.id for s in sessions] == ["ok"]

    stranger = {"id": "x", "evse_id": "NOT-AN-EVSE", "connect_minute": 0.0, "disconnect_minute": 30.0, "kwh": 1.0}
    with pytest.raises(ValueError):
        load_dataset(_write_records(tmp_path, [good, stranger]), network=net)
    with pytest.raises(ValueError):
        load_dataset(_write_records(tmp_path, [{"id": "broken"}]))
    with pytest.raises(ValueError):
        load_dataset(_write_records(tmp_path, {"not": "a list"}))


def test_save_load_round_trip(tmp_path):
    net = synthetic_preset(n_evse=6)
    sessions = generate_workload(caltech_stats(), ["mon"], net, seed=3)
    path = tmp_path / "dump.json"
    save_dataset(sessions, path)
    again = load_dataset(path, network=net)
    assert [s.id for s in again] == [s.id for s in sessions]
    for a, b in zip(again, sessions):
        assert a.arrival == b.arrival and a.departure == b.departure
        assert a.requested_energy == pytest.approx(b.requested_energy)


def test_generator_deterministic_and_seed_sensitive():
    net = caltech_preset()
    stats = caltech_stats()
    one = generate_workload(stats, ["mon", "tue"], net, seed=11)
    two = generate_workload(stats, ["mon", "tue"], net, seed=11)
    other = generate_workload(stats, ["mon", "tue"], net, seed=12)
    assert [(s.id, s.evse_id, s.arrival, s.departure, s.requested_energy) for s in one] == [
        (s.id, s.evse_id, s.arrival, s.departure, s.requested_energy) for s in two
    ]
    assert [s.arrival for s in one] != [s.arrival for s in other]


def test_generator_sessions_well_formed():
    net = caltech_preset()
    sessions = generate_workload(caltech_stats(), ["mon", "tue", "wed"], net, seed=5)
    horizon = 3 * 288
    by_evse = {}
    rates = {e.id: e.max_pilot for e in net.evses}
    for s in sessions:
        assert 0 <= s.arrival < s.departure <= horizon
        assert s.requested_energy <= rates[s.evse_id] * s.duration + 1e-9
        by_evse.setdefault(s.evse_id, []).append((s.arrival, s.departure))
    for spans in by_evse.values():
        spans.sort()
        for (a0, d0), (a1, _) in zip(spans, spans[1:]):
            assert a1 >= d0  # one car per stall at a time
    assert sorted(sessions, key=lambda s: s.arrival) == sessions


def test_generator_daily_counts_match_stats():
    net = caltech_preset()
    stats = caltech_stats()
    sessions = generate_workload(stats, ["mon"] * 100, net, seed=29)
    mean = len(sessions) / 100.0
    assert abs(mean - stats.days["mon"].mean_sessions) / stats.days["mon"].mean_sessions < 0.10


def test_generator_weekday_arrivals_cluster_in_the_morning():
    net = caltech_preset()
    sessions = generate_workload(caltech_stats(), ["tue"] * 20, net, seed=40)
    hours = np.array([(s.arrival % 288) // 12 for s in sessions])
    morning = np.mean((hours >= 7) & (hours <= 10))
    small_hours = np.mean(hours <= 3)
    assert morning > 0.35
    assert small_hours < 0.10


def test_scaled_stats():
    base = caltech_stats()
    half = scaled_stats(base, 0.5)
    assert half.days["mon"].mean_sessions == pytest.approx(base.days["mon"].mean_sessions * 0.5)
    assert half.days["mon"].mean_energy_kwh == base.days["mon"].mean_energy_kwh
    with pytest.raises(ValueError):
        scaled_stats(base, 0.0)


def test_generator_rejects_unknown_day():
    with pytest.raises(ValueError):
        generate_workload(caltech_stats(), ["funday"], caltech_preset(), seed=1)
