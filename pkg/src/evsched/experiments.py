"""Experiment assembly: configs to networks, workloads, algorithms, and runs.

This is the layer the command line drives. A JSON config picks a network
preset or file, a workload file or generator spec, an algorithm, a utility
preset, a scenario, and tariff settings; the functions here materialize those
pieces, run the simulation(s), and write deterministic CSV/JSON outputs.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from evsched.baselines import BaselineScheduler
from evsched.billing import (
    DAYS_PER_MONTH,
    Tariff,
    day_is_weekend,
    demand_charge_proxy,
    peak_hint,
    sce_ev_tou4,
    tou_rate,
)
from evsched.network import ChargingNetwork, caltech_preset, synthetic_preset
from evsched.scheduler import (
    AdaptiveScheduler,
    DemandCharge,
    EnergyCost,
    EqualShare,
    QuickCharge,
    UtilityConfig,
)
from evsched.simulator import (
    SCENARIOS,
    Meter,
    SimConfig,
    SimResult,
    offline_optimal,
    realized_utility,
    run,
)
from evsched.workload import (
    DAY_NAMES,
    Session,
    caltech_stats,
    generate_workload,
    load_dataset,
    scaled_stats,
)

__all__ = [
    "resolve_config",
    "build_network",
    "build_workload",
    "build_tariff",
    "tariff_price_fn",
    "quick_charge_utility",
    "profit_utility",
    "make_algorithm",
    "simulate_once",
    "capacity_sweep",
    "profit_experiment",
    "write_outputs",
    "write_rows_csv",
]

_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "period_minutes": 5.0,
    "voltage": 208.0,
    "scenario": "II",
    "algorithm": "asa",
    "utility": "quick-charge",
    "constraint_mode": "affine",
    "horizon": 144,
    "recompute_period": 1,
    "tariff": "sce-ev-tou4",
    "revenue_per_kwh": 0.30,
    "start_day": "mon",
    "billing_days": None,
    "rampdown": None,
    "solver_tol": 1e-4,
    "network": {"preset": "caltech", "transformer_kw": 150.0},
    "workload": {"generate": {"days": list(DAY_NAMES[:5]), "stats": "caltech", "session_scale": 1.0}},
}


def resolve_config(raw: dict[str, Any], base_dir: str | Path | None = None) -> dict[str, Any]:
    """Fill defaults and resolve file paths relative to the config's home."""
    cfg = {**_DEFAULTS, **raw}
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for section, key in (("network", "file"), ("workload", "file")):
        spec = cfg.get(section)
        if isinstance(spec, dict) and key in spec:
            path = Path(spec[key])
            if not path.is_absolute():
                spec = {**spec, key: str((base / path).resolve())}
                cfg[section] = spec
            if not Path(cfg[section][key]).exists():
                raise FileNotFoundError(f"{section} file not found: {cfg[section][key]}")
    if cfg["scenario"] not in SCENARIOS:
        raise ValueError(f"unknown scenario {cfg['scenario']!r}; pick one of {sorted(SCENARIOS)}")
    return cfg


def build_network(cfg: dict[str, Any]) -> ChargingNetwork:
    spec = cfg["network"]
    if "file" in spec:
        return ChargingNetwork.load(spec["file"])
    preset = spec.get("preset", "caltech")
    if preset == "caltech":
        return caltech_preset(float(spec.get("transformer_kw", 150.0)))
    if preset == "synthetic":
        return synthetic_preset(int(spec.get("n_evse", 10)), float(spec.get("transformer_kw", 50.0)))
    raise ValueError(f"unknown network preset {preset!r}")


def build_workload(cfg: dict[str, Any], network: ChargingNetwork) -> list[Session]:
    spec = cfg["workload"]
    if "file" in spec:
        return load_dataset(spec["file"], network, cfg["voltage"], cfg["period_minutes"])
    gen = spec["generate"]
    stats = caltech_stats()
    if gen.get("session_scale", 1.0) != 1.0:
        stats = scaled_stats(stats, float(gen["session_scale"]))
    return generate_workload(stats, gen["days"], network, int(cfg["seed"]), cfg["period_minutes"])


def build_tariff(cfg: dict[str, Any]) -> Tariff | None:
    name = cfg.get("tariff")
    if name is None:
        return None
    if name == "sce-ev-tou4":
        return sce_ev_tou4()
    if isinstance(name, dict):
        from evsched.billing import TouWindow

        return Tariff(
            tuple(TouWindow(*w) for w in name["weekday"]),
            tuple(TouWindow(*w) for w in name["weekend"]),
            float(name["demand_charge_rate"]),
        )
    raise ValueError(f"unknown tariff {name!r}")


def tariff_price_fn(tariff: Tariff, start_day: str, period_minutes: float) -> Callable[[int], float]:
    def price(t: int) -> float:
        minute = t * period_minutes
        return tou_rate(tariff, minute, day_is_weekend(int(minute // 1440), start_day))

    return price


def quick_charge_utility() -> UtilityConfig:
    return UtilityConfig(((QuickCharge(), 1.0), (EqualShare(), 1e-12)))


def profit_utility(
    tariff: Tariff,
    revenue_per_kwh: float,
    billing_days: float,
    start_day: str,
    period_minutes: float,
    meter: Meter | None = None,
    hint_peak_kw: float | None = None,
) -> Callable[[int], UtilityConfig]:
    """Time-varying profit objective for the receding-horizon scheduler.

    The demand charge is priced at the window's prorated rate spread over the
    billing days that remain, and only peak above the already-paid-for level
    (running peak so far, or an externally supplied peak target) costs
    anything.
    """
    window_rate = tariff.demand_charge_rate * billing_days / DAYS_PER_MONTH
    price = tariff_price_fn(tariff, start_day, period_minutes)
    target = peak_hint(hint_peak_kw)

    def at(k: int) -> UtilityConfig:
        day = min(int(k * period_minutes // 1440), int(billing_days) - 1)
        proxy = demand_charge_proxy(window_rate, billing_days, day)
        threshold = max(target, meter.peak_kw if meter is not None else 0.0)
        return UtilityConfig(
            (
                (EnergyCost(revenue_per_kwh, price), 1.0),
                (DemandCharge(proxy, threshold), 1.0),
                (QuickCharge(), 1e-4),
                (EqualShare(), 1e-12),
            )
        )

    return at


def offline_profit_utility(
    tariff: Tariff,
    revenue_per_kwh: float,
    billing_days: float,
    start_day: str,
    period_minutes: float,
) -> UtilityConfig:
    """Hindsight profit objective: full window demand rate on the peak."""
    window_rate = tariff.demand_charge_rate * billing_days / DAYS_PER_MONTH
    price = tariff_price_fn(tariff, start_day, period_minutes)
    return UtilityConfig(
        (
            (EnergyCost(revenue_per_kwh, price), 1.0),
            (DemandCharge(window_rate, 0.0), 1.0),
            (EqualShare(), 1e-12),
        )
    )


def _billing_days(cfg: dict[str, Any], sessions: Sequence[Session]) -> float:
    if cfg.get("billing_days"):
        return float(cfg["billing_days"])
    if not sessions:
        return 1.0
    periods_per_day = 1440.0 / cfg["period_minutes"]
    return max(1.0, math.ceil(max(s.departure for s in sessions) / periods_per_day))


def make_algorithm(
    cfg: dict[str, Any],
    network: ChargingNetwork,
    sessions: Sequence[Session],
    *,
    hint_peak_kw: float | None = None,
):
    """Instantiate the configured algorithm (and its meter, when peak-aware)."""
    name = cfg["algorithm"]
    scenario = SCENARIOS[cfg["scenario"]]
    quantized = not scenario.continuous_pilots
    if name in ("llf", "edf", "rr", "uncontrolled"):
        return BaselineScheduler(name, network, quantized=quantized, constraint_mode=cfg["constraint_mode"])
    if name != "asa":
        raise ValueError(f"unknown algorithm {name!r}")

    preset = cfg["utility"]
    if preset == "quick-charge":
        utility: UtilityConfig | Callable[[int], UtilityConfig] = quick_charge_utility()
        meter = None
    elif preset in ("profit", "profit-hint"):
        tariff = build_tariff(cfg)
        if tariff is None:
            raise ValueError("profit utility needs a tariff")
        meter = Meter()
        utility = profit_utility(
            tariff,
            cfg["revenue_per_kwh"],
            _billing_days(cfg, sessions),
            cfg["start_day"],
            cfg["period_minutes"],
            meter,
            hint_peak_kw if preset == "profit-hint" else None,
        )
    else:
        raise ValueError(f"unknown utility preset {preset!r}")

    algo = AdaptiveScheduler(
        network,
        utility,
        horizon=int(cfg["horizon"]),
        recompute_period=int(cfg["recompute_period"]),
        quantized=quantized,
        constraint_mode=cfg["constraint_mode"],
        period_minutes=cfg["period_minutes"],
        tol=float(cfg["solver_tol"]),
    )
    if meter is not None:
        algo.meter = meter
    return algo


def _sim_config(cfg: dict[str, Any], sessions: Sequence[Session]) -> SimConfig:
    return SimConfig(
        period_minutes=cfg["period_minutes"],
        start_day=cfg["start_day"],
        tariff=build_tariff(cfg),
        revenue_per_kwh=cfg["revenue_per_kwh"],
        billing_days=_billing_days(cfg, sessions),
        rampdown=cfg["rampdown"],
    )


def simulate_once(cfg: dict[str, Any], *, hint_peak_kw: float | None = None) -> SimResult:
    """Run one configured simulation end to end."""
    network = build_network(cfg)
    sessions = build_workload(cfg, network)
    sim_cfg = _sim_config(cfg, sessions)
    if cfg["algorithm"] == "offline":
        tariff = build_tariff(cfg)
        if cfg["utility"] in ("profit", "profit-hint") and tariff is not None:
            utility = offline_profit_utility(
                tariff, cfg["revenue_per_kwh"], _billing_days(cfg, sessions),
                cfg["start_day"], cfg["period_minutes"],
            )
        else:
            utility = quick_charge_utility()
        result, _ = offline_optimal(
            network, sessions, utility, sim_cfg,
            constraint_mode=cfg["constraint_mode"], tol=float(cfg["solver_tol"]),
        )
        return result
    algorithm = make_algorithm(cfg, network, sessions, hint_peak_kw=hint_peak_kw)
    return run(network, sessions, algorithm, SCENARIOS[cfg["scenario"]], sim_cfg)


def _sweep_worker(args: tuple[dict[str, Any], float, str]) -> dict[str, Any]:
    cfg, transformer_kw, algorithm = args
    cfg = {**cfg, "algorithm": algorithm}
    cfg["network"] = {**cfg["network"], "transformer_kw": transformer_kw}
    result = simulate_once(cfg)
    return {
        "transformer_kw": transformer_kw,
        "algorithm": algorithm,
        "demand_met": result.demand_met,
        "delivered_kwh": result.delivered_kwh,
        "audit_violations": result.audit_violations(),
    }


def capacity_sweep(cfg: dict[str, Any], jobs: int = 1) -> list[dict[str, Any]]:
    """Demand-met fraction across transformer sizes for several algorithms."""
    sweep = cfg.get("sweep") or {}
    capacities = [float(c) for c in sweep.get("transformer_kw", (20, 30, 40, 50, 70, 100))]
    algorithms = list(sweep.get("algorithms", ("asa", "llf", "edf", "rr")))
    tasks = [(cfg, kw, alg) for kw in capacities for alg in algorithms]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_worker, tasks))
    else:
        rows = [_sweep_worker(t) for t in tasks]
    rows.sort(key=lambda r: (r["transformer_kw"], r["algorithm"]))
    return rows


def profit_experiment(cfg: dict[str, Any]) -> list[dict[str, Any]]:
    """Billed-profit comparison: hindsight benchmark, peak-aware MPC, dumb EVSEs.

    The hindsight run goes first so its peak can seed the peak-hint variant.
    """
    network = build_network(cfg)
    sessions = build_workload(cfg, network)
    sim_cfg = _sim_config(cfg, sessions)
    tariff = build_tariff(cfg)
    if tariff is None:
        raise ValueError("profit experiment needs a tariff")
    billing_days = _billing_days(cfg, sessions)

    utility = offline_profit_utility(
        tariff, cfg["revenue_per_kwh"], billing_days, cfg["start_day"], cfg["period_minutes"]
    )
    offline_result, _ = offline_optimal(
        network, sessions, utility, sim_cfg,
        constraint_mode=cfg["constraint_mode"], tol=float(cfg["solver_tol"]),
    )
    offline_profit = offline_result.billing.profit

    def row(result: SimResult, label: str) -> dict[str, Any]:
        b = result.billing
        return {
            "run": label,
            "algorithm": result.algorithm,
            "scenario": result.scenario,
            "profit": b.profit,
            "revenue": b.revenue,
            "energy_cost": b.energy_cost,
            "demand_charge": b.demand_charge,
            "peak_kw": b.peak_kw,
            "demand_met": result.demand_met,
            "profit_vs_offline": b.profit / offline_profit if offline_profit > 0 else math.nan,
            "audit_violations": result.audit_violations(),
        }

    rows = [row(offline_result, "offline")]
    specs = cfg.get("profit_runs") or [
        {"label": "asa-hint-ii", "utility": "profit-hint", "scenario": "II"},
        {"label": "asa-hint-v", "utility": "profit-hint", "scenario": "V"},
        {"label": "asa-ii", "utility": "profit", "scenario": "II"},
        {"label": "uncontrolled", "algorithm": "uncontrolled", "scenario": "II"},
    ]
    for spec in specs:
        run_cfg = {**cfg, "algorithm": spec.get("algorithm", "asa"), "scenario": spec["scenario"]}
        run_cfg["utility"] = spec.get("utility", cfg["utility"])
        hint = offline_result.billing.peak_kw if run_cfg["utility"] == "profit-hint" else None
        algorithm = make_algorithm(run_cfg, network, sessions, hint_peak_kw=hint)
        result = run(network, sessions, algorithm, SCENARIOS[run_cfg["scenario"]], sim_cfg)
        rows.append(row(result, spec["label"]))
    return rows


# -- deterministic output files ------------------------------------------------


def _fmt(v: Any) -> Any:
    if isinstance(v, (np.floating, float)):
        return float(f"{float(v):.12g}")
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_rows_csv(rows: Sequence[dict[str, Any]], path: str | Path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    fields = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(v) for k, v in r.items()})


def write_outputs(result: SimResult, out_dir: str | Path, resolved_cfg: dict[str, Any]) -> dict[str, Path]:
    """Write traces.csv, constraints.csv, and summary.json for one run.

    Output bytes depend only on the run's numbers (no timestamps, sorted
    keys), so identical runs produce identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    traces = out / "traces.csv"
    with open(traces, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period", "session_id", "pilot_amps", "measured_amps"])
        for k in range(result.periods):
            for i, s in enumerate(result.sessions):
                if s.arrival <= k < s.departure:
                    writer.writerow(
                        [k, s.id, f"{result.pilots[i, k]:.10g}", f"{result.measured[i, k]:.10g}"]
                    )

    constraints = out / "constraints.csv"
    with open(constraints, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["period", "constraint_id", "aggregate_amps", "limit_amps"])
        for k in range(result.periods):
            for li, cid in enumerate(result.constraint_ids):
                writer.writerow(
                    [k, cid, f"{result.aggregates[li, k]:.10g}", f"{result.limits[li, k]:.10g}"]
                )

    summary = {
        "algorithm": result.algorithm,
        "scenario": result.scenario,
        "periods": result.periods,
        "demand_met": _fmt(result.demand_met),
        "delivered_kwh": _fmt(result.delivered_kwh),
        "sessions": [
            {
                "id": s.id,
                "evse_id": s.evse_id,
                "arrival": s.arrival,
                "departure": s.departure,
                "requested_amp_periods": _fmt(s.requested_energy),
                "delivered_amp_periods": _fmt(result.delivered[i]),
            }
            for i, s in enumerate(result.sessions)
        ],
        "audit": result.audit,
        "solve_count": result.solve_count,
        "fallback_count": result.fallback_count,
        "billing": None
        if result.billing is None
        else {
            "revenue": _fmt(result.billing.revenue),
            "energy_cost": _fmt(result.billing.energy_cost),
            "demand_charge": _fmt(result.billing.demand_charge),
            "profit": _fmt(result.billing.profit),
            "peak_kw": _fmt(result.billing.peak_kw),
        },
        "config": resolved_cfg,
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"traces": traces, "constraints": constraints, "summary": summary_path}
