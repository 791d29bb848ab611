"""Scheduling and simulation for EV charging on oversubscribed three-phase infrastructure.

The package models a charging site as a set of EVSEs hanging off an unbalanced
three-phase network, schedules pilot signals with a receding-horizon convex
program (plus quantization and rampdown post-processing for non-ideal
hardware), and replays schedules through a discrete-time simulator with
battery models and time-of-use billing.

Internal conventions, used everywhere unless stated otherwise:

* time is an integer count of fixed-length periods (default 5 minutes),
* charging rates and network limits are currents in amps,
* session energy is tracked in amp-periods at the site's nominal voltage,
* phase angles are degrees in [-180, 180].
"""

from evsched.network import ChargingNetwork, Evse, NetworkConstraint, caltech_preset, synthetic_preset
from evsched.workload import Session, generate_workload, load_dataset

__all__ = [
    "ChargingNetwork",
    "Evse",
    "NetworkConstraint",
    "Session",
    "caltech_preset",
    "synthetic_preset",
    "generate_workload",
    "load_dataset",
]

__version__ = "0.1.0"
