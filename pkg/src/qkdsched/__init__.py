"""Discrete-time scheduling and pairwise key allocation for satellite QKD.

Modules: scenario (inputs), orbit (geometry), channel/weather (link
estimates), assign/sched (per-slot service), alloc (pairwise keys and
exact baselines), metrics/cli (reporting and entry point).
"""

__version__ = "0.1.0"
