"""Shared fixtures and independent oracles used across the test modules.

The oracles here deliberately avoid the library's own algorithms: brute
force permutation scans for the assignment solver, depth-first search with
capacity pruning for the pairwise-key program, and plain bisection for the
key-rate zero crossing. They are slow and only meant for desk-scale cross
checks.
"""

import itertools

import numpy as np
import pytest

from qkdsched.channel import EstimateTable


def brute_force_assignment(weights, feasible, maximize=True):
    """Scan every injective row->column map; return (best value, best map).

    Among optimal maps the lexicographically smallest column tuple wins,
    which is the tie order the solver promises. Returns (None, None) when
    no feasible complete map exists.
    """
    n_rows, n_cols = weights.shape
    best_val, best_map = None, None
    for cols in itertools.permutations(range(n_cols), n_rows):
        if not all(feasible[i, c] for i, c in enumerate(cols)):
            continue
        val = sum(weights[i, c] for i, c in enumerate(cols))
        if best_val is None:
            best_val, best_map = val, cols
            continue
        if maximize:
            if val > best_val + 1e-12:
                best_val, best_map = val, cols
            elif abs(val - best_val) <= 1e-12 and cols < best_map:
                best_map = cols
        else:
            if val < best_val - 1e-12:
                best_val, best_map = val, cols
            elif abs(val - best_val) <= 1e-12 and cols < best_map:
                best_map = cols
    return best_val, best_map


def _pair_list(n_stations):
    return [(a, b) for a in range(n_stations) for b in range(a + 1, n_stations)]


def phase2_feasible(pools, pairs, k):
    """Exact feasibility of 'every pair totals >= k' by pruned DFS.

    ``pools`` is an (S, G) integer array of per-link key bits. Each unit
    given to pair (a, b) through satellite s consumes one bit of pools[s, a]
    and one of pools[s, b].
    """
    if k == 0:
        return True
    pools = pools.copy()
    n_sats = pools.shape[0]

    # cheap global prechecks: joint capacity per pair, aggregate per station
    for (a, b) in pairs:
        if sum(min(pools[s, a], pools[s, b]) for s in range(n_sats)) < k:
            return False
    degree = np.zeros(pools.shape[1], dtype=int)
    for (a, b) in pairs:
        degree[a] += 1
        degree[b] += 1
    if np.any(pools.sum(axis=0) < k * degree):
        return False

    def place(pair_idx):
        if pair_idx == len(pairs):
            return True
        a, b = pairs[pair_idx]

        def split(remaining, s):
            if remaining == 0:
                return place(pair_idx + 1)
            if s == n_sats:
                return False
            cap = min(pools[s, a], pools[s, b])
            # upper bound on what later satellites can still give this pair
            rest = sum(min(pools[r, a], pools[r, b]) for r in range(s + 1, n_sats))
            lo = max(0, remaining - rest)
            for take in range(lo, min(cap, remaining) + 1):
                pools[s, a] -= take
                pools[s, b] -= take
                if split(remaining - take, s + 1):
                    return True
                pools[s, a] += take
                pools[s, b] += take
            return False

        return split(k, 0)

    return place(0)


def phase2_bruteforce_maxmin(pools, pairs):
    """Largest k with every pair reaching k, by downward scan from the cap."""
    pools = np.asarray(pools, dtype=int)
    hi = min(sum(min(pools[s, a], pools[s, b]) for s in range(pools.shape[0]))
             for (a, b) in pairs) if pairs else 0
    for k in range(hi, -1, -1):
        if phase2_feasible(pools, pairs, k):
            return k
    return 0


def phase2_bruteforce_maxsum(pools, pairs):
    """Largest total pairwise bits, by DFS over per-pair-per-satellite takes."""
    pools = np.asarray(pools, dtype=int).copy()
    n_sats = pools.shape[0]
    cells = [(u, s) for u in range(len(pairs)) for s in range(n_sats)]
    best = 0

    def upper_bound(idx):
        ub = 0
        for (u, s) in cells[idx:]:
            a, b = pairs[u]
            ub += min(pools[s, a], pools[s, b])
        return ub

    def go(idx, acc):
        nonlocal best
        best = max(best, acc)
        if idx == len(cells):
            return
        if acc + upper_bound(idx) <= best:
            return
        u, s = cells[idx]
        a, b = pairs[u]
        for take in range(min(pools[s, a], pools[s, b]), -1, -1):
            pools[s, a] -= take
            pools[s, b] -= take
            go(idx + 1, acc + take)
            pools[s, a] += take
            pools[s, b] += take

    go(0, 0)
    return best


def check_schedule(schedule, estimates):
    """Independent feasibility audit of a schedule against its estimates.

    Checks, from first principles: every served triple exists in the
    estimate table, no (slot, sat, station) repeats, and per-slot
    transmitter/receiver capacities hold.
    """
    edges = set(zip(estimates.slot.tolist(), estimates.sat.tolist(),
                    estimates.station.tolist()))
    seen = set()
    tx_load, rx_load = {}, {}
    for t, s, g in zip(schedule.slot.tolist(), schedule.sat.tolist(),
                       schedule.station.tolist()):
        assert (t, s, g) in edges, f"served invisible triple {(t, s, g)}"
        assert (t, s, g) not in seen, f"duplicate service {(t, s, g)}"
        seen.add((t, s, g))
        tx_load[(t, s)] = tx_load.get((t, s), 0) + 1
        rx_load[(t, g)] = rx_load.get((t, g), 0) + 1
    for (t, s), n in tx_load.items():
        assert n <= estimates.transmitters[s], f"satellite {s} over capacity at {t}"
    for (t, g), n in rx_load.items():
        assert n <= estimates.receivers[g], f"station {g} over capacity at {t}"
    # pool audit: floored sum of served bits per link
    bits = {}
    lookup = {(int(t), int(s), int(g)): float(b)
              for t, s, g, b in zip(estimates.slot, estimates.sat,
                                    estimates.station, estimates.key_bits)}
    for t, s, g in zip(schedule.slot.tolist(), schedule.sat.tolist(),
                       schedule.station.tolist()):
        bits[(s, g)] = bits.get((s, g), 0.0) + lookup[(t, s, g)]
    expect = {k: int(np.floor(v)) for k, v in bits.items()}
    assert schedule.key_pool == expect, "pool accounting mismatch"


def bisect_root(fn, lo, hi, tol=1e-12):
    """Plain bisection for a sign change of ``fn`` on [lo, hi]."""
    flo, fhi = fn(lo), fn(hi)
    assert flo * fhi < 0, "no sign change on the bracket"
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fn(lo) * fn(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def make_table(n_slots, n_sats, n_stations, rows, transmitters=None, receivers=None):
    """Estimate table from (slot, sat, station, key_bits) tuples."""
    rows = sorted(rows)
    slot = np.array([r[0] for r in rows], dtype=np.int64)
    sat = np.array([r[1] for r in rows], dtype=np.int64)
    station = np.array([r[2] for r in rows], dtype=np.int64)
    bits = np.array([float(r[3]) for r in rows])
    zeros = np.zeros(len(rows))
    return EstimateTable(
        n_slots=n_slots, n_sats=n_sats, n_stations=n_stations,
        slot=slot, sat=sat, station=station,
        transmissivity=zeros.copy(), successes=bits.copy(), qber=zeros.copy(),
        rate=np.ones(len(rows)), cloud=zeros.copy(), key_bits=bits,
        transmitters=None if transmitters is None else np.asarray(transmitters, dtype=np.int64),
        receivers=None if receivers is None else np.asarray(receivers, dtype=np.int64),
    )


def random_table(rng, n_slots=30, n_sats=3, n_stations=4, density=0.6, scale=10.0):
    """Random synthetic estimate table for scheduler property tests."""
    rows = []
    for t in range(n_slots):
        for s in range(n_sats):
            for g in range(n_stations):
                if rng.random() < density:
                    rows.append((t, s, g, float(rng.random() * scale)))
    if not rows:
        rows.append((0, 0, 0, 1.0))
    return make_table(n_slots, n_sats, n_stations, rows)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def toy_scenario():
    from qkdsched.scenario import (ChannelParams, GroundStation, Satellite,
                                   SatelliteSpec, Scenario, TimeGrid)

    station = GroundStation(
        station_id=1, name="toy", latitude_deg=40.0, longitude_deg=-74.0,
        receivers=1,
        zenith_transmissivity={"mar": 0.65, "jun": 0.6, "sep": 0.62, "dec": 0.7},
        background_noise={0: 1e-7, 6: 2e-7, 12: 5e-7, 18: 2e-7},
    )
    return Scenario(
        satellites=(Satellite(sat_id=0, ring=0, slot_in_ring=0,
                              raan_deg=0.0, anomaly_deg=0.0),),
        stations=(station,),
        sat_spec=SatelliteSpec(altitude_km=500.0, transmitters=1,
                               source_rate_hz=1e9, optics_transmissivity=0.8,
                               dark_count_prob=1e-8),
        time=TimeGrid(slot_duration_s=1.0, slot_count=4),
        channel=ChannelParams(transmit_divergence_urad=10.0,
                              receiver_aperture_m=1.0,
                              detector_efficiency=0.5, sifting_factor=0.5,
                              intrinsic_error_rate=0.01),
    )
