"""Slot-by-slot downlink schedulers and key-pool accounting.

Every scheduler consumes the same estimate table and answers the same
question: which satellite serves which ground station in each slot, subject
to per-satellite transmitter and per-station receiver counts. Round-robin
ignores link quality and balances service counts, greedy chases the best
instantaneous link, and the opportunistic family maximises throughput while
dual multipliers drag every link's long-run rate up to a target floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .assign import AssignmentInfeasibleError, WeightMatrix, solve_assignment
from .channel import EstimateTable


@dataclass
class Schedule:
    """Service decisions plus the per-link key pools they imply.

    ``key_pool`` maps (sat index, station index) to whole key bits: the
    floor of the summed per-slot key bits of the served slots. Flooring
    happens here once, not per slot.
    """

    n_slots: int
    n_sats: int
    n_stations: int
    slot: np.ndarray
    sat: np.ndarray
    station: np.ndarray
    key_pool: dict
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.slot)


@dataclass
class MinRateProfile:
    """Per-link rate floors for the opportunistic scheduler.

    ``rates`` is an (n_sats, n_stations) array, already normalised by the
    same global per-slot maximum that scales the opportunistic utilities,
    so floors and utilities live on one scale.
    """

    rates: np.ndarray
    normalizer: float

    def __getitem__(self, key):
        return float(self.rates[key])


def _bits_lookup(estimates: EstimateTable):
    """Composite-key index for O(log n) per-triple key-bit lookups."""
    key = (estimates.slot * estimates.n_sats + estimates.sat) \
        * estimates.n_stations + estimates.station
    order = np.argsort(key, kind="stable")
    return key[order], estimates.key_bits[order]


def accumulate_pools(slot: np.ndarray, sat: np.ndarray, station: np.ndarray,
                     estimates: EstimateTable) -> dict:
    """Sum served key bits per link and floor once at the end."""
    keys, bits = _bits_lookup(estimates)
    want = (np.asarray(slot, dtype=np.int64) * estimates.n_sats
            + np.asarray(sat, dtype=np.int64)) * estimates.n_stations \
        + np.asarray(station, dtype=np.int64)
    pos = np.searchsorted(keys, want)
    if len(want) and (np.any(pos >= len(keys)) or np.any(keys[np.minimum(pos, len(keys) - 1)] != want)):
        raise ValueError("schedule serves a triple missing from the estimates")
    raw: dict = {}
    for s, g, b in zip(sat, station, bits[pos] if len(want) else []):
        raw[(int(s), int(g))] = raw.get((int(s), int(g)), 0.0) + float(b)
    return {k: int(np.floor(v)) for k, v in sorted(raw.items())}


def _finish(entries: list, estimates: EstimateTable, metadata: dict) -> Schedule:
    if entries:
        arr = np.array(entries, dtype=np.int64)
        slot, sat, station = arr[:, 0], arr[:, 1], arr[:, 2]
    else:
        slot = sat = station = np.zeros(0, dtype=np.int64)
    return Schedule(
        n_slots=estimates.n_slots, n_sats=estimates.n_sats,
        n_stations=estimates.n_stations,
        slot=slot, sat=sat, station=station,
        key_pool=accumulate_pools(slot, sat, station, estimates),
        metadata=metadata,
    )


class _SlotView:
    """One slot's bipartite link graph with replicated capacity entities."""

    def __init__(self, estimates: EstimateTable, rows: np.ndarray):
        self.sats = np.unique(estimates.sat[rows])
        self.stations = np.unique(estimates.station[rows])
        self.bits = {}
        for r in rows:
            self.bits[(int(estimates.sat[r]), int(estimates.station[r]))] = \
                float(estimates.key_bits[r])
        tx = estimates.transmitters
        rx = estimates.receivers
        self.sat_entities = [int(s) for s in self.sats for _ in range(int(tx[s]))]
        self.station_entities = [int(g) for g in self.stations for _ in range(int(rx[g]))]
        # rows = strictly smaller side; stations on ties
        self.rows_are_sats = len(self.sat_entities) < len(self.station_entities)

    def matrix(self, weight_of) -> WeightMatrix:
        if self.rows_are_sats:
            row_e, col_e = self.sat_entities, self.station_entities
        else:
            row_e, col_e = self.station_entities, self.sat_entities
        w = np.zeros((len(row_e), len(col_e)))
        feas = np.zeros((len(row_e), len(col_e)), dtype=bool)
        for i, a in enumerate(row_e):
            for j, b in enumerate(col_e):
                s, g = (a, b) if self.rows_are_sats else (b, a)
                if (s, g) in self.bits:
                    feas[i, j] = True
                    w[i, j] = weight_of(s, g)
        return WeightMatrix(weights=w, feasible=feas)

    def pairs_from(self, row_to_col: np.ndarray, row_mask=None) -> list:
        row_e = self.sat_entities if self.rows_are_sats else self.station_entities
        col_e = self.station_entities if self.rows_are_sats else self.sat_entities
        served, seen = [], set()
        idx = range(len(row_e)) if row_mask is None else row_mask
        for i, j in zip(idx, row_to_col):
            a, b = row_e[i], col_e[int(j)]
            s, g = (a, b) if self.rows_are_sats else (b, a)
            if (s, g) not in seen:     # collapse duplicate capacity copies
                seen.add((s, g))
                served.append((s, g))
        return served


def _solve_slot(view: _SlotView, weight_of, maximize: bool) -> list:
    """Assign one slot; falls back to a maximum matchable row subset when
    the visibility pattern leaves no complete matching of the rows."""
    matrix = view.matrix(weight_of)
    try:
        return view.pairs_from(solve_assignment(matrix, maximize=maximize))
    except AssignmentInfeasibleError:
        adjacency = csr_matrix(matrix.feasible.astype(np.int8))
        match = maximum_bipartite_matching(adjacency, perm_type="column")
        keep = np.flatnonzero(match >= 0)
        sub = WeightMatrix(weights=matrix.weights[keep],
                           feasible=matrix.feasible[keep])
        sol = solve_assignment(sub, maximize=maximize)
        return view.pairs_from(sol, row_mask=keep)


def run_rr(estimates: EstimateTable) -> Schedule:
    """Round-robin: balance how often each link is served.

    Slots whose graph is a single satellite-station edge are assigned
    directly. Every other slot is solved, in time order, as a minimum-sum
    assignment over the current service counters, which rotates service
    across links regardless of their quality.
    """
    counters = np.zeros((estimates.n_sats, estimates.n_stations))
    entries = []
    for t in estimates.occupied_slots():
        rows = estimates.slot_rows(t)
        if len(rows) == 1:
            s, g = int(estimates.sat[rows[0]]), int(estimates.station[rows[0]])
            entries.append((int(t), s, g))
            counters[s, g] += 1.0
    direct_slots = {e[0] for e in entries}
    for t in estimates.occupied_slots():
        if int(t) in direct_slots:
            continue
        view = _SlotView(estimates, estimates.slot_rows(t))
        served = _solve_slot(view, lambda s, g: counters[s, g], maximize=False)
        for s, g in served:
            entries.append((int(t), s, g))
            counters[s, g] += 1.0
    entries.sort()
    return _finish(entries, estimates, {"scheduler": "rr"})


def run_greedy(estimates: EstimateTable) -> Schedule:
    """Stations bid for their best-rate satellite; poorer pools win fights.

    Within a slot every unserved station claims the visible satellite with
    the most key bits on offer. An oversubscribed satellite takes the
    claimants it has accumulated the fewest key bits with (station index
    breaks ties); losers re-bid among the satellites still free this slot.
    """
    raw_pool: dict = {}
    entries = []
    for t in estimates.occupied_slots():
        rows = estimates.slot_rows(t)
        view = _SlotView(estimates, rows)
        rem_tx = {int(s): int(estimates.transmitters[s]) for s in view.sats}
        rem_rx = {int(g): int(estimates.receivers[g]) for g in view.stations}
        linked = set()
        while True:
            bids: dict = {}
            for g in sorted(rem_rx):
                if rem_rx[g] <= 0:
                    continue
                options = [(s, view.bits[(s, g)]) for s in sorted(rem_tx)
                           if rem_tx[s] > 0 and (s, g) in view.bits
                           and (s, g) not in linked]
                if not options:
                    continue
                best = max(options, key=lambda it: (it[1], -it[0]))
                bids.setdefault(best[0], []).append(g)
            if not bids:
                break
            for s in sorted(bids):
                claimants = sorted(bids[s],
                                   key=lambda g: (raw_pool.get((s, g), 0.0), g))
                for g in claimants[:rem_tx[s]]:
                    linked.add((s, g))
                    rem_rx[g] -= 1
                    raw_pool[(s, g)] = raw_pool.get((s, g), 0.0) + view.bits[(s, g)]
                    entries.append((int(t), s, g))
                rem_tx[s] -= min(rem_tx[s], len(claimants))
    entries.sort()
    return _finish(entries, estimates, {"scheduler": "greedy"})


def derive_min_rates(schedule: Schedule, estimates: EstimateTable) -> MinRateProfile:
    """Rate floors achieved by a schedule: pool bits per usable slot.

    Each link's floor is its pool divided by the satellite's usable-slot
    count, then scaled by the global normaliser so it is comparable with
    the opportunistic utilities.
    """
    tau = estimates.tau()
    norm = estimates.normalizer
    rates = np.zeros((estimates.n_sats, estimates.n_stations))
    for (s, g), bits in schedule.key_pool.items():
        if tau[s] > 0:
            rates[s, g] = bits / float(tau[s]) / norm
    return MinRateProfile(rates=rates, normalizer=norm)


def run_opportunistic(estimates: EstimateTable, targets: MinRateProfile,
                      delta: float = 0.01, max_passes: int = 50,
                      tol: float = 1e-4) -> Schedule:
    """Throughput-chasing scheduler with per-link rate floors.

    Each slot solves a maximise assignment with weights (1 + lambda) * U,
    where U is the normalised key-bit utility and lambda the link's dual
    multiplier. Served links relax their multiplier by delta * (U - r),
    unserved visible links tighten by delta * r, both clamped at zero.
    Passes repeat over the whole horizon until the largest multiplier drift
    across a pass drops below ``tol`` or ``max_passes`` is hit; the last
    pass's decisions are the schedule.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    lam = np.zeros((estimates.n_sats, estimates.n_stations))
    norm = estimates.normalizer
    slots = estimates.occupied_slots()
    converged = False
    passes = 0
    entries: list = []
    for _ in range(max_passes):
        lam_start = lam.copy()
        entries = []
        for t in slots:
            view = _SlotView(estimates, estimates.slot_rows(t))
            served = _solve_slot(
                view, lambda s, g: (1.0 + lam[s, g]) * view.bits[(s, g)] / norm,
                maximize=True)
            for s, g in served:
                entries.append((int(t), s, g))
            served_set = set(served)
            for (s, g), bits in view.bits.items():
                u = bits / norm
                if (s, g) in served_set:
                    lam[s, g] = max(0.0, lam[s, g] - delta * (u - targets[s, g]))
                else:
                    lam[s, g] = max(0.0, lam[s, g] + delta * targets[s, g])
        passes += 1
        if float(np.abs(lam - lam_start).max(initial=0.0)) < tol:
            converged = True
            break
    entries.sort()
    return _finish(entries, estimates, {
        "scheduler": "opportunistic",
        "passes": passes,
        "converged": converged,
        "delta": delta,
        "tol": tol,
        "max_multiplier": float(lam.max(initial=0.0)),
    })
