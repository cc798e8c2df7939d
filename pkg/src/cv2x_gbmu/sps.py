"""Sensing-based semi-persistent scheduling (sidelink mode 4).

The selection window is a grid of ``window_subframes x channels`` resources.
A vehicle that needs a new resource builds a sensing table for the whole
window and runs the three-step selection in :func:`sps_select`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .channel import watts_to_dbm

NO_RSRP = -math.inf


@dataclass(frozen=True, order=True)
class Resource:
    subframe: int
    channel: int


def window_resources(window_subframes: int = 8, channels: int = 2) -> list[Resource]:
    return [Resource(s, c) for s in range(window_subframes) for c in range(channels)]


@dataclass(frozen=True)
class SensingRecord:
    resource: Resource
    measured_rsrp_dbm: float
    rssi_dbm: float
    reserved: bool


@dataclass(frozen=True)
class SpsState:
    current_resource: Resource | None = None
    reselection_counter: int = 0
    period_subframes: int = 8


@dataclass(frozen=True)
class SelectionTrace:
    """Intermediate results of one selection, kept for inspection."""

    resource: Resource
    threshold_dbm: float
    survivors: tuple[Resource, ...]
    best: tuple[Resource, ...]


def measure(
    powers_w: Mapping[Resource, Sequence[float]],
    noise_w: float,
    sensing_floor_dbm: float = -107.0,
    window_subframes: int = 8,
    channels: int = 2,
) -> list[SensingRecord]:
    """Turn per-resource received powers into sensing records.

    A transmission is decoded (its SCI read, the resource flagged reserved)
    when its received power reaches ``sensing_floor_dbm``. The RSRP of a
    resource is the strongest decoded power; RSSI aggregates every
    transmission on the resource plus noise.
    """
    records = []
    for res in window_resources(window_subframes, channels):
        p = np.asarray(powers_w.get(res, ()), dtype=float)
        p_dbm = watts_to_dbm(p) if p.size else np.empty(0)
        decoded = p_dbm[p_dbm >= sensing_floor_dbm]
        rsrp = float(decoded.max()) if decoded.size else NO_RSRP
        rssi = float(watts_to_dbm(p.sum() + noise_w))
        records.append(SensingRecord(res, rsrp, rssi, bool(decoded.size)))
    return records


def sense(records: Iterable[SensingRecord], window_subframes: int = 8, channels: int = 2) -> list[SensingRecord]:
    """Validate a sensing window and return it ordered by resource."""
    table = {}
    for r in records:
        if r.resource in table:
            raise ValueError(f"duplicate sensing record for {r.resource}")
        table[r.resource] = r
    missing = [res for res in window_resources(window_subframes, channels) if res not in table]
    if missing:
        raise ValueError(f"sensing table is missing {len(missing)} resource(s), e.g. {missing[0]}")
    return [table[res] for res in sorted(table)]


def required_survivors(total: int, min_fraction: float = 0.2) -> int:
    # round() guards against 0.2 * 16 = 3.2000000000000006
    return math.ceil(round(min_fraction * total, 9))


def select_with_trace(
    table: Sequence[SensingRecord],
    threshold_rsrp_dbm: float,
    rng: np.random.Generator,
    step_db: float = 3.0,
    min_fraction: float = 0.2,
    n_best: int = 3,
) -> SelectionTrace:
    if not table:
        raise ValueError("empty sensing table")
    need = required_survivors(len(table), min_fraction)
    threshold = threshold_rsrp_dbm
    top = max((r.measured_rsrp_dbm for r in table if r.reserved), default=NO_RSRP)
    while True:
        survivors = [r for r in table if not (r.reserved and r.measured_rsrp_dbm > threshold)]
        if len(survivors) >= need or threshold >= top:
            break
        threshold += step_db
    ranked = sorted(survivors, key=lambda r: (r.rssi_dbm, r.resource.subframe, r.resource.channel))
    best = tuple(r.resource for r in ranked[:n_best])
    pick = best[int(rng.integers(len(best)))]
    return SelectionTrace(pick, threshold, tuple(r.resource for r in survivors), best)


def sps_select(
    table: Sequence[SensingRecord],
    threshold_rsrp_dbm: float,
    rng: np.random.Generator,
    step_db: float = 3.0,
    min_fraction: float = 0.2,
) -> Resource:
    """Pick a resource with the three-step autonomous procedure.

    1. Exclude reserved resources whose RSRP exceeds the threshold, raising
       the threshold by ``step_db`` until at least ``min_fraction`` of the
       window survives.
    2. Keep the three survivors with the lowest RSSI (ties broken by
       subframe, then channel).
    3. Choose one of them uniformly at random.
    """
    return select_with_trace(table, threshold_rsrp_dbm, rng, step_db, min_fraction).resource


def draw_counter(rng: np.random.Generator, counter_min: int = 5, counter_max: int = 15) -> int:
    return int(rng.integers(counter_min, counter_max + 1))


def tick_sps(
    state: SpsState,
    rng: np.random.Generator,
    counter_min: int = 5,
    counter_max: int = 15,
    keep_probability: float = 0.0,
) -> tuple[SpsState, bool]:
    """Account for one transmission on the current resource.

    Returns the new state and whether the caller must reselect. On expiry the
    counter is redrawn; with probability ``keep_probability`` the resource is
    kept instead of reselected.
    """
    counter = state.reselection_counter - 1
    if counter > 0:
        return replace(state, reselection_counter=counter), False
    counter = draw_counter(rng, counter_min, counter_max)
    reselect = not (keep_probability > 0 and rng.random() < keep_probability)
    return replace(state, reselection_counter=counter), reselect


def half_duplex_filter(all_vehicles: Iterable, transmitters: Iterable) -> list:
    """Vehicles that can receive in a subframe: everyone not transmitting."""
    tx = set(transmitters)
    return [v for v in all_vehicles if v not in tx]
