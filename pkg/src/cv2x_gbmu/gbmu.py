"""Gradient-based mobility updating (GBMU) for a broadcast transmitter.

The transmitter maximises the log-fair utility ``U = sum_j ln P_j`` over its
receivers, where ``P_j`` is the two-distance prediction for receiver ``j``.
Each iteration computes, per receiver, the derivative of ``U`` with respect to
the signal distance, turns it into a wanted position along the
receiver-to-transmitter unit vector, and moves the transmitter to the centroid
of the wanted positions.

Everything here works on a frozen snapshot: receivers, their NSV and their
main interferers do not move while the transmitter iterates.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ScenarioConfig
from .engine import Simulation, SubframeState
from .regression import P_FLOOR, CoefficientTable

log = logging.getLogger(__name__)

DEFAULT_SENTINEL_M = 450.0 * math.sqrt(2.0)


class UndefinedGainError(ValueError):
    pass


@dataclass(frozen=True)
class GbmuConfig:
    step_size: float = 1.0
    pos_threshold: float = 1e-3
    max_iterations: int = 10_000
    interferer_threshold_m: float = 200.0
    min_distance_m: float = 1e-6
    p_floor: float = P_FLOOR
    sentinel_m: float = DEFAULT_SENTINEL_M
    snap_to_road: bool = False
    resnapshot_every: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.pos_threshold <= 0:
            raise ValueError("pos_threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class ReceiverView:
    """One-hop knowledge the transmitter has about a receiver."""

    id: int
    pos: tuple[float, float]
    nsv: int
    main_interferer_pos: tuple[float, float] | None = None

    def interference_distance(self, sentinel_m: float = DEFAULT_SENTINEL_M) -> float:
        if self.main_interferer_pos is None:
            return sentinel_m
        return math.hypot(self.pos[0] - self.main_interferer_pos[0], self.pos[1] - self.main_interferer_pos[1])


@dataclass
class GbmuState:
    tx_pos: np.ndarray
    iteration: int
    utility: float
    distances: np.ndarray
    probabilities: np.ndarray
    raw_probabilities: np.ndarray
    gradients: np.ndarray
    directions: np.ndarray


@dataclass
class GbmuResult:
    final_pos: np.ndarray
    utilities: list[float]
    displacements: list[float]
    positions: np.ndarray
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.displacements)

    @property
    def gain(self) -> float:
        return utility_gain(self.utilities)

    def trace_rows(self) -> list[tuple[int, float, float]]:
        disp = [0.0] + list(self.displacements)
        return list(zip(range(len(self.utilities)), self.utilities, disp))

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration,utility,displacement_m\n")
            for k, u, m in self.trace_rows():
                fh.write(f"{k},{u!r},{m!r}\n")


class _Receivers:
    """Receiver views flattened into arrays with their coefficients."""

    def __init__(self, receivers: Sequence[ReceiverView], table: CoefficientTable, config: GbmuConfig):
        if not receivers:
            raise ValueError("at least one receiver is required")
        self.pos = np.array([r.pos for r in receivers], dtype=float)
        nsv = [r.nsv for r in receivers]
        self.alpha, self.beta, self.gamma = table.coefficients(nsv)
        l = np.array([r.interference_distance(config.sentinel_m) for r in receivers])
        if np.any(l <= 0):
            raise ValueError("receiver co-located with its main interferer")
        self.offset = self.beta * np.log(l) + self.gamma
        self.floor = config.p_floor
        self.min_d = config.min_distance_m

    def evaluate(self, tx_pos: np.ndarray):
        diff = tx_pos - self.pos
        d = np.hypot(diff[:, 0], diff[:, 1])
        safe = np.maximum(d, self.min_d)
        raw = self.alpha * np.log(safe) + self.offset
        p = np.clip(raw, self.floor, 1.0)
        return diff, d, raw, p


def utility(
    tx_pos,
    receivers: Sequence[ReceiverView],
    table: CoefficientTable,
    sentinel_m: float = DEFAULT_SENTINEL_M,
    p_floor: float = P_FLOOR,
) -> float:
    """Sum of log predicted success probabilities over the receivers."""
    rx = _Receivers(receivers, table, GbmuConfig(sentinel_m=sentinel_m, p_floor=p_floor))
    _, _, _, p = rx.evaluate(np.asarray(tx_pos, dtype=float))
    return float(np.log(p).sum())


def gradient(d, p, alpha):
    """Derivative of ln P with respect to the signal distance."""
    out = np.asarray(alpha, dtype=float) / (np.asarray(d, dtype=float) * np.asarray(p, dtype=float))
    return float(out) if out.ndim == 0 else out


def _state(rx: _Receivers, tx_pos: np.ndarray, iteration: int) -> GbmuState:
    diff, d, raw, p = rx.evaluate(tx_pos)
    ok = d >= rx.min_d
    t = np.zeros_like(diff)
    t[ok] = diff[ok] / d[ok, None]
    # a receiver whose prediction is capped at 1 gains nothing from a shorter link
    active = ok & (raw < 1.0)
    g = np.where(active, rx.alpha / (np.where(ok, d, 1.0) * p), 0.0)
    return GbmuState(tx_pos, iteration, float(np.log(p).sum()), d, p, raw, g, t)


def initial_state(tx_pos, receivers: Sequence[ReceiverView], table: CoefficientTable, config: GbmuConfig) -> GbmuState:
    rx = _Receivers(receivers, table, config)
    return _state(rx, np.asarray(tx_pos, dtype=float), 0)


def _move(rx: _Receivers, state: GbmuState, step: float) -> np.ndarray:
    ok = state.distances >= rx.min_d
    if not ok.any():
        return state.tx_pos.copy()
    wanted = state.tx_pos + step * state.directions[ok] * state.gradients[ok, None]
    return wanted.mean(axis=0)


def gbmu_step(
    state: GbmuState, receivers: Sequence[ReceiverView], table: CoefficientTable, config: GbmuConfig
) -> tuple[GbmuState, float]:
    """One GBMU iteration from ``state``.

    Receivers closer than ``config.min_distance_m`` have no defined direction
    and sit out the step. Returns the state at the new position and the
    distance moved.
    """
    rx = _Receivers(receivers, table, config)
    new_pos = _move(rx, state, config.step_size)
    moved = float(np.hypot(*(new_pos - state.tx_pos)))
    return _state(rx, new_pos, state.iteration + 1), moved


def run_gbmu(
    initial_pos,
    receivers: Sequence[ReceiverView],
    table: CoefficientTable,
    config: GbmuConfig = GbmuConfig(),
) -> GbmuResult:
    """Iterate until a step moves less than ``pos_threshold`` or the budget runs out."""
    rx = _Receivers(receivers, table, config)
    state = _state(rx, np.asarray(initial_pos, dtype=float).copy(), 0)
    utilities = [state.utility]
    displacements: list[float] = []
    positions = [state.tx_pos]
    converged = False
    for k in range(1, config.max_iterations + 1):
        new_pos = _move(rx, state, config.step_size)
        moved = float(math.hypot(new_pos[0] - state.tx_pos[0], new_pos[1] - state.tx_pos[1]))
        state = _state(rx, new_pos, k)
        utilities.append(state.utility)
        displacements.append(moved)
        positions.append(new_pos)
        if moved < config.pos_threshold:
            converged = True
            break
    return GbmuResult(state.tx_pos, utilities, displacements, np.array(positions), converged)


def utility_gain(trace: Sequence[float], k: int = -1) -> float:
    """Normalised utility gain ``(U(k) - U(0)) / |U(0)|``."""
    u0 = trace[0]
    if u0 == 0:
        raise UndefinedGainError("initial utility is zero; gain undefined")
    return (trace[k] - u0) / abs(u0)


# --- snapshots -----------------------------------------------------------------


@dataclass
class Snapshot:
    tx_id: int
    tx_pos: tuple[float, float]
    receivers: list[ReceiverView]
    sentinel_m: float = DEFAULT_SENTINEL_M
    subframe: int | None = None

    def to_dict(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "tx_pos": list(self.tx_pos),
            "sentinel_m": self.sentinel_m,
            "subframe": self.subframe,
            "receivers": [
                {
                    "id": r.id,
                    "pos": list(r.pos),
                    "nsv": r.nsv,
                    "main_interferer_pos": None if r.main_interferer_pos is None else list(r.main_interferer_pos),
                }
                for r in self.receivers
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Snapshot":
        receivers = [
            ReceiverView(
                int(r["id"]),
                (float(r["pos"][0]), float(r["pos"][1])),
                int(r["nsv"]),
                None if r.get("main_interferer_pos") is None else tuple(map(float, r["main_interferer_pos"])),
            )
            for r in data["receivers"]
        ]
        return cls(
            int(data["tx_id"]),
            (float(data["tx_pos"][0]), float(data["tx_pos"][1])),
            receivers,
            float(data.get("sentinel_m", DEFAULT_SENTINEL_M)),
            data.get("subframe"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Snapshot":
        return cls.from_dict(json.loads(Path(path).read_text()))


def illustrative_snapshot() -> Snapshot:
    """Seven-node layout: one transmitter, three receivers, three interferers.

    Receiver 3 is farthest and has the closest interferer, receiver 2 is
    nearest with the farthest interferer; every receiver sees all three
    interferers within 200 m.
    """
    interferers = [(40.0, 40.0), (-120.0, 110.0), (10.0, -30.0)]
    receivers = {1: (9.0, 5.0), 2: (-4.0, 5.0), 3: (3.0, -12.0)}
    views = []
    for j, p in receivers.items():
        dists = [math.hypot(p[0] - q[0], p[1] - q[1]) for q in interferers]
        nsv = sum(1 for x in dists if x <= 200.0)
        views.append(ReceiverView(j, p, nsv, interferers[int(np.argmin(dists))]))
    return Snapshot(0, (0.0, 0.0), views)


def receiver_views(
    state: SubframeState,
    node: int,
    interferer_threshold_m: float = 200.0,
    neighborhood_m: float | None = None,
) -> list[ReceiverView]:
    """Receivers of ``node``'s packet in ``state`` with their NSV and main interferer."""
    tx = [int(i) for i in state.tx_idx]
    if node not in tx:
        raise ValueError(f"node {node} is not transmitting in subframe {state.subframe}")
    chan = dict(zip(tx, (int(c) for c in state.tx_channel)))
    interferers = [c for c in tx if c != node and chan[c] == chan[node]]
    here = state.pos[node]
    views = []
    for j in range(len(state.pos)):
        if j in tx:
            continue
        pj = state.pos[j]
        if neighborhood_m is not None and math.hypot(*(pj - here)) > neighborhood_m:
            continue
        dists = [math.hypot(*(state.pos[c] - pj)) for c in interferers]
        nsv = sum(1 for x in dists if x <= interferer_threshold_m)
        main = None if not dists else tuple(map(float, state.pos[interferers[int(np.argmin(dists))]]))
        views.append(ReceiverView(j, (float(pj[0]), float(pj[1])), nsv, main))
    return views


def snapshot_from_state(
    state: SubframeState, node: int, sentinel_m: float, interferer_threshold_m: float = 200.0,
    neighborhood_m: float | None = None,
) -> Snapshot:
    views = receiver_views(state, node, interferer_threshold_m, neighborhood_m)
    return Snapshot(node, (float(state.pos[node, 0]), float(state.pos[node, 1])), views, sentinel_m, state.subframe)


# --- batch ---------------------------------------------------------------------


@dataclass
class RealizationResult:
    seed: int
    n_receivers: int
    initial_pos: tuple[float, float]
    final_pos: tuple[float, float]
    iterations: int
    converged: bool
    utility_initial: float
    utility_final: float
    utility_gain: float
    prr_before: float
    prr_after: float

    @property
    def prr_change(self) -> float:
        return self.prr_after - self.prr_before


@dataclass
class BatchReport:
    realizations: list[RealizationResult] = field(default_factory=list)

    @property
    def gains(self) -> np.ndarray:
        return np.array([r.utility_gain for r in self.realizations], dtype=float)

    @property
    def prr_changes(self) -> np.ndarray:
        return np.array([r.prr_change for r in self.realizations], dtype=float)

    def aggregate(self) -> dict:
        n = len(self.realizations)
        if n == 0:
            return {"n_realizations": 0}
        g = self.gains
        dp = self.prr_changes
        before = np.array([r.prr_before for r in self.realizations])
        rel = np.divide(dp, before, out=np.zeros_like(dp), where=before > 0)
        return {
            "n_realizations": n,
            "effectiveness_rate": float(np.mean(g > 0)),
            "mean_utility_gain": float(np.nanmean(g)) if np.isfinite(g).any() else None,
            "mean_prr_before": float(before.mean()),
            "mean_prr_after": float(before.mean() + dp.mean()),
            "mean_prr_change": float(dp.mean()),
            "mean_prr_relative_change": float(rel.mean()),
            "prr_drops": int(np.sum(dp < 0)),
            "converged": int(sum(r.converged for r in self.realizations)),
        }

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate(),
            "realizations": [{**asdict(r), "prr_change": r.prr_change} for r in self.realizations],
        }

    def to_json(self) -> str:
        return json.dumps(_finite(self.to_dict()), indent=2) + "\n"


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    if isinstance(obj, tuple):
        return [_finite(v) for v in obj]
    return obj


def expected_prr(sim: Simulation, state: SubframeState, node: int, receiver_ids: Sequence[int], tx_pos=None) -> float:
    """Mean success probability of ``node``'s packet over the given receivers.

    With ``tx_pos`` the transmitter is placed there while everything else,
    including fading and the interferer set, stays as in ``state``.
    """
    pos = state.pos.copy()
    if tx_pos is not None:
        pos[node] = tx_pos
    rx = np.asarray(list(receiver_ids), dtype=np.int64)
    b = sim._evaluate(state, pos, rx)
    return float(b.p[b.tx == node].mean())


def run_realization_gbmu(
    scenario: ScenarioConfig,
    seed: int,
    table: CoefficientTable,
    config: GbmuConfig = GbmuConfig(),
    node: int = 0,
    warmup_subframes: int = 0,
    keep_trace: bool = False,
):
    sim = Simulation(scenario, seed)
    state = sim.run_until_transmits(node, warmup_subframes)
    cfg = replace(config, sentinel_m=sim.sentinel_m, interferer_threshold_m=scenario.nsv_threshold_m)
    views = receiver_views(state, node, cfg.interferer_threshold_m, scenario.log_range_m)
    start = state.pos[node].copy()
    if not views:
        res = RealizationResult(seed, 0, tuple(start), tuple(start), 0, True, 0.0, 0.0, float("nan"), float("nan"), float("nan"))
        return (res, None) if keep_trace else res
    ids = [v.id for v in views]
    if cfg.resnapshot_every > 0:
        result = _run_with_resnapshots(sim, state, node, views, table, cfg, scenario)
    else:
        result = run_gbmu(start, views, table, cfg)
    final = result.final_pos
    if cfg.snap_to_road:
        snapped = sim.grid.snap(final)
        final = np.array([snapped.x, snapped.y])
    u_final = utility(final, views, table, cfg.sentinel_m, cfg.p_floor)
    u0 = result.utilities[0]
    try:
        gain = utility_gain([u0, u_final])
    except UndefinedGainError:
        gain = float("nan")
    res = RealizationResult(
        seed=seed,
        n_receivers=len(views),
        initial_pos=(float(start[0]), float(start[1])),
        final_pos=(float(final[0]), float(final[1])),
        iterations=result.iterations,
        converged=result.converged,
        utility_initial=u0,
        utility_final=u_final,
        utility_gain=gain,
        prr_before=expected_prr(sim, state, node, ids),
        prr_after=expected_prr(sim, state, node, ids, final),
    )
    return (res, result) if keep_trace else res


def _run_with_resnapshots(sim, state, node, views, table, cfg, scenario) -> GbmuResult:
    # experimental: the rest of the network keeps moving every `resnapshot_every` iterations
    pos = state.pos[node].copy()
    u0 = utility(pos, views, table, cfg.sentinel_m, cfg.p_floor)
    utilities, displacements, positions = [u0], [], [pos]
    remaining = cfg.max_iterations
    converged = False
    while remaining > 0 and not converged:
        chunk = run_gbmu(pos, views, table, replace(cfg, max_iterations=min(cfg.resnapshot_every, remaining)))
        utilities += chunk.utilities[1:]
        displacements += chunk.displacements
        positions += list(chunk.positions[1:])
        remaining -= chunk.iterations
        converged = chunk.converged
        pos = chunk.final_pos.copy()
        if not converged and remaining > 0:
            sim.pos[node] = pos
            new_state = sim.run_until_transmits(node)
            fresh = receiver_views(new_state, node, cfg.interferer_threshold_m, scenario.log_range_m)
            if fresh:
                views = fresh
            pos = new_state.pos[node].copy()
    return GbmuResult(pos, utilities, displacements, np.array(positions), converged)


def _worker(args):
    return run_realization_gbmu(*args)


def default_workers() -> int:
    cap = os.environ.get("CV2X_SIM_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def run_batch(
    scenario: ScenarioConfig,
    n_realizations: int,
    table: CoefficientTable,
    seeds: Sequence[int] | None = None,
    config: GbmuConfig = GbmuConfig(),
    node: int = 0,
    warmup_subframes: int = 0,
    workers: int | None = None,
) -> BatchReport:
    """Run GBMU on ``n_realizations`` independent initial deployments.

    Realization ``k`` uses ``seeds[k]`` (default ``scenario.seed + k``).
    Results are ordered by realization, independent of the worker count.
    """
    if n_realizations < 1:
        raise ValueError("need at least one realization")
    seeds = list(seeds) if seeds is not None else [scenario.seed + k for k in range(n_realizations)]
    if len(seeds) != n_realizations:
        raise ValueError("one seed per realization is required")
    jobs = [(scenario, s, table, config, node, warmup_subframes) for s in seeds]
    workers = default_workers() if workers is None else workers
    if workers <= 1:
        results = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs))
    return BatchReport(results)
