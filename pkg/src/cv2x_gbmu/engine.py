"""Network-level simulation: traffic, SPS scheduling, SINR and reception logging."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import pandas as pd

from . import channel as ch
from . import sps
from .config import ScenarioConfig
from .geometry import advance_arrays, distance, drop_vehicles, vehicles_to_arrays

LOG_COLUMNS = ("tx_id", "rx_id", "subframe", "d_m", "l_m", "nsv", "sinr_db", "p_success", "received")
_INT_COLUMNS = ("tx_id", "rx_id", "subframe", "nsv")


class UndefinedPrrError(ValueError):
    pass


@dataclass(frozen=True)
class LinkSample:
    tx_id: int
    rx_id: int
    subframe: int
    signal_distance_m: float
    main_interferer_distance_m: float
    nsv: int
    sinr_db: float
    p_success: float
    received: bool


class SampleLog:
    """Column-oriented reception log; one row per (transmitter, receiver) link."""

    def __init__(self, columns: dict[str, np.ndarray] | None = None):
        columns = columns or {}
        self.columns = {}
        for name in LOG_COLUMNS:
            dtype = bool if name == "received" else (np.int64 if name in _INT_COLUMNS else float)
            self.columns[name] = np.asarray(columns.get(name, ()), dtype=dtype)
        n = {len(v) for v in self.columns.values()}
        if len(n) > 1:
            raise ValueError("sample log columns differ in length")

    def __len__(self) -> int:
        return len(self.columns["tx_id"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __iter__(self) -> Iterator[LinkSample]:
        c = self.columns
        for k in range(len(self)):
            yield LinkSample(
                int(c["tx_id"][k]), int(c["rx_id"][k]), int(c["subframe"][k]),
                float(c["d_m"][k]), float(c["l_m"][k]), int(c["nsv"][k]),
                float(c["sinr_db"][k]), float(c["p_success"][k]), bool(c["received"][k]),
            )

    @classmethod
    def from_samples(cls, samples: Iterable[LinkSample]) -> "SampleLog":
        rows = [
            (s.tx_id, s.rx_id, s.subframe, s.signal_distance_m, s.main_interferer_distance_m,
             s.nsv, s.sinr_db, s.p_success, s.received)
            for s in samples
        ]
        cols = list(zip(*rows)) if rows else [()] * len(LOG_COLUMNS)
        return cls(dict(zip(LOG_COLUMNS, cols)))

    @classmethod
    def concat(cls, logs: Sequence["SampleLog"]) -> "SampleLog":
        if not logs:
            return cls()
        return cls({k: np.concatenate([lg.columns[k] for lg in logs]) for k in LOG_COLUMNS})

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.columns)
        df["received"] = df["received"].astype(int)
        return df

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path) -> "SampleLog":
        df = pd.read_csv(path, float_precision="round_trip")
        missing = [c for c in LOG_COLUMNS if c not in df.columns]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        return cls({c: df[c].to_numpy() for c in LOG_COLUMNS})


@dataclass
class PrrReport:
    per_node: dict[int, float]
    aggregated: float
    successes: dict[int, int] = field(default_factory=dict)
    eligible: dict[int, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "aggregated_prr": self.aggregated,
                "nodes": [
                    {"id": k, "prr": self.per_node[k], "successes": self.successes[k], "eligible": self.eligible[k]}
                    for k in sorted(self.per_node)
                ],
            },
            indent=2,
        )


def nsv_count(receiver, co_resource_transmitters: Sequence, threshold_m: float = 200.0) -> int:
    """Co-resource interferers within ``threshold_m`` of the receiver (inclusive)."""
    if threshold_m <= 0:
        raise ValueError("threshold must be positive")
    rx = getattr(receiver, "pos", receiver)
    return sum(1 for t in co_resource_transmitters if distance(getattr(t, "pos", t), rx) <= threshold_m)


def main_interferer_distance(receiver, co_resource_transmitters: Sequence, sentinel_m: float) -> float:
    rx = getattr(receiver, "pos", receiver)
    return min((distance(getattr(t, "pos", t), rx) for t in co_resource_transmitters), default=sentinel_m)


def compute_prr(log: SampleLog, node: int) -> float:
    mask = log["tx_id"] == node
    n = int(mask.sum())
    if n == 0:
        raise UndefinedPrrError(f"node {node} never transmitted")
    return float(log["received"][mask].sum()) / n


def prr_report(log: SampleLog) -> PrrReport:
    tx = log["tx_id"]
    nodes = np.unique(tx)
    succ = {int(k): int(log["received"][tx == k].sum()) for k in nodes}
    elig = {int(k): int((tx == k).sum()) for k in nodes}
    per = {k: succ[k] / elig[k] for k in succ}
    total = sum(elig.values())
    agg = sum(succ.values()) / total if total else float("nan")
    return PrrReport(per, agg, succ, elig)


@dataclass
class LinkBatch:
    """All (transmitter, receiver) links of one subframe, as parallel arrays."""

    tx: np.ndarray
    rx: np.ndarray
    d: np.ndarray
    l: np.ndarray
    nsv: np.ndarray
    signal_w: np.ndarray
    interference_w: np.ndarray
    sinr_db: np.ndarray
    p: np.ndarray


def evaluate_links(
    pos: np.ndarray,
    tx_idx: np.ndarray,
    tx_channel: np.ndarray,
    fading: np.ndarray,
    tx_power_w: float,
    params: ch.ChannelParams,
    abstraction,
    nsv_threshold_m: float,
    sentinel_m: float,
    rx_idx: np.ndarray | None = None,
    min_distance_m: float = 1.0,
) -> LinkBatch:
    """SINR and success probability for every transmitter-receiver pair.

    Interference at a receiver comes only from the other transmitters on the
    same channel of this subframe. ``rx_idx`` defaults to every vehicle not
    transmitting (half-duplex).
    """
    tx_idx = np.asarray(tx_idx, dtype=np.int64)
    tx_channel = np.asarray(tx_channel)
    if rx_idx is None:
        rx_idx = np.setdiff1d(np.arange(len(pos)), tx_idx)
    rx_idx = np.asarray(rx_idx, dtype=np.int64)
    diff = pos[tx_idx][:, None, :] - pos[rx_idx][None, :, :]
    dist = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), min_distance_m)
    power = tx_power_w * ch.pathloss(params, dist) * np.abs(fading[np.ix_(tx_idx, rx_idx)]) ** 2
    same = (tx_channel[:, None] == tx_channel[None, :]) & ~np.eye(len(tx_idx), dtype=bool)
    interference = same.astype(float) @ power
    nsv = same.astype(np.int64) @ (dist <= nsv_threshold_m).astype(np.int64)
    masked = np.where(same[:, :, None], dist[None, :, :], np.inf)
    l = masked.min(axis=1) if len(tx_idx) else np.empty((0, len(rx_idx)))
    l = np.where(np.isfinite(l), l, sentinel_m)
    s_db = ch.sinr_db(power, interference, params)
    p = np.asarray(abstraction(s_db), dtype=float)
    shape = dist.shape
    return LinkBatch(
        tx=np.broadcast_to(tx_idx[:, None], shape).ravel(),
        rx=np.broadcast_to(rx_idx[None, :], shape).ravel(),
        d=dist.ravel(),
        l=l.ravel(),
        nsv=nsv.ravel(),
        signal_w=power.ravel(),
        interference_w=interference.ravel(),
        sinr_db=np.asarray(s_db).ravel(),
        p=p.ravel(),
    )


@dataclass
class SubframeState:
    """What the radio environment looks like in one subframe."""

    subframe: int
    pos: np.ndarray
    vel: np.ndarray
    fading: np.ndarray
    tx_idx: np.ndarray
    tx_channel: np.ndarray


class Simulation:
    """Single realization of the stage-1 network simulation.

    Random streams for placement, mobility, fading, MAC and traffic are
    spawned independently from the seed, so changing one mechanism leaves the
    others' draws untouched.
    """

    def __init__(self, config: ScenarioConfig, seed: int | None = None, base_dir: Path | None = None):
        self.config = config
        self.seed = config.seed if seed is None else seed
        streams = np.random.SeedSequence(self.seed).spawn(6)
        self._rng_place, self._rng_move, self._rng_fade, self._rng_mac, self._rng_traffic, self._rng_rx = (
            np.random.default_rng(s) for s in streams
        )
        self.grid = config.grid
        self.params = config.channel
        self.abstraction = config.link_abstraction(base_dir)
        self.tx_power_w = float(ch.dbm_to_watts(config.tx_power_dbm))
        self.sentinel_m = self.grid.diagonal
        vehicles = drop_vehicles(
            self.grid, config.n_vehicles, self._rng_place, config.v_min, config.v_max, config.tx_power_dbm
        )
        self.pos, self.vel = vehicles_to_arrays(vehicles)
        n = config.n_vehicles
        self.blocks = ch.draw_channel(self._rng_fade, np.zeros((n, n, self.params.fading_blocks)))
        self.fading = ch.block_coefficient(self.blocks)
        self.t = 0
        self.period = config.period_subframes
        self.resources: list[sps.Resource | None] = [None] * n
        self.pending: list[sps.Resource | None] = [None] * n
        self.states: list[sps.SpsState] = []
        self.has_packet = np.zeros(n, dtype=bool)
        self._initial_allocation()

    def _initial_allocation(self) -> None:
        cfg = self.config
        for i in self._rng_mac.permutation(cfg.n_vehicles):
            self.resources[i] = self._reselect(int(i))
        self.states = [
            sps.SpsState(self.resources[i], sps.draw_counter(self._rng_mac, cfg.counter_min, cfg.counter_max), self.period)
            for i in range(cfg.n_vehicles)
        ]

    def sensing_table(self, node: int) -> list[sps.SensingRecord]:
        cfg = self.config
        powers: dict[sps.Resource, list[float]] = {}
        for j, res in enumerate(self.resources):
            if j == node or res is None:
                continue
            d = max(float(np.hypot(*(self.pos[j] - self.pos[node]))), cfg.min_link_distance_m)
            p = self.tx_power_w * ch.pathloss(self.params, d) * abs(self.fading[j, node]) ** 2
            powers.setdefault(res, []).append(p)
        records = sps.measure(powers, self.params.noise_w, cfg.sensing_floor_dbm, cfg.window_subframes, cfg.channels)
        return sps.sense(records, cfg.window_subframes, cfg.channels)

    def _reselect(self, node: int) -> sps.Resource:
        return sps.sps_select(self.sensing_table(node), self.config.threshold_rsrp_dbm, self._rng_mac)

    def _advance_world(self) -> None:
        cfg = self.config
        self.pos, self.vel = advance_arrays(
            self.pos, self.vel, cfg.subframe_s, self.grid, self._rng_move, cfg.boundary_policy
        )
        dv = self.vel[:, None, :] - self.vel[None, :, :]
        dop = ch.doppler(self.params, np.hypot(dv[..., 0], dv[..., 1]))
        self.blocks = ch.draw_channel(self._rng_fade, dop[..., None], self.blocks, cfg.subframe_s, cfg.coherence)
        self.fading = ch.block_coefficient(self.blocks)

    def step(self, force: Sequence[int] = ()) -> SubframeState:
        """Advance one subframe and return the transmitting set.

        ``force`` lists vehicles that get a packet this period regardless of
        the arrival draw.
        """
        cfg = self.config
        self._advance_world()
        slot = self.t % self.period
        if slot == 0:
            for i, res in enumerate(self.pending):
                if res is not None:
                    self.resources[i] = res
                    self.states[i] = sps.SpsState(res, self.states[i].reselection_counter, self.period)
                    self.pending[i] = None
            self.has_packet = self._rng_traffic.random(cfg.n_vehicles) < cfg.arrival_rate
        for i in force:
            self.has_packet[i] = True
        tx = np.array(
            [i for i in range(cfg.n_vehicles) if self.has_packet[i] and self.resources[i].subframe == slot],
            dtype=np.int64,
        )
        state = SubframeState(
            self.t, self.pos.copy(), self.vel.copy(), self.fading.copy(), tx,
            np.array([self.resources[i].channel for i in tx], dtype=np.int64),
        )
        for i in tx:
            self.states[i], reselect = sps.tick_sps(
                self.states[i], self._rng_mac, cfg.counter_min, cfg.counter_max, cfg.keep_probability
            )
            if reselect:
                self.pending[i] = self._reselect(int(i))
        self.t += 1
        return state

    def links(self, state: SubframeState) -> LinkBatch:
        rx = np.setdiff1d(np.arange(self.config.n_vehicles), state.tx_idx)
        batch = self._evaluate(state, state.pos, rx)
        if self.config.log_range_m is None:
            return batch
        keep = batch.d <= self.config.log_range_m
        return LinkBatch(*(getattr(batch, f)[keep] for f in LinkBatch.__dataclass_fields__))

    def _evaluate(self, state: SubframeState, pos: np.ndarray, rx: np.ndarray) -> LinkBatch:
        return evaluate_links(
            pos, state.tx_idx, state.tx_channel, state.fading, self.tx_power_w, self.params,
            self.abstraction, self.config.nsv_threshold_m, self.sentinel_m, rx, self.config.min_link_distance_m,
        )

    def run_until_transmits(self, node: int, warmup_subframes: int = 0) -> SubframeState:
        """Run past ``warmup_subframes`` then until ``node`` transmits."""
        for _ in range(warmup_subframes):
            self.step()
        for _ in range(2 * self.period):
            state = self.step(force=(node,))
            if node in state.tx_idx:
                return state
        raise RuntimeError(f"node {node} did not transmit")  # unreachable with a valid resource


def run_realization(
    config: ScenarioConfig, seed: int | None = None, base_dir: Path | None = None
) -> tuple[SampleLog, PrrReport]:
    """Simulate ``config.n_subframes`` subframes and log every eligible link."""
    sim = Simulation(config, seed, base_dir)
    chunks: dict[str, list[np.ndarray]] = {k: [] for k in LOG_COLUMNS}
    for _ in range(config.n_subframes):
        state = sim.step()
        if len(state.tx_idx) == 0:
            continue
        b = sim.links(state)
        if len(b.tx) == 0:
            continue
        received = sim._rng_rx.random(len(b.p)) < b.p
        for name, arr in zip(
            LOG_COLUMNS,
            (b.tx, b.rx, np.full(len(b.tx), state.subframe), b.d, b.l, b.nsv, b.sinr_db, b.p, received),
        ):
            chunks[name].append(arr)
    log = SampleLog({k: (np.concatenate(v) if v else np.empty(0)) for k, v in chunks.items()})
    return log, prr_report(log)
