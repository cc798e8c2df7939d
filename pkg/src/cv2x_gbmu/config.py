"""Scenario configuration (JSON-backed)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .channel import ChannelParams, abstraction_from_config
from .geometry import RoadGrid


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    # road model
    roi_side: float = 450.0
    rows: int = 4
    cols: int = 4
    lane_offset: float = 0.0
    n_vehicles: int = 21
    v_min: float = 5.0
    v_max: float = 15.0
    seed: int = 7
    boundary_policy: str = "uturn"
    tx_power_dbm: float = 26.0
    min_link_distance_m: float = 1.0
    # channel
    carrier_hz: float = 2e9
    noise_dbm: float = -112.45
    noise_figure_db: float = 9.0
    omega: float = 2.0
    d0: float = 1.0
    k_ref: float | None = None
    coherence: float = 1.0
    subframe_s: float = 1e-3
    fading_blocks: int = 8
    abstraction: dict = field(default_factory=lambda: {"kind": "logistic", "midpoint_db": 2.0, "slope_db": 1.5})
    # MAC
    window_subframes: int = 8
    channels: int = 2
    threshold_rsrp_dbm: float = -110.0
    sensing_floor_dbm: float = -107.0
    counter_min: int = 5
    counter_max: int = 15
    keep_probability: float = 0.0
    # traffic and logging
    n_subframes: int = 10240
    arrival_rate: float = 1.0
    nsv_threshold_m: float = 200.0
    log_range_m: float | None = 200.0

    def __post_init__(self):
        problems = []
        if self.n_vehicles < 1:
            problems.append("n_vehicles must be >= 1")
        if not 0 <= self.v_min <= self.v_max:
            problems.append("need 0 <= v_min <= v_max")
        if self.boundary_policy not in ("uturn", "wrap"):
            problems.append("boundary_policy must be 'uturn' or 'wrap'")
        if self.window_subframes < 1 or self.channels < 1:
            problems.append("window_subframes and channels must be >= 1")
        if not 1 <= self.counter_min <= self.counter_max:
            problems.append("need 1 <= counter_min <= counter_max")
        if not 0.0 <= self.keep_probability <= 1.0:
            problems.append("keep_probability must be in [0, 1]")
        if not 0.0 <= self.arrival_rate <= 1.0:
            problems.append("arrival_rate must be in [0, 1]")
        if self.n_subframes < 1:
            problems.append("n_subframes must be >= 1")
        if self.nsv_threshold_m <= 0:
            problems.append("nsv_threshold_m must be positive")
        if self.min_link_distance_m <= 0:
            problems.append("min_link_distance_m must be positive")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def grid(self) -> RoadGrid:
        return RoadGrid(self.roi_side, self.rows, self.cols, self.lane_offset)

    @property
    def channel(self) -> ChannelParams:
        return ChannelParams(
            k_ref=self.k_ref,
            d0=self.d0,
            omega=self.omega,
            carrier_hz=self.carrier_hz,
            noise_dbm=self.noise_dbm,
            noise_figure_db=self.noise_figure_db,
            coherence=self.coherence,
            subframe_s=self.subframe_s,
            fading_blocks=self.fading_blocks,
        )

    def link_abstraction(self, base_dir: Path | None = None):
        return abstraction_from_config(self.abstraction, base_dir)

    @property
    def period_subframes(self) -> int:
        return self.window_subframes

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise FileNotFoundError(f"config file not found: {path}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def replace(self, **changes) -> "ScenarioConfig":
        data = self.to_dict()
        data.update(changes)
        return ScenarioConfig.from_dict(data)
