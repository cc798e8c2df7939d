"""Propagation, fading, SINR and the SINR-to-success-probability abstraction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .geometry import distance

SPEED_OF_LIGHT = 3e8


class DegenerateGeometryError(ValueError):
    """Raised when a link has zero length."""


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(w):
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(w) + 30.0


def to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ChannelParams:
    """Large-scale propagation and receiver-noise parameters.

    ``k_ref`` defaults to the free-space Friis constant at ``d0`` for the
    configured carrier. ``coherence`` scales how fast fading decorrelates:
    the per-subframe correlation is ``exp(-doppler * subframe_s / coherence)``.
    ``fading_blocks`` is the number of independently faded frequency blocks
    the packet spans; the link coefficient is their RMS, so 1 gives plain
    Rayleigh fading.
    """

    k_ref: float | None = None
    d0: float = 1.0
    omega: float = 2.0
    carrier_hz: float = 2e9
    noise_dbm: float = -112.45
    noise_figure_db: float = 9.0
    coherence: float = 1.0
    subframe_s: float = 1e-3
    fading_blocks: int = 8

    def __post_init__(self):
        if self.fading_blocks < 1:
            raise ValueError("fading_blocks must be >= 1")
        if self.omega < 2:
            raise ValueError("pathloss exponent must be >= 2")
        if self.d0 <= 0:
            raise ValueError("reference distance must be positive")
        if self.k_ref is None:
            wavelength = SPEED_OF_LIGHT / self.carrier_hz
            object.__setattr__(self, "k_ref", (wavelength / (4 * math.pi * self.d0)) ** 2)

    @property
    def noise_w(self) -> float:
        return float(dbm_to_watts(self.noise_dbm + self.noise_figure_db))


def pathloss(params: ChannelParams, d):
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0):
        raise DegenerateGeometryError("pathloss undefined for zero distance; separate co-located nodes")
    g = params.k_ref * (params.d0 / d_arr) ** params.omega
    return float(g) if g.ndim == 0 else g


def doppler(params: ChannelParams, v_rel):
    if np.any(np.asarray(v_rel) < 0):
        raise ValueError("relative speed must be non-negative")
    out = 2.0 * params.carrier_hz * np.asarray(v_rel, dtype=float) / SPEED_OF_LIGHT
    return float(out) if out.ndim == 0 else out


def correlation(doppler_hz, dt_s: float = 1e-3, coherence: float = 1.0):
    return np.exp(-np.asarray(doppler_hz, dtype=float) * dt_s / coherence)


def draw_channel(
    rng: np.random.Generator,
    doppler_hz=0.0,
    previous=None,
    dt_s: float = 1e-3,
    coherence: float = 1.0,
):
    """Draw the complex fading gain for the next subframe.

    Rayleigh amplitude with unit mean-square. Successive draws follow a
    first-order autoregression whose correlation decays with Doppler, so
    zero Doppler freezes the channel and large Doppler makes draws independent.
    The channel coefficient used in power computations is ``abs(h)``.
    """
    shape = np.shape(doppler_hz) if previous is None else np.shape(previous)
    w = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    if previous is None:
        return complex(w) if w.ndim == 0 else w
    rho = correlation(doppler_hz, dt_s, coherence)
    h = rho * np.asarray(previous) + np.sqrt(1.0 - rho**2) * w
    return complex(h) if np.ndim(h) == 0 else h


def block_coefficient(blocks):
    """Mean-square average over the trailing block axis, as an amplitude."""
    return np.sqrt(np.mean(np.abs(blocks) ** 2, axis=-1))


def rx_power(tx_power_dbm, gain, ch=1.0):
    if np.any(np.asarray(gain) < 0):
        raise ValueError("gain must be non-negative")
    out = dbm_to_watts(tx_power_dbm) * np.asarray(gain) * np.abs(ch) ** 2
    return float(out) if np.ndim(out) == 0 else out


def total_interference(
    receiver,
    transmitters: Sequence,
    params: ChannelParams,
    channels: Sequence,
    resources: Sequence | None = None,
    resource=None,
) -> float:
    """Sum the power received at ``receiver`` from interfering transmitters.

    ``transmitters`` must not contain the intended transmitter. When
    ``resources`` is given, only transmitters whose resource equals
    ``resource`` contribute; transmissions on other channels of the same
    subframe do not interfere.
    """
    rx_pos = getattr(receiver, "pos", receiver)
    total = 0.0
    for k, (tx, ch) in enumerate(zip(transmitters, channels)):
        if resources is not None and resources[k] != resource:
            continue
        g = pathloss(params, distance(tx.pos, rx_pos))
        total += rx_power(tx.tx_power_dbm, g, ch)
    return total


def sinr(signal_w, interference_w, params: ChannelParams):
    if np.any(np.asarray(signal_w) < 0):
        raise ValueError("signal power must be non-negative")
    out = np.asarray(signal_w, dtype=float) / (np.asarray(interference_w, dtype=float) + params.noise_w)
    return float(out) if out.ndim == 0 else out


def sinr_db(signal_w, interference_w, params: ChannelParams):
    out = to_db(sinr(signal_w, interference_w, params))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class LogisticCurve:
    midpoint_db: float = 2.0
    slope_db: float = 1.5

    def __post_init__(self):
        if self.slope_db <= 0:
            raise ValueError("logistic slope must be positive")

    def __call__(self, sinr_db):
        out = expit((np.asarray(sinr_db, dtype=float) - self.midpoint_db) / self.slope_db)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TableCurve:
    """Piecewise-linear SINR (dB) to success-probability curve.

    Values outside the table saturate at the end points.
    """

    sinr_db: tuple[float, ...]
    p_success: tuple[float, ...] = field(default=())

    def __post_init__(self):
        x = np.asarray(self.sinr_db, dtype=float)
        p = np.asarray(self.p_success, dtype=float)
        if x.size == 0 or x.shape != p.shape:
            raise ValueError("table curve needs matching, non-empty columns")
        if np.any(np.diff(x) <= 0):
            raise ValueError("sinr_db must be strictly increasing")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("p_success must lie in [0, 1]")
        if np.any(np.diff(p) < 0):
            raise ValueError("p_success must be non-decreasing in SINR")

    @classmethod
    def from_csv(cls, path) -> "TableCurve":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"sinr_db", "p_success"} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
            rows = [(float(r["sinr_db"]), float(r["p_success"])) for r in reader]
        return cls(tuple(r[0] for r in rows), tuple(r[1] for r in rows))

    def __call__(self, sinr_db):
        x = np.asarray(sinr_db, dtype=float)
        # np.interp returns nan for nan input; +-inf saturate at the ends
        out = np.interp(np.clip(x, self.sinr_db[0], self.sinr_db[-1]), self.sinr_db, self.p_success)
        return float(out) if out.ndim == 0 else out


LinkAbstraction = LogisticCurve | TableCurve


def success_probability(abstraction, sinr_db):
    return abstraction(sinr_db)


def abstraction_from_config(spec: dict | None, base_dir: Path | None = None):
    spec = dict(spec or {})
    kind = spec.pop("kind", "logistic")
    if kind == "logistic":
        return LogisticCurve(**spec)
    if kind == "table":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return TableCurve.from_csv(path)
    raise ValueError(f"unknown link abstraction kind {kind!r}")
