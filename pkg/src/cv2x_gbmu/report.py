"""Plot-ready data for the report command."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .regression import CoefficientTable, predict_p, predict_raw


def surface_grid(
    table: CoefficientTable,
    nsv: int,
    d_range: tuple[float, float] = (1.0, 400.0),
    l_range: tuple[float, float] = (1.0, 400.0),
    points: int = 40,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Predicted success probability on a (d, l) grid; rows index l, columns d."""
    d = np.linspace(*d_range, points)
    l = np.linspace(*l_range, points)
    dd, ll = np.meshgrid(d, l)
    return dd, ll, predict_p(table, nsv, dd, ll), predict_raw(table, nsv, dd, ll)


def write_surface(table: CoefficientTable, path, nsvs: Iterable[int] | None = None, points: int = 40) -> dict:
    grids = {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nsv", "d_m", "l_m", "p", "p_raw"])
        for k in nsvs if nsvs is not None else range(table.nsv_max + 1):
            if not table.rows[k].fitted:
                continue
            dd, ll, p, raw = surface_grid(table, k, points=points)
            grids[k] = (dd, ll, p)
            for di, li, pi, ri in zip(dd.ravel(), ll.ravel(), p.ravel(), raw.ravel()):
                w.writerow([k, repr(float(di)), repr(float(li)), repr(float(pi)), repr(float(ri))])
    return grids


def read_trace(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {
        "iteration": np.array([int(r["iteration"]) for r in rows]),
        "utility": np.array([float(r["utility"]) for r in rows]),
        "displacement_m": np.array([float(r["displacement_m"]) for r in rows]),
    }


def gain_curve(utilities: np.ndarray) -> np.ndarray:
    u0 = utilities[0]
    if u0 == 0:
        return np.full_like(utilities, np.nan, dtype=float)
    return (utilities - u0) / abs(u0)


def write_convergence(traces: dict[str, dict[str, np.ndarray]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "iteration", "utility", "gain", "displacement_m"])
        for name, tr in traces.items():
            gain = gain_curve(tr["utility"])
            for k, u, g, m in zip(tr["iteration"], tr["utility"], gain, tr["displacement_m"]):
                w.writerow([name, int(k), repr(float(u)), repr(float(g)), repr(float(m))])


def histogram_rows(name: str, values: Sequence[float], bins: int = 20) -> list[tuple]:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return []
    counts, edges = np.histogram(v, bins=bins)
    return [(name, float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]


def write_histograms(columns: dict[str, Sequence[float]], path, bins: int = 20) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "bin_lo", "bin_hi", "count"])
        for name, values in columns.items():
            for row in histogram_rows(name, values, bins):
                w.writerow([row[0], repr(row[1]), repr(row[2]), row[3]])


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
