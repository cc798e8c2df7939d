"""NSV-bucketed two-distance model: fitting, prediction and coefficient I/O.

The model predicts a link's success probability from the signal distance
``d`` and the main-interferer distance ``l``::

    P = alpha * ln(d) + beta * ln(l) + gamma

with one coefficient triple per number of surrounding interferers (NSV).
Logarithms are natural throughout.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

P_FLOOR = 1e-3
MIN_INSTANCES = 3
TABLE_COLUMNS = ("nsv", "alpha", "beta", "gamma", "r_square", "n_instances")
# beyond this the 2x2 centered normal matrix is treated as singular
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class CoefficientRow:
    nsv: int
    alpha: float
    beta: float
    gamma: float
    r_square: float
    n_instances: int

    @property
    def fitted(self) -> bool:
        return not (math.isnan(self.alpha) or math.isnan(self.beta) or math.isnan(self.gamma))

    def same_as(self, other: "CoefficientRow") -> bool:
        a, b = asdict(self), asdict(other)
        return all(
            (isinstance(a[k], float) and math.isnan(a[k]) and math.isnan(b[k])) or a[k] == b[k] for k in a
        )


@dataclass
class CoefficientTable:
    rows: list[CoefficientRow]
    diagnostics: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        keys = [r.nsv for r in self.rows]
        if keys != list(range(len(keys))):
            raise ValueError(f"NSV keys must be contiguous from 0, got {keys}")
        if not self.rows:
            raise ValueError("empty coefficient table")

    @property
    def nsv_max(self) -> int:
        return len(self.rows) - 1

    def row(self, nsv: int) -> CoefficientRow:
        """Row used for ``nsv``.

        NSV above the table clamps to the last row. An unfitted row falls back
        to the nearest fitted row, preferring lower NSV.
        """
        k = min(max(int(nsv), 0), self.nsv_max)
        if self.rows[k].fitted:
            return self.rows[k]
        order = list(range(k - 1, -1, -1)) + list(range(k + 1, self.nsv_max + 1))
        for j in order:
            if self.rows[j].fitted:
                warnings.warn(f"no fitted coefficients for NSV={k}; using NSV={j}", stacklevel=2)
                return self.rows[j]
        raise ValueError("coefficient table has no fitted rows")

    def same_as(self, other: "CoefficientTable") -> bool:
        return len(self.rows) == len(other.rows) and all(a.same_as(b) for a, b in zip(self.rows, other.rows))

    def coefficients(self, nsv) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-entry (alpha, beta, gamma) arrays for a sequence of NSV values."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            picked = {k: self.row(k) for k in set(int(v) for v in np.atleast_1d(nsv))}
        rows = [picked[int(v)] for v in np.atleast_1d(nsv)]
        return (
            np.array([r.alpha for r in rows]),
            np.array([r.beta for r in rows]),
            np.array([r.gamma for r in rows]),
        )


def _as_columns(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if hasattr(samples, "columns") and isinstance(getattr(samples, "columns"), dict):
        c = samples.columns
        return c["d_m"], c["l_m"], c["nsv"], c["p_success"]
    rows = list(samples)
    if not rows:
        return (np.empty(0),) * 4
    return (
        np.array([s.signal_distance_m for s in rows], dtype=float),
        np.array([s.main_interferer_distance_m for s in rows], dtype=float),
        np.array([s.nsv for s in rows], dtype=np.int64),
        np.array([s.p_success for s in rows], dtype=float),
    )


def fit_bucket(d: np.ndarray, l: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float, str | None]:
    """Least squares of ``y`` on ``(ln d, ln l, 1)`` via the normal equations.

    The intercept is eliminated by centering, which leaves a 2x2 system with
    the same solution and better conditioning. Returns
    ``(alpha, beta, gamma, r_square, diagnostic)``; a non-None diagnostic
    means the bucket could not be fitted.
    """
    n = len(y)
    nan = float("nan")
    if n < MIN_INSTANCES:
        return nan, nan, nan, nan, f"only {n} sample(s), need {MIN_INSTANCES}"
    if np.any(d <= 0) or np.any(l <= 0):
        raise ValueError("distances must be positive")
    x = np.column_stack([np.log(d), np.log(l)])
    xm, ym = x.mean(axis=0), y.mean()
    xc = x - xm
    # a constant target must centre to exact zeros; y - mean(y) can leave ulp residue
    yc = np.zeros_like(y) if np.ptp(y) == 0 else y - ym
    a = xc.T @ xc
    b = xc.T @ yc
    if np.linalg.cond(a) > _COND_LIMIT:
        return nan, nan, nan, nan, "singular normal equations (a regressor is constant or collinear)"
    alpha, beta = np.linalg.solve(a, b)
    gamma = ym - alpha * xm[0] - beta * xm[1]
    resid = y - (alpha * x[:, 0] + beta * x[:, 1] + gamma)
    ss_res = float(resid @ resid)
    ss_tot = float(yc @ yc)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(alpha), float(beta), float(gamma), float(r2), None


def fit(samples, nsv_max: int = 6) -> CoefficientTable:
    """Fit one coefficient row per NSV bucket 0..nsv_max.

    Samples with NSV above ``nsv_max`` are left out of the fit.
    """
    d, l, nsv, y = _as_columns(samples)
    rows, diag = [], {}
    for k in range(nsv_max + 1):
        m = nsv == k
        alpha, beta, gamma, r2, why = fit_bucket(d[m], l[m], y[m])
        if why is not None:
            diag[k] = why
            log.info("NSV=%d not fitted: %s", k, why)
        rows.append(CoefficientRow(k, alpha, beta, gamma, r2, int(m.sum())))
    return CoefficientTable(rows, diag)


def predict_raw(table: CoefficientTable, nsv, d, l):
    d = np.asarray(d, dtype=float)
    l = np.asarray(l, dtype=float)
    if np.any(d <= 0) or np.any(l <= 0):
        raise ValueError("distances must be positive")
    if np.ndim(nsv) == 0:
        r = table.row(int(nsv))
        alpha, beta, gamma = r.alpha, r.beta, r.gamma
    else:
        alpha, beta, gamma = table.coefficients(nsv)
    out = alpha * np.log(d) + beta * np.log(l) + gamma
    return float(out) if np.ndim(out) == 0 else out


def predict_p(table: CoefficientTable, nsv, d, l, floor: float = P_FLOOR):
    out = np.clip(predict_raw(table, nsv, d, l), floor, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def save_table(table: CoefficientTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in table.rows:
            w.writerow([r.nsv, repr(r.alpha), repr(r.beta), repr(r.gamma), repr(r.r_square), r.n_instances])


def _parse_table(lines: Iterable[str], source: str) -> CoefficientTable:
    reader = csv.DictReader(lines)
    header = reader.fieldnames or []
    for col in TABLE_COLUMNS:
        if col not in header:
            raise ValueError(f"{source}: missing column {col!r}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        try:
            rows.append(
                CoefficientRow(
                    int(rec["nsv"]), float(rec["alpha"]), float(rec["beta"]), float(rec["gamma"]),
                    float(rec["r_square"]), int(rec["n_instances"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{source}:{lineno}: malformed row ({exc})") from exc
    rows.sort(key=lambda r: r.nsv)
    return CoefficientTable(rows)


def load_table(path) -> CoefficientTable:
    with open(path, newline="") as fh:
        return _parse_table(fh, str(path))


def reference_table() -> CoefficientTable:
    """Reference NSV 0..6 coefficients with their R-square and sample counts."""
    text = resources.files("cv2x_gbmu.data").joinpath("reference_coefficients.csv").read_text()
    return _parse_table(text.splitlines(), "reference_coefficients.csv")


def fit_report(table: CoefficientTable) -> dict:
    return {
        "log_base": "e",
        "buckets": [
            {
                "nsv": r.nsv,
                "instances": r.n_instances,
                "r_square": None if math.isnan(r.r_square) else r.r_square,
                "fitted": r.fitted,
                **({"diagnostic": table.diagnostics[r.nsv]} if r.nsv in table.diagnostics else {}),
            }
            for r in table.rows
        ],
    }


def write_fit_report(table: CoefficientTable, path) -> None:
    Path(path).write_text(json.dumps(fit_report(table), indent=2) + "\n")
