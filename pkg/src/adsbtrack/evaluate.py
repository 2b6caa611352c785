"""Position error metrics and method comparison tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ErrorReport:
    rmse_x: float
    rmse_y: float
    rmse_z: float
    rmse_total: float
    mae_trace: np.ndarray
    relative_reduction: float | None = None

    def as_dict(self) -> dict:
        d = {"rmse_x": self.rmse_x, "rmse_y": self.rmse_y, "rmse_z": self.rmse_z,
             "rmse_total": self.rmse_total, "mae_mean": float(np.mean(self.mae_trace)),
             "mae_peak": float(np.max(self.mae_trace))}
        if self.relative_reduction is not None:
            d["reduction_pct"] = self.relative_reduction
        return d


def _position_errors(estimates, truth) -> np.ndarray:
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape[0] != tru.shape[0]:
        raise ValueError(f"length mismatch: {est.shape[0]} estimates vs {tru.shape[0]} truth rows")
    if est.shape[0] == 0:
        raise ValueError("need at least one sample")
    return est[:, :3] - tru[:, :3]


def mae_trace(estimates, truth) -> np.ndarray:
    """Per-step (|dx| + |dy| + |dz|) / 3."""
    return np.abs(_position_errors(estimates, truth)).sum(axis=1) / 3.0


def rmse(estimates, truth) -> ErrorReport:
    """Per-axis RMSE (1/N) and total RMSE sqrt(sum of squared 3-D errors / 3N)."""
    err = _position_errors(estimates, truth)
    n = err.shape[0]
    per_axis = np.sqrt(np.sum(err**2, axis=0) / n)
    total = float(np.sqrt(np.sum(err**2) / (3.0 * n)))
    return ErrorReport(float(per_axis[0]), float(per_axis[1]), float(per_axis[2]), total,
                       np.abs(err).sum(axis=1) / 3.0)


def reduction(value: float, baseline: float) -> float:
    return 100.0 * (1.0 - value / baseline)


def compare(reports: dict[str, ErrorReport], baseline: str) -> dict[str, float]:
    """Percent reduction of each method's total RMSE relative to ``baseline``."""
    if baseline not in reports:
        raise KeyError(f"baseline {baseline!r} not among {sorted(reports)}")
    base = reports[baseline].rmse_total
    out = {}
    for name, rep in reports.items():
        rep.relative_reduction = reduction(rep.rmse_total, base)
        out[name] = rep.relative_reduction
    return out


def format_table(reports: dict[str, ErrorReport], baseline: str) -> str:
    compare(reports, baseline)
    lines = [f"{'method':<20}{'rmse_x':>12}{'rmse_y':>12}{'rmse_z':>12}{'rmse_total':>12}"
             f"{'vs ' + baseline:>16}"]
    for name, r in reports.items():
        lines.append(f"{name:<20}{r.rmse_x:12.4f}{r.rmse_y:12.4f}{r.rmse_z:12.4f}"
                     f"{r.rmse_total:12.4f}{r.relative_reduction:15.2f}%")
    return "\n".join(lines)
