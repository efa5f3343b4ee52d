"""Imputation error metrics on evaluation targets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

REPORT_SCHEMA = {
    "type": "object",
    "required": ["mae", "rmse", "n_targets", "per_variate", "quantile_coverage"],
    "properties": {
        "mae": {"type": "number", "minimum": 0},
        "rmse": {"type": "number", "minimum": 0},
        "n_targets": {"type": "integer", "minimum": 1},
        "quantile_coverage": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "per_variate": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["variate", "mae", "rmse", "n_targets"],
                "properties": {
                    "variate": {"type": "string"},
                    "mae": {"type": ["number", "null"]},
                    "rmse": {"type": ["number", "null"]},
                    "n_targets": {"type": "integer", "minimum": 0},
                },
            },
        },
        "baselines": {"type": "object"},
    },
}


def _targets(pred, truth, eval_mask):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    mask = np.asarray(eval_mask).astype(bool)
    if not (pred.shape == truth.shape == mask.shape):
        raise ValueError(f"shape mismatch: pred {pred.shape}, truth {truth.shape}, mask {mask.shape}")
    if not mask.any():
        raise ValueError("no evaluation targets")
    return pred[mask] - truth[mask]


def mae(pred, truth, eval_mask) -> float:
    return float(np.mean(np.abs(_targets(pred, truth, eval_mask))))


def rmse(pred, truth, eval_mask) -> float:
    return float(np.sqrt(np.mean(_targets(pred, truth, eval_mask) ** 2)))


def quantile_coverage(samples, truth, eval_mask, lo: float = 0.05, hi: float = 0.95) -> float:
    """Fraction of targets whose truth lies in the empirical ``[lo, hi]`` band."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got {lo}, {hi}")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < 2:
        raise ValueError("quantile coverage needs at least two samples")
    mask = np.asarray(eval_mask).astype(bool)
    if samples.shape[1:] != mask.shape or np.shape(truth) != mask.shape:
        raise ValueError("samples, truth and mask shapes disagree")
    if not mask.any():
        raise ValueError("no evaluation targets")
    s = samples[:, mask]
    band_lo, band_hi = np.quantile(s, [lo, hi], axis=0)
    t = np.asarray(truth)[mask]
    return float(np.mean((t >= band_lo) & (t <= band_hi)))


@dataclass
class EvalReport:
    mae: float
    rmse: float
    n_targets: int
    per_variate: list[dict] = field(default_factory=list)
    quantile_coverage: float | None = None
    baselines: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def table(self) -> str:
        lines = [f"{'scope':<16}{'MAE':>12}{'RMSE':>12}{'targets':>10}",
                 f"{'all':<16}{self.mae:>12.5f}{self.rmse:>12.5f}{self.n_targets:>10d}"]
        for row in self.per_variate:
            if row["n_targets"]:
                lines.append(f"{row['variate']:<16}{row['mae']:>12.5f}{row['rmse']:>12.5f}"
                             f"{row['n_targets']:>10d}")
        for name, b in self.baselines.items():
            lines.append(f"{'[' + name + ']':<16}{b['mae']:>12.5f}{b['rmse']:>12.5f}")
        if self.quantile_coverage is not None:
            lines.append(f"coverage[0.05,0.95] = {self.quantile_coverage:.4f}")
        return "\n".join(lines)


def evaluate(pred, truth, eval_mask, names=None, samples=None) -> EvalReport:
    """Full report; arrays are ``(..., N, C, L)`` with variates on axis ``-3``."""
    pred = np.asarray(pred)
    mask = np.asarray(eval_mask).astype(bool)
    N = pred.shape[-3]
    names = names or [f"v{i}" for i in range(N)]
    per = []
    for i in range(N):
        m = np.zeros_like(mask)
        m[..., i, :, :] = mask[..., i, :, :]
        n = int(m.sum())
        per.append({
            "variate": names[i],
            "mae": mae(pred, truth, m) if n else None,
            "rmse": rmse(pred, truth, m) if n else None,
            "n_targets": n,
        })
    cov = None
    if samples is not None and np.shape(samples)[0] >= 2:
        cov = quantile_coverage(samples, truth, mask)
    return EvalReport(mae(pred, truth, mask), rmse(pred, truth, mask), int(mask.sum()), per, cov)
