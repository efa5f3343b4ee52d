"""Series ingestion, masking protocols, splits, windows, normalisation and
synthetic data."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

MISSING_TOKENS = {"", "nan", "NaN", "NAN"}


class DataError(ValueError):
    """Malformed input data."""


@dataclass
class TimeSeriesBatch:
    """Values with observation / evaluation masks, shape ``(N, C, L)``.

    ``timestamps`` (seconds since epoch, one per step) are optional; windows
    cut from a series keep their slice.
    """

    values: np.ndarray
    obs_mask: np.ndarray
    eval_mask: np.ndarray
    interval_minutes: float = 5.0
    names: list[str] = field(default_factory=list)
    timestamps: np.ndarray | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.obs_mask = np.asarray(self.obs_mask).astype(bool)
        self.eval_mask = np.asarray(self.eval_mask).astype(bool)
        if not (self.values.shape == self.obs_mask.shape == self.eval_mask.shape):
            raise ValueError("values and masks must share shape")
        if self.values.ndim != 3:
            raise ValueError(f"expected (N, C, L) values, got {self.values.shape}")
        if np.any(self.obs_mask & self.eval_mask):
            raise ValueError("a position cannot be both observed and an eval target")
        if not self.names:
            self.names = [f"v{i}" for i in range(self.values.shape[0])]

    @property
    def length(self) -> int:
        return self.values.shape[-1]

    def slice_time(self, start: int, stop: int) -> "TimeSeriesBatch":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return replace(
            self,
            values=self.values[..., start:stop].copy(),
            obs_mask=self.obs_mask[..., start:stop].copy(),
            eval_mask=self.eval_mask[..., start:stop].copy(),
            timestamps=ts,
            notes=dict(self.notes),
        )


@dataclass(frozen=True)
class MaskSpec:
    kind: str = "point"                      # "point" or "block"
    p: float = 0.25
    q: float = 0.05
    block_len_range: tuple[int, int] | None = None   # steps; default 1-4 hours
    base_point_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("point", "block"):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        for name in ("p", "q", "base_point_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        r = self.block_len_range
        if r is not None and not (1 <= r[0] <= r[1]):
            raise ValueError(f"invalid block_len_range {r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["block_len_range"] is not None:
            d["block_len_range"] = list(d["block_len_range"])
        return d


# -- CSV ---------------------------------------------------------------------

def _parse_time(token: str, row: int) -> float:
    token = token.strip()
    try:
        return float(token)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(token.replace("Z", "+00:00"))
    except ValueError:
        raise DataError(f"row {row}: unparseable timestamp {token!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def load_csv(path, time_column: str | None = None) -> TimeSeriesBatch:
    """Read a wide CSV (timestamp column + one column per variate).

    Empty cells and ``NaN`` tokens are missing. Timestamps must increase
    with a constant interval. Row numbers in errors count the header as 1.
    """
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{path}: need a header and at least one data row")
    header = rows[0]
    tcol = 0 if time_column is None else header.index(time_column)
    names = [h for i, h in enumerate(header) if i != tcol]
    if not names:
        raise DataError(f"{path}: no variate columns")
    times, vals, mask = [], [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        times.append(_parse_time(row[tcol], r))
        line, obs = [], []
        for i, cell in enumerate(row):
            if i == tcol:
                continue
            cell = cell.strip()
            if cell in MISSING_TOKENS:
                line.append(0.0)
                obs.append(False)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"row {r}: unparseable number {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"row {r}: non-finite value {cell!r}")
            line.append(v)
            obs.append(True)
        vals.append(line)
        mask.append(obs)
    ts = np.asarray(times)
    interval = 0.0
    if len(ts) > 1:
        steps = np.diff(ts)
        for k, s in enumerate(steps):
            if s <= 0:
                raise DataError(f"row {k + 3}: timestamps not strictly increasing")
            if not math.isclose(s, steps[0], rel_tol=1e-9, abs_tol=1e-6):
                raise DataError(f"row {k + 3}: irregular sampling interval")
        interval = float(steps[0]) / 60.0
    values = np.asarray(vals).T[:, None, :]
    obs_mask = np.asarray(mask).T[:, None, :]
    return TimeSeriesBatch(values, obs_mask, np.zeros_like(obs_mask), interval or 5.0,
                           names, ts)


def _format_time(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


def write_csv(path, batch: TimeSeriesBatch, which: str = "values") -> None:
    """Write ``values`` (unobserved cells left empty), ``obs_mask`` or ``eval_mask``."""
    N, C, L = batch.values.shape
    ts = batch.timestamps
    if ts is None:
        ts = np.arange(L) * batch.interval_minutes * 60.0
    cols = [n if C == 1 else f"{n}[{c}]" for n in batch.names for c in range(C)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + cols)
        for j in range(L):
            if which == "values":
                cells = [repr(float(batch.values[n, c, j])) if batch.obs_mask[n, c, j] else ""
                         for n in range(N) for c in range(C)]
            else:
                m = getattr(batch, which)
                cells = [str(int(m[n, c, j])) for n in range(N) for c in range(C)]
            w.writerow([_format_time(float(ts[j]))] + cells)


def write_archive(directory, batch: TimeSeriesBatch, truth: TimeSeriesBatch | None = None) -> None:
    """Masked-dataset archive: observed values, both masks and ground truth."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_csv(d / "values.csv", batch, "values")
    write_csv(d / "obs_mask.csv", batch, "obs_mask")
    write_csv(d / "eval_mask.csv", batch, "eval_mask")
    if truth is not None:
        write_csv(d / "truth.csv", truth, "values")


def _read_mask(path) -> np.ndarray:
    b = load_csv(path)
    return b.values.astype(bool)


def read_archive(directory) -> tuple[TimeSeriesBatch, TimeSeriesBatch | None]:
    d = Path(directory)
    vals = load_csv(d / "values.csv")
    obs = _read_mask(d / "obs_mask.csv")
    ev = _read_mask(d / "eval_mask.csv")
    batch = replace(vals, obs_mask=obs, eval_mask=ev)
    truth = load_csv(d / "truth.csv") if (d / "truth.csv").exists() else None
    return batch, truth


# -- masking -------------------------------------------------------------------

def _choose(obs: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    flat = np.flatnonzero(obs)
    picked = np.zeros(obs.size, dtype=bool)
    if count > 0:
        picked[rng.choice(flat, size=count, replace=False)] = True
    return picked.reshape(obs.shape)


def apply_point_mask(batch: TimeSeriesBatch, spec: MaskSpec) -> TimeSeriesBatch:
    """Move exactly ``floor(p * #observed)`` random observed points to eval targets."""
    if spec.kind != "point":
        raise ValueError("apply_point_mask needs a point MaskSpec")
    rng = np.random.default_rng(spec.seed)
    n_obs = int(batch.obs_mask.sum())
    picked = _choose(batch.obs_mask, math.floor(spec.p * n_obs + 1e-9), rng)
    return replace(batch, obs_mask=batch.obs_mask & ~picked,
                   eval_mask=batch.eval_mask | picked, notes=dict(batch.notes))


def block_len_steps(spec: MaskSpec, interval_minutes: float) -> tuple[int, int]:
    if spec.block_len_range is not None:
        return tuple(spec.block_len_range)
    per_hour = max(1, round(60.0 / interval_minutes))
    return per_hour, 4 * per_hour


def apply_block_mask(batch: TimeSeriesBatch, spec: MaskSpec) -> TimeSeriesBatch:
    """Base random point mask plus per-variate contiguous outages.

    Each variate fails with probability ``q``; an outage covers a run whose
    length is uniform over the block range, placed uniformly so it fits in
    the series. Runs longer than the series are clipped at its end.
    ``notes["block_report"]`` lists the outages.
    """
    if spec.kind != "block":
        raise ValueError("apply_block_mask needs a block MaskSpec")
    rng = np.random.default_rng(spec.seed)
    obs = batch.obs_mask
    n_obs = int(obs.sum())
    picked = _choose(obs, math.floor(spec.base_point_fraction * n_obs + 1e-9), rng)
    lo, hi = block_len_steps(spec, batch.interval_minutes)
    L = batch.length
    fails = rng.random(obs.shape[0]) < spec.q
    report = []
    for v in np.flatnonzero(fails):
        length = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, max(L - length, 0) + 1))
        stop = min(L, start + length)
        picked[v, :, start:stop] = True
        report.append({"variate": int(v), "start": start, "length": length,
                       "clipped": stop - start < length})
    picked &= obs
    notes = dict(batch.notes)
    notes["block_report"] = report
    return replace(batch, obs_mask=obs & ~picked, eval_mask=batch.eval_mask | picked, notes=notes)


def apply_mask(batch: TimeSeriesBatch, spec: MaskSpec) -> TimeSeriesBatch:
    return apply_point_mask(batch, spec) if spec.kind == "point" else apply_block_mask(batch, spec)


# -- splits, windows, normalisation -------------------------------------------

def split_bounds(n: int, ratios: Sequence[float]) -> tuple[int, int]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"split ratios must be three nonnegative values summing to 1, got {ratios}")
    b1 = math.floor(n * ratios[0] + 1e-9)
    b2 = math.floor(n * (ratios[0] + ratios[1]) + 1e-9)
    return b1, b2


def split(series: TimeSeriesBatch, ratios: Sequence[float] = (0.8, 0.1, 0.1),
          window: int | None = None, require: Sequence[bool] = (True, False, False)):
    """Chronological train/val/test segments.

    With ``window`` set, boundaries are counted in whole windows so no window
    straddles two segments; segments flagged in ``require`` must hold at
    least one window.
    """
    unit = window or 1
    b1, b2 = split_bounds(series.length // unit, ratios)
    end = (series.length // unit) * unit if window else series.length
    cuts = [(0, b1 * unit), (b1 * unit, b2 * unit), (b2 * unit, end)]
    parts = []
    for (a, b), req, label in zip(cuts, require, ("train", "val", "test")):
        if req and window and b - a < window:
            raise ValueError(f"{label} segment shorter than one window of {window}")
        parts.append(series.slice_time(a, b))
    return tuple(parts)


def windows(series: TimeSeriesBatch, L: int) -> list[TimeSeriesBatch]:
    """Non-overlapping consecutive windows; the trailing remainder is dropped."""
    if L <= 0:
        raise ValueError("window length must be positive")
    if L > series.length:
        raise ValueError(f"window length {L} exceeds series length {series.length}")
    return [series.slice_time(i * L, (i + 1) * L) for i in range(series.length // L)]


def stack(batches: Sequence[TimeSeriesBatch]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arrays ``(W, N, C, L)`` of values, obs_mask, eval_mask."""
    return (np.stack([b.values for b in batches]),
            np.stack([b.obs_mask for b in batches]),
            np.stack([b.eval_mask for b in batches]))


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray   # (N, C, 1)
    std: np.ndarray    # (N, C, 1)

    def to_dict(self) -> dict:
        return {"mean": self.mean.reshape(-1).tolist(), "std": self.std.reshape(-1).tolist(),
                "shape": list(self.mean.shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        shape = tuple(d["shape"])
        return cls(np.asarray(d["mean"]).reshape(shape), np.asarray(d["std"]).reshape(shape))


def fit_stats(train: TimeSeriesBatch) -> NormStats:
    """Per-variate/channel mean and std over observed training values only."""
    m = train.obs_mask
    n = m.sum(axis=-1, keepdims=True)
    safe = np.maximum(n, 1)
    mean = np.where(m, train.values, 0.0).sum(axis=-1, keepdims=True) / safe
    var = np.where(m, (train.values - mean) ** 2, 0.0).sum(axis=-1, keepdims=True) / safe
    std = np.sqrt(var)
    std = np.where((std == 0) | (n == 0), 1.0, std)
    return NormStats(np.where(n == 0, 0.0, mean), std)


def normalize(stats: NormStats, batch: TimeSeriesBatch) -> TimeSeriesBatch:
    return replace(batch, values=(batch.values - stats.mean) / stats.std)


def denormalize(stats: NormStats, batch: TimeSeriesBatch) -> TimeSeriesBatch:
    return replace(batch, values=batch.values * stats.std + stats.mean)


# -- synthetic data ------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_variates: int = 4
    channels: int = 1
    n_windows: int = 2000
    window: int = 24
    periods: tuple[float, ...] = (24.0, 8.0)
    amplitudes: tuple[float, ...] | None = None
    noise_std: float = 0.1
    trend_slope: float = 0.0
    interval_minutes: float = 5.0
    start_epoch: float = 1_700_000_000.0

    @property
    def length(self) -> int:
        return self.n_windows * self.window

    def to_dict(self) -> dict:
        d = asdict(self)
        d["periods"] = list(self.periods)
        d["amplitudes"] = None if self.amplitudes is None else list(self.amplitudes)
        return d


def synth_generate(config: SynthConfig, seed: int = 0) -> TimeSeriesBatch:
    """Sum of sinusoids with per-variate phases, a linear trend and noise.

    Fully observed; the returned values are the ground truth.
    """
    rng = np.random.default_rng(seed)
    N, C, L = config.n_variates, config.channels, config.length
    amps = config.amplitudes or (1.0,) * len(config.periods)
    if len(amps) != len(config.periods):
        raise ValueError("amplitudes and periods differ in length")
    t = np.arange(L, dtype=np.float64)
    phases = rng.uniform(0.0, 2 * np.pi, (N, C, len(config.periods)))
    values = config.trend_slope * np.broadcast_to(t, (N, C, L)).copy()
    for j, (period, amp) in enumerate(zip(config.periods, amps)):
        values += amp * np.sin(2 * np.pi * t / period + phases[..., j:j + 1])
    if config.noise_std > 0:
        values += rng.normal(0.0, config.noise_std, (N, C, L))
    ts = config.start_epoch + t * config.interval_minutes * 60.0
    ones = np.ones((N, C, L), dtype=bool)
    return TimeSeriesBatch(values, ones, ~ones, config.interval_minutes,
                           [f"v{i}" for i in range(N)], ts)
