"""Command-line entry point: ``scorecdm <verb> ...``.

Verbs: synth, mask, train, impute, eval, fft-bench, plot-export,
export-scoremap. A manifest JSON drives every step; flags override its
fields and the effective configuration is written beside the outputs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import ctypes
import ctypes.util
import json
import logging
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines, data, metrics
from .denoiser import DenoiserConfig, layer_score_maps, export_score_map, score_weighted_mix
from .diffusion import (
    QUANTILES,
    NumericalError,
    TrainConfig,
    forward_sample,
    impute,
    init_train_state,
    interpolate_conditional,
    load_checkpoint,
    quadratic_schedule,
    save_checkpoint,
    train,
)
from .pipeline import prepare

log = logging.getLogger("scorecdm")

MANIFEST_FORMAT = "scorecdm-manifest/1"
EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Effective configuration of a run; defaults are the reference hyperparameters."""

    batch_size: int = 16
    window: int = 24
    epochs: int = 200
    lr: float = 1e-3
    d: int = 64
    layers: int = 2
    n_steps: int = 50
    beta_1: float = 1e-4
    beta_T: float = 0.2
    use_s2twb: bool = True
    use_scm: bool = True
    seed: int = 0
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    overrides: dict = field(default_factory=dict)

    def model(self, channels: int) -> DenoiserConfig:
        return DenoiserConfig(self.window, channels, self.d, self.n_steps, self.layers,
                              self.use_s2twb, self.use_scm)

    def train_config(self, max_iters: int | None = None) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.beta_1, self.beta_T,
                           self.n_steps, self.seed, max_iters=max_iters)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d


# -- manifest helpers ----------------------------------------------------------

def read_manifest(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise data.DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise data.DataError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("format") != MANIFEST_FORMAT:
        raise data.DataError(f"{path}: not a {MANIFEST_FORMAT} manifest")
    return doc


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def resolve(manifest_path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def effective_seed(manifest: dict, flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("SCORECDM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"SCORECDM_SEED must be an integer, got {env!r}") from None
    return int(manifest.get("seed", 0))


def run_config(manifest: dict, args) -> RunConfig:
    cfg = RunConfig()
    overrides = {}
    base = dict(manifest.get("run", {}))
    base.setdefault("window", manifest.get("window", cfg.window))
    if "split_ratios" in manifest:
        base["split_ratios"] = tuple(manifest["split_ratios"])
    names = {f.name for f in fields(RunConfig)} - {"overrides"}
    for k, v in base.items():
        if k in names:
            cfg = replace(cfg, **{k: tuple(v) if k == "split_ratios" else v})
    for k in ("batch_size", "epochs", "lr", "d", "layers", "n_steps", "beta_1", "beta_T", "window"):
        v = getattr(args, k, None)
        if v is not None:
            overrides[k] = v
            cfg = replace(cfg, **{k: v})
    if getattr(args, "no_s2twb", False):
        overrides["use_s2twb"] = False
        cfg = replace(cfg, use_s2twb=False)
    if getattr(args, "no_scm", False):
        overrides["use_scm"] = False
        cfg = replace(cfg, use_scm=False)
    seed = effective_seed(manifest, getattr(args, "seed", None))
    if seed != manifest.get("seed", 0):
        overrides["seed"] = seed
    return replace(cfg, seed=seed, overrides=overrides)


def load_masked(manifest_path) -> tuple[dict, data.TimeSeriesBatch, data.TimeSeriesBatch]:
    """Masked batch and ground truth for a manifest (after ``mask``)."""
    man = read_manifest(manifest_path)
    if man.get("archive"):
        masked, truth = data.read_archive(resolve(manifest_path, man["archive"]))
        if truth is None:
            truth = masked
    else:
        truth = data.load_csv(resolve(manifest_path, man["csv"]))
        masked = truth
    interval = float(man.get("interval_minutes", masked.interval_minutes))
    masked = replace(masked, interval_minutes=interval)
    truth = replace(truth, interval_minutes=interval)
    return man, masked, truth


def _write_run_log(out: Path, command: str, argv) -> None:
    write_json(out / "run_log.json", {"command": command, "argv": list(argv),
                                      "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S")})


# -- commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else int(os.environ.get("SCORECDM_SEED", 0))
    cfg = data.SynthConfig(
        n_variates=args.variates, n_windows=args.windows, window=args.window,
        periods=tuple(args.periods), noise_std=args.noise, trend_slope=args.trend,
        interval_minutes=args.interval,
    )
    series = data.synth_generate(cfg, seed)
    data.write_csv(out / "data.csv", series)
    manifest = {
        "format": MANIFEST_FORMAT,
        "csv": "data.csv",
        "interval_minutes": cfg.interval_minutes,
        "split_ratios": [0.8, 0.1, 0.1],
        "window": cfg.window,
        "seed": seed,
        "synth": cfg.to_dict(),
        "mask": None,
        "archive": None,
    }
    write_json(out / "manifest.json", manifest)
    print(f"wrote {cfg.n_variates} variates x {cfg.length} steps "
          f"({cfg.n_windows} windows of {cfg.window}) to {out}")
    return 0


def cmd_mask(args) -> int:
    if (args.point is None) == (args.block is None):
        raise UsageError("pass exactly one of --point P or --block Q")
    man = read_manifest(args.manifest)
    truth = data.load_csv(resolve(args.manifest, man["csv"]))
    truth = replace(truth, interval_minutes=float(man.get("interval_minutes", truth.interval_minutes)))
    seed = effective_seed(man, args.seed)
    if args.point is not None:
        if args.point == 0:
            warnings.warn("--point 0 leaves the evaluation mask empty", stacklevel=1)
        spec = data.MaskSpec(kind="point", p=args.point, seed=seed)
    else:
        rng_ = tuple(args.block_range) if args.block_range else None
        spec = data.MaskSpec(kind="block", q=args.block, block_len_range=rng_,
                             base_point_fraction=args.base_fraction, seed=seed)
    masked = data.apply_mask(truth, spec)
    archive = Path(args.out) if args.out else Path(args.manifest).parent / "masked"
    data.write_archive(archive, masked, truth)
    report = {"n_observed_before": int(truth.obs_mask.sum()),
              "n_eval_targets": int(masked.eval_mask.sum()),
              "blocks": masked.notes.get("block_report", [])}
    write_json(archive / "mask_report.json", report)
    man["mask"] = spec.to_dict()
    try:
        man["archive"] = os.path.relpath(archive, Path(args.manifest).parent)
    except ValueError:
        man["archive"] = str(archive.resolve())
    write_json(args.manifest, man)
    print(f"{report['n_eval_targets']} of {report['n_observed_before']} observed points "
          f"held out as eval targets -> {archive}")
    return 0


def _write_loss_csv(path, losses) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(losses, start=1):
            w.writerow([i, repr(float(v))])


def cmd_train(args) -> int:
    man, masked, truth = load_masked(args.manifest)
    cfg = run_config(man, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare(masked, truth, cfg.window, cfg.split_ratios)
    tcfg = cfg.train_config(args.max_iters)
    model_cfg = cfg.model(masked.values.shape[1])
    ckpt_path = out / "checkpoint.json"
    extra = {
        "variant": ("full" if cfg.use_s2twb and cfg.use_scm else
                    "w/o[S2TWB]" if cfg.use_scm else
                    "w/o[SCM]" if cfg.use_s2twb else "w/o[S2TWB,SCM]"),
        "kernel": "sine-basis" if cfg.use_s2twb else "delta",
        "norm_stats": prepared.stats.to_dict(),
        "names": masked.names,
        "run_config": cfg.to_dict(),
    }
    state = None
    if args.resume and ckpt_path.exists():
        ck = load_checkpoint(ckpt_path)
        if ck.state.params.config != model_cfg:
            raise data.DataError("checkpoint model configuration differs from the requested run")
        state = ck.state
        log.info("resuming from iteration %d", state.iteration)
    else:
        state = init_train_state(model_cfg, tcfg)

    every = max(1, args.checkpoint_every)

    def on_iteration(st):
        if st.iteration % every == 0:
            save_checkpoint(ckpt_path, st, tcfg, extra)

    state = train(prepared.train[0], prepared.train[1], model_cfg, tcfg,
                  state=state, on_iteration=on_iteration)
    save_checkpoint(ckpt_path, state, tcfg, extra)
    _write_loss_csv(out / "loss.csv", state.losses)
    write_json(out / "effective_config.json", {"run": cfg.to_dict(), "train": tcfg.to_dict(),
                                               "model": model_cfg.to_dict(), "manifest": man})
    _write_run_log(out, "train", sys.argv[1:])
    print(f"trained {state.iteration} iterations ({extra['variant']}); "
          f"final loss {state.losses[-1] if state.losses else float('nan'):.5f}")
    return 0


def _split_windows(masked, truth, window, ratios, which: str):
    parts = data.split(masked, ratios, window=window, require=(True, False, which == "test"))
    tparts = data.split(truth, ratios, window=window, require=(True, False, which == "test"))
    idx = {"train": 0, "val": 1, "test": 2}[which]
    offset = sum(p.length for p in parts[:idx])
    return parts[idx], tparts[idx], offset


GRID_COLUMNS = ["window", "variate", "channel", "step", "time_index", "observed", "eval",
                "value", "median"] + [f"q{int(round(q * 100)):02d}" for q in QUANTILES]


def cmd_impute(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    man, masked, truth = load_masked(args.manifest)
    run = ck.extra.get("run_config", {})
    window = int(run.get("window", man.get("window", 24)))
    ratios = tuple(run.get("split_ratios", man.get("split_ratios", (0.8, 0.1, 0.1))))
    cfg_model = ck.state.params.config
    if cfg_model.length != window or cfg_model.channels != masked.values.shape[1]:
        raise data.DataError("checkpoint and dataset shapes disagree")
    stats = data.NormStats.from_dict(ck.extra["norm_stats"])
    if stats.mean.shape[0] != masked.values.shape[0]:
        raise data.DataError(
            f"checkpoint trained on {stats.mean.shape[0]} variates, dataset has {masked.values.shape[0]}"
        )
    part, _, offset = _split_windows(masked, truth, window, ratios, args.split)
    wins = data.windows(part, window)
    vals, obs, ev = data.stack(wins)
    norm = (vals - stats.mean) / stats.std
    seed = effective_seed(man, args.seed)
    res = impute(norm, obs, ck.state.params, ck.schedule, n_samples=args.samples, seed=seed,
                 threads=args.threads)
    # observed entries are copied verbatim in original units
    median = np.where(obs, vals, res.median * stats.std + stats.mean)
    quants = np.where(obs, vals, res.quantiles * stats.std + stats.mean)
    samples = np.where(obs, vals, res.samples * stats.std + stats.mean)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    k = args.samples
    with (out / "targets.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GRID_COLUMNS[:5] + GRID_COLUMNS[8:] + [f"s{i}" for i in range(k)])
        for (wi, n, c, j) in zip(*np.nonzero(ev)):
            ti = offset + wi * window + j
            w.writerow([wi, n, c, j, ti, repr(float(median[wi, n, c, j]))]
                       + [repr(float(quants[q, wi, n, c, j])) for q in range(len(QUANTILES))]
                       + [repr(float(samples[s, wi, n, c, j])) for s in range(k)])
    with (out / "grid.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GRID_COLUMNS)
        for (wi, n, c, j) in np.ndindex(vals.shape):
            ti = offset + wi * window + j
            w.writerow([wi, n, c, j, ti, int(obs[wi, n, c, j]), int(ev[wi, n, c, j]),
                        repr(float(vals[wi, n, c, j])) if obs[wi, n, c, j] else "",
                        repr(float(median[wi, n, c, j]))]
                       + [repr(float(quants[q, wi, n, c, j])) for q in range(len(QUANTILES))])
    write_json(out / "effective_config.json", {
        "checkpoint": str(args.checkpoint), "manifest": str(args.manifest), "split": args.split,
        "samples": k, "seed": seed, "threads": args.threads, "window": window,
    })
    print(f"imputed {int(ev.sum())} eval targets in {len(wins)} {args.split} windows -> {out}")
    return 0


def _read_rows(path) -> list[dict]:
    try:
        with Path(path).open(newline="") as fh:
            return list(csv.DictReader(fh))
    except FileNotFoundError:
        raise data.DataError(f"missing file {path}") from None


def _grid_arrays(imputed_dir):
    rows = _read_rows(Path(imputed_dir) / "grid.csv")
    if not rows:
        raise data.DataError("empty imputation grid")
    W = 1 + max(int(r["window"]) for r in rows)
    N = 1 + max(int(r["variate"]) for r in rows)
    C = 1 + max(int(r["channel"]) for r in rows)
    L = 1 + max(int(r["step"]) for r in rows)
    shape = (W, N, C, L)
    out = {k: np.zeros(shape) for k in ["median"] + GRID_COLUMNS[9:]}
    out["observed"] = np.zeros(shape, dtype=bool)
    out["eval"] = np.zeros(shape, dtype=bool)
    out["time_index"] = np.zeros(shape, dtype=np.int64)
    for r in rows:
        ix = (int(r["window"]), int(r["variate"]), int(r["channel"]), int(r["step"]))
        out["observed"][ix] = r["observed"] == "1"
        out["eval"][ix] = r["eval"] == "1"
        out["time_index"][ix] = int(r["time_index"])
        for k in ["median"] + GRID_COLUMNS[9:]:
            out[k][ix] = float(r[k])
    return out


def cmd_eval(args) -> int:
    man, masked, truth = load_masked(args.manifest)
    if not man.get("archive"):
        raise data.DataError("manifest has no masked archive; run `scorecdm mask` first")
    grid = _grid_arrays(args.imputed)
    tvals = truth.values
    ti = grid["time_index"]
    n_idx = np.arange(tvals.shape[0])[None, :, None, None]
    c_idx = np.arange(tvals.shape[1])[None, None, :, None]
    gt = tvals[n_idx, c_idx, ti]
    ev = grid["eval"]
    if not ev.any():
        raise data.DataError("no evaluation targets in the imputed split")
    rows = _read_rows(Path(args.imputed) / "targets.csv")
    sample_cols = [k for k in rows[0] if k.startswith("s") and k[1:].isdigit()] if rows else []
    samples = None
    if len(sample_cols) >= 2:
        samples = np.zeros((len(sample_cols),) + ev.shape)
        for r in rows:
            ix = (int(r["window"]), int(r["variate"]), int(r["channel"]), int(r["step"]))
            for s, col in enumerate(sample_cols):
                samples[(s,) + ix] = float(r[col])
    report = metrics.evaluate(grid["median"], gt, ev, masked.names, samples)
    # built-in baselines on the same windows
    obs = grid["observed"]
    stats = data.fit_stats(data.split(masked, tuple(man.get("split_ratios", (0.8, 0.1, 0.1))),
                                      window=ti.shape[-1])[0])
    vals = np.where(obs, gt, 0.0)
    for name, pred in (("mean_fill", baselines.mean_fill(vals, obs, stats.mean)),
                       ("linear_interp", baselines.linear_interpolation(vals, obs))):
        report.baselines[name] = {"mae": metrics.mae(pred, gt, ev), "rmse": metrics.rmse(pred, gt, ev)}
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(report.table())
    return 0


def quadratic_attention_mix(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Reference ``softmax(Q K^T / sqrt(d)) V`` over time; inputs ``(d, L)``."""
    logits = (q.T @ k) / np.sqrt(q.shape[0])
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    return (p @ v.T).T


_M_TRIM_THRESHOLD, _M_MMAP_THRESHOLD, _MALLOC_DEFAULT = -1, -3, 128 * 1024


@contextlib.contextmanager
def _retained_heap():
    """Keep freed blocks in the heap while timing (glibc only).

    By default large temporaries are unmapped on free and page-faulted back
    in on the next call, which adds a size-dependent cost unrelated to the
    algorithm being timed. Elsewhere this is a no-op.
    """
    name = ctypes.util.find_library("c")
    mallopt = getattr(ctypes.CDLL(name), "mallopt", None) if name else None
    if mallopt is None:
        yield
        return
    mallopt(_M_MMAP_THRESHOLD, 1 << 30)
    mallopt(_M_TRIM_THRESHOLD, (1 << 31) - 1)
    try:
        yield
    finally:
        mallopt(_M_MMAP_THRESHOLD, _MALLOC_DEFAULT)
        mallopt(_M_TRIM_THRESHOLD, _MALLOC_DEFAULT)


def fft_bench(min_len: int = 256, max_len: int = 4096, reps: int = 20, channels: int = 64,
              seed: int = 0) -> list[dict]:
    """Median timings of the score-weighted mix and quadratic attention per length."""
    with _retained_heap():
        return _bench_rows(min_len, max_len, reps, channels, seed)


def _bench_rows(min_len, max_len, reps, channels, seed) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    L = min_len
    while L <= max_len:
        q, k, m = (rng.normal(0, 0.5, (channels, L)) for _ in range(3))
        shift = rng.normal(0, 0.1, (channels, L))
        kernel = rng.normal(0, 0.1, L)
        timings = {}
        for name, fn in (("mix", lambda: score_weighted_mix(q, k, m, shift, kernel)),
                         ("quad", lambda: quadratic_attention_mix(q, k, m))):
            fn()
            ts = []
            for _ in range(reps):
                t0 = time.perf_counter()
                fn()
                ts.append(time.perf_counter() - t0)
            timings[name] = float(np.median(ts))
        row = {"length": L, "mix_median_s": timings["mix"], "quad_median_s": timings["quad"],
               "mix_ratio": None, "quad_ratio": None}
        if rows:
            row["mix_ratio"] = row["mix_median_s"] / rows[-1]["mix_median_s"]
            row["quad_ratio"] = row["quad_median_s"] / rows[-1]["quad_median_s"]
        rows.append(row)
        L *= 2
    return rows


def cmd_fft_bench(args) -> int:
    if args.min < 2 or args.max < args.min:
        raise UsageError("need 2 <= --min <= --max")
    rows = fft_bench(args.min, args.max, args.reps, args.channels)
    cols = ["length", "mix_median_s", "quad_median_s", "mix_ratio", "quad_ratio"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join("" if r[c] is None else (str(r[c]) if c == "length" else f"{r[c]:.6g}")
                              for c in cols))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


PLOT_COLUMNS = ["time", "truth", "observed", "median", "q05", "q95"]


def cmd_plot_export(args) -> int:
    man, masked, truth = load_masked(args.manifest)
    grid = _grid_arrays(args.imputed)
    W, N, C, L = grid["median"].shape
    if not (0 <= args.variate < N and 0 <= args.window < W and 0 <= args.channel < C):
        raise UsageError(f"window/variate/channel out of range for grid {grid['median'].shape}")
    ix = (args.window, args.variate, args.channel)
    ti = grid["time_index"][ix]
    ts = truth.timestamps
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PLOT_COLUMNS)
        for j in range(L):
            stamp = data._format_time(float(ts[ti[j]])) if ts is not None else int(ti[j])
            w.writerow([stamp, repr(float(truth.values[args.variate, args.channel, ti[j]])),
                        int(grid["observed"][ix][j]), repr(float(grid["median"][ix][j])),
                        repr(float(grid["q05"][ix][j])), repr(float(grid["q95"][ix][j]))])
    print(f"wrote {L} rows for variate {args.variate}, window {args.window} -> {args.out}")
    return 0


def cmd_export_scoremap(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    man, masked, truth = load_masked(args.manifest)
    cfg = ck.state.params.config
    if not cfg.use_scm:
        raise UsageError("checkpoint was trained without the score-weighted mix")
    stats = data.NormStats.from_dict(ck.extra["norm_stats"])
    ratios = tuple(ck.extra.get("run_config", {}).get("split_ratios", (0.8, 0.1, 0.1)))
    part, _, _ = _split_windows(masked, truth, cfg.length, ratios, args.split)
    wins = data.windows(part, cfg.length)
    if not 0 <= args.window < len(wins):
        raise UsageError(f"window {args.window} out of range ({len(wins)} windows)")
    vals, obs, _ = data.stack([wins[args.window]])
    norm = np.where(obs, (vals - stats.mean) / stats.std, 0.0)
    cond = interpolate_conditional(norm, obs)
    if not 1 <= args.step <= ck.schedule.T:
        raise UsageError(f"--step must lie in 1..{ck.schedule.T}")
    x_t = forward_sample(cond, args.step, np.zeros_like(cond), ck.schedule)
    maps = layer_score_maps(x_t, cond, args.step, ck.state.params)
    if not 0 <= args.layer < len(maps) or not 0 <= args.variate < vals.shape[1]:
        raise UsageError("layer or variate out of range")
    export_score_map(args.out, maps[args.layer][0, args.variate])
    print(f"score map (layer {args.layer}, variate {args.variate}) -> {args.out}")
    return 0


# -- parser --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scorecdm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset and manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--variates", type=int, default=4)
    s.add_argument("--windows", type=int, default=2000)
    s.add_argument("--window", type=int, default=24)
    s.add_argument("--periods", type=float, nargs="+", default=[24.0, 8.0])
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--trend", type=float, default=0.0)
    s.add_argument("--interval", type=float, default=5.0, help="sampling interval, minutes")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mask", help="hold out evaluation targets")
    s.add_argument("manifest")
    s.add_argument("--point", type=float, help="point-missing fraction p")
    s.add_argument("--block", type=float, help="per-variate failure probability q")
    s.add_argument("--block-range", type=int, nargs=2, metavar=("MIN", "MAX"),
                   help="outage length in steps (default: 1-4 hours)")
    s.add_argument("--base-fraction", type=float, default=0.05)
    s.add_argument("--out", help="archive directory (default: <manifest dir>/masked)")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("train", help="train the denoiser")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    for flag, typ in (("--epochs", int), ("--batch-size", int), ("--lr", float), ("--d", int),
                      ("--layers", int), ("--n-steps", int), ("--beta-1", float),
                      ("--beta-T", float), ("--window", int), ("--seed", int)):
        s.add_argument(flag, type=typ, dest=flag.lstrip("-").replace("-", "_"))
    s.add_argument("--no-s2twb", action="store_true", help="ablation: delta kernel")
    s.add_argument("--no-scm", action="store_true", help="ablation: uniform scores")
    s.add_argument("--max-iters", type=int)
    s.add_argument("--checkpoint-every", type=int, default=500)
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("impute", help="sample imputations for a split")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--samples", type=int, default=10)
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_impute)

    s = sub.add_parser("eval", help="score an imputation")
    s.add_argument("imputed")
    s.add_argument("manifest")
    s.add_argument("--out", help="report JSON path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("fft-bench", help="time the score-weighted mix against quadratic attention")
    s.add_argument("--min", type=int, default=256)
    s.add_argument("--max", type=int, default=4096)
    s.add_argument("--reps", type=int, default=20)
    s.add_argument("--channels", type=int, default=64)
    s.add_argument("--out")
    s.set_defaults(func=cmd_fft_bench)

    s = sub.add_parser("plot-export", help="per-variate series with quantile band")
    s.add_argument("imputed")
    s.add_argument("manifest")
    s.add_argument("--variate", type=int, required=True)
    s.add_argument("--window", type=int, default=0)
    s.add_argument("--channel", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot_export)

    s = sub.add_parser("export-scoremap", help="dump a score map as CSV")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.add_argument("--window", type=int, default=0)
    s.add_argument("--variate", type=int, default=0)
    s.add_argument("--layer", type=int, default=0)
    s.add_argument("--step", type=int, default=1)
    s.set_defaults(func=cmd_export_scoremap)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"scorecdm: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"scorecdm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (data.DataError, ValueError, KeyError, OSError) as exc:
        print(f"scorecdm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
