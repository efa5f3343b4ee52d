"""End-to-end experiment: mask -> split -> normalise -> train -> impute -> score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import baselines, data, metrics
from .denoiser import DenoiserConfig
from .diffusion import ImputationResult, TrainConfig, TrainState, impute, quadratic_schedule, train


@dataclass
class PreparedData:
    stats: data.NormStats
    train: tuple[np.ndarray, np.ndarray, np.ndarray]   # normalised (values, obs, eval)
    test: tuple[np.ndarray, np.ndarray, np.ndarray]
    test_truth: np.ndarray                              # original units
    names: list[str]


def prepare(masked: data.TimeSeriesBatch, truth: data.TimeSeriesBatch, window: int,
            ratios=(0.8, 0.1, 0.1)) -> PreparedData:
    tr, _, te = data.split(masked, ratios, window=window, require=(True, False, True))
    _, _, te_truth = data.split(truth, ratios, window=window, require=(True, False, True))
    stats = data.fit_stats(tr)
    tr_w = data.stack(data.windows(data.normalize(stats, tr), window))
    te_w = data.stack(data.windows(data.normalize(stats, te), window))
    truth_w = data.stack(data.windows(te_truth, window))[0]
    return PreparedData(stats, tr_w, te_w, truth_w, masked.names)


@dataclass
class ExperimentResult:
    state: TrainState
    imputation: ImputationResult
    prediction: np.ndarray          # median, original units
    report: metrics.EvalReport


def run(prepared: PreparedData, model: DenoiserConfig, cfg: TrainConfig,
        n_samples: int = 10, sample_seed: int = 0) -> ExperimentResult:
    state = train(prepared.train[0], prepared.train[1], model, cfg)
    sched = quadratic_schedule(cfg.beta_1, cfg.beta_T, cfg.n_steps)
    vals, obs, ev = prepared.test
    res = impute(vals, obs, state.params, sched, n_samples=n_samples, seed=sample_seed)
    mean, std = prepared.stats.mean, prepared.stats.std
    pred = res.median * std + mean
    samples = res.samples * std + mean
    report = metrics.evaluate(pred, prepared.test_truth, ev, prepared.names, samples)
    report.baselines = baseline_scores(prepared)
    return ExperimentResult(state, res, pred, report)


def baseline_scores(prepared: PreparedData) -> dict:
    vals, obs, ev = prepared.test
    mean, std = prepared.stats.mean, prepared.stats.std
    raw = vals * std + mean
    truth = prepared.test_truth
    out = {}
    for name, pred in (
        ("mean_fill", baselines.mean_fill(raw, obs, mean)),
        ("linear_interp", baselines.linear_interpolation(raw, obs)),
    ):
        out[name] = {"mae": metrics.mae(pred, truth, ev), "rmse": metrics.rmse(pred, truth, ev)}
    return out
