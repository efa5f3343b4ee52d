"""Noise schedule, forward corruption, training loop and reverse-process sampler."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import grad as G
from .denoiser import (
    DenoiserConfig,
    DenoiserParams,
    epsilon_theta,
    init_params,
    parameter_leaves,
    predict,
)

log = logging.getLogger(__name__)

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
CHECKPOINT_FORMAT = "scorecdm-checkpoint/1"


class NumericalError(RuntimeError):
    """Training or sampling produced non-finite values."""


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    beta_1: float
    beta_T: float

    @property
    def T(self) -> int:
        return len(self.beta)

    def config(self) -> dict:
        return {"beta_1": self.beta_1, "beta_T": self.beta_T, "T": self.T}


def quadratic_schedule(beta_1: float, beta_T: float, T: int) -> NoiseSchedule:
    """Betas interpolated linearly in sqrt-space between ``beta_1`` and ``beta_T``."""
    if not (0.0 < beta_1 <= beta_T < 1.0):
        raise ValueError(f"need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_T}")
    if T < 2:
        raise ValueError(f"need T >= 2, got {T}")
    t = np.arange(1, T + 1)
    beta = ((T - t) / (T - 1) * np.sqrt(beta_1) + (t - 1) / (T - 1) * np.sqrt(beta_T)) ** 2
    # pin the endpoints against sqrt round-off
    beta[0], beta[-1] = beta_1, beta_T
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    var = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    var[0] = 0.0
    return NoiseSchedule(beta, alpha, alpha_bar, np.sqrt(var), float(beta_1), float(beta_T))


def _check_step(t, sched: NoiseSchedule) -> np.ndarray:
    steps = np.asarray(t, dtype=np.int64)
    if np.any(steps < 1) or np.any(steps > sched.T):
        raise ValueError(f"diffusion step must lie in 1..{sched.T}, got {t}")
    return steps


def _per_batch(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def forward_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; ``t`` scalar or one per leading row."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    steps = _check_step(t, sched)
    ab = _per_batch(sched.alpha_bar[steps - 1], x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_mean(x_t, eps_hat, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Mean of ``p(x_{t-1} | x_t)`` from a noise prediction."""
    i = int(_check_step(t, sched)) - 1
    coef = sched.beta[i] / np.sqrt(1.0 - sched.alpha_bar[i])
    return (np.asarray(x_t) - coef * np.asarray(eps_hat)) / np.sqrt(sched.alpha[i])


def posterior_mean(x0, x_t, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Mean of ``q(x_{t-1} | x_t, x_0)``."""
    i = int(_check_step(t, sched)) - 1
    ab = sched.alpha_bar[i]
    ab_prev = sched.alpha_bar[i - 1] if i > 0 else 1.0
    c0 = np.sqrt(ab_prev) * sched.beta[i] / (1.0 - ab)
    ct = np.sqrt(sched.alpha[i]) * (1.0 - ab_prev) / (1.0 - ab)
    return c0 * np.asarray(x0) + ct * np.asarray(x_t)


def interpolate_conditional(values, obs_mask) -> np.ndarray:
    """Linear interpolation along time between observed points.

    Leading/trailing gaps hold the nearest observation; rows with no
    observation at all become zero.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(obs_mask).astype(bool)
    L = values.shape[-1]
    idx = np.broadcast_to(np.arange(L), values.shape)
    prev = np.maximum.accumulate(np.where(mask, idx, -1), axis=-1)
    nxt = np.flip(np.minimum.accumulate(np.flip(np.where(mask, idx, L), -1), axis=-1), -1)
    has_prev, has_next = prev >= 0, nxt < L
    v_prev = np.take_along_axis(values, np.clip(prev, 0, L - 1), -1)
    v_next = np.take_along_axis(values, np.clip(nxt, 0, L - 1), -1)
    span = np.where(has_prev & has_next & (nxt > prev), nxt - prev, 1)
    frac = (idx - prev) / span
    out = np.where(has_prev & has_next, v_prev + frac * (v_next - v_prev), 0.0)
    out = np.where(has_prev & ~has_next, v_prev, out)
    out = np.where(~has_prev & has_next, v_next, out)
    return np.where(mask, values, out)


# -- training ------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    beta_1: float = 1e-4
    beta_T: float = 0.2
    n_steps: int = 50
    seed: int = 0
    mask_ratio_min: float = 0.1
    mask_ratio_max: float = 0.9
    max_iters: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    params: DenoiserParams
    adam: G.AdamState
    iteration: int = 0
    losses: list[float] = field(default_factory=list)


def masked_loss(eps, eps_hat, target_mask) -> G.Tensor:
    """Mean squared noise error over training targets only."""
    tm = np.asarray(target_mask, dtype=np.float64)
    count = tm.sum()
    if count == 0:
        raise ValueError("training target mask is empty")
    r = G.mul(G.sub(eps, eps_hat), tm)
    return G.div(G.total(G.mul(r, r)), count)


def training_mask(obs_mask: np.ndarray, rng: np.random.Generator,
                  lo: float = 0.1, hi: float = 0.9) -> np.ndarray:
    """Hide a random fraction in ``[lo, hi]`` of each window's observed points."""
    obs = np.asarray(obs_mask).astype(bool)
    B = obs.shape[0]
    flat = obs.reshape(B, -1)
    n_obs = flat.sum(axis=1)
    ratio = rng.uniform(lo, hi, size=B)
    k = np.clip(np.round(ratio * n_obs), np.minimum(n_obs, 1), n_obs).astype(np.int64)
    keys = np.where(flat, rng.random(flat.shape), 2.0)
    srt = np.sort(keys, axis=1)
    thr = np.where(k > 0, srt[np.arange(B), np.maximum(k - 1, 0)], -1.0)
    return ((keys <= thr[:, None]) & flat).reshape(obs.shape)


def _iteration_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def init_train_state(model_config: DenoiserConfig, cfg: TrainConfig) -> TrainState:
    params = init_params(model_config, _iteration_rng(cfg.seed, 2))
    return TrainState(params, G.AdamState())


def train_step(state: TrainState, x0, obs_mask, sched: NoiseSchedule, cfg: TrainConfig,
               rng: np.random.Generator, adjacency=None) -> float:
    x0 = np.where(obs_mask, x0, 0.0)
    target = training_mask(obs_mask, rng, cfg.mask_ratio_min, cfg.mask_ratio_max)
    cond = interpolate_conditional(x0, obs_mask & ~target)
    B = x0.shape[0]
    t = rng.integers(1, sched.T + 1, size=B)
    eps = rng.standard_normal(x0.shape)
    x_t = forward_sample(x0, t, eps, sched)
    leaves = parameter_leaves(state.params)
    try:
        with G.Tape() as tape:
            eps_hat = epsilon_theta(x_t, cond, t, state.params, adjacency, leaves=leaves)
            loss = masked_loss(eps, eps_hat, target)
    except ValueError as exc:
        if "non-finite" in str(exc):
            raise NumericalError(
                f"non-finite value at iteration {state.iteration}, t={t.tolist()}: {exc}"
            ) from exc
        raise
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss {value} at iteration {state.iteration}, t={t.tolist()}")
    grads = G.backward(loss, leaves, tape)
    new, state.adam = G.adam_update(state.params.tensors, grads, state.adam, lr=cfg.lr)
    state.params = DenoiserParams(state.params.config, new)
    state.iteration += 1
    state.losses.append(value)
    return value


def train(
    values,
    obs_mask,
    model_config: DenoiserConfig,
    cfg: TrainConfig,
    adjacency=None,
    state: TrainState | None = None,
    on_iteration: Callable[[TrainState], None] | None = None,
) -> TrainState:
    """Train on windows ``values``/``obs_mask`` of shape ``(W, N, C, L)``.

    Each epoch visits the windows in a seed-derived permutation; every
    iteration draws its masks, steps and noise from a stream keyed by
    ``(seed, iteration)``, so passing a saved ``state`` resumes exactly.
    """
    values = np.asarray(values, dtype=np.float64)
    obs_mask = np.asarray(obs_mask).astype(bool)
    if values.ndim != 4 or values.shape[0] == 0:
        raise ValueError(f"need a non-empty (W, N, C, L) dataset, got {values.shape}")
    if not obs_mask.any():
        raise ValueError("dataset has no observed values")
    sched = quadratic_schedule(cfg.beta_1, cfg.beta_T, cfg.n_steps)
    if state is None:
        state = init_train_state(model_config, cfg)
    W = values.shape[0]
    per_epoch = -(-W // cfg.batch_size)
    total = cfg.epochs * per_epoch
    if cfg.max_iters is not None:
        total = min(total, cfg.max_iters)
    while state.iteration < total:
        epoch, pos = divmod(state.iteration, per_epoch)
        order = _iteration_rng(cfg.seed, 0, epoch).permutation(W)
        idx = order[pos * cfg.batch_size:(pos + 1) * cfg.batch_size]
        rng = _iteration_rng(cfg.seed, 1, state.iteration)
        loss = train_step(state, values[idx], obs_mask[idx], sched, cfg, rng, adjacency)
        if state.iteration % 500 == 0:
            log.info("iteration %d/%d loss %.5f", state.iteration, total, loss)
        if on_iteration is not None:
            on_iteration(state)
    return state


# -- imputation ----------------------------------------------------------------

@dataclass
class ImputationResult:
    samples: np.ndarray              # (S, B, N, C, L)
    median: np.ndarray               # (B, N, C, L)
    quantiles: np.ndarray            # (len(levels), B, N, C, L)
    levels: tuple[float, ...] = QUANTILES

    def quantile(self, q: float) -> np.ndarray:
        return self.quantiles[self.levels.index(q)]


def _sample_chunk(cond, obs_values, obs_mask, params, sched, gens, adjacency):
    S = len(gens)
    shape = cond.shape
    x = np.stack([g.standard_normal(shape) for g in gens])
    cond_s = np.broadcast_to(cond, (S,) + shape).reshape((S * shape[0],) + shape[1:])
    for t in range(sched.T, 0, -1):
        eps_hat = predict(x.reshape(cond_s.shape), cond_s, t, params, adjacency).reshape(x.shape)
        mu = reverse_mean(x, eps_hat, t, sched)
        if t > 1:
            noise = np.stack([g.standard_normal(shape) for g in gens])
            x = mu + sched.sigma[t - 1] * noise
        else:
            x = mu
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite sample at step {t}")
    return np.where(obs_mask, obs_values, x)


def impute(
    values,
    obs_mask,
    params: DenoiserParams,
    sched: NoiseSchedule,
    n_samples: int = 10,
    seed: int = 0,
    adjacency=None,
    threads: int = 1,
) -> ImputationResult:
    """Reverse-process imputation of ``(B, N, C, L)`` windows.

    Observed positions are restored after sampling; sample ``s`` draws
    from its own generator spawned from ``seed``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not params.is_finite():
        raise RuntimeError("denoiser parameters contain non-finite values")
    if sched.T != params.config.n_steps:
        raise ValueError(f"schedule has {sched.T} steps, model expects {params.config.n_steps}")
    values = np.asarray(values, dtype=np.float64)
    obs_mask = np.asarray(obs_mask).astype(bool)
    if values.ndim == 3:
        values, obs_mask = values[None], obs_mask[None]
    obs_values = np.where(obs_mask, values, 0.0)
    cond = interpolate_conditional(obs_values, obs_mask)
    gens = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_samples)]
    if threads > 1 and n_samples > 1:
        from concurrent.futures import ThreadPoolExecutor

        chunks = [gens[i::threads] for i in range(min(threads, n_samples))]
        with ThreadPoolExecutor(len(chunks)) as ex:
            parts = list(ex.map(
                lambda c: _sample_chunk(cond, obs_values, obs_mask, params, sched, c, adjacency),
                chunks,
            ))
        samples = np.empty((n_samples,) + values.shape)
        for i, part in enumerate(parts):
            samples[i::threads] = part
    else:
        samples = _sample_chunk(cond, obs_values, obs_mask, params, sched, gens, adjacency)
    median = np.median(samples, axis=0)
    quantiles = np.quantile(samples, QUANTILES, axis=0)
    return ImputationResult(samples, median, quantiles)


# -- checkpoints ---------------------------------------------------------------

def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def _decode(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def save_checkpoint(path, state: TrainState, cfg: TrainConfig, extra: dict | None = None) -> None:
    cfg_model = state.params.config
    doc = {
        "format": CHECKPOINT_FORMAT,
        "schedule": {"beta_1": cfg.beta_1, "beta_T": cfg.beta_T, "T": cfg.n_steps},
        "model": cfg_model.to_dict(),
        "train": cfg.to_dict(),
        "iteration": state.iteration,
        "tensors": {k: _encode(v) for k, v in state.params.tensors.items()},
        "adam": {
            "step": state.adam.step,
            "m": {k: _encode(v) for k, v in state.adam.m.items()},
            "v": {k: _encode(v) for k, v in state.adam.v.items()},
        },
        "losses": state.losses,
        "extra": extra or {},
    }
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


@dataclass
class Checkpoint:
    state: TrainState
    train: TrainConfig
    schedule: NoiseSchedule
    extra: dict


def load_checkpoint(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {doc.get('format')!r}")
    model = DenoiserConfig(**doc["model"])
    params = DenoiserParams(model, {k: _decode(v) for k, v in doc["tensors"].items()})
    adam = G.AdamState(
        doc["adam"]["step"],
        {k: _decode(v) for k, v in doc["adam"]["m"].items()},
        {k: _decode(v) for k, v in doc["adam"]["v"].items()},
    )
    state = TrainState(params, adam, doc["iteration"], list(doc["losses"]))
    sc = doc["schedule"]
    return Checkpoint(state, TrainConfig(**doc["train"]),
                      quadratic_schedule(sc["beta_1"], sc["beta_T"], sc["T"]), doc.get("extra", {}))
