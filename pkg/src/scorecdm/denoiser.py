"""Noise-prediction backbone: score-weighted mixing, sine-basis spectral kernels
and attention across variates.

Tensors are laid out as ``(batch, variate, channel, time)``. Hidden channels
have width ``d``; the per-layer time-mixing matrices are ``L x L``.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import grad as G
from .grad import Tensor

ATTN_EPS = 1e-6


@dataclass(frozen=True)
class DenoiserConfig:
    length: int = 24          # window length L
    channels: int = 1         # data channels C
    d: int = 64               # hidden channel size
    n_steps: int = 50         # diffusion steps T
    n_layers: int = 2
    use_s2twb: bool = True
    use_scm: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DenoiserParams:
    """All learnable arrays of the denoiser, keyed by dotted name."""

    config: DenoiserConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def layer(self, i: int) -> dict[str, np.ndarray]:
        prefix = f"layers.{i}."
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def init_params(config: DenoiserConfig, rng: np.random.Generator) -> DenoiserParams:
    L, C, d = config.length, config.channels, config.d
    t: dict[str, np.ndarray] = {}
    t["input_proj"] = rng.uniform(-1, 1, (d, 2 * C)) / np.sqrt(2 * C)
    t["step_embedding"] = rng.normal(0.0, 1.0, (config.n_steps, d)) / np.sqrt(d)
    proj = 1.0 / np.sqrt(L)
    for i in range(config.n_layers):
        p = f"layers.{i}."
        if config.use_scm:
            t[p + "w_q"] = rng.uniform(-proj, proj, (L, L))
            t[p + "w_k"] = rng.uniform(-proj, proj, (L, L))
            t[p + "shift"] = np.zeros((d, L))
        t[p + "w_m"] = rng.uniform(-proj, proj, (L, L))
        if config.use_s2twb:
            t[p + "w_sin"] = rng.uniform(-1.0 / L, 1.0 / L, L)
        for name in ("attn_q", "attn_k", "attn_v"):
            t[p + name] = rng.uniform(-1, 1, (d, d)) / np.sqrt(d)
    t["output_proj"] = rng.uniform(-1, 1, (C, d)) / np.sqrt(d)
    return DenoiserParams(config, t)


# -- building blocks -----------------------------------------------------------

def matrix_projection(x, w_q, w_k, w_m):
    """Project each channel row of ``x`` (``..., C, L``) through ``L x L`` matrices."""
    x = G._lift(x)
    for w in (w_q, w_k, w_m):
        if w is not None and G._lift(w).shape != (x.shape[-1], x.shape[-1]):
            raise ValueError(
                f"matrix_projection: width {x.shape[-1]} vs projection {G._lift(w).shape}"
            )
    return tuple(None if w is None else G.matmul(x, w) for w in (w_q, w_k, w_m))


def synthesize_kernel(w_sin, length: int) -> Tensor:
    w_sin = G._lift(w_sin)
    if w_sin.shape != (length,):
        raise ValueError(f"synthesize_kernel: weights {w_sin.shape} for L={length}")
    return G.sine_synthesis(w_sin)


def delta_kernel(length: int) -> np.ndarray:
    k = np.zeros(length)
    k[0] = 1.0
    return k


def score_weighted_mix(q, k, m, shift, kernel) -> Tensor:
    """``Y = kernel * ((exp(Q.K) + w) . M) / sum_t exp(Q.K)`` per channel.

    ``*`` is circular convolution along time; the denominator is a
    per-channel scalar. Any operand may carry extra leading axes.
    """
    q, k, m, shift, kernel = (G._lift(a) for a in (q, k, m, shift, kernel))
    if not (q.shape == k.shape == m.shape):
        raise ValueError(f"score_weighted_mix: Q{q.shape} K{k.shape} M{m.shape}")
    if shift.shape != m.shape[-shift.data.ndim:] or kernel.shape[-1] != m.shape[-1]:
        raise ValueError(
            f"score_weighted_mix: shift {shift.shape}, kernel {kernel.shape} for M {m.shape}"
        )
    scores = G.exp(G.mul(q, k))
    numer = G.circular_conv(kernel, G.mul(G.add(scores, shift), m))
    return G.div(numer, G.sum_axis(scores, -1))


def uniform_mix(m, kernel) -> Tensor:
    """Mixing without score map: ``kernel * M``."""
    return G.circular_conv(kernel, m)


def score_map(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    s = np.exp(np.minimum(q * k, G.EXP_CLAMP))
    return s / np.sum(s, axis=-1, keepdims=True)


def attention_bias(adjacency: np.ndarray | None, n: int) -> np.ndarray | None:
    if adjacency is None:
        return None
    a = np.asarray(adjacency, dtype=np.float64)
    if a.shape != (n, n):
        raise ValueError(f"adjacency shape {a.shape} does not match {n} variates")
    if np.any(a < 0):
        raise ValueError("adjacency entries must be nonnegative")
    return np.log(a + ATTN_EPS)


def variate_attention(y, w_q, w_k, w_v, adjacency=None) -> Tensor:
    """Attention across variates at every time step; ``y`` is ``(..., N, d, L)``."""
    y = G._lift(y)
    nd = y.data.ndim
    bias = attention_bias(adjacency, y.shape[-3])
    # (..., N, d, L) -> (..., L, N, d)
    perm = tuple(range(nd - 3)) + (nd - 1, nd - 3, nd - 2)
    tokens = G.transpose(y, perm)
    out = G.scaled_dot_attention(
        G.matmul(tokens, w_q), G.matmul(tokens, w_k), G.matmul(tokens, w_v), bias
    )
    return G.transpose(out, tuple(np.argsort(perm)))


# -- full network --------------------------------------------------------------

def _leaves(params: DenoiserParams, requires_grad: bool) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.tensors.items()}


def epsilon_theta(
    x_t,
    cond,
    t,
    params: DenoiserParams,
    adjacency: np.ndarray | None = None,
    leaves: dict[str, Tensor] | None = None,
    trace: list | None = None,
) -> Tensor:
    """Predict the noise in ``x_t`` given conditional guidance ``cond``.

    ``x_t``/``cond``: ``(B, N, C, L)`` or ``(N, C, L)``. ``t``: step(s) in
    ``1..T``, scalar or one per batch element. Pass ``leaves`` (from
    :func:`parameter_leaves`) to differentiate with respect to parameters.
    """
    cfg = params.config
    x_t = G._lift(x_t)
    cond = G._lift(cond)
    if x_t.shape != cond.shape:
        raise ValueError(f"x_t {x_t.shape} and cond {cond.shape} differ")
    unbatched = x_t.data.ndim == 3
    if unbatched:
        x_t = G.reshape(x_t, (1,) + x_t.shape)
        cond = G.reshape(cond, (1,) + cond.shape)
    if x_t.data.ndim != 4 or x_t.shape[2] != cfg.channels or x_t.shape[3] != cfg.length:
        raise ValueError(
            f"input shape {x_t.shape} incompatible with C={cfg.channels}, L={cfg.length}"
        )
    B = x_t.shape[0]
    steps = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,))
    if np.any(steps < 1) or np.any(steps > cfg.n_steps):
        raise ValueError(f"diffusion step out of range 1..{cfg.n_steps}: {t}")
    P = leaves if leaves is not None else _leaves(params, False)

    h = G.matmul(P["input_proj"], G.concat([x_t, cond], axis=2))
    emb = G.take_rows(P["step_embedding"], steps - 1)
    h = G.add(h, G.reshape(emb, (B, 1, cfg.d, 1)))
    for i in range(cfg.n_layers):
        h = _layer(h, P, f"layers.{i}.", cfg, adjacency, trace)
    out = G.matmul(P["output_proj"], h)
    if unbatched:
        out = G.reshape(out, out.shape[1:])
    return out


def _layer(h, P, prefix, cfg: DenoiserConfig, adjacency, trace) -> Tensor:
    # pre-norm blocks: the residual stream itself is never rescaled
    kernel = (synthesize_kernel(P[prefix + "w_sin"], cfg.length)
              if cfg.use_s2twb else Tensor(delta_kernel(cfg.length)))
    u = G.layer_norm(h, axis=2)
    if cfg.use_scm:
        q, k, m = matrix_projection(u, P[prefix + "w_q"], P[prefix + "w_k"], P[prefix + "w_m"])
        if trace is not None:
            trace.append(score_map(q.data, k.data))
        y = score_weighted_mix(q, k, m, P[prefix + "shift"], kernel)
    else:
        _, _, m = matrix_projection(u, None, None, P[prefix + "w_m"])
        y = uniform_mix(m, kernel)
    h = G.add(h, y)
    a = variate_attention(G.layer_norm(h, axis=2), P[prefix + "attn_q"], P[prefix + "attn_k"],
                          P[prefix + "attn_v"], adjacency)
    return G.add(h, a)


def parameter_leaves(params: DenoiserParams) -> dict[str, Tensor]:
    return _leaves(params, True)


def predict(x_t, cond, t, params: DenoiserParams, adjacency=None) -> np.ndarray:
    """Tape-free forward pass returning a plain array."""
    return epsilon_theta(x_t, cond, t, params, adjacency).data


def layer_score_maps(x_t, cond, t, params: DenoiserParams, adjacency=None) -> list[np.ndarray]:
    """Per-layer normalised score maps ``exp(Q.K)/sum exp(Q.K)``.

    Each entry has shape ``(B, N, d, L)`` (no batch axis for unbatched
    input). Empty when the score-weighted mix is disabled.
    """
    trace: list[np.ndarray] = []
    epsilon_theta(x_t, cond, t, params, adjacency, trace=trace)
    if np.ndim(x_t) == 3:
        trace = [m[0] for m in trace]
    return trace


def export_score_map(path, scores: np.ndarray) -> None:
    """Write a ``channels x time`` score matrix as CSV (rows = channels)."""
    scores = np.asarray(scores)
    if scores.ndim != 2:
        raise ValueError(f"score map must be 2-D (channels x time), got {scores.shape}")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel"] + [f"t{j}" for j in range(scores.shape[1])])
        for c, row in enumerate(scores):
            w.writerow([c] + [repr(float(v)) for v in row])
