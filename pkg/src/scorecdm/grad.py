"""Tape-based reverse-mode differentiation over a closed set of tensor ops.

Usage::

    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        loss = total(mul(x, x))
    grads = tape.backward(loss)      # {id(x): array([2., 4., 6.])}

Ops executed outside an active tape are plain numpy evaluations; nothing is
recorded. A tape is single-owner; separate threads each open their own.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fourier

EXP_CLAMP = 60.0
LN_EPS = 1e-5

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "scorecdm_active_tape", default=None
)


class Tensor:
    """Real-valued array node; leaves with ``requires_grad`` are parameters."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def op(self) -> str:
        return self._op

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape})"


@dataclass
class Tape:
    """Records op nodes in execution order (hence topologically sorted)."""

    nodes: list[Tensor] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of a scalar ``loss`` for every grad-requiring leaf, keyed by ``id``."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = adj.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if parent._backward is None:
                    leaves[key] = leaves[key] + pg if key in leaves else pg
                else:
                    adj[key] = adj[key] + pg if key in adj else pg
        if loss._backward is None and loss.requires_grad:
            leaves[id(loss)] = np.ones_like(loss.data)
        return leaves


def backward(loss: Tensor, params: dict[str, Tensor], tape: Tape) -> dict[str, np.ndarray]:
    """Named gradient map; parameters the loss does not touch get zeros."""
    raw = tape.backward(loss)
    return {k: raw.get(id(p), np.zeros_like(p.data)) for k, p in params.items()}


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, op: str, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor(data, name=op)
    tape = _active_tape.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bwd
        out._op = op
        tape.nodes.append(out)
    return out


def pairwise_sum(x: np.ndarray, axis: int) -> np.ndarray:
    """Tree reduction along ``axis`` (deterministic order, keeps dims)."""
    x = np.moveaxis(np.asarray(x), axis, -1)
    while x.shape[-1] > 1:
        n = x.shape[-1]
        half = n // 2
        head = x[..., :half] + x[..., half:2 * half]
        x = np.concatenate([head, x[..., 2 * half:]], axis=-1) if n % 2 else head
    return np.moveaxis(x, -1, axis)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    for _ in range(extra):
        g = pairwise_sum(g, 0)[0]
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = pairwise_sum(g, ax)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("add", a, b)
    return _node(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("sub", a, b)
    return _node(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("mul", a, b)
    return _node(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise ValueError("div: zero in denominator")
    out = a.data / b.data

    def bwd(g):
        return (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape))

    return _node(out, "div", (a, b), bwd)


def exp(x) -> Tensor:
    """``exp(min(x, 60))``; the clamp zeroes the gradient where it binds."""
    x = _lift(x)
    clamped = np.minimum(x.data, EXP_CLAMP)
    out = np.exp(clamped)
    live = x.data <= EXP_CLAMP
    return _node(out, "exp", (x,), lambda g: (g * out * live,))


# -- reductions / shape --------------------------------------------------------

def total(x) -> Tensor:
    x = _lift(x)
    flat = x.data.reshape(-1)
    return _node(pairwise_sum(flat, 0).reshape(()), "total", (x,),
                 lambda g: (np.broadcast_to(g, x.shape).copy(),))


def sum_axis(x, axis: int, keepdims: bool = True) -> Tensor:
    x = _lift(x)
    ax = axis % x.data.ndim
    out = pairwise_sum(x.data, ax)
    if not keepdims:
        out = np.squeeze(out, axis=ax)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, "sum", (x,), bwd)


def reshape(x, shape) -> Tensor:
    x = _lift(x)
    return _node(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = _lift(x)
    inv = np.argsort(axes)
    return _node(np.transpose(x.data, axes), "transpose", (x,),
                 lambda g: (np.transpose(g, inv),))


def concat(xs: Sequence, axis: int) -> Tensor:
    xs = tuple(_lift(x) for x in xs)
    ax = axis % xs[0].data.ndim
    sizes = np.cumsum([x.shape[ax] for x in xs])[:-1]
    return _node(np.concatenate([x.data for x in xs], axis=ax), "concat", xs,
                 lambda g: tuple(np.split(g, sizes, axis=ax)))


def take_rows(table, index) -> Tensor:
    """Gather rows ``table[index]`` (embedding lookup)."""
    table = _lift(table)
    index = np.asarray(index, dtype=np.int64)

    def bwd(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(table.data[index], "take_rows", (table,), bwd)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        if b.data.ndim == 2 and a.data.ndim > 2:
            # shared right operand: fold batch axes into one GEMM
            k = a.shape[-1]
            ga = g @ b.data.T
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            return (_unbroadcast(ga, a.shape), gb)
        if a.data.ndim == 2 and b.data.ndim > 2:
            gb = a.data.T @ g
            ga = np.swapaxes(g, -1, -2).reshape(-1, g.shape[-2]).T @ \
                np.swapaxes(b.data, -1, -2).reshape(-1, b.shape[-2])
            return (ga, _unbroadcast(gb, b.shape))
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _node(out, "matmul", (a, b), bwd)


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    x = _lift(x)
    out = _softmax(x.data, axis)

    def bwd(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _node(out, "softmax", (x,), bwd)


def scaled_dot_attention(q, k, v, bias: np.ndarray | None = None) -> Tensor:
    """``softmax(q k^T / sqrt(d) + bias) v`` over the second-to-last axis.

    ``q``, ``k``, ``v`` have shape ``(..., n, d)``; ``bias`` (constant)
    broadcasts against the ``(..., n, n)`` logits.
    """
    q, k, v = _lift(q), _lift(k), _lift(v)
    if not (q.shape == k.shape and k.shape[:-1] == v.shape[:-1]):
        raise ValueError(f"attention: shapes q{q.shape} k{k.shape} v{v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    if bias is not None:
        n = q.shape[-2]
        if bias.shape[-2:] != (n, n):
            raise ValueError(f"attention: bias shape {bias.shape} for {n} tokens")
        logits = logits + bias
    p = _softmax(logits, -1)
    out = p @ v.data

    def bwd(g):
        gv = np.swapaxes(p, -1, -2) @ g
        gp = g @ np.swapaxes(v.data, -1, -2)
        gl = p * (gp - np.sum(gp * p, axis=-1, keepdims=True)) * scale
        gq = gl @ k.data
        gk = np.swapaxes(gl, -1, -2) @ q.data
        return (gq, gk, gv)

    return _node(out, "attention", (q, k, v), bwd)


def layer_norm(x, axis: int) -> Tensor:
    """Zero-mean, unit-variance normalisation along ``axis`` (no affine)."""
    x = _lift(x)
    mu = np.mean(x.data, axis=axis, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt(np.mean(xc * xc, axis=axis, keepdims=True) + LN_EPS)
    y = xc * inv

    def bwd(g):
        gm = np.mean(g, axis=axis, keepdims=True)
        gy = np.mean(g * y, axis=axis, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _node(y, "layer_norm", (x,), bwd)


# -- spectral ops --------------------------------------------------------------

def sine_basis(length: int) -> np.ndarray:
    """``S[i-1, t] = sin(i * 2 pi t / L)`` for ``i = 1..L``, ``t = 0..L-1``."""
    i = np.arange(1, length + 1)[:, None]
    t = np.arange(length)[None, :]
    # (i*t) mod L keeps the argument in [0, 2 pi)
    return np.sin(2.0 * np.pi * ((i * t) % length) / length)


def sine_synthesis(w) -> Tensor:
    """Kernel ``K[t] = sum_i w[i] sin(i x_t)`` on the grid ``x_t = 2 pi t / L``."""
    w = _lift(w)
    basis = sine_basis(w.shape[-1])
    return _node(w.data @ basis, "sine_synthesis", (w,), lambda g: (g @ basis.T,))


def circular_conv(kernel, x) -> Tensor:
    """Circular convolution along the last (time) axis, broadcasting the rest.

    Spectra from the forward pass are reused: the input gradient is the
    upstream gradient convolved with the index-reversed kernel, whose
    spectrum is the conjugate of the kernel spectrum (and likewise for the
    kernel gradient).
    """
    kernel, x = _lift(kernel), _lift(x)
    if kernel.shape[-1] != x.shape[-1]:
        raise ValueError(f"circular_conv: lengths {kernel.shape} vs {x.shape}")
    _broadcast_shape("circular_conv", kernel, x)
    K = fourier.fft(kernel.data)
    X = fourier.fft(x.data)
    scale = np.max(np.abs(kernel.data), initial=0.0) * np.max(np.abs(x.data), initial=0.0)
    n = x.shape[-1]
    out = fourier.real_part(fourier.ifft(K * X), scale * n)

    def bwd(g):
        Gs = fourier.fft(g)
        gscale = np.max(np.abs(g), initial=0.0)
        gx = _unbroadcast(fourier.real_part(fourier.ifft(np.conj(K) * Gs), gscale * scale * n), x.shape) \
            if x.requires_grad else None
        gk = None
        if kernel.requires_grad:
            spec = np.conj(X) * Gs
            spec = _unbroadcast(spec.real, kernel.shape) + 1j * _unbroadcast(spec.imag, kernel.shape)
            gk = fourier.real_part(fourier.ifft(spec), gscale * scale * n * max(1, g.size // n))
        return (gk, gx)

    return _node(out, "circular_conv", (kernel, x), bwd)


# -- optimiser -----------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam step; returns fresh params and state."""
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam: grad shape {g.shape} != param shape {p.shape} for {name}")
        m0 = state.m.get(name, np.zeros_like(p))
        v0 = state.v.get(name, np.zeros_like(p))
        if m0.shape != p.shape or v0.shape != p.shape:
            raise ValueError(f"adam: state shape mismatch for {name}")
        m = beta1 * m0 + (1.0 - beta1) * g
        v = beta2 * v0 + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(step, new_m, new_v)
