"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np

from scorecdm import grad as G

H = 1e-5


def numeric_grad(f, arrays: dict, name: str, h: float = H) -> np.ndarray:
    base = arrays[name]
    out = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus = {**arrays, name: base.copy()}
        minus = {**arrays, name: base.copy()}
        plus[name][idx] += h
        minus[name][idx] -= h
        out[idx] = (f(plus) - f(minus)) / (2 * h)
    return out


def analytic_grads(build, arrays: dict) -> dict:
    leaves = {k: G.Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    with G.Tape() as tape:
        loss = build(leaves)
    return G.backward(loss, leaves, tape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst absolute deviation scaled by the largest numeric gradient entry."""
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def check(build, arrays: dict, tol: float = 1e-4) -> dict:
    """Compare tape gradients of the scalar ``build(tensors)`` with central differences."""
    grads = analytic_grads(build, arrays)

    def f(arrs):
        return float(build({k: G.Tensor(v) for k, v in arrs.items()}).data)

    errors = {k: relative_error(grads[k], numeric_grad(f, arrays, k)) for k in arrays}
    bad = {k: e for k, e in errors.items() if not e <= tol}
    assert not bad, f"finite-difference mismatch: {bad}"
    return errors
