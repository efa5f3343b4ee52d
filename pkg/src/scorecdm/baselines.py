"""Reference imputers used for comparison runs."""

from __future__ import annotations

import numpy as np

from .diffusion import interpolate_conditional


def mean_fill(values, obs_mask, means) -> np.ndarray:
    """Replace unobserved entries with a per-variate constant (e.g. the training mean)."""
    values = np.asarray(values, dtype=np.float64)
    obs = np.asarray(obs_mask).astype(bool)
    return np.where(obs, values, np.broadcast_to(means, values.shape))


def linear_interpolation(values, obs_mask) -> np.ndarray:
    """Per-window linear interpolation with nearest-value hold at the edges."""
    return interpolate_conditional(np.where(obs_mask, values, 0.0), obs_mask)
