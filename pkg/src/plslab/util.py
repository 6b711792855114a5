"""Small shared helpers: one-hot encoding and seeded categorical sampling."""

from __future__ import annotations

import numpy as np


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (num_classes,), dtype=np.float64)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def categorical_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one class index per row of a matrix of (approximately normalized)
    row distributions. One uniform draw per row; zero-mass classes are never
    selected (up to float dust on cdf boundaries)."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    cdf = np.cumsum(probs, axis=1)
    cdf = cdf / cdf[:, -1:]
    u = rng.random(probs.shape[0])
    return (cdf < u[:, None]).sum(axis=1)


def round_counts(x, mode: str = "half_up") -> np.ndarray:
    """Integer candidate counts from fractional values.

    half_up: floor(x + 0.5), so 4.5 -> 5 (numpy's banker's rounding would give 4).
    ceil: ceiling.
    """
    x = np.asarray(x, dtype=np.float64)
    if mode == "half_up":
        return np.floor(x + 0.5).astype(np.int64)
    if mode == "ceil":
        return np.ceil(x).astype(np.int64)
    raise ValueError(f"unknown rounding mode: {mode!r}")
