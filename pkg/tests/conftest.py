"""Shared test helpers: parameter packing, finite-difference gradients, the
brute-force mixture oracle, and dataset builders."""

from __future__ import annotations

import numpy as np

from plslab import dataset, nn


# ---------------------------------------------------------------------------
# Parameter packing for gradient checks
# ---------------------------------------------------------------------------

def flatten_params(params: nn.ModelParams) -> np.ndarray:
    parts = []
    for layers in (params.classifier_layers, params.transition_layers):
        for w, b in layers:
            parts.append(w.ravel())
            parts.append(b.ravel())
    return np.concatenate(parts)


def unflatten_params(vec: np.ndarray, like: nn.ModelParams) -> nn.ModelParams:
    out = {"classifier_layers": [], "transition_layers": []}
    i = 0
    for name in ("classifier_layers", "transition_layers"):
        for w, b in getattr(like, name):
            out[name].append((
                vec[i:i + w.size].reshape(w.shape).copy(),
                vec[i + w.size:i + w.size + b.size].copy(),
            ))
            i += w.size + b.size
    return nn.ModelParams(**out)


def flatten_grads(grads: nn.Gradients) -> np.ndarray:
    parts = []
    for layers in (grads.classifier_layers, grads.transition_layers):
        for w, b in layers:
            parts.append(w.ravel())
            parts.append(b.ravel())
    return np.concatenate(parts)


def fd_gradient(loss_of_params, params: nn.ModelParams, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss over every parameter."""
    theta = flatten_params(params)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (loss_of_params(unflatten_params(up, params))
                   - loss_of_params(unflatten_params(down, params))) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Elementwise relative error with a small floor in the denominator so that
    finite-difference noise on near-zero entries does not dominate."""
    denom = np.maximum.reduce([np.abs(analytic), np.abs(numeric), np.full_like(analytic, floor)])
    return float((np.abs(analytic - numeric) / denom).max())


# ---------------------------------------------------------------------------
# Brute-force oracle for the two-component loss mixture
# ---------------------------------------------------------------------------

def grid_mixture_loglik(losses: np.ndarray, mean_grid: int = 100, var_grid: int = 60) -> float:
    """Best log-likelihood of an equal-mixing, shared-variance two-Gaussian
    mixture found by exhaustive search: both means on a mean_grid x mean_grid
    lattice over the loss range, plus a log-spaced variance line search.

    This model family is a subset of what the EM fit can express, so its best
    log-likelihood is a lower bound the EM result must (nearly) clear.
    """
    x = np.asarray(losses, dtype=np.float64).ravel()
    lo, hi = float(x.min()), float(x.max())
    span = max(hi - lo, 1e-9)
    means = np.linspace(lo, hi, mean_grid)
    variances = np.exp(np.linspace(np.log(1e-6 * span ** 2), np.log(4.0 * span ** 2), var_grid))
    best = -np.inf
    for var in variances:
        logp = -0.5 * np.log(2.0 * np.pi * var) - (x[None, :] - means[:, None]) ** 2 / (2.0 * var)
        a = logp[:, None, :] + np.log(0.5)   # component 1: (mean_grid, 1, n)
        b = logp[None, :, :] + np.log(0.5)   # component 2: (1, mean_grid, n)
        ll = np.logaddexp(a, b).sum(axis=2)  # (mean_grid, mean_grid)
        best = max(best, float(ll.max()))
    return best


def mixture_loglik(losses, means, variances, mixing) -> float:
    x = np.asarray(losses, dtype=np.float64).ravel()
    logp = (-0.5 * np.log(2.0 * np.pi * np.asarray(variances))[None, :]
            - (x[:, None] - np.asarray(means)[None, :]) ** 2 / (2.0 * np.asarray(variances))[None, :]
            + np.log(np.maximum(np.asarray(mixing), 1e-300))[None, :])
    peak = logp.max(axis=1, keepdims=True)
    return float((peak[:, 0] + np.log(np.exp(logp - peak).sum(axis=1))).sum())


# ---------------------------------------------------------------------------
# Dataset builders
# ---------------------------------------------------------------------------

def blob_split(seed: int, rate: float, kind: str = "idn", n: int = 2000,
               classes: int = 4, dim: int = 2, sep: float = 3.0):
    """Train/test pair matching the CLI's generation scheme."""
    train = dataset.gen_gaussian_blobs(n, classes, dim, sep, seed)
    if kind == "symmetric":
        train = dataset.inject_symmetric(train, rate, seed)
    elif kind == "asymmetric":
        train = dataset.inject_asymmetric(train, rate, seed)
    elif kind == "idn":
        train = dataset.inject_idn(train, rate, seed)
    test = dataset.gen_gaussian_blobs(n, classes, dim, sep, seed + 1_000_000)
    return train, test
