"""Per-sample clean-label priors built from three ingredients.

For each training sample the prior over classes is the normalized sum of
(1) the observed noisy label, (2) a coverage candidate sampled from a running
average of the classifier's posterior outputs, and (3) a set of uniformly
drawn extra candidates whose size scales with the estimated probability that
the sample's label is noisy. That probability comes from an unsupervised
two-component Gaussian mixture fit to the per-sample cross-entropy losses:
low-loss samples are treated as likely clean, high-loss ones as likely noisy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import categorical_rows, one_hot, round_counts

PROB_FLOOR = 1e-12
SUPPORT_EPS = 1e-8       # strictly-positive threshold when counting prior support
VARIANCE_FLOOR = 1e-12


@dataclass
class PriorState:
    """Per-sample prior bookkeeping for the whole training set (row i = sample i)."""

    moving_avg: np.ndarray        # (n, C) running average of posterior outputs
    coverage_onehot: np.ndarray   # (n, C) coverage candidate (one-hot; zeros when disabled)
    uncertainty_mask: np.ndarray  # (n, C) 0/1 uniform candidate draws
    noise_prob: np.ndarray        # (n,)   estimated probability the label is noisy
    sample_loss: np.ndarray       # (n,)   cross-entropy of the posterior vs the noisy label
    prior: np.ndarray             # (n, C) normalized clean-label prior

    @classmethod
    def initial(cls, y_noisy: np.ndarray, num_classes: int) -> "PriorState":
        """Warmup state: prior one-hot at the noisy label, running average uniform."""
        n = len(y_noisy)
        onehots = one_hot(y_noisy, num_classes)
        return cls(
            moving_avg=np.full((n, num_classes), 1.0 / num_classes),
            coverage_onehot=onehots.copy(),
            uncertainty_mask=np.zeros((n, num_classes)),
            noise_prob=np.zeros(n),
            sample_loss=np.zeros(n),
            prior=onehots,
        )


@dataclass
class MixtureFit:
    """Two-component 1-D Gaussian mixture fit, components ordered by mean."""

    means: np.ndarray            # (2,) ascending
    variances: np.ndarray        # (2,)
    mixing: np.ndarray           # (2,) sums to 1
    responsibilities: np.ndarray  # (n,) posterior of the higher-mean component


def _check_dist(v: np.ndarray, name: str) -> None:
    if np.any(v < -1e-12) or abs(v.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name} is not a valid probability vector")


def update_moving_average(prev, current, beta: float) -> np.ndarray:
    """beta * prev + (1 - beta) * current; a convex blend of two distributions."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    prev = np.asarray(prev, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    if prev.ndim == 1:
        _check_dist(prev, "prev")
        _check_dist(current, "current")
    return beta * prev + (1.0 - beta) * current


def sample_coverage(dist, rng: np.random.Generator, mode: str = "sample") -> np.ndarray:
    """One-hot coverage candidate: a categorical draw from `dist`, or its argmax."""
    dist = np.asarray(dist, dtype=np.float64)
    _check_dist(dist, "dist")
    if mode == "argmax":
        idx = int(np.argmax(dist))
    elif mode == "sample":
        idx = int(categorical_rows(dist[None, :], rng)[0])
    else:
        raise ValueError(f"unknown coverage mode: {mode!r}")
    return one_hot(idx, dist.shape[0])


def per_sample_loss(ybar, y_noisy: int) -> float:
    """Cross-entropy of a posterior against the observed label, floored logs."""
    ybar = np.asarray(ybar, dtype=np.float64)
    return float(-np.log(max(ybar[y_noisy], PROB_FLOOR)))


def per_sample_losses(posteriors: np.ndarray, y_noisy: np.ndarray) -> np.ndarray:
    picked = posteriors[np.arange(len(y_noisy)), y_noisy]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def _log_normal_pdf(x, mean, var):
    return -0.5 * np.log(2.0 * np.pi * var) - (x - mean) ** 2 / (2.0 * var)


def fit_loss_mixture(losses, max_iter: int = 10, rel_tol: float = 1e-4) -> MixtureFit:
    """EM fit of a two-component 1-D Gaussian mixture to a loss vector.

    Init: means at the min/max loss, both variances at the overall variance,
    equal mixing. Stops after `max_iter` E-steps or when the relative
    log-likelihood change drops below `rel_tol`. An (effectively) constant
    loss vector is degenerate: every responsibility is 0.5.
    """
    x = np.asarray(losses, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least two loss values to fit the mixture")
    spread = float(x.max() - x.min())
    if spread <= 1e-12 * max(1.0, abs(float(x.mean()))):
        m = float(x.mean())
        return MixtureFit(
            means=np.array([m, m]),
            variances=np.array([VARIANCE_FLOOR, VARIANCE_FLOOR]),
            mixing=np.array([0.5, 0.5]),
            responsibilities=np.full(x.size, 0.5),
        )

    means = np.array([float(x.min()), float(x.max())])
    var = max(float(x.var()), VARIANCE_FLOOR)
    variances = np.array([var, var])
    mixing = np.array([0.5, 0.5])
    resp = np.full((x.size, 2), 0.5)
    prev_ll = None
    for _ in range(max_iter):
        logp = _log_normal_pdf(x[:, None], means[None, :], variances[None, :]) \
            + np.log(np.maximum(mixing, PROB_FLOOR))[None, :]
        peak = logp.max(axis=1, keepdims=True)
        norm = peak[:, 0] + np.log(np.exp(logp - peak).sum(axis=1))
        resp = np.exp(logp - norm[:, None])
        ll = float(norm.sum())
        if prev_ll is not None and abs(ll - prev_ll) < rel_tol * max(1.0, abs(prev_ll)):
            break
        prev_ll = ll
        weight = resp.sum(axis=0)
        weight = np.maximum(weight, PROB_FLOOR)
        means = (resp * x[:, None]).sum(axis=0) / weight
        variances = np.maximum(
            (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / weight, VARIANCE_FLOOR)
        mixing = weight / weight.sum()

    if means[0] > means[1]:
        means, variances, mixing = means[::-1], variances[::-1], mixing[::-1]
        resp = resp[:, ::-1]
    return MixtureFit(means.copy(), variances.copy(), mixing.copy(), resp[:, 1].copy())


def sample_uncertainty(noise_prob: float, num_classes: int, rng: np.random.Generator,
                       rounding: str = "half_up") -> np.ndarray:
    """0/1 mask of round(num_classes * noise_prob) distinct classes drawn uniformly
    without replacement; round-half-up by default, ceiling behind `rounding`."""
    if not 0.0 <= noise_prob <= 1.0:
        raise ValueError(f"noise_prob must be in [0, 1], got {noise_prob}")
    k = int(round_counts(num_classes * noise_prob, rounding))
    k = min(max(k, 0), num_classes)
    mask = np.zeros(num_classes)
    if k:
        mask[rng.choice(num_classes, size=k, replace=False)] = 1.0
    return mask


def _sample_uncertainty_batch(noise_prob: np.ndarray, num_classes: int,
                              rng: np.random.Generator, rounding: str) -> np.ndarray:
    # Top-k of random keys per row = uniform subset without replacement.
    k = np.clip(round_counts(num_classes * noise_prob, rounding), 0, num_classes)
    keys = rng.random((len(noise_prob), num_classes))
    ranks = keys.argsort(axis=1).argsort(axis=1)
    return (ranks < k[:, None]).astype(np.float64)


def build_prior(y_noisy_onehot, coverage_onehot, uncertainty_mask) -> np.ndarray:
    """Normalized elementwise sum of the three candidate vectors.

    Accepts single vectors or stacked (n, C) batches. The noisy-label one-hot
    contributes mass 1, so the total is always positive.
    """
    total = (np.asarray(y_noisy_onehot, dtype=np.float64)
             + np.asarray(coverage_onehot, dtype=np.float64)
             + np.asarray(uncertainty_mask, dtype=np.float64))
    return total / total.sum(axis=-1, keepdims=True)


def coverage_uncertainty(priors: np.ndarray, clean_labels: np.ndarray) -> tuple[float, float]:
    """Coverage: fraction of samples whose prior puts positive mass on the clean
    class. Uncertainty: mean number of classes with positive prior mass."""
    priors = np.atleast_2d(np.asarray(priors, dtype=np.float64))
    clean_labels = np.asarray(clean_labels, dtype=np.int64)
    if priors.shape[0] == 0:
        raise ValueError("coverage/uncertainty undefined for an empty prior set")
    support = priors > SUPPORT_EPS
    coverage = float(support[np.arange(priors.shape[0]), clean_labels].mean())
    uncertainty = float(support.sum(axis=1).mean())
    return coverage, uncertainty


def refresh(state: PriorState, posteriors: np.ndarray, y_noisy: np.ndarray,
            rng: np.random.Generator, *, beta: float,
            coverage_mode: str = "sample", use_coverage: bool = True,
            use_uncertainty: bool = True, uniform_noise_prob: bool = False,
            rounding: str = "half_up") -> None:
    """Once-per-epoch prior rebuild from the current posterior outputs.

    Updates the running average, refits the loss mixture, resamples the
    coverage candidate and the uncertainty draws, and rebuilds every prior.
    """
    n, num_classes = posteriors.shape
    state.sample_loss = per_sample_losses(posteriors, y_noisy)
    state.moving_avg = update_moving_average(state.moving_avg, posteriors, beta)
    if uniform_noise_prob:
        state.noise_prob = np.full(n, 0.5)
    else:
        state.noise_prob = fit_loss_mixture(state.sample_loss).responsibilities
    if use_coverage:
        if coverage_mode == "argmax":
            idx = state.moving_avg.argmax(axis=1)
        elif coverage_mode == "sample":
            idx = categorical_rows(state.moving_avg, rng)
        else:
            raise ValueError(f"unknown coverage mode: {coverage_mode!r}")
        state.coverage_onehot = one_hot(idx, num_classes)
    else:
        state.coverage_onehot = np.zeros((n, num_classes))
    if use_uncertainty:
        state.uncertainty_mask = _sample_uncertainty_batch(
            state.noise_prob, num_classes, rng, rounding)
    else:
        state.uncertainty_mask = np.zeros((n, num_classes))
    state.prior = build_prior(one_hot(y_noisy, num_classes),
                              state.coverage_onehot, state.uncertainty_mask)


def export_prior_csv(state: PriorState, path) -> None:
    """Per-sample prior snapshot: id,w,ell,prior0..prior{C-1}."""
    num_classes = state.prior.shape[1]
    header = "id,w,ell," + ",".join(f"prior{j}" for j in range(num_classes))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for i in range(state.prior.shape[0]):
            row = ",".join(f"{v:.6f}" for v in state.prior[i])
            fh.write(f"{i},{state.noise_prob[i]:.6f},{state.sample_loss[i]:.6f},{row}\n")
