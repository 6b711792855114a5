"""Evaluation: test accuracy, prior coverage/uncertainty splits, transition
estimation error, and the per-epoch metrics CSV."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, pls
from .dataset import Dataset
from .util import one_hot

CSV_HEADER = "epoch,test_acc,coverage,unc_clean,unc_noisy,transition_mse,loss_ce,loss_pri,loss_kl"


@dataclass
class MetricsRecord:
    epoch: int
    test_acc: float
    coverage: float
    unc_clean: float
    unc_noisy: float
    transition_mse: float
    loss_ce: float
    loss_pri: float
    loss_kl: float


def test_accuracy(params: nn.ModelParams, test_ds: Dataset) -> float:
    """Fraction of samples whose predicted class matches the clean label.

    Argmax ties break toward the lowest class index.
    """
    if len(test_ds) == 0:
        raise ValueError("test set is empty")
    probs = nn.classifier_probs(params, test_ds.x)
    predicted = probs.argmax(axis=1)
    return float((predicted == test_ds.y_clean).mean())


def transition_mse(params: nn.ModelParams, ds: Dataset) -> float:
    """Mean squared error between the transition head's row for the true clean
    class (fed as a one-hot) and the stored ground-truth row, averaged over
    entries and samples."""
    if ds.noise_meta is None or ds.noise_meta.true_transition_rows is None:
        raise ValueError("dataset carries no ground-truth transition rows")
    clean_onehot = one_hot(ds.y_clean, ds.num_classes)
    predicted = nn.transition_probs(params, ds.x, clean_onehot)
    diff = predicted - ds.noise_meta.true_transition_rows
    return float((diff ** 2).mean())


def split_uncertainty(priors: np.ndarray, ds: Dataset) -> tuple[float, float]:
    """Mean prior support size, split by whether the observed label is clean.

    An empty split reports nan for that side.
    """
    priors = np.asarray(priors, dtype=np.float64)
    clean_mask = ds.y_noisy == ds.y_clean
    support_counts = (priors > pls.SUPPORT_EPS).sum(axis=1).astype(np.float64)
    unc_clean = float(support_counts[clean_mask].mean()) if clean_mask.any() else float("nan")
    unc_noisy = float(support_counts[~clean_mask].mean()) if (~clean_mask).any() else float("nan")
    return unc_clean, unc_noisy


def export_csv(records, path) -> None:
    """One row per epoch, floats with 6 decimals; byte-deterministic."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(
                f"{r.epoch},{r.test_acc:.6f},{r.coverage:.6f},{r.unc_clean:.6f},"
                f"{r.unc_noisy:.6f},{r.transition_mse:.6f},{r.loss_ce:.6f},"
                f"{r.loss_pri:.6f},{r.loss_kl:.6f}\n"
            )
