"""Feed-forward cores: the posterior classifier and the label-transition head.

Both networks are small tanh MLPs ending in a softmax. Forward passes can run
either as plain numpy (for evaluation) or on the differentiation tape (for
training); both paths share the same kernels and agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .tape import Tensor

CHECKPOINT_HEADER = "plslab-checkpoint v1"


@dataclass
class ModelParams:
    """Layered (weight, bias) pairs for the classifier and the transition head.

    The classifier maps feature vectors to class logits; the transition head
    maps a feature vector concatenated with a class distribution to logits for
    the observed (noisy) label.
    """

    classifier_layers: list[tuple[np.ndarray, np.ndarray]]
    transition_layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def feature_dim(self) -> int:
        return self.classifier_layers[0][0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.classifier_layers[-1][0].shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            [(w.copy(), b.copy()) for w, b in self.classifier_layers],
            [(w.copy(), b.copy()) for w, b in self.transition_layers],
        )


@dataclass
class Gradients:
    """Loss gradients, shape-identical to :class:`ModelParams`."""

    classifier_layers: list[tuple[np.ndarray, np.ndarray]]
    transition_layers: list[tuple[np.ndarray, np.ndarray]]


def init_params(feature_dim: int, num_classes: int, hidden, rng: np.random.Generator) -> ModelParams:
    """Seeded init: weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero."""
    if feature_dim < 1 or num_classes < 2:
        raise ValueError("need feature_dim >= 1 and num_classes >= 2")

    def make(sizes):
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layers.append((w, np.zeros(fan_out)))
        return layers

    hidden = tuple(int(h) for h in hidden)
    return ModelParams(
        classifier_layers=make((feature_dim, *hidden, num_classes)),
        transition_layers=make((feature_dim + num_classes, *hidden, num_classes)),
    )


# ---------------------------------------------------------------------------
# Tape-based forward passes (training path)
# ---------------------------------------------------------------------------

@dataclass
class ParamLeaves:
    """Tape leaves wrapping one set of parameters for a single loss graph."""

    classifier_layers: list[tuple[Tensor, Tensor]]
    transition_layers: list[tuple[Tensor, Tensor]]


@dataclass
class Trace:
    """A completed forward graph: the output node plus the parameter leaves."""

    output: Tensor
    leaves: ParamLeaves


def make_leaves(params: ModelParams) -> ParamLeaves:
    return ParamLeaves(
        [(Tensor(w), Tensor(b)) for w, b in params.classifier_layers],
        [(Tensor(w), Tensor(b)) for w, b in params.transition_layers],
    )


def _mlp_logits(layers: list[tuple[Tensor, Tensor]], x: Tensor) -> Tensor:
    h = x
    for w, b in layers[:-1]:
        h = tape.tanh(tape.affine(h, w, b))
    w, b = layers[-1]
    return tape.affine(h, w, b)


def classifier_dist(leaves: ParamLeaves, x: Tensor) -> Tensor:
    return tape.softmax(_mlp_logits(leaves.classifier_layers, x))


def transition_dist(leaves: ParamLeaves, x: Tensor, y_dist: Tensor) -> Tensor:
    return tape.softmax(_mlp_logits(leaves.transition_layers, tape.concat_cols(x, y_dist)))


def collect_gradients(leaves: ParamLeaves) -> Gradients:
    def grab(pairs):
        out = []
        for w, b in pairs:
            gw = w.grad if w.grad is not None else np.zeros_like(w.value)
            gb = b.grad if b.grad is not None else np.zeros_like(b.value)
            out.append((np.asarray(gw, dtype=np.float64), np.asarray(gb, dtype=np.float64)))
        return out

    return Gradients(grab(leaves.classifier_layers), grab(leaves.transition_layers))


def backward(loss: Tensor, leaves: ParamLeaves) -> Gradients:
    """Differentiate a scalar loss node and gather parameter gradients."""
    if loss.value.ndim != 0:
        raise ValueError("backward expects a scalar loss node")
    tape.backward(loss)
    return collect_gradients(leaves)


# ---------------------------------------------------------------------------
# Plain forward passes (evaluation path)
# ---------------------------------------------------------------------------

def _plain_logits(layers, x: np.ndarray) -> np.ndarray:
    h = x
    for w, b in layers[:-1]:
        h = np.tanh(h @ w + b)
    w, b = layers[-1]
    return h @ w + b


def classifier_probs(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.feature_dim:
        raise ValueError(f"expected feature dim {params.feature_dim}, got {x.shape[1]}")
    out = tape.softmax_rows(_plain_logits(params.classifier_layers, x))
    return out[0] if squeeze else out


def transition_probs(params: ModelParams, x: np.ndarray, y_dist: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y_dist = np.asarray(y_dist, dtype=np.float64)
    squeeze = x.ndim == 1
    x, y_dist = np.atleast_2d(x), np.atleast_2d(y_dist)
    if x.shape[1] != params.feature_dim or y_dist.shape[1] != params.num_classes:
        raise ValueError("transition input dimensions do not match the parameters")
    joint = np.concatenate([x, y_dist], axis=1)
    out = tape.softmax_rows(_plain_logits(params.transition_layers, joint))
    return out[0] if squeeze else out


def forward_classifier(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, Trace]:
    """Single-sample classifier forward on the tape; returns (probs, trace)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.feature_dim:
        raise ValueError(f"expected a feature vector of length {params.feature_dim}")
    leaves = make_leaves(params)
    dist = classifier_dist(leaves, tape.constant(x[None, :]))
    return dist.value[0], Trace(dist, leaves)


def forward_transition(params: ModelParams, x: np.ndarray, y_dist: np.ndarray) -> tuple[np.ndarray, Trace]:
    x = np.asarray(x, dtype=np.float64)
    y_dist = np.asarray(y_dist, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.feature_dim:
        raise ValueError(f"expected a feature vector of length {params.feature_dim}")
    if y_dist.ndim != 1 or y_dist.shape[0] != params.num_classes:
        raise ValueError(f"expected a class distribution of length {params.num_classes}")
    leaves = make_leaves(params)
    dist = transition_dist(leaves, tape.constant(x[None, :]), tape.constant(y_dist[None, :]))
    return dist.value[0], Trace(dist, leaves)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def sgd_step(params: ModelParams, grads: Gradients, lr: float, weight_decay: float = 0.0) -> ModelParams:
    """One SGD step with decoupled-from-nothing plain L2: p <- p - lr*(g + wd*p).

    lr=0 is allowed as a degenerate no-op (useful in tests). Non-finite
    gradients abort with a message naming the offending parameter.
    """
    if lr < 0 or weight_decay < 0:
        raise ValueError("lr and weight_decay must be nonnegative")

    def step(pairs, gpairs, tag):
        out = []
        for i, ((w, b), (gw, gb)) in enumerate(zip(pairs, gpairs)):
            for name, g in (("W", gw), ("b", gb)):
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(
                        f"non-finite gradient at {tag}[{i}].{name}; training aborted"
                    )
            out.append((w - lr * (gw + weight_decay * w), b - lr * (gb + weight_decay * b)))
        return out

    return ModelParams(
        step(params.classifier_layers, grads.classifier_layers, "classifier_layers"),
        step(params.transition_layers, grads.transition_layers, "transition_layers"),
    )


# ---------------------------------------------------------------------------
# Checkpoints (versioned text dump; round-trips float64 exactly via %.17g)
# ---------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, path) -> None:
    lines = [CHECKPOINT_HEADER]
    for tag, layers in (("classifier", params.classifier_layers),
                        ("transition", params.transition_layers)):
        lines.append(f"{tag} {len(layers)}")
        for w, b in layers:
            lines.append(f"layer {w.shape[0]} {w.shape[1]}")
            for row in w:
                lines.append(" ".join(f"{v:.17g}" for v in row))
            lines.append(" ".join(f"{v:.17g}" for v in b))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a recognized checkpoint (bad header)")
    pos = 1

    def read_section(tag):
        nonlocal pos
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != tag:
            raise ValueError(f"{path}: expected '{tag} <n>' at line {pos + 1}")
        count = int(parts[1])
        pos += 1
        layers = []
        for _ in range(count):
            head = lines[pos].split()
            if len(head) != 3 or head[0] != "layer":
                raise ValueError(f"{path}: expected 'layer <in> <out>' at line {pos + 1}")
            fan_in, fan_out = int(head[1]), int(head[2])
            pos += 1
            w = np.array([[float(v) for v in lines[pos + r].split()] for r in range(fan_in)])
            pos += fan_in
            b = np.array([float(v) for v in lines[pos].split()])
            pos += 1
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ValueError(f"{path}: layer shape mismatch near line {pos}")
            layers.append((w, b))
        return layers

    classifier = read_section("classifier")
    transition = read_section("transition")
    return ModelParams(classifier, transition)
