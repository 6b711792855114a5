"""Synthetic classification datasets with controllable label noise.

Generators keep the clean label alongside the observed noisy one (the clean
label is for evaluation only) and record, per sample, the ground-truth row of
the label-transition matrix that produced the noisy label, so transition
estimation error can be measured later.

All functions are pure: injectors return new datasets, never mutate inputs,
and draw every random number from one generator seeded per call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import categorical_rows, one_hot

NOISE_KINDS = ("none", "symmetric", "asymmetric", "idn")

IDN_FLIP_STD = 0.1  # spread of the per-sample flip probability around the nominal rate


class DataFormatError(ValueError):
    """Raised by the CSV loader; the message names the offending file line."""


@dataclass(frozen=True)
class Sample:
    id: int
    x: np.ndarray
    y_noisy: int
    y_clean: int


@dataclass
class NoiseMeta:
    kind: str
    rate: float
    # Per-sample ground-truth transition row (the distribution the observed
    # label was drawn from). One-hot at y_clean when kind == "none".
    true_transition_rows: np.ndarray


@dataclass(eq=False)
class Dataset:
    x: np.ndarray         # (n, feature_dim)
    y_noisy: np.ndarray   # (n,) int64
    y_clean: np.ndarray   # (n,) int64, evaluation only
    num_classes: int
    feature_dim: int
    noise_meta: NoiseMeta

    def __len__(self) -> int:
        return self.x.shape[0]

    def sample(self, i: int) -> Sample:
        return Sample(i, self.x[i], int(self.y_noisy[i]), int(self.y_clean[i]))

    def __iter__(self):
        return (self.sample(i) for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.feature_dim == other.feature_dim
            and self.noise_meta.kind == other.noise_meta.kind
            and self.noise_meta.rate == other.noise_meta.rate
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y_noisy, other.y_noisy)
            and np.array_equal(self.y_clean, other.y_clean)
            and np.array_equal(self.noise_meta.true_transition_rows,
                               other.noise_meta.true_transition_rows)
        )


def _class_directions(num_classes: int, dim: int) -> np.ndarray:
    # Fixed deterministic directions: class means spread on the unit circle in
    # the first two coordinates (first coordinate only if dim == 1).
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    dirs = np.zeros((num_classes, dim))
    dirs[:, 0] = np.cos(angles)
    if dim > 1:
        dirs[:, 1] = np.sin(angles)
    return dirs


def gen_gaussian_blobs(n: int, num_classes: int, dim: int, separation: float, seed: int) -> Dataset:
    """Balanced isotropic Gaussian blobs, one per class, noise-free labels."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if n < num_classes:
        raise ValueError(f"need at least one sample per class (n={n} < classes={num_classes})")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if separation <= 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(seed)
    counts = [n // num_classes + (1 if c < n % num_classes else 0) for c in range(num_classes)]
    y = np.repeat(np.arange(num_classes, dtype=np.int64), counts)
    x = separation * _class_directions(num_classes, dim)[y] + rng.standard_normal((n, dim))
    rows = one_hot(y, num_classes)
    return Dataset(x, y.copy(), y, num_classes, dim, NoiseMeta("none", 0.0, rows))


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"noise rate must be in [0, 1), got {rate}")


def inject_symmetric(ds: Dataset, rate: float, seed: int) -> Dataset:
    """Flip each label with probability `rate` to a uniform other class."""
    _check_rate(rate)
    rng = np.random.default_rng(seed)
    n, c = len(ds), ds.num_classes
    flip = rng.random(n) < rate
    other = rng.integers(0, c - 1, size=n)
    other = other + (other >= ds.y_clean)  # skip over the clean class
    y_noisy = np.where(flip, other, ds.y_clean).astype(np.int64)
    rows = np.full((n, c), rate / (c - 1))
    rows[np.arange(n), ds.y_clean] = 1.0 - rate
    return Dataset(ds.x.copy(), y_noisy, ds.y_clean.copy(), c, ds.feature_dim,
                   NoiseMeta("symmetric", float(rate), rows))


def inject_asymmetric(ds: Dataset, rate: float, seed: int) -> Dataset:
    """Flip class c with probability `rate` to its cyclic successor (c+1) mod C."""
    _check_rate(rate)
    rng = np.random.default_rng(seed)
    n, c = len(ds), ds.num_classes
    flip = rng.random(n) < rate
    successor = (ds.y_clean + 1) % c
    y_noisy = np.where(flip, successor, ds.y_clean).astype(np.int64)
    rows = np.zeros((n, c))
    rows[np.arange(n), ds.y_clean] = 1.0 - rate
    rows[np.arange(n), successor] += rate
    return Dataset(ds.x.copy(), y_noisy, ds.y_clean.copy(), c, ds.feature_dim,
                   NoiseMeta("asymmetric", float(rate), rows))


def _truncated_normal(mean: float, std: float, size: int, rng: np.random.Generator) -> np.ndarray:
    # Rejection sampling of Normal(mean, std^2) truncated to [0, 1]; exact and
    # keeps all draws on the caller's generator stream.
    out = rng.normal(mean, std, size)
    bad = (out < 0.0) | (out > 1.0)
    while bad.any():
        out[bad] = rng.normal(mean, std, int(bad.sum()))
        bad = (out < 0.0) | (out > 1.0)
    return out


def inject_idn(ds: Dataset, rate: float, seed: int) -> Dataset:
    """Instance-dependent noise.

    Per-sample flip probability drawn from Normal(rate, 0.1^2) truncated to
    [0, 1] (exactly zero when rate == 0); flip destinations follow a softmax
    over fixed random projections of the features, with the clean class
    excluded. The realized per-sample transition row is stored.
    """
    _check_rate(rate)
    rng = np.random.default_rng(seed)
    n, c, d = len(ds), ds.num_classes, ds.feature_dim
    if rate == 0.0:
        q = np.zeros(n)
    else:
        q = np.clip(_truncated_normal(rate, IDN_FLIP_STD, n, rng), 0.0, 1.0)
    proj = rng.standard_normal((c, d, c))  # one d x C projection per clean class
    logits = np.einsum("nd,ndc->nc", ds.x, proj[ds.y_clean])
    logits[np.arange(n), ds.y_clean] = -np.inf
    shifted = logits - logits.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    off = weights / weights.sum(axis=1, keepdims=True)
    rows = off * q[:, None]
    rows[np.arange(n), ds.y_clean] = 1.0 - q
    y_noisy = categorical_rows(rows, rng).astype(np.int64)
    return Dataset(ds.x.copy(), y_noisy, ds.y_clean.copy(), c, d,
                   NoiseMeta("idn", float(rate), rows))


# ---------------------------------------------------------------------------
# CSV persistence
#
# Three files per dataset, derived from one base path:
#   <base>.csv        header id,y_clean,y_noisy,x0..x{d-1}
#   <base>.trans.csv  header id,t0..t{C-1}       (per-sample transition row)
#   <base>.meta.csv   header kind,rate           (noise bookkeeping)
# All floats use 17 significant digits so float64 round-trips exactly.
# ---------------------------------------------------------------------------

def companion_paths(path) -> tuple[str, str, str]:
    path = str(path)
    base = path[:-4] if path.endswith(".csv") else path
    main = base + ".csv"
    return main, base + ".trans.csv", base + ".meta.csv"


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_csv(ds: Dataset, path) -> None:
    main, trans, meta = companion_paths(path)
    d, c = ds.feature_dim, ds.num_classes
    with open(main, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,y_clean,y_noisy," + ",".join(f"x{j}" for j in range(d)) + "\n")
        for i in range(len(ds)):
            feats = ",".join(_fmt(v) for v in ds.x[i])
            fh.write(f"{i},{ds.y_clean[i]},{ds.y_noisy[i]},{feats}\n")
    with open(trans, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id," + ",".join(f"t{j}" for j in range(c)) + "\n")
        for i in range(len(ds)):
            fh.write(f"{i}," + ",".join(_fmt(v) for v in ds.noise_meta.true_transition_rows[i]) + "\n")
    with open(meta, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("kind,rate\n")
        fh.write(f"{ds.noise_meta.kind},{_fmt(ds.noise_meta.rate)}\n")


def _split_line(line: str, path: str, lineno: int, expected: int) -> list[str]:
    parts = line.split(",")
    if len(parts) != expected:
        raise DataFormatError(f"{path}: line {lineno}: expected {expected} fields, got {len(parts)}")
    return parts


def _parse_float(token: str, path: str, lineno: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise DataFormatError(f"{path}: line {lineno}: non-numeric {what}: {token!r}") from None


def _parse_int(token: str, path: str, lineno: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise DataFormatError(f"{path}: line {lineno}: non-integer {what}: {token!r}") from None


def load_csv(path) -> Dataset:
    main, trans, meta = companion_paths(path)

    with open(meta, "r", encoding="utf-8") as fh:
        meta_lines = fh.read().splitlines()
    if len(meta_lines) < 2 or meta_lines[0] != "kind,rate":
        raise DataFormatError(f"{meta}: line 1: expected header 'kind,rate'")
    kind_tok, rate_tok = _split_line(meta_lines[1], meta, 2, 2)
    if kind_tok not in NOISE_KINDS:
        raise DataFormatError(f"{meta}: line 2: unknown noise kind {kind_tok!r}")
    rate = _parse_float(rate_tok, meta, 2, "rate")

    with open(trans, "r", encoding="utf-8") as fh:
        trans_lines = fh.read().splitlines()
    if not trans_lines or not trans_lines[0].startswith("id,t0"):
        raise DataFormatError(f"{trans}: line 1: expected header 'id,t0,...'")
    num_classes = len(trans_lines[0].split(",")) - 1
    if num_classes < 2:
        raise DataFormatError(f"{trans}: line 1: need at least two class columns")
    rows = []
    for lineno, line in enumerate(trans_lines[1:], start=2):
        parts = _split_line(line, trans, lineno, num_classes + 1)
        idx = _parse_int(parts[0], trans, lineno, "id")
        if idx != lineno - 2:
            raise DataFormatError(f"{trans}: line {lineno}: ids must run 0..n-1, got {idx}")
        row = [_parse_float(tok, trans, lineno, "transition entry") for tok in parts[1:]]
        if abs(sum(row) - 1.0) > 1e-9:
            raise DataFormatError(f"{trans}: line {lineno}: transition row does not sum to 1")
        rows.append(row)

    with open(main, "r", encoding="utf-8") as fh:
        main_lines = fh.read().splitlines()
    if not main_lines or not main_lines[0].startswith("id,y_clean,y_noisy"):
        raise DataFormatError(f"{main}: line 1: expected header 'id,y_clean,y_noisy,x0,...'")
    feature_dim = len(main_lines[0].split(",")) - 3
    if feature_dim < 1:
        raise DataFormatError(f"{main}: line 1: need at least one feature column")
    xs, y_clean, y_noisy = [], [], []
    for lineno, line in enumerate(main_lines[1:], start=2):
        parts = _split_line(line, main, lineno, feature_dim + 3)
        idx = _parse_int(parts[0], main, lineno, "id")
        if idx != lineno - 2:
            raise DataFormatError(f"{main}: line {lineno}: ids must run 0..n-1, got {idx}")
        yc = _parse_int(parts[1], main, lineno, "y_clean")
        yn = _parse_int(parts[2], main, lineno, "y_noisy")
        for name, label in (("y_clean", yc), ("y_noisy", yn)):
            if not 0 <= label < num_classes:
                raise DataFormatError(
                    f"{main}: line {lineno}: {name}={label} out of range [0, {num_classes})")
        feats = [_parse_float(tok, main, lineno, "feature") for tok in parts[3:]]
        if not all(np.isfinite(feats)):
            raise DataFormatError(f"{main}: line {lineno}: non-finite feature value")
        xs.append(feats)
        y_clean.append(yc)
        y_noisy.append(yn)

    if len(xs) != len(rows):
        raise DataFormatError(
            f"{trans}: line {len(trans_lines)}: {len(rows)} transition rows for {len(xs)} samples")
    return Dataset(
        np.array(xs, dtype=np.float64).reshape(len(xs), feature_dim),
        np.array(y_noisy, dtype=np.int64),
        np.array(y_clean, dtype=np.int64),
        num_classes,
        feature_dim,
        NoiseMeta(kind_tok, rate, np.array(rows, dtype=np.float64)),
    )
