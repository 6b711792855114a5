"""Training objective and loop.

Post-warmup, each minibatch minimizes an unweighted sum of up to three terms:

* a cross-entropy loss that trains the transition head on the observed noisy
  label, with hard clean-label guesses drawn from the classifier (the draws
  are treated as constants: no gradient flows through the sampling);
* a prior-matching KL between the classifier's posterior and a target built
  from the batch approximation of the class-conditional data likelihood
  multiplied by the per-sample prior (forward or reversed KL);
* an EM-style tightening KL between the posterior and the transition output
  weighted by the prior (one causal variant) or by the scalar marginal data
  likelihood, which cancels under normalization (the other variant).

Warmup epochs train both heads with plain cross-entropy on the noisy labels.
Ablation modes drop terms or change how the prior is built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics, nn, pls, tape
from .dataset import Dataset
from .nn import Gradients, ModelParams, ParamLeaves
from .tape import PROB_FLOOR, Tensor
from .util import categorical_rows, one_hot

CAUSAL_MODES = ("x_given_y", "y_given_x")
PRI_KL_MODES = ("forward", "reversed")
ABLATIONS = (
    "full", "no_estep", "ce_pri", "forward_pri", "pri_only", "ce_only",
    "no_coverage", "no_uncertainty", "uniform_w", "argmax_coverage", "beta_zero",
)
ROUNDING_MODES = ("half_up", "ceil")


class DivergenceError(RuntimeError):
    """A loss term or gradient went non-finite; names the term and position."""

    def __init__(self, term: str, epoch: int | None = None, batch: int | None = None):
        self.term = term
        self.epoch = epoch
        self.batch = batch
        where = ""
        if epoch is not None:
            where = f" at epoch {epoch}" + (f", batch {batch}" if batch is not None else "")
        super().__init__(f"non-finite value in {term}{where}")


@dataclass
class TrainConfig:
    beta: float = 0.9                 # moving-average weight for the coverage source
    num_draws: int = 1                # hard-label draws per sample in the CE term
    epochs: int = 50
    warmup_epochs: int = 10
    lr: float = 0.1
    weight_decay: float = 5e-4
    lr_decay_epoch: int = 40          # lr multiplied by 0.1 from this epoch on
    batch_size: int = 128
    causal_mode: str = "x_given_y"
    pri_kl: str = "reversed"
    ablation: str = "full"
    seed: int = 1
    hidden: tuple[int, ...] = (64, 64)
    u_rounding: str = "half_up"       # rounding for the uncertainty draw count

    def validate(self) -> None:
        if self.num_draws < 1:
            raise ValueError("num_draws must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.epochs < 1 or not 0 <= self.warmup_epochs <= self.epochs:
            # warmup_epochs == epochs is the degenerate warmup-only run used
            # as the plain cross-entropy baseline arm.
            raise ValueError("need epochs >= 1 and 0 <= warmup_epochs <= epochs")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (the batch likelihood "
                             "approximation normalizes over the batch)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.causal_mode not in CAUSAL_MODES:
            raise ValueError(f"causal_mode must be one of {CAUSAL_MODES}")
        if self.pri_kl not in PRI_KL_MODES:
            raise ValueError(f"pri_kl must be one of {PRI_KL_MODES}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.u_rounding not in ROUNDING_MODES:
            raise ValueError(f"u_rounding must be one of {ROUNDING_MODES}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("hidden must list positive layer widths")


@dataclass
class BatchTrace:
    """Values recorded while evaluating one batch loss."""

    posteriors: np.ndarray                     # (B, C) classifier outputs
    transition_out: np.ndarray | None          # (B, C) transition head on the posterior
    p_x_given_y: np.ndarray | None             # (B, C) batch likelihood approximation
    p_x: np.ndarray | None                     # (B,) scalar marginals (logged, y_given_x)
    loss_ce: float
    loss_pri: float
    loss_kl: float
    gradients: Gradients | None
    ce_outputs: np.ndarray | None = None       # (B*K, C) transition head on hard draws
    ce_draws: np.ndarray | None = None         # (B, K) sampled hard labels


# ---------------------------------------------------------------------------
# Value-level operations (the same formulas the loss graphs use)
# ---------------------------------------------------------------------------

def approx_p_x_given_y(posteriors: np.ndarray) -> np.ndarray:
    """Batch approximation of the class-conditional data likelihood: entry
    (i, y) is posterior[i, y] normalized over the batch, so every class column
    sums to one. Defined within a minibatch of at least two samples."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2 or posteriors.shape[0] < 2:
        raise ValueError("need a batch of at least two posterior rows")
    return posteriors / posteriors.sum(axis=0, keepdims=True)


def approx_p_x(p_x_given_y_row: np.ndarray, prior: np.ndarray) -> float:
    """Marginal data likelihood of one sample: its likelihood row dotted with
    its prior."""
    return float(np.dot(np.asarray(p_x_given_y_row, dtype=np.float64),
                        np.asarray(prior, dtype=np.float64)))


def draw_hard_labels(posteriors: np.ndarray, num_draws: int,
                     rng: np.random.Generator) -> np.ndarray:
    """(B, K) hard labels, each column a categorical draw per posterior row."""
    cols = [categorical_rows(posteriors, rng) for _ in range(num_draws)]
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------------------
# Loss graphs
# ---------------------------------------------------------------------------

class LossContext:
    """Shared forward state for one batch: parameter leaves, the posterior
    graph, and lazily built pieces reused across loss terms."""

    def __init__(self, params: ModelParams, x: np.ndarray, y_noisy: np.ndarray,
                 priors: np.ndarray):
        self.params = params
        self.x = np.asarray(x, dtype=np.float64)
        self.y_noisy = np.asarray(y_noisy, dtype=np.int64)
        self.priors = np.asarray(priors, dtype=np.float64)
        self.batch_size = self.x.shape[0]
        self.num_classes = params.num_classes
        self.leaves: ParamLeaves = nn.make_leaves(params)
        self._x_const = tape.constant(self.x)
        self._priors_const = tape.constant(self.priors)
        self.posteriors: Tensor = nn.classifier_dist(self.leaves, self._x_const)
        self._transition: Tensor | None = None
        self._cond_rows: Tensor | None = None
        self._p_x: np.ndarray | None = None
        self.ce_outputs: np.ndarray | None = None
        self.ce_draws: np.ndarray | None = None

    @property
    def transition(self) -> Tensor:
        """Transition head applied to the (differentiable) posterior."""
        if self._transition is None:
            self._transition = nn.transition_dist(self.leaves, self._x_const, self.posteriors)
        return self._transition

    @property
    def cond_rows(self) -> Tensor:
        """Batch likelihood approximation as a graph node (columns sum to 1)."""
        if self._cond_rows is None:
            self._cond_rows = tape.div(self.posteriors, tape.col_sum(self.posteriors))
        return self._cond_rows

    @property
    def p_x(self) -> np.ndarray:
        """Per-sample scalar marginals (values only; they cancel in the loss)."""
        if self._p_x is None:
            self._p_x = (self.cond_rows.value * self.priors).sum(axis=1)
        return self._p_x


def _floor_renorm(dist: Tensor) -> Tensor:
    """Floor probabilities at PROB_FLOOR, then renormalize rows."""
    floored = tape.clip_min(dist, PROB_FLOOR)
    return tape.div(floored, tape.row_sum(floored))


def _normalize_rows(t: Tensor) -> Tensor:
    return tape.div(t, tape.row_sum(t))


def _mean_kl(p: Tensor, q: Tensor, batch_size: int) -> Tensor:
    gap = tape.sub(tape.floor_log(p), tape.floor_log(q))
    return tape.scale(tape.total(tape.mul(p, gap)), 1.0 / batch_size)


def _pri_target(ctx: LossContext) -> Tensor:
    product = tape.mul(ctx.cond_rows, ctx._priors_const)
    return _floor_renorm(_normalize_rows(product))


def loss_ce(ctx: LossContext, num_draws: int, rng: np.random.Generator | None = None,
            draws: np.ndarray | None = None) -> Tensor:
    """Cross-entropy of the transition head against the noisy label, averaged
    over hard clean-label draws from the posterior. The draws are constants
    for differentiation; pass `draws` to pin them (e.g. for gradient checks)."""
    if draws is None:
        if rng is None:
            raise ValueError("loss_ce needs an rng when draws are not supplied")
        draws = draw_hard_labels(ctx.posteriors.value, num_draws, rng)
    draws = np.asarray(draws, dtype=np.int64)
    batch, k = draws.shape
    x_rep = np.repeat(ctx.x, k, axis=0)
    drawn_onehot = one_hot(draws.reshape(-1), ctx.num_classes)
    out = nn.transition_dist(ctx.leaves, tape.constant(x_rep), tape.constant(drawn_onehot))
    target = one_hot(np.repeat(ctx.y_noisy, k), ctx.num_classes)
    picked = tape.mul(tape.constant(target), tape.floor_log(out))
    ctx.ce_outputs = out.value
    ctx.ce_draws = draws
    return tape.scale(tape.total(picked), -1.0 / (batch * k))


def loss_pri_forward(ctx: LossContext) -> Tensor:
    """KL[posterior || normalize(likelihood row * prior)], averaged over the batch."""
    return _mean_kl(ctx.posteriors, _pri_target(ctx), ctx.batch_size)


def loss_pri_reversed(ctx: LossContext) -> Tensor:
    """Same target with the KL arguments swapped (robust-to-noise variant)."""
    return _mean_kl(_pri_target(ctx), ctx.posteriors, ctx.batch_size)


def loss_estep_x_given_y(ctx: LossContext) -> Tensor:
    """KL[posterior || normalize(transition(x, posterior) * prior)]."""
    product = tape.mul(ctx.transition, ctx._priors_const)
    target = _floor_renorm(_normalize_rows(product))
    return _mean_kl(ctx.posteriors, target, ctx.batch_size)


def loss_estep_y_given_x(ctx: LossContext) -> Tensor:
    """KL[posterior || normalize(transition(x, posterior) * p(x))].

    The per-sample scalar marginal cancels under row normalization; it is
    still computed and logged on the context.
    """
    _ = ctx.p_x
    target = _floor_renorm(ctx.transition)
    return _mean_kl(ctx.posteriors, target, ctx.batch_size)


def loss_ce_pri(ctx: LossContext) -> Tensor:
    """Soft cross-entropy of the posterior against the prior (ablation only)."""
    picked = tape.mul(ctx._priors_const, tape.floor_log(ctx.posteriors))
    return tape.scale(tape.total(picked), -1.0 / ctx.batch_size)


def _term_plan(cfg: TrainConfig) -> tuple[bool, str | None, bool]:
    """(use_ce, pri_variant, use_estep) for the configured ablation."""
    a = cfg.ablation
    if a == "ce_only":
        return True, None, False
    if a == "pri_only":
        return False, "reversed", False
    if a == "ce_pri":
        return True, "ce_pri", True
    if a == "forward_pri":
        return True, "forward", True
    if a == "no_estep":
        return True, cfg.pri_kl, False
    return True, cfg.pri_kl, True


_PRI_BUILDERS = {
    "forward": loss_pri_forward,
    "reversed": loss_pri_reversed,
    "ce_pri": loss_ce_pri,
}


def total_loss(params: ModelParams, x: np.ndarray, y_noisy: np.ndarray,
               priors: np.ndarray, cfg: TrainConfig,
               rng: np.random.Generator) -> tuple[float, Gradients, BatchTrace]:
    """Unweighted sum of the active terms, with gradients for both heads."""
    ctx = LossContext(params, x, y_noisy, priors)
    use_ce, pri_variant, use_estep = _term_plan(cfg)
    terms: list[Tensor] = []
    components = {"loss_ce": 0.0, "loss_pri": 0.0, "loss_kl": 0.0}

    if use_ce:
        t = loss_ce(ctx, cfg.num_draws, rng)
        _check_finite(t, "loss_ce")
        components["loss_ce"] = float(t.value)
        terms.append(t)
    if pri_variant is not None:
        t = _PRI_BUILDERS[pri_variant](ctx)
        _check_finite(t, "loss_pri")
        components["loss_pri"] = float(t.value)
        terms.append(t)
    if use_estep:
        builder = loss_estep_x_given_y if cfg.causal_mode == "x_given_y" else loss_estep_y_given_x
        t = builder(ctx)
        _check_finite(t, "loss_kl")
        components["loss_kl"] = float(t.value)
        terms.append(t)

    loss = terms[0]
    for t in terms[1:]:
        loss = tape.add(loss, t)
    grads = nn.backward(loss, ctx.leaves)
    trace = BatchTrace(
        posteriors=ctx.posteriors.value,
        transition_out=ctx._transition.value if ctx._transition is not None else None,
        p_x_given_y=ctx._cond_rows.value if ctx._cond_rows is not None else None,
        p_x=ctx._p_x,
        gradients=grads,
        ce_outputs=ctx.ce_outputs,
        ce_draws=ctx.ce_draws,
        **components,
    )
    return float(loss.value), grads, trace


def _check_finite(t: Tensor, name: str) -> None:
    if not np.isfinite(t.value):
        raise DivergenceError(name)


def warmup_loss(params: ModelParams, x: np.ndarray, y_noisy: np.ndarray,
                num_draws: int, rng: np.random.Generator) -> tuple[float, Gradients, BatchTrace]:
    """Plain cross-entropy on the noisy labels for the classifier, plus the
    hard-draw cross-entropy that trains the transition head."""
    ctx = LossContext(params, x, y_noisy,
                      one_hot(np.asarray(y_noisy, dtype=np.int64), params.num_classes))
    target = tape.constant(one_hot(ctx.y_noisy, ctx.num_classes))
    direct = tape.scale(
        tape.total(tape.mul(target, tape.floor_log(ctx.posteriors))), -1.0 / ctx.batch_size)
    sampled = loss_ce(ctx, num_draws, rng)
    loss = tape.add(direct, sampled)
    _check_finite(loss, "warmup_ce")
    grads = nn.backward(loss, ctx.leaves)
    trace = BatchTrace(
        posteriors=ctx.posteriors.value, transition_out=None, p_x_given_y=None,
        p_x=None, loss_ce=float(loss.value), loss_pri=0.0, loss_kl=0.0,
        gradients=grads, ce_outputs=ctx.ce_outputs, ce_draws=ctx.ce_draws,
    )
    return float(loss.value), grads, trace


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

class InvariantMonitor:
    """Optional per-run validator: counts distribution/positivity violations.

    Checked: priors sum to 1 +- 1e-9 with positive mass on the noisy label,
    network outputs are valid distributions, KL-based losses are >= -1e-9, and
    every class column of the batch likelihood approximation sums to 1 +- 1e-6.
    """

    def __init__(self, max_messages: int = 20):
        self.checks = 0
        self.violations: list[str] = []
        self._max = max_messages

    def _flag(self, message: str) -> None:
        if len(self.violations) < self._max:
            self.violations.append(message)
        elif self.violations[-1] != "...":
            self.violations.append("...")

    def _check_dists(self, rows: np.ndarray, what: str, tol: float) -> None:
        self.checks += 1
        if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=-1) - 1.0) > tol):
            self._flag(f"{what}: invalid distribution rows")

    def check_priors(self, priors: np.ndarray, y_noisy: np.ndarray) -> None:
        self._check_dists(priors, "priors", 1e-9)
        self.checks += 1
        if np.any(priors[np.arange(len(y_noisy)), y_noisy] <= 0):
            self._flag("priors: zero mass on an observed label")

    def check_batch(self, trace: BatchTrace) -> None:
        self._check_dists(trace.posteriors, "posteriors", 1e-6)
        if trace.transition_out is not None:
            self._check_dists(trace.transition_out, "transition outputs", 1e-6)
        if trace.ce_outputs is not None:
            self._check_dists(trace.ce_outputs, "transition outputs (hard draws)", 1e-6)
        if trace.p_x_given_y is not None:
            self.checks += 1
            if np.any(np.abs(trace.p_x_given_y.sum(axis=0) - 1.0) > 1e-6):
                self._flag("likelihood approximation: column sums off")
        if trace.p_x is not None:
            self.checks += 1
            if np.any(trace.p_x <= 0):
                self._flag("scalar data marginals: non-positive value")
        for name, value in (("loss_pri", trace.loss_pri), ("loss_kl", trace.loss_kl)):
            self.checks += 1
            if value < -1e-9:
                self._flag(f"{name}: negative KL value {value}")

    @property
    def ok(self) -> bool:
        return not self.violations


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        # A singleton tail cannot support the batch normalization; fold it in.
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def _pls_settings(cfg: TrainConfig) -> dict:
    return {
        "beta": 0.0 if cfg.ablation == "beta_zero" else cfg.beta,
        "coverage_mode": "argmax" if cfg.ablation == "argmax_coverage" else "sample",
        "use_coverage": cfg.ablation != "no_coverage",
        "use_uncertainty": cfg.ablation != "no_uncertainty",
        "uniform_noise_prob": cfg.ablation == "uniform_w",
        "rounding": cfg.u_rounding,
    }


def train(ds: Dataset, cfg: TrainConfig, test_ds: Dataset | None = None,
          monitor: InvariantMonitor | None = None
          ) -> tuple[ModelParams, list[metrics.MetricsRecord]]:
    """Warmup then per-epoch prior refresh + minibatch SGD; deterministic per seed.

    Returns the final parameters and one metrics record per epoch
    (test accuracy is nan when no test set is given).
    """
    cfg.validate()
    if len(ds) < 2:
        raise ValueError("need at least two training samples")
    rng = np.random.default_rng(cfg.seed)
    params = nn.init_params(ds.feature_dim, ds.num_classes, cfg.hidden, rng)
    state = pls.PriorState.initial(ds.y_noisy, ds.num_classes)
    uses_prior = cfg.ablation != "ce_only"
    pls_kwargs = _pls_settings(cfg)
    records: list[metrics.MetricsRecord] = []
    if monitor is not None:
        monitor.check_priors(state.prior, ds.y_noisy)

    for epoch in range(cfg.epochs):
        lr = cfg.lr * (0.1 if epoch >= cfg.lr_decay_epoch else 1.0)
        in_warmup = epoch < cfg.warmup_epochs
        if not in_warmup and uses_prior:
            posteriors = nn.classifier_probs(params, ds.x)
            pls.refresh(state, posteriors, ds.y_noisy, rng, **pls_kwargs)
            if monitor is not None:
                monitor.check_priors(state.prior, ds.y_noisy)

        sums = {"loss_ce": 0.0, "loss_pri": 0.0, "loss_kl": 0.0}
        order = rng.permutation(len(ds))
        batches = _batches(order, cfg.batch_size)
        for batch_index, idx in enumerate(batches):
            xb, yb, pb = ds.x[idx], ds.y_noisy[idx], state.prior[idx]
            try:
                if in_warmup:
                    _, grads, trace = warmup_loss(params, xb, yb, cfg.num_draws, rng)
                else:
                    _, grads, trace = total_loss(params, xb, yb, pb, cfg, rng)
                params = nn.sgd_step(params, grads, lr, cfg.weight_decay)
            except DivergenceError as err:
                raise DivergenceError(err.term, epoch, batch_index) from None
            except FloatingPointError as err:
                raise DivergenceError(str(err), epoch, batch_index) from None
            if monitor is not None:
                monitor.check_batch(trace)
            for key in sums:
                sums[key] += getattr(trace, key)

        coverage, _ = pls.coverage_uncertainty(state.prior, ds.y_clean)
        unc_clean, unc_noisy = metrics.split_uncertainty(state.prior, ds)
        records.append(metrics.MetricsRecord(
            epoch=epoch,
            test_acc=metrics.test_accuracy(params, test_ds) if test_ds is not None else float("nan"),
            coverage=coverage,
            unc_clean=unc_clean,
            unc_noisy=unc_noisy,
            transition_mse=metrics.transition_mse(params, ds),
            loss_ce=sums["loss_ce"] / len(batches),
            loss_pri=sums["loss_pri"] / len(batches),
            loss_kl=sums["loss_kl"] / len(batches),
        ))
    return params, records
