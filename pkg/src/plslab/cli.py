"""Command-line harness: generate data, train, evaluate, and compare arms.

Configuration comes from a flat ``key = value`` text file (``#`` comments),
overridable per key by flags; flags beat file values, file values beat
defaults, and the resolved configuration is echoed at startup. Exit codes:
0 success, 2 usage/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from . import dataset as dsmod
from . import metrics, nn, objective, pls
from .dataset import DataFormatError, Dataset
from .objective import ABLATIONS, CAUSAL_MODES, DivergenceError, TrainConfig

TEST_SEED_OFFSET = 1_000_000  # test-split generator seed = seed + this offset


class ConfigError(Exception):
    """Invalid flag, config key, or value; maps to exit code 2."""


def _parse_bool(tok: str) -> bool:
    low = tok.strip().lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {tok!r}")


def _parse_hidden(tok: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(part) for part in str(tok).split(",") if part.strip())
    except ValueError:
        raise ValueError(f"hidden must be a comma list of widths, got {tok!r}") from None
    if not widths:
        raise ValueError("hidden must list at least one width")
    return widths


@dataclass
class RunConfig:
    """Every CLI-resolvable key with its documented default."""

    # training
    seed: int = 1
    epochs: int = 50
    warmup_epochs: int = 10
    lr: float = 0.1
    weight_decay: float = 5e-4
    lr_decay_epoch: int = 40
    batch_size: int = 128
    beta: float = 0.9
    num_draws: int = 1
    causal_mode: str = "x_given_y"
    pri_kl: str = "reversed"
    ablation: str = "full"
    u_rounding: str = "half_up"
    hidden: tuple[int, ...] = (64, 64)
    # data files (empty = generate from the settings below where applicable)
    train_csv: str = ""
    test_csv: str = ""
    out_dir: str = "runs"
    # generation / noise settings
    n: int = 2000
    classes: int = 4
    dim: int = 2
    separation: float = 3.0
    noise: str = "idn"
    rate: float = 0.4
    # comparison harness
    arms: str = "ce_only,full"
    seeds: str = "1,2,3"


_PARSERS = {
    int: int,
    float: float,
    str: str,
    bool: _parse_bool,
}


def _field_parser(f) -> callable:
    if f.name == "hidden":
        return _parse_hidden
    return _PARSERS[type(getattr(RunConfig(), f.name))]


CONFIG_KEYS = {f.name: f for f in fields(RunConfig)}


def parse_config_file(path: str) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise ConfigError(f"--config: cannot read {path}: {err}") from None
    values: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def resolve_config(file_values: dict[str, str], overrides: dict[str, str],
                   echo: bool = True) -> RunConfig:
    """Defaults < config file < flag overrides; unknown keys rejected."""
    cfg = RunConfig()
    source = {name: "default" for name in CONFIG_KEYS}
    for layer, tag in ((file_values, "config file"), (overrides, "flag")):
        for key, raw in layer.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown configuration key: {key!r}")
            try:
                value = _field_parser(CONFIG_KEYS[key])(raw)
            except (ValueError, TypeError) as err:
                raise ConfigError(f"bad value for {key}: {err}") from None
            setattr(cfg, key, value)
            source[key] = tag
    _validate_run_config(cfg)
    if echo:
        print("# resolved configuration (defaults < config file < flags)")
        for name in CONFIG_KEYS:
            value = getattr(cfg, name)
            if name == "hidden":
                value = ",".join(str(v) for v in value)
            print(f"{name} = {value}    # {source[name]}")
    return cfg


def _validate_run_config(cfg: RunConfig) -> None:
    if cfg.noise not in dsmod.NOISE_KINDS:
        raise ConfigError(f"--noise: must be one of {dsmod.NOISE_KINDS}, got {cfg.noise!r}")
    if not 0.0 <= cfg.rate < 1.0:
        raise ConfigError(f"--rate: must be in [0, 1), got {cfg.rate}")
    if cfg.noise == "none" and cfg.rate != 0.0:
        raise ConfigError("--rate: must be 0 when --noise none")
    try:
        train_config(cfg).validate()
    except ValueError as err:
        raise ConfigError(str(err)) from None


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        beta=cfg.beta, num_draws=cfg.num_draws, epochs=cfg.epochs,
        warmup_epochs=cfg.warmup_epochs, lr=cfg.lr, weight_decay=cfg.weight_decay,
        lr_decay_epoch=cfg.lr_decay_epoch, batch_size=cfg.batch_size,
        causal_mode=cfg.causal_mode, pri_kl=cfg.pri_kl, ablation=cfg.ablation,
        seed=cfg.seed, hidden=cfg.hidden, u_rounding=cfg.u_rounding,
    )


def _collect_overrides(args: argparse.Namespace) -> dict[str, str]:
    overrides: dict[str, str] = {}
    flag_to_key = {
        "seed": "seed", "causal": "causal_mode", "ablation": "ablation",
        "noise": "noise", "rate": "rate", "out": "out_dir",
        "n": "n", "classes": "classes", "dim": "dim", "separation": "separation",
        "train_csv": "train_csv", "test_csv": "test_csv",
        "arms": "arms", "seeds": "seeds",
    }
    for flag, key in flag_to_key.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set: expected KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def _resolve_from_args(args: argparse.Namespace, echo: bool = True) -> RunConfig:
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    return resolve_config(file_values, _collect_overrides(args), echo=echo)


# ---------------------------------------------------------------------------
# Data helpers
# ---------------------------------------------------------------------------

def _inject(ds: Dataset, kind: str, rate: float, seed: int) -> Dataset:
    if kind == "none":
        return ds
    injector = {
        "symmetric": dsmod.inject_symmetric,
        "asymmetric": dsmod.inject_asymmetric,
        "idn": dsmod.inject_idn,
    }[kind]
    return injector(ds, rate, seed)


def make_split(cfg: RunConfig, seed: int) -> tuple[Dataset, Dataset]:
    """Train/test pair; noise is injected into the training split only."""
    train = dsmod.gen_gaussian_blobs(cfg.n, cfg.classes, cfg.dim, cfg.separation, seed)
    train = _inject(train, cfg.noise, cfg.rate, seed)
    test = dsmod.gen_gaussian_blobs(cfg.n, cfg.classes, cfg.dim, cfg.separation,
                                    seed + TEST_SEED_OFFSET)
    return train, test


def _load_split(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if cfg.train_csv:
        if not cfg.test_csv:
            raise ConfigError("test_csv: required when train_csv is given")
        try:
            train = dsmod.load_csv(cfg.train_csv)
        except FileNotFoundError as err:
            raise ConfigError(f"train_csv: no such file: {err.filename}") from None
        try:
            test = dsmod.load_csv(cfg.test_csv)
        except FileNotFoundError as err:
            raise ConfigError(f"test_csv: no such file: {err.filename}") from None
        return train, test
    return make_split(cfg, cfg.seed)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _resolve_from_args(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    train, test = make_split(cfg, cfg.seed)
    train_path = os.path.join(cfg.out_dir, "train.csv")
    test_path = os.path.join(cfg.out_dir, "test.csv")
    dsmod.save_csv(train, train_path)
    dsmod.save_csv(test, test_path)
    realized = float((train.y_noisy != train.y_clean).mean())
    print(f"wrote {train_path} and {test_path}: n={len(train)} d={cfg.dim} "
          f"classes={cfg.classes} noise={cfg.noise} nominal_rate={cfg.rate} "
          f"realized_flip_rate={realized:.4f}")
    return 0


def _train_once(cfg: RunConfig, suffix: str = ""):
    train_ds, test_ds = _load_split(cfg)
    tcfg = train_config(cfg)
    params, records = objective.train(train_ds, tcfg, test_ds)
    os.makedirs(cfg.out_dir, exist_ok=True)
    metrics_path = os.path.join(cfg.out_dir, f"metrics{suffix}.csv")
    metrics.export_csv(records, metrics_path)
    nn.save_checkpoint(params, os.path.join(cfg.out_dir, f"checkpoint{suffix}.txt"))
    # Prior snapshot for diagnostics: rebuilt from the final posterior.
    state = pls.PriorState.initial(train_ds.y_noisy, train_ds.num_classes)
    if tcfg.ablation != "ce_only" and tcfg.epochs > tcfg.warmup_epochs:
        posteriors = nn.classifier_probs(params, train_ds.x)
        pls.refresh(state, posteriors, train_ds.y_noisy,
                    np.random.default_rng(tcfg.seed), **objective._pls_settings(tcfg))
    pls.export_prior_csv(state, os.path.join(cfg.out_dir, f"priors{suffix}.csv"))
    return params, records, metrics_path


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_from_args(args)
    _, records, metrics_path = _train_once(cfg)
    final = records[-1]
    print(f"done: epochs={cfg.epochs} final_test_acc={final.test_acc:.4f} "
          f"coverage={final.coverage:.4f} transition_mse={final.transition_mse:.6f}")
    print(f"metrics: {metrics_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        params = nn.load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as err:
        raise ConfigError(f"--checkpoint: {err}") from None
    try:
        ds = dsmod.load_csv(args.data)
    except FileNotFoundError:
        raise ConfigError(f"--data: no such file: {args.data}") from None
    acc = metrics.test_accuracy(params, ds)
    tmse = metrics.transition_mse(params, ds)
    print(f"test_acc={acc:.4f} transition_mse={tmse:.6f} n={len(ds)}")
    return 0


def _parse_arms(arm_list: str) -> list[tuple[str, str | None]]:
    """Arm tokens: an ablation name, optionally 'name@causal_mode'."""
    arms: list[tuple[str, str | None]] = []
    for token in (t.strip() for t in arm_list.split(",")):
        if not token:
            continue
        name, _, causal = token.partition("@")
        if name not in ABLATIONS:
            raise ConfigError(f"--arms: unknown arm {name!r} (choose from {ABLATIONS})")
        if causal and causal not in CAUSAL_MODES:
            raise ConfigError(f"--arms: unknown causal mode {causal!r} in {token!r}")
        arms.append((name, causal or None))
    if not arms:
        raise ConfigError("--arms: at least one arm is required")
    return arms


def _arm_label(name: str, causal: str | None) -> str:
    return f"{name}@{causal}" if causal else name


def _run_arm_job(payload: dict) -> dict:
    """One (arm, seed) training run; executed possibly in a worker process."""
    cfg = RunConfig(**payload["config"])
    cfg = replace(cfg, seed=payload["seed"], ablation=payload["arm"])
    if payload["causal"]:
        cfg = replace(cfg, causal_mode=payload["causal"])
    label = _arm_label(payload["arm"], payload["causal"])
    suffix = f"_{label.replace('@', '_')}_{payload['seed']}"
    try:
        _, records, path = _train_once(cfg, suffix)
        return {"label": label, "seed": payload["seed"], "acc": records[-1].test_acc,
                "metrics": path, "error": ""}
    except (DivergenceError, FloatingPointError) as err:
        return {"label": label, "seed": payload["seed"], "acc": float("nan"),
                "metrics": "", "error": str(err)}


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _resolve_from_args(args)
    arms = _parse_arms(cfg.arms)
    try:
        seeds = [int(s) for s in cfg.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds: expected a comma list of integers, got {cfg.seeds!r}") from None
    if not seeds:
        raise ConfigError("--seeds: at least one seed is required")
    os.makedirs(cfg.out_dir, exist_ok=True)

    base = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    jobs = [{"config": base, "arm": name, "causal": causal, "seed": seed}
            for name, causal in arms for seed in seeds]
    raw_workers = os.environ.get("PLSLAB_THREADS", "1") or "1"
    try:
        workers = int(raw_workers)
    except ValueError:
        raise ConfigError(f"PLSLAB_THREADS: expected an integer, got {raw_workers!r}") from None
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_arm_job, jobs))
    else:
        results = [_run_arm_job(job) for job in jobs]

    by_arm: dict[str, list[dict]] = {}
    for res in results:
        by_arm.setdefault(res["label"], []).append(res)

    table_path = os.path.join(cfg.out_dir, "compare.csv")
    lines = ["arm,n_seeds,mean_acc,std_acc," + ",".join(f"acc_seed{s}" for s in seeds)]
    print(f"{'arm':24s} {'mean_acc':>9s} {'std_acc':>8s}  per-seed")
    any_failed = False
    for name, causal in arms:
        label = _arm_label(name, causal)
        rows = sorted(by_arm[label], key=lambda r: r["seed"])
        accs = np.array([r["acc"] for r in rows])
        failed = [r for r in rows if r["error"]]
        if failed:
            any_failed = True
            print(f"{label:24s} {'failed':>9s} {'':8s}  " +
                  "; ".join(f"seed {r['seed']}: {r['error']}" for r in failed))
        ok = accs[np.isfinite(accs)]
        mean = float(ok.mean()) if ok.size else float("nan")
        std = float(ok.std()) if ok.size else float("nan")
        if not failed:
            per_seed = "/".join(f"{a:.4f}" for a in accs)
            print(f"{label:24s} {mean:9.4f} {std:8.4f}  {per_seed}")
        lines.append(f"{label},{len(rows)},{mean:.6f},{std:.6f}," +
                     ",".join(f"{r['acc']:.6f}" for r in rows))
    with open(table_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"table: {table_path}")
    return 3 if any_failed else 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--seed", type=int, help="run seed")
    sub.add_argument("--causal", choices=CAUSAL_MODES, help="causal variant")
    sub.add_argument("--ablation", choices=ABLATIONS, help="objective/prior ablation")
    sub.add_argument("--noise", choices=dsmod.NOISE_KINDS, help="noise kind")
    sub.add_argument("--rate", type=float, help="noise rate in [0, 1)")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--n", type=int, help="samples per split")
    sub.add_argument("--classes", type=int, help="number of classes")
    sub.add_argument("--dim", type=int, help="feature dimension")
    sub.add_argument("--separation", type=float, help="blob center scale")
    sub.add_argument("--train-csv", dest="train_csv", help="training CSV path")
    sub.add_argument("--test-csv", dest="test_csv", help="test CSV path")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override any config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plslab",
        description="Noisy-label training lab: synthetic data, EM-style training "
                    "with partial-label priors, and paired arm comparisons.")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("generate", help="write train/test CSV splits with noise")
    _add_common_flags(gen)
    gen.set_defaults(func=cmd_generate)

    tr = subs.add_parser("train", help="train one configuration end to end")
    _add_common_flags(tr)
    tr.set_defaults(func=cmd_train)

    ev = subs.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True, help="dataset CSV (with companions)")
    ev.set_defaults(func=cmd_eval)

    cp = subs.add_parser("compare", help="run several arms over shared seeds")
    _add_common_flags(cp)
    cp.add_argument("--arms", help="comma list of arms (ablation[@causal_mode])")
    cp.add_argument("--seeds", help="comma list of seeds")
    cp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DataFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: missing file: {err.filename}", file=sys.stderr)
        return 2
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except FloatingPointError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
