"""Command-line front end: ``ha02 generate | train | evaluate``.

Exit codes: 0 ok, 1 ``--check`` failed, 2 config or shape error, 3 I/O error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channel import PROFILES
from .evaluation import (DOPPLER_GRID, SNR_GRID, emit_results, model_beats_ls, prune_weights,
                         retained_count, sweep_doppler, sweep_snr)
from .model import WeightFormatError, init_params, load_weights, save_weights
from .ofdm import FrameConfig
from .training import (Adam, History, NonFiniteLossError, TrainConfig, append_dataset, generate_dataset,
                       load_dataset, save_dataset, train)

log = logging.getLogger("ha02")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4
THREADS_ENV = "HA02_THREADS"


class ConfigError(Exception):
    pass


class CliIOError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(" ", "").split(",") if t)


@dataclass
class RunConfig:
    frame: FrameConfig = field(default_factory=FrameConfig)
    profile: str = "etu"
    train: TrainConfig = field(default_factory=TrainConfig)
    init_seed: int = 0
    sweep_snrs: tuple[float, ...] = SNR_GRID
    sweep_dopplers: tuple[float, ...] = DOPPLER_GRID
    doppler_sweep_snr: float = 10.0
    sweep_n: int = 5000
    eval_seed: int = 0
    prune: tuple[float, ...] = ()
    dataset: str | None = None
    weights: str | None = None
    results: str | None = None
    history: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)


# section -> key -> (target, converter)
_FRAME_KEYS = {"subcarrier_spacing": float, "cp_length": int, "carrier_hz": float, "pilot_seed": int}
_TRAIN_KEYS = {"epochs": int, "learning_rate": float, "lr_drop_period": int, "lr_drop_factor": float,
               "batch_size": int, "l2": float, "huber_delta": float, "dataset_size": int,
               "validation_fraction": float, "beta1": float, "beta2": float, "adam_eps": float}
_SCHEMA = {
    "frame": set(_FRAME_KEYS),
    "channel": {"profile", "doppler_min", "doppler_max"},
    "train": set(_TRAIN_KEYS) | {"snr_min", "snr_max"},
    "sweep": {"snrs", "dopplers", "doppler_snr", "n", "prune"},
    "seeds": {"data", "init", "eval"},
    "paths": {"dataset", "weights", "results", "history"},
}


def _line_of(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), 1):
        if line.split("=", 1)[0].strip() == key:
            return i
    return 0


def load_config(path: str | None) -> RunConfig:
    """Parse an INI-style run config; every key is optional and defaults follow the reference setup."""
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliIOError(f"cannot read config {path}: {exc}") from exc
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}:{_line_of(text, key)}: unknown key '{key}' in [{section}]")

    def get(section, key, conv):
        raw = parser[section][key]
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{_line_of(text, key)}: bad value for '{key}': {raw!r}") from exc

    try:
        if parser.has_section("frame"):
            over = {k: get("frame", k, c) for k, c in _FRAME_KEYS.items() if k in parser["frame"]}
            cfg.frame = FrameConfig(**over)
        tr = {}
        if parser.has_section("train"):
            tr = {k: get("train", k, c) for k, c in _TRAIN_KEYS.items() if k in parser["train"]}
            snr = list(cfg.train.snr_range)
            if "snr_min" in parser["train"]:
                snr[0] = get("train", "snr_min", float)
            if "snr_max" in parser["train"]:
                snr[1] = get("train", "snr_max", float)
            tr["snr_range"] = tuple(snr)
        if parser.has_section("channel"):
            ch = parser["channel"]
            if "profile" in ch:
                if ch["profile"] not in PROFILES:
                    raise ConfigError(f"{path}:{_line_of(text, 'profile')}: unknown profile {ch['profile']!r}")
                cfg.profile = ch["profile"]
            dop = list(cfg.train.doppler_range)
            if "doppler_min" in ch:
                dop[0] = get("channel", "doppler_min", float)
            if "doppler_max" in ch:
                dop[1] = get("channel", "doppler_max", float)
            tr["doppler_range"] = tuple(dop)
        if parser.has_section("seeds"):
            s = parser["seeds"]
            if "data" in s:
                tr["seed"] = get("seeds", "data", int)
            if "init" in s:
                cfg.init_seed = get("seeds", "init", int)
            if "eval" in s:
                cfg.eval_seed = get("seeds", "eval", int)
        cfg.train = TrainConfig(**{**asdict(cfg.train), **tr})
        if parser.has_section("sweep"):
            s = parser["sweep"]
            if "snrs" in s:
                cfg.sweep_snrs = get("sweep", "snrs", _floats)
            if "dopplers" in s:
                cfg.sweep_dopplers = get("sweep", "dopplers", _floats)
            if "doppler_snr" in s:
                cfg.doppler_sweep_snr = get("sweep", "doppler_snr", float)
            if "n" in s:
                cfg.sweep_n = get("sweep", "n", int)
            if "prune" in s:
                cfg.prune = get("sweep", "prune", _floats)
        if parser.has_section("paths"):
            for k in _SCHEMA["paths"]:
                if k in parser["paths"]:
                    setattr(cfg, k, parser["paths"][k])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg


def _output_path(path: str | None, what: str, force: bool) -> Path:
    if path is None:
        raise ConfigError(f"no {what} path given (flag or [paths] {what})")
    p = Path(path)
    if not p.parent.is_dir():
        raise CliIOError(f"output directory does not exist: {p.parent}")
    if p.exists() and not force:
        raise CliIOError(f"{p} exists; pass --force to overwrite")
    return p


def _input_path(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} path given (flag or [paths] {what})")
    p = Path(path)
    if not p.is_file():
        raise CliIOError(f"{what} file not found: {p}")
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args, cfg: RunConfig) -> int:
    out = Path(args.out or cfg.dataset) if (args.out or cfg.dataset) else None
    if args.append:
        out = _input_path(str(out) if out else None, "dataset")
    else:
        out = _output_path(str(out) if out else None, "dataset", args.force)
    count = args.count if args.count is not None else cfg.train.dataset_size
    start = 0
    if args.append:
        start = len(load_dataset(out))
    ds = generate_dataset(cfg.train, count, start=start, profile=cfg.profile, frame=cfg.frame)
    try:
        (append_dataset if args.append else save_dataset)(out, ds)
    except OSError as exc:
        raise CliIOError(f"cannot write dataset {out}: {exc}") from exc
    print(f"wrote {count} samples to {out} ({out.stat().st_size} bytes, seed {cfg.train.seed}, "
          f"sha256 {_sha256(out)[:16]})")
    return EXIT_OK


def _write_history(path: Path, history: History) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "val_loss"])
        for row in zip(history.epoch, history.lr, history.train_loss, history.val_loss):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _history_meta(h: History) -> dict:
    return {"epoch": h.epoch, "lr": h.lr, "train_loss": h.train_loss, "val_loss": h.val_loss,
            "best_epoch": h.best_epoch, "best_val_loss": h.best_val_loss}


def cmd_train(args, cfg: RunConfig) -> int:
    tc = cfg.train
    if args.epochs is not None:
        tc = TrainConfig(**{**asdict(tc), "epochs": args.epochs})
    data_path = _input_path(args.dataset or cfg.dataset, "dataset")
    weights = _output_path(args.out or cfg.weights, "weights", args.force or args.resume is not None)
    history_path = Path(args.history or cfg.history or str(weights) + ".history.csv")
    if not history_path.parent.is_dir():
        raise CliIOError(f"output directory does not exist: {history_path.parent}")
    resume_path = Path(str(weights) + ".last")

    try:
        data = load_dataset(data_path, limit=args.count_limit)
    except (OSError, KeyError) as exc:
        raise CliIOError(f"cannot read dataset {data_path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if data.inputs.shape[1:] != (72, 2) or data.labels.shape[1:] != (1008, 2):
        raise ConfigError(f"{data_path}: dataset layout {data.inputs.shape[1:]}/{data.labels.shape[1:]} "
                          "does not match the HA02 input/output shapes")
    tr, va = data.split(tc.validation_fraction)

    params = init_params(cfg.init_seed)
    optimizer, history, start, best = None, None, 1, None
    if args.resume is not None:
        last, state, meta = load_weights(args.resume)
        params = last
        optimizer = Adam(tc.beta1, tc.beta2, tc.adam_eps, tc.l2)
        optimizer.load_state_dict(state, np.float32)
        h = meta.get("history", {})
        history = History(h.get("epoch", []), h.get("lr", []), h.get("train_loss", []), h.get("val_loss", []),
                          h.get("best_epoch", 0), h.get("best_val_loss", float("inf")))
        start = int(meta.get("epoch", 0)) + 1
        if weights.exists():
            best = load_weights(weights)[0]

    def on_epoch(epoch, p, opt, hist, improved):
        meta = {"epoch": epoch, "history": _history_meta(hist), "train_config": asdict(tc)}
        if improved:
            save_weights(weights, p, meta=meta)
        save_weights(resume_path, p, opt.state_dict(), meta=meta)
        _write_history(history_path, hist)

    try:
        best, history, _ = train(params, tr, va if len(va) else None, tc, optimizer, start, history, best, on_epoch)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not weights.exists():
        save_weights(weights, best, meta={"epoch": history.best_epoch, "history": _history_meta(history)})
    _write_history(history_path, history)
    print(f"best epoch {history.best_epoch} (val loss {history.best_val_loss:.6g}); weights -> {weights}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    weights = _input_path(args.weights or cfg.weights, "weights")
    out = _output_path(args.out or cfg.results, "results", args.force)
    try:
        params = load_weights(weights)[0]
    except WeightFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ratios = _floats(args.prune) if args.prune else cfg.prune
    models = {"ha02": params}
    for r in ratios:
        models[f"ha02_pruned@{r:g}"] = prune_weights(params, r)
        log.info("pruning %g retains %d parameters", r, retained_count(params, r))
    n = args.n if args.n is not None else cfg.sweep_n
    records = []
    if args.sweep in ("snr", "both"):
        records += sweep_snr(models, cfg.sweep_snrs, n, cfg.train.doppler_range, cfg.eval_seed, PROFILES[cfg.profile](), cfg.frame)
    if args.sweep in ("doppler", "both"):
        records += sweep_doppler(models, cfg.sweep_dopplers, cfg.doppler_sweep_snr, n, cfg.eval_seed,
                                 PROFILES[cfg.profile](), cfg.frame)
    try:
        emit_results(records, out, cfg.as_dict(), {"eval": cfg.eval_seed, "data": cfg.train.seed}, params)
    except OSError as exc:
        raise CliIOError(str(exc)) from exc
    print(f"wrote {sum(len(r.mse) for r in records)} rows to {out}")
    if args.check:
        failing = model_beats_ls(records)
        if failing:
            print("check failed: HA02 does not beat LS-bilinear at " + ", ".join(failing), file=sys.stderr)
            return EXIT_CHECK
        print("check passed: HA02 beats LS-bilinear at every point")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ha02", description="HA02 channel estimation workbench")
    p.add_argument("--threads", type=int, default=None,
                   help=f"BLAS worker threads (default: ${THREADS_ENV} or all cores)")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded kernels for bit-reproducible reductions")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a training dataset")
    g.add_argument("--config")
    g.add_argument("--count", type=int)
    g.add_argument("--out")
    g.add_argument("--append", action="store_true", help="append a shard to an existing dataset file")
    g.add_argument("--force", action="store_true")

    t = sub.add_parser("train", help="train HA02 on a dataset")
    t.add_argument("--config")
    t.add_argument("--dataset")
    t.add_argument("--out")
    t.add_argument("--history")
    t.add_argument("--epochs", type=int)
    t.add_argument("--count-limit", type=int)
    t.add_argument("--resume", help="resume from a '<weights>.last' checkpoint")
    t.add_argument("--force", action="store_true")

    e = sub.add_parser("evaluate", help="run MSE / denoising-gain sweeps")
    e.add_argument("--config")
    e.add_argument("--weights")
    e.add_argument("--out")
    e.add_argument("--sweep", choices=("snr", "doppler", "both"), default="both")
    e.add_argument("--n", type=int)
    e.add_argument("--prune", help="comma-separated pruning ratios, e.g. 0.1,0.3,0.5")
    e.add_argument("--check", action="store_true", help="exit 1 unless HA02 beats LS-bilinear everywhere")
    e.add_argument("--force", action="store_true")
    return p


def _thread_limit(args):
    n = 1 if args.deterministic else args.threads
    if n is None and os.environ.get(THREADS_ENV):
        n = int(os.environ[THREADS_ENV])
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    commands = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate}
    try:
        cfg = load_config(args.config)
        with _thread_limit(args):
            return commands[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WeightFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliIOError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
