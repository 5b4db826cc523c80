"""Command line front end: ``ssl-channel-lab run``.

Configuration comes from an optional key=value file plus flag overrides;
flags win.  The file format mirrors ExperimentConfig (and accepts the
training hyperparameters), one ``key = value`` pair per line, ``#`` for
comments, commas for lists:

    snr_db  = 18, 20
    n       = 128, 256, 512, 1024
    n_pilots = 16
    methods = optimal, all_pilots, sdd, mcem, viterbi_em, vae
    devices = 50
    seed    = 7
    out     = results.csv
    threads = 1
    holdout = false
    # training overrides
    total_updates = 5000
    eta = 0.001
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from .harness import METHODS, ExperimentConfig, run_experiment, write_results
from .ssl import TrainConfig


class ConfigError(ValueError):
    pass


_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}

_BOOL_KEYS = {"holdout", "standardize_input"}
_INT_KEYS = {
    "n_pilots", "devices", "seed", "threads", "holdout_symbols",
    "n_pilot_batch", "n_payload_batch", "total_updates", "sdd_warmup", "schedule_period",
}
_FLOAT_KEYS = {"gamma0", "alpha", "eta"}
_LIST_KEYS = {"snr_db", "n", "methods"}
_STR_KEYS = {"out", "activation"}

_KNOWN_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _LIST_KEYS | _STR_KEYS


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def load_config_file(path) -> dict:
    """Parse the key=value file into a plain dict of typed values."""
    out = {}
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key in _BOOL_KEYS:
                out[key] = _parse_bool(raw, key)
            elif key in _INT_KEYS:
                out[key] = int(raw)
            elif key in _FLOAT_KEYS:
                out[key] = float(raw)
            elif key == "methods":
                out[key] = tuple(v.strip() for v in raw.split(",") if v.strip())
            elif key == "snr_db":
                out[key] = tuple(float(v) for v in raw.split(","))
            elif key == "n":
                out[key] = tuple(int(v) for v in raw.split(","))
            else:
                out[key] = raw
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def _csv_list(raw: str, cast):
    return tuple(cast(v.strip()) for v in raw.split(",") if v.strip())


def build_config(file_values: dict, args) -> ExperimentConfig:
    """Merge file values and CLI overrides into an ExperimentConfig."""
    merged = dict(file_values)
    if args.snr_db is not None:
        merged["snr_db"] = _csv_list(args.snr_db, float)
    if args.n is not None:
        merged["n"] = _csv_list(args.n, int)
    if args.n_pilots is not None:
        merged["n_pilots"] = args.n_pilots
    if args.methods is not None:
        merged["methods"] = _csv_list(args.methods, str)
    if args.devices is not None:
        merged["devices"] = args.devices
    if args.seed is not None:
        merged["seed"] = args.seed
    if args.out is not None:
        merged["out"] = args.out
    if args.threads is not None:
        merged["threads"] = args.threads
    if args.holdout:
        merged["holdout"] = True

    train_kwargs = {k: v for k, v in merged.items() if k in _TRAIN_KEYS}
    try:
        train = TrainConfig(**train_kwargs)
        return ExperimentConfig(
            snr_db=merged.get("snr_db", (18.0, 20.0)),
            block_lengths=merged.get("n", (128, 256, 512, 1024)),
            n_pilots=merged.get("n_pilots", 16),
            methods=merged.get("methods", METHODS),
            devices_per_point=merged.get("devices", 50),
            master_seed=merged.get("seed", 7),
            train=train,
            out_path=merged.get("out", "results.csv"),
            holdout=merged.get("holdout", False),
            holdout_symbols=merged.get("holdout_symbols", 1000),
            threads=merged.get("threads", 1),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ssl-channel-lab",
        description="SER benchmark for semi-supervised decoders over a nonlinear channel",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment sweep and write a results CSV")
    run.add_argument("--config", help="key=value config file")
    run.add_argument("--snr-db", dest="snr_db", help="comma list, e.g. 18,20")
    run.add_argument("--n", help="comma list of block lengths, e.g. 128,256,512,1024")
    run.add_argument("--n-pilots", dest="n_pilots", type=int)
    run.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
    run.add_argument("--devices", type=int, help="devices per (method, snr, n) cell")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--out", help="output CSV path")
    run.add_argument("--threads", type=int, help="worker pool size (1 = in-process)")
    run.add_argument(
        "--holdout", action="store_true",
        help="evaluate on fresh holdout symbols instead of the block's own payload",
    )
    run.add_argument("-v", "--verbose", action="store_true")

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        file_values = load_config_file(args.config) if args.config else {}
        config = build_config(file_values, args)
    except ConfigError as exc:
        print(f"ssl-channel-lab: config error: {exc}", file=sys.stderr)
        return 2

    records = run_experiment(config)
    try:
        write_results(records, config.out_path)
    except OSError as exc:
        print(f"ssl-channel-lab: cannot write {config.out_path}: {exc}", file=sys.stderr)
        return 1
    for r in records:
        print(
            f"{r.method:>10s}  snr={r.snr_db:g}dB  n={r.n_symbols:<5d} "
            f"ser={r.ser:.5f} +- {r.stderr:.5f}  ({r.errors}/{r.symbols}, "
            f"{r.devices} devices{', %d excluded' % r.n_excluded if r.n_excluded else ''})"
        )
    print(f"wrote {config.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
