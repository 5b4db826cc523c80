"""Experiment orchestration: device sweeps, SER evaluation, CSV persistence.

A sweep runs a grid of (method, snr, block length) cells.  Each cell
simulates ``devices_per_point`` independent devices; each device draws a
channel realization, transmits one block, trains the method's decoder on
that block alone and decodes the payload.  Error counts aggregate into one
CSV row per cell.

Seed discipline: all randomness derives from the master seed through named
SHA-256 child streams.

* ``device``  stream depends on the device index only, so every method, SNR
  and block length sees the same channel realizations (paired comparisons).
* ``block``   stream depends on (block length, device); noise is drawn as
  unit Gaussians and scaled by sigma, so the same block at two SNRs differs
  only in noise amplitude.
* ``train``   stream depends on (method, snr, block length, device).
* ``holdout`` stream depends on the device only.

Devices are therefore fully isolated: results do not depend on execution
order, and a worker pool over devices is safe.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import K, ChannelParams, optimal_decode, sample_device, transmit_block
from .ssl import (
    TrainConfig,
    TrainingDiverged,
    decode_combined,
    decode_encoder,
    decode_generative,
    train_all_pilots,
    train_mcem,
    train_sdd,
    train_vae,
    train_viterbi_em,
)

log = logging.getLogger(__name__)

METHODS = ("optimal", "all_pilots", "sdd", "mcem", "viterbi_em", "vae")

CSV_HEADER = "method,snr_db,n_symbols,n_pilots,devices,symbols,errors,ser,stderr,seed"


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: the cell grid, the per-device budget and the master seed."""

    snr_db: tuple = (18.0, 20.0)
    block_lengths: tuple = (128, 256, 512, 1024)
    n_pilots: int = 16
    methods: tuple = METHODS
    devices_per_point: int = 50
    master_seed: int = 7
    train: TrainConfig = field(default_factory=TrainConfig)
    out_path: str = "results.csv"
    holdout: bool = False
    holdout_symbols: int = 1000
    threads: int = 1

    def __post_init__(self) -> None:
        snr = tuple(float(v) for v in self.snr_db)
        lengths = tuple(int(n) for n in self.block_lengths)
        methods = tuple(self.methods)
        if not snr or not lengths or not methods:
            raise ValueError("snr_db, block_lengths and methods must be nonempty")
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; valid: {METHODS}")
        if not 1 <= self.n_pilots < min(lengths):
            raise ValueError("n_pilots must satisfy 1 <= n_pilots < min(block_lengths)")
        if self.devices_per_point < 1:
            raise ValueError("devices_per_point must be >= 1")
        if self.holdout_symbols < 1:
            raise ValueError("holdout_symbols must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        object.__setattr__(self, "snr_db", snr)
        object.__setattr__(self, "block_lengths", lengths)
        object.__setattr__(self, "methods", methods)


@dataclass(frozen=True)
class SerRecord:
    """Aggregated result of one (method, snr, block length) cell."""

    method: str
    snr_db: float
    n_symbols: int
    n_pilots: int
    devices: int
    symbols: int
    errors: int
    ser: float
    stderr: float
    seed: int
    n_excluded: int = 0  # diverged devices, tracked but not serialized

    def __post_init__(self) -> None:
        if self.symbols > 0 and abs(self.ser - self.errors / self.symbols) > 1e-12:
            raise ValueError("ser must equal errors / symbols")
        if not 0.0 <= self.ser <= 1.0:
            raise ValueError("ser must lie in [0, 1]")


def child_seed(master_seed: int, *parts) -> int:
    """Stable named child seed: SHA-256 of the master seed and the key parts."""
    key = ":".join([str(master_seed)] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def evaluate_ser(decoder, block) -> tuple[int, int]:
    """Count payload decode errors: positions n_pilots+1..N only.

    ``decoder`` maps an (n, 2) batch of channel outputs to 1-based symbol
    labels and must have been trained on this block's observations only.
    """
    y = block.payload_outputs
    if len(y) == 0:
        return 0, 0
    decoded = np.asarray(decoder(y))
    errors = int(np.count_nonzero(decoded != block.payload_symbols))
    return errors, len(y)


def _build_decoder(method: str, params: ChannelParams, block, train_cfg: TrainConfig, rng):
    """Train (or instantiate) the decode rule for one method on one block.

    sdd/all_pilots decode with the classifier, mcem/viterbi_em with the
    generative model, vae with the averaged posteriors; optimal needs the
    true channel parameters and no training.
    """
    if method == "optimal":
        return lambda y: optimal_decode(params, y)
    if method == "all_pilots":
        enc = train_all_pilots(block, train_cfg, rng)
        return lambda y: decode_encoder(enc, y)
    if method == "sdd":
        enc = train_sdd(block, train_cfg, rng)
        return lambda y: decode_encoder(enc, y)
    if method == "mcem":
        gen = train_mcem(block, train_cfg, rng)
        return lambda y: decode_generative(gen, y)
    if method == "viterbi_em":
        gen = train_viterbi_em(block, train_cfg, rng)
        return lambda y: decode_generative(gen, y)
    if method == "vae":
        enc, gen = train_vae(block, train_cfg, rng)
        return lambda y: decode_combined(enc, gen, y)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class DeviceResult:
    errors: int
    symbols: int
    diverged: bool = False


def run_single_device(
    master_seed: int,
    method: str,
    snr_db: float,
    n_symbols: int,
    n_pilots: int,
    train_cfg: TrainConfig,
    device_index: int,
    holdout: bool = False,
    holdout_symbols: int = 1000,
) -> DeviceResult:
    """Simulate one device end to end; isolated given the master seed."""
    rng_dev = np.random.default_rng(child_seed(master_seed, "device", device_index))
    params = sample_device(rng_dev, snr_db)
    rng_blk = np.random.default_rng(child_seed(master_seed, "block", n_symbols, device_index))
    symbols = rng_blk.integers(1, K + 1, size=n_symbols)
    block = transmit_block(params, symbols, rng_blk, n_pilots=n_pilots)

    rng_train = np.random.default_rng(
        child_seed(master_seed, "train", method, snr_db, n_symbols, device_index)
    )
    try:
        decoder = _build_decoder(method, params, block, train_cfg, rng_train)
    except TrainingDiverged as exc:
        log.warning(
            "excluding device %d (method=%s snr=%g n=%d): %s",
            device_index, method, snr_db, n_symbols, exc,
        )
        return DeviceResult(0, 0, diverged=True)

    if holdout:
        rng_h = np.random.default_rng(child_seed(master_seed, "holdout", device_index))
        fresh = rng_h.integers(1, K + 1, size=holdout_symbols)
        target = transmit_block(params, fresh, rng_h, n_pilots=0)
    else:
        target = block
    errors, total = evaluate_ser(decoder, target)
    return DeviceResult(errors, total)


def _device_task(args) -> DeviceResult:
    return run_single_device(*args)


def run_experiment(config: ExperimentConfig) -> list[SerRecord]:
    """Run every (method, snr, block length) cell of the sweep.

    Fully reproducible from the master seed; aggregation is a sum of error
    counts, so worker scheduling cannot change the result.  Diverged devices
    are excluded from the counts and reported on the record.
    """
    records = []
    for snr in config.snr_db:
        for n in config.block_lengths:
            for method in config.methods:
                tasks = [
                    (
                        config.master_seed, method, snr, n, config.n_pilots,
                        config.train, device, config.holdout, config.holdout_symbols,
                    )
                    for device in range(config.devices_per_point)
                ]
                if config.threads > 1:
                    with ProcessPoolExecutor(max_workers=config.threads) as pool:
                        results = list(pool.map(_device_task, tasks, chunksize=1))
                else:
                    results = [_device_task(t) for t in tasks]
                errors = sum(r.errors for r in results)
                symbols = sum(r.symbols for r in results)
                excluded = sum(1 for r in results if r.diverged)
                ser = errors / symbols if symbols else 0.0
                stderr = float(np.sqrt(ser * (1.0 - ser) / symbols)) if symbols else 0.0
                rec = SerRecord(
                    method=method,
                    snr_db=snr,
                    n_symbols=n,
                    n_pilots=config.n_pilots,
                    devices=len(results) - excluded,
                    symbols=symbols,
                    errors=errors,
                    ser=ser,
                    stderr=stderr,
                    seed=config.master_seed,
                    n_excluded=excluded,
                )
                log.info(
                    "cell method=%s snr=%g n=%d: ser=%.5f (%d/%d), excluded=%d",
                    method, snr, n, ser, errors, symbols, excluded,
                )
                records.append(rec)
    return records


def write_results(records, path) -> None:
    """Write one CSV row per cell (UTF-8, LF endings, full-precision floats)."""
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.method},{r.snr_db!r},{r.n_symbols},{r.n_pilots},{r.devices},"
            f"{r.symbols},{r.errors},{r.ser!r},{r.stderr!r},{r.seed}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_results(path) -> list[SerRecord]:
    """Parse a CSV produced by :func:`write_results` back into records."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {lines[0] if lines else '(empty)'}")
    records = []
    for ln in lines[1:]:
        f = ln.split(",")
        records.append(
            SerRecord(
                method=f[0], snr_db=float(f[1]), n_symbols=int(f[2]), n_pilots=int(f[3]),
                devices=int(f[4]), symbols=int(f[5]), errors=int(f[6]), ser=float(f[7]),
                stderr=float(f[8]), seed=int(f[9]),
            )
        )
    return records
