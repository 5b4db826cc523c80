#!/usr/bin/env python3
"""Render SER-vs-block-length curves from a benchmark results CSV.

One figure per SNR value: block length on the x axis, symbol error rate on a
log-scale y axis with binomial error bars, one line per method.  The input
schema is the harness CSV:

    method,snr_db,n_symbols,n_pilots,devices,symbols,errors,ser,stderr,seed

Usage:
    plot_ser.py --in results.csv --out figs/ --fmt svg
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

EXPECTED_HEADER = [
    "method", "snr_db", "n_symbols", "n_pilots", "devices",
    "symbols", "errors", "ser", "stderr", "seed",
]

SER_FLOOR = 1e-4  # display floor for the log axis

# stable curve order and styling; anything unknown comes after, alphabetically
METHOD_ORDER = ["optimal", "all_pilots", "sdd", "mcem", "viterbi_em", "vae"]
MARKERS = ["o", "s", "^", "v", "D", "x", "*", "+"]


class SchemaError(ValueError):
    """The CSV header does not match the documented schema."""


class EmptyDataError(ValueError):
    """The CSV parses but contains no data rows."""


@dataclass(frozen=True)
class PlotSpec:
    csv_path: Path
    out_dir: Path
    fmt: str = "svg"

    def __post_init__(self) -> None:
        if self.fmt not in ("svg", "png"):
            raise ValueError(f"unsupported format {self.fmt!r}; use svg or png")


def load_records(csv_path) -> list[dict]:
    """Parse and validate the results CSV; returns one dict per data row."""
    path = Path(csv_path)
    if not path.exists():
        raise FileNotFoundError(f"input CSV not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").split("\n") if ln.strip()]
    if not lines:
        raise SchemaError("empty file: expected the results CSV header")
    header = lines[0].split(",")
    for i, expected in enumerate(EXPECTED_HEADER):
        found = header[i] if i < len(header) else "(missing)"
        if found != expected:
            raise SchemaError(f"column {i + 1}: expected {expected!r}, found {found!r}")
    if len(header) > len(EXPECTED_HEADER):
        raise SchemaError(f"unexpected extra column {header[len(EXPECTED_HEADER)]!r}")

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        f = line.split(",")
        if len(f) != len(EXPECTED_HEADER):
            raise SchemaError(f"line {lineno}: expected {len(EXPECTED_HEADER)} fields, got {len(f)}")
        try:
            records.append(
                {
                    "method": f[0],
                    "snr_db": float(f[1]),
                    "n_symbols": int(f[2]),
                    "n_pilots": int(f[3]),
                    "devices": int(f[4]),
                    "symbols": int(f[5]),
                    "errors": int(f[6]),
                    "ser": float(f[7]),
                    "stderr": float(f[8]),
                    "seed": int(f[9]),
                }
            )
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from exc
    if not records:
        raise EmptyDataError("no data rows in CSV; nothing to plot")
    return records


def _method_key(name: str):
    try:
        return (0, METHOD_ORDER.index(name))
    except ValueError:
        return (1, name)


def build_figures(records) -> dict[float, plt.Figure]:
    """One figure per SNR: SER vs block length, one error-bar line per method."""
    figures = {}
    for snr in sorted({r["snr_db"] for r in records}):
        rows = [r for r in records if r["snr_db"] == snr]
        methods = sorted({r["method"] for r in rows}, key=_method_key)
        fig, ax = plt.subplots(figsize=(7.0, 5.0))
        for i, method in enumerate(methods):
            pts = sorted((r["n_symbols"], r["ser"], r["stderr"]) for r in rows if r["method"] == method)
            x = [p[0] for p in pts]
            y = [max(p[1], SER_FLOOR) for p in pts]
            yerr = [p[2] for p in pts]
            ax.errorbar(
                x, y, yerr=yerr, label=method,
                marker=MARKERS[i % len(MARKERS)], capsize=3, linewidth=1.2, markersize=5,
            )
        ax.set_yscale("log")
        ax.set_ylim(bottom=SER_FLOOR)
        ax.set_xlabel("block length N (symbols)")
        ax.set_ylabel("symbol error rate")
        ax.set_title(f"SER vs block length, SNR = {snr:g} dB")
        ax.grid(True, which="both", linestyle=":", linewidth=0.6)
        ax.legend()
        fig.tight_layout()
        figures[snr] = fig
    return figures


def snr_tag(value: float) -> str:
    return f"{value:g}"


def render(spec: PlotSpec) -> list[Path]:
    """Write one image per SNR; deterministic bytes for identical input."""
    plt.rcParams["svg.hashsalt"] = "ser-plots"
    records = load_records(spec.csv_path)
    figures = build_figures(records)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for snr, fig in sorted(figures.items()):
        out = spec.out_dir / f"ser_snr{snr_tag(snr)}.{spec.fmt}"
        metadata = {"Date": None} if spec.fmt == "svg" else None
        fig.savefig(out, format=spec.fmt, metadata=metadata)
        plt.close(fig)
        written.append(out)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--in", dest="csv_path", required=True, help="results CSV path")
    parser.add_argument("--out", dest="out_dir", required=True, help="output directory")
    parser.add_argument("--fmt", default="svg", choices=("svg", "png"))
    args = parser.parse_args(argv)
    try:
        spec = PlotSpec(Path(args.csv_path), Path(args.out_dir), args.fmt)
        written = render(spec)
    except (SchemaError, EmptyDataError, FileNotFoundError, ValueError) as exc:
        print(f"plot_ser: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"plot_ser: cannot write output: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
