"""Render figures from eelab experiment CSV files.

Three figure kinds are supported, matching the CSV schemas of the
compare-autocov, kernel-distance, and concentration subcommands:

  autocov       lag,ee,pt,mh[,ee_bound,pt_lower]
  kernel-decay  T,distance[,se]
  coverage      [delta,]r,p_hat,ci99_upper,bound

A figure is described by a small TOML spec:

  kind = "autocov"
  csv = ["compare.csv"]          # one or more input tables
  out = "autocov.svg"            # .svg or .png
  logx = true                    # optional, kind-dependent defaults
  logy = false

Rendering is deterministic: repeated runs on the same inputs produce
byte-identical files (embedded timestamps are suppressed and the SVG id
hash salt is fixed).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "eelabplots"

import matplotlib.pyplot as plt  # noqa: E402

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

KINDS = ("autocov", "kernel-decay", "coverage")

REQUIRED_COLUMNS = {
    "autocov": ("lag", "ee", "pt", "mh"),
    "kernel-decay": ("T", "distance"),
    "coverage": ("r", "p_hat", "ci99_upper", "bound"),
}

# (logx, logy) defaults per kind
DEFAULT_SCALES = {
    "autocov": (True, False),
    "kernel-decay": (True, True),
    "coverage": (False, True),
}


class RenderError(Exception):
    """Anything that should abort rendering with a nonzero exit."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    csv_paths: tuple[str, ...]
    out: str
    logx: bool
    logy: bool


def load_spec(path: str) -> FigureSpec:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise RenderError(f"spec file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise RenderError(f"invalid TOML in {path}: {exc}")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise RenderError(f"unknown figure kind {kind!r}; expected one of {KINDS}")
    sources = raw.get("csv")
    if isinstance(sources, str):
        sources = [sources]
    if not sources or not all(isinstance(s, str) for s in sources):
        raise RenderError("spec needs 'csv': a CSV path or list of paths")
    out = raw.get("out")
    if not isinstance(out, str) or not out:
        raise RenderError("spec needs 'out': the output image path")
    dlx, dly = DEFAULT_SCALES[kind]
    return FigureSpec(
        kind=kind,
        csv_paths=tuple(sources),
        out=out,
        logx=bool(raw.get("logx", dlx)),
        logy=bool(raw.get("logy", dly)),
    )


def read_table(path: str, kind: str) -> dict[str, list[float]]:
    """Read a CSV into float columns, validating the kind's schema."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise RenderError(f"{path}: empty file, no header row")
            have = list(reader.fieldnames)
            missing = [c for c in REQUIRED_COLUMNS[kind] if c not in have]
            if missing:
                raise RenderError(
                    f"{path}: schema mismatch for kind {kind!r}: "
                    f"missing columns {missing}, found {have}"
                )
            cols: dict[str, list[float]] = {c: [] for c in have}
            for row in reader:
                for c in have:
                    try:
                        cols[c].append(float(row[c]))
                    except (TypeError, ValueError):
                        raise RenderError(
                            f"{path}: non-numeric value {row[c]!r} in column {c!r}"
                        )
    except FileNotFoundError:
        raise RenderError(f"input CSV not found: {path}")
    n = len(cols[REQUIRED_COLUMNS[kind][0]])
    if n == 0:
        raise RenderError(f"{path}: no data rows")
    return cols


def _series_label(base: str, path: str, multi: bool) -> str:
    return f"{Path(path).stem}: {base}" if multi else base


def _finite_pairs(xs, ys):
    pts = [(x, y) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
    return [p[0] for p in pts], [p[1] for p in pts]


def _draw_autocov(ax, spec: FigureSpec) -> None:
    multi = len(spec.csv_paths) > 1
    for path in spec.csv_paths:
        cols = read_table(path, "autocov")
        lags = cols["lag"]
        for name, style in (("ee", "-"), ("pt", "-"), ("mh", "-")):
            ax.plot(lags, cols[name], style,
                    label=_series_label(name.upper(), path, multi))
        for name, label in (("ee_bound", "EE bound"), ("pt_lower", "PT lower")):
            if name in cols:
                xs, ys = _finite_pairs(lags, cols[name])
                if xs:
                    ax.plot(xs, ys, "--",
                            label=_series_label(label, path, multi))
    ax.set_xlabel("lag")
    ax.set_ylabel("normalized autocovariance")
    if spec.logx:
        ax.set_xscale("symlog", linthresh=1.0)


def _draw_kernel_decay(ax, spec: FigureSpec) -> None:
    multi = len(spec.csv_paths) > 1
    anchor = None
    for path in spec.csv_paths:
        cols = read_table(path, "kernel-decay")
        ts, ds = cols["T"], cols["distance"]
        if "se" in cols:
            ax.errorbar(ts, ds, yerr=cols["se"], fmt="o-", capsize=3,
                        label=_series_label("distance", path, multi))
        else:
            ax.plot(ts, ds, "o-", label=_series_label("distance", path, multi))
        if anchor is None and ts and ds[0] > 0:
            anchor = (ts[0], ds[0], ts[-1])
    if anchor is not None:
        t0, d0, t1 = anchor
        guide_ts = [t0, t1]
        guide = [d0 * (t / t0) ** (-1.0 / 3.0) for t in guide_ts]
        ax.plot(guide_ts, guide, ":", color="gray", label="slope -1/3 guide")
    ax.set_xlabel("T")
    ax.set_ylabel("kernel distance")
    if spec.logx:
        ax.set_xscale("log")
    if spec.logy:
        ax.set_yscale("log")


def _draw_coverage(ax, spec: FigureSpec) -> None:
    multi = len(spec.csv_paths) > 1
    for path in spec.csv_paths:
        cols = read_table(path, "coverage")
        groups: dict[float, list[int]] = {}
        deltas = cols.get("delta", [0.0] * len(cols["r"]))
        for i, d in enumerate(deltas):
            groups.setdefault(d, []).append(i)
        tagged = len(groups) > 1
        for d, idx in sorted(groups.items()):
            rs = [cols["r"][i] for i in idx]
            suffix = f" (delta={d:g})" if tagged else ""
            for name, label, style in (
                ("p_hat", "empirical tail", "o-"),
                ("ci99_upper", "99% upper CI", "s--"),
                ("bound", "certified bound", "-"),
            ):
                ys = [cols[name][i] for i in idx]
                if spec.logy:
                    # log scale cannot show exact zeros; drop them
                    xs, ys = _finite_pairs(
                        rs, [y if y > 0 else math.nan for y in ys]
                    )
                else:
                    xs = rs
                if xs:
                    ax.plot(xs, ys, style,
                            label=_series_label(label + suffix, path, multi))
    ax.set_xlabel("r")
    ax.set_ylabel("tail probability")
    if spec.logx:
        ax.set_xscale("log")
    if spec.logy:
        ax.set_yscale("log")


_DRAWERS = {
    "autocov": _draw_autocov,
    "kernel-decay": _draw_kernel_decay,
    "coverage": _draw_coverage,
}


def render(spec: FigureSpec) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        _DRAWERS[spec.kind](ax, spec)
        ax.legend(loc="best", fontsize="small")
        ax.set_title(spec.kind)
        fig.tight_layout()
        # suppress embedded timestamps so output bytes are reproducible
        fmt = Path(spec.out).suffix.lstrip(".").lower() or "svg"
        if fmt not in ("svg", "png"):
            raise RenderError(f"unsupported output format {fmt!r} (use svg or png)")
        meta = {"Date": None} if fmt == "svg" else {"Software": None}
        fig.savefig(spec.out, format=fmt, metadata=meta)
    finally:
        plt.close(fig)


def render_figure(spec_path: str) -> int:
    """Load a TOML figure spec and render it; returns a process exit code."""
    try:
        spec = load_spec(spec_path)
        render(spec)
    except RenderError as exc:
        print(f"render error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="eelab-render", description="Render figures from eelab CSV outputs."
    )
    parser.add_argument("--spec", required=True, help="TOML figure spec path")
    args = parser.parse_args(argv)
    return render_figure(args.spec)


if __name__ == "__main__":
    sys.exit(main())
