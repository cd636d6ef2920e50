#!/usr/bin/env python3
"""Render the benchmark convergence figure: log-log relative energy error
versus h, with an h^(1/2)|log h| reference curve anchored at the finest
data point.

Usage: plot_convergence.py IN.csv OUT.png

Reads only the solve-ball CSV schema
(level,h,N,M,n1,n2,rel_err,observed_rate); schema violations exit with 2.
Output images carry no timestamps, so reruns are byte-identical.
"""

import csv
import math
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

EXPECTED_HEADER = ["level", "h", "N", "M", "n1", "n2", "rel_err",
                   "observed_rate"]


def load_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                print(f"error: {path} is empty", file=sys.stderr)
                raise SystemExit(2)
            if header != EXPECTED_HEADER:
                print(f"error: unexpected header {header!r}; expected "
                      f"{EXPECTED_HEADER!r}", file=sys.stderr)
                raise SystemExit(2)
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(EXPECTED_HEADER):
                    print(f"error: line {lineno}: wrong column count",
                          file=sys.stderr)
                    raise SystemExit(2)
                try:
                    rows.append({"h": float(row[1]), "rel_err": float(row[6])})
                except ValueError:
                    print(f"error: line {lineno}: non-numeric field",
                          file=sys.stderr)
                    raise SystemExit(2)
    except OSError as e:
        print(f"error: cannot read {path}: {e}", file=sys.stderr)
        raise SystemExit(2)
    if not rows:
        print(f"error: {path} has no data rows", file=sys.stderr)
        raise SystemExit(2)
    return rows


def reference_curve(hs, anchor_h, anchor_e):
    """h^(1/2) |log h| scaled through the anchor point."""
    def model(h):
        return math.sqrt(h) * max(abs(math.log(min(h, 0.99))), 1e-3)

    c = anchor_e / model(anchor_h)
    return [c * model(h) for h in hs]


def render(rows, out_path):
    rows = sorted(rows, key=lambda r: -r["h"])
    hs = [r["h"] for r in rows]
    errs = [r["rel_err"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.loglog(hs, errs, marker="o", label="relative error")
    href = np.geomspace(min(hs), max(hs), 64)
    ax.loglog(href, reference_curve(href, hs[-1], errs[-1]), "--",
              label=r"$h^{1/2}\,|\log h|$")
    ax.set_xlabel("h")
    ax.set_ylabel("relative energy error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=130, metadata={"Software": "fraclap-plots"})
    plt.close(fig)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: plot_convergence.py IN.csv OUT.png", file=sys.stderr)
        return 2
    rows = load_rows(argv[0])
    try:
        render(rows, argv[1])
    except OSError as e:
        print(f"error: cannot write {argv[1]}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
