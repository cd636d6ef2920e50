#!/usr/bin/env python3
"""Render the quadrature-error study: log-scale E^n versus the Gauss order,
one line per geometry scale h.

Usage: plot_singular.py IN.csv OUT.png

Reads only the singular-study CSV schema
(case,s,h,n,value,ref,abs_err); schema violations exit with code 2.
Output images carry no timestamps, so reruns are byte-identical.
"""

import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

EXPECTED_HEADER = ["case", "s", "h", "n", "value", "ref", "abs_err"]


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
                    rows.append({
                        "case": row[0],
                        "s": float(row[1]),
                        "h": float(row[2]),
                        "n": int(row[3]),
                        "abs_err": float(row[6]),
                    })
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


def render(rows, out_path):
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    case = rows[0]["case"]
    s = rows[0]["s"]
    floor = 1e-17
    for h in sorted({r["h"] for r in rows}, reverse=True):
        pts = sorted((r["n"], max(r["abs_err"], floor))
                     for r in rows if r["h"] == h)
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts],
                    marker="o", label=f"h = {h:g}")
    ax.set_xlabel("n")
    ax.set_ylabel(r"$E^n$")
    ax.set_title(f"{case}, s = {s:g}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=130, metadata={"Software": "fraclap-plots"})
    plt.close(fig)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: plot_singular.py IN.csv OUT.png", file=sys.stderr)
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
