"""Batch driver: quadrature-convergence studies, the unit-ball benchmark,
and the oracle suite.

Exit codes: 0 ok, 2 usage error, 3 numerical-consistency failure, 4 I/O
error.  Config precedence: command-line flags > TOML config file >
defaults; all resolved values are echoed into the JSON sidecars.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import duffy, oracle
from .assembly import assemble_load, assemble_stiffness, write_matrix, write_sidecar, write_vector
from .errors import ConsistencyError, FraclapError
from .kernels import c_ds
from .mesh import ball_mesh
from .quadrature import OrderPlan, order_plan
from .solver import BallSolution, energy_error, solve

STUDY_CASES = ("tt-face", "tt-edge", "tt-vertex", "tt-identical",
               "tp-face", "tp-edge", "tp-vertex")

CONFIG_KEYS = ("s", "rho1", "rho2", "l", "n1", "n2", "threads", "prefactor_mode")


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _write_csv(path, header, rows):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    except OSError as e:
        raise SystemExit(f"cannot write {path}: {e}") from e


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as e:
        print(f"error: cannot read config {path}: {e}", file=sys.stderr)
        raise SystemExit(4)
    except tomllib.TOMLDecodeError as e:
        print(f"error: bad TOML in {path}: {e}", file=sys.stderr)
        raise SystemExit(2)
    unknown = set(cfg) - set(CONFIG_KEYS)
    if unknown:
        print(f"error: unknown config keys {sorted(unknown)}", file=sys.stderr)
        raise SystemExit(2)
    return cfg


def _resolve(args, cfg, key, default):
    v = getattr(args, key.replace("-", "_"), None)
    if v is not None:
        return v
    if key in cfg:
        return cfg[key]
    return default


# ---------------------------------------------------------------------------
# singular-study
# ---------------------------------------------------------------------------

def _study_values(case, s, h, n_list, n_ref, mode):
    """Q^n values and the Q^n_ref self-reference for one study geometry."""
    cfg = oracle.standard_config(case, scale=h)
    ref = oracle.singular_value(cfg, s, n_ref, mode=mode)
    vals = [oracle.singular_value(cfg, s, n, mode=mode) for n in n_list]
    return vals, ref


def cmd_singular_study(args, cfg):
    case = args.case
    if case not in STUDY_CASES:
        print(f"error: unknown case {case!r}; choose from {STUDY_CASES}",
              file=sys.stderr)
        return 2
    s = float(_resolve(args, cfg, "s", 0.8))
    mode = _resolve(args, cfg, "prefactor_mode", "audit")
    try:
        hs = [float(t) for t in args.h.split(",") if t]
        lo, hi = args.n.split("..")
        n_list = list(range(int(lo), int(hi) + 1))
    except ValueError:
        print("error: bad --h or --n syntax", file=sys.stderr)
        return 2
    rows = []
    for h in hs:
        vals, ref = _study_values(case, s, h, n_list, args.n_ref, mode)
        for n, v in zip(n_list, vals):
            rows.append((case, s, h, n, v, ref, abs(v - ref)))
    _write_csv(args.out, ["case", "s", "h", "n", "value", "ref", "abs_err"], rows)
    sidecar = {
        "command": "singular-study", "case": case, "s": s, "h": hs,
        "n": n_list, "n_ref": args.n_ref, "prefactor_mode": mode,
    }
    with open(args.out + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
    return 0


# ---------------------------------------------------------------------------
# solve-ball
# ---------------------------------------------------------------------------

def cmd_solve_ball(args, cfg):
    s = float(_resolve(args, cfg, "s", 0.5))
    rho1 = float(_resolve(args, cfg, "rho1", 0.75))
    rho2 = float(_resolve(args, cfg, "rho2", 0.75))
    l = _resolve(args, cfg, "l", None)
    if l is None:
        l = min(1.0, s + 0.5 - 1e-3)
    l = float(l)
    threads = int(_resolve(args, cfg, "threads", 1))
    mode = _resolve(args, cfg, "prefactor_mode", "audit")
    n1_over = _resolve(args, cfg, "n1", None)
    n2_over = _resolve(args, cfg, "n2", None)
    try:
        levels = [int(t) for t in args.levels.split(",") if t]
    except ValueError:
        print("error: bad --levels", file=sys.stderr)
        return 2
    if not (0.0 < s < 1.0):
        print("error: s outside (0, 1)", file=sys.stderr)
        return 2

    rows = []
    prev_rel = None
    meta_levels = {}
    for lvl in levels:
        mesh = ball_mesh(lvl)
        h = mesh.mean_diameter()
        # the order rule is vacuous for h >= 1 (coarse macro levels); the
        # clamp keeps the minimum order there
        plan = order_plan(min(h, 0.99), l=l, s=s, rho1=rho1, rho2=rho2)
        if n1_over is not None or n2_over is not None:
            plan = OrderPlan(n1=int(n1_over or plan.n1), n2=int(n2_over or plan.n2),
                             rho1=rho1, rho2=rho2, l=l)
        try:
            system = assemble_stiffness(mesh, s, plan, mode=mode, threads=threads)
            system.g = assemble_load(mesh)
            x = solve(system)
            _, rel = energy_error(system, x, s)
        except ConsistencyError as e:
            print(f"error: {e}\nadvice: raise n1/n2 or rho assumptions",
                  file=sys.stderr)
            return 3
        rate = math.nan if prev_rel is None else math.log2(prev_rel / rel)
        prev_rel = rel
        rows.append((lvl, h, system.size, mesh.num_tets, plan.n1, plan.n2,
                     rel, rate))
        meta_levels[str(lvl)] = {"h": h, "n1": plan.n1, "n2": plan.n2,
                                 "N": system.size, "M": mesh.num_tets,
                                 "rel_err": rel}
        if args.dump_prefix:
            write_matrix(f"{args.dump_prefix}-L{lvl}.mat", system.A)
            write_vector(f"{args.dump_prefix}-L{lvl}.vec", system.g)
            write_sidecar(f"{args.dump_prefix}-L{lvl}.json", system)
        if args.solution_prefix:
            sol = {"coefficients": x.tolist(),
                   "dof_vertices": system.dof_vertices.tolist()}
            with open(f"{args.solution_prefix}-L{lvl}.json", "w",
                      encoding="utf-8") as fh:
                json.dump(sol, fh)
    _write_csv(args.out, ["level", "h", "N", "M", "n1", "n2", "rel_err",
                          "observed_rate"], rows)
    sidecar = {
        "command": "solve-ball", "s": s, "rho1": rho1, "rho2": rho2, "l": l,
        "threads": threads, "prefactor_mode": mode, "levels": meta_levels,
        "energy_norm": "relative error normalized by sqrt(a(u,u))",
        "a_uu": BallSolution(s).energy,
    }
    with open(args.out + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
    return 0


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def cmd_oracle(args, cfg):
    s = float(_resolve(args, cfg, "s", 0.5))
    which = STUDY_CASES if args.case == "all" else (args.case,)
    for c in which:
        if c not in STUDY_CASES:
            print(f"error: unknown case {c!r}", file=sys.stderr)
            return 2
    tol = args.tol
    failed = 0
    print(f"{'case':13s} {'singular':>14s} {'reference':>14s} {'rel_err':>9s}  verdict")
    for case in which:
        cfgp = oracle.standard_config(case)
        zero = oracle.PairConfig(case, cfgp.verts1, cfgp.verts2,
                                 (np.zeros(3), np.zeros(3)) if case.startswith("tt") else np.zeros(3),
                                 (np.zeros(3), np.zeros(3)) if case.startswith("tt") else np.zeros(3),
                                 cfgp.v0i, cfgp.v0j, cfgp.direction, cfgp.normal)
        zval = oracle.singular_value(zero, s, 4)
        if abs(zval) > 1e-14:
            print(f"{case:13s} zero-basis short-circuit FAILED ({zval:.2e})")
            failed += 1
            continue
        ref = oracle.eps_separation_reference(case, s, n=args.n)
        if case == "tp-vertex":
            va = oracle.singular_value(cfgp, s, args.n, mode="audit")
            vp = oracle.singular_value(cfgp, s, args.n, mode="paper")
            rel_a = abs(va - ref.value) / abs(ref.value)
            rel_p = abs(vp - ref.value) / abs(ref.value)
            winner = "audit" if rel_a < rel_p else "paper"
            ok = min(rel_a, rel_p) <= tol
            print(f"{case:13s} {va:14.6e} {ref.value:14.6e} {rel_a:9.2e}  "
                  f"{'pass' if ok else 'FAIL'} [winning prefactor mode: {winner}; "
                  f"paper/audit value ratio {vp / va:.4f}]")
            failed += 0 if (ok and winner == "audit") else 1
            continue
        val = oracle.singular_value(cfgp, s, args.n)
        rel = abs(val - ref.value) / abs(ref.value)
        ok = rel <= tol
        print(f"{case:13s} {val:14.6e} {ref.value:14.6e} {rel:9.2e}  "
              f"{'pass' if ok else 'FAIL'}")
        failed += 0 if ok else 1
    return 0 if failed == 0 else 3


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="fraclap",
                                description=__doc__.splitlines()[0])
    p.add_argument("--config", help="TOML config file", default=None)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("singular-study",
                        help="quadrature error vs Gauss order for one case")
    ps.add_argument("--case", required=True)
    ps.add_argument("--s", type=float, default=None)
    ps.add_argument("--h", default="1", help="comma list of scales")
    ps.add_argument("--n", default="2..8", help="order range lo..hi")
    ps.add_argument("--n-ref", type=int, default=20)
    ps.add_argument("--prefactor-mode", choices=("audit", "paper"), default=None)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_singular_study)

    pb = sub.add_parser("solve-ball", help="unit-ball benchmark")
    pb.add_argument("--s", type=float, default=None)
    pb.add_argument("--levels", default="1,2,3")
    pb.add_argument("--rho1", type=float, default=None)
    pb.add_argument("--rho2", type=float, default=None)
    pb.add_argument("--l", type=float, default=None)
    pb.add_argument("--n1", type=int, default=None)
    pb.add_argument("--n2", type=int, default=None)
    pb.add_argument("--threads", type=int, default=None)
    pb.add_argument("--prefactor-mode", choices=("audit", "paper"), default=None)
    pb.add_argument("--dump-prefix", default=None,
                    help="write matrix/vector dumps with this prefix")
    pb.add_argument("--solution-prefix", default=None)
    pb.add_argument("--out", required=True)
    pb.set_defaults(func=cmd_solve_ball)

    po = sub.add_parser("oracle", help="independent-reference pass/fail table")
    po.add_argument("case", nargs="?", default="all")
    po.add_argument("--s", type=float, default=None)
    po.add_argument("--n", type=int, default=14)
    po.add_argument("--tol", type=float, default=1e-3)
    po.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = _load_config(args.config)
    try:
        rc = args.func(args, cfg)
    except FraclapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4
    return rc


if __name__ == "__main__":
    sys.exit(main())
