"""Command line driver for the benchmark studies.

Every subcommand writes a CSV table and ``manifest.txt`` into ``--out``.
"""
from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .dynamics import write_snapshot
from .experiments import (INNER_H, OUTER_H, SWEEP_COLUMNS, condition_sweep,
                          run_aligned_reference, run_immersed_spectrum, run_inner, run_outer,
                          solve_outer, with_rates, write_error_csv, write_rows_csv)
from .forms import StabilizationConfig

logger = logging.getLogger("cutwave")

SPECTRAL_COLUMNS = ["p", "h", "cfl", "kappa", "lambda_min_scaled", "lambda_max_scaled"]


def _config(args, p: int) -> StabilizationConfig:
    cfg = StabilizationConfig.defaults(p, weight_mode=args.weights)
    if args.gamma_m is not None:
        cfg = replace(cfg, gamma_m=args.gamma_m)
    if args.gamma_a is not None:
        cfg = replace(cfg, gamma_a=args.gamma_a)
    if args.gamma_d is not None:
        cfg = replace(cfg, gamma_d=args.gamma_d)
    return cfg


def _write_manifest(out: Path, args, extra: dict) -> None:
    lines = [f"command: {' '.join(sys.argv)}",
             f"cutwave: {__version__}",
             f"python: {platform.python_version()}",
             f"numpy: {np.__version__}",
             f"scipy: {scipy.__version__}",
             "seed: none (all computations are deterministic)",
             f"time: {time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    for k, v in sorted(vars(args).items()):
        if k != "func":
            lines.append(f"{k}: {v}")
    for k, v in extra.items():
        lines.append(f"{k}: {v}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _snapshots(out: Path, tag: str, space, integration, fmt: str) -> list[str]:
    names = []
    for k, st in enumerate(integration.snapshots):
        path = out / f"{tag}_snap{k:03d}.{fmt}"
        write_snapshot(path, space, st, fmt)
        names.append(path.name)
    return names


def cmd_inner(args, out: Path) -> dict:
    extra = {}
    for p in args.p:
        rows = []
        for h in args.h or INNER_H:
            r = run_inner(p, h, args.space, args.mode, geometry=args.geometry,
                          config=_config(args, p), t_final=args.tf, snapshots=args.snapshots)
            rows.append(r.row)
            extra[f"p{p}_h{h}"] = r.info
            if args.snapshots:
                _snapshots(out, f"inner_p{p}_h{h}", r.disc.space, r.integration, args.snapshot_format)
            print(f"p={p} h={h}: L2={r.row.e_L2:.4e} H1={r.row.e_H1:.4e} "
                  f"boundary={r.row.e_boundary:.4e} ({r.seconds:.1f}s)")
        write_error_csv(out / f"inner_{args.space}_p{p}.csv", with_rates(rows))
    return extra


def cmd_outer(args, out: Path) -> dict:
    extra = {}
    kw = {"geometry": args.geometry}
    if args.tf is not None:
        kw["t_final"] = args.tf
    for p in args.p:
        hs = sorted(args.h or OUTER_H, reverse=True)
        ref = solve_outer(p, hs[-1] / 2, config=_config(args, p), **kw)
        extra[f"p{p}_reference_h"] = ref.h
        rows = []
        for h in hs:
            sol = solve_outer(p, h, config=_config(args, p), snapshots=args.snapshots, **kw)
            r = run_outer(p, h, ref, solution=sol)
            rows.append(r.row)
            extra[f"p{p}_h{h}"] = r.info
            if args.snapshots:
                _snapshots(out, f"outer_p{p}_h{h}", sol.disc.space, sol.integration,
                           args.snapshot_format)
            print(f"p={p} h={h}: L2={r.row.e_L2:.4e} H1={r.row.e_H1:.4e} "
                  f"normal derivative={r.row.e_boundary:.4e}")
        write_error_csv(out / f"outer_p{p}.csv", with_rates(rows))
    return extra


def _spectral(args, out: Path, name: str, fn) -> dict:
    rows = []
    for p in args.p:
        for h in args.h or (0.12, 0.06, 0.03):
            row = fn(p, h)
            rows.append(row)
            print(f"p={p} h={h}: C_FL={row.cfl:.4f} kappa(M)={row.kappa:.4e}")
        mean = np.mean([r.cfl for r in rows if r.p == p])
        print(f"p={p}: mean C_FL={mean:.4f}")
    write_rows_csv(out / f"{name}.csv", rows, SPECTRAL_COLUMNS)
    return {}


def cmd_aligned(args, out: Path) -> dict:
    return _spectral(args, out, "aligned", run_aligned_reference)


def cmd_cfl(args, out: Path) -> dict:
    return _spectral(args, out, f"immersed_{args.space}", lambda p, h: run_immersed_spectrum(
        p, h, args.space, geometry=args.geometry, config=_config(args, p)))


def cmd_cond_sweep(args, out: Path) -> dict:
    rows = condition_sweep(args.p, args.h or (0.06,), args.offsets, args.space,
                           geometry=args.geometry, path=out / f"cond_sweep_{args.space}.csv")
    for r in rows:
        print(f"p={r.p} h={r.h} offset={r.offset:g}h: kappa stabilized={r.kappa_stabilized:.3e} "
              f"unstabilized={r.kappa_unstabilized:.3e} (>= {r.kappa_unstabilized_lower:.3e})")
    return {}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--p", type=int, nargs="+", choices=(1, 2, 3), default=[1])
    common.add_argument("--h", type=float, nargs="+", default=None)
    common.add_argument("--space", choices=("full", "reduced"), default="full")
    common.add_argument("--geometry", choices=("analytic", "projected"), default="projected")
    common.add_argument("--gamma-m", type=float, default=None)
    common.add_argument("--gamma-a", type=float, default=None)
    common.add_argument("--gamma-d", type=float, default=None)
    common.add_argument("--weights", choices=("scaled", "raw"), default="scaled")
    common.add_argument("--tf", type=float, default=None, help="final time override")
    common.add_argument("--snapshots", type=int, default=0)
    common.add_argument("--snapshot-format", choices=("csv", "vtk"), default="csv")
    common.add_argument("--out", type=Path, default=Path("results"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cutwave", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("inner", parents=[common], help="disk with a standing Bessel mode")
    p.add_argument("--mode", type=int, default=2, help="Bessel mode index n")
    p.set_defaults(func=cmd_inner)
    p = sub.add_parser("outer", parents=[common], help="pulse scattered by a star")
    p.set_defaults(func=cmd_outer)
    p = sub.add_parser("aligned", parents=[common], help="uncut reference spectra")
    p.set_defaults(func=cmd_aligned)
    p = sub.add_parser("cfl", parents=[common], help="immersed CFL numbers and mass spectra")
    p.set_defaults(func=cmd_cfl)
    p = sub.add_parser("cond-sweep", parents=[common], help="condition numbers under disk shifts")
    p.add_argument("--offsets", type=float, nargs="+", default=[0.5, 1e-2, 1e-4, 1e-6],
                   help="disk shifts in units of h")
    p.set_defaults(func=cmd_cond_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    extra = args.func(args, out)
    _write_manifest(out, args, extra)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
