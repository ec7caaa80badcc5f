"""Command-line front end.

Exit status: 0 success, 2 configuration error, 3 numeric or domain
error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .config import dump_config, parse_config
from .diffusion import PathEnsemble, extract_pairs, simulate_ensemble
from .errors import ConfigError, DomainError, NwpcoError
from .estimators import EvalGrid, TruncationSpec, estimate_f, estimate_p, estimate_s
from .pco import select_ell, select_h, shared_histogram

log = logging.getLogger("nwpco")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML experiment file")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", default="1",
                        help="worker processes for repetitions, or 'auto'")
    common.add_argument("--seed", type=int, help="base seed (overrides bench.seed)")
    verb = common.add_mutually_exclusive_group()
    verb.add_argument("--quiet", action="store_true")
    verb.add_argument("--verbose", action="store_true")

    p = _Parser(prog="nwpco", description="Transition density estimation from i.i.d. paths")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="write one simulated ensemble")
    s.add_argument("--format", choices=("csv", "npz"), default="npz")
    s.add_argument("--rep", type=int, default=0, help="repetition substream")
    for name, text in (("estimate", "estimator grids at fixed bandwidths"),
                       ("select", "bandwidth selection report")):
        e = sub.add_parser(name, parents=[common], help=text)
        e.add_argument("--ensemble", help="ensemble file (.csv/.npz); simulated if omitted")
        e.add_argument("--rep", type=int, default=0)
        if name == "estimate":
            e.add_argument("--h", type=float, default=0.2, help="joint bandwidth (isotropic)")
            e.add_argument("--ell", type=float, default=0.2, help="marginal bandwidth")
    sub.add_parser("bench", parents=[common], help="Monte Carlo MISE report")
    f = sub.add_parser("surface", parents=[common], help="truth/estimate grids of one run")
    f.add_argument("--rep", type=int, default=0)
    return p


def _workers(value: str) -> int:
    if value == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"--threads must be an integer or 'auto', got {value!r}") from None
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    return n


def _load_config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"bench.seed={args.seed}")
    return parse_config(args.config, overrides)


def _ensemble(args, cfg):
    if getattr(args, "ensemble", None):
        return PathEnsemble.load(args.ensemble)
    return simulate_ensemble(cfg.model, cfg.N, cfg.n_steps, cfg.delta, cfg.seed,
                             stream=(args.rep,))


def _mise_grid(cfg, ens):
    q = cfg.quantile_levels
    xt, yt = ens.column(cfg.t), ens.column(cfg.t + 1.0)
    return EvalGrid.linspace(bench.quantile(xt, q.x_lo), bench.quantile(xt, q.x_hi), cfg.M,
                             bench.quantile(yt, q.y_lo), bench.quantile(yt, q.y_hi), cfg.M)


def cmd_simulate(args, cfg, out: Path):
    ens = _ensemble(args, cfg)
    path = ens.save(out / f"ensemble_{cfg.model.kind.value}_N{cfg.N}_rep{args.rep}.{args.format}")
    print(path)


def cmd_estimate(args, cfg, out: Path):
    ens = _ensemble(args, cfg)
    pairs = extract_pairs(ens, cfg.t0, cfg.T, cfg.t)
    grid = _mise_grid(cfg, ens)
    f = estimate_f(pairs, args.ell, EvalGrid(grid.x))
    s = estimate_s(pairs, args.h, grid)
    p = estimate_p(s, f, TruncationSpec.plugin(grid.x[0], grid.x[-1]))
    for name, est in (("f", f), ("s", s), ("p", p)):
        print(est.to_csv(out / f"estimate_{name}.csv"))


def cmd_select(args, cfg, out: Path):
    ens = _ensemble(args, cfg)
    pairs = extract_pairs(ens, cfg.t0, cfg.T, cfg.t)
    hist = shared_histogram(pairs, cfg.pco) if cfg.pco.resolve_penalty(pairs) == "binned" else None
    report = {"ell": select_ell(pairs, cfg.pco, hist=hist).to_dict(),
              "h": select_h(pairs, cfg.pco, hist=hist).to_dict()}
    path = out / "selection.json"
    path.write_text(json.dumps(report, indent=2))
    print(f"ell = {report['ell']['chosen']}  h = {report['h']['chosen']}")
    print(path)


def _progress(quiet):
    if quiet:
        return None

    def show(done, total):
        log.info("repetition %d/%d", done, total)
    return show


def cmd_bench(args, cfg, out: Path):
    cfg.warn_t0()
    report = bench.run_experiment(cfg, workers=_workers(args.threads),
                                  progress=_progress(args.quiet))
    jpath, cpath = report.write(out)
    a = report.aggregates()
    print(f"{'model':>8} {'N':>6} {'100*MISE':>10} {'100*StD':>9} {'median':>9} "
          f"{'mean h':>8} {'mean ell':>9}")
    print(f"{a['model']:>8} {a['N']:>6} {a['mean_mise_x100']:>10.3f} {a['std_mise_x100']:>9.3f} "
          f"{a['median_mise_x100']:>9.3f} {a['mean_h']:>8.3f} {a['mean_ell']:>9.3f}")
    if a["failed"]:
        print(f"{a['failed']} repetition(s) failed and were excluded")
    print(jpath)
    print(cpath)


def cmd_surface(args, cfg, out: Path):
    for path in bench.export_surface(cfg, out, rep=args.rep):
        print(path)


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "select": cmd_select,
            "bench": cmd_bench, "surface": cmd_surface}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _ArgError as exc:
        print(f"nwpco: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _load_config(args)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            print(f"nwpco: I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
        (out / "config.toml").write_text(dump_config(cfg))
        np.seterr(all="ignore")
        COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"nwpco: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"nwpco: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, NwpcoError, ArithmeticError) as exc:
        print(f"nwpco: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
