"""Command-line entry point.

Subcommands::

    lpcvt optimize --domain cube.hs --seeds 100 --p 2 --out run1
    lpcvt energy   --domain cube.hs --seeds-file run1.seeds.txt --p 4
    lpcvt verify
    lpcvt fd-check --domain cube.hs --seeds-file s.txt --p 4

Exit status is 0 on success, 1 on input errors and 2 on numerical failures
(including a failing ``verify`` or ``fd-check``).  ``--config run.json``
supplies any option by its long name; flags on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings

import numpy as np

from .errors import InputError, IoError, LpcvtError, NumericalError
from .io import export_rvd_obj, load_domain, load_field, read_seeds, write_outputs
from .optimizer import OptimizerConfig, evaluate, optimize, random_seeds
from .rvd import jitter_seeds

logger = logging.getLogger("lpcvt")

FD_TOL = 1e-4

DEFAULTS = {
    "mode": "volume",
    "domain": None,
    "seeds": None,
    "seeds_file": None,
    "p": 2,
    "aniso": "constant",
    "iters": 200,
    "grad_tol": 1e-9,
    "method": "lbfgs",
    "rng_seed": 0,
    "deterministic": True,
    "out": "lpcvt",
    "export_rvd": False,
    "workers": 1,
    "fd_h": 1e-6,
    "jitter": False,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # defaults are None so that config-file values can fill the gaps
    common.add_argument("--config", help="JSON file with default option values")
    common.add_argument("--mode", choices=["volume", "surface"])
    common.add_argument("--domain", help="half-space file (volume) or OBJ/OFF mesh (surface)")
    seeds = common.add_mutually_exclusive_group()
    seeds.add_argument("--seeds", type=int, help="number of random initial seeds")
    seeds.add_argument("--seeds-file", dest="seeds_file", help="seed file, one 'x y z' per line")
    common.add_argument("--p", type=int, help="even exponent (default 2)")
    common.add_argument("--aniso", help="'constant' (identity) or a tensor field file")
    common.add_argument("--rng-seed", dest="rng_seed", type=int)
    common.add_argument("--deterministic", type=parse_bool)
    common.add_argument("--workers", type=int, help="processes used to build volume cells")
    common.add_argument(
        "--jitter", type=parse_bool, help="perturb initial seeds by 1e-9 x domain size (breaks degeneracies)"
    )
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="lpcvt", description="Lp centroidal Voronoi tessellation energy and optimizer")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    opt = sub.add_parser("optimize", parents=[common], help="minimize the energy over seed positions")
    opt.add_argument("--iters", type=int)
    opt.add_argument("--grad-tol", dest="grad_tol", type=float)
    opt.add_argument("--method", choices=["lbfgs", "sd"])
    opt.add_argument("--out", help="output prefix")
    opt.add_argument("--export-rvd", dest="export_rvd", type=parse_bool)

    en = sub.add_parser("energy", parents=[common], help="evaluate F and its gradient once")
    en.add_argument("--out", help="output prefix (only used with --export-rvd)")
    en.add_argument("--export-rvd", dest="export_rvd", type=parse_bool)

    sub.add_parser("verify", parents=[common], help="run the oracle suite")

    fd = sub.add_parser("fd-check", parents=[common], help="compare the gradient with finite differences")
    fd.add_argument("--fd-h", dest="fd_h", type=float)
    return parser


def resolve_options(ns: argparse.Namespace) -> dict:
    """Defaults, then the JSON config, then explicit flags."""
    opts = dict(DEFAULTS)
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read config {ns.config}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{ns.config}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(cfg, dict):
            raise InputError("config file must hold a JSON object")
        for key, val in cfg.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise InputError(f"unknown config key {key!r}")
            opts[key] = val
    for key, val in vars(ns).items():
        if key in DEFAULTS and val is not None:
            opts[key] = val
    if ns.seeds is not None:
        opts["seeds_file"] = None
    elif ns.seeds_file is not None:
        opts["seeds"] = None
    opts["deterministic"] = parse_bool(opts["deterministic"])
    opts["export_rvd"] = parse_bool(opts["export_rvd"])
    opts["jitter"] = parse_bool(opts["jitter"])
    return opts


def _load_problem(opts):
    if not opts["domain"]:
        raise InputError("--domain is required")
    domain = load_domain(opts["domain"], opts["mode"])
    aniso = opts["aniso"]
    field = None if aniso in (None, "constant") else load_field(aniso)
    if opts["seeds_file"]:
        W = read_seeds(opts["seeds_file"])
    elif opts["seeds"] is not None:
        if int(opts["seeds"]) < 1:
            raise InputError("--seeds must be >= 1")
        W = random_seeds(domain, int(opts["seeds"]), int(opts["rng_seed"]))
    else:
        raise InputError("one of --seeds or --seeds-file is required")
    if opts["jitter"]:
        W = jitter_seeds(W, domain, int(opts["rng_seed"]))
    return domain, field, W


def _cmd_optimize(opts):
    domain, field, W = _load_problem(opts)
    cfg = OptimizerConfig(
        p=int(opts["p"]),
        max_iters=int(opts["iters"]),
        grad_tol=float(opts["grad_tol"]),
        method=opts["method"],
        rng_seed=int(opts["rng_seed"]),
        deterministic=opts["deterministic"],
        workers=int(opts["workers"]),
    )
    t0 = time.perf_counter()
    res = optimize(W, domain, field, cfg)
    logger.info("optimization took %.2f s", time.perf_counter() - t0)
    rvd = None
    if opts["export_rvd"]:
        rvd = evaluate(res.seeds, domain, field, cfg.p).rvd
    paths = write_outputs(opts["out"], res.seeds, res.trace, rvd)
    f0 = res.trace[0].F
    print(f"status: {res.status}")
    print(f"iterations: {len(res.trace) - 1}")
    print(f"F: {f0:.10g} -> {res.energy:.10g}")
    print(f"grad_inf_norm: {np.abs(res.grad).max():.3e}")
    if res.orphaned:
        print(f"empty cells: {len(res.orphaned)}")
    for path in paths:
        print(f"wrote {path}")
    return 0


def _cmd_energy(opts):
    domain, field, W = _load_problem(opts)
    ev = evaluate(W, domain, field, int(opts["p"]), int(opts["workers"]))
    print(f"F: {ev.energy:.17g}")
    print(f"grad_inf_norm: {ev.grad.inf_norm:.17g}")
    if opts["export_rvd"]:
        path = opts["out"] + ".rvd.obj"
        export_rvd_obj(path, ev.rvd)
        print(f"wrote {path}")
    return 0


def _cmd_verify(opts):
    from .verify import format_table, run_checks

    results = run_checks(int(opts["rng_seed"]))
    print(format_table(results))
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 2


def _cmd_fd_check(opts):
    from .oracles import fd_gradient

    domain, field, W = _load_problem(opts)
    p = int(opts["p"])
    ev = evaluate(W, domain, field, p)
    fd = fd_gradient(lambda V: evaluate(V, domain, field, p).energy, W, float(opts["fd_h"]))
    g = ev.grad.g
    err = float(np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-300))
    print(f"seeds: {len(W)}  p: {p}  h: {opts['fd_h']:g}")
    print(f"max |analytic|: {np.abs(g).max():.6e}")
    print(f"max |analytic - fd|: {np.abs(g - fd).max():.6e}")
    print(f"max rel. error: {err:.3e} ({'pass' if err <= FD_TOL else 'FAIL'}, tol {FD_TOL:g})")
    return 0 if err <= FD_TOL else 2


COMMANDS = {
    "optimize": _cmd_optimize,
    "energy": _cmd_energy,
    "verify": _cmd_verify,
    "fd-check": _cmd_fd_check,
}


def run(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(ns.verbose, 2),
            format="%(levelname)s %(name)s: %(message)s",
        )
        opts = resolve_options(ns)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return COMMANDS[ns.command](opts)
    except (InputError, IoError, ValueError) as exc:
        # ValueError covers invalid settings such as grad_tol <= 0
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, LpcvtError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
