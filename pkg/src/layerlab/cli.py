"""``layerlab`` command-line entry point."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from . import __version__
from . import connect1d as c1
from . import fileio as io_
from . import layers as ly
from . import pipeline as pl
from . import strip2d as s2
from . import translate as tr
from .config import load_config
from .errors import ConfigInvalid, LayerlabError

log = logging.getLogger("layerlab")

_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors already; route the message through ConfigInvalid."""

    def error(self, message):
        raise ConfigInvalid(message)


def _setup_logging() -> None:
    raw = os.environ.get("LAYERLAB_LOG", "error").strip().lower()
    if raw not in _LEVELS:
        raise ConfigInvalid(f"LAYERLAB_LOG must be one of {sorted(_LEVELS)}, got {raw!r}")
    logging.basicConfig(level=_LEVELS[raw], format="%(levelname)s:%(name)s:%(message)s", stream=sys.stderr)


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="key=value run configuration")
    parser.add_argument("--out", default=d(None), help="output directory (overrides output.dir)")
    parser.add_argument("--threads", type=int, default=d(1), help="worker threads for independent strip solves")
    parser.add_argument("--format", choices=("csv", "json"), default=d(None),
                        help="array output format (json = header + binary)")


def build_parser() -> argparse.ArgumentParser:
    # Flags are accepted before or after the subcommand; the subcommand copy
    # must not overwrite a value given earlier, hence SUPPRESS defaults there.
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)

    p = _Parser(prog="layerlab", description=__doc__)
    _global_flags(p, suppress=False)
    p.add_argument("--version", action="version", version=f"layerlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("connect", parents=[common], help="minimizing connections and c0")
    sub.add_parser("spectrum", parents=[common], help="linearized spectrum and mu_hat")
    sp = sub.add_parser("project", parents=[common], help="project a profile onto the translate manifold")
    sp.add_argument("--in", dest="infile", required=True, help="profile CSV (y, u1[, u2 ...]) or .bin")
    sub.add_parser("effpot", parents=[common], help="coercivity, remainder slopes and gap table")
    sp = sub.add_parser("strip", parents=[common], help="solve the strip problem at one eta")
    sp.add_argument("--eta", type=float, help="right boundary shift (default strip.eta)")
    sp.add_argument("--L", type=float, help="strip length (default strip.L)")
    sp = sub.add_parser("sweep-eta", parents=[common], help="minimize the strip energy over eta")
    sp.add_argument("--eta-min", type=float)
    sp.add_argument("--eta-max", type=float)
    sp.add_argument("--eta-steps", type=int)
    sp.add_argument("--L", type=float)
    sp = sub.add_parser("analyze", parents=[common], help="column decomposition and plateaus of a field")
    sp.add_argument("--field", required=True, help="field file written by strip / sweep-eta")
    sp = sub.add_parser("continue-l", parents=[common], help="continuation in the strip length")
    sp.add_argument("--L", type=_floats, help="comma-separated lengths (default continuation.L_list)")
    sub.add_parser("run", parents=[common], help="full pipeline with manifest")
    return p


def _context(args) -> pl.Context:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "L", None) is not None and args.command in ("strip", "sweep-eta"):
        overrides["L"] = args.L
    if getattr(args, "eta", None) is not None:
        overrides["eta"] = args.eta
    if overrides:
        cfg.strip = dataclasses.replace(cfg.strip, **overrides)
    sw = {}
    for k in ("eta_min", "eta_max", "eta_steps"):
        v = getattr(args, k, None)
        if v is not None:
            sw[k] = v
    if sw:
        cfg.sweep = dataclasses.replace(cfg.sweep, **sw)
    if args.command == "continue-l" and args.L is not None:
        cfg.continuation = dataclasses.replace(cfg.continuation, L_list=args.L)
    if args.threads < 1:
        raise ConfigInvalid("--threads must be >= 1")
    # Re-validate after command-line overrides.
    cfg = pl.revalidate(cfg)
    out = args.out or cfg.output.dir
    os.makedirs(out, exist_ok=True)
    return pl.Context(cfg, out, args.threads, args.format or cfg.output.format)


def _emit(obj) -> None:
    sys.stdout.write(io_.dumps(obj))


def cmd_connect(ctx, args):
    return pl.stage_connect(ctx)


def cmd_spectrum(ctx, args):
    return pl.stage_spectrum(ctx)


def cmd_project(ctx, args):
    prof = io_.read_profile(args.infile)
    if prof.m != ctx.spec.m:
        raise ConfigInvalid(f"profile has {prof.m} components, potential needs {ctx.spec.m}")
    conns = c1.find_all_connections(ctx.spec, prof.grid, tol=ctx.cfg.solver.tol_1d)
    consts = tr.calibrate_constants(conns)
    res = tr.project(prof, conns, consts, tol_newton=ctx.cfg.solver.tol_newton)
    out = dataclasses.asdict(res)
    out["q0"] = consts.q0
    io_.write_json(ctx.path("projection.json"), out)
    return out


def cmd_effpot(ctx, args):
    return pl.stage_effpot(ctx)


def cmd_strip(ctx, args):
    L = float(ctx.cfg.strip.L)
    prob = ctx.strip_problem(L, ctx.cfg.strip.eta)
    sv = ctx.cfg.solver
    sol = s2.require_converged(s2.solve_strip(prob, None, sv.tol_2d, sv.max_iters))
    summ, diag = pl.strip_summary(ctx, None, sol, L)
    summ["eta_bar"] = sol.eta
    pl.write_solution(ctx, sol, f"strip_L{L:g}_eta{sol.eta:g}", diag)
    io_.write_json(ctx.path(f"strip_L{L:g}_eta{sol.eta:g}.json"), summ)
    return summ


def cmd_sweep(ctx, args):
    L = float(ctx.cfg.strip.L)
    sw = ctx.sweep(L)
    summ, diag = pl.strip_summary(ctx, sw, sw.solution, L)
    pl.write_solution(ctx, sw.solution, f"strip_L{L:g}", diag)
    io_.write_json(ctx.path(f"strip_L{L:g}.json"), summ)
    return summ


def cmd_analyze(ctx, args):
    fld = io_.read_field(args.field)
    if fld.m != ctx.spec.m:
        raise ConfigInvalid(f"field has {fld.m} components, potential needs {ctx.spec.m}")
    g2 = ctx.cfg.grid2d
    yg = fld.grid.ygrid
    if (yg.y_max, yg.n) != (g2.y_max, g2.n_y):
        # Connections must live on the field's own y-grid.
        ctx.cfg.grid2d = dataclasses.replace(g2, y_max=yg.y_max, n_y=yg.n)
    stem = os.path.splitext(os.path.basename(args.field))[0].removesuffix("_field")
    out = pl.analyze_field(ctx, fld, stem, None, None)
    return out


def cmd_continue(ctx, args):
    return pl.stage_continue(ctx)


def cmd_run(ctx, args):
    man = pl.run_pipeline(ctx.cfg, ctx.out, ctx.threads, ctx.fmt)
    return {"stages": man["stages"], "constants": man["constants"]}


COMMANDS = {
    "connect": cmd_connect, "spectrum": cmd_spectrum, "project": cmd_project, "effpot": cmd_effpot,
    "strip": cmd_strip, "sweep-eta": cmd_sweep, "analyze": cmd_analyze, "continue-l": cmd_continue,
    "run": cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        ctx = _context(args)
        _emit(COMMANDS[args.command](ctx, args))
        return 0
    except LayerlabError as exc:
        sys.stderr.write(f"layerlab: error: {exc}\n")
        return exc.exit_code
    except ValueError as exc:
        # Invalid combinations that slip past config validation (e.g. branch index out of range).
        sys.stderr.write(f"layerlab: error: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
