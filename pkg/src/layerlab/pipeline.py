"""Stage implementations shared by the CLI subcommands and the full ``run`` pipeline."""

from __future__ import annotations

import logging
import math
import os
import platform
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import __version__
from . import connect1d as c1
from . import discretization as dz
from . import effpot as ep
from . import fileio as io_
from . import layers as ly
from . import spectrum as spc
from . import strip2d as s2
from . import translate as tr
from .config import RunConfig, validate_config
from .errors import LayerlabError, StageFailed, Violation
from .potential import make_potential

log = logging.getLogger(__name__)

STAGES = ("connect", "spectrum", "calibrate", "effpot", "strip", "analyze", "continue")


def revalidate(cfg: RunConfig) -> RunConfig:
    """Round-trip through the config grammar so overrides obey the same checks."""
    return validate_config(cfg.render())


def default_y_max(spec) -> float:
    """Half-width for 1D work: the slowest tail exp(-gamma y) must fall below ~1e-6 at the edge."""
    return max(20.0, 13.5 / math.sqrt(spec.gamma_sq))


@dataclass
class Context:
    cfg: RunConfig
    out: str
    threads: int = 1
    fmt: str = "csv"
    sweeps: dict = field(default_factory=dict)

    # --------------------------------------------------------- objects
    @cached_property
    def spec(self):
        p = self.cfg.potential
        return make_potential(p.name, A=p.A) if p.name == "two_channel" else make_potential(p.name)

    @cached_property
    def grid1d(self) -> dz.Grid1D:
        y = self.cfg.grid1d.y_max or default_y_max(self.spec)
        return dz.Grid1D(float(y), self.cfg.grid1d.n)

    @cached_property
    def conns1d(self) -> c1.ConnectionSet:
        return c1.find_all_connections(self.spec, self.grid1d, tol=self.cfg.solver.tol_1d)

    @cached_property
    def grid2d_y(self) -> dz.Grid1D:
        g = self.cfg.grid2d
        return dz.Grid1D(g.y_max, g.n_y)

    @cached_property
    def conns2d(self) -> c1.ConnectionSet:
        return c1.find_all_connections(self.spec, self.grid2d_y, tol=self.cfg.solver.tol_1d)

    @cached_property
    def spectra(self) -> list[spc.SpectrumReport]:
        return [spc.analyze(self.spec, u, seed=self.cfg.seed) for u in self.conns1d.profiles]

    @property
    def mu_hat(self) -> float:
        return float(min(r.mu_hat for r in self.spectra))

    @cached_property
    def consts1d(self) -> tr.ManifoldConstants:
        return tr.calibrate_constants(self.conns1d)

    @cached_property
    def consts2d(self) -> tr.ManifoldConstants:
        return tr.calibrate_constants(self.conns2d)

    @property
    def p_level(self) -> float:
        return self.cfg.layers.p if self.cfg.layers.p is not None else self.consts2d.q0

    def branches(self) -> tuple[int, int]:
        n = self.conns2d.N
        left = self.cfg.strip.branch_left
        right = self.cfg.strip.branch_right
        if right is None:
            right = 1 if n >= 2 else 0
        return left, right

    def strip_problem(self, L: float, eta: float = 0.0) -> s2.StripProblem:
        g2 = self.cfg.grid2d
        grid = dz.Grid2D(float(L), int(round(L * g2.per_unit)) + 1, g2.y_max, g2.n_y)
        bl, br = self.branches()
        return s2.StripProblem(self.spec, self.conns2d, grid, bl, br, float(eta))

    def eta_grid(self) -> list[float]:
        s = self.cfg.sweep
        return [float(v) for v in np.linspace(s.eta_min, s.eta_max, s.eta_steps)]

    def sweep(self, L: float) -> s2.SweepResult:
        L = float(L)
        if L not in self.sweeps:
            sv = self.cfg.solver
            self.sweeps[L] = s2.sweep_eta(self.strip_problem(L), self.eta_grid(), tol=sv.tol_2d,
                                          eta_tol=self.cfg.sweep.eta_tol, max_iters=sv.max_iters)
        return self.sweeps[L]

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)


# ------------------------------------------------------------------ stages


def _straight_profile(spec, grid: dz.Grid1D) -> dz.Profile1D:
    vals = np.zeros((grid.n, spec.m))
    vals[:, 0] = np.tanh(grid.nodes / math.sqrt(2.0))
    return dz.Profile1D(grid, vals)


def stage_connect(ctx: Context) -> dict:
    cs = ctx.conns1d
    spec = ctx.spec
    out = {"c0": cs.c0, "N": cs.N, "labels": list(cs.labels), "energies": list(cs.energies),
           "q_star": cs.q_star, "grid": {"y_max": cs.grid.y_max, "n": cs.grid.n}, "branches": []}
    for j, u in enumerate(cs.profiles):
        g_norm, pde = c1.residual_norms(spec, u)
        info = {"label": cs.labels[j], "energy": cs.energies[j],
                "equipartition_residual": c1.equipartition_residual(spec, u),
                "gradient_norm": g_norm, "pde_residual": pde}
        for side in ("minus", "plus"):
            try:
                info[f"tail_rate_{side}"] = c1.fit_tail_rate(u, side)[0]
            except LayerlabError as exc:
                info[f"tail_rate_{side}"] = f"unavailable: {exc}"
        if spec.m == 2 and cs.N == 2:
            info["mirror_error"] = float(np.abs(cs.profiles[1 - j].values * [1, -1] - u.values).max())
        out["branches"].append(info)
        header, data = io_.profile_columns(u)
        io_.write_array(ctx.path(f"connection_{j}"), header, data, ctx.fmt, {"label": cs.labels[j]})
    out["tail_rates"] = [[b["tail_rate_minus"], b["tail_rate_plus"]] for b in out["branches"]]
    if spec.m == 2:
        out["straight_normal_eigenvalue"] = spc.normal_block_lowest(spec, _straight_profile(spec, cs.grid), 1)
    io_.write_json(ctx.path("connect.json"), out)
    return out


def stage_spectrum(ctx: Context) -> dict:
    reps = ctx.spectra
    out = {"branches": [r.as_dict() for r in reps], "mu_hat": ctx.mu_hat}
    u = ctx.conns1d.profiles[0]
    up = spc.interior(dz.d_dy4(u))
    v0 = reps[0].eigenvectors[:, 0]
    out["cosine_psi0_uprime"] = float(abs(v0 @ up) / (np.linalg.norm(v0) * np.linalg.norm(up)))
    io_.write_json(ctx.path("spectrum.json"), out)
    return out


def stage_calibrate(ctx: Context) -> dict:
    out = {"strip_grid": ctx.consts2d.as_dict(), "line_grid": ctx.consts1d.as_dict(),
           "strip_grid_c0": ctx.conns2d.c0, "strip_grid_N": ctx.conns2d.N}
    io_.write_json(ctx.path("constants.json"), out)
    return out


def gap_levels(ctx: Context) -> list[float]:
    ps = sorted(set(float(p) for p in ctx.cfg.effpot.p_values) | {0.5 * ctx.p_level}, reverse=True)
    return ps


def stage_effpot(ctx: Context) -> dict:
    spec, cs = ctx.spec, ctx.conns1d
    cfg = ctx.cfg.effpot
    coer, slopes = [], []
    for u, rep in zip(cs.profiles, ctx.spectra):
        coer.append(ep.check_coercivity(spec, u, rep, cfg.battery_size, q0=ctx.consts1d.q0, seed=ctx.cfg.seed).as_dict())
        rr = ep.remainder_slopes(spec, u, spc.mu_battery(u, rep, ctx.cfg.seed))
        slopes.append(rr.as_dict())
    gaps = {}
    for p in gap_levels(ctx):
        gaps[repr(p)] = ep.estimate_gap(spec, cs, p, n_seeds=cfg.n_seeds, seed=ctx.cfg.seed).e_hat
    ps = sorted(float(k) for k in gaps)
    nested = all(gaps[repr(ps[i])] <= gaps[repr(ps[i + 1])] for i in range(len(ps) - 1))
    out = {"mu_hat": ctx.mu_hat, "coercivity": coer, "remainder": slopes, "e_p": gaps, "e_p_nested": nested,
           "q0": ctx.consts1d.q0}
    io_.write_json(ctx.path("effpot.json"), out)
    return out


def write_solution(ctx: Context, sol: s2.StripSolution, stem: str, diag: s2.HamiltonianDiagnostics) -> None:
    header, data = io_.field_columns(sol.field)
    io_.write_array(ctx.path(stem + "_field"), header, data, ctx.fmt, {"eta": sol.eta})
    rows = zip(diag.x, diag.omega, diag.omega_tilde, diag.slice_energy, diag.kinetic)
    io_.write_table_csv(ctx.path(stem + "_diagnostics.csv"), ["x", "omega", "omega_tilde", "slice_energy", "kinetic"], rows)


def strip_summary(ctx: Context, sw: s2.SweepResult | None, sol: s2.StripSolution, L: float):
    c0 = ctx.conns2d.c0
    diag = s2.diagnostics(sol, ctx.spec, c0)
    dx = sol.field.grid.dx
    excess = sol.energy - c0 * L
    c0_inst = sw.C0_instance if sw is not None else s2.guess_excess(ctx.strip_problem(L, sol.eta))
    out = {
        "L": L, "eta": sol.eta, "energy": sol.energy, "excess": excess, "C0_instance": c0_inst,
        "converged": sol.converged, "grad_norm": sol.grad_norm, "iterations": sol.iterations,
        "residual_sup": sol.residual_sup, "total_kinetic": diag.total_kinetic(dx),
        "min_slice_excess": float(np.min(diag.slice_energy - c0)), **diag.summary(),
    }
    if sw is not None:
        out["eta_bar"] = sw.eta_bar
        out["sweep"] = [{"eta": e, "energy": j, "converged": c, "iterations": it} for e, j, c, it in sw.table]
    return out, diag


def stage_strip(ctx: Context) -> dict:
    """Sweep eta at L and at 2L (the second run feeds the omega(2L) <= omega(L) check and the layer analysis)."""
    L = float(ctx.cfg.strip.L)
    lengths = [L, 2.0 * L]
    if ctx.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        todo = [x for x in lengths if x not in ctx.sweeps]
        with ThreadPoolExecutor(max_workers=ctx.threads) as pool:
            for x, res in zip(todo, pool.map(lambda x: s2.sweep_eta(
                    ctx.strip_problem(x), ctx.eta_grid(), tol=ctx.cfg.solver.tol_2d,
                    eta_tol=ctx.cfg.sweep.eta_tol, max_iters=ctx.cfg.solver.max_iters), todo)):
                ctx.sweeps[x] = res
    out = {}
    for x in lengths:
        sw = ctx.sweep(x)
        summ, diag = strip_summary(ctx, sw, sw.solution, x)
        write_solution(ctx, sw.solution, f"strip_L{x:g}", diag)
        out[f"L{x:g}"] = summ
    out["omega_decreases"] = bool(out[f"L{2 * L:g}"]["omega_mean"] <= out[f"L{L:g}"]["omega_mean"] + 1e-6)
    io_.write_json(ctx.path("strip.json"), out)
    return out


def analyze_field(ctx: Context, fld: dz.Field2D, stem: str, gap_half: float | None, C0: float | None) -> dict:
    dec = ly.decompose_columns(fld, ctx.conns2d, ctx.consts2d)
    io_.write_table_csv(ctx.path(stem + "_decomposition.csv"), ["x", "q", "h", "branch", "well_posed"],
                        ([x, q, h, b, int(w)] for x, q, h, b, w in dec.rows()))
    rep = ly.detect_plateaus(dec, ctx.p_level)
    out = {"branch_switch_ok": dec.branch_switch_ok()}
    if not rep.rigid:
        ly.fit_decay(dec, rep, ctx.mu_hat)
        out["identities"] = ly.plateau_identities(fld, dec, ctx.conns2d, rep).summary()
    out["plateaus"] = rep.as_dict()
    bl, br = ctx.branches()
    out["labels_ok"] = bool(rep.branch_left == bl and rep.branch_right == br)
    if gap_half is not None and C0 is not None:
        out["width_bound"] = C0 / gap_half + 1.0
        out["width_ok"] = bool(rep.width <= out["width_bound"])
    io_.write_json(ctx.path(stem + "_plateaus.json"), out)
    ly.require_structure(rep)
    return out


def stage_analyze(ctx: Context, effpot_out: dict | None = None) -> dict:
    L2 = 2.0 * float(ctx.cfg.strip.L)
    sw = ctx.sweep(L2)
    gap = None
    if effpot_out is not None:
        gap = effpot_out["e_p"].get(repr(0.5 * ctx.p_level))
    out = analyze_field(ctx, sw.solution.field, f"strip_L{L2:g}", gap, sw.C0_instance)
    out["L"] = L2
    return out


def stage_continue(ctx: Context) -> dict:
    bl, br = ctx.branches()
    sv = ctx.cfg.solver
    res = ly.continue_in_L(ctx.spec, ctx.conns2d, ctx.consts2d, ctx.cfg.continuation.L_list, ctx.eta_grid(),
                           branch_left=bl, branch_right=br, p=ctx.p_level, tol=sv.tol_2d,
                           eta_tol=ctx.cfg.sweep.eta_tol, max_iters=sv.max_iters, per_unit=ctx.cfg.grid2d.per_unit,
                           cache=ctx.sweeps, threads=ctx.threads)
    out = res.as_dict()
    eb = np.abs(np.array(res.eta_bar))
    out["eta_bar_cap"] = float(eb.max())
    out["eta_bar_range"] = float(np.ptp(res.eta_bar))
    out["eta_bar_bounded"] = bool(out["eta_bar_range"] <= 2.0 * eb[0] + 1e-3)
    w = np.array(res.widths)
    spread = float(np.ptp(w))
    out["width_spread"] = spread / float(w.min()) if w.min() > 0 else (0.0 if spread == 0 else math.inf)
    out["widths_stable"] = bool(out["width_spread"] <= 0.05)
    out["eta_pm_stable"] = bool(abs(res.eta_plus[-1] - res.eta_plus[-2]) <= 1e-2
                                and abs(res.eta_minus[-1] - res.eta_minus[-2]) <= 1e-2)
    g2 = ctx.cfg.grid2d
    xs = res.window[0] + np.arange(res.centered_fields[0].shape[0]) / g2.per_unit
    ys = ctx.grid2d_y.nodes
    for L, U in zip(res.L_values, res.centered_fields):
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        data = np.column_stack([X.reshape(-1), Y.reshape(-1)] + [U[..., k].reshape(-1) for k in range(U.shape[-1])])
        header = ["x", "y"] + io_.component_names(U.shape[-1])
        io_.write_array(ctx.path(f"centered_L{L:g}"), header, data, ctx.fmt, {"L": L, "x_origin": "l_minus"})
    io_.write_json(ctx.path("continuation.json"), out)
    return out


# ------------------------------------------------------------------ manifest


def versions() -> dict:
    import scipy

    out = {"layerlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__}
    try:
        import pyamg

        out["pyamg"] = pyamg.__version__
    except ImportError:  # pragma: no cover
        out["pyamg"] = "missing"
    return out


def constants_table(ctx: Context, results: dict) -> dict:
    """Every acceptance-relevant constant, once."""
    out = {}
    if "connect" in results:
        out["c0"] = results["connect"]["c0"]
        out["N"] = results["connect"]["N"]
        out["q_star"] = results["connect"]["q_star"]
    if "spectrum" in results:
        out["mu_hat"] = results["spectrum"]["mu_hat"]
    if "calibrate" in results:
        out["q0"] = results["calibrate"]["strip_grid"]["q0"]
        out["C_bar"] = results["calibrate"]["strip_grid"]["C_bar"]
        out["c0_strip_grid"] = results["calibrate"]["strip_grid_c0"]
    if "effpot" in results:
        out["e_p"] = results["effpot"]["e_p"]
    if "strip" in results:
        L = float(ctx.cfg.strip.L)
        out["C0_instance"] = results["strip"][f"L{L:g}"]["C0_instance"]
        out["eta_bar"] = results["strip"][f"L{L:g}"]["eta_bar"]
    return out


def run_pipeline(cfg: RunConfig, out: str | None = None, threads: int = 1, fmt: str | None = None,
                 stages=STAGES) -> dict:
    """Run the stages in dependency order; any failure halts with StageFailed.

    Writes ``manifest.json`` (deterministic) and ``timings.json`` (wall times).
    """
    ctx = Context(cfg, out or cfg.output.dir, threads, fmt or cfg.output.format)
    os.makedirs(ctx.out, exist_ok=True)
    io_.atomic_write(ctx.path("config.echo"), cfg.render())
    results, status, timings = {}, {}, {}
    manifest = {"config": cfg.to_dict(), "versions": versions(), "seed": cfg.seed, "stages": status}

    def finish(error=None):
        manifest["constants"] = constants_table(ctx, results)
        if error is not None:
            manifest["error"] = error
        io_.write_json(ctx.path("manifest.json"), manifest)
        io_.write_json(ctx.path("timings.json"), timings)

    funcs = {
        "connect": lambda: stage_connect(ctx),
        "spectrum": lambda: stage_spectrum(ctx),
        "calibrate": lambda: stage_calibrate(ctx),
        "effpot": lambda: stage_effpot(ctx),
        "strip": lambda: stage_strip(ctx),
        "analyze": lambda: stage_analyze(ctx, results.get("effpot")),
        "continue": lambda: stage_continue(ctx),
    }
    for name in STAGES:
        if name not in stages:
            continue
        t0 = time.perf_counter()
        try:
            results[name] = funcs[name]()
        except LayerlabError as exc:
            timings[name] = time.perf_counter() - t0
            status[name] = "failed"
            err = StageFailed(name, exc)
            finish({"stage": name, "type": type(exc).__name__, "message": str(exc), "exit_code": err.exit_code})
            raise err from exc
        timings[name] = time.perf_counter() - t0
        status[name] = "ok"
        log.info("stage %s ok (%.1f s)", name, timings[name])
    finish()
    manifest["results"] = results
    return manifest
