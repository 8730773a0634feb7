"""Projection of profiles onto the manifolds of translates {u_j(. - r)}."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from . import discretization as dz
from .connect1d import ConnectionSet, shift_scan_distance
from .discretization import Profile1D
from .errors import NewtonDivergence, NotWellPosed, ShiftTooLarge

Q0_CAP = 0.1


@dataclass(frozen=True)
class ProjectionResult:
    branch: int
    h: float
    q: float
    q_w12: float
    orth_residual: float
    well_posed: bool
    newton_ok: bool = True


@dataclass(frozen=True)
class ManifoldConstants:
    q_star: float
    q0: float
    C_bar: float
    uniqueness_radius: float  # ||u'|| / (4 ||u''||), smallest over branches
    theory_q0: float  # ||u'||^2 / (4 ||u''||) before capping

    def as_dict(self) -> dict:
        return {
            "q_star": self.q_star if math.isfinite(self.q_star) else "inf",
            "q0": self.q0,
            "C_bar": self.C_bar,
            "uniqueness_radius": self.uniqueness_radius,
            "theory_q0": self.theory_q0,
        }


class _Translates:
    """Cubic-spline evaluator of u_bar(. - r) and its first two derivatives."""

    def __init__(self, ubar: Profile1D):
        self.ubar = ubar
        y = ubar.nodes
        self.y = y
        self.spline = CubicSpline(y, ubar.values, axis=0, bc_type="not-a-knot")
        self.d1 = self.spline.derivative(1)
        self.d2 = self.spline.derivative(2)

    def __call__(self, r: float, nu: int = 0) -> np.ndarray:
        yy = self.y - r
        f = (self.spline, self.d1, self.d2)[nu]
        out = f(yy)
        lo, hi = yy < self.y[0], yy > self.y[-1]
        if nu == 0:
            out[lo] = self.ubar.values[0]
            out[hi] = self.ubar.values[-1]
        else:
            out[lo] = 0.0
            out[hi] = 0.0
        return out


_CACHE: dict = {}


def _translates(ubar: Profile1D) -> _Translates:
    key = id(ubar)
    hit = _CACHE.get(key)
    if hit is None or hit.ubar is not ubar:
        hit = _Translates(ubar)
        if len(_CACHE) > 64:
            _CACHE.clear()
        _CACHE[key] = hit
    return hit


def shift_profile(u: Profile1D, r: float) -> Profile1D:
    """u(. - r) by cubic interpolation; far field continued by the end rows."""
    if abs(r) > u.grid.y_max / 2:
        raise ShiftTooLarge(f"|r| = {abs(r)} exceeds y_max/2 = {u.grid.y_max / 2}")
    return u.with_values(dz.shift_values(u.grid, u.values, r))


def _ip(grid, a, b) -> float:
    return float(grid.spacing * np.sum(grid.weights * np.sum(a * b, axis=1)))


def _w12(grid, a) -> float:
    return float(np.sqrt(_ip(grid, a, a) + dz.dirichlet_form(a, grid.spacing)))


def branch_norms(ubar: Profile1D) -> tuple[float, float, float]:
    """(||u'||, ||u''||, ||u'||_{W^{1,2}}) of a connection."""
    grid = ubar.grid
    d1 = dz.d_dy4(ubar).values
    d2 = -dz.laplacian_1d(ubar.values, grid.spacing)
    n1 = math.sqrt(_ip(grid, d1, d1))
    n2 = math.sqrt(_ip(grid, d2, d2))
    n1w = _w12(grid, d1)
    return n1, n2, n1w


def calibrate_constants(conns: ConnectionSet) -> ManifoldConstants:
    q_star = conns.q_star
    radii, q0s, cbars = [], [], []
    for prof in conns.profiles:
        n1, n2, n1w = branch_norms(prof)
        radii.append(n1 / (4.0 * n2))
        q0s.append(n1 * n1 / (4.0 * n2))
        cbars.append(2.0 * math.sqrt(2.0) * n1w / n1)
    theory = min(q0s)
    q0 = min(q_star / 4.0, theory, Q0_CAP)
    return ManifoldConstants(q_star, q0, max(cbars), min(radii), theory)


def _orth(grid, u, tr: _Translates, h: float) -> tuple[float, float]:
    """f(h) = <u - u_bar(.-h), u_bar'(.-h)> and f'(h) = ||u_bar'||^2 - <u - u_bar(.-h), u_bar''(.-h)>."""
    v = u - tr(h)
    d1 = tr(h, 1)
    d2 = tr(h, 2)
    f = _ip(grid, v, d1)
    fp = _ip(grid, d1, d1) - _ip(grid, v, d2)
    return f, fp


def newton_shift(u: Profile1D, ubar: Profile1D, h0: float, radius: float, tol: float = 1e-12,
                 max_iter: int = 50) -> tuple[float, float]:
    """Solve f(h) = 0 from h0; raises NewtonDivergence if it leaves |h - h0| <= radius."""
    grid = u.grid
    tr = _translates(ubar)
    h = float(h0)
    scale = _ip(grid, tr(h, 1), tr(h, 1))
    for _ in range(max_iter):
        f, fp = _orth(grid, u.values, tr, h)
        if abs(f) <= tol * scale:
            return h, abs(f)
        if fp <= 0:
            raise NewtonDivergence("nonpositive derivative in shift Newton")
        step = -f / fp
        h += step
        if abs(h - h0) > radius:
            raise NewtonDivergence(f"shift Newton left the uniqueness radius {radius:.3g}")
        if abs(step) <= 1e-15 * max(1.0, abs(h)):
            f, _ = _orth(grid, u.values, tr, h)
            return h, abs(f)
    raise NewtonDivergence("shift Newton did not converge")


def project(u: Profile1D, conns: ConnectionSet, consts: ManifoldConstants, tol_newton: float = 1e-12,
            branches=None, h_guess: dict | None = None) -> ProjectionResult:
    """Nearest translate over all branches: scan at resolution dy, then Newton.

    ``h_guess`` maps branch -> shift and replaces the scan for that branch
    (used for continuity along columns of a strip solution).
    """
    grid = u.grid
    cands = []
    for j in (range(conns.N) if branches is None else branches):
        ubar = conns.profiles[j]
        if h_guess is not None and j in h_guess:
            r0 = float(h_guess[j])
        else:
            _, r0 = shift_scan_distance(u, ubar)
        ok = True
        try:
            h, res = newton_shift(u, ubar, r0, consts.uniqueness_radius, tol_newton)
        except NewtonDivergence:
            h, ok = r0, False
            res = abs(_orth(grid, u.values, _translates(ubar), h)[0])
        v = u.values - _translates(ubar)(h)
        q = math.sqrt(max(_ip(grid, v, v), 0.0))
        cands.append((q, abs(h), j, h, res, ok, _w12(grid, v)))
    cands.sort(key=lambda c: (round(c[0], 12), c[1], c[2]))
    q, _, j, h, res, ok, qw = cands[0]
    return ProjectionResult(j, h, q, qw, res, bool(ok and q <= consts.q0), ok)


def decompose(u: Profile1D, proj: ProjectionResult, conns: ConnectionSet) -> Profile1D:
    """v(y) = u(y + h) - u_bar(y)."""
    if not proj.well_posed:
        raise NotWellPosed(f"projection not well posed (q={proj.q:.3g})")
    back = dz.shift_values(u.grid, u.values, -proj.h)
    return u.with_values(back - conns.profiles[proj.branch].values)


def reconstruct(v: Profile1D, proj: ProjectionResult, conns: ConnectionSet) -> Profile1D:
    """u_bar(. - h) + v(. - h)."""
    ubar = conns.profiles[proj.branch]
    return v.with_values(_translates(ubar)(proj.h) + dz.shift_values(v.grid, v.values, proj.h))


def distance_to_translate(u: Profile1D, ubar: Profile1D, r: float, w12: bool = False) -> float:
    v = u.values - _translates(ubar)(r)
    return _w12(u.grid, v) if w12 else math.sqrt(_ip(u.grid, v, v))


def w12_optimal_shift(u: Profile1D, ubar: Profile1D, around: float, radius: float) -> tuple[float, float]:
    """argmin_r ||u - u_bar(. - r)||_{W^{1,2}} on |r - around| <= radius; returns (r, distance)."""
    res = minimize_scalar(lambda r: distance_to_translate(u, ubar, r, w12=True),
                          bounds=(around - radius, around + radius), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x), float(res.fun)


def shift_derivative(u: Profile1D, proj: ProjectionResult, conns: ConnectionSet, w: Profile1D) -> float:
    """Directional derivative of h(u) along w from the implicit function theorem."""
    tr = _translates(conns.profiles[proj.branch])
    f_u = _ip(u.grid, w.values, tr(proj.h, 1))
    _, f_h = _orth(u.grid, u.values, tr, proj.h)
    return -f_u / f_h
