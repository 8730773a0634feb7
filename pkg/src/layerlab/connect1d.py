"""Minimizing heteroclinic connections of the 1D energy J_R."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import discretization as dz
from .discretization import Grid1D, Profile1D
from .errors import InconsistentEnergies, TailBelowNoise
from .optim import minimize
from .potential import PotentialSpec, clip_to_ball

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConnectionSet:
    profiles: tuple
    energies: tuple
    c0: float
    N: int
    labels: tuple = ()
    q_star: float = float("inf")

    @property
    def grid(self) -> Grid1D:
        return self.profiles[0].grid


# ----------------------------------------------------------------- seeds


def linear_seed(spec: PotentialSpec, grid: Grid1D, half_width: float = 1.0) -> Profile1D:
    """Straight interpolant from a_- to a_+ over [-half_width, half_width]."""
    t = np.clip((grid.nodes + half_width) / (2.0 * half_width), 0.0, 1.0)[:, None]
    return Profile1D(grid, (1.0 - t) * spec.a_minus + t * spec.a_plus)


def bow_seed(spec: PotentialSpec, grid: Grid1D, sign: float, bulge: float = 1.0, width: float | None = None) -> Profile1D:
    """Arc from a_- to a_+ bulging along the first normal direction.

    For a pair of zeros at distance 2 this is the half circle
    (-cos th, sign*sin th) with th running from 0 to pi along a tanh ramp.
    """
    if spec.m < 2:
        raise ValueError("bow seeds need m >= 2")
    a, b = spec.a_minus, spec.a_plus
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    rad = np.linalg.norm(half)
    e1 = half / rad
    e2 = np.zeros(spec.m)
    k = int(np.argmin(np.abs(e1)))
    e2[k] = 1.0
    e2 -= np.dot(e2, e1) * e1
    e2 /= np.linalg.norm(e2)
    if width is None:
        hess = spec.hessian(b)
        width = 1.0 / np.sqrt(max(float(e2 @ hess @ e2), 1e-3))
    th = 0.5 * np.pi * (1.0 + np.tanh(grid.nodes / width))
    vals = mid - rad * np.cos(th)[:, None] * e1 + sign * bulge * rad * np.sin(th)[:, None] * e2
    vals[0], vals[-1] = a, b
    return Profile1D(grid, vals)


# ----------------------------------------------------------------- solver


def _pin_component(spec: PotentialSpec) -> int:
    return int(np.argmax(np.abs(spec.a_plus - spec.a_minus)))


def crossing_point(u: Profile1D, spec: PotentialSpec) -> float:
    """Location where the pinned component crosses the mid level (linear interpolation)."""
    k = _pin_component(spec)
    level = 0.5 * (spec.a_minus[k] + spec.a_plus[k])
    s = np.sign(spec.a_plus[k] - spec.a_minus[k]) * (u.values[:, k] - level)
    y = u.nodes
    idx = np.nonzero((s[:-1] < 0) & (s[1:] >= 0))[0]
    if idx.size == 0:
        return 0.0
    c = u.grid.center_index
    i = int(idx[np.argmin(np.abs(idx - c))])
    f0, f1 = s[i], s[i + 1]
    return float(y[i] + (y[i + 1] - y[i]) * (-f0) / (f1 - f0)) if f1 != f0 else float(y[i])


def center_profile(u: Profile1D, spec: PotentialSpec) -> Profile1D:
    r = crossing_point(u, spec)
    if abs(r) <= 1e-13:
        return u
    return u.with_values(dz.shift_values(u.grid, u.values, -r))


def _hessian_1d(spec: PotentialSpec, values: np.ndarray, dy: float, free: np.ndarray) -> sp.csc_matrix:
    n, m = values.shape
    lap = sp.kron(dz.laplacian_matrix_1d(n - 2, dy), sp.identity(m), format="csr")
    blocks = spec.hessian(values[1:-1]).reshape(-1, m, m)
    nb = n - 2
    H = lap + sp.bsr_matrix((blocks, np.arange(nb), np.arange(nb + 1)), shape=(nb * m, nb * m)).tocsr()
    return H[free][:, free].tocsc()


def assemble_hessian_1d(spec: PotentialSpec, values: np.ndarray, dy: float) -> sp.csr_matrix:
    """Hessian of energy_1d over interior nodes, divided by dy."""
    n, m = values.shape
    free = np.ones((n - 2) * m, dtype=bool)
    return _hessian_1d(spec, values, dy, free).tocsr()


def residual_norms(spec: PotentialSpec, u: Profile1D) -> tuple[float, float]:
    """(discrete L2 norm, sup norm) of the interior Euler-Lagrange residual."""
    g = dz.gradient_1d_values(spec, u.values, u.grid.spacing)[1:-1]
    return float(np.sqrt(u.grid.spacing * np.sum(g * g))), float(np.abs(g).max())


def solve_connection(spec: PotentialSpec, seed: Profile1D, tol: float = 1e-10, max_iters: int = 200) -> Profile1D:
    """Minimize J_R from ``seed``; the result is centered at y = 0.

    The pinned component is held at its mid level on the center node, which
    removes the translation mode from the Newton system.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    grid = seed.grid
    if seed.m != spec.m:
        raise ValueError(f"seed has {seed.m} components, potential has {spec.m}")
    if not (np.allclose(seed.values[0], spec.a_minus, atol=1e-8) and np.allclose(seed.values[-1], spec.a_plus, atol=1e-8)):
        raise ValueError("seed boundary rows must equal a_- and a_+")
    dy = grid.spacing
    n, m = grid.n, spec.m
    vals = clip_to_ball(seed.values, spec.clip_radius)
    vals[0], vals[-1] = spec.a_minus, spec.a_plus
    vals = center_profile(Profile1D(grid, vals), spec).values.copy()
    k = _pin_component(spec)
    c = grid.center_index
    vals[c, k] = 0.5 * (spec.a_minus[k] + spec.a_plus[k])

    free = np.ones((n - 2, m), dtype=bool)
    free[c - 1, k] = False
    free = free.ravel()
    base = vals.copy()

    def unpack(x):
        v = base.copy()
        inner = v[1:-1].reshape(-1)
        inner[free] = x
        v[1:-1] = inner.reshape(n - 2, m)
        return v

    def energy(x):
        return dz.energy_1d_values(spec, unpack(x), dy)

    def gradient(x):
        return dz.gradient_1d_values(spec, unpack(x), dy)[1:-1].reshape(-1)[free]

    def hessian(x):
        return _hessian_1d(spec, unpack(x), dy, free)

    def project(x):
        v = unpack(x)
        r = np.linalg.norm(v, axis=1)
        if np.all(r <= spec.clip_radius):
            return x
        return clip_to_ball(v, spec.clip_radius)[1:-1].reshape(-1)[free]

    x0 = vals[1:-1].reshape(-1)[free]
    res = minimize(energy, gradient, hessian, x0, weight=dy, tol=tol, max_iters=max_iters, project=project)
    out = Profile1D(grid, unpack(res.x))
    log.info("connection: J=%.15g grad=%.2e iters=%d escapes=%d", res.energy, res.grad_norm, res.iterations, res.escapes)
    return center_profile(out, spec)


# ------------------------------------------------------------ distances


def shift_scan_distance(u: Profile1D, w: Profile1D, max_shift: float | None = None) -> tuple[float, float]:
    """min over node shifts j of ||u - w(. - j dy)||, with far-field extension.

    Returns (distance, best shift).
    """
    dz._same_grid(u, w)
    grid = u.grid
    n, dy = grid.n, grid.spacing
    jmax = int(np.floor((grid.y_max / 2 if max_shift is None else max_shift) / dy))
    wts = grid.weights
    best = (np.inf, 0.0)
    W = w.values
    pad = np.concatenate([np.repeat(W[:1], jmax, 0), W, np.repeat(W[-1:], jmax, 0)], axis=0)
    for j in range(-jmax, jmax + 1):
        sh = pad[jmax - j: jmax - j + n]
        d = float(np.sqrt(dy * np.sum(wts * np.sum((u.values - sh) ** 2, axis=1))))
        if d < best[0] - 1e-15 or (abs(d - best[0]) <= 1e-15 and abs(j) < abs(best[1]) / dy):
            best = (d, j * dy)
    return best


def pairwise_q_star(profiles) -> float:
    if len(profiles) < 2:
        return float("inf")
    return min(shift_scan_distance(profiles[i], profiles[j])[0]
               for i in range(len(profiles)) for j in range(i + 1, len(profiles)))


# ------------------------------------------------------------ battery


def seed_battery(spec: PotentialSpec, grid: Grid1D) -> list[tuple[str, Profile1D]]:
    seeds = [("straight", linear_seed(spec, grid))]
    if spec.m >= 2:
        seeds += [("upper", bow_seed(spec, grid, +1.0)), ("lower", bow_seed(spec, grid, -1.0))]
    return seeds


def find_all_connections(spec: PotentialSpec, grid: Grid1D | None = None, tol: float = 1e-10,
                         dup_tol: float = 1e-4, energy_tol: float = 1e-6) -> ConnectionSet:
    grid = grid or Grid1D(20.0, 2001)
    found: list[tuple[str, Profile1D, float]] = []
    for label, seed in seed_battery(spec, grid):
        prof = solve_connection(spec, seed, tol)
        e = dz.energy_1d(spec, prof)
        dup = False
        for _, q, _ in found:
            if shift_scan_distance(prof, q)[0] <= dup_tol:
                dup = True
                break
        if not dup:
            found.append((label, prof, e))
    # Only global minima count as connections.
    emin = min(e for _, _, e in found)
    keep = [(lab, p, e) for lab, p, e in found if e - emin <= energy_tol * max(1.0, abs(emin))]
    dropped = [(lab, e) for lab, _, e in found if e - emin > energy_tol * max(1.0, abs(emin))]
    if dropped:
        log.info("discarded local minima above c0: %s", dropped)
    energies = tuple(e for _, _, e in keep)
    if max(energies) - min(energies) > energy_tol:
        raise InconsistentEnergies(f"connection energies differ: {energies}")
    keep.sort(key=lambda t: _normal_moment(spec, t[1]))
    profiles = tuple(p for _, p, _ in keep)
    labels = tuple(_label(spec, p) for p in profiles)
    q_star = pairwise_q_star(profiles)
    if np.isfinite(q_star) and q_star / 2 <= dup_tol:
        raise InconsistentEnergies("distinct connections closer than the duplicate tolerance")
    c0 = float(min(energies))
    energies = tuple(e for _, _, e in keep)
    return ConnectionSet(profiles, energies, c0, len(profiles), labels, q_star)


def _normal_moment(spec: PotentialSpec, u: Profile1D) -> float:
    """Integral of the component normal to a_+ - a_- (orders and labels channels)."""
    if spec.m < 2:
        return 0.0
    e1 = (spec.a_plus - spec.a_minus) / np.linalg.norm(spec.a_plus - spec.a_minus)
    normal = u.values - np.outer(u.values @ e1, e1)
    k = int(np.argmin(np.abs(e1)))
    return float(u.grid.spacing * np.sum(normal[:, k]))


def _label(spec: PotentialSpec, u: Profile1D, tol: float = 1e-6) -> str:
    mom = _normal_moment(spec, u)
    if abs(mom) <= tol:
        return "straight"
    return "upper" if mom > 0 else "lower"


# ------------------------------------------------------------ diagnostics


def equipartition_residual(spec: PotentialSpec, u: Profile1D) -> float:
    """max over interior nodes of | |u'|^2/2 - W(u) | (fourth-order derivative)."""
    du = dz.d_dy4(u).values
    r = 0.5 * np.sum(du * du, axis=1) - spec.value(u.values)
    return float(np.abs(r[1:-1]).max())


def fit_tail_rate(u: Profile1D, side: str, noise: float = 1e-12, y_fit: float | None = None,
                  min_nodes: int = 20) -> tuple[float, float]:
    """Fit |u(y) - a_side| ~ K exp(-k |y|) on the tail window.

    The window is y_fit <= |y| <= 0.9 y_max on the requested side (default
    y_fit = y_max/4), restricted to nodes whose deviation exceeds 100*noise.
    The outer tenth is skipped because the clamp bends the tail there.
    """
    if side not in ("minus", "plus"):
        raise ValueError("side must be 'minus' or 'plus'")
    y = u.nodes
    y_fit = 0.25 * u.grid.y_max if y_fit is None else y_fit
    a = u.values[0] if side == "minus" else u.values[-1]
    dev = np.linalg.norm(u.values - a, axis=1)
    on_side = (y < 0) if side == "minus" else (y > 0)
    tail = on_side & (np.abs(y) >= y_fit) & (np.abs(y) <= 0.9 * u.grid.y_max)
    win = tail & (dev > 100.0 * noise)
    if not np.any(win):
        raise TailBelowNoise(f"{side} tail entirely below noise floor {noise}")
    if np.count_nonzero(win) < min_nodes:
        raise TailBelowNoise(f"{side} tail window has {np.count_nonzero(win)} nodes, need {min_nodes}")
    s = np.abs(y[win])
    slope, intercept = np.polyfit(s, np.log(dev[win]), 1)
    return float(-slope), float(np.exp(intercept))
