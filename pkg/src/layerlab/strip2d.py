"""Minimizers of the 2D energy on a strip [0, L] x [-y_max, y_max].

Columns x = 0 and x = L carry the Dirichlet data u_-(y) and u_+(y - eta);
rows y = +-y_max are clamped to the zeros a_+-.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import discretization as dz
from .connect1d import ConnectionSet
from .discretization import Field2D, Grid2D, Profile1D
from .errors import MinimumOnBoundary, NonConvergence
from .optim import minimize_krylov
from .potential import PotentialSpec, clip_to_ball

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class StripProblem:
    spec: PotentialSpec
    conns: ConnectionSet
    grid: Grid2D
    branch_left: int
    branch_right: int
    eta: float = 0.0

    def __post_init__(self):
        if self.conns.grid != self.grid.ygrid:
            raise ValueError("connections must live on the strip's y-grid")
        for b in (self.branch_left, self.branch_right):
            if not 0 <= b < self.conns.N:
                raise ValueError(f"branch index {b} out of range for N={self.conns.N}")

    @property
    def c0(self) -> float:
        return self.conns.c0

    @property
    def rigid(self) -> bool:
        return self.branch_left == self.branch_right

    def with_eta(self, eta: float) -> "StripProblem":
        return replace(self, eta=float(eta))

    def left_column(self) -> np.ndarray:
        return self.conns.profiles[self.branch_left].values.copy()

    def right_column(self) -> np.ndarray:
        prof = self.conns.profiles[self.branch_right]
        return dz.shift_values(prof.grid, prof.values, self.eta)


@dataclass
class StripSolution:
    field: Field2D
    eta: float
    energy: float
    grad_norm: float
    iterations: int
    converged: bool
    residual_sup: float = float("nan")
    guess_energy: float = float("nan")


@dataclass
class HamiltonianDiagnostics:
    x: np.ndarray
    omega: np.ndarray
    omega_tilde: np.ndarray
    slice_energy: np.ndarray
    kinetic: np.ndarray
    omega_raw: np.ndarray = field(repr=False, default=None)
    omega_tilde_raw: np.ndarray = field(repr=False, default=None)

    @property
    def omega_mean(self) -> float:
        return float(np.mean(self.omega))

    @property
    def omega_max_dev(self) -> float:
        return float(np.max(np.abs(self.omega - self.omega.mean())))

    @property
    def omega_tilde_max(self) -> float:
        return float(np.max(np.abs(self.omega_tilde)))

    @property
    def kinetic_mean(self) -> float:
        return float(np.mean(self.kinetic))

    @property
    def scale(self) -> float:
        return 1.0 + self.kinetic_mean

    def total_kinetic(self, dx: float) -> float:
        return float(dx * np.sum(dz.trapezoid_weights(len(self.x)) * self.kinetic))

    def summary(self) -> dict:
        return {
            "omega_mean": self.omega_mean,
            "omega_max_dev": self.omega_max_dev,
            "omega_tilde_max": self.omega_tilde_max,
            "kinetic_mean": self.kinetic_mean,
            "scale": self.scale,
            "omega_boundary_left": float(self.omega[0]),
            "omega_boundary_right": float(self.omega[-1]),
        }


# ------------------------------------------------------------ initial guess


def build_initial_guess(problem: StripProblem) -> Field2D:
    """Linear blend from u_- to u_+(. - eta) on x in [0, 1], then u_+(. - eta)."""
    g = problem.grid
    left, right = problem.left_column(), problem.right_column()
    t = np.minimum(g.x, 1.0)[:, None, None]
    vals = (1.0 - t) * left[None] + t * right[None]
    vals[-1] = right
    return Field2D(g, vals)


def measure_C0(problem: StripProblem, etas=(0.0, 0.5, 1.0, 2.0, 3.0, -0.5, -1.0, -2.0, -3.0)) -> float:
    """max over eta of (J(guess) - c0 L) / (1 + |eta|): the constant of the upper bound."""
    vals = []
    for eta in etas:
        p = problem.with_eta(eta)
        e = dz.energy_2d(p.spec, build_initial_guess(p))
        vals.append((e - p.c0 * p.grid.length) / (1.0 + abs(eta)))
    return float(max(vals))


def guess_excess(problem: StripProblem) -> float:
    """C0_instance: J(guess) - c0 L for this problem's eta."""
    return dz.energy_2d(problem.spec, build_initial_guess(problem)) - problem.c0 * problem.grid.length


# ------------------------------------------------------------ solver


@lru_cache(maxsize=8)
def _laplacian_2d(n_x: int, n_y: int, dx: float, dy: float, m: int) -> sp.csr_matrix:
    nix, niy = n_x - 2, n_y - 2
    lx = sp.diags([np.full(nix - 1, -1.0), np.full(nix, 2.0), np.full(nix - 1, -1.0)], [-1, 0, 1]) / (dx * dx)
    ly = dz.laplacian_matrix_1d(niy, dy)
    lap = sp.kron(lx, sp.identity(niy)) + sp.kron(sp.identity(nix), ly)
    return sp.kron(lap, sp.identity(m), format="csr")


def strip_hessian(spec: PotentialSpec, values: np.ndarray, dx: float, dy: float) -> sp.csc_matrix:
    """Hessian of energy_2d over interior nodes divided by dx*dy, ordered (x, y, component)."""
    nx, ny, m = values.shape
    lap = _laplacian_2d(nx, ny, dx, dy, m)
    blocks = spec.hessian(values[1:-1, 1:-1]).reshape(-1, m, m)
    nb = blocks.shape[0]
    W = sp.bsr_matrix((blocks, np.arange(nb), np.arange(nb + 1)), shape=(nb * m, nb * m))
    return (lap + W).tocsr()


def strip_precond_matrix(spec: PotentialSpec, values: np.ndarray, dx: float, dy: float,
                         floor: float = 0.0) -> sp.csr_matrix:
    """Positive definite surrogate: Laplacian plus |W_uu| blockwise."""
    nx, ny, m = values.shape
    lap = _laplacian_2d(nx, ny, dx, dy, m)
    H = spec.hessian(values[1:-1, 1:-1]).reshape(-1, m, m)
    lam, Q = np.linalg.eigh(H)
    lam = np.maximum(np.abs(lam), floor)
    blocks = np.einsum("nij,nj,nkj->nik", Q, lam, Q)
    nb = blocks.shape[0]
    W = sp.bsr_matrix((blocks, np.arange(nb), np.arange(nb + 1)), shape=(nb * m, nb * m))
    return (lap + W).tocsr()


def solve_strip(problem: StripProblem, guess: Field2D | None = None, tol: float = 1e-8,
                max_iters: int = 200) -> StripSolution:
    """Minimize the strip energy from ``guess`` (default: the blended guess)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    spec, g = problem.spec, problem.grid
    if guess is None:
        guess = build_initial_guess(problem)
    if guess.grid != g:
        raise ValueError("guess lives on a different grid")
    base = guess.values.copy()
    base[0] = problem.left_column()
    base[-1] = problem.right_column()
    base[:, 0] = spec.a_minus
    base[:, -1] = spec.a_plus
    dx, dy = g.dx, g.dy
    shape = base[1:-1, 1:-1].shape

    def unpack(x):
        v = base.copy()
        v[1:-1, 1:-1] = x.reshape(shape)
        return v

    def energy(x):
        return dz.energy_2d_values(spec, unpack(x), dx, dy)

    def gradient(x):
        return dz.gradient_2d_values(spec, unpack(x), dx, dy)[1:-1, 1:-1].reshape(-1)

    def hessian(x):
        return strip_hessian(spec, unpack(x), dx, dy)

    def project(x):
        v = x.reshape(-1, spec.m)
        if np.all(np.einsum("ij,ij->i", v, v) <= spec.clip_radius ** 2):
            return x
        return clip_to_ball(v, spec.clip_radius).reshape(-1)

    def precond(x):
        return strip_precond_matrix(spec, unpack(x), dx, dy)

    guess_energy = dz.energy_2d_values(spec, base, dx, dy)
    x0 = project(base[1:-1, 1:-1].reshape(-1))
    res = minimize_krylov(energy, gradient, hessian, precond, x0, weight=dx * dy, tol=tol,
                          block=spec.m, max_iters=max_iters, project=project, raise_on_failure=False)
    vals = unpack(res.x)
    resid = float(np.abs(dz.gradient_2d_values(spec, vals, dx, dy)).max())
    log.info("strip L=%g eta=%.6g: J-c0L=%.10g grad=%.2e iters=%d escapes=%d converged=%s",
             g.length, problem.eta, res.energy - problem.c0 * g.length, res.grad_norm,
             res.iterations, res.escapes, res.converged)
    return StripSolution(Field2D(g, vals), problem.eta, res.energy, res.grad_norm, res.iterations,
                         res.converged, resid, guess_energy)


def require_converged(sol: StripSolution) -> StripSolution:
    if not sol.converged:
        raise NonConvergence(f"strip solve did not converge (grad {sol.grad_norm:.3e})")
    return sol


# ------------------------------------------------------------ diagnostics


def _poly_derivatives(U: np.ndarray, dx: float, orders=(1, 2, 3), width: int = 7) -> list[np.ndarray]:
    """x-derivatives from local polynomial stencils (one-sided near the ends)."""
    n = U.shape[0]
    width = min(width, n)
    out = [np.empty_like(U) for _ in orders]
    for i in range(n):
        lo = min(max(i - width // 2, 0), n - width)
        idx = np.arange(lo, lo + width)
        V = np.vander((idx - i) * dx, width, increasing=True)
        for o, k in zip(out, orders):
            e = np.zeros(width)
            e[k] = math.factorial(k)
            w = np.linalg.solve(V.T, e)
            o[i] = np.tensordot(w, U[idx], axes=(0, 0))
    return out


def diagnostics(sol: StripSolution, spec: PotentialSpec, c0: float) -> HamiltonianDiagnostics:
    """Per-column Hamiltonian quantities.

    The raw quantities are
        omega  = ||u_x||^2 / 2 - (J_R(u(x, .)) - c0),
        omega~ = <u_x, u_y>.
    The reported ones add the O(dx^2) terms of the modified equation of the
    three-point x-stencil, (dx^2/12) (<u_x, u_xxx> - ||u_xx||^2 / 2) and
    (dx^2/12) (<u_xxx, u_y> - <u_xx, u_xy>), which the discrete minimizer
    conserves exactly up to higher order. x-derivatives use 7-point local
    polynomial stencils, one-sided at the ends.
    """
    U = sol.field.values
    g = sol.field.grid
    dx, dy = g.dx, g.dy
    wy = dz.trapezoid_weights(g.n_y)
    ux, uxx, uxxx = _poly_derivatives(U, dx)
    uy = np.empty_like(U)
    for i in range(g.n_x):
        uy[i] = dz.d_dy4(Profile1D(g.ygrid, U[i])).values
    uxy = np.empty_like(U)
    for i in range(g.n_x):
        uxy[i] = dz.d_dy4(Profile1D(g.ygrid, ux[i])).values

    def ip(a, b):
        return dy * np.sum(wy[None, :] * np.sum(a * b, axis=2), axis=1)

    slice_e = dz.slice_energies(spec, U, dy)
    kin = ip(ux, ux)
    om_raw = 0.5 * kin - (slice_e - c0)
    om = om_raw + dx * dx / 12.0 * (ip(ux, uxxx) - 0.5 * ip(uxx, uxx))
    omt_raw = ip(ux, uy)
    omt = omt_raw + dx * dx / 12.0 * (ip(uxxx, uy) - ip(uxx, uxy))
    return HamiltonianDiagnostics(g.x, om, omt, slice_e, kin, om_raw, omt_raw)


# ------------------------------------------------------------ eta sweep


@dataclass
class SweepResult:
    eta_bar: float
    table: list  # rows (eta, energy, converged, iterations)
    solution: StripSolution
    C0_instance: float

    def energies(self) -> dict:
        return {float(e): float(j) for e, j, _, _ in self.table}


def warm_start(prev: StripSolution, problem: StripProblem) -> Field2D:
    """Reuse a neighbouring solution; the change of right boundary datum is
    blended in linearly over the last unit of x."""
    g = problem.grid
    vals = prev.field.values.copy()
    delta = problem.right_column() - vals[-1]
    ramp = np.clip(1.0 - (g.length - g.x), 0.0, 1.0)[:, None, None]
    vals = vals + ramp * delta[None]
    return Field2D(g, vals)


def sweep_eta(problem: StripProblem, eta_grid, tol: float = 1e-8, eta_tol: float = 1e-3,
              max_iters: int = 200, initial: StripSolution | None = None) -> SweepResult:
    """Grid search over eta followed by golden-section refinement to |d eta| <= eta_tol."""
    etas = sorted(float(e) for e in eta_grid)
    if len(etas) < 3:
        raise ValueError("eta grid needs at least three points")
    solved: dict[float, StripSolution] = {}

    def solve_at(eta: float) -> StripSolution:
        if eta in solved:
            return solved[eta]
        p = problem.with_eta(eta)
        if solved:
            near = min(solved, key=lambda e: (abs(e - eta), e))
            guess = warm_start(solved[near], p)
        elif initial is not None:
            guess = warm_start(initial, p)
        else:
            guess = build_initial_guess(p)
        sol = require_converged(solve_strip(p, guess, tol, max_iters))
        solved[eta] = sol
        return sol

    # March outward from the grid point nearest zero so warm starts stay local.
    start = int(np.argmin(np.abs(etas)))
    order = [start] + [i for k in range(1, len(etas)) for i in (start + k, start - k) if 0 <= i < len(etas)]
    for i in order:
        solve_at(etas[i])
    J = [solved[e].energy for e in etas]
    k = int(np.argmin(J))
    if k == 0 or k == len(etas) - 1:
        raise MinimumOnBoundary(f"energy minimum at grid edge eta={etas[k]}; widen the grid")

    a, b = etas[k - 1], etas[k + 1]
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = solve_at(c).energy, solve_at(d).energy
    while b - a > eta_tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = solve_at(c).energy
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = solve_at(d).energy
    best = min(solved, key=lambda e: (solved[e].energy, abs(e)))
    if not (a <= best <= b):
        best = c if fc <= fd else d
    sol = solved[best]
    table = [(e, s.energy, s.converged, s.iterations) for e, s in sorted(solved.items())]
    c0_inst = guess_excess(problem.with_eta(best))
    return SweepResult(best, table, sol, c0_inst)
