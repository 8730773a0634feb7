"""The effective potential W(v) = J_R(u_bar + v) - c0 and numerical checks of its structure."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cholesky_banded, solve_banded
from scipy.optimize import minimize, minimize_scalar

from . import discretization as dz
from . import spectrum as spc
from .connect1d import ConnectionSet
from .discretization import Profile1D
from .errors import CoercivityViolated, GapCollapse
from .potential import PotentialSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EffPotSample:
    v: Profile1D
    q: float
    value: float
    quad: float
    w12: float


def eval_effective(spec: PotentialSpec, ubar: Profile1D, v: Profile1D, c0: float | None = None,
                   Tmat=None) -> EffPotSample:
    if c0 is None:
        c0 = dz.energy_1d(spec, ubar)
    if Tmat is None:
        Tmat = spc.assemble_T(spec, ubar)
    value = dz.energy_1d(spec, ubar + v) - c0
    quad = 0.5 * spc.quad_form(Tmat, v)
    return EffPotSample(v, dz.norm_l2(v), value, quad, dz.norm_w12(v) ** 2)


def remainder_integrals(spec: PotentialSpec, ubar: Profile1D, v: Profile1D) -> tuple[float, float, float]:
    """The three pointwise Taylor remainders of W about u_bar, integrated over y."""
    u, d = ubar.values, v.values
    W0, W1 = spec.value(u), spec.value(u + d)
    g0, g1 = spec.gradient(u), spec.gradient(u + d)
    H0, H1 = spec.hessian(u), spec.hessian(u + d)
    H0v = np.einsum("nij,nj->ni", H0, d)
    H1v = np.einsum("nij,nj->ni", H1, d)
    r1 = W1 - W0 - np.sum(g0 * d, axis=1) - 0.5 * np.sum(H0v * d, axis=1)
    r2 = np.sum((g1 - g0) * d, axis=1) - np.sum(H0v * d, axis=1)
    r3 = np.sum((H1v - H0v) * d, axis=1)
    w = ubar.grid.spacing * ubar.grid.weights
    return float(w @ r1), float(w @ r2), float(w @ r3)


def loglog_slope(t: np.ndarray, r: np.ndarray, floor: float = 1e-300) -> float:
    t = np.asarray(t, float)
    r = np.maximum(np.abs(np.asarray(r, float)), floor)
    return float(np.polyfit(np.log(t), np.log(r), 1)[0])


@dataclass
class RemainderReport:
    amplitudes: np.ndarray
    slope_quadratic: list[float]  # |W(v) - 1/2 <Tv,v>| per direction
    slope_integrals: list[tuple[float, float, float]]

    @property
    def min_slope(self) -> float:
        flat = list(self.slope_quadratic) + [s for tri in self.slope_integrals for s in tri]
        return float(min(flat))

    def as_dict(self) -> dict:
        return {
            "amplitudes": [float(a) for a in self.amplitudes],
            "slope_quadratic": self.slope_quadratic,
            "slope_integrals": [list(t) for t in self.slope_integrals],
            "min_slope": self.min_slope,
        }


def remainder_slopes(spec: PotentialSpec, ubar: Profile1D, battery: list[Profile1D],
                     amplitudes=None) -> RemainderReport:
    """Fitted log-log exponents of the remainders along t * nu, t in [1e-3, 1e-1]."""
    t = np.geomspace(1e-3, 1e-1, 9) if amplitudes is None else np.asarray(amplitudes, float)
    c0 = dz.energy_1d(spec, ubar)
    Tmat = spc.assemble_T(spec, ubar)
    sq, si = [], []
    for nu in battery:
        rq, r123 = [], []
        for a in t:
            v = nu.scaled(a)
            s = eval_effective(spec, ubar, v, c0, Tmat)
            rq.append(s.value - s.quad)
            r123.append(remainder_integrals(spec, ubar, v))
        r123 = np.array(r123)
        sq.append(loglog_slope(t, rq))
        si.append(tuple(loglog_slope(t, r123[:, k]) for k in range(3)))
    return RemainderReport(t, sq, si)


def check_interpolation(v: Profile1D, C: float | None = None) -> float:
    """Slack (3C/2)^(1/3) ||v||^(2/3) - ||v||_inf of the sup-norm interpolation bound.

    C defaults to the measured sup of |v| + |v'|.
    """
    vals = v.values
    if C is None:
        dv = dz.d_dy(v).values
        C = float(np.max(np.linalg.norm(vals, axis=1) + np.linalg.norm(dv, axis=1)))
    sup = float(np.max(np.linalg.norm(vals, axis=1))) if vals.size else 0.0
    return (1.5 * C) ** (1.0 / 3.0) * dz.norm_l2(v) ** (2.0 / 3.0) - sup


def tent_profile(grid: dz.Grid1D, height: float, slope: float, m: int = 1, center: float = 0.0) -> Profile1D:
    """|v(s)| = max(height - slope |s - center|, 0): the extremal case of the interpolation bound."""
    y = grid.nodes
    vals = np.zeros((grid.n, m))
    vals[:, 0] = np.maximum(height - slope * np.abs(y - center), 0.0)
    return Profile1D(grid, vals)


@dataclass
class CoercivityReport:
    worst_slack: float
    mu_used: float
    retried: bool
    monotone_ok: bool
    n_directions: int
    q_values: np.ndarray = field(repr=False)
    worst_direction: int = -1

    def as_dict(self) -> dict:
        return {
            "worst_slack": self.worst_slack,
            "mu_used": self.mu_used,
            "retried": self.retried,
            "monotone_ok": self.monotone_ok,
            "n_directions": self.n_directions,
            "worst_direction": self.worst_direction,
        }


def coercivity_battery(ubar: Profile1D, report: spc.SpectrumReport, battery_size: int = 20,
                       seed: int = 0) -> list[Profile1D]:
    """Battery directions and their negatives (W(q, nu) is probed for q > 0 only)."""
    base = spc.direction_battery(ubar, seed, n_random=battery_size)
    if report.eigenvectors is not None:
        for j in range(1, min(6, report.eigenvectors.shape[1])):
            base.append(spc.orthonormalize_against(spc.embed(report.eigenvectors[:, j], ubar), ubar))
    return base + [nu.scaled(-1.0) for nu in base]


def check_coercivity(spec: PotentialSpec, ubar: Profile1D, report: spc.SpectrumReport, battery_size: int = 20,
                     q0: float = 0.1, seed: int = 0, n_q: int = 20) -> CoercivityReport:
    """min over the battery and q in (0, q0] of W(q nu) - mu/2 ||q nu||_1^2, plus monotonicity in q.

    A negative slack is retried once with mu_hat/2 before CoercivityViolated is raised.
    """
    battery = coercivity_battery(ubar, report, battery_size, seed)
    qs = np.linspace(q0 / n_q, q0, n_q)
    c0 = dz.energy_1d(spec, ubar)
    values = np.empty((len(battery), n_q))
    w12 = np.empty((len(battery), n_q))
    for i, nu in enumerate(battery):
        for k, q in enumerate(qs):
            v = nu.scaled(q)
            values[i, k] = dz.energy_1d(spec, ubar + v) - c0
            w12[i, k] = dz.norm_w12(v) ** 2
    monotone = bool(np.all(np.diff(values, axis=1) > 0) and np.all(values[:, 0] > 0))
    mu = report.mu_hat
    retried = False
    slack = values - 0.5 * mu * w12
    if slack.min() < 0:
        log.warning("coercivity slack %.3e < 0 with mu_hat=%.4g; retrying with mu_hat/2", slack.min(), mu)
        mu, retried = mu / 2.0, True
        slack = values - 0.5 * mu * w12
        if slack.min() < 0:
            raise CoercivityViolated(f"coercivity slack {slack.min():.3e} < 0 even with mu_hat/2")
    worst = int(np.unravel_index(np.argmin(slack), slack.shape)[0])
    return CoercivityReport(float(slack.min()), mu, retried, monotone, len(battery), qs, worst)


# ------------------------------------------------------------------- gap


class _TubeDistance:
    """W^{1,2} distance from u to the translate manifold of one connection."""

    def __init__(self, ubar: Profile1D, max_shift: float):
        from .translate import _translates

        self.ubar = ubar
        self.tr = _translates(ubar)
        self.max_shift = max_shift
        grid = ubar.grid
        self.dy = grid.spacing
        self.w = grid.spacing * grid.weights
        self.r_prev = 0.0

    def sq(self, vals: np.ndarray, r: float) -> float:
        d = vals - self.tr(r)
        return float(self.w @ np.sum(d * d, axis=1) + dz.dirichlet_form(d, self.dy))

    def __call__(self, vals: np.ndarray) -> tuple[float, np.ndarray]:
        """(squared distance, its gradient w.r.t. vals at the optimal shift)."""
        rs = np.linspace(-self.max_shift, self.max_shift, 41)
        f = [self.sq(vals, r) for r in rs]
        k = int(np.argmin(f))
        lo, hi = rs[max(k - 1, 0)], rs[min(k + 1, len(rs) - 1)]
        res = minimize_scalar(lambda r: self.sq(vals, r), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-9})
        r = float(res.x)
        d = vals - self.tr(r)
        grad = 2.0 * (self.w[:, None] * d + self.dy * dz.laplacian_1d(d, self.dy))
        return float(res.fun), grad


@dataclass
class GapResult:
    p: float
    e_hat: float
    starts: int
    values: list[float]

    def as_dict(self) -> dict:
        return {"p": self.p, "e_hat": self.e_hat, "starts": self.starts}


def _w12_gram(n_int: int, m: int, dy: float) -> sp.csr_matrix:
    """Gram matrix of ||v||_1^2 on interior nodes (node-major, zero end values)."""
    A = dz.laplacian_matrix_1d(n_int, dy)
    return sp.csr_matrix(sp.kron(dy * (sp.identity(n_int) + A), sp.identity(m)))


class _SphereChart:
    """Coordinates z = U v with M = U^T U, so that ||v||_1 = |z|."""

    def __init__(self, M: sp.spmatrix, band: int):
        N = M.shape[0]
        Md = M.todia()
        ab = np.zeros((band + 1, N))
        for off, row in zip(Md.offsets, Md.data):
            if 0 <= off <= band:
                ab[band - off, off:] = row[off:]
        self.band = band
        self.U = cholesky_banded(ab, lower=False)
        self.Lt = np.zeros_like(self.U)  # U^T in lower banded storage
        for k in range(band + 1):
            self.Lt[k, :N - k] = self.U[band - k, k:]

    def to_z(self, v: np.ndarray) -> np.ndarray:
        N = v.shape[0]
        out = self.U[self.band] * v
        for k in range(1, self.band + 1):
            out[:N - k] += self.U[self.band - k, k:] * v[k:]
        return out

    def to_v(self, z: np.ndarray) -> np.ndarray:
        return solve_banded((0, self.band), self.U, z)

    def pull_grad(self, g_v: np.ndarray) -> np.ndarray:
        return solve_banded((self.band, 0), self.Lt, g_v)


def gap_seeds(conns: ConnectionSet, n_seeds: int = 30, seed: int = 0) -> list[tuple[int, Profile1D]]:
    """Deterministic (branch, direction) starts drawn from each branch's battery."""
    batteries = [spc.direction_battery(u, seed + j, n_random=20, n_fourier=10) for j, u in enumerate(conns.profiles)]
    return [(k % conns.N, batteries[k % conns.N][(k // conns.N) % len(batteries[k % conns.N])])
            for k in range(n_seeds)]


def estimate_gap(spec: PotentialSpec, conns: ConnectionSet, p: float, n_seeds: int = 30, seed: int = 0,
                 max_shift: float = 3.0) -> GapResult:
    """Upper estimate of min{J_R(u) - c0 : dist_{W^{1,2}}(u, every translate manifold) >= p}.

    For p in the working range the minimum sits on the boundary of a tube,
    i.e. on the sphere ||v||_1 = p in the W^{1,2}-orthogonal complement of
    u_bar' (where the optimal shift is r = 0). Each start is minimized on that
    sphere with L-BFGS in Cholesky coordinates; the result is then checked
    against every tube with the true shift-minimized distance and pushed out
    radially if needed, so every recorded value belongs to a feasible profile.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    grid = conns.grid
    dy, n, m = grid.spacing, grid.n, spec.m
    chart = _SphereChart(_w12_gram(n - 2, m, dy), 2 * m)
    tubes = [_TubeDistance(u, max_shift) for u in conns.profiles]
    found = []
    for k, (j, nu) in enumerate(gap_seeds(conns, n_seeds, seed)):
        ubar = conns.profiles[j]
        zt = chart.to_z(dz.d_dy4(ubar).values[1:-1].reshape(-1))
        zt /= np.linalg.norm(zt)

        def split(y):
            py = y - (y @ zt) * zt
            r = np.linalg.norm(py)
            return py / r, r

        def vals_of(yh):
            vals = ubar.values.copy()
            vals[1:-1] += chart.to_v(p * yh).reshape(n - 2, m)
            return vals

        def obj(y):
            yh, r = split(y)
            vals = vals_of(yh)
            e = dz.energy_1d_values(spec, vals, dy)
            gz = chart.pull_grad(dy * dz.gradient_1d_values(spec, vals, dy)[1:-1].reshape(-1))
            gy = (p / r) * ((gz - (gz @ zt) * zt) - (yh @ gz) * yh)
            return e, gy

        y0 = chart.to_z(nu.values[1:-1].reshape(-1))
        res = minimize(obj, y0 / np.linalg.norm(y0), jac=True, method="L-BFGS-B",
                       options={"maxiter": 3000, "gtol": 1e-12, "ftol": 1e-15})
        vals = _push_feasible(vals_of(split(res.x)[0]), tubes, p)
        e = dz.energy_1d_values(spec, vals, dy) - conns.c0
        found.append(e)
        log.debug("gap start %d (branch %d): J - c0 = %.6e after %d iterations", k, j, e, res.nit)
    e_hat = float(min(found))
    if e_hat <= 1e-8:
        raise GapCollapse(f"gap estimate {e_hat:.3e} at p={p} (constraint leak or missed connection)")
    return GapResult(p, e_hat, len(found), found)


def is_feasible(u: Profile1D, conns: ConnectionSet, p: float, max_shift: float = 3.0) -> bool:
    """True iff the W^{1,2} distance from u to every translate manifold is >= p."""
    return all(math.sqrt(max(_TubeDistance(w, max_shift)(u.values)[0], 0.0)) >= p for w in conns.profiles)


def _push_feasible(vals: np.ndarray, tubes: list[_TubeDistance], p: float) -> np.ndarray:
    """Scale the deviation from the nearest translate until every W^{1,2} distance is >= p."""
    for _ in range(20):
        dists = [(math.sqrt(max(t(vals)[0], 0.0)), t) for t in tubes]
        dmin, tube = min(dists, key=lambda z: z[0])
        if dmin >= p:
            return vals
        rs = np.linspace(-tube.max_shift, tube.max_shift, 41)
        r = float(rs[int(np.argmin([tube.sq(vals, r) for r in rs]))])
        r = float(minimize_scalar(lambda s: tube.sq(vals, s), bounds=(r - 0.2, r + 0.2), method="bounded").x)
        base = tube.tr(r)
        vals = base + (vals - base) * (p / max(dmin, 1e-300)) * (1.0 + 1e-9)
    return vals


def gap_table(spec: PotentialSpec, conns: ConnectionSet, ps=(0.2, 0.1, 0.05, 0.025), **kw) -> dict[float, GapResult]:
    return {float(p): estimate_gap(spec, conns, p, **kw) for p in ps}
