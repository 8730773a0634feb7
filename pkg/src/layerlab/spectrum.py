"""Linearization T = -d^2/dy^2 + W_uu(u_bar) about a connection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import gaussian_filter1d

from . import discretization as dz
from .connect1d import assemble_hessian_1d
from .discretization import Profile1D
from .errors import EigensolveFailure, NondegeneracyViolated
from .potential import PotentialSpec

ZERO_BAND = 1e-4
Q_MAX = 0.1  # upper end of the working neighborhood (q0 is capped here)


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    translation_residual: float
    zero_multiplicity: int
    mu_hat: float
    ess_edge: float
    mu1_hat: float
    mu1_raw: float = float("nan")
    eigenvectors: np.ndarray = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "translation_residual": self.translation_residual,
            "zero_multiplicity": self.zero_multiplicity,
            "mu_hat": self.mu_hat,
            "ess_edge": self.ess_edge,
            "mu1_hat": self.mu1_hat,
            "mu1_truncated_grid": self.mu1_raw,
        }


def assemble_T(spec: PotentialSpec, ubar: Profile1D) -> sp.csr_matrix:
    """T on the interior nodes (Dirichlet truncation), unknowns ordered node-major.

    Shape ((n-2)*m, (n-2)*m); the quadratic form is dy * w.T @ T @ w.
    """
    return assemble_hessian_1d(spec, ubar.values, ubar.grid.spacing)


def interior(v: Profile1D | np.ndarray) -> np.ndarray:
    vals = v.values if isinstance(v, Profile1D) else np.asarray(v)
    return vals[1:-1].reshape(-1)


def embed(vec: np.ndarray, like: Profile1D) -> Profile1D:
    vals = np.zeros_like(like.values)
    vals[1:-1] = vec.reshape(like.grid.n - 2, like.m)
    return like.with_values(vals)


def quad_form(Tmat: sp.spmatrix, w: Profile1D) -> float:
    x = interior(w)
    return float(w.grid.spacing * x @ (Tmat @ x))


def spectral_floor(spec: PotentialSpec, ubar: Profile1D) -> float:
    """A value strictly below the spectrum of T: -d^2/dy^2 >= 0, so
    T >= min_y lambda_min(W_uu(u_bar(y)))."""
    hmin = float(np.linalg.eigvalsh(spec.hessian(ubar.values[1:-1])).min())
    return hmin - 1.0


def _lowest(Tmat: sp.spmatrix, k: int, spec: PotentialSpec, ubar: Profile1D):
    n_int = Tmat.shape[0]
    if n_int <= 400 or k >= n_int - 1:
        lam, vec = np.linalg.eigh(Tmat.toarray())
        return lam[:k], vec[:, :k]
    sigma = spectral_floor(spec, ubar)
    try:
        # ARPACK's default start vector comes from a process-global RNG; fix it for reproducible output.
        v0 = np.random.default_rng(0).standard_normal(n_int)
        lam, vec = spla.eigsh(sp.csc_matrix(Tmat), k=k, sigma=sigma, which="LM", tol=1e-13, v0=v0)
    except (spla.ArpackError, spla.ArpackNoConvergence, RuntimeError) as exc:
        raise EigensolveFailure(str(exc)) from exc
    order = np.argsort(lam)
    return lam[order], vec[:, order]


def lowest_eigenpairs(Tmat: sp.spmatrix, k: int, *, spec: PotentialSpec, ubar: Profile1D,
                      residual_tol: float = 1e-8) -> SpectrumReport:
    """Lowest k eigenpairs of T.

    Shift-invert Lanczos with the shift placed below the spectrum, so the
    eigenvalues nearest the shift are the lowest ones; residuals are checked
    explicitly. Small systems use a dense symmetric solve.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    n_int = Tmat.shape[0]
    k_eff = min(max(k, 8), n_int)
    lam, vec = _lowest(Tmat, k_eff, spec, ubar)
    res = np.linalg.norm(Tmat @ vec - vec * lam, axis=0)
    if np.any(res > residual_tol * np.maximum(1.0, np.abs(lam))):
        raise EigensolveFailure(f"eigen residual {res.max():.3e} above {residual_tol}")
    dy = ubar.grid.spacing
    vec = vec / np.sqrt(dy * np.sum(vec * vec, axis=0))
    # Deterministic sign: positive sum (or largest entry positive).
    for j in range(vec.shape[1]):
        s = vec[:, j].sum()
        if s < 0 or (abs(s) < 1e-12 and vec[np.argmax(np.abs(vec[:, j])), j] < 0):
            vec[:, j] *= -1

    up = interior(dz.d_dy4(ubar))
    up_norm = np.sqrt(dy * up @ up)
    trans = float(np.sqrt(dy * np.sum((Tmat @ up) ** 2)) / up_norm) if up_norm > 0 else float("nan")
    zero_mult = int(np.count_nonzero(np.abs(lam) <= ZERO_BAND))
    ess = float(min(np.linalg.eigvalsh(spec.hessian(spec.a_minus)).min(),
                    np.linalg.eigvalsh(spec.hessian(spec.a_plus)).min()))

    # Constrained minimum over nu orthogonal to u_bar': Ritz values on the
    # computed eigenspace intersected with the orthogonal complement.
    p = up / up_norm
    c = dy * (vec.T @ p)
    Q, _ = np.linalg.qr(np.column_stack([c, np.eye(len(c))]))
    basis = Q[:, 1:len(c)]
    mu1_raw = float(np.linalg.eigvalsh(basis.T @ np.diag(lam) @ basis).min()) if up_norm > 0 else float(lam[1])
    # The truncated grid lifts the continuum edge into discrete box modes;
    # the constrained infimum on the line cannot exceed the edge.
    mu1 = min(mu1_raw, ess)
    return SpectrumReport(lam[:k], trans, zero_mult, float("nan"), ess, mu1, mu1_raw, vec[:, :k])


def mu_ratio(Tmat: sp.spmatrix, nu: Profile1D) -> float:
    """<T nu, nu> / (1 + ||nu'||^2) for a unit direction nu."""
    return quad_form(Tmat, nu) / (1.0 + dz.norm_deriv_sq(nu))


def curvature_along(spec: PotentialSpec, ubar: Profile1D, nu: Profile1D, q: float) -> float:
    """d^2/dq^2 of J_R(u_bar + q nu): ||nu'||^2 + int W_uu(u_bar + q nu) nu.nu."""
    H = spec.hessian(ubar.values + q * nu.values)
    pot = np.einsum("ni,nij,nj->n", nu.values, H, nu.values)
    grid = ubar.grid
    return float(dz.norm_deriv_sq(nu) + grid.spacing * np.sum(grid.weights * pot))


def orthonormalize_against(nu: Profile1D, ubar: Profile1D) -> Profile1D:
    """Project out u_bar', zero the clamped ends, normalize in L2."""
    up = dz.d_dy4(ubar)
    vals = nu.values.copy()
    vals[0] = vals[-1] = 0.0
    v = nu.with_values(vals)
    v = v - up.scaled(dz.inner_l2(v, up) / dz.inner_l2(up, up))
    vals = v.values.copy()
    vals[0] = vals[-1] = 0.0
    v = v.with_values(vals)
    nrm = dz.norm_l2(v)
    if nrm == 0:
        raise ValueError("direction collapsed after projection")
    return v.scaled(1.0 / nrm)


def direction_battery(ubar: Profile1D, seed: int = 0, n_random: int = 20, n_fourier: int = 10) -> list[Profile1D]:
    """Smoothed random directions plus low Fourier modes, all orthogonal to u_bar'."""
    grid = ubar.grid
    n, m = grid.n, ubar.m
    y = grid.nodes
    rng = np.random.default_rng(seed)
    out = []
    for j in range(n_random):
        width = 0.25 * (1.5 ** (j % 8))
        raw = rng.standard_normal((n, m))
        sm = gaussian_filter1d(raw, sigma=max(width / grid.spacing, 1.0), axis=0, mode="constant")
        env = np.exp(-0.5 * (y / (2.0 + 0.5 * j)) ** 2)[:, None]
        out.append(orthonormalize_against(ubar.with_values(sm * env), ubar))
    for k in range(1, n_fourier + 1):
        vals = np.zeros((n, m))
        vals[:, (k - 1) % m] = np.sin(k * np.pi * (y + grid.y_max) / (2.0 * grid.y_max))
        out.append(orthonormalize_against(ubar.with_values(vals), ubar))
    return out


def estimate_mu(spec: PotentialSpec, ubar: Profile1D, report: SpectrumReport, seed: int = 0,
                extra: list[Profile1D] | None = None, q_max: float = Q_MAX, n_q: int = 10) -> float:
    """Smallest d^2W/dq^2 / (1 + ||nu'||^2) over a direction battery and |q| <= q_max.

    At q = 0 the ratio is <T nu, nu> / (1 + ||nu'||^2); the sampled q > 0
    values make mu_hat a constant valid on the whole working neighborhood.
    """
    if report.zero_multiplicity != 1 or not report.mu1_hat > 0:
        raise NondegeneracyViolated(
            f"zero multiplicity {report.zero_multiplicity}, mu1_hat {report.mu1_hat:.3e}")
    battery = mu_battery(ubar, report, seed, extra)
    qs = np.concatenate([[0.0], np.linspace(q_max / n_q, q_max, n_q)])
    best = np.inf
    for nu in battery:
        w = 1.0 + dz.norm_deriv_sq(nu)
        for q in qs:
            for sgn in ((1.0,) if q == 0 else (1.0, -1.0)):
                best = min(best, curvature_along(spec, ubar, nu, sgn * q) / w)
    mu = max(0.0, float(best))
    report.mu_hat = mu
    return mu


def mu_battery(ubar: Profile1D, report: SpectrumReport, seed: int = 0,
               extra: list[Profile1D] | None = None) -> list[Profile1D]:
    battery = direction_battery(ubar, seed)
    if report.eigenvectors is not None:
        # The lowest nontrivial eigenvectors carry the softest directions.
        for j in range(1, min(6, report.eigenvectors.shape[1])):
            battery.append(orthonormalize_against(embed(report.eigenvectors[:, j], ubar), ubar))
    if extra:
        battery += [orthonormalize_against(v, ubar) for v in extra]
    return battery


def analyze(spec: PotentialSpec, ubar: Profile1D, k: int = 6, seed: int = 0) -> SpectrumReport:
    Tmat = assemble_T(spec, ubar)
    rep = lowest_eigenpairs(Tmat, k, spec=spec, ubar=ubar)
    estimate_mu(spec, ubar, rep, seed)
    return rep


def normal_block_lowest(spec: PotentialSpec, profile: Profile1D, component: int) -> float:
    """Lowest eigenvalue of T restricted to one component.

    Along a profile confined to an invariant coordinate subspace (the straight
    path of the two-channel family) T is block diagonal, and a negative value
    certifies that the profile is not a local minimizer.
    """
    Tmat = assemble_T(spec, profile)
    m = profile.m
    idx = np.arange(component, Tmat.shape[0], m)
    block = sp.csr_matrix(Tmat)[idx][:, idx]
    hmin = float(np.linalg.eigvalsh(spec.hessian(profile.values[1:-1])).min()) - 1.0
    v0 = np.random.default_rng(0).standard_normal(block.shape[0])
    lam = spla.eigsh(sp.csc_matrix(block), k=1, sigma=hmin, which="LM", return_eigenvectors=False, tol=1e-13,
                     v0=v0)
    return float(lam[0])
