"""Second-order minimizer shared by the 1D and 2D solvers.

Newton iteration on a sparse symmetric Hessian with

* inertia read off a symmetric-mode sparse LU (no pivoting, so the signs of
  the pivots count negative eigenvalues),
* a diagonal shift H + sigma I when the Hessian is indefinite, which turns the
  step into a descent direction (Levenberg style),
* an escape step along the lowest eigenvector when the iterate sits at a
  critical point with negative curvature (a symmetric initial guess can
  otherwise converge to a symmetric saddle),
* Armijo backtracking on the energy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LineSearchFailure, NonConvergence

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass
class MinimizeResult:
    x: np.ndarray
    energy: float
    grad_norm: float
    iterations: int
    converged: bool
    escapes: int = 0
    history: list = field(default_factory=list)


def _factor(H: sp.spmatrix, shift: float):
    A = H if shift == 0.0 else H + shift * sp.identity(H.shape[0], format="csc")
    lu = spla.splu(
        sp.csc_matrix(A),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )
    piv = lu.U.diagonal()
    return lu, int(np.count_nonzero(piv < 0)), bool(np.all(np.isfinite(piv)) and np.all(piv != 0))


def _positive_factor(H, shift: float, scale: float):
    """Factor H + s I with the smallest tried s >= shift that is positive definite."""
    s = shift
    for _ in range(80):
        lu, neg, ok = _factor(H, s)
        if neg == 0 and ok:
            return lu, s
        s = max(4.0 * s, 1e-4 * scale)
    raise NonConvergence("could not find a positive definite shift of the Hessian")


def minimize(
    energy: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    hessian: Callable[[np.ndarray], sp.spmatrix],
    x0: np.ndarray,
    *,
    weight: float,
    tol: float,
    max_iters: int = 200,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    raise_on_failure: bool = True,
) -> MinimizeResult:
    """Minimize ``energy`` starting at ``x0``.

    ``gradient`` and ``hessian`` return the derivatives of ``energy`` divided
    by ``weight`` (the quadrature cell volume), so that ``sqrt(weight * g.g)``
    is a grid-independent residual norm. Convergence requires that norm to be
    at most ``tol`` and the Hessian to be positive definite.
    """
    x = np.array(x0, dtype=float)
    e = energy(x)
    shift = 0.0
    escapes = 0
    history = []
    gn = np.inf
    for it in range(max_iters + 1):
        g = gradient(x)
        gn = float(np.sqrt(weight * np.dot(g, g)))
        H = hessian(x)
        scale = float(abs(H.diagonal()).max()) if H.shape[0] else 1.0
        lu, used = _positive_factor(H, shift, scale)
        history.append((it, e, gn, used))
        log.debug("iter %d energy %.15g grad %.3e shift %.2e", it, e, gn, used)
        if gn <= tol and used == 0.0:
            return MinimizeResult(x, e, gn, it, True, escapes, history)
        if it == max_iters:
            break

        d = lu.solve(-g)
        slope = weight * float(np.dot(g, d))
        x_new, e_new = None, e
        if slope < 0:
            if -slope < 1e3 * _EPS * max(1.0, abs(e)):
                # Decrease is below energy round-off; take the full step.
                x_new = x + d
                e_new = energy(x_new)
            else:
                t = 1.0
                while t >= 1e-12:
                    cand = x + t * d
                    ec = energy(cand)
                    if ec <= e + 1e-4 * t * slope:
                        x_new, e_new = cand, ec
                        break
                    t *= 0.5

        stalled = x_new is None or (e - e_new) <= 1e2 * _EPS * max(1.0, abs(e))
        if used > 0.0 and (stalled or gn <= tol):
            esc = _escape(energy, H, lu, used, g, x, e, weight)
            if esc is not None:
                escapes += 1
                x_new, e_new = esc
        if x_new is None:
            if gn <= 10.0 * tol:
                x_new, e_new = x + d, energy(x + d)
            elif raise_on_failure:
                raise LineSearchFailure(f"line search failed at iteration {it} (grad {gn:.3e})")
            else:
                return MinimizeResult(x, e, gn, it, False, escapes, history)

        if project is not None:
            xp = project(x_new)
            if xp is not x_new:
                ep = energy(xp)
                if ep <= e_new:
                    x_new, e_new = xp, ep
        x, e = x_new, e_new
        shift = used / 10.0 if used > 1e-10 * max(scale, 1.0) else 0.0

    if raise_on_failure:
        raise NonConvergence(f"no convergence after {max_iters} iterations (grad {gn:.3e})")
    return MinimizeResult(x, e, gn, max_iters, False, escapes, history)


def _escape(energy, H, lu, used, g, x, e, weight):
    """Step along the lowest eigenvector of H if its eigenvalue is negative."""
    op = spla.LinearOperator(H.shape, matvec=lu.solve, dtype=float)
    try:
        v0 = np.random.default_rng(0).standard_normal(H.shape[0])
        lam, vec = spla.eigsh(sp.csc_matrix(H), k=1, sigma=-used, which="LM", OPinv=op, tol=1e-8, v0=v0)
    except Exception as exc:  # pragma: no cover - ARPACK hiccup
        log.debug("negative-curvature eigensolve failed: %s", exc)
        return None
    return _curvature_step(energy, float(lam[0]), vec[:, 0], g, x, e, weight)


def _curvature_step(energy, lam, vec, g, x, e, weight):
    if lam >= 0:
        return None
    v = vec / np.sqrt(weight * np.dot(vec, vec))
    # Deterministic sign: downhill first, then the sign making the largest entry positive.
    gv = float(np.dot(g, v))
    if gv > 0 or (gv == 0 and v[np.argmax(np.abs(v))] < 0):
        v = -v
    a = 1.0
    while a >= 1e-8:
        cand = x + a * v
        ec = energy(cand)
        if ec < e - 0.25 * abs(lam) * a * a:
            log.debug("escape along eigenvalue %.4g amplitude %.3g", lam, a)
            return cand, ec
        a *= 0.5
    return None


# ---------------------------------------------------------------- Krylov path


def _pcg(H, b, M, rtol: float, maxiter: int):
    """Preconditioned CG on H d = b, truncated at negative curvature.

    Returns (d, negative_curvature_hit). Every returned d with d != 0 is a
    descent direction for the quadratic model when b = -gradient.
    """
    d = np.zeros_like(b)
    r = b.copy()
    z = M @ r
    p = z.copy()
    rz = float(r @ z)
    bnorm = float(np.linalg.norm(b))
    for it in range(maxiter):
        Hp = H @ p
        curv = float(p @ Hp)
        if curv <= 1e-14 * float(p @ p):
            return (z if it == 0 else d), True
        alpha = rz / curv
        d += alpha * p
        r -= alpha * Hp
        if np.linalg.norm(r) <= rtol * bnorm:
            return d, False
        z = M @ r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return d, False


def _amg(P, block: int):
    import pyamg

    n = P.shape[0] // block
    B = np.kron(np.ones((n, 1)), np.eye(block))
    # pyamg estimates spectral radii from np.random.rand; pin it so reruns match bit for bit.
    state = np.random.get_state()
    np.random.seed(0)
    try:
        ml = pyamg.smoothed_aggregation_solver(sp.csr_matrix(P), B=B, symmetry="symmetric")
    finally:
        np.random.set_state(state)
    return ml.aspreconditioner(cycle="V")


def lowest_curvature(H, M, seed: int = 0, tol: float = 1e-6, maxiter: int = 300):
    """Lowest eigenpair of H by LOBPCG with preconditioner M (seeded start)."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((H.shape[0], 2))
    lam, vec = spla.lobpcg(sp.csr_matrix(H), X, M=M, largest=False, tol=tol, maxiter=maxiter)
    j = int(np.argmin(lam))
    return float(lam[j]), vec[:, j]


def minimize_krylov(
    energy: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    hessian: Callable[[np.ndarray], sp.spmatrix],
    precond_matrix: Callable[[np.ndarray], sp.spmatrix],
    x0: np.ndarray,
    *,
    weight: float,
    tol: float,
    block: int,
    max_iters: int = 200,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    raise_on_failure: bool = True,
    curvature_tol: float = 1e-7,
) -> MinimizeResult:
    """Inexact Newton-CG for large systems.

    The CG preconditioner is an algebraic multigrid cycle for a positive
    definite surrogate of the Hessian supplied by ``precond_matrix``. Once the
    gradient test passes, LOBPCG checks the lowest Hessian eigenvalue; a value
    below ``-curvature_tol`` triggers an escape step and the iteration goes on.
    """
    x = np.array(x0, dtype=float)
    e = energy(x)
    escapes = 0
    history = []
    gn = np.inf
    for it in range(max_iters + 1):
        g = gradient(x)
        gn = float(np.sqrt(weight * np.dot(g, g)))
        history.append((it, e, gn, 0.0))
        log.debug("iter %d energy %.15g grad %.3e", it, e, gn)
        if it == max_iters:
            break
        H = sp.csr_matrix(hessian(x))
        M = _amg(precond_matrix(x), block)
        if gn <= tol:
            lam, vec = lowest_curvature(H, M, seed=it)
            log.debug("lowest curvature %.3e", lam)
            if lam >= -curvature_tol:
                return MinimizeResult(x, e, gn, it, True, escapes, history)
            esc = _curvature_step(energy, lam, vec, g, x, e, weight)
            if esc is None:
                return MinimizeResult(x, e, gn, it, True, escapes, history)
            escapes += 1
            x, e = esc
            continue

        forcing = min(0.1, np.sqrt(gn))
        d, neg = _pcg(H, -g, M, rtol=forcing, maxiter=400)
        slope = weight * float(np.dot(g, d))
        x_new, e_new = None, e
        if slope < 0:
            if -slope < 1e3 * _EPS * max(1.0, abs(e)):
                x_new = x + d
                e_new = energy(x_new)
            else:
                t = 1.0
                while t >= 1e-12:
                    cand = x + t * d
                    ec = energy(cand)
                    if ec <= e + 1e-4 * t * slope:
                        x_new, e_new = cand, ec
                        break
                    t *= 0.5
        if x_new is None or (neg and (e - e_new) <= 1e2 * _EPS * max(1.0, abs(e))):
            lam, vec = lowest_curvature(H, M, seed=it)
            esc = _curvature_step(energy, lam, vec, g, x, e, weight)
            if esc is not None:
                escapes += 1
                x_new, e_new = esc
        if x_new is None:
            if gn <= 10.0 * tol:
                return MinimizeResult(x, e, gn, it, True, escapes, history)
            if raise_on_failure:
                raise LineSearchFailure(f"line search failed at iteration {it} (grad {gn:.3e})")
            return MinimizeResult(x, e, gn, it, False, escapes, history)
        if project is not None:
            xp = project(x_new)
            if xp is not x_new:
                ep = energy(xp)
                if ep <= e_new:
                    x_new, e_new = xp, ep
        x, e = x_new, e_new

    if raise_on_failure:
        raise NonConvergence(f"no convergence after {max_iters} iterations (grad {gn:.3e})")
    return MinimizeResult(x, e, gn, max_iters, False, escapes, history)
