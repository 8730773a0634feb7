"""Uniform grids, quadrature, difference stencils and discrete energies.

Conventions
-----------
* Profiles are stored as ``(n, m)`` arrays, fields as ``(n_x, n_y, m)``.
* Potential terms use the trapezoid rule.
* The y-kinetic term is the fourth-order variational form
  ``(1/dy) sum_k [ 4/3 |u_{k+1}-u_k|^2 - 1/12 |u_{k+2}-u_k|^2 ]``
  evaluated on the profile padded with one ghost row per side equal to the
  boundary row. Its gradient is the five-point Laplacian, so the discrete
  Euler-Lagrange system, the Hessian and the linearized operator share one
  stencil. The form dominates the plain sum of squared first differences.
* The x-kinetic term of a field uses squared forward differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
import scipy.sparse as sp

from .errors import GridMismatch
from .potential import PotentialSpec


def trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


@dataclass(frozen=True)
class Grid1D:
    y_max: float
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.y_max) and self.y_max > 0):
            raise ValueError(f"y_max must be positive, got {self.y_max}")
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"n must be an integer >= 3, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "y_max", float(self.y_max))

    @property
    def spacing(self) -> float:
        return 2.0 * self.y_max / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return -self.y_max + self.spacing * np.arange(self.n)

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.n)

    @property
    def center_index(self) -> int:
        return int(np.argmin(np.abs(self.nodes)))


@dataclass(frozen=True)
class Profile1D:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n:
            raise ValueError(f"values must have shape (n, m) with n={self.grid.n}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("profile values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def with_values(self, values: np.ndarray) -> "Profile1D":
        return Profile1D(self.grid, values)

    def __add__(self, other: "Profile1D") -> "Profile1D":
        _same_grid(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Profile1D") -> "Profile1D":
        _same_grid(self, other)
        return self.with_values(self.values - other.values)

    def scaled(self, t: float) -> "Profile1D":
        return self.with_values(t * self.values)


@dataclass(frozen=True)
class Grid2D:
    length: float
    n_x: int
    y_max: float
    n_y: int

    def __post_init__(self):
        if not (np.isfinite(self.length) and self.length > 1.0):
            raise ValueError(f"strip length must exceed 1, got {self.length}")
        if int(self.n_x) != self.n_x or self.n_x < 3:
            raise ValueError(f"n_x must be an integer >= 3, got {self.n_x}")
        object.__setattr__(self, "n_x", int(self.n_x))
        object.__setattr__(self, "length", float(self.length))
        Grid1D(self.y_max, self.n_y)  # validates the y axis
        object.__setattr__(self, "n_y", int(self.n_y))
        object.__setattr__(self, "y_max", float(self.y_max))

    @classmethod
    def default(cls, length: float, y_max: float = 12.0, n_y: int = 401, per_unit: int = 16) -> "Grid2D":
        return cls(length, int(round(per_unit * length)) + 1, y_max, n_y)

    @property
    def dx(self) -> float:
        return self.length / (self.n_x - 1)

    @property
    def dy(self) -> float:
        return 2.0 * self.y_max / (self.n_y - 1)

    @property
    def x(self) -> np.ndarray:
        return self.dx * np.arange(self.n_x)

    @property
    def ygrid(self) -> Grid1D:
        return Grid1D(self.y_max, self.n_y)


@dataclass(frozen=True)
class Field2D:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        g = self.grid
        if v.ndim != 3 or v.shape[:2] != (g.n_x, g.n_y):
            raise ValueError(f"values must have shape ({g.n_x}, {g.n_y}, m), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[2]

    def column(self, i: int) -> Profile1D:
        return Profile1D(self.grid.ygrid, self.values[i])

    def with_values(self, values: np.ndarray) -> "Field2D":
        return Field2D(self.grid, values)


def _same_grid(f, g):
    if f.grid != g.grid:
        raise GridMismatch(f"grid mismatch: {f.grid} vs {g.grid}")
    if f.values.shape != g.values.shape:
        raise GridMismatch(f"shape mismatch: {f.values.shape} vs {g.values.shape}")


# ---------------------------------------------------------------- 1D norms


def inner_l2(f: Profile1D, g: Profile1D) -> float:
    _same_grid(f, g)
    w = f.grid.weights
    return float(f.grid.spacing * np.sum(w * np.sum(f.values * g.values, axis=1)))


def norm_l2(f: Profile1D) -> float:
    return float(np.sqrt(max(inner_l2(f, f), 0.0)))


def _pad(values: np.ndarray) -> np.ndarray:
    return np.concatenate([values[:1], values, values[-1:]], axis=0)


def dirichlet_form(values: np.ndarray, dy: float, axis: int = 0) -> np.ndarray | float:
    """Discrete integral of |f'|^2 along ``axis`` (fourth-order form)."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    P = np.concatenate([v[:1], v, v[-1:]], axis=0)
    d1 = np.diff(P, axis=0)
    d2 = P[2:] - P[:-2]
    s1 = np.sum(d1 * d1, axis=0)
    s2 = np.sum(d2 * d2, axis=0)
    out = (4.0 / 3.0 * s1 - s2 / 12.0) / dy
    return np.sum(out, axis=-1) if out.ndim >= 1 else out


def norm_deriv_sq(f: Profile1D) -> float:
    return float(dirichlet_form(f.values, f.grid.spacing))


def norm_w12(f: Profile1D) -> float:
    return float(np.sqrt(inner_l2(f, f) + norm_deriv_sq(f)))


def inner_w12(f: Profile1D, g: Profile1D) -> float:
    _same_grid(f, g)
    return 0.25 * (norm_w12(f + g) ** 2 - norm_w12(f - g) ** 2)


def d_dy(f: Profile1D) -> Profile1D:
    """Second-order central differences, one-sided second order at the ends."""
    return f.with_values(np.gradient(f.values, f.grid.spacing, axis=0, edge_order=2))


def d_dy4(f: Profile1D) -> Profile1D:
    """Fourth-order central differences on nodes 2..n-3; second order elsewhere."""
    v = f.values
    out = np.gradient(v, f.grid.spacing, axis=0, edge_order=2)
    if f.grid.n >= 5:
        out[2:-2] = (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / (12.0 * f.grid.spacing)
    return f.with_values(out)


def laplacian_1d(values: np.ndarray, dy: float, axis: int = 0) -> np.ndarray:
    """Five-point -d^2/dy^2 on every node (ghost rows equal the boundary rows)."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    P = np.concatenate([v[:1], v[:1], v, v[-1:], v[-1:]], axis=0)
    out = (P[:-4] - 16.0 * P[1:-3] + 30.0 * P[2:-2] - 16.0 * P[3:-1] + P[4:]) / (12.0 * dy * dy)
    return np.moveaxis(out, 0, axis)


def laplacian_matrix_1d(n_interior: int, dy: float) -> sp.csr_matrix:
    """Five-point -d^2/dy^2 on interior nodes with homogeneous Dirichlet data."""
    c = 1.0 / (12.0 * dy * dy)
    diags = [np.full(n_interior - abs(k), v * c) for k, v in ((-2, 1.0), (-1, -16.0), (0, 30.0), (1, -16.0), (2, 1.0))
             if n_interior - abs(k) > 0]
    offs = [k for k in (-2, -1, 0, 1, 2) if n_interior - abs(k) > 0]
    return sp.diags(diags, offs, shape=(n_interior, n_interior), format="csr")


# ------------------------------------------------------------- energies


def energy_1d_values(spec: PotentialSpec, values: np.ndarray, dy: float) -> float:
    w = trapezoid_weights(values.shape[0])
    return float(0.5 * dirichlet_form(values, dy) + dy * np.sum(w * spec.value(values)))


def energy_1d(spec: PotentialSpec, f: Profile1D) -> float:
    return energy_1d_values(spec, f.values, f.grid.spacing)


def gradient_1d_values(spec: PotentialSpec, values: np.ndarray, dy: float) -> np.ndarray:
    """Gradient of the discrete energy w.r.t. interior nodes, divided by dy.

    Boundary rows are returned as zero (they are held fixed).
    """
    g = laplacian_1d(values, dy) + spec.gradient(values)
    g[0] = 0.0
    g[-1] = 0.0
    return g


def slice_energies(spec: PotentialSpec, values: np.ndarray, dy: float) -> np.ndarray:
    """J_R of every column of an (n_x, n_y, m) array."""
    w = trapezoid_weights(values.shape[1])
    return 0.5 * dirichlet_form(values, dy, axis=1) + dy * np.sum(w[None, :] * spec.value(values), axis=1)


def energy_2d_values(spec: PotentialSpec, values: np.ndarray, dx: float, dy: float) -> float:
    wx = trapezoid_weights(values.shape[0])
    wy = trapezoid_weights(values.shape[1])
    dxu = np.diff(values, axis=0)
    kin_x = 0.5 * dy / dx * float(np.sum(wy[None, :] * np.sum(dxu * dxu, axis=2)))
    return kin_x + dx * float(np.sum(wx * slice_energies(spec, values, dy)))


def energy_2d(spec: PotentialSpec, u: Field2D) -> float:
    return energy_2d_values(spec, u.values, u.grid.dx, u.grid.dy)


def gradient_2d_values(spec: PotentialSpec, values: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Gradient w.r.t. interior nodes divided by dx*dy; zero on the boundary."""
    g = np.zeros_like(values)
    U = values
    g[1:-1, 1:-1] = (
        -(U[2:, 1:-1] - 2.0 * U[1:-1, 1:-1] + U[:-2, 1:-1]) / (dx * dx)
        + laplacian_1d(U[1:-1], dy, axis=1)[:, 1:-1]
        + spec.gradient(U[1:-1, 1:-1])
    )
    return g


# --------------------------------------------------------------- shifting


def shift_values(grid: Grid1D, values: np.ndarray, r: float) -> np.ndarray:
    """Cubic-spline translate y -> values(y - r), far field continued by the end rows."""
    y = grid.nodes
    if r == 0.0:
        return values.copy()
    yy = y - r
    out = CubicSpline(y, values, axis=0, bc_type="not-a-knot")(yy)
    out[yy < y[0]] = values[0]
    out[yy > y[-1]] = values[-1]
    return out
