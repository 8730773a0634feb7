"""Double-well potentials W: R^m -> [0, inf) with two nondegenerate zeros.

Evaluators are vectorized: they accept arrays of shape (..., m) and return
shapes (...), (..., m) and (..., m, m) for value, gradient and Hessian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PotentialSpec:
    name: str
    m: int
    a_minus: np.ndarray
    a_plus: np.ndarray
    value: Evaluator
    gradient: Evaluator
    hessian: Evaluator
    clip_radius: float
    params: dict = field(default_factory=dict)

    def zero(self, side: str) -> np.ndarray:
        if side == "minus":
            return self.a_minus
        if side == "plus":
            return self.a_plus
        raise ValueError(f"side must be 'minus' or 'plus', got {side!r}")

    @property
    def gamma_sq(self) -> float:
        """Smallest Hessian eigenvalue over the two zeros."""
        return float(min(np.linalg.eigvalsh(self.hessian(a)).min() for a in (self.a_minus, self.a_plus)))


def make_scalar_quartic() -> PotentialSpec:
    def value(u):
        u = np.asarray(u, dtype=float)
        return 0.25 * (1.0 - u[..., 0] ** 2) ** 2

    def gradient(u):
        u = np.asarray(u, dtype=float)
        return u**3 - u

    def hessian(u):
        u = np.asarray(u, dtype=float)
        return (3.0 * u**2 - 1.0)[..., None]

    return PotentialSpec(
        name="scalar_quartic",
        m=1,
        a_minus=np.array([-1.0]),
        a_plus=np.array([1.0]),
        value=value,
        gradient=gradient,
        hessian=hessian,
        clip_radius=2.0,
    )


def make_two_channel(A: float) -> PotentialSpec:
    """W(u) = (|u|^2 - 1)^2 / 4 + A u_2^2 / 2 with zeros (+-1, 0)."""
    A = float(A)
    if not np.isfinite(A) or A <= 0.0:
        raise ValueError(f"two_channel requires A > 0, got {A}")

    def value(u):
        u = np.asarray(u, dtype=float)
        r = u[..., 0] ** 2 + u[..., 1] ** 2 - 1.0
        return 0.25 * r * r + 0.5 * A * u[..., 1] ** 2

    def gradient(u):
        u = np.asarray(u, dtype=float)
        r = u[..., 0] ** 2 + u[..., 1] ** 2 - 1.0
        return np.stack([r * u[..., 0], (r + A) * u[..., 1]], axis=-1)

    def hessian(u):
        u = np.asarray(u, dtype=float)
        u1, u2 = u[..., 0], u[..., 1]
        r = u1**2 + u2**2 - 1.0
        H = np.empty(u.shape + (2,))
        H[..., 0, 0] = r + 2.0 * u1**2
        H[..., 1, 1] = r + 2.0 * u2**2 + A
        H[..., 0, 1] = H[..., 1, 0] = 2.0 * u1 * u2
        return H

    return PotentialSpec(
        name="two_channel",
        m=2,
        a_minus=np.array([-1.0, 0.0]),
        a_plus=np.array([1.0, 0.0]),
        value=value,
        gradient=gradient,
        hessian=hessian,
        clip_radius=2.0,
        params={"A": A},
    )


def make_potential(name: str, **params) -> PotentialSpec:
    if name == "scalar_quartic":
        if params:
            raise ValueError(f"scalar_quartic takes no parameters, got {sorted(params)}")
        return make_scalar_quartic()
    if name == "two_channel":
        return make_two_channel(params.get("A", 0.05))
    raise ValueError(f"unknown potential {name!r}")


def _sample_directions(m: int, count: int) -> np.ndarray:
    if m == 1:
        return np.array([[1.0], [-1.0]])
    if m == 2:
        th = np.linspace(0.0, 2.0 * np.pi, max(count, 8), endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    rng = np.random.default_rng(20240601)
    d = rng.standard_normal((max(count, 8), m))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def verify_growth_condition(spec: PotentialSpec, samples: int) -> bool:
    """Check W(s z) >= W(z) for |z| >= M and s in [1, 4] on a fixed sample set."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    M = spec.clip_radius
    dirs = _sample_directions(spec.m, samples)
    radii = M * (1.0 + 2.0 * np.arange(samples) / max(samples, 1))
    scales = np.linspace(1.0, 4.0, 13)
    z = radii[:, None, None] * dirs[None, :, :]
    base = spec.value(z)
    for s in scales:
        if np.any(spec.value(s * z) < base - 1e-12 * np.abs(base)):
            return False
    return True


def clip_to_ball(u: np.ndarray, M: float) -> np.ndarray:
    """Radial projection onto the closed ball of radius M (rowwise on (..., m))."""
    if M <= 0:
        raise ValueError("M must be positive")
    u = np.asarray(u, dtype=float)
    r = np.linalg.norm(u, axis=-1, keepdims=True)
    scale = np.where(r > M, M / np.where(r > 0, r, 1.0), 1.0)
    return u * scale
