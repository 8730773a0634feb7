"""Layer structure of strip solutions: per-column projections, plateaus, decay, L-continuation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import discretization as dz
from . import translate as tr
from .connect1d import ConnectionSet
from .discretization import Field2D, Grid2D, Profile1D
from .errors import NonCauchy, StructureViolation, WindowTooShort
from .strip2d import StripProblem, StripSolution, sweep_eta

log = logging.getLogger(__name__)

RIPPLE = 1e-5
NOISE = 1e-10


@dataclass
class ColumnDecomposition:
    x: np.ndarray
    q: np.ndarray
    h: np.ndarray
    branch: np.ndarray
    well_posed: np.ndarray
    q_w12: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.x)
        for name in ("q", "h", "branch", "well_posed"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} not aligned with x")

    def branch_switch_ok(self) -> bool:
        """Branch is constant on every maximal well-posed interval."""
        wp, br = self.well_posed, self.branch
        for i in range(1, len(wp)):
            if wp[i] and wp[i - 1] and br[i] != br[i - 1]:
                return False
        return True

    def rows(self):
        for i in range(len(self.x)):
            yield (float(self.x[i]), float(self.q[i]), float(self.h[i]), int(self.branch[i]), bool(self.well_posed[i]))


def decompose_columns(field_: Field2D, conns: ConnectionSet, consts: tr.ManifoldConstants) -> ColumnDecomposition:
    """Project every column, warm-starting the shift Newton from the neighbour column.

    The first column (and any column after a Newton failure) uses the full scan.
    """
    g = field_.grid
    n = g.n_x
    q = np.empty(n)
    h = np.empty(n)
    qw = np.empty(n)
    br = np.empty(n, dtype=int)
    wp = np.empty(n, dtype=bool)
    prev: dict[int, float] = {}
    for i in range(n):
        col = field_.column(i)
        per_branch = []
        for j in range(conns.N):
            guess = {j: prev[j]} if j in prev else None
            per_branch.append(tr.project(col, conns, consts, branches=[j], h_guess=guess))
        for j, p in enumerate(per_branch):
            if p.newton_ok:
                prev[j] = p.h
            else:
                prev.pop(j, None)
        best = min(per_branch, key=lambda p: (round(p.q, 12), abs(p.h), p.branch))
        q[i], h[i], qw[i], br[i], wp[i] = best.q, best.h, best.q_w12, best.branch, best.well_posed
    return ColumnDecomposition(g.x.copy(), q, h, br, wp, qw)


@dataclass
class PlateauReport:
    l_minus: float
    l_plus: float
    p_level: float
    mono_left_ok: bool
    mono_right_ok: bool
    decay_rate_right: float = float("nan")
    decay_rate_left: float = float("nan")
    rigid: bool = False
    branch_left: int = -1
    branch_right: int = -1
    interior_maxima: list = field(default_factory=list)
    # filled by fit_decay
    bound_right_ok: bool | None = None
    bound_left_ok: bool | None = None
    rate_right_ok: bool | None = None
    rate_left_ok: bool | None = None
    h_rate_right: float = float("nan")
    h_rate_left: float = float("nan")
    h_rate_ok: bool | None = None
    mu_hat: float = float("nan")

    @property
    def width(self) -> float:
        return self.l_plus - self.l_minus

    @property
    def decay_ok(self) -> bool:
        return bool(self.bound_right_ok and self.bound_left_ok and self.rate_right_ok and self.rate_left_ok)

    def as_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, (np.floating, float)):
                v = float(v)
                if not math.isfinite(v):
                    v = str(v)
            elif isinstance(v, np.bool_):
                v = bool(v)
            out[k] = v
        out["width"] = float(self.width) if math.isfinite(self.width) else str(self.width)
        return out


def _crossing(x: np.ndarray, q: np.ndarray, i: int, level: float) -> float:
    """x where the segment [i, i+1] crosses ``level`` (linear interpolation)."""
    q0, q1 = q[i], q[i + 1]
    if q1 == q0:
        return float(0.5 * (x[i] + x[i + 1]))
    t = (level - q0) / (q1 - q0)
    return float(x[i] + np.clip(t, 0.0, 1.0) * (x[i + 1] - x[i]))


def _runs(mask: np.ndarray) -> list[tuple[bool, int, int]]:
    out, start = [], 0
    for i in range(1, len(mask) + 1):
        if i == len(mask) or mask[i] != mask[start]:
            out.append((bool(mask[start]), start, i - 1))
            start = i
    return out


def detect_plateaus(dec: ColumnDecomposition, p: float, ripple: float = RIPPLE) -> PlateauReport:
    """l_-, l_+ as the crossings of q through p/2; monotonicity of q on the plateaus.

    Raises StructureViolation unless {q <= p/2} is two intervals touching the
    ends (excursions across p/2 smaller than ``ripple`` are ignored).
    """
    if not p > 0:
        raise ValueError("p must be positive")
    x, q = dec.x, dec.q
    level = 0.5 * p
    mask = q <= level
    # Absorb ripple: runs whose excursion from the level is below the ripple flip.
    for val, a, b in _runs(mask):
        if a == 0 or b == len(q) - 1:
            continue
        if abs(q[a:b + 1] - level).max() <= ripple:
            mask[a:b + 1] = not val
    runs = _runs(mask)
    if len(runs) == 1 and runs[0][0]:
        return PlateauReport(float(x[-1]), float(x[-1]), p, True, True, rigid=True,
                             branch_left=int(dec.branch[0]), branch_right=int(dec.branch[-1]))
    shape = [r[0] for r in runs]
    if shape != [True, False, True]:
        raise StructureViolation(f"sublevel set {{q <= p/2}} is not two boundary intervals: runs {runs}")
    (_, _, iL), (_, _, _), (_, iR, _) = runs
    l_minus = _crossing(x, q, iL, level)
    l_plus = _crossing(x, q, iR - 1, level)

    dl = np.diff(q[: iL + 2])
    dr = np.diff(q[iR - 1:])
    mono_left = bool(np.all(dl >= -ripple))
    mono_right = bool(np.all(dr <= ripple))
    maxima = []
    for lo, hi in ((0, iL + 1), (iR, len(q) - 1)):
        for i in range(max(lo, 1), min(hi, len(q) - 2) + 1):
            if q[i] - max(q[i - 1], q[i + 1]) > ripple:
                maxima.append(float(x[i]))
    rep = PlateauReport(l_minus, l_plus, p, mono_left, mono_right, interior_maxima=maxima,
                        branch_left=int(dec.branch[0]), branch_right=int(dec.branch[-1]))
    left_br = set(dec.branch[: iL + 1].tolist())
    right_br = set(dec.branch[iR:].tolist())
    if len(left_br) != 1 or len(right_br) != 1:
        raise StructureViolation(f"branch label changes on a plateau: left {left_br}, right {right_br}")
    return rep


def require_structure(rep: PlateauReport) -> PlateauReport:
    if not (rep.mono_left_ok and rep.mono_right_ok):
        raise StructureViolation(f"q not monotone on the plateaus (interior maxima at {rep.interior_maxima})")
    return rep


def _fit_rate(s: np.ndarray, y: np.ndarray) -> float:
    """Least-squares k in log y = a - k s."""
    return float(-np.polyfit(s, np.log(y), 1)[0])


def _h_rate(s: np.ndarray, dh: np.ndarray, noise: float) -> float:
    keep = np.abs(dh) > noise
    if np.count_nonzero(keep) < 3:
        return float("inf")  # h constant to noise: no measurable decay to fit
    return _fit_rate(s[keep], np.abs(dh[keep]))


def fit_decay(dec: ColumnDecomposition, rep: PlateauReport, mu_hat: float, noise: float = NOISE,
              min_columns: int = 15, margin: float = 1.1) -> PlateauReport:
    """Exponential decay of q into both plateaus against the rate sqrt(mu_hat/8).

    Right: q(x) <= (p/2) exp(-k (x - l_+)) * margin on [l_+, L] and the fitted
    rate is >= k; left is the mirror image on [0, l_-]. The shift deviation
    |h(x) - h(end)| is fitted the same way and compared with sqrt(mu_hat/16).
    """
    x, q, h = dec.x, dec.q, dec.h
    k = math.sqrt(mu_hat / 8.0)
    kh = math.sqrt(mu_hat / 16.0)
    half = 0.5 * rep.p_level
    right = (x >= rep.l_plus) & (q > noise)
    left = (x <= rep.l_minus) & (q > noise)
    for name, sel in (("right", right), ("left", left)):
        if np.count_nonzero(sel) < min_columns:
            raise WindowTooShort(f"{name} plateau has {np.count_nonzero(sel)} columns above noise, need {min_columns}")
    sR = x[right] - rep.l_plus
    sL = rep.l_minus - x[left]
    rep.decay_rate_right = _fit_rate(sR, q[right])
    rep.decay_rate_left = _fit_rate(sL, q[left])
    rep.bound_right_ok = bool(np.all(q[right] <= half * np.exp(-k * sR) * margin))
    rep.bound_left_ok = bool(np.all(q[left] <= half * np.exp(-k * sL) * margin))
    rep.rate_right_ok = rep.decay_rate_right >= k
    rep.rate_left_ok = rep.decay_rate_left >= k
    onR = x >= rep.l_plus
    onL = x <= rep.l_minus
    rep.h_rate_right = _h_rate(x[onR] - rep.l_plus, h[onR] - h[-1], noise)
    rep.h_rate_left = _h_rate(rep.l_minus - x[onL], h[onL] - h[0], noise)
    rep.h_rate_ok = bool(rep.h_rate_right >= kh and rep.h_rate_left >= kh)
    rep.mu_hat = mu_hat
    return rep


# ------------------------------------------------- plateau-column identities


def centered_frame(field_: Field2D, dec: ColumnDecomposition, conns: ConnectionSet) -> np.ndarray:
    """v(x, y) = u(x, y + h(x)) - u_bar(y) for every column (u_bar of that column's branch)."""
    g = field_.grid
    V = np.empty_like(field_.values)
    for i in range(g.n_x):
        back = dz.shift_values(g.ygrid, field_.values[i], -dec.h[i])
        V[i] = back - conns.profiles[dec.branch[i]].values
    return V


@dataclass
class IdentityCheck:
    x: np.ndarray
    h_prime_fd: np.ndarray
    h_prime_formula: np.ndarray
    kinetic_direct: np.ndarray
    kinetic_formula: np.ndarray

    def rel_err(self, a, b, floor: float) -> float:
        return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))) if len(a) else 0.0

    def summary(self, floor: float = 1e-8) -> dict:
        return {
            "columns": int(len(self.x)),
            "h_prime_rel_err": self.rel_err(self.h_prime_fd, self.h_prime_formula, floor),
            "kinetic_rel_err": self.rel_err(self.kinetic_direct, self.kinetic_formula, floor),
        }


def plateau_identities(field_: Field2D, dec: ColumnDecomposition, conns: ConnectionSet,
                       rep: PlateauReport) -> IdentityCheck:
    """Compare h' and ||u_x||^2 with their representations through v on well-posed plateau columns.

        h'       = <v_x, v_y> / ||u_bar' + v_y||^2
        ||u_x||^2 = ||v_x||^2 - <v_x, v_y>^2 / ||u_bar' + v_y||^2
    v_x and h' from centered column differences.
    """
    g = field_.grid
    dx = g.dx
    V = centered_frame(field_, dec, conns)
    wy = dy_w = g.dy * dz.trapezoid_weights(g.n_y)
    ux = np.gradient(field_.values, dx, axis=0, edge_order=2)
    vx = np.gradient(V, dx, axis=0, edge_order=2)
    hp = np.gradient(dec.h, dx, edge_order=2)
    sel = [i for i in range(1, g.n_x - 1)
           if dec.well_posed[i] and (g.x[i] <= rep.l_minus or g.x[i] >= rep.l_plus)
           and dec.branch[i - 1] == dec.branch[i] == dec.branch[i + 1]]
    hf, kd, kf = [], [], []
    for i in sel:
        prof = Profile1D(g.ygrid, V[i])
        vy = dz.d_dy4(prof).values
        up = dz.d_dy4(conns.profiles[dec.branch[i]]).values
        den = float(dy_w @ np.sum((up + vy) ** 2, axis=1))
        num = float(dy_w @ np.sum(vx[i] * vy, axis=1))
        hf.append(num / den)
        kd.append(float(wy @ np.sum(ux[i] ** 2, axis=1)))
        kf.append(float(wy @ np.sum(vx[i] ** 2, axis=1)) - num * num / den)
    idx = np.array(sel, dtype=int)
    return IdentityCheck(g.x[idx], hp[idx], np.array(hf), np.array(kd), np.array(kf))


def dy_norm_profile(field_: Field2D, dec: ColumnDecomposition, conns: ConnectionSet) -> float:
    """max over columns of ||D_y v(x, .)||."""
    V = centered_frame(field_, dec, conns)
    g = field_.grid
    return float(max(math.sqrt(dz.dirichlet_form(V[i], g.dy)) for i in range(g.n_x)))


# ------------------------------------------------------------ continuation


@dataclass
class ContinuationResult:
    L_values: list
    eta_bar: list
    widths: list
    l_minus: list
    l_plus: list
    centered_fields: list = field(repr=False)
    eta_plus: list = field(default_factory=list)
    eta_minus: list = field(default_factory=list)
    window_sup_diffs: list = field(default_factory=list)
    window: tuple = (0.0, 0.0)
    case: str = ""
    dy_bounds: list = field(default_factory=list)
    C0_instance: list = field(default_factory=list)
    energies: list = field(default_factory=list)

    @property
    def cauchy_ok(self) -> bool:
        d = self.window_sup_diffs
        return all(d[i + 1] < d[i] for i in range(len(d) - 1))

    def as_dict(self) -> dict:
        return {
            "L_values": list(map(float, self.L_values)),
            "eta_bar": list(map(float, self.eta_bar)),
            "widths": list(map(float, self.widths)),
            "l_minus": list(map(float, self.l_minus)),
            "l_plus": list(map(float, self.l_plus)),
            "eta_plus": list(map(float, self.eta_plus)),
            "eta_minus": list(map(float, self.eta_minus)),
            "window_sup_diffs": list(map(float, self.window_sup_diffs)),
            "window": list(map(float, self.window)),
            "case": self.case,
            "cauchy_ok": self.cauchy_ok,
            "dy_bounds": list(map(float, self.dy_bounds)),
            "C0_instance": list(map(float, self.C0_instance)),
            "energies": list(map(float, self.energies)),
        }


def recenter(field_: Field2D, shift: float, xs: np.ndarray) -> np.ndarray:
    """Values of the field at x = xs + shift by linear interpolation in x."""
    g = field_.grid
    xq = xs + shift
    j = np.clip(np.searchsorted(g.x, xq) - 1, 0, g.n_x - 2)
    t = ((xq - g.x[j]) / g.dx)[:, None, None]
    U = field_.values
    return (1.0 - t) * U[j] + t * U[j + 1]


def plateau_shift(dec: ColumnDecomposition, rep: PlateauReport, side: str) -> float:
    """Shift on a plateau: h at the boundary column, the exact translate."""
    return float(dec.h[0] if side == "left" else dec.h[-1])


def continue_in_L(spec, conns: ConnectionSet, consts: tr.ManifoldConstants, L_list, eta_grid, *,
                  branch_left: int = 0, branch_right: int = 1, p: float | None = None, tol: float = 1e-8,
                  eta_tol: float = 1e-3, max_iters: int = 200, per_unit: int = 16, cache: dict | None = None,
                  threads: int = 1, strict: bool = False) -> ContinuationResult:
    """sweep_eta + decomposition + plateaus for every L; Cauchy test of fields recentred at l_-.

    ``cache`` maps L to an already computed SweepResult; the per-L sweeps are
    independent (cold starts) and run on ``threads`` workers.
    """
    Ls = sorted(float(L) for L in L_list)
    if len(Ls) < 3:
        raise ValueError("continuation needs at least three lengths")
    yg = conns.grid
    p = consts.q0 if p is None else p
    cache = {} if cache is None else cache

    def run(L: float):
        if L in cache:
            return cache[L]
        grid = Grid2D(L, int(round(L * per_unit)) + 1, yg.y_max, yg.n)
        prob = StripProblem(spec, conns, grid, branch_left, branch_right, 0.0)
        return sweep_eta(prob, eta_grid, tol=tol, eta_tol=eta_tol, max_iters=max_iters)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            sols = list(pool.map(run, Ls))
    else:
        sols = [run(L) for L in Ls]
    decs, reps = [], []
    for L, sw in zip(Ls, sols):
        cache[L] = sw
        dec = decompose_columns(sw.solution.field, conns, consts)
        rep = detect_plateaus(dec, p)
        decs.append(dec)
        reps.append(rep)
        log.info("continuation L=%g: eta_bar=%.6g l-=%.4f l+=%.4f", L, sw.eta_bar, rep.l_minus, rep.l_plus)
    lm = [r.l_minus for r in reps]
    lp = [r.l_plus for r in reps]
    lo = -min(lm)
    hi = min(L - l for L, l in zip(Ls, lm))
    dx = 1.0 / per_unit
    xs = np.arange(math.ceil(lo / dx) * dx, hi + 1e-12, dx)
    centered = [recenter(s.solution.field, l, xs) for s, l in zip(sols, lm)]
    diffs = [float(np.abs(centered[i + 1] - centered[i]).max()) for i in range(len(Ls) - 1)]
    grow_l = all(lm[i + 1] > lm[i] for i in range(len(Ls) - 1))
    grow_r = all((Ls[i + 1] - lp[i + 1]) > (Ls[i] - lp[i]) for i in range(len(Ls) - 1))
    case = "a" if (grow_l and grow_r) else "b"
    if case == "b":
        log.warning("continuation: l_- or L - l_+ does not grow along L_list (case b); "
                    "the constant extension is not constructed")
    out = ContinuationResult(
        Ls, [s.eta_bar for s in sols], [r.width for r in reps], lm, lp, centered,
        eta_plus=[plateau_shift(d, r, "right") for d, r in zip(decs, reps)],
        eta_minus=[plateau_shift(d, r, "left") for d, r in zip(decs, reps)],
        window_sup_diffs=diffs, window=(float(xs[0]), float(xs[-1])), case=case,
        dy_bounds=[dy_norm_profile(s.solution.field, d, conns) for s, d in zip(sols, decs)],
        C0_instance=[s.C0_instance for s in sols],
        energies=[s.solution.energy for s in sols],
    )
    if strict and not out.cauchy_ok:
        raise NonCauchy(f"window sup differences not decreasing: {diffs}")
    return out
