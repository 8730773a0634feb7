import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerlab import discretization as dz
from layerlab import spectrum as spc
from layerlab import translate as tr
from layerlab.errors import NotWellPosed, ShiftTooLarge

from conftest import SQ2


@pytest.fixture(scope="module")
def planted(two_conns, two_reports):
    u1 = two_conns.profiles[1]
    nu = spc.direction_battery(u1, seed=5, n_random=1, n_fourier=0)[0]
    return u1, nu, u1.with_values(u1.values + 0.01 * nu.values)


def test_shift_identity_roundtrip_and_energy(scalar, tanh_profile):
    u = tanh_profile
    np.testing.assert_array_equal(tr.shift_profile(u, 0.0).values, u.values)
    back = tr.shift_profile(tr.shift_profile(u, 0.8), -0.8)
    inner = np.abs(u.nodes) < 0.8 * u.grid.y_max
    assert np.abs(back.values - u.values)[inner].max() <= 1e-9
    e0 = dz.energy_1d(scalar, u)
    assert abs(dz.energy_1d(scalar, tr.shift_profile(u, 0.37)) - e0) <= 1e-8
    with pytest.raises(ShiftTooLarge):
        tr.shift_profile(u, 10.5)


def test_exact_translate_recovered(two_conns, two_consts):
    u = tr.shift_profile(two_conns.profiles[1], 0.7)
    p = tr.project(u, two_conns, two_consts)
    assert p.branch == 1
    assert p.h == pytest.approx(0.7, abs=1e-8)
    assert p.q <= 1e-10 and p.well_posed and p.newton_ok


def test_exact_translate_decomposes_to_zero(scalar_conns, scalar_consts):
    # shift + unshift is two spline interpolations: 1e-9 needs the fine grid (dy = 0.01)
    u = tr.shift_profile(scalar_conns.profiles[0], 0.7)
    p = tr.project(u, scalar_conns, scalar_consts)
    v = tr.decompose(u, p, scalar_conns)
    inner = np.abs(u.nodes) < 0.8 * u.grid.y_max
    assert np.abs(v.values[inner]).max() <= 1e-9


def test_planted_perturbation(two_conns, two_consts, planted):
    u1, nu, u = planted
    p = tr.project(u, two_conns, two_consts)
    assert p.branch == 1 and p.well_posed
    assert abs(p.h) <= 1e-6
    assert p.q == pytest.approx(0.01, abs=1e-6)
    assert p.q <= p.q_w12
    assert p.orth_residual <= 1e-12 * 10
    v = tr.decompose(u, p, two_conns)
    assert np.abs(v.values - 0.01 * nu.values).max() <= 1e-6
    assert dz.norm_l2(v) == pytest.approx(p.q, abs=1e-8)
    back = tr.reconstruct(v, p, two_conns)
    assert np.abs(back.values - u.values).max() <= 1e-8


def test_halfway_profile_between_channels(two_conns, two_consts):
    up, lo = two_conns.profiles
    mid = up.with_values(0.5 * (up.values + lo.values))
    p = tr.project(mid, two_conns, two_consts)
    assert p.branch == 0  # exact tie: lower branch index wins
    assert p.well_posed == (p.q <= two_consts.q0 and p.newton_ok)
    assert not p.well_posed
    with pytest.raises(NotWellPosed):
        tr.decompose(mid, p, two_conns)


def test_calibrated_constants(scalar_consts, two_consts, scalar_conns):
    assert math.isinf(scalar_consts.q_star)
    n1, n2, _ = tr.branch_norms(scalar_conns.profiles[0])
    assert scalar_consts.q0 == pytest.approx(min(n1 * n1 / (4 * n2), 0.1))
    assert two_consts.q_star > 0 and 0 < two_consts.q0 < two_consts.q_star
    for c in (scalar_consts, two_consts):
        assert c.C_bar >= 2 * SQ2
    assert scalar_consts.as_dict()["q_star"] == "inf"


def test_quadratic_lower_bound_on_r_scan(two_conns, two_consts, planted):
    u1, _, u = planted
    p = tr.project(u, two_conns, two_consts)
    n1 = tr.branch_norms(u1)[0]
    rad = two_consts.uniqueness_radius
    for r in np.linspace(p.h - rad, p.h + rad, 20):
        d2 = tr.distance_to_translate(u, u1, r) ** 2
        assert d2 >= p.q ** 2 + 0.5 * n1 ** 2 * (r - p.h) ** 2 - 1e-6


@settings(max_examples=8)
@given(st.floats(-1.0, 1.0))
def test_shift_equivariance(scalar_conns, scalar_consts, s):
    u0 = scalar_conns.profiles[0]
    rng = np.random.default_rng(2)
    bump = np.exp(-((u0.nodes - 0.3) / 1.5) ** 2) * 0.02 * (1 + rng.standard_normal())
    u = u0.with_values(u0.values + bump[:, None])
    base = tr.project(u, scalar_conns, scalar_consts)
    moved = tr.project(tr.shift_profile(u, s), scalar_conns, scalar_consts)
    assert moved.h == pytest.approx(base.h + s, abs=1e-6)


def test_w12_shift_gap(two_conns, two_consts, planted):
    u1, _, u = planted
    p = tr.project(u, two_conns, two_consts)
    h1, dist = tr.w12_optimal_shift(u, u1, p.h, two_consts.uniqueness_radius)
    n1 = tr.branch_norms(u1)[0]
    assert abs(p.h - h1) <= SQ2 * math.sqrt(dist) / n1 + 1e-6


def test_derivative_formula_matches_finite_difference(two_conns, two_consts, planted):
    u1, _, u = planted
    p = tr.project(u, two_conns, two_consts)
    w = u.with_values(np.exp(-(u.nodes - 1.0) ** 2)[:, None] * np.array([1.0, 0.5]))
    t = 1e-5
    hp = tr.project(u.with_values(u.values + t * w.values), two_conns, two_consts).h
    hm = tr.project(u.with_values(u.values - t * w.values), two_conns, two_consts).h
    fd = (hp - hm) / (2 * t)
    assert tr.shift_derivative(u, p, two_conns, w) == pytest.approx(fd, rel=1e-4)


def test_newton_falls_back_to_scan(scalar_conns):
    # a zero uniqueness radius forces every Newton step out of bounds
    consts = tr.ManifoldConstants(math.inf, 0.1, 3.0, 0.0, 0.1)
    u = tr.shift_profile(scalar_conns.profiles[0], 0.2037)
    p = tr.project(u, scalar_conns, consts)
    assert not p.newton_ok and not p.well_posed
    assert abs(p.h - 0.2037) <= scalar_conns.grid.spacing
