"""Spatial weight profile, weight admissibility, and the inequality probe."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chbcontrol.carleman import (
    _smoothstep,
    build_nu,
    carleman_ratio,
    eval_carleman_weights,
    make_carleman_weights,
    probe_carleman,
    s_floor,
    weight_derivative_constant,
)
from chbcontrol.dynamics import build_propagator
from chbcontrol.errors import ConfigurationError
from chbcontrol.mesh import Grid
from chbcontrol.steady import default_params


@pytest.fixture(scope="module")
def nu_default():
    return build_nu((0.3, 0.7), Grid(64))


@pytest.fixture(scope="module")
def prop_theta1(params_default):
    return build_propagator(params_default.grid, params_default, dt=1e-3, theta=1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.0, max_value=1.0))
def test_smoothstep_identities(u):
    S = _smoothstep(u)
    # closed form: the unique septic with S(0)=0, S(1)=1 and three
    # vanishing derivatives at both ends
    poly = 35 * u**4 - 84 * u**5 + 70 * u**6 - 20 * u**7
    assert S == pytest.approx(poly, abs=1e-12)
    assert 0.0 <= S <= 1.0 + 1e-12
    assert S + _smoothstep(1.0 - u) == pytest.approx(1.0, abs=1e-12)
    d = _smoothstep(u, order=1)
    assert d == pytest.approx(140 * u**3 * (1 - u) ** 3, abs=1e-10)
    assert d >= -1e-12


def test_smoothstep_end_derivatives_and_antiderivative():
    ends = np.array([0.0, 1.0])
    assert np.array_equal(_smoothstep(ends), ends)
    for order in (1, 2, 3):
        assert np.max(np.abs(_smoothstep(ends, order=order))) == 0.0
    # antiderivative of the septic at 1/2 is exactly dyadic:
    # 7/32 - 14/64 + 10/128 - 2.5/256
    assert _smoothstep(0.5, order=-1) == 0.068359375


def test_nu_symmetric_window_exact_constants():
    nu = build_nu((0.3, 0.7), Grid(64))
    assert nu.p == pytest.approx(0.4) and nu.q == pytest.approx(0.6)
    # balanced symmetric profile: both slopes equal 1/peak with
    # peak = 0.4 + 0.2*(1/2 - 2*A(1/2)) = 121/256
    assert nu.c_left == 256.0 / 121.0
    assert nu.c_right == 256.0 / 121.0
    assert nu.slope_floor == 256.0 / 121.0
    assert nu.x_peak == pytest.approx(0.5, abs=1e-12)
    assert nu.norm_inf == 1.0


def test_nu_profile_independent_reconstruction():
    # integrate the documented slope profile on a fine grid and check
    # the balancing (vanishing at both ends) and normalization (peak 1)
    nu = build_nu((0.25, 0.65), Grid(64))
    x = np.linspace(0.0, 1.0, 200001)
    slope = np.where(
        x <= nu.p,
        nu.c_left,
        np.where(
            x >= nu.q,
            -nu.c_right,
            nu.c_left
            - (nu.c_left + nu.c_right) * _smoothstep((x - nu.p) / (nu.q - nu.p)),
        ),
    )
    profile = np.concatenate(
        [[0.0], np.cumsum(0.5 * (slope[1:] + slope[:-1]) * np.diff(x))]
    )
    assert abs(profile[-1]) < 1e-9
    assert profile.max() == pytest.approx(1.0, abs=1e-9)
    assert x[np.argmax(profile)] == pytest.approx(nu.x_peak, abs=1e-4)
    direct = nu.derivative(x, 0)
    assert np.max(np.abs(profile - direct)) < 1e-9


def test_nu_plateau_slopes_and_smooth_join():
    nu = build_nu((0.25, 0.65), Grid(64))
    left = nu.derivative(np.array([0.05, nu.p - 1e-3]), 1)
    right = nu.derivative(np.array([nu.q + 1e-3, 0.95]), 1)
    assert np.array_equal(left, np.full(2, nu.c_left))
    assert np.array_equal(right, np.full(2, -nu.c_right))
    assert np.array_equal(nu.derivative(np.array([0.0, 1.0]), 0), np.zeros(2))
    # derivative gaps across the join shrink with the straddle width
    caps = {1: 1e-12, 2: 1e-8, 3: 1e-3, 4: 1e2}
    for order, cap in caps.items():
        lo = nu.derivative(np.array([nu.p - 1e-5]), order)[0]
        hi = nu.derivative(np.array([nu.p + 1e-5]), order)[0]
        assert abs(hi - lo) < cap


def test_build_nu_rejections():
    g = Grid(64)
    with pytest.raises(ConfigurationError, match="0 < a0 < b0 < 1"):
        build_nu((0.0, 0.7), g)
    with pytest.raises(ConfigurationError, match="0 < a0 < b0 < 1"):
        build_nu((0.6, 0.4), g)
    with pytest.raises(ConfigurationError, match="strictly inside"):
        build_nu((0.3, 0.7), g, control_interval=(0.4, 0.9))
    with pytest.raises(ConfigurationError, match="delta_fraction"):
        build_nu((0.3, 0.7), g, delta_fraction=0.5)


def test_strength_floor_closed_form(nu_default):
    assert s_floor(1.0, 1.0, 1.0, 4) == pytest.approx(np.e**4 + 2.0, rel=1e-15)
    assert s_floor(1.0, 1.0, 0.5, 4) == pytest.approx(
        np.e**2 / 16.0 + 2.0**-7 + 2.0**-8, rel=1e-15
    )
    w = make_carleman_weights(nu_default, T=1.0)
    assert w.s == s_floor(1.0, 1.0, 1.0, 4)
    assert w.s_min == w.s
    # an explicit strength above the floor is kept as given
    w2 = make_carleman_weights(nu_default, T=1.0, s=80.0)
    assert w2.s == 80.0


def test_weight_parameter_rejections(nu_default):
    with pytest.raises(ConfigurationError, match="integer > 3"):
        make_carleman_weights(nu_default, T=1.0, m=3)
    with pytest.raises(ConfigurationError, match="integer > m"):
        make_carleman_weights(nu_default, T=1.0, k=4)
    with pytest.raises(ConfigurationError, match="lambda"):
        make_carleman_weights(nu_default, T=1.0, lam=0.5)
    with pytest.raises(ConfigurationError, match="horizon"):
        make_carleman_weights(nu_default, T=0.0)
    with pytest.raises(ConfigurationError, match="floor"):
        make_carleman_weights(nu_default, T=1.0, s=1.0)


def test_weight_evaluation_domain_and_bounds(nu_default):
    w = make_carleman_weights(nu_default, T=1.0)
    for t in (-0.1, 0.0, 1.0, 1.5):
        with pytest.raises(ConfigurationError, match="open horizon"):
            eval_carleman_weights(w, t)
    ev = eval_carleman_weights(w, 0.5)
    # xi >= (2/ (t(T-t)))^{2m} * mu-floor-type bound: at t = T/2 the
    # time factor alone is 4^m / T^{2m}
    assert ev.xi.min() >= 4.0**4
    assert np.all(ev.phi > 0.0)
    logf = ev.log_factors[3]
    assert np.all(np.isfinite(logf)) and np.all(logf < 0.0)
    # the midpoint is the time-factor minimum
    for t in (0.2, 0.8):
        assert eval_carleman_weights(w, t).xi.min() >= ev.xi.min()


def test_ratio_scale_invariance_and_degenerate(prop_theta1):
    g = prop_theta1.grid
    nu = build_nu((0.3, 0.7), g)
    w = make_carleman_weights(nu, T=0.5)
    z = np.concatenate([np.sin(np.pi * g.x_interior), np.cos(np.pi * g.x)])
    r1 = carleman_ratio(prop_theta1, z, 500, w)
    r17 = carleman_ratio(prop_theta1, 17.0 * z, 500, w)
    assert not r1.degenerate
    assert np.isfinite(r1.log_ratio)
    assert abs(r17.log_ratio - r1.log_ratio) <= 1e-10
    r0 = carleman_ratio(prop_theta1, np.zeros(prop_theta1.dim), 500, w)
    assert r0.degenerate
    assert "vanish" in r0.diagnostic


def test_probe_summary_rows(prop_theta1):
    g = prop_theta1.grid
    nu = build_nu((0.3, 0.7), g)
    w = make_carleman_weights(nu, T=0.5)
    summary = probe_carleman(prop_theta1, w, 500, n_samples=3, seed=0)
    assert len(summary.rows) == 3
    assert all(np.isfinite(r.log_ratio) for r in summary.rows)
    assert summary.max_log_ratio == max(r.log_ratio for r in summary.rows)
    assert summary.max_ratio == max(r.ratio for r in summary.rows)
    assert summary.empirical_constant == summary.max_ratio
    # deterministic under the seed
    again = probe_carleman(prop_theta1, w, 500, n_samples=3, seed=0)
    assert [r.log_ratio for r in again.rows] == [r.log_ratio for r in summary.rows]


def test_weight_derivative_constant_matches_slope(nu_default):
    # |d/dx log phi| is bounded by s*lam*xi*|nu'|; the reported constant
    # normalizes that to ~2*max slope of the profile
    w = make_carleman_weights(nu_default, T=1.0)
    c = weight_derivative_constant(w)
    assert c == pytest.approx(2.0 * nu_default.c_left, rel=1e-4)
