import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from spopo import decompose, make_config, reconstruct_field, solve_steady_state, verify_eigenrelation
from spopo.steady import (
    SteadyState,
    SteadyStateError,
    T_matrix,
    classical_drift,
    classical_jacobian,
    phase_locking_check,
    trivial_state,
)


def gaussian_n2(ratio):
    c = make_config(n_side=2, pump="gaussian", width=1.0, sigma=1.0)
    b = decompose(c.coupling)
    return c.replace(sigma=ratio * b.threshold_sigma), b


def test_single_mode_value():
    s = solve_steady_state(make_config(sigma=2.0))
    assert s.rho[0] == pytest.approx(1.0, rel=1e-12)
    assert verify_eigenrelation(s, make_config(sigma=2.0)) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(1.05, 8))
def test_single_mode_closed_form(g, k, sig):
    c = make_config(gamma=g, kappa=k, sigma=sig)
    s = solve_steady_state(c)
    assert s.norm_sq == pytest.approx(g * (sig - 1) / k, rel=1e-10)


def test_below_threshold_trivial():
    c, b = gaussian_n2(0.5)
    s = solve_steady_state(c, b)
    assert s.is_trivial and not np.any(s.rho)
    s = solve_steady_state(c, b, detect="dynamic")
    assert s.is_trivial


def test_gaussian_n2_against_ode():
    c, b = gaussian_n2(1.5)
    s = solve_steady_state(c, b)
    assert s.residual <= 1e-12
    assert s.regime == "above_threshold" and s.converged and s.stable
    # independent oracle: long plain ODE integration of the classical equations
    sol = solve_ivp(lambda t, y: classical_drift(c, y), (0, 400), 1e-3 * b.leading, rtol=1e-11, atol=1e-14)
    np.testing.assert_allclose(s.rho, sol.y[:, -1], rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(s.relaxation_rho, s.rho, rtol=1e-6)


def test_perturbed_residual():
    c = make_config(sigma=2.0)
    s = solve_steady_state(c)
    bad = SteadyState(s.rho + 0.01, 0.0, "above_threshold", 1.0)
    assert verify_eigenrelation(bad, c) > 1e-3


def test_trivial_eigenrelation_raises():
    with pytest.raises(ValueError):
        verify_eigenrelation(trivial_state(make_config()), make_config())


def test_kappa_zero_above_threshold():
    with pytest.raises(SteadyStateError):
        solve_steady_state(make_config(kappa=0.0, sigma=2.0))


def test_sign_gauge_and_mirror():
    c, b = gaussian_n2(2.0)
    s = solve_steady_state(c, b)
    assert s.rho @ b.leading > 0
    assert np.linalg.norm(classical_drift(c, -s.rho)) <= 1e-12 * np.linalg.norm(s.rho)
    s2 = solve_steady_state(c, b, seed_vector=-b.leading)
    np.testing.assert_allclose(s.rho, s2.rho, rtol=1e-12)


def test_supercritical_onset():
    c, b = gaussian_n2(1.001)
    s = solve_steady_state(c, b)
    assert 0 < s.norm_sq < 1e-2
    assert s.overlap_v0 >= 0.999


def test_kappa_scaling():
    c, b = gaussian_n2(2.0)
    a = solve_steady_state(c, b)
    d = solve_steady_state(c.replace(kappa=2 * c.kappa), b)
    assert d.norm_sq == pytest.approx(a.norm_sq / 2, rel=1e-8)


def test_T_matches_numeric_derivative():
    c, b = gaussian_n2(2.5)
    s = solve_steady_state(c, b)
    J = np.empty((5, 5))
    h = 1e-6
    for k in range(5):
        e = np.zeros(5)
        e[k] = h
        J[:, k] = (classical_drift(c, s.rho + e) - classical_drift(c, s.rho - e)) / (2 * h)
    np.testing.assert_allclose(classical_jacobian(c, s.rho), J, atol=1e-7)
    T = T_matrix(c, s.rho)
    assert np.max(np.abs(T - T.T)) <= 1e-12 * np.max(np.abs(T))


def test_phase_locking_gaussian():
    c, b = gaussian_n2(1.5)
    s = solve_steady_state(c, b)
    assert phase_locking_check(c, s.rho) < 1e-6


def test_phase_locking_single_mode_with_spectral_gauge():
    c = make_config(sigma=3.0)
    assert phase_locking_check(c, solve_steady_state(c).rho) < 1e-12


def test_phase_locking_violation_warns():
    # degenerate monochromatic comb: random phases settle on a complex state
    c = make_config(n_side=1, sigma=2.0)
    with pytest.warns(RuntimeWarning, match="phase locked"):
        s = solve_steady_state(c, check_phase_locking=True)
    assert s.phase_locking_violation > 1e-6


class TestField:
    def test_nodal_line(self):
        c = make_config(n_side=1, sigma=2.0)
        s = solve_steady_state(c)
        th = 0.4
        grid = {"phi": [th + np.pi / 2, th - np.pi / 2], "r": [0.3, 1.0], "z": [0.0, 1.3], "t": [0.0, 0.7]}
        F = reconstruct_field(s, grid, "fabry_perot", theta=th)
        assert np.max(np.abs(F.values)) < 1e-14

    def test_trivial(self):
        c = make_config(sigma=0.5)
        F = reconstruct_field(trivial_state(c), {"phi": [0.0], "r": [1.0], "z": [0.0, 1.0], "t": [0.0, 1.0]})
        assert np.all(F.values == 0)

    def test_single_traveling_wave(self):
        c = make_config(sigma=2.0)
        s = solve_steady_state(c)
        z = np.linspace(0, 3, 7)
        t = np.linspace(0, 2, 5)
        F = reconstruct_field(s, {"phi": [0.0], "r": [1 / np.sqrt(2)], "z": z, "t": t}, "ring")
        sc = F.scales
        H = math.sqrt(8 / math.pi) / sc.waist**2 * (1 / np.sqrt(2)) * np.exp(-0.5)
        ref = H * s.rho[0] * np.sin(sc.k0 * z[:, None] - sc.omega0 * t[None, :])
        np.testing.assert_allclose(F.values[0, 0], ref, atol=1e-13)

    def test_empty_axis(self):
        with pytest.raises(ValueError):
            reconstruct_field(trivial_state(make_config()), {"phi": [], "r": [1.0], "z": [0.0], "t": [0.0]})
