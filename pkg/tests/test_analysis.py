import numpy as np
import pytest

from conftest import ou_ensemble
from spopo import (
    RunParams,
    analytic_dark_spectra,
    dark_quadratures,
    estimate_theta,
    homodyne_spectrum,
    make_config,
    phase_variance,
    run_ensemble,
    solve_steady_state,
)
from spopo.analysis import NonStationaryError, PhaseEstimationError, equal_time_correlator, unwrap_theta


def manifold(rho, theta):
    rho = np.asarray(rho, dtype=float)
    e = np.exp(-1j * theta)
    return np.concatenate([rho * e, rho / e]), np.concatenate([rho / e, rho * e])


@pytest.fixture(scope="module")
def linear_run():
    # |rho|^2 = 100: deep in the regime where the linearized theory applies
    c = make_config(sigma=2.0, kappa=0.01)
    s = solve_steady_state(c)
    return run_ensemble(c, RunParams(n_traj=2000, t_max=6.0, dt=2e-3, save_stride=5, seed=3), s)


def rotate(run_like, th0):
    M = run_like["s"].shape[2] // 2
    e = np.exp(-1j * th0)
    s, sp = run_like["s"].copy(), run_like["s_plus"].copy()
    s[..., :M] *= e
    s[..., M:] /= e
    sp[..., :M] /= e
    sp[..., M:] *= e
    return dict(run_like, s=s, s_plus=sp)


class TestEstimateTheta:
    @pytest.mark.parametrize("theta", [np.pi / 3, 0.0, -2.9, 3.0])
    def test_exact_on_manifold(self, theta):
        rho = np.array([0.2, 0.5, 0.9])
        s, sp = manifold(rho, theta)
        assert estimate_theta(s, rho)[0] == pytest.approx(theta, abs=1e-14)
        assert estimate_theta(s, rho, sp)[0] == pytest.approx(theta, abs=1e-14)

    def test_wrap_range(self):
        rho = np.array([1.0])
        th, _ = estimate_theta(manifold(rho, np.pi)[0], rho)
        assert -np.pi < th <= np.pi

    def test_bias_oracle(self):
        rng = np.random.default_rng(0)
        rho = np.array([0.3, 0.7, 1.1, 0.7, 0.3])
        nr = np.linalg.norm(rho)
        th = rng.uniform(-np.pi, np.pi, 1000)
        err = []
        for t in th:
            s, sp = manifold(rho, t)
            s = s + 0.01 * nr * (rng.standard_normal(10) + 1j * rng.standard_normal(10)) / np.sqrt(2)
            err.append(np.angle(np.exp(1j * (estimate_theta(s, rho)[0] - t))))
        assert np.max(np.abs(err)) <= 0.05

    def test_undefined(self):
        _, flag = estimate_theta(np.zeros(2, complex), np.array([1.0]))
        assert flag
        with pytest.raises(ValueError):
            estimate_theta(np.ones(2), np.array([0.0]))


class TestPhaseVariance:
    def test_negative_control(self):
        ens = {"t_grid": np.arange(50) * 0.01, "s": np.zeros((50, 200, 2), complex),
               "s_plus": np.zeros((50, 200, 2), complex), "alive": np.ones(200, bool)}
        with pytest.raises(PhaseEstimationError, match="flagged"):
            phase_variance(ens, rho=[1.0], gamma=1.0)

    def test_too_few(self):
        s, sp = manifold([1.0], 0.0)
        ens = {"t_grid": np.arange(5) * 0.01, "s": np.broadcast_to(s, (5, 50, 2)),
               "s_plus": np.broadcast_to(sp, (5, 50, 2)), "alive": np.ones(50, bool)}
        with pytest.raises(PhaseEstimationError, match="100"):
            phase_variance(ens, rho=[1.0], gamma=1.0)

    def test_coarse_stride(self):
        s, sp = manifold([1.0], 0.0)
        ens = {"t_grid": np.arange(5) * 2.0, "s": np.broadcast_to(s, (5, 200, 2)),
               "s_plus": np.broadcast_to(sp, (5, 200, 2)), "alive": np.ones(200, bool)}
        with pytest.raises(ValueError, match="stride"):
            phase_variance(ens, rho=[1.0], gamma=1.0)

    def test_unwrap_jumps_flagged(self):
        rng = np.random.default_rng(1)
        th = rng.uniform(-np.pi, np.pi, (40, 200))
        e = np.exp(-1j * th)[..., None]
        s = np.concatenate([e, 1 / e], axis=-1)
        ens = {"t_grid": np.arange(40) * 1e-3, "s": s, "s_plus": np.conj(s), "alive": np.ones(200, bool)}
        with pytest.raises(PhaseEstimationError, match="stride"):
            phase_variance(ens, rho=[1.0], gamma=1.0)

    def test_unwrap_continuous(self):
        t = np.linspace(0, 1, 400)
        th = 12 * t  # winds almost twice around
        e = np.exp(-1j * th)[:, None, None]
        s = np.concatenate([e, 1 / e], axis=-1)
        out, flags = unwrap_theta(s, np.conj(s), [1.0])
        np.testing.assert_allclose(out[:, 0] - out[0, 0], th, atol=1e-12)
        assert not flags.any()

    def test_linear_regime_slope(self, linear_run):
        ph = phase_variance(linear_run)
        pred = 1.0 / (4 * 100.0)
        assert abs(ph.fitted_slope - pred) <= 0.1 * pred
        assert abs(ph.fitted_slope - pred) <= 3 * ph.slope_stderr
        assert ph.flag_rate == 0.0 and ph.discard_fraction == 0.0

    def test_gauge_covariance(self, linear_run):
        d = {"t_grid": linear_run.t_grid, "s": linear_run.s[:, :300], "s_plus": linear_run.s_plus[:, :300],
             "alive": linear_run.alive[:300]}
        rho = linear_run.rho
        th0 = 0.83
        r = rotate(d, th0)
        a, _ = estimate_theta(d["s"], rho, d["s_plus"])
        b, _ = estimate_theta(r["s"], rho, r["s_plus"])
        assert np.max(np.abs(np.angle(np.exp(1j * (b - a - th0))))) <= 1e-12
        qa, qb = dark_quadratures(d, rho), dark_quadratures(r, rho)
        assert np.max(np.abs(qa.X - qb.X)) <= 1e-12 and np.max(np.abs(qa.Y - qb.Y)) <= 1e-12
        pa = phase_variance(d, rho, 1.0)
        pb = phase_variance(r, rho, 1.0)
        assert abs(pa.fitted_slope - pb.fitted_slope) <= 1e-12
        w = [0.0, 1.0, 2.0]
        sa = homodyne_spectrum(qa, 1.0, w)
        sb = homodyne_spectrum(qb, 1.0, w)
        assert np.max(np.abs(sa.values - sb.values)) <= 1e-12


class TestDarkQuadratures:
    def test_zero_on_manifold(self):
        rho = np.array([0.4, 1.0, 0.4])
        s, sp = manifold(rho, 1.1)
        ens = {"t_grid": np.array([0.0]), "s": s[None, None], "s_plus": sp[None, None], "alive": np.ones(1, bool)}
        q = dark_quadratures(ens, rho)
        assert abs(q.X[0, 0]) < 1e-15 and abs(q.Y[0, 0]) < 1e-15

    def test_requires_rho(self):
        ens = {"t_grid": np.array([0.0]), "s": np.zeros((1, 1, 2)), "s_plus": np.zeros((1, 1, 2)),
               "alive": np.ones(1, bool)}
        with pytest.raises(ValueError):
            dark_quadratures(ens, np.zeros(1))

    def test_stationary_moments(self, linear_run):
        q = dark_quadratures(linear_run)
        late = q.t_grid >= 2.0
        for Q in (q.X, q.Y):
            per_traj = Q[late].mean(axis=0)
            for part in (per_traj.real, per_traj.imag):
                assert abs(part.mean()) <= 3 * part.std(ddof=1) / np.sqrt(len(part))
        yy = equal_time_correlator(q.Y, q.t_grid, 2.0)
        assert yy.real == pytest.approx(-0.5, rel=0.1)

    def test_spectra_linear_regime(self, linear_run):
        q = dark_quadratures(linear_run)
        w = np.linspace(0, 5, 11)
        vy_ref, vx_ref = analytic_dark_spectra(w, 1.0)
        sy = homodyne_spectrum(q, 1.0, w, "Y_d")
        sx = homodyne_spectrum(q, 1.0, w, "X_d")
        assert np.all(np.abs(sy.values - vy_ref) <= 3 * sy.errors)
        assert np.all(np.abs(sx.values - vx_ref) <= 0.01)


class TestHomodyne:
    def test_ou_consistency(self):
        rng = np.random.default_rng(12)
        dt, g = 0.01, 1.0
        Y = ou_ensemble(rng, g, 1000, 601, dt)
        t = np.arange(601) * dt
        w = np.linspace(0, 6, 13)
        sp = homodyne_spectrum((t, Y), g, w, t_transient=0.0)
        ref = analytic_dark_spectra(w, g)[0]
        assert np.all(np.abs(sp.values - ref) <= 3 * sp.errors)
        assert sp.values[0] <= 0.1

    def test_variance_halves(self):
        dt, g = 0.01, 1.0
        t = np.arange(401) * dt
        w = np.linspace(0, 4, 9)
        ratios = []
        for seed in range(4):
            rng = np.random.default_rng(100 + seed)
            Y = ou_ensemble(rng, g, 1600, 401, dt)
            e1 = homodyne_spectrum((t, Y[:, :800]), g, w, t_transient=0.0, n_groups=40).errors
            e2 = homodyne_spectrum((t, Y), g, w, t_transient=0.0, n_groups=40).errors
            ratios.append(np.mean(e1**2) / np.mean(e2**2))
        assert 2 / 1.3 <= np.mean(ratios) <= 2 * 1.3

    def test_nonstationary_detected(self):
        rng = np.random.default_rng(4)
        t = np.arange(401) * 0.01
        Y = ou_ensemble(rng, 1.0, 500, 401, 0.01) + 0.5 * np.exp(-t)[:, None]
        with pytest.raises(NonStationaryError, match="transient"):
            homodyne_spectrum((t, Y), 1.0, [0.0], t_transient=0.0)

    def test_short_record_rejected(self):
        t = np.arange(11) * 0.01
        with pytest.raises(NonStationaryError):
            homodyne_spectrum((t, np.zeros((11, 10))), 1.0, [0.0], t_transient=0.0)

    def test_tapers(self):
        rng = np.random.default_rng(5)
        t = np.arange(601) * 0.01
        Y = ou_ensemble(rng, 1.0, 400, 601, 0.01)
        vals = {k: homodyne_spectrum((t, Y), 1.0, [0.0], t_transient=0.0, taper=k).values[0]
                for k in ("boxcar", "tukey", "hann")}
        # the Hann lag window smooths the zero-frequency dip upward
        assert vals["hann"] > vals["tukey"] + 0.05
        with pytest.raises(ValueError):
            homodyne_spectrum((t, Y), 1.0, [0.0], t_transient=0.0, taper="kaiser")
