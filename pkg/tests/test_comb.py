import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spopo import (
    ConfigError,
    build_coupling_matrix,
    build_mismatch,
    build_pump_spectrum,
    config_from_dict,
    load_config,
    make_config,
)


def loop_coupling(alpha, f, n):
    L = [[0.0] * (2 * n + 1) for _ in range(2 * n + 1)]
    for i, m in enumerate(range(-n, n + 1)):
        for j, q in enumerate(range(-n, n + 1)):
            if abs(m + q) <= n:
                L[i][j] = f[i][j] * alpha[m + q + n]
    return np.array(L)


class TestPump:
    def test_monochromatic(self):
        assert np.array_equal(build_pump_spectrum("monochromatic", 2).alpha, [0, 0, 1, 0, 0])

    def test_flat_limit(self):
        a = build_pump_spectrum("gaussian", 1, width=math.inf).alpha
        np.testing.assert_allclose(a, np.ones(3) / np.sqrt(3), atol=1e-15)

    def test_gaussian_frozen(self):
        # exp(-m^2/8), normalized, evaluated at 30 digits
        ref = [0.33422053208036294, 0.48628800476605522, 0.55103650034560894,
               0.48628800476605522, 0.33422053208036294]
        np.testing.assert_allclose(build_pump_spectrum("gaussian", 2, width=2.0).alpha, ref, rtol=1e-14)

    def test_gaussian_wide_comb(self):
        a = build_pump_spectrum("gaussian", 8, width=2.0).alpha
        assert abs(np.sum(a**2) - 1) <= 1e-12
        assert np.array_equal(a, a[::-1])

    def test_sech2_frozen(self):
        ref = [0.47775861130050597, 0.73722006121403405, 0.47775861130050597]
        np.testing.assert_allclose(build_pump_spectrum("sech2", 1, width=1.0).alpha, ref, rtol=1e-14)

    def test_explicit_normalized(self):
        a = build_pump_spectrum("explicit", 1, values=[1, 2, 2]).alpha
        np.testing.assert_allclose(a, [1 / 3, 2 / 3, 2 / 3], rtol=1e-15)

    @pytest.mark.parametrize("kw", [dict(kind="explicit", values=[1, 2]),
                                    dict(kind="explicit", values=[0, 0, 0]),
                                    dict(kind="gaussian"),
                                    dict(kind="gaussian", width=-1.0),
                                    dict(kind="bogus")])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            build_pump_spectrum(n_side=1, **kw)

    def test_complex_rejected(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("0.1,1+2j,0.3\n")
        with pytest.raises(ConfigError):
            build_pump_spectrum("explicit", 1, file=p)

    @given(st.sampled_from(["gaussian", "sech2"]), st.integers(0, 6), st.floats(0.2, 20))
    def test_norm_property(self, kind, n, w):
        a = build_pump_spectrum(kind, n, width=w).alpha
        assert abs(np.sum(a**2) - 1) <= 1e-12


class TestMismatch:
    def test_perfect(self):
        assert np.array_equal(build_mismatch("perfect", 1).values, np.ones((3, 3)))

    def test_quadratic_zero_is_perfect(self):
        assert np.array_equal(build_mismatch("quadratic", 2).values, np.ones((5, 5)))

    def test_sinc_zero(self):
        f = build_mismatch("quadratic", 1, u=np.pi).values
        assert abs(f[2, 1]) < 1e-15

    def test_quadratic_frozen(self):
        # sin(phi)/phi for phi = u(m+q) + v(m+q)^2 - w(m^2+q^2), 30-digit reference
        f = build_mismatch("quadratic", 1, u=0.3, v=0.1, w=0.2).values
        ref = {(1, 0): 0.99334665397530608, (-1, 1): 0.97354585577162623,
               (1, 1): 0.9410707889917256, (0, 0): 1.0, (-1, -1): 0.9410707889917256}
        for (m, q), val in ref.items():
            assert f[m + 1, q + 1] == pytest.approx(val, rel=1e-14)

    def test_explicit_validation(self):
        with pytest.raises(ConfigError):
            build_mismatch("explicit", 1, values=[[1, 0.5, 0], [0.4, 1, 0], [0, 0, 1]])
        with pytest.raises(ConfigError):
            build_mismatch("explicit", 0, values=[[1.5]])


class TestCoupling:
    def test_antidiagonal(self):
        L = build_coupling_matrix(make_config(n_side=1))
        assert np.array_equal(L, np.fliplr(np.eye(3)))

    def test_single_mode(self):
        assert np.array_equal(build_coupling_matrix(make_config(n_side=0)), [[1.0]])

    def test_loop_oracle(self):
        c = make_config(n_side=4, pump="gaussian", width=1.7, mismatch="quadratic", u=0.2, v=0.03, w=0.05)
        ref = loop_coupling(c.alpha.tolist(), c.f.tolist(), 4)
        np.testing.assert_array_equal(build_coupling_matrix(c), ref)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 5), st.floats(0.3, 5), st.floats(-1, 1), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2))
    def test_structure(self, n, width, u, v, w):
        c = make_config(n_side=n, pump="gaussian", width=width, mismatch="quadratic", u=u, v=v, w=w)
        L = c.coupling
        assert np.array_equal(L, L.T)
        m = np.arange(-n, n + 1)
        assert np.all(L[np.abs(m[:, None] + m[None, :]) > n] == 0)
        if u == 0:
            # even envelope and even mismatch: parity m, q -> -m, -q
            assert np.array_equal(L, L[::-1, ::-1])


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            make_config(gamma=0)
        with pytest.raises(ConfigError):
            make_config(kappa=-1)
        with pytest.raises(ConfigError):
            make_config(sigma=-0.1)

    def test_round_trip(self):
        c = make_config(n_side=3, pump="sech2", width=2.0, mismatch="quadratic", u=0.1, v=0.02, w=0.03)
        assert config_from_dict(json.loads(json.dumps(c.to_dict()))) == c

    def test_round_trip_explicit_and_inf(self):
        d = {"n_side": 1, "gamma": 1, "kappa": 0.5, "sigma": 2,
             "pump": {"kind": "gaussian", "width": "inf"},
             "mismatch": {"kind": "explicit", "values": [[1, 0.9, 0.8], [0.9, 1, 0.9], [0.8, 0.9, 1]]}}
        c = config_from_dict(d)
        assert config_from_dict(json.loads(json.dumps(c.to_dict()))) == c

    def test_files(self, tmp_path):
        (tmp_path / "pump.csv").write_text("1,2,1\n")
        (tmp_path / "f.csv").write_text("1,0.5,0.2\n0.5,1,0.5\n0.2,0.5,1\n")
        (tmp_path / "c.json").write_text(json.dumps({
            "n_side": 1, "gamma": 1.0, "kappa": 1.0, "sigma": 1.5,
            "pump": {"kind": "explicit", "file": "pump.csv"},
            "mismatch": {"kind": "explicit", "file": "f.csv"}}))
        c = load_config(tmp_path / "c.json")
        np.testing.assert_allclose(c.alpha, np.array([1, 2, 1]) / np.sqrt(6))
        assert c.f[0, 2] == 0.2

    def test_parse_errors(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"n_side": 1,\n "gamma": }')
        with pytest.raises(ConfigError, match=r"bad.json:2:"):
            load_config(p)
        p.write_text('{"n_side": 1, "gamma": 1, "kappa": 1, "sigma": 1, "colour": 3}')
        with pytest.raises(ConfigError, match="colour"):
            load_config(p)
        p.write_text('{"n_side": 1, "gamma": "fast", "kappa": 1, "sigma": 1}')
        with pytest.raises(ConfigError, match="gamma"):
            load_config(p)
