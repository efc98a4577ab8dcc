import numpy as np
import pytest

from spopo import make_config


def random_state(rng, M, scale=1.0):
    return scale * (rng.standard_normal(4 * M) + 1j * rng.standard_normal(4 * M))


def random_config(rng, n):
    return make_config(n_side=n, gamma=rng.uniform(0.5, 2), kappa=rng.uniform(0, 2), sigma=rng.uniform(0, 4),
                       pump="gaussian", width=rng.uniform(0.5, 3), mismatch="quadratic",
                       u=rng.uniform(-1, 1), v=rng.uniform(-0.1, 0.1), w=rng.uniform(-0.1, 0.1))


def above_threshold_matrix():
    """Configs used by the analytic acceptance checks: N, sigma/sigma_th, mismatch."""
    from spopo import decompose

    out = []
    for n in (0, 2, 4):
        for ratio in (1.2, 2.0, 5.0):
            for mis in ("perfect", "quadratic"):
                pump = "monochromatic" if n == 0 else "gaussian"
                kw = dict(u=0.3, v=0.05, w=0.1) if mis == "quadratic" else {}
                base = make_config(n_side=n, gamma=1.0, kappa=0.5, sigma=1.0, pump=pump,
                                   width=None if n == 0 else 3.0, mismatch=mis, **kw)
                thr = decompose(base.coupling).threshold_sigma
                out.append(pytest.param(base.replace(sigma=ratio * thr), id=f"N{n}-x{ratio}-{mis}"))
    return out


def ou_ensemble(rng, gamma, n_traj, n_t, dt, var=-0.5):
    """Exact discretization of dY = -2 gamma Y dt + b dW with b^2 = 4 gamma var (stationary start).

    ``var < 0`` gives the imaginary-noise process whose normally ordered spectrum
    is the Lorentzian dip ``1 - 1/(1 + (w/2 gamma)^2)``.
    """
    k = 2 * gamma
    a = np.exp(-k * dt)
    sd = np.sqrt(complex(var) * (1 - a * a))
    Y = np.empty((n_t, n_traj), dtype=complex)
    Y[0] = np.sqrt(complex(var)) * rng.standard_normal(n_traj)
    for i in range(1, n_t):
        Y[i] = a * Y[i - 1] + sd * rng.standard_normal(n_traj)
    return Y


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE = {}


def record(criterion, ok, detail):
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
