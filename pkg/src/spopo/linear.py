"""Linearized fluctuations around the classical state and output noise spectra.

Fluctuations are ordered ``c = (b[+1], b[-1], b+[+1], b+[-1])``, each block
running over ``m = -N..N``.  The linear drift is ``L_full - gamma I`` and the
diffusion at the classical point is ``D_bar``.  For a quadrature
``Q = q^T c`` the output spectrum is

    V(w) = 1 + 2 gamma Re[q^T (i w - A)^-1 D_bar (-i w - A^T)^-1 q].

Above threshold the neutral Goldstone direction ``u0`` is projected out
before any resolvent is formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .steady import R_matrix, T_matrix


class IdentityCheckError(RuntimeError):
    """An eigenstructure identity failed; ``report`` lists every residual."""

    def __init__(self, msg, report):
        super().__init__(msg)
        self.report = report


class UnstableModelError(RuntimeError):
    def __init__(self, eigenvalue):
        super().__init__(f"linear drift is unstable: eigenvalue {eigenvalue:.6e} > 0")
        self.eigenvalue = eigenvalue


# tolerances of the eigenstructure identities, relative to gamma and the vector norms
IDENTITY_TOL = {
    "eigenrelation": 1e-10,
    "goldstone": 1e-9,
    "dark_full": 1e-9,
    "dark_vertical": 1e-9,
    "goldstone_diffusion": 1e-9,
    "symmetry": 1e-12,
    "jacobian": 1e-6,
}


@dataclass(frozen=True)
class NoiseSpectrum:
    omega_grid: np.ndarray
    values: np.ndarray
    quadrature_label: str = ""
    errors: np.ndarray | None = None


@dataclass(frozen=True)
class LinearModel:
    gamma: float
    rho: np.ndarray
    R: np.ndarray
    T: np.ndarray
    L_v: np.ndarray
    L_full: np.ndarray
    D_bar: np.ndarray
    u0: np.ndarray
    u1: np.ndarray
    w1: np.ndarray
    report: dict = field(default_factory=dict)

    @property
    def drift(self):
        return self.L_full - self.gamma * np.eye(len(self.L_full))

    @property
    def trivial(self):
        return not np.any(self.rho)


def assemble_blocks(R, T):
    Z = np.zeros_like(R)
    L_full = np.block([[T, T, Z, R], [T, T, R, Z], [Z, R, T, T], [R, Z, T, T]])
    D_bar = np.block([[Z, R, Z, Z], [R, Z, Z, Z], [Z, Z, Z, R], [Z, Z, R, Z]])
    return L_full, D_bar


def identity_report(model, config=None):
    """Named residuals of the eigenstructure identities (relative, see ``IDENTITY_TOL``)."""
    g = model.gamma
    rho, R, T = model.rho, model.R, model.T
    nrho2 = float(rho @ rho)
    rep = {
        "R_symmetry": float(np.max(np.abs(R - R.T)) / max(np.max(np.abs(R)), 1e-300)),
        "T_symmetry": float(np.max(np.abs(T - T.T)) / max(np.max(np.abs(T)), 1e-300)) if np.any(T) else 0.0,
    }
    if nrho2 == 0:
        return rep
    A = model.drift
    nr = np.sqrt(nrho2)
    rep["eigenrelation"] = float(np.linalg.norm(R @ rho - g * rho) / (g * nr))
    rep["goldstone"] = float(np.linalg.norm(A @ model.u0) / (g * np.linalg.norm(model.u0)))
    rep["dark_full"] = float(np.linalg.norm(A @ model.u1 + 2 * g * model.u1) / (g * np.linalg.norm(model.u1)))
    rep["dark_vertical"] = float(
        np.linalg.norm(model.L_v @ model.w1 + 2 * g * model.w1) / (g * np.linalg.norm(model.w1))
    )
    rep["goldstone_diffusion"] = float(abs(model.u0 @ model.D_bar @ model.u0 + 4 * g * nrho2) / (g * nrho2))
    if config is not None:
        rep["jacobian"] = float(np.max(np.abs(A - numerical_drift_jacobian(config, rho))))
    return rep


def numerical_drift_jacobian(config, rho, rel_step=1e-5):
    """Centered-difference Jacobian of the positive-P drift at the classical point."""
    from .positivep import drift

    rho = np.asarray(rho, dtype=float)
    x0 = np.concatenate([rho, rho, rho, rho]).astype(complex)
    h = rel_step * max(np.linalg.norm(rho), 1.0)
    n = len(x0)
    J = np.empty((n, n), dtype=complex)
    for k in range(n):
        e = np.zeros(n, dtype=complex)
        e[k] = h
        J[:, k] = (drift(x0 + e, config) - drift(x0 - e, config)) / (2 * h)
    if np.max(np.abs(J.imag)) > 1e-8 * max(np.max(np.abs(J.real)), 1.0):
        raise RuntimeError("numerical Jacobian at a real classical point is not real")
    return J.real


def build_linear_model(config, state, check=True):
    """Linearized matrices around ``state`` (gauge ``theta = 0``).

    Above threshold every identity in :func:`identity_report`, including
    agreement of the analytic drift with a numerical Jacobian, is checked;
    any failure raises :class:`IdentityCheckError` with the full report.
    """
    g = config.gamma
    rho = np.asarray(state.rho, dtype=float)
    M = config.n_modes
    if state.is_trivial:
        rho = np.zeros(M)
    R = R_matrix(config, rho)
    T = T_matrix(config, rho)
    I = np.eye(M)
    L_v = np.block([[-g * I, R], [R, -g * I]])
    L_full, D_bar = assemble_blocks(R, T)
    u0 = np.concatenate([rho, -rho, -rho, rho])
    u1 = np.concatenate([rho, -rho, rho, -rho])
    w1 = np.concatenate([rho, -rho])
    for a in (R, T, L_v, L_full, D_bar, u0, u1, w1, rho):
        a.setflags(write=False)
    model = LinearModel(g, rho, R, T, L_v, L_full, D_bar, u0, u1, w1)
    if not check:
        return model
    rep = identity_report(model, config if not state.is_trivial else None)
    failed = {}
    for key, val in rep.items():
        tol = IDENTITY_TOL["symmetry"] if key.endswith("_symmetry") else IDENTITY_TOL[key]
        if not val <= tol:
            failed[key] = val
    rep = {k: {"value": v, "tolerance": IDENTITY_TOL["symmetry"] if k.endswith("_symmetry") else IDENTITY_TOL[k],
               "ok": k not in failed} for k, v in rep.items()}
    object.__setattr__(model, "report", rep)
    if failed:
        raise IdentityCheckError(f"identity checks failed: {failed}", rep)
    return model


def analytic_dark_spectra(omega, gamma):
    """Closed-form output spectra of the dark-mode quadratures.

    Returns ``(V_Yd, V_Xd)`` with ``V_Yd = 1 - 1/(1 + (w/2gamma)^2)`` and
    ``V_Xd = 1``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    w = np.asarray(omega, dtype=float)
    return 1.0 - 1.0 / (1.0 + (w / (2 * gamma)) ** 2), np.ones_like(w)


def dark_quadrature_vectors(rho):
    """Coefficient vectors of ``(X_d, Y_d)`` in the fluctuation basis."""
    rho = np.asarray(rho, dtype=float)
    nr = np.linalg.norm(rho)
    if nr == 0:
        raise ValueError("dark mode is undefined for the trivial state")
    u0 = np.concatenate([rho, -rho, -rho, rho])
    u1 = np.concatenate([rho, -rho, rho, -rho])
    return 1j * u0 / (np.sqrt(2) * nr), u1 / (np.sqrt(2) * nr) + 0j


def supermode_quadratures(v):
    """``(X, Y)`` coefficient vectors of the TEM10 component of supermode ``v``."""
    v = np.asarray(v, dtype=float)
    qx = np.concatenate([v, v, v, v]) / np.sqrt(2)
    qy = 1j * np.concatenate([-v, -v, v, v]) / np.sqrt(2)
    return qx + 0j, qy


def _reduced(model, stability_tol=1e-9):
    A = model.drift
    D = model.D_bar
    if model.trivial:
        Q = np.eye(len(A))
    else:
        Q = null_space(model.u0[None, :])
    Ar = Q.T @ A @ Q
    Ar = 0.5 * (Ar + Ar.T)
    ev = np.linalg.eigvalsh(Ar)
    if ev[-1] > stability_tol * model.gamma:
        raise UnstableModelError(float(ev[-1]))
    return Q, Ar, Q.T @ D @ Q


def cross_spectrum(model, q1, q2, omega):
    """Stationary cross spectrum ``q1^T S_cc(w) q2`` with the Goldstone mode deflated."""
    Q, Ar, Dr = _reduced(model)
    a1 = Q.T @ np.asarray(q1, dtype=complex)
    a2 = Q.T @ np.asarray(q2, dtype=complex)
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    n = len(Ar)
    I = np.eye(n)
    b1 = np.broadcast_to(a1, (len(w), n))[..., None]
    b2 = np.broadcast_to(a2, (len(w), n))[..., None]
    # Ar is symmetric, so q1^T (i w - A)^-1 = [(i w - A)^-1 q1]^T
    x = np.linalg.solve(1j * w[:, None, None] * I - Ar, b1)[..., 0]
    y = np.linalg.solve(-1j * w[:, None, None] * I - Ar, b2)[..., 0]
    return np.einsum("wi,ij,wj->w", x, Dr, y)


def numeric_spectrum(model, quadrature_vector, omega, label=""):
    """Output noise spectrum of the quadrature ``q^T c`` from the linear model.

    Raises :class:`UnstableModelError` if the deflated drift has an
    eigenvalue with positive real part.
    """
    w = np.asarray(omega, dtype=float)
    S = cross_spectrum(model, quadrature_vector, quadrature_vector, w)
    V = 1.0 + 2.0 * model.gamma * S.real
    return NoiseSpectrum(w, V.reshape(w.shape), label)
