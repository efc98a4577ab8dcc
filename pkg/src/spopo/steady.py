"""Classical steady state above threshold and the bright-mode field.

The classical amplitudes are ``s[m, +1] = rho[m] exp(-i theta)`` and
``s[m, -1] = rho[m] exp(+i theta)`` with real ``rho``.  The deterministic
solver works in the gauge ``theta = 0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares

from .supermodes import decompose


class SteadyStateError(RuntimeError):
    """Classical solver failure; ``residual`` holds the last residual reached."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


# ---------------------------------------------------------------------------
# shared building blocks (batched over leading axes)


def pair_sums(config, s_up, s_down):
    """``P[j] = sum_{n+p=j} f[n,p] s_up[n] s_down[p]`` on pump lines ``-2N..2N``."""
    s_up = np.asarray(s_up)
    s_down = np.asarray(s_down)
    Q = config.f * s_up[..., :, None] * s_down[..., None, :]
    M = config.n_modes
    return Q.reshape(Q.shape[:-2] + (M * M,)) @ config.pair_projector


def effective_matrix(config, P):
    """``R[m,q] = f[m,q] (gamma sigma alpha[m+q] - kappa P[m+q])``.

    This is the linear coupling to the conjugate amplitudes (pump gain minus
    pump depletion) and also the diffusion coefficient of each down-conversion
    channel.
    """
    E = config.gamma * config.sigma * config.alpha_ext - config.kappa * P
    return config.f * E[..., config.pump_index]


def R_matrix(config, rho):
    rho = np.asarray(rho, dtype=float)
    return effective_matrix(config, pair_sums(config, rho, rho))


def T_matrix(config, rho):
    """Derivative of the cubic drift term with respect to same-OAM amplitudes.

    ``T[m,n] = -kappa sum_q f[m,q] f[n,m+q-n] rho[q] rho[m+q-n]``.
    """
    rho = np.asarray(rho, dtype=float)
    return -config.kappa * np.einsum("mqnp,q,p->mn", config.channel_tensor, rho, rho)


def classical_drift(config, rho):
    """Real classical drift ``-gamma rho + R(rho) rho``."""
    rho = np.asarray(rho, dtype=float)
    return -config.gamma * rho + R_matrix(config, rho) @ rho


def classical_jacobian(config, rho):
    return R_matrix(config, rho) + 2.0 * T_matrix(config, rho) - config.gamma * np.eye(len(rho))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SteadyState:
    rho: np.ndarray
    residual: float
    regime: str
    norm_sq: float
    overlap_v0: float = math.nan
    stable: bool = True
    converged: bool = True
    relaxation_rho: np.ndarray | None = None
    phase_locking_violation: float | None = None
    notes: tuple = field(default_factory=tuple)

    @property
    def is_trivial(self):
        return self.regime == "trivial"

    def summary(self):
        return {
            "regime": self.regime,
            "norm_sq": self.norm_sq,
            "residual": self.residual,
            "overlap_v0": self.overlap_v0,
            "stable": self.stable,
            "converged": self.converged,
            "phase_locking_violation": self.phase_locking_violation,
            "notes": list(self.notes),
        }


def trivial_state(config):
    rho = np.zeros(config.n_modes)
    rho.setflags(write=False)
    return SteadyState(rho, 0.0, "trivial", 0.0)


def _residual(config, rho):
    nrm = np.linalg.norm(rho)
    if nrm == 0:
        return math.nan
    return float(np.linalg.norm(classical_drift(config, rho)) / (config.gamma * nrm))


def _relax(config, seed, tol, max_time, decay_ratio):
    """Integrate the real classical drift from ``seed``.

    Stops when ``|drho/dt| < tol gamma |rho|`` (converged) or when the norm
    has decayed by ``decay_ratio`` (trivial).  Returns ``(rho, outcome)``.
    """
    g = config.gamma
    seed_norm = np.linalg.norm(seed)

    def rhs(t, y):
        return classical_drift(config, y)

    def ev_conv(t, y):
        return np.linalg.norm(rhs(t, y)) - tol * g * np.linalg.norm(y)

    ev_conv.terminal = True
    ev_conv.direction = -1

    def ev_decay(t, y):
        return np.linalg.norm(y) - decay_ratio * seed_norm

    ev_decay.terminal = True
    ev_decay.direction = -1

    sol = solve_ivp(
        rhs, (0.0, max_time), seed, method="DOP853", events=(ev_conv, ev_decay),
        rtol=1e-12, atol=1e-10 * seed_norm,
    )
    y = sol.y[:, -1]
    if sol.t_events[1].size:
        return y, "decayed"
    if sol.t_events[0].size:
        return y, "converged"
    if not sol.success:
        return y, f"integrator failure: {sol.message}"
    return y, "timeout"


def _newton(config, rho, tol=1e-12, max_iter=50):
    best = rho.copy()
    best_res = _residual(config, rho)
    for _ in range(max_iter):
        if best_res <= tol:
            break
        J = classical_jacobian(config, rho)
        try:
            step = np.linalg.solve(J, classical_drift(config, rho))
        except np.linalg.LinAlgError:
            break
        rho = rho - step
        res = _residual(config, rho)
        if not np.isfinite(res):
            break
        if res < best_res:
            best, best_res = rho.copy(), res
        elif res > 10 * best_res and best_res < 1e-6:
            break
    return best, best_res


def _linear_stability(config, rho, tol=1e-9):
    R = R_matrix(config, rho)
    T = T_matrix(config, rho)
    Z = np.zeros_like(R)
    L = np.block([[T, T, Z, R], [T, T, R, Z], [Z, R, T, T], [R, Z, T, T]])
    A = L - config.gamma * np.eye(len(L))
    # drop the neutral Goldstone direction u0 = (rho, -rho, -rho, rho) before testing
    u0 = np.concatenate([rho, -rho, -rho, rho])
    u0 = u0 / np.linalg.norm(u0)
    P = np.eye(len(L)) - np.outer(u0, u0)
    ev = np.linalg.eigvalsh(P @ A @ P)
    return bool(ev[-1] <= tol * config.gamma)


def _complex_drift(config, s_up, s_down):
    P = pair_sums(config, s_up, s_down)
    R = effective_matrix(config, P)
    g = config.gamma
    return -g * s_up + R @ np.conj(s_down), -g * s_down + R @ np.conj(s_up)


def phase_locking_check(config, rho, seed=12345, max_time=None, tol=1e-8):
    """Integrate the complex classical equations from a randomly phased seed.

    Returns the largest imaginary part, relative to ``|rho|``, left in the
    final state once the orientation phase has been rotated away (0 for a
    phase-locked, all-real solution).
    """
    M = config.n_modes
    rng = np.random.default_rng(seed)
    scale = np.linalg.norm(rho)
    amp = 1e-3 * scale * (1.0 + rng.random(M))
    up = amp * np.exp(2j * np.pi * rng.random(M))
    down = amp * np.exp(2j * np.pi * rng.random(M))
    if max_time is None:
        max_time = 1e5 / config.gamma

    def rhs(t, y):
        a, b = y[:M] + 1j * y[M : 2 * M], y[2 * M : 3 * M] + 1j * y[3 * M :]
        da, db = _complex_drift(config, a, b)
        return np.concatenate([da.real, da.imag, db.real, db.imag])

    def ev(t, y):
        return np.linalg.norm(rhs(t, y)) - tol * config.gamma * np.linalg.norm(y)

    ev.terminal = True
    ev.direction = -1
    y0 = np.concatenate([up.real, up.imag, down.real, down.imag])
    sol = solve_ivp(rhs, (0, max_time), y0, method="DOP853", events=ev, rtol=1e-10, atol=1e-12 * scale)
    y = sol.y[:, -1]
    a, b = y[:M] + 1j * y[M : 2 * M], y[2 * M : 3 * M] + 1j * y[3 * M :]
    nrm = np.linalg.norm(a) + 1e-300
    m = np.arange(M) - (M - 1) // 2
    # exact symmetries to remove: OAM rotation a, b -> a e^{i th}, b e^{-i th}; with a single
    # pump line also the spectral phase s_m -> s_m e^{-i m phi}
    spectral = bool(np.count_nonzero(config.alpha_ext) == 1 and config.alpha_ext[2 * ((M - 1) // 2)] != 0)

    def rotated(p):
        th, ph = p[0], (p[1] if spectral else 0.0)
        e = np.exp(-1j * m * ph)
        return a * np.exp(1j * th) * e, b * np.exp(-1j * th) * e

    def imag_parts(p):
        ar, br = rotated(p)
        return np.concatenate([ar.imag, br.imag]) / nrm

    th0 = 0.5 * np.angle(np.vdot(a, b)) if np.vdot(a, b) != 0 else 0.0
    best = None
    for start in (th0, th0 + np.pi / 2):
        fit = least_squares(imag_parts, [start, 0.0] if spectral else [start])
        if best is None or fit.cost < best.cost:
            best = fit
    ar, br = rotated(best.x)
    return float(max(np.max(np.abs(ar.imag)), np.max(np.abs(br.imag)), np.max(np.abs(ar - br))) / nrm)


def solve_steady_state(config, basis=None, seed_index=0, seed_vector=None,
                       detect="threshold", max_time=None, check_phase_locking=False):
    """Classical steady state in the gauge ``theta = 0``.

    Stage one relaxes ``drho/dt = -gamma rho + R(rho) rho`` from a small seed
    ``1e-3 sqrt(gamma/kappa) v`` until ``|drho/dt| < 1e-8 gamma |rho|``; stage
    two polishes with Newton on ``R(rho) rho - gamma rho``.  The returned
    amplitudes satisfy ``sum(rho * v0) > 0``.

    Parameters
    ----------
    config : CombConfig
    basis : SupermodeBasis, optional
        Decomposition of ``config.coupling``; computed when omitted.
    seed_index : int
        Supermode used as the relaxation seed (0 = leading).  Seeding along
        another eigenvector explores other branches; only the branch
        connected to the leading supermode is guaranteed.
    seed_vector : array, optional
        Overrides the supermode seed direction.
    detect : {"threshold", "dynamic"}
        ``"threshold"`` returns the trivial state whenever
        ``sigma <= 1/Lambda_0``.  ``"dynamic"`` never consults the eigenvalue
        and lets the relaxation decide (decay to zero means trivial).
    check_phase_locking : bool
        Also integrate the complex equations from a random phase and warn if
        the result is not phase locked to 1e-6.
    """
    if basis is None:
        basis = decompose(config.coupling)
    g, k = config.gamma, config.kappa
    v0 = basis.leading
    if detect == "threshold":
        if config.sigma <= basis.threshold_sigma or config.sigma == 0:
            return trivial_state(config)
    elif detect != "dynamic":
        raise ValueError(f"detect must be 'threshold' or 'dynamic', got {detect!r}")
    if k == 0:
        raise SteadyStateError("kappa = 0: no saturation above threshold, the field grows without bound")

    if seed_vector is None:
        direction = basis.eigenvectors[:, seed_index]
    else:
        direction = np.asarray(seed_vector, dtype=float)
        direction = direction / np.linalg.norm(direction)
    seed = 1e-3 * math.sqrt(g / k) * direction
    if max_time is None:
        max_time = 1e8 / g

    relaxed, outcome = _relax(config, seed, 1e-8, max_time, decay_ratio=1e-6)
    if outcome == "decayed":
        return trivial_state(config)
    notes = []
    if outcome != "converged":
        res = _residual(config, relaxed)
        raise SteadyStateError(f"relaxation did not converge ({outcome}); last residual {res:.3e}", res)

    rho, res = _newton(config, relaxed.copy())
    converged = res <= 1e-10
    if not converged:
        notes.append(f"newton failed to polish (residual {res:.3e}); returning relaxation result")
        rho, res = relaxed, _residual(config, relaxed)
    sgn = np.sign(rho @ v0)
    if sgn < 0:
        rho = -rho
        relaxed = -relaxed
    rho = np.array(rho)
    rho.setflags(write=False)
    relaxed.setflags(write=False)
    norm_sq = float(rho @ rho)
    overlap = float(abs(rho @ v0) / math.sqrt(norm_sq))

    violation = None
    if check_phase_locking:
        violation = phase_locking_check(config, rho)
        if violation > 1e-6:
            warnings.warn(
                f"complex classical dynamics from a random phase is not phase locked "
                f"(relative imaginary part {violation:.2e}); the real-amplitude solution may not be the attractor",
                RuntimeWarning,
                stacklevel=2,
            )
    return SteadyState(
        rho, float(res), "above_threshold", norm_sq, overlap,
        stable=_linear_stability(config, rho), converged=converged,
        relaxation_rho=relaxed, phase_locking_violation=violation, notes=tuple(notes),
    )


def verify_eigenrelation(state, config):
    """Relative residual ``|R rho - gamma rho| / (gamma |rho|)``."""
    if state.is_trivial or state.norm_sq == 0:
        raise ValueError("eigenrelation is undefined for the trivial state")
    return _residual(config, np.asarray(state.rho))


# ---------------------------------------------------------------------------
# field reconstruction


@dataclass(frozen=True)
class FieldScales:
    """Display-only scale factors of the field reconstruction.

    ``k[m] = k0 + m * dk`` and ``omega[m] = omega0 + m * Omega``.
    """

    waist: float = 1.0
    omega0: float = 10.0
    Omega: float = 1.0
    k0: float = 10.0
    dk: float = 1.0
    L_cav: float = 2 * math.pi


@dataclass(frozen=True)
class FieldSample:
    phi: np.ndarray
    r: np.ndarray
    z: np.ndarray
    t: np.ndarray
    values: np.ndarray
    cavity_kind: str
    theta: float
    scales: FieldScales

    def rows(self):
        """Iterate ``(phi, r, z, t, value)`` tuples in C order."""
        P, Rr, Z, T = np.meshgrid(self.phi, self.r, self.z, self.t, indexing="ij")
        return zip(P.ravel(), Rr.ravel(), Z.ravel(), T.ravel(), self.values.ravel())


def transverse_profile(r, phi, theta, waist=1.0):
    """TEM10 profile rotated by ``theta``."""
    return math.sqrt(8 / math.pi) / waist**2 * r * np.exp(-(r**2) / waist**2) * np.cos(phi - theta)


def longitudinal_profile(rho, z, t, cavity_kind, scales):
    n_side = (len(rho) - 1) // 2
    m = np.arange(-n_side, n_side + 1)
    k = scales.k0 + m * scales.dk
    w = scales.omega0 + m * scales.Omega
    zz = np.asarray(z, dtype=float)[:, None, None]
    tt = np.asarray(t, dtype=float)[None, :, None]
    if cavity_kind == "ring":
        u = np.exp(1j * k * zz)
    elif cavity_kind == "fabry_perot":
        u = np.sin(k * (zz + scales.L_cav / 2)) + 0j
    else:
        raise ValueError(f"cavity_kind must be 'ring' or 'fabry_perot', got {cavity_kind!r}")
    return np.sum(np.asarray(rho) * np.imag(u * np.exp(-1j * w * tt)), axis=-1)


def reconstruct_field(state, grid, cavity_kind="ring", theta=0.0, scales=None):
    """Classical signal field in units of the single-photon amplitude.

    Parameters
    ----------
    grid : mapping
        Arrays ``phi``, ``r``, ``z``, ``t``; the result is sampled on their
        outer product with shape ``(len(phi), len(r), len(z), len(t))``.
    """
    scales = scales or FieldScales()
    axes = [np.atleast_1d(np.asarray(grid[key], dtype=float)) for key in ("phi", "r", "z", "t")]
    if any(a.size == 0 for a in axes):
        raise ValueError("field grid has an empty axis")
    phi, r, z, t = axes
    H = transverse_profile(r[None, :], phi[:, None], theta, scales.waist)
    F = longitudinal_profile(state.rho, z, t, cavity_kind, scales)
    values = H[:, :, None, None] * F[None, None, :, :]
    return FieldSample(phi, r, z, t, values, cavity_kind, float(theta), scales)
