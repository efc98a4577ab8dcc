"""Post-processing of positive-P ensembles.

Orientation tracking, the phase-diffusion fit, dark-mode quadratures in the
co-rotating frame and homodyne spectra from ensemble correlograms.  All
functions take either an :class:`~spopo.positivep.EnsembleRun` or the dict
returned by :func:`~spopo.positivep.read_trajectories`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linear import NoiseSpectrum


class PhaseEstimationError(RuntimeError):
    pass


class NonStationaryError(RuntimeError):
    pass


# relative magnitude below which a projection carries no phase information
UNDEFINED_TOL = 1e-6
# largest allowed jump of any projection argument between saves
UNWRAP_JUMP = np.pi / 2
MAX_FLAG_RATE = 0.01


def _wrap(a):
    return np.angle(np.exp(1j * a))


def _arrays(ensemble):
    if isinstance(ensemble, dict):
        return ensemble["t_grid"], ensemble["s"], ensemble["s_plus"], ensemble["alive"]
    return ensemble.t_grid, ensemble.s, ensemble.s_plus, ensemble.alive


def _projections(s, s_plus, rho):
    M = len(rho)
    return (
        s[..., :M] @ rho,
        s[..., M:] @ rho,
        s_plus[..., :M] @ rho,
        s_plus[..., M:] @ rho,
    )


def estimate_theta(s, rho, s_plus=None):
    """Orientation angle of a snapshot (or an array of snapshots).

    With only ``s``, ``theta = (arg P_down - arg P_up)/2`` with
    ``P_l = sum_m rho_m s[m,l]``.  When ``s_plus`` is supplied the two
    phase-space sectors are averaged, which cancels the leading dark-mode
    leakage of the single-sector estimate.

    Returns
    -------
    theta : ndarray
        Wrapped to ``(-pi, pi]``.
    undefined : ndarray of bool
        True where both projections of a sector are below
        ``1e-6 |rho|^2`` in magnitude.
    """
    rho = np.asarray(rho, dtype=float)
    nr2 = float(rho @ rho)
    if nr2 == 0:
        raise ValueError("orientation is undefined for rho = 0")
    s = np.asarray(s, dtype=complex)
    M = len(rho)
    pu, pd = s[..., :M] @ rho, s[..., M:] @ rho
    floor = UNDEFINED_TOL * nr2
    undefined = (np.abs(pu) < floor) & (np.abs(pd) < floor)
    a = np.angle(pd * np.conj(pu))  # 2 theta
    if s_plus is not None:
        s_plus = np.asarray(s_plus, dtype=complex)
        qu, qd = s_plus[..., :M] @ rho, s_plus[..., M:] @ rho
        undefined |= (np.abs(qu) < floor) & (np.abs(qd) < floor)
        b = np.angle(qu * np.conj(qd))
        a = a + 0.5 * _wrap(b - a)
    theta = 0.5 * a
    # the half angle fixes theta modulo pi; choose the branch whose residual
    # common phase is near 0, i.e. P_down exp(-i theta) points along +|rho|^2
    ref = pd if s_plus is None else pd + qu
    theta = np.where(np.real(ref * np.exp(-1j * theta)) < 0, theta + np.pi, theta)
    theta = _wrap(theta)
    theta = np.where(theta <= -np.pi, theta + 2 * np.pi, theta)
    return theta, undefined


def unwrap_theta(s, s_plus, rho):
    """Continuous orientation series, time on axis 0.

    Each of the four projection arguments is unwrapped on its own; a sample
    is flagged when any of them jumps by more than ``pi/2`` between saves or
    when its phase is undefined.
    """
    rho = np.asarray(rho, dtype=float)
    nr2 = float(rho @ rho)
    P = _projections(s, s_plus, rho)
    floor = UNDEFINED_TOL * nr2
    undefined = ((np.abs(P[0]) < floor) & (np.abs(P[1]) < floor)) | (
        (np.abs(P[2]) < floor) & (np.abs(P[3]) < floor)
    )
    args = [np.angle(p) for p in P]
    jumps = np.zeros(P[0].shape, dtype=bool)
    for i, a in enumerate(args):
        d = np.diff(a, axis=0)
        jumps[1:] |= np.abs(_wrap(d)) > UNWRAP_JUMP
        args[i] = np.unwrap(a, axis=0)
    theta = 0.25 * (args[1] - args[0] + args[2] - args[3])
    # anchor the start to the wrapped estimate so theta(0) is in (-pi, pi]
    theta0, _ = estimate_theta(s[0], rho, s_plus[0])
    theta = theta + (theta0 - theta[0])
    return theta, undefined | jumps


@dataclass
class PhaseSeries:
    t_grid: np.ndarray
    theta: np.ndarray
    variance: np.ndarray
    variance_err: np.ndarray
    fitted_slope: float
    slope_stderr: float
    intercept: float
    fit_window: tuple
    n_traj: int
    flag_rate: float
    discard_fraction: float

    def summary(self):
        return {
            "slope": self.fitted_slope,
            "slope_stderr": self.slope_stderr,
            "intercept": self.intercept,
            "fit_window": list(self.fit_window),
            "n_traj": self.n_traj,
            "flag_rate": self.flag_rate,
            "discard_fraction": self.discard_fraction,
        }


def _groups(n, n_groups):
    n_groups = max(2, min(n_groups, n))
    return np.array_split(np.arange(n), n_groups)


def _wls_slope(t, y, w):
    W = np.sum(w)
    tm = np.sum(w * t) / W
    ym = np.sum(w * y) / W
    b = np.sum(w * (t - tm) * (y - ym)) / np.sum(w * (t - tm) ** 2)
    return b, ym - b * tm


def phase_variance(ensemble, rho=None, gamma=None, t_fit=None, n_groups=20, min_traj=100):
    """Orientation diffusion ``V(t) = <[theta(t) - theta(0)]^2>`` and its linear fit.

    The fit is a weighted least-squares line over ``t in [1/gamma, t_max]``
    (weights from the per-time sampling variance); the slope error is a
    jackknife over ``n_groups`` trajectory groups.

    Raises
    ------
    PhaseEstimationError
        Fewer than ``min_traj`` surviving trajectories, or more than 1% of
        the samples flagged (undefined phase or an unwrap jump).
    ValueError
        Save stride too coarse for the predicted diffusion per stride.
    """
    t, s, sp, alive = _arrays(ensemble)
    if rho is None:
        rho = ensemble.rho
    if gamma is None:
        gamma = ensemble.config.gamma
    rho = np.asarray(rho, dtype=float)
    nr2 = float(rho @ rho)
    if nr2 == 0:
        raise PhaseEstimationError("rho = 0: the orientation is undefined below threshold")
    n = int(np.count_nonzero(alive))
    if n < min_traj:
        raise PhaseEstimationError(f"need >= {min_traj} surviving trajectories, have {n}")
    dts = t[1] - t[0]
    if gamma * dts / (4 * nr2) > 0.01 * np.pi**2:
        raise ValueError(
            f"save interval {dts:g} is too coarse for the predicted diffusion "
            f"{gamma * dts / (4 * nr2):g} rad^2 per save; reduce the stride"
        )
    theta, flags = unwrap_theta(s[:, alive], sp[:, alive], rho)
    rate = float(np.mean(flags))
    if rate > MAX_FLAG_RATE:
        raise PhaseEstimationError(
            f"{100 * rate:.2f}% of samples flagged (undefined phase or unwrap jump); "
            "use a smaller save stride or check that the run is above threshold"
        )
    d2 = (theta - theta[0]) ** 2
    V = d2.mean(axis=1)
    Verr = d2.std(axis=1, ddof=1) / np.sqrt(n)

    lo, hi = (1.0 / gamma, t[-1]) if t_fit is None else t_fit
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if np.count_nonzero(sel) < 3:
        raise PhaseEstimationError(f"fit window [{lo:g}, {hi:g}] holds fewer than 3 saves")
    w = 1.0 / np.maximum(Verr[sel], 1e-300) ** 2
    slope, icpt = _wls_slope(t[sel], V[sel], w)

    groups = _groups(n, n_groups)
    S = np.array([d2[sel][:, g].sum(axis=1) for g in groups])
    tot = S.sum(axis=0)
    jk = np.empty(len(groups))
    for i, g in enumerate(groups):
        jk[i] = _wls_slope(t[sel], (tot - S[i]) / (n - len(g)), w)[0]
    G = len(groups)
    err = float(np.sqrt((G - 1) / G * np.sum((jk - jk.mean()) ** 2)))

    n_all = len(alive)
    return PhaseSeries(t, theta, V, Verr, float(slope), err, float(icpt), (float(lo), float(hi)),
                       n, rate, (n_all - n) / n_all)


@dataclass
class QuadratureSeries:
    """Dark-mode quadratures, shape ``(n_save, n_traj)`` (complex in positive-P)."""

    t_grid: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    flags: np.ndarray

    def get(self, label):
        return {"X_d": self.X, "Y_d": self.Y, "X": self.X, "Y": self.Y}[label]


def dark_amplitudes(s, s_plus, rho, theta):
    """``(s_d, s_d_plus)`` in the frame rotated by ``theta``."""
    rho = np.asarray(rho, dtype=float)
    M = len(rho)
    c = 1.0 / (np.sqrt(2) * np.linalg.norm(rho))
    e = np.exp(1j * np.asarray(theta))
    sd = 1j * c * (e * (s[..., :M] @ rho) - (s[..., M:] @ rho) / e)
    sdp = -1j * c * ((s_plus[..., :M] @ rho) / e - e * (s_plus[..., M:] @ rho))
    return sd, sdp


def dark_quadratures(ensemble, rho=None):
    """``X_d = s_d+ + s_d`` and ``Y_d = i(s_d+ - s_d)`` relative to the tracked orientation."""
    t, s, sp, alive = _arrays(ensemble)
    if rho is None:
        rho = ensemble.rho
    if rho is None or not np.any(rho):
        raise ValueError("dark quadratures need an above-threshold rho")
    rho = np.asarray(rho, dtype=float)
    s, sp = s[:, alive], sp[:, alive]
    theta, flags = estimate_theta(s, rho, sp)
    sd, sdp = dark_amplitudes(s, sp, rho, theta)
    return QuadratureSeries(t, sdp + sd, 1j * (sdp - sd), flags)


def _taper(kind, K):
    k = np.arange(K + 1) / K
    if kind == "boxcar":
        return np.ones(K + 1)
    if kind == "hann":
        return 0.5 * (1 + np.cos(np.pi * k))
    if kind == "tukey":
        # flat over the first 3/4 of the lags, cosine roll-off over the rest
        w = np.ones(K + 1)
        tail = k > 0.75
        w[tail] = 0.5 * (1 + np.cos(np.pi * (k[tail] - 0.75) / 0.25))
        return w
    raise ValueError(f"unknown taper {kind!r}")


def _lag_sums(Q, K):
    """``sum_t Q(t) Q(t+k)`` per trajectory for ``k = 0..K`` (time on axis 0)."""
    n = Q.shape[0]
    L = 1 << int(np.ceil(np.log2(2 * n)))
    A = np.fft.fft(Q, L, axis=0)
    B = np.fft.fft(np.conj(Q), L, axis=0)
    return np.fft.ifft(np.conj(B) * A, axis=0)[: K + 1]


def homodyne_spectrum(series, gamma, omega_grid, label="Y_d", t_transient=None, max_lag=None,
                      taper="tukey", n_groups=20, min_span=50.0):
    """Output spectrum ``V(w) = 1 + 2 gamma S_Q(w)`` from a stochastic quadrature.

    Parameters
    ----------
    series : QuadratureSeries or (t_grid, Q) tuple
    gamma : float
    omega_grid : array_like
    label : str
        Quadrature to use when ``series`` is a :class:`QuadratureSeries`.
    t_transient : float, optional
        Start of the stationary window, default ``2/gamma``.
    max_lag : float, optional
        Longest correlation lag, default the whole window.
    taper : {"tukey", "boxcar", "hann"}
        Lag window applied to the correlogram.
    n_groups : int
        Jackknife groups over trajectories.
    min_span : float
        Required total stationary record ``n_traj * window`` in units of ``1/gamma``.

    Returns
    -------
    NoiseSpectrum
        With jackknife standard errors in ``errors``.

    Notes
    -----
    The correlogram is ``C(tau) = <Re Q(t) Q(t+tau)>`` averaged over the
    ensemble and over all start times in the window, without mean
    subtraction (positive-P moments are normally ordered).  ``S`` is the
    trapezoidal cosine transform of the tapered ``C``.
    """
    if isinstance(series, QuadratureSeries):
        t, Q = series.t_grid, series.get(label)
    else:
        t, Q = series
        Q = np.asarray(Q)
    if Q.ndim == 1:
        Q = Q[:, None]
    t0 = 2.0 / gamma if t_transient is None else t_transient
    sel = t >= t0 - 1e-12
    Q = Q[sel]
    n_t, n_traj = Q.shape
    dts = t[1] - t[0]
    if n_t < 4:
        raise NonStationaryError(f"stationary window after t={t0:g} has only {n_t} saves; run longer")
    span = (n_t - 1) * dts
    if n_traj * span * gamma < min_span:
        raise NonStationaryError(
            f"stationary record n_traj*window = {n_traj * span * gamma:.3g}/gamma < {min_span}/gamma"
        )
    groups = _groups(n_traj, n_groups)
    G = len(groups)

    # windowed-mean drift test: first vs second half of the window, real and imaginary parts
    h = n_t // 2
    for part in (np.real, np.imag):
        gm = np.array([[part(Q[:h, g]).mean(), part(Q[h:, g]).mean()] for g in groups])
        diff = gm[:, 1] - gm[:, 0]
        jk = np.array([(diff.sum() - diff[i]) / (G - 1) for i in range(G)])
        se = np.sqrt((G - 1) / G * np.sum((jk - jk.mean()) ** 2))
        if abs(diff.mean()) > 3 * se:
            raise NonStationaryError(
                f"mean drifts by {diff.mean():.3g} (> 3 x {se:.3g}) across the window; "
                "increase the transient length t_transient"
            )

    K = n_t - 1 if max_lag is None else min(n_t - 1, int(round(max_lag / dts)))
    lags = np.arange(K + 1)
    counts = (n_t - lags).astype(float)
    S = np.array([_lag_sums(Q[:, g], K).sum(axis=1).real for g in groups])  # (G, K+1)
    sizes = np.array([len(g) for g in groups], dtype=float)

    w = np.atleast_1d(np.asarray(omega_grid, dtype=float))
    tau = lags * dts
    wt = _taper(taper, K) if K > 0 else np.ones(1)
    trap = np.full(K + 1, 2.0)
    trap[0] = 1.0
    if K > 0:
        trap[-1] = 1.0
    kern = dts * trap * wt * np.cos(np.outer(w, tau))  # (n_w, K+1)

    def spec(Ssum, ntr):
        C = Ssum / (counts * ntr)
        return 1.0 + 2.0 * gamma * kern @ C

    V = spec(S.sum(axis=0), n_traj)
    V_jk = np.array([spec(S.sum(axis=0) - S[i], n_traj - sizes[i]) for i in range(G)])
    err = np.sqrt((G - 1) / G * np.sum((V_jk - V_jk.mean(axis=0)) ** 2, axis=0))
    shape = np.shape(omega_grid)
    return NoiseSpectrum(np.asarray(omega_grid, dtype=float), V.reshape(shape), label, err.reshape(shape))


def equal_time_correlator(Q, t_grid=None, t_transient=0.0):
    """``<Q(t) Q(t)>`` averaged over trajectories (and saves after ``t_transient``)."""
    Q = np.asarray(Q)
    if t_grid is not None:
        Q = Q[np.asarray(t_grid) >= t_transient - 1e-12]
    return complex(np.mean(Q * Q))
