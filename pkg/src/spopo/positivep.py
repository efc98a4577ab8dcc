"""Positive-P stochastic equations: drift, noise factorization and ensemble stepping.

A phase-space point is the complex vector ``x = (s, s_plus)`` of length
``4M``; inside each half the ``l = +1`` amplitudes (``m = -N..N``) come
first, then the ``l = -1`` ones.  ``s_plus`` is an independent variable, not
the conjugate of ``s``.

Every down-conversion channel ``(m, q)`` couples ``s[m,+1]`` with
``s[q,-1]`` through the channel matrix

    R[m,q] = f[m,q] (gamma sigma alpha[m+q] - kappa sum_{n+p=m+q} f[n,p] s[n,+1] s[p,-1])

which enters both the drift (gain on the conjugate partner) and the
diffusion ``D[(m,+1),(q,-1)] = D[(q,-1),(m,+1)] = R[m,q]``.
"""

from __future__ import annotations

import math
import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .steady import SteadyState, effective_matrix, pair_sums


class EnsembleDivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# drift and diffusion


def _split(x, M):
    return x[..., :M], x[..., M : 2 * M], x[..., 2 * M : 3 * M], x[..., 3 * M :]


def _matvec(A, v):
    return np.einsum("...ij,...j->...i", A, v)


def channel_matrices(config, x):
    """``(R, R_plus)`` for the ``s`` and ``s_plus`` sectors at phase-space point(s) ``x``."""
    up, dn, upp, dnp = _split(np.asarray(x), config.n_modes)
    R = effective_matrix(config, pair_sums(config, up, dn))
    Rp = effective_matrix(config, pair_sums(config, upp, dnp))
    return R, Rp


def _drift_from(config, x, R, Rp):
    up, dn, upp, dnp = _split(x, config.n_modes)
    g = config.gamma
    return np.concatenate(
        [
            -g * up + _matvec(R, dnp),
            -g * dn + _matvec(R, upp),
            -g * upp + _matvec(Rp, dn),
            -g * dnp + _matvec(Rp, up),
        ],
        axis=-1,
    )


def _as_vector(state):
    if isinstance(state, PPState):
        return np.concatenate([state.s, state.s_plus])
    return np.asarray(state, dtype=complex)


def drift(state, config):
    """Positive-P drift vector (length ``4M``) at a point or a batch of points."""
    x = _as_vector(state)
    R, Rp = channel_matrices(config, x)
    return _drift_from(config, x, R, Rp)


def diffusion_matrix(state, config):
    """Block-diagonal parts ``(D, D_plus)``, each ``2M x 2M`` and complex symmetric."""
    R, Rp = channel_matrices(config, _as_vector(state))

    def block(R):
        Z = np.zeros_like(R)
        return np.block([[Z, R], [R, Z]])

    return block(R), block(Rp)


@dataclass(frozen=True)
class NoiseFactorization:
    """Noise matrices with ``B @ B.T == D`` (plain transpose) for each sector."""

    B: np.ndarray
    B_plus: np.ndarray
    kind: str = "block"


def _block_factor(R):
    M = R.shape[0]
    B = np.zeros((2 * M, 4 * M * M), dtype=complex)
    W = np.sqrt(R.astype(complex) / 2)
    for m in range(M):
        for q in range(M):
            c = 4 * (m * M + q)
            # columns c, c+1: channel (m, q; l=-1), identical to (q, m; l=+1), left empty
            # columns c+2, c+3: channel (m, q; l=+1)
            B[m, c + 2] = W[m, q]
            B[m, c + 3] = 1j * W[m, q]
            B[M + q, c + 2] = W[m, q]
            B[M + q, c + 3] = -1j * W[m, q]
    return B


def symmetric_sqrt(R):
    """Principal square root ``C`` of a complex symmetric matrix, so that ``C @ C.T == R``."""
    R = np.asarray(R, dtype=complex)
    lam, V = np.linalg.eig(R)
    C = (V * np.sqrt(lam)[..., None, :]) @ np.linalg.inv(V)
    return 0.5 * (C + np.swapaxes(C, -1, -2))


def _minimal_factor(R):
    C = symmetric_sqrt(R)
    return np.block([[C, 1j * C], [C, -1j * C]]) / np.sqrt(2)


def diffusion_factor(state, config, kind="block"):
    """Noise matrices for one phase-space point.

    ``kind="block"`` builds one ``2M x 4`` block per ordered pair ``(m, q)``,
    holding ``sqrt(R[m,q]/2) [[1, i], [1, -i]]`` on rows ``(m,+1)`` and
    ``(q,-1)`` (``4M^2`` columns per sector; the two columns reserved for
    ``(m, q; l=-1)`` are zero because that pair is the channel ``(q, m; l=+1)``
    already counted).  ``kind="minimal"`` uses ``2M`` columns per sector via
    a symmetric square root of the channel matrix.
    """
    R, Rp = channel_matrices(config, _as_vector(state))
    if kind == "block":
        return NoiseFactorization(_block_factor(R), _block_factor(Rp), "block")
    if kind == "minimal":
        return NoiseFactorization(_minimal_factor(R), _minimal_factor(Rp), "minimal")
    raise ValueError(f"unknown factorization {kind!r}")


def noise_columns(config, kind="block"):
    M = config.n_modes
    return 4 * M * M if kind == "block" else 2 * M


def _block_noise(R, eta):
    """``B(R) @ eta`` for the block factorization without forming ``B``."""
    M = R.shape[-1]
    e = eta.reshape(eta.shape[:-1] + (M, M, 2, 2))[..., 1, :]
    Z = e[..., 0] + 1j * e[..., 1]
    W = np.sqrt(R / 2)
    return np.concatenate([np.sum(W * Z, axis=-1), np.sum(W * np.conj(Z), axis=-2)], axis=-1)


def _minimal_noise(R, eta):
    M = R.shape[-1]
    C = symmetric_sqrt(R)
    a = eta[..., :M]
    b = eta[..., M:]
    ca = _matvec(C, a + 1j * b)
    cb = _matvec(C, a - 1j * b)
    return np.concatenate([ca, cb], axis=-1) / np.sqrt(2)


def _noise(config, R, Rp, eta, kind):
    """Noise increment direction for both sectors; ``eta`` has ``2 * noise_columns`` entries."""
    k = eta.shape[-1] // 2
    fn = _block_noise if kind == "block" else _minimal_noise
    R = R.astype(complex)
    Rp = Rp.astype(complex)
    return np.concatenate([fn(R, eta[..., :k]), fn(Rp, eta[..., k:])], axis=-1)


# ---------------------------------------------------------------------------
# stepping


@dataclass(frozen=True)
class PPState:
    s: np.ndarray
    s_plus: np.ndarray
    t: float = 0.0

    @classmethod
    def from_vector(cls, x, t=0.0):
        x = np.asarray(x, dtype=complex)
        h = len(x) // 2
        return cls(x[:h].copy(), x[h:].copy(), t)

    @classmethod
    def classical(cls, rho, theta=0.0, t=0.0):
        rho = np.asarray(rho, dtype=float)
        e = np.exp(-1j * theta)
        return cls(np.concatenate([rho * e, rho / e]), np.concatenate([rho / e, rho * e]), t)


def _midpoint(config, x, dt, N, tol=1e-12, max_iter=20):
    """Solve ``y = x + dt A((x+y)/2) + N`` by fixed-point iteration.

    Returns ``(y, failed)`` where ``failed`` marks rows that did not converge.
    """
    R, Rp = channel_matrices(config, x)
    y = x + dt * _drift_from(config, x, R, Rp) + N
    failed = np.ones(x.shape[:-1], dtype=bool)
    for _ in range(max_iter):
        mid = 0.5 * (x + y)
        Rm, Rpm = channel_matrices(config, mid)
        y_new = x + dt * _drift_from(config, mid, Rm, Rpm) + N
        err = np.max(np.abs(y_new - y), axis=-1)
        y = y_new
        failed = ~(err <= tol * (1.0 + np.max(np.abs(y), axis=-1)))
        if not np.any(failed):
            break
    return y, failed


def _step_batch(config, x, dt, eta, stepper, kind):
    R, Rp = channel_matrices(config, x)
    N = _noise(config, R, Rp, eta, kind) * math.sqrt(dt)
    explicit = x + dt * _drift_from(config, x, R, Rp) + N
    if stepper == "euler_maruyama":
        return explicit, 0
    if stepper == "semi_implicit_midpoint":
        y, failed = _midpoint(config, x, dt, N)
        n_fail = int(np.count_nonzero(failed))
        if n_fail:
            y = np.where(failed[..., None], explicit, y)
        return y, n_fail
    raise ValueError(f"unknown stepper {stepper!r}")


def step(state, dt, noise_draw, config, stepper="euler_maruyama", factorization="block"):
    """Advance one positive-P point by ``dt``.

    ``noise_draw`` holds standard real Gaussians, ``noise_columns`` of them
    for the ``s`` sector followed by as many for the ``s_plus`` sector.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    x = _as_vector(state)
    eta = np.asarray(noise_draw, dtype=float)
    need = 2 * noise_columns(config, factorization)
    if eta.shape[-1] != need:
        raise ValueError(f"noise_draw must have {need} entries, got {eta.shape[-1]}")
    y, _ = _step_batch(config, x, dt, eta, stepper, factorization)
    t = state.t + dt if isinstance(state, PPState) else dt
    return PPState.from_vector(y, t)


# ---------------------------------------------------------------------------
# ensembles


def default_threads():
    try:
        return max(1, int(os.environ.get("SPOPO_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class RunParams:
    """Run mechanics of a stochastic ensemble (times in units of ``1/gamma`` unless given)."""

    n_traj: int = 10_000
    t_max: float = 5.0
    dt: float = 1e-3
    save_stride: int = 10
    seed: int = 0
    stepper: str = "euler_maruyama"
    factorization: str = "block"
    escape_radius: float | None = None
    block_size: int = 1024
    threads: int | None = None

    def validate(self):
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise ValueError(f"n_traj must be a positive integer, got {self.n_traj}")
        if not self.dt > 0 or not self.t_max > 0:
            raise ValueError("dt and t_max must be > 0")
        if self.save_stride < 1 or self.block_size < 1:
            raise ValueError("save_stride and block_size must be >= 1")
        if self.stepper not in ("euler_maruyama", "semi_implicit_midpoint"):
            raise ValueError(f"unknown stepper {self.stepper!r}")
        if self.factorization not in ("block", "minimal"):
            raise ValueError(f"unknown factorization {self.factorization!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class EnsembleRun:
    """Stored output of :func:`run_ensemble`.

    ``s`` and ``s_plus`` have shape ``(n_save, n_traj, 2M)``; rows of
    discarded trajectories are NaN from the save after their escape on.
    """

    config: object
    params: RunParams
    t_grid: np.ndarray
    s: np.ndarray
    s_plus: np.ndarray
    alive: np.ndarray
    theta0: np.ndarray
    rho: np.ndarray | None
    discarded: int
    midpoint_fallbacks: int = 0
    wall_time: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def n_traj(self):
        return self.s.shape[1]

    @property
    def discard_fraction(self):
        return self.discarded / self.n_traj

    def surviving(self):
        return self.s[:, self.alive], self.s_plus[:, self.alive]

    def manifest(self):
        return {
            "seed": self.params.seed,
            "params": self.params.to_dict(),
            "n_traj": self.n_traj,
            "discarded": self.discarded,
            "discard_fraction": self.discard_fraction,
            "midpoint_fallbacks": self.midpoint_fallbacks,
            "wall_time_s": self.wall_time,
        }


def _initial_points(config, initial, theta):
    M = config.n_modes
    n = len(theta)
    if isinstance(initial, SteadyState):
        rho = np.asarray(initial.rho, dtype=float)
        e = np.exp(-1j * theta)[:, None]
        return np.concatenate([rho * e, rho / e, rho / e, rho * e], axis=1)
    x0 = np.asarray(initial, dtype=complex)
    if x0.shape != (4 * M,):
        raise ValueError(f"initial point must have length {4 * M}")
    return np.broadcast_to(x0, (n, 4 * M)).copy()


def _run_block(config, params, initial, block, lo, hi, out_s, out_sp, alive, theta0, radius, n_steps):
    ss = np.random.SeedSequence(params.seed, spawn_key=(block,))
    rng = np.random.Generator(np.random.Philox(ss))
    n = hi - lo
    theta = rng.uniform(0.0, 2 * np.pi, n)
    if isinstance(initial, SteadyState) and not initial.is_trivial:
        theta0[lo:hi] = theta
    else:
        theta0[lo:hi] = np.nan
    x = _initial_points(config, initial, theta)
    M = config.n_modes
    ncol = 2 * noise_columns(config, params.factorization)
    live = np.ones(n, dtype=bool)
    out_s[0, lo:hi] = x[:, : 2 * M]
    out_sp[0, lo:hi] = x[:, 2 * M :]
    fallbacks = 0
    save = 1
    for k in range(1, n_steps + 1):
        eta = rng.standard_normal((n, ncol))
        x, nf = _step_batch(config, x, params.dt, eta, params.stepper, params.factorization)
        fallbacks += nf
        bad = ~np.all(np.isfinite(x), axis=1) | (np.max(np.abs(x), axis=1) > radius)
        if np.any(bad & live):
            live &= ~bad
            x[~live] = 0.0
        if k % params.save_stride == 0:
            xs = np.where(live[:, None], x, np.nan)
            out_s[save, lo:hi] = xs[:, : 2 * M]
            out_sp[save, lo:hi] = xs[:, 2 * M :]
            save += 1
    alive[lo:hi] = live
    return fallbacks


def run_ensemble(config, params, initial):
    """Integrate ``params.n_traj`` independent positive-P trajectories.

    Parameters
    ----------
    config : CombConfig
    params : RunParams
    initial : SteadyState or array
        A classical state starts every trajectory on the classical manifold
        with its own orientation ``theta`` drawn uniformly in ``[0, 2 pi)``;
        an array of length ``4M`` is used as-is for all trajectories.

    Notes
    -----
    Trajectories are processed in blocks of ``params.block_size``; block
    ``b`` draws from its own Philox stream keyed by ``(seed, b)``, so the
    output is bitwise reproducible regardless of the thread count.
    Trajectories leaving the ball of radius ``escape_radius`` (default
    ``1e3 max(1, |rho|)``) are discarded and excluded from all averages.
    """
    params.validate()
    M = config.n_modes
    n = int(params.n_traj)
    n_steps = int(round(params.t_max / params.dt))
    n_save = n_steps // params.save_stride + 1
    rho = None
    if isinstance(initial, SteadyState):
        rho = np.asarray(initial.rho, dtype=float)
    radius = params.escape_radius
    if radius is None:
        radius = 1e3 * max(1.0, float(np.linalg.norm(rho)) if rho is not None else 1.0)

    out_s = np.empty((n_save, n, 2 * M), dtype=complex)
    out_sp = np.empty((n_save, n, 2 * M), dtype=complex)
    alive = np.ones(n, dtype=bool)
    theta0 = np.empty(n)
    bounds = [(b, lo, min(lo + params.block_size, n)) for b, lo in enumerate(range(0, n, params.block_size))]
    threads = params.threads or default_threads()

    t0 = time.perf_counter()

    def work(arg):
        b, lo, hi = arg
        return _run_block(config, params, initial, b, lo, hi, out_s, out_sp, alive, theta0, radius, n_steps)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fallbacks = sum(pool.map(work, bounds))
    else:
        fallbacks = sum(map(work, bounds))
    wall = time.perf_counter() - t0

    discarded = int(n - np.count_nonzero(alive))
    if discarded == n:
        raise EnsembleDivergenceError(
            f"all {n} trajectories left the escape radius {radius:g}; reduce dt or check the parameters"
        )
    t_grid = np.arange(n_save) * params.save_stride * params.dt
    return EnsembleRun(
        config, params, t_grid, out_s, out_sp, alive, theta0, rho, discarded,
        midpoint_fallbacks=fallbacks, wall_time=wall,
        info={"escape_radius": radius, "n_steps": n_steps, "blocks": len(bounds)},
    )


# ---------------------------------------------------------------------------
# trajectory dumps

_MAGIC = b"SPOPOTRJ"
_HEADER = struct.Struct("<8sIIIIId")


def write_trajectories(path, run):
    """Binary dump, little-endian.

    Header: magic ``b"SPOPOTRJ"``, uint32 version (1), uint32 ``M``, uint32
    ``n_traj``, uint32 ``n_save``, uint32 save stride, float64 ``dt``.  Then
    ``n_traj`` uint8 survival flags, ``n_traj`` float64 initial orientations,
    and for every save and trajectory the ``4M`` amplitudes ``(s, s_plus)``
    as interleaved ``(re, im)`` float64 pairs.
    """
    M = run.s.shape[2] // 2
    n_save, n_traj = run.s.shape[:2]
    data = np.concatenate([run.s, run.s_plus], axis=2).astype("<c16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, M, n_traj, n_save, run.params.save_stride, run.params.dt))
        fh.write(run.alive.astype("u1").tobytes())
        fh.write(run.theta0.astype("<f8").tobytes())
        fh.write(data.tobytes())


def read_trajectories(path):
    """Inverse of :func:`write_trajectories`; returns a dict of arrays and header fields."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, M, n_traj, n_save, stride, dt = _HEADER.unpack(head)
        if magic != _MAGIC or version != 1:
            raise ValueError(f"{path}: not a trajectory dump (magic {magic!r}, version {version})")
        alive = np.frombuffer(fh.read(n_traj), dtype="u1").astype(bool)
        theta0 = np.frombuffer(fh.read(8 * n_traj), dtype="<f8").copy()
        data = np.frombuffer(fh.read(), dtype="<c16")
    data = data.reshape(n_save, n_traj, 4 * M)
    return {
        "M": M, "n_traj": n_traj, "n_save": n_save, "save_stride": stride, "dt": dt,
        "t_grid": np.arange(n_save) * stride * dt,
        "alive": alive, "theta0": theta0,
        "s": data[:, :, : 2 * M].copy(), "s_plus": data[:, :, 2 * M :].copy(),
    }


def export_csv(path, run, max_traj=None):
    """Long-format CSV: ``t,traj,sector,l,m,re,im`` (small runs only)."""
    import csv

    M = run.s.shape[2] // 2
    N = (M - 1) // 2
    n_traj = run.s.shape[1] if max_traj is None else min(max_traj, run.s.shape[1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "traj", "sector", "l", "m", "re", "im"])
        for i, t in enumerate(run.t_grid):
            for j in range(n_traj):
                for sector, arr in (("s", run.s), ("s_plus", run.s_plus)):
                    for c in range(2 * M):
                        z = arr[i, j, c]
                        w.writerow([repr(float(t)), j, sector, 1 if c < M else -1, c % M - N,
                                    repr(float(z.real)), repr(float(z.imag))])
