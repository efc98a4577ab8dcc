"""Comb geometry, pump spectrum, phase mismatch and the coupling matrix.

Signal modes are indexed by ``m = -N..N`` and stored at array position
``m + N``.  Pump lines ``j = m + q`` run over ``-2N..2N`` and are stored at
``j + 2N``; pump lines outside ``-N..N`` carry zero amplitude.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

PUMP_KINDS = ("monochromatic", "gaussian", "sech2", "explicit")
MISMATCH_KINDS = ("perfect", "quadratic", "explicit")


class ConfigError(ValueError):
    """Invalid comb configuration (bad key, value, or input file)."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def mode_indices(n_side):
    return np.arange(-n_side, n_side + 1)


def read_csv_numbers(path):
    """Read a headerless row-major CSV file of real numbers.

    Complex entries (anything ``complex()`` parses with a nonzero imaginary
    part, or the literal ``j`` suffix) are rejected.
    """
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells:
                continue
            vals = []
            for c in cells:
                try:
                    vals.append(float(c))
                except ValueError:
                    try:
                        z = complex(c.replace(" ", ""))
                    except ValueError:
                        raise ConfigError(f"{path}:{lineno}: not a number: {c!r}") from None
                    raise ConfigError(
                        f"{path}:{lineno}: complex value {z} not allowed (amplitudes must be real)"
                    ) from None
            rows.append(vals)
    if not rows:
        raise ConfigError(f"{path}: empty file")
    return rows


@dataclass(frozen=True)
class PumpSpectrum:
    """Normalized real spectral amplitudes of the pump comb."""

    alpha: np.ndarray
    kind: str = "explicit"
    width: float | None = None

    @property
    def n_side(self):
        return (len(self.alpha) - 1) // 2

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind in ("gaussian", "sech2"):
            d["width"] = self.width if math.isfinite(self.width) else "inf"
        elif self.kind == "explicit":
            d["values"] = [float(x) for x in self.alpha]
        return d


@dataclass(frozen=True)
class MismatchModel:
    """Symmetric phase-mismatch matrix ``f[m, q]`` (sinc of the phase mismatch)."""

    values: np.ndarray
    kind: str = "explicit"
    params: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "quadratic":
            d.update({k: float(self.params[k]) for k in ("u", "v", "w")})
        elif self.kind == "explicit":
            d["values"] = [[float(x) for x in row] for row in self.values]
        return d


def _normalize(alpha, what):
    alpha = np.asarray(alpha, dtype=float)
    if not np.all(np.isfinite(alpha)):
        raise ConfigError(f"{what}: non-finite pump amplitude")
    norm = np.sqrt(np.sum(alpha**2))
    if norm == 0.0:
        raise ConfigError(f"{what}: pump amplitudes are all zero, cannot normalize")
    alpha = alpha / norm
    # one refinement pass so the norm is 1 to rounding
    return alpha / np.sqrt(np.sum(alpha**2))


def build_pump_spectrum(kind, n_side, width=None, values=None, file=None):
    """Build a normalized pump spectrum on ``2*n_side+1`` lines.

    Parameters
    ----------
    kind : {"monochromatic", "gaussian", "sech2", "explicit"}
        ``gaussian`` uses ``exp(-m**2 / (2 width**2))``; ``sech2`` uses the
        amplitude ``sech(m / width)`` (a sech-squared power spectrum).
        ``width=inf`` gives a flat comb for both.
    n_side : int
    width : float, optional
        Required for the parametric kinds, must be > 0.
    values, file : optional
        Amplitudes for ``explicit``: either a sequence or a path to a
        single-row or single-column CSV file with exactly ``2N+1`` entries.
    """
    if n_side < 0 or int(n_side) != n_side:
        raise ConfigError(f"n_side must be a non-negative integer, got {n_side!r}")
    n_side = int(n_side)
    m = mode_indices(n_side).astype(float)
    M = len(m)
    if kind == "monochromatic":
        alpha = (m == 0).astype(float)
    elif kind in ("gaussian", "sech2"):
        if width is None:
            raise ConfigError(f"pump kind {kind!r} requires a width")
        width = float(width)
        if not width > 0:
            raise ConfigError(f"pump width must be > 0, got {width}")
        x = m / width
        if kind == "gaussian":
            alpha = np.exp(-0.5 * x**2)
        else:
            alpha = 1.0 / np.cosh(x)
    elif kind == "explicit":
        if values is None and file is None:
            raise ConfigError("explicit pump requires 'values' or 'file'")
        if values is None:
            rows = read_csv_numbers(file)
            values = [v for row in rows for v in row]
        if any(isinstance(v, complex) for v in values):
            raise ConfigError("complex pump amplitudes are not supported")
        alpha = np.asarray(values, dtype=float).ravel()
        if alpha.size != M:
            raise ConfigError(f"explicit pump has {alpha.size} entries, expected {M}")
    else:
        raise ConfigError(f"unknown pump kind {kind!r}; expected one of {PUMP_KINDS}")
    return PumpSpectrum(_frozen(_normalize(alpha, f"pump[{kind}]")), kind, width)


def sinc(phi):
    """Unnormalized sinc, ``sin(x)/x`` with ``sinc(0) = 1``."""
    return np.sinc(np.asarray(phi, dtype=float) / np.pi)


def build_mismatch(kind, n_side, u=0.0, v=0.0, w=0.0, values=None, file=None):
    """Phase-mismatch factors ``f[m, q]``.

    The quadratic model expands the wavenumber mismatch to second order in
    the mode indices, ``phi = u (m+q) + v (m+q)**2 - w (m**2 + q**2)``, and
    sets ``f = sinc(phi)``.
    """
    n_side = int(n_side)
    m = mode_indices(n_side).astype(float)
    M = len(m)
    params = {}
    if kind == "perfect":
        f = np.ones((M, M))
    elif kind == "quadratic":
        params = {"u": float(u), "v": float(v), "w": float(w)}
        mm, qq = np.meshgrid(m, m, indexing="ij")
        s = mm + qq
        phi = params["u"] * s + params["v"] * s**2 - params["w"] * (mm**2 + qq**2)
        f = sinc(phi)
    elif kind == "explicit":
        if values is None and file is None:
            raise ConfigError("explicit mismatch requires 'values' or 'file'")
        if values is None:
            values = read_csv_numbers(file)
        f = np.asarray(values, dtype=float)
        if f.shape != (M, M):
            raise ConfigError(f"explicit mismatch has shape {f.shape}, expected {(M, M)}")
        if not np.all(np.isfinite(f)):
            raise ConfigError("explicit mismatch has non-finite entries")
        if np.max(np.abs(f - f.T)) > 1e-12:
            raise ConfigError("explicit mismatch matrix is not symmetric within 1e-12")
        if np.max(np.abs(f)) > 1.0 + 1e-12:
            raise ConfigError("explicit mismatch entries must satisfy |f| <= 1")
        f = 0.5 * (f + f.T)
    else:
        raise ConfigError(f"unknown mismatch kind {kind!r}; expected one of {MISMATCH_KINDS}")
    return MismatchModel(_frozen(f), kind, params)


@dataclass(frozen=True)
class CombConfig:
    """Physical parameters of the comb.

    Rates are in units of inverse time; ``sigma`` is the pump amplitude
    relative to the monochromatic threshold.
    """

    n_side: int
    gamma: float
    kappa: float
    sigma: float
    pump: PumpSpectrum
    mismatch: MismatchModel

    def __post_init__(self):
        if self.n_side < 0:
            raise ConfigError("n_side must be >= 0")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not self.kappa >= 0:
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        M = 2 * self.n_side + 1
        if self.pump.alpha.shape != (M,):
            raise ConfigError(f"pump has {self.pump.alpha.shape[0]} lines, expected {M}")
        if self.mismatch.values.shape != (M, M):
            raise ConfigError(f"mismatch shape {self.mismatch.values.shape}, expected {(M, M)}")

    @property
    def n_modes(self):
        return 2 * self.n_side + 1

    @property
    def alpha(self):
        return self.pump.alpha

    @property
    def f(self):
        return self.mismatch.values

    def replace(self, **changes):
        from dataclasses import replace

        return replace(self, **changes)

    # ---- derived index structure, shared by the classical and stochastic code

    @cached_property
    def pump_index(self):
        """``H[m, q] = m + q + 2N``: position of pump line ``m+q`` in the extended pump."""
        i = np.arange(self.n_modes)
        H = i[:, None] + i[None, :]
        H.setflags(write=False)
        return H

    @cached_property
    def alpha_ext(self):
        """Pump amplitudes on lines ``-2N..2N`` (zero outside ``-N..N``)."""
        N = self.n_side
        a = np.zeros(4 * N + 1)
        a[N : 3 * N + 1] = self.alpha
        a.setflags(write=False)
        return a

    @cached_property
    def pair_projector(self):
        """One-hot ``(M*M, 4N+1)`` map summing an ``M x M`` array along anti-diagonals."""
        M = self.n_modes
        P = np.zeros((M * M, 4 * self.n_side + 1))
        P[np.arange(M * M), self.pump_index.ravel()] = 1.0
        P.setflags(write=False)
        return P

    @cached_property
    def coupling(self):
        return build_coupling_matrix(self)

    @cached_property
    def channel_tensor(self):
        """``K[m, q, n, p] = f[m,q] f[n,p] delta(m+q, n+p)``."""
        f = self.f
        H = self.pump_index
        same = H[:, :, None, None] == H[None, None, :, :]
        K = f[:, :, None, None] * f[None, None, :, :] * same
        K.setflags(write=False)
        return K

    # ---- serialization

    def to_dict(self):
        return {
            "n_side": self.n_side,
            "gamma": self.gamma,
            "kappa": self.kappa,
            "sigma": self.sigma,
            "pump": self.pump.to_dict(),
            "mismatch": self.mismatch.to_dict(),
        }

    def __eq__(self, other):
        if not isinstance(other, CombConfig):
            return NotImplemented
        return (
            self.n_side == other.n_side
            and self.gamma == other.gamma
            and self.kappa == other.kappa
            and self.sigma == other.sigma
            and self.pump.kind == other.pump.kind
            and self.mismatch.kind == other.mismatch.kind
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.f, other.f)
        )

    __hash__ = None


def build_coupling_matrix(config):
    """Coupling matrix ``L[m, q] = f[m, q] * alpha[m + q]`` (zero when ``|m+q| > N``)."""
    return _frozen(config.f * config.alpha_ext[config.pump_index])


def _number(d, key, where, default=None, minimum=None, strict=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}: missing key {key!r}")
        return default
    val = d[key]
    if isinstance(val, str) and val.lower() in ("inf", "infinity"):
        val = math.inf
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    val = float(val)
    if minimum is not None and (val <= minimum if strict else val < minimum):
        op = ">" if strict else ">="
        raise ConfigError(f"{where}.{key}: must be {op} {minimum}, got {val}")
    return val


def config_from_dict(d, base_dir=None):
    """Parse the JSON config layout into a :class:`CombConfig`.

    Relative ``file`` entries are resolved against ``base_dir``.
    """
    if not isinstance(d, dict):
        raise ConfigError("config: top level must be an object")
    known = {"n_side", "gamma", "kappa", "sigma", "pump", "mismatch"}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"config: unknown keys {sorted(extra)}")
    if "n_side" not in d:
        raise ConfigError("config: missing key 'n_side'")
    n_side = d["n_side"]
    if isinstance(n_side, bool) or not isinstance(n_side, int) or n_side < 0:
        raise ConfigError(f"config.n_side: expected a non-negative integer, got {n_side!r}")
    gamma = _number(d, "gamma", "config", minimum=0.0, strict=True)
    kappa = _number(d, "kappa", "config", minimum=0.0)
    sigma = _number(d, "sigma", "config", minimum=0.0)

    def resolve(p):
        if p is None:
            return None
        p = Path(p)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        return p

    pump = d.get("pump", {"kind": "monochromatic"})
    if not isinstance(pump, dict) or "kind" not in pump:
        raise ConfigError("config.pump: expected an object with a 'kind' key")
    width = pump.get("width")
    if isinstance(width, str) and width.lower() in ("inf", "infinity"):
        width = math.inf
    pvals = pump.get("values")
    if pvals is not None and any(isinstance(v, (list, dict, str)) for v in pvals):
        raise ConfigError("config.pump.values: expected a flat list of real numbers")
    pump_spec = build_pump_spectrum(
        pump["kind"], n_side, width=width, values=pvals, file=resolve(pump.get("file"))
    )

    mis = d.get("mismatch", {"kind": "perfect"})
    if not isinstance(mis, dict) or "kind" not in mis:
        raise ConfigError("config.mismatch: expected an object with a 'kind' key")
    mm = build_mismatch(
        mis["kind"],
        n_side,
        u=_number(mis, "u", "config.mismatch", default=0.0),
        v=_number(mis, "v", "config.mismatch", default=0.0),
        w=_number(mis, "w", "config.mismatch", default=0.0),
        values=mis.get("values"),
        file=resolve(mis.get("file")),
    )
    return CombConfig(n_side, gamma, kappa, sigma, pump_spec, mm)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    return config_from_dict(d, base_dir=path.parent)


def make_config(n_side=0, gamma=1.0, kappa=1.0, sigma=2.0, pump="monochromatic",
                width=None, mismatch="perfect", u=0.0, v=0.0, w=0.0):
    """Shorthand for building a config in code."""
    return CombConfig(
        n_side, float(gamma), float(kappa), float(sigma),
        build_pump_spectrum(pump, n_side, width=width),
        build_mismatch(mismatch, n_side, u=u, v=v, w=w),
    )
