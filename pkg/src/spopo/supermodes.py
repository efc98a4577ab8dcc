"""Eigen-analysis of the coupling matrix: supermodes and the oscillation threshold."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SupermodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class SupermodeBasis:
    """Eigenpairs of the coupling matrix, ordered by decreasing ``|eigenvalue|``.

    Columns of ``eigenvectors`` are orthonormal.  Ties in ``|eigenvalue|`` put
    positive eigenvalues first; degenerate eigenspaces use a canonical
    echelon-like basis and every vector has its first nonzero entry positive.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    threshold_sigma: float

    @property
    def leading(self):
        return self.eigenvectors[:, 0]

    def reconstruct(self):
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def _fix_sign(v, tol):
    nz = np.flatnonzero(np.abs(v) > tol)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _canonical_basis(V, tol):
    """Deterministic orthonormal basis of span(V), independent of the solver's rotation."""
    k = V.shape[1]
    if k == 1:
        return V
    P = V @ V.T
    out = []
    for i in range(P.shape[0]):
        x = P[:, i].copy()
        for b in out:
            x -= (b @ x) * b
        nrm = np.linalg.norm(x)
        if nrm > 1e-6:
            out.append(x / nrm)
            if len(out) == k:
                break
    B = np.column_stack(out)
    # one re-orthogonalization pass
    B, _ = np.linalg.qr(B)
    return B


def decompose(L, degeneracy_tol=1e-10):
    """Full real eigendecomposition of a symmetric coupling matrix.

    Returns
    -------
    SupermodeBasis
        ``threshold_sigma`` is ``1/Lambda_0`` when the leading eigenvalue is
        positive and ``inf`` otherwise.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise SupermodeError(f"coupling matrix must be square, got shape {L.shape}")
    if not np.all(np.isfinite(L)):
        raise SupermodeError("coupling matrix has non-finite entries")
    scale = max(np.max(np.abs(L)), 1.0) if L.size else 1.0
    if np.max(np.abs(L - L.T), initial=0.0) > 1e-12 * scale:
        raise SupermodeError("coupling matrix is not symmetric")
    try:
        lam, V = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise SupermodeError(f"eigensolver failed to converge: {exc}") from exc

    order = np.lexsort((-lam, -np.abs(lam)))
    lam, V = lam[order], V[:, order]

    tol = degeneracy_tol * scale
    i = 0
    while i < len(lam):
        j = i + 1
        while j < len(lam) and abs(lam[j] - lam[i]) <= tol:
            j += 1
        V[:, i:j] = _canonical_basis(V[:, i:j], 1e-12)
        lam[i:j] = lam[i]
        i = j
    for c in range(V.shape[1]):
        V[:, c] = _fix_sign(V[:, c], 1e-12)

    lam.setflags(write=False)
    V.setflags(write=False)
    lead = lam[0] if len(lam) else 0.0
    thr = 1.0 / lead if lead > tol else math.inf
    return SupermodeBasis(lam, V, thr)


def below_threshold_spectrum(basis, config, k, omega):
    """Quadrature noise spectra of supermode ``k`` below threshold.

    The spectra come from the generic linearized model evaluated at the
    trivial solution.  Returns ``(V_minus, V_plus)``: the squeezed and the
    anti-squeezed output spectrum of the horizontal (TEM10) component of the
    supermode; the vertical component has identical spectra.
    """
    from .linear import build_linear_model, numeric_spectrum, supermode_quadratures
    from .steady import trivial_state

    if config.sigma * np.max(np.abs(basis.eigenvalues)) >= 1.0:
        raise ValueError(
            f"sigma={config.sigma} is at or above threshold "
            f"(max |Lambda| = {np.max(np.abs(basis.eigenvalues))}); the trivial solution is unstable"
        )
    model = build_linear_model(config, trivial_state(config))
    qx, qy = supermode_quadratures(basis.eigenvectors[:, k])
    vx = numeric_spectrum(model, qx, omega, label=f"X_{k}").values
    vy = numeric_spectrum(model, qy, omega, label=f"Y_{k}").values
    if basis.eigenvalues[k] >= 0:
        return vy, vx
    return vx, vy
