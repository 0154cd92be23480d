"""Shear-building matrices, Rayleigh damping and small-amplitude modal analysis."""
from __future__ import annotations

import numpy as np
from scipy import linalg


def shear_building_matrices(masses, stiffnesses):
    """Lumped mass and tridiagonal stiffness matrices of a shear building.

    Story ``i`` connects floor ``i`` to floor ``i-1`` (floor 0 is the ground).
    """
    m = np.asarray(masses, dtype=float)
    k = np.asarray(stiffnesses, dtype=float)
    if m.shape != k.shape or m.ndim != 1:
        raise ValueError("masses and stiffnesses must be 1-D arrays of equal length")
    n = m.size
    K = np.zeros((n, n))
    for i in range(n):
        K[i, i] += k[i]
        if i + 1 < n:
            K[i, i] += k[i + 1]
            K[i, i + 1] = K[i + 1, i] = -k[i + 1]
    return np.diag(m), K


def rayleigh_damping(c_m: float, c_k: float, M, K) -> np.ndarray:
    """``C = c_m M + c_k K``."""
    M = np.asarray(M, dtype=float)
    K = np.asarray(K, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape != K.shape:
        raise ValueError(f"M and K must be square and of equal shape, got {M.shape}, {K.shape}")
    return c_m * M + c_k * K


def _eig(M, K):
    M = np.asarray(M, dtype=float)
    K = np.asarray(K, dtype=float)
    if M.shape != K.shape or M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M and K must be square and of equal shape")
    try:
        lam, phi = linalg.eigh(K, M)
    except linalg.LinAlgError as exc:
        raise RuntimeError(f"generalized eigenproblem did not converge: {exc}") from exc
    return lam, phi


def modal_frequencies(M, K) -> np.ndarray:
    """Natural frequencies in Hz, ascending."""
    lam, _ = _eig(M, K)
    return np.sqrt(np.clip(lam, 0.0, None)) / (2.0 * np.pi)


def modal_damping_ratios(M, K, C) -> np.ndarray:
    """Modal damping ratios ``phi^T C phi / (2 omega)`` for mass-normalized modes."""
    lam, phi = _eig(M, K)
    omega = np.sqrt(lam)
    c_modal = np.einsum("ij,jk,ki->i", phi.T, np.asarray(C, dtype=float), phi)
    return c_modal / (2.0 * omega)
