"""Whitening of a colored-noise Gaussian likelihood.

N(y; A x, Gamma) is turned into the equivalent N(y2; A2 x, I/gamma_w2) with
``||A2||_F^2 = N``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = ["SingularCovarianceError", "WhitenedModel", "inv_sqrt", "whiten"]


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class WhitenedModel:
    y2k: np.ndarray
    A2k: np.ndarray
    gamma_w2k: float


def inv_sqrt(S):
    """Symmetric inverse square root S^(-1/2) via eigendecomposition."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("S must be square")
    lam, V = np.linalg.eigh(0.5 * (S + S.T))
    floor = np.finfo(float).eps * np.abs(lam).max(initial=0.0)
    if lam.size and lam[0] <= floor:
        raise SingularCovarianceError(f"covariance is not positive definite (min eigenvalue {lam[0]:.3g})")
    R = (V / np.sqrt(lam)) @ V.T
    R = 0.5 * (R + R.T)
    # one symmetric Newton step on R S R = I; eigenvector rounding otherwise
    # leaves an O(eps cond(S)) error in the weak directions
    E = np.eye(S.shape[0]) - R @ S @ R
    R = R + 0.25 * (R @ E + E @ R)
    return 0.5 * (R + R.T)


def whiten(y, A, Gamma2k, method="eigh"):
    """Whiten (y, A) against the noise covariance Gamma2k.

    ``method="eigh"`` applies the symmetric root Gamma^(-1/2).
    ``method="cholesky"`` applies L^(-1) with Gamma = L L^T instead: the
    whitened model differs by an orthogonal rotation of the rows, so the
    likelihood in x and gamma_w2k are unchanged, at a fraction of the cost
    for large M.
    """
    y = np.asarray(y, dtype=float)
    A = np.asarray(A, dtype=float)
    M, N = A.shape
    if y.shape != (M,) or np.shape(Gamma2k) != (M, M):
        raise ValueError("y, A and Gamma2k have inconsistent dimensions")
    if method == "eigh":
        W = inv_sqrt(Gamma2k)
        Wy, WA = W @ y, W @ A
    elif method == "cholesky":
        try:
            L = scipy.linalg.cholesky(Gamma2k, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularCovarianceError(str(exc)) from exc
        Wy = scipy.linalg.solve_triangular(L, y, lower=True, check_finite=False)
        WA = scipy.linalg.solve_triangular(L, A, lower=True, check_finite=False)
    else:
        raise ValueError(f"unknown whitening method {method!r}")
    gamma_w2k = np.sum(WA**2) / N
    scale = 1.0 / np.sqrt(gamma_w2k)
    return WhitenedModel(y2k=scale * Wy, A2k=scale * WA, gamma_w2k=gamma_w2k)
