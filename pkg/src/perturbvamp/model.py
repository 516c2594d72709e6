"""Perturbed linear observation model.

    y = (A + sum_i e_i E_i) x + w,   e_i ~ N(0, 1/gamma_e),  w ~ N(0, I/gamma_w)

Folding the perturbation into the noise gives y = A x + z with the
signal-dependent covariance

    Gamma(x) = sum_i E_i x x^T E_i^T / gamma_e + I / gamma_w.

The perturbation families below never build more basis matrices than they
must: IID and matrix-restricted families work from closed forms, and the
circulant family works through FFTs of the signal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "DimensionError",
    "Kind",
    "PerturbationModel",
    "Problem",
    "covariance",
    "expected_covariance",
    "apply_perturbation",
    "sample_perturbation",
    "make_circulant",
]


class DimensionError(ValueError):
    """Raised when array shapes do not agree with the model dimensions."""


class Kind(str, enum.Enum):
    GENERIC = "generic"
    IID = "iid"
    CIRCULANT = "circulant"
    RESTRICTED = "restricted"


def make_circulant(a):
    """Circulant matrix whose first row is `a`; each row is the previous
    one rotated right by one place, so ``C[k, j] = a[(j - k) % N]``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size < 1:
        raise DimensionError("circulant generator must be a non-empty vector")
    n = a.size
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return a[idx]


def _as_vector(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise DimensionError(f"{name} has shape {v.shape}, expected ({n},)")
    return v


@dataclass(frozen=True, eq=False)
class PerturbationModel:
    """Known structure {E_i} of the sensing-matrix perturbation.

    Use the constructors :meth:`generic`, :meth:`iid`, :meth:`circulant`,
    :meth:`restricted` and :meth:`none` rather than the raw initializer.

    kind-specific storage:
      generic    -- ``basis`` with shape (q, M, N)
      iid        -- nothing; E_(i,j) is the single-entry indicator, q = M*N
      circulant  -- optional compression ``phi`` (M x N); E_i = phi @ S_i
                    with S_i the circulant generated by the i-th unit vector
      restricted -- ``D`` (M x m) and ``C`` (n x N); E_(i,j) = D u_i v_j^T C
    """

    kind: Kind
    shape: tuple[int, int]
    basis: np.ndarray | None = None
    phi: np.ndarray | None = None
    D: np.ndarray | None = None
    C: np.ndarray | None = None

    # -- constructors -------------------------------------------------

    @classmethod
    def generic(cls, basis, shape=None):
        basis = np.asarray(basis, dtype=float)
        if basis.ndim == 2:
            basis = basis[None]
        if basis.ndim != 3:
            raise DimensionError("basis must be a (q, M, N) stack of matrices")
        if basis.shape[0] == 0:
            if shape is None:
                raise DimensionError("an empty basis needs an explicit shape")
            basis = np.zeros((0, *shape))
        if shape is not None and tuple(basis.shape[1:]) != tuple(shape):
            raise DimensionError(f"basis matrices are {basis.shape[1:]}, expected {shape}")
        basis.setflags(write=False)
        return cls(Kind.GENERIC, (basis.shape[1], basis.shape[2]), basis=basis)

    @classmethod
    def none(cls, M, N):
        """Perturbation switched off (q = 0)."""
        return cls.generic(np.zeros((0, M, N)), shape=(M, N))

    @classmethod
    def iid(cls, M, N):
        return cls(Kind.IID, (int(M), int(N)))

    @classmethod
    def circulant(cls, N, phi=None):
        if phi is None:
            return cls(Kind.CIRCULANT, (int(N), int(N)))
        phi = np.array(phi, dtype=float)
        if phi.ndim != 2 or phi.shape[1] != N or phi.shape[0] > N:
            raise DimensionError(f"compression must be P x {N} with P <= {N}")
        phi.setflags(write=False)
        return cls(Kind.CIRCULANT, phi.shape, phi=phi)

    @classmethod
    def restricted(cls, D, C):
        D = np.array(D, dtype=float)
        C = np.array(C, dtype=float)
        if D.ndim != 2 or C.ndim != 2:
            raise DimensionError("D and C must be matrices")
        D.setflags(write=False)
        C.setflags(write=False)
        return cls(Kind.RESTRICTED, (D.shape[0], C.shape[1]), D=D, C=C)

    # -- structure ----------------------------------------------------

    @property
    def M(self):
        return self.shape[0]

    @property
    def N(self):
        return self.shape[1]

    @property
    def q(self):
        if self.kind is Kind.GENERIC:
            return self.basis.shape[0]
        if self.kind is Kind.IID:
            return self.M * self.N
        if self.kind is Kind.CIRCULANT:
            return self.N
        return self.D.shape[1] * self.C.shape[0]

    def expand(self):
        """Materialize every E_i; returns an equivalent generic model.

        Only meant for small dimensions (tests, cross-checks).
        """
        if self.kind is Kind.GENERIC:
            return self
        M, N = self.shape
        if self.kind is Kind.IID:
            basis = np.eye(M * N).reshape(M * N, M, N)
        elif self.kind is Kind.CIRCULANT:
            shifts = np.stack([make_circulant(u) for u in np.eye(N)])
            basis = shifts if self.phi is None else self.phi @ shifts
        else:
            m, n = self.D.shape[1], self.C.shape[0]
            basis = np.einsum("ai,jb->ijab", self.D, self.C).reshape(m * n, M, N)
        return PerturbationModel.generic(basis, shape=self.shape)

    def _compress(self, v):
        return v if self.phi is None else self.phi @ v

    def columns(self, x):
        """M x q matrix whose i-th column is E_i x (generic/circulant only)."""
        x = _as_vector(x, self.N, "x")
        if self.kind is Kind.GENERIC:
            q, M, N = self.basis.shape
            return (self.basis.reshape(q * M, N) @ x).reshape(q, M).T
        if self.kind is Kind.CIRCULANT:
            idx = (np.arange(self.N)[:, None] + np.arange(self.N)[None, :]) % self.N
            return self._compress(x[idx])
        return self.expand().columns(x)

    @cached_property
    def gram(self):
        """sum_i E_i E_i^T (M x M)."""
        M, N = self.shape
        if self.kind is Kind.GENERIC:
            G = np.zeros((M, M))
            for Ei in self.basis:
                G += Ei @ Ei.T
            return G
        if self.kind is Kind.IID:
            return N * np.eye(M)
        if self.kind is Kind.CIRCULANT:
            return N * (np.eye(N) if self.phi is None else self.phi @ self.phi.T)
        DDt = self.D @ self.D.T
        return np.sum(self.C**2) * DDt

    def outer_sum(self, x):
        """sum_i (E_i x)(E_i x)^T (M x M)."""
        x = _as_vector(x, self.N, "x")
        M, N = self.shape
        if self.kind is Kind.GENERIC:
            B = self.columns(x)
            return B @ B.T
        if self.kind is Kind.IID:
            return (x @ x) * np.eye(M)
        if self.kind is Kind.CIRCULANT:
            # the shifted copies of x span a circulant whose Gram matrix has
            # the circular autocorrelation of x as generator
            power = np.abs(np.fft.rfft(x)) ** 2
            if self.phi is None:
                return make_circulant(np.fft.irfft(power, n=N))
            left = np.fft.irfft(np.fft.rfft(self.phi, axis=1) * power, n=N, axis=1)
            return left @ self.phi.T
        Cx = self.C @ x
        return (Cx @ Cx) * (self.D @ self.D.T)

    def matrix(self, e):
        """The dense perturbation sum_i e_i E_i (M x N)."""
        e = _as_vector(e, self.q, "e")
        M, N = self.shape
        if self.kind is Kind.GENERIC:
            return np.tensordot(e, self.basis, axes=1) if self.q else np.zeros((M, N))
        if self.kind is Kind.IID:
            return e.reshape(M, N).copy()
        if self.kind is Kind.CIRCULANT:
            if self.phi is None:
                return make_circulant(e)
            # rows of phi circularly convolved with e
            return np.fft.irfft(np.fft.rfft(self.phi, axis=1) * np.fft.rfft(e), n=N, axis=1)
        return self.D @ e.reshape(self.D.shape[1], self.C.shape[0]) @ self.C


def covariance(p: PerturbationModel, gamma_e, gamma_w, x):
    """Noise covariance Gamma(x) of the equivalent model y = A x + z."""
    x = _as_vector(x, p.N, "x")
    _check_precisions(gamma_e, gamma_w)
    Gamma = np.eye(p.M) / gamma_w
    if p.q and gamma_e < np.inf:
        Gamma += p.outer_sum(x) / gamma_e
    return _symmetrize(Gamma)


def expected_covariance(p: PerturbationModel, gamma_e, gamma_w, r2, gamma2):
    """E[Gamma(x)] for x ~ N(r2, I/gamma2).

    Equals ``covariance(p, gamma_e, gamma_w, r2)`` plus
    ``gram / (gamma_e * gamma2)``.
    """
    if not gamma2 > 0:
        raise ValueError(f"gamma2 must be positive, got {gamma2}")
    Gamma = covariance(p, gamma_e, gamma_w, r2)
    if p.q and gamma_e < np.inf:
        Gamma += p.gram / (gamma_e * gamma2)
    return _symmetrize(Gamma)


def apply_perturbation(p: PerturbationModel, e, x):
    """(sum_i e_i E_i) x without forming the summed matrix where avoidable."""
    e = _as_vector(e, p.q, "e")
    x = _as_vector(x, p.N, "x")
    M, N = p.shape
    if p.q == 0:
        return np.zeros(M)
    if p.kind is Kind.GENERIC:
        return p.columns(x) @ e
    if p.kind is Kind.IID:
        return e.reshape(M, N) @ x
    if p.kind is Kind.CIRCULANT:
        # sum_i e_i x[(k + i) % N] is a circular cross-correlation
        corr = np.fft.irfft(np.conj(np.fft.rfft(e)) * np.fft.rfft(x), n=N)
        return p._compress(corr)
    return p.D @ (e.reshape(p.D.shape[1], p.C.shape[0]) @ (p.C @ x))


def sample_perturbation(p: PerturbationModel, gamma_e, rng_seed):
    """q i.i.d. draws from N(0, 1/gamma_e)."""
    rng = np.random.default_rng(rng_seed)
    return rng.standard_normal(p.q) / np.sqrt(gamma_e)


def _check_precisions(gamma_e, gamma_w):
    if not (gamma_e > 0 and gamma_w > 0):
        raise ValueError("precisions gamma_e and gamma_w must be positive")


def _symmetrize(S):
    return 0.5 * (S + S.T)


@dataclass(frozen=True, eq=False)
class Problem:
    """Measurements y of x through the nominal matrix A.

    ``check_norm`` enforces ||A||_F^2 = N; turn it off for matrices that are
    deliberately off-normalization, e.g. the realized perturbed matrix handed
    to an oracle run.
    """

    y: np.ndarray
    A: np.ndarray
    gamma_w: float
    gamma_e: float
    perturbation: PerturbationModel = None
    check_norm: bool = field(default=True, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or min(A.shape) < 1:
            raise DimensionError("A must be a non-empty matrix")
        if y.shape != (A.shape[0],):
            raise DimensionError(f"y has shape {y.shape}, expected ({A.shape[0]},)")
        _check_precisions(self.gamma_e, self.gamma_w)
        if self.check_norm:
            fro2 = np.sum(A**2)
            if abs(fro2 - A.shape[1]) > 1e-6 * A.shape[1]:
                raise ValueError(f"||A||_F^2 = {fro2:.6g}, expected N = {A.shape[1]}")
        pert = self.perturbation
        if pert is None:
            pert = PerturbationModel.none(*A.shape)
        if pert.shape != A.shape:
            raise DimensionError(f"perturbation shape {pert.shape} != A shape {A.shape}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "perturbation", pert)

    @property
    def M(self):
        return self.A.shape[0]

    @property
    def N(self):
        return self.A.shape[1]
