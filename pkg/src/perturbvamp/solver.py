"""Vector AMP for a perturbed sensing matrix.

Three modes share one loop:

* ``oracle`` -- plain VAMP on whatever matrix the problem carries (the
  harness hands it the realized perturbed matrix);
* ``pi`` -- plain VAMP on the nominal matrix, perturbation ignored;
* ``pc`` -- perturbation corrected: before every LMMSE step the noise
  covariance is replaced by its expectation under the current message and
  the model is whitened against it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .denoiser import GAMMA_MIN, BernoulliGaussianPrior, denoise, extrinsic
from .metrics import nmse_db
from .model import Kind, Problem, expected_covariance
from .whitening import whiten

__all__ = [
    "DivergenceError",
    "IterationRecord",
    "Mode",
    "RunTrace",
    "VampConfig",
    "VampState",
    "lmmse",
    "run",
]


class Mode(str, enum.Enum):
    ORACLE = "oracle"
    PI = "pi"
    PC = "pc"


class DivergenceError(RuntimeError):
    """Non-finite iterate; ``records`` holds the iterations completed before it."""

    def __init__(self, iteration, what="state", records=()):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration
        self.records = list(records)


@dataclass(frozen=True)
class VampConfig:
    """Solver settings.

    damping multiplies the new (r, gamma) messages, ``1.0`` means undamped.
    stop_tol > 0 ends the run once the relative change of xhat1 drops below
    it; with the default 0 exactly ``max_iters`` iterations are run.
    whitening picks the factorization used in pc mode ("eigh" or
    "cholesky"); both give the same iterates up to rounding.
    """

    mode: Mode = Mode.PC
    max_iters: int = 60
    gamma1_init: float = 1e-4
    r1_init: np.ndarray | None = None
    gamma_min: float = GAMMA_MIN
    damping: float = 1.0
    stop_tol: float = 0.0
    whitening: str = "eigh"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not self.gamma1_init > 0:
            raise ValueError("gamma1_init must be positive")
        if not self.gamma_min > 0:
            raise ValueError("gamma_min must be positive")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be non-negative")


@dataclass
class VampState:
    r1: np.ndarray
    gamma1: float
    xhat1: np.ndarray
    eta1: float
    r2: np.ndarray
    gamma2: float
    xhat2: np.ndarray
    eta2: float
    iteration: int


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    nmse_db: float | None
    eta1: float
    eta2: float
    gamma1: float
    gamma2: float
    clamp_count: int


@dataclass
class RunTrace:
    records: list[IterationRecord]
    xhat: np.ndarray
    mode: Mode
    states: list[VampState] = field(default_factory=list, repr=False)

    @property
    def nmse(self):
        return np.array([r.nmse_db for r in self.records], dtype=float)

    @property
    def clamp_total(self):
        return sum(r.clamp_count for r in self.records)

    @property
    def final_nmse_db(self):
        return self.records[-1].nmse_db


def lmmse(A2k, y2k, gamma_w2k, r2, gamma2):
    """Posterior mean and averaged precision for y2k = A2k x + N(0, I/gamma_w2k)
    under the prior x ~ N(r2, I/gamma2).

    Solves the M x M (push-through) system when M < N, otherwise the N x N
    normal equations; both via Cholesky.
    """
    A = np.asarray(A2k, dtype=float)
    M, N = A.shape
    if not (gamma_w2k > 0 and gamma2 > 0):
        raise ValueError("gamma_w2k and gamma2 must be positive")
    resid = y2k - A @ r2
    try:
        if M < N:
            K = A @ A.T
            K[np.diag_indices(M)] += gamma2 / gamma_w2k
            L = scipy.linalg.cholesky(K, lower=True, check_finite=False)
            xhat = r2 + A.T @ scipy.linalg.cho_solve((L, True), resid, check_finite=False)
            trace = (N - M) / gamma2 + _trace_inv_chol(L) / gamma_w2k
        else:
            Q = gamma_w2k * (A.T @ A)
            Q[np.diag_indices(N)] += gamma2
            L = scipy.linalg.cholesky(Q, lower=True, check_finite=False)
            xhat = r2 + scipy.linalg.cho_solve((L, True), gamma_w2k * (A.T @ resid), check_finite=False)
            trace = _trace_inv_chol(L)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"LMMSE system is numerically singular: {exc}") from exc
    return xhat, N / trace


def _trace_inv_chol(L):
    # tr((L L^T)^-1) = ||L^-1||_F^2
    Linv, info = lapack.dtrtri(L, lower=1)
    if info != 0:
        raise np.linalg.LinAlgError("singular Cholesky factor")
    return np.sum(np.tril(Linv) ** 2)


class _ScalarNoiseLmmse:
    """LMMSE for a fixed matrix and white noise; one SVD serves every iteration."""

    def __init__(self, A, y):
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        self.s, self.Vt = s, Vt
        self.Uty = U.T @ y
        self.N = A.shape[1]

    def __call__(self, gamma_w, r2, gamma2):
        s = self.s
        d = gamma_w * s**2 + gamma2
        coef = gamma_w * s * (self.Uty - s * (self.Vt @ r2)) / d
        xhat = r2 + self.Vt.T @ coef
        trace = np.sum(1.0 / d) + (self.N - s.size) / gamma2
        return xhat, self.N / trace


def _damp(new, old, damping):
    if old is None or damping == 1.0:
        return new
    return damping * new + (1.0 - damping) * old


def run(problem: Problem, prior: BernoulliGaussianPrior, config: VampConfig = VampConfig(),
        truth=None, keep_states=False):
    """Iterate denoise -> extrinsic -> (whiten) -> LMMSE -> extrinsic.

    Returns a :class:`RunTrace` whose ``xhat`` is the last denoiser output.
    Raises :class:`DivergenceError` on non-finite iterates.
    """
    A, y = problem.A, problem.y
    N = problem.N
    mode = config.mode
    pert = problem.perturbation
    gamma_w, gamma_e = problem.gamma_w, problem.gamma_e

    # with gamma_e = inf the covariance is exactly I / gamma_w: nothing to whiten
    perturbed = mode is Mode.PC and pert.q > 0 and gamma_e < np.inf
    iid_fast = perturbed and pert.kind is Kind.IID
    scalar_solver = None if (perturbed and not iid_fast) else _ScalarNoiseLmmse(A, y)

    r1 = np.zeros(N) if config.r1_init is None else np.array(config.r1_init, dtype=float)
    if r1.shape != (N,):
        raise ValueError(f"r1_init must have length {N}")
    gamma1 = config.gamma1_init
    r2 = gamma2 = None
    xhat_prev = None
    records, states = [], []

    for k in range(config.max_iters):
        clamps = 0
        xhat1, eta1 = denoise(prior, r1, gamma1, warn=False)
        r2_new, gamma2_new, c = extrinsic(xhat1, eta1, r1, gamma1, config.gamma_min)
        clamps += c
        r2 = _damp(r2_new, r2, config.damping)
        gamma2 = _damp(gamma2_new, gamma2, config.damping)

        if not perturbed:
            xhat2, eta2 = scalar_solver(gamma_w, r2, gamma2)
        elif iid_fast:
            # Gamma2k is a multiple of the identity: whitening reduces to a scalar
            gamma_eq = 1.0 / (1.0 / gamma_w + (r2 @ r2 + N / gamma2) / gamma_e)
            xhat2, eta2 = scalar_solver(gamma_eq, r2, gamma2)
        else:
            Gamma2k = expected_covariance(pert, gamma_e, gamma_w, r2, gamma2)
            wm = whiten(y, A, Gamma2k, method=config.whitening)
            xhat2, eta2 = lmmse(wm.A2k, wm.y2k, wm.gamma_w2k, r2, gamma2)

        if not (np.isfinite(eta2) and np.all(np.isfinite(xhat2))):
            raise DivergenceError(k, "LMMSE output", records)
        r1_new, gamma1_new, c = extrinsic(xhat2, eta2, r2, gamma2, config.gamma_min)
        clamps += c
        if keep_states:
            states.append(VampState(r1, gamma1, xhat1, eta1, r2, gamma2, xhat2, eta2, k))
        r1 = _damp(r1_new, r1, config.damping)
        gamma1 = _damp(gamma1_new, gamma1, config.damping)

        if not (np.all(np.isfinite(r1)) and np.isfinite(gamma1) and np.all(np.isfinite(xhat1))
                and np.isfinite(eta1)):
            raise DivergenceError(k, "state", records)
        nmse = None if truth is None else nmse_db(truth, xhat1)
        records.append(IterationRecord(k, nmse, eta1, eta2, gamma1, gamma2, clamps))

        if config.stop_tol > 0 and xhat_prev is not None:
            ref = np.linalg.norm(xhat_prev)
            if np.linalg.norm(xhat1 - xhat_prev) <= config.stop_tol * max(ref, np.finfo(float).tiny):
                xhat_prev = xhat1
                break
        xhat_prev = xhat1

    return RunTrace(records=records, xhat=xhat1, mode=mode, states=states)
