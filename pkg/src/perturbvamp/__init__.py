"""Vector approximate message passing for sparse recovery when the sensing
matrix carries a structured, unknown perturbation."""

__version__ = "0.1.0"

from .denoiser import BernoulliGaussianPrior, denoise, extrinsic
from .metrics import nmse_db, psnr_db
from .model import (
    PerturbationModel,
    Problem,
    apply_perturbation,
    covariance,
    expected_covariance,
    make_circulant,
    sample_perturbation,
)
from .solver import Mode, RunTrace, VampConfig, lmmse, run
from .whitening import inv_sqrt, whiten

__all__ = [
    "BernoulliGaussianPrior",
    "Mode",
    "PerturbationModel",
    "Problem",
    "RunTrace",
    "VampConfig",
    "apply_perturbation",
    "covariance",
    "denoise",
    "expected_covariance",
    "extrinsic",
    "inv_sqrt",
    "lmmse",
    "make_circulant",
    "nmse_db",
    "psnr_db",
    "run",
    "sample_perturbation",
    "whiten",
]
