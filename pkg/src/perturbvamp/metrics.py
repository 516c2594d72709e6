"""Reconstruction quality in decibels."""

import numpy as np

__all__ = ["NMSE_FLOOR_DB", "PSNR_CAP_DB", "nmse_db", "psnr_db"]

NMSE_FLOOR_DB = -400.0
PSNR_CAP_DB = 400.0


def nmse_db(x_true, x_hat):
    """10 log10(||x - xhat||^2 / ||x||^2); an exact match returns NMSE_FLOOR_DB."""
    x_true = np.asarray(x_true, dtype=float)
    ref = np.sum(x_true**2)
    if ref == 0:
        raise ValueError("NMSE is undefined for an all-zero reference")
    err = np.sum((x_true - np.asarray(x_hat, dtype=float)) ** 2)
    if err == 0:
        return NMSE_FLOOR_DB
    return max(10.0 * np.log10(err / ref), NMSE_FLOOR_DB)


def psnr_db(x_true, x_hat):
    """10 log10(peak^2 N / ||x - xhat||^2) with peak = max |x_true|."""
    x_true = np.asarray(x_true, dtype=float)
    err = np.sum((x_true - np.asarray(x_hat, dtype=float)) ** 2)
    if err == 0:
        return PSNR_CAP_DB
    peak = np.max(np.abs(x_true))
    return min(10.0 * np.log10(peak**2 * x_true.size / err), PSNR_CAP_DB)
