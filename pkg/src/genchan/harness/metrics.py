"""Normalized error metrics."""
import numpy as np

from ..errors import ArgumentError
from ..gce import optimal_scale

DB_FLOOR = -120.0


def to_db(x, floor=DB_FLOOR):
    """``10 log10(x)`` clamped below at ``floor`` (so an exact match reports finitely)."""
    if x <= 0:
        return floor
    return max(10.0 * float(np.log10(x)), floor)


def nmse(h_true, h_hat):
    """``||H - H_hat||_F^2 / ||H||_F^2`` (linear)."""
    h_true, h_hat = np.asarray(h_true), np.asarray(h_hat)
    if h_true.shape != h_hat.shape:
        raise ArgumentError(f"shape mismatch {h_true.shape} vs {h_hat.shape}")
    energy = np.vdot(h_true, h_true).real
    if energy == 0:
        raise ArgumentError("NMSE is undefined for a zero reference channel")
    d = h_true - h_hat
    return float(np.vdot(d, d).real / energy)


def scaled_nmse(h_true, h_hat):
    """NMSE after the optimal complex rescaling of ``h_hat``; a zero estimate scores 1."""
    h_hat = np.asarray(h_hat)
    if not np.any(h_hat):
        return nmse(h_true, h_hat)
    return nmse(h_true, optimal_scale(h_true, h_hat) * h_hat)


def nmse_db(h_true, h_hat):
    return to_db(nmse(h_true, h_hat))
