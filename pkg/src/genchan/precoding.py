"""Spatially sparse hybrid precoding by OMP and spectral efficiency.

The analog precoder ``F_RF`` picks columns from a dictionary of transmit
array responses; the digital precoder ``F_BB`` is a least-squares fit to the
unconstrained optimum (the dominant right singular vectors of the channel).
"""
from dataclasses import dataclass

import numpy as np

from .channel import ArrayGeometry, steering_matrix
from .errors import ArgumentError
from .linalg import svd


@dataclass(frozen=True)
class PrecodingDictionary:
    atoms: np.ndarray
    angles: np.ndarray

    @property
    def n_cand(self):
        return self.atoms.shape[1]


@dataclass(frozen=True)
class HybridPrecoder:
    f_rf: np.ndarray
    f_bb: np.ndarray
    atom_indices: tuple
    reduced_rank: bool = False

    @property
    def n_s(self):
        return self.f_bb.shape[1]

    @property
    def matrix(self):
        return self.f_rf @ self.f_bb


def build_dictionary(geometry, n_cand):
    """Steering vectors on the grid ``sin(phi_g) = -1 + 2 g / n_cand``."""
    if n_cand < 1:
        raise ArgumentError("n_cand must be >= 1")
    if not isinstance(geometry, ArrayGeometry):
        raise ArgumentError("geometry must be an ArrayGeometry")
    angles = np.arcsin(-1.0 + 2.0 * np.arange(n_cand) / n_cand)
    return PrecodingDictionary(atoms=steering_matrix(geometry, angles), angles=angles)


def optimal_precoder(h, n_s):
    """Top ``n_s`` right singular vectors of ``h`` and whether ``h`` has rank below ``n_s``."""
    h = np.asarray(h)
    if n_s > min(h.shape):
        raise ArgumentError(f"n_s={n_s} exceeds min(N_r, N_t)={min(h.shape)}")
    r = svd(h)
    reduced = bool(np.count_nonzero(r.s > r.s[0] * 1e-10) < n_s) if r.s[0] > 0 else True
    return r.V[:, :n_s], reduced


def hybrid_precoder_omp(h_hat, dictionary, n_rf=None, n_s=None, snr=None):
    """Greedy analog/digital factorization of the unconstrained optimal precoder.

    Parameters
    ----------
    h_hat : ndarray (N_r, N_t)
        Channel used for design, often an estimate.
    dictionary : PrecodingDictionary
    n_rf, n_s : int, optional
        RF chains and streams; ``n_s`` defaults to ``min(N_r, N_t)`` and
        ``n_rf`` to ``n_s``.
    snr : float, optional
        Unused by the equal-power design; accepted for interface symmetry.

    Returns
    -------
    HybridPrecoder
        Scaled so that ``||F_RF F_BB||_F^2 = n_s``.
    """
    h_hat = np.asarray(h_hat)
    if h_hat.shape[1] != dictionary.atoms.shape[0]:
        raise ArgumentError(f"channel has {h_hat.shape[1]} tx antennas, dictionary {dictionary.atoms.shape[0]}")
    n_s = min(h_hat.shape) if n_s is None else n_s
    n_rf = n_s if n_rf is None else n_rf
    if not 1 <= n_s <= n_rf <= dictionary.n_cand:
        raise ArgumentError(f"need 1 <= n_s ({n_s}) <= n_rf ({n_rf}) <= n_cand ({dictionary.n_cand})")
    f_opt, reduced = optimal_precoder(h_hat, n_s)
    atoms = dictionary.atoms
    chosen = []
    f_res = f_opt
    f_bb = np.zeros((0, n_s), dtype=complex)
    for _ in range(n_rf):
        psi = atoms.conj().T @ f_res
        k = int(np.argmax(np.sum(np.abs(psi) ** 2, axis=1)))
        chosen.append(k)
        f_rf = atoms[:, chosen]
        f_bb = np.linalg.lstsq(f_rf, f_opt, rcond=None)[0]
        res = f_opt - f_rf @ f_bb
        norm = np.linalg.norm(res)
        if norm <= 1e-12 * np.sqrt(n_s):
            break
        f_res = res / norm
    f_rf = atoms[:, chosen]
    total = np.linalg.norm(f_rf @ f_bb)
    if total > 0:
        f_bb = f_bb * (np.sqrt(n_s) / total)
    return HybridPrecoder(f_rf=f_rf, f_bb=f_bb, atom_indices=tuple(chosen), reduced_rank=reduced)


def digital_precoder(h, n_s=None):
    """Fully digital optimum ``V[:, :n_s]``; its squared Frobenius norm is already ``n_s``."""
    n_s = min(np.shape(h)) if n_s is None else n_s
    f_opt, reduced = optimal_precoder(h, n_s)
    return HybridPrecoder(f_rf=f_opt, f_bb=np.eye(n_s, dtype=complex), atom_indices=(), reduced_rank=reduced)


def spectral_efficiency(h_true, precoder, snr):
    """``log2 det(I + snr/N_s F^H H^H H F)`` in bps/Hz, with linear ``snr``."""
    if snr <= 0:
        raise ArgumentError("snr must be > 0 (linear)")
    f = precoder.matrix if isinstance(precoder, HybridPrecoder) else np.asarray(precoder)
    h = np.asarray(h_true)
    if h.shape[1] != f.shape[0]:
        raise ArgumentError(f"channel has {h.shape[1]} tx antennas, precoder {f.shape[0]}")
    n_s = f.shape[1]
    hf = h @ f
    gram = np.eye(n_s) + (snr / n_s) * (hf.conj().T @ hf)
    _, logdet = np.linalg.slogdet(gram)
    return float(logdet / np.log(2.0))
