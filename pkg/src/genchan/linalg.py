"""Complex dense linear algebra: Kronecker products, vectorization, SVD.

Vectorization is column-major everywhere, so that
``vec(A @ B @ C) == kron(C.T, A) @ vec(B)``.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ArgumentError, NumericalError, SizingError

MAX_ELEMENTS = 10**8

SVD_MAX_SWEEPS = 100
SVD_TOL = 1e-12
SIGMA_CUT = 1e-10


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``M = U @ diag(s) @ V^H`` with ``s`` sorted descending."""

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray
    sweeps: int = 0

    @property
    def singular_values(self):
        return self.s

    def reconstruct(self):
        return (self.U * self.s) @ self.V.conj().T


def _as_matrix(m, name="M"):
    m = np.asarray(m)
    if m.ndim != 2 or m.size == 0:
        raise ArgumentError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    return m


def kron(a, b, max_elements=MAX_ELEMENTS):
    a = _as_matrix(a, "A")
    b = _as_matrix(b, "B")
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows * cols > max_elements:
        raise SizingError(f"kron result {rows}x{cols} exceeds {max_elements} elements")
    # out[i*pb + p, j*qb + q] = a[i, j] * b[p, q]
    out = a[:, None, :, None] * b[None, :, None, :]
    return out.reshape(rows, cols)


def vec(m):
    m = _as_matrix(m)
    return m.reshape(-1, order="F")


def unvec(v, rows, cols):
    v = np.asarray(v)
    if v.ndim != 1 or v.size != rows * cols:
        raise ArgumentError(f"cannot unvec length {v.size} into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


@lru_cache(maxsize=64)
def _round_robin(p):
    """Disjoint column pairings covering every pair once (circle method)."""
    n = p + (p % 2)
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        left, right = [], []
        for k in range(n // 2):
            i, j = players[k], players[n - 1 - k]
            if i < p and j < p:
                left.append(min(i, j))
                right.append(max(i, j))
        rounds.append((np.array(left, dtype=int), np.array(right, dtype=int)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _jacobi_tall(a, max_sweeps, tol):
    """One-sided (Hestenes) Jacobi on a tall matrix, columns rotated in place."""
    m, p = a.shape
    v = np.eye(p, dtype=a.dtype)
    if p == 1:
        return a, v, 0
    scale = np.max(np.abs(a))
    if scale == 0.0:
        return a, v, 0
    rounds = _round_robin(p)
    # columns below this energy are numerically zero and left untouched
    floor = (np.finfo(float).eps * scale) ** 2 * m
    for sweep in range(1, max_sweeps + 1):
        worst = 0.0
        for left, right in rounds:
            ai, aj = a[:, left], a[:, right]
            alpha = np.einsum("ij,ij->j", ai.conj(), ai).real
            beta = np.einsum("ij,ij->j", aj.conj(), aj).real
            gamma = np.einsum("ij,ij->j", ai.conj(), aj)
            g = np.abs(gamma)
            live = (alpha > floor) & (beta > floor)
            off = np.zeros_like(g)
            off[live] = g[live] / np.sqrt(alpha[live] * beta[live])
            worst = max(worst, float(off.max(initial=0.0)))
            act = live & (off > tol)
            if not act.any():
                continue
            g_safe = np.where(act, g, 1.0)
            zeta = (beta - alpha) / (2.0 * g_safe)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t = np.where(act, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            phase = np.where(act, gamma / g_safe, 1.0)
            for mat in (a, v):
                xi, xj = mat[:, left], mat[:, right]
                mat[:, left] = c * xi - (s * phase.conj()) * xj
                mat[:, right] = (s * phase) * xi + c * xj
        if worst <= tol:
            return a, v, sweep
    raise NumericalError(f"Jacobi SVD did not converge in {max_sweeps} sweeps", iterations=max_sweeps)


def _complete_columns(u, good):
    """Replace columns of ``u`` not in ``good`` with an orthonormal completion."""
    k = u.shape[1]
    n_good = int(good.sum())
    if n_good == k:
        return u
    base = u[:, good]
    if n_good:
        q, _ = np.linalg.qr(base, mode="complete")
        extra = q[:, n_good:k]
    else:
        extra = np.eye(u.shape[0], k, dtype=u.dtype)
    out = u.copy()
    out[:, ~good] = extra[:, : k - n_good]
    return out


def svd(m, max_sweeps=SVD_MAX_SWEEPS, tol=SVD_TOL):
    """Thin SVD by one-sided Jacobi with round-robin (parallel) ordering.

    Raises
    ------
    NumericalError
        If the off-diagonal measure does not fall below ``tol`` within
        ``max_sweeps`` sweeps.
    """
    m = _as_matrix(m)
    if not np.all(np.isfinite(m)):
        raise ArgumentError("svd input contains non-finite entries")
    a = np.array(m, dtype=np.complex128)
    flip = a.shape[0] < a.shape[1]
    if flip:
        a = a.conj().T.copy()
    a, v, sweeps = _jacobi_tall(a, max_sweeps, tol)
    s = np.linalg.norm(a, axis=0)
    order = np.argsort(-s, kind="stable")
    s, a, v = s[order], a[:, order], v[:, order]
    good = s > (s[0] * np.finfo(float).eps if s[0] > 0 else np.inf)
    u = np.zeros_like(a)
    u[:, good] = a[:, good] / s[good]
    u = _complete_columns(u, good)
    if flip:
        u, v = v, u
    return SvdResult(U=u, s=s, V=v, sweeps=sweeps)


def nuclear_norm(m):
    return float(svd(m).s.sum())


def nuclear_norm_subgradient(m):
    """``U @ V^H`` over all thin-SVD dyads.

    Dyads with singular value below ``SIGMA_CUT * s_max`` make the
    subgradient non-unique; they are kept so the choice is deterministic.
    """
    r = svd(m)
    return r.U @ r.V.conj().T
