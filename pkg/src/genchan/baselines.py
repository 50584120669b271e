"""Sparse-recovery baselines in the beamspace (virtual channel) domain.

With unitary DFT bases ``A_T`` and ``A_R`` the channel is written
``H = A_R H_v A_T^H`` and the received pilots become::

    y = ((A_T^H P)^T kron A_R) vec(H_v) s + n = A_sp vec(H_v) s + n

All three solvers (OMP, Lasso by FISTA, and GAMP with a Bernoulli-Gaussian
prior learned by EM) work on ``A_sp * s``.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DivergenceError, NumericalError
from .linalg import kron, unvec, vec
from .measurement import quantize

POWER_ITERATIONS = 50
STEP_MARGIN = 1.01


def dft_matrix(n):
    """Unitary DFT matrix, entry ``(k, l) = exp(-2j pi k l / n) / sqrt(n)``."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


@dataclass
class BeamspaceSystem:
    """DFT bases plus the dense beamspace sensing matrix for one pilot.

    ``a_sp`` excludes the training symbol; ``matrix`` includes it.
    """

    a_t: np.ndarray
    a_r: np.ndarray
    a_sp: np.ndarray
    b: np.ndarray
    s: complex = 1.0
    _matrix: np.ndarray = field(default=None, repr=False)

    @property
    def n_r(self):
        return self.a_r.shape[0]

    @property
    def n_t(self):
        return self.a_t.shape[0]

    @property
    def n_p(self):
        return self.b.shape[1]

    @property
    def matrix(self):
        if self._matrix is None:
            self._matrix = self.a_sp * self.s
        return self._matrix

    def apply(self, h_v):
        """``A_sp vec(H_v) s`` without forming ``A_sp``."""
        return vec(self.a_r @ unvec(h_v, self.n_r, self.n_t) @ self.b) * self.s

    def adjoint(self, y):
        return vec(self.a_r.conj().T @ unvec(y, self.n_r, self.n_p) @ self.b.conj().T) * np.conj(self.s)


def beamspace_system(pilot, n_r, n_t=None):
    n_t = pilot.n_t if n_t is None else n_t
    if pilot.n_t != n_t:
        raise ArgumentError(f"pilot has {pilot.n_t} rows, expected n_t={n_t}")
    a_t, a_r = dft_matrix(n_t), dft_matrix(n_r)
    b = a_t.conj().T @ pilot.p
    return BeamspaceSystem(a_t=a_t, a_r=a_r, a_sp=kron(b.T, a_r), b=b, s=pilot.s)


def channel_to_beamspace(h, system):
    """``vec(A_R^H H A_T)``."""
    return vec(system.a_r.conj().T @ np.asarray(h) @ system.a_t)


def beamspace_to_channel(h_v, system):
    """``A_R unvec(h_v) A_T^H``."""
    h_v = np.asarray(h_v)
    if h_v.size != system.n_r * system.n_t:
        raise ArgumentError(f"h_v has length {h_v.size}, expected {system.n_r * system.n_t}")
    return system.a_r @ unvec(h_v, system.n_r, system.n_t) @ system.a_t.conj().T


@dataclass
class SparseEstimate:
    h_v: np.ndarray
    support: np.ndarray
    iterations_used: int
    residual_norm: float
    wall_time_per_iteration: float = 0.0
    rank_deficient: bool = False
    trace: list = field(default_factory=list)
    noise_var: float = None


def _check_y(y, system):
    y = np.asarray(y, dtype=complex)
    if y.shape != (system.matrix.shape[0],):
        raise ArgumentError(f"y has shape {y.shape}, expected ({system.matrix.shape[0]},)")
    return y


def _per_iter(t0, k):
    return (time.perf_counter() - t0) / max(k, 1)


# -- OMP -------------------------------------------------------------------------

def omp_estimate(y, system, noise_var, max_iter=100):
    """Orthogonal matching pursuit with a least-squares refit each iteration.

    Stops when the residual energy drops to ``N_r N_p noise_var`` (or to
    round-off for noiseless data) or the support reaches ``max_iter``.
    ``trace`` holds the residual norm after each iteration.
    """
    y = _check_y(y, system)
    a = system.matrix
    m, n = a.shape
    norms = np.linalg.norm(a, axis=0)
    safe = np.where(norms > 0, norms, np.inf)
    y_energy = np.vdot(y, y).real
    stop = max(m * noise_var, 1e-20 * y_energy)
    support, coef = [], np.zeros(0, dtype=complex)
    r = y.copy()
    trace, deficient = [], False
    t0 = time.perf_counter()
    while np.vdot(r, r).real > stop and len(support) < min(max_iter, n):
        score = np.abs(a.conj().T @ r) / safe
        score[support] = -1.0
        j = int(np.argmax(score))
        if score[j] <= 0:
            break
        support.append(j)
        sub = a[:, support]
        coef, _, rank, _ = np.linalg.lstsq(sub, y, rcond=None)
        deficient |= rank < len(support)
        r_new = y - sub @ coef
        if trace and np.linalg.norm(r_new) >= trace[-1]:
            support.pop()
            coef = np.linalg.lstsq(a[:, support], y, rcond=None)[0]
            break
        r = r_new
        trace.append(float(np.linalg.norm(r)))
    h_v = np.zeros(n, dtype=complex)
    h_v[support] = coef[:len(support)] if support else 0
    return SparseEstimate(
        h_v=h_v, support=np.array(sorted(support), dtype=int), iterations_used=len(trace),
        residual_norm=float(np.linalg.norm(r)), wall_time_per_iteration=_per_iter(t0, len(trace)),
        rank_deficient=bool(deficient), trace=trace,
    )


# -- Lasso by FISTA ----------------------------------------------------------------

def soft_threshold(u, t):
    """Complex soft thresholding ``u * max(1 - t/|u|, 0)``."""
    mag = np.abs(u)
    return u * np.maximum(1.0 - t / np.where(mag > 0, mag, 1.0), 0.0) * (mag > 0)


def lipschitz(system, iterations=POWER_ITERATIONS, rng=None):
    """Largest squared singular value of ``A_sp s`` by power iteration."""
    rng = np.random.default_rng(0) if rng is None else rng
    n = system.n_r * system.n_t
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iterations):
        w = system.adjoint(system.apply(x))
        est = np.linalg.norm(w)
        if not np.isfinite(est) or est == 0.0:
            break
        x = w / est
    if not np.isfinite(est) or est <= 0.0:
        raise NumericalError("power iteration did not yield a usable step size")
    return float(est)


def lasso_objective(y, system, x, lam):
    r = y - system.matrix @ x
    return 0.5 * np.vdot(r, r).real + lam * np.abs(x).sum()


def lasso_estimate(y, system, lambda_sp=None, max_iter=500, tol=1e-6):
    """Minimize ``0.5 ||y - A_sp x s||^2 + lambda_sp ||x||_1`` by FISTA.

    Momentum restarts whenever a step would raise the objective, which makes
    the objective trace non-increasing. ``lambda_sp`` defaults to
    ``0.1 * ||A^H y||_inf``.
    """
    y = _check_y(y, system)
    n = system.n_r * system.n_t
    a = system.matrix
    ah = a.conj().T
    aty = ah @ y
    if lambda_sp is None:
        lambda_sp = 0.1 * float(np.max(np.abs(aty)))
    if lambda_sp < 0:
        raise ArgumentError("lambda_sp must be >= 0")
    x = np.zeros(n, dtype=complex)
    if not np.any(aty):
        return SparseEstimate(h_v=x, support=np.zeros(0, dtype=int), iterations_used=0,
                              residual_norm=float(np.linalg.norm(y)), trace=[0.5 * np.vdot(y, y).real])
    step = 1.0 / (STEP_MARGIN * lipschitz(system))
    f = lasso_objective(y, system, x, lambda_sp)
    trace = [f]
    z, t = x.copy(), 1.0
    t0 = time.perf_counter()
    k = 0
    for k in range(1, max_iter + 1):
        x_new = soft_threshold(z + step * (ah @ (y - a @ z)), step * lambda_sp)
        f_new = lasso_objective(y, system, x_new, lambda_sp)
        if f_new > f:
            # restart from the last iterate with a plain proximal step
            t = 1.0
            x_new = soft_threshold(x + step * (ah @ (y - a @ x)), step * lambda_sp)
            f_new = lasso_objective(y, system, x_new, lambda_sp)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        change = abs(f - f_new) / max(abs(f), 1e-300)
        x, f, t = x_new, f_new, t_new
        trace.append(f)
        if change < tol:
            break
    support = np.flatnonzero(x)
    return SparseEstimate(
        h_v=x, support=support, iterations_used=k,
        residual_norm=float(np.linalg.norm(y - a @ x)),
        wall_time_per_iteration=_per_iter(t0, k), trace=trace,
    )


# -- GAMP with an EM-learned Bernoulli-Gaussian prior -------------------------------

@dataclass(frozen=True)
class GampConfig:
    """GAMP settings.

    ``sparsity``, ``active_var`` and ``noise_var`` seed the prior; any left
    as ``None`` gets a data-driven initial value. ``em=False`` keeps them fixed.

    ``damping`` is the initial and largest step. With ``adaptive`` the step
    shrinks by ``step_decrease`` whenever a step lowers the GAMP cost (the
    step is then retried) and grows by ``step_increase`` after each accepted
    step, never below ``min_step``.
    """

    max_iter: int = 200
    tol: float = 1e-6
    damping: float = 0.5
    adaptive: bool = True
    min_step: float = 0.05
    step_increase: float = 1.1
    step_decrease: float = 0.5
    em: bool = True
    sparsity: float = None
    active_var: float = None
    noise_var: float = None
    divergence_factor: float = 10.0
    divergence_patience: int = 5
    var_floor: float = 1e-30

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ArgumentError("damping must lie in (0, 1]")
        if not 0.0 < self.min_step <= self.damping:
            raise ArgumentError("min_step must lie in (0, damping]")
        if self.step_increase < 1.0 or not 0.0 < self.step_decrease < 1.0:
            raise ArgumentError("need step_increase >= 1 and 0 < step_decrease < 1")
        if self.max_iter < 1:
            raise ArgumentError("max_iter must be >= 1")


def _bg_denoise(r, v_r, lam, phi):
    """Posterior mean/variance of ``x`` from ``r = x + CN(0, v_r)`` under a BG prior."""
    v_sum = phi + v_r
    # log of the inactive/active likelihood ratio, kept finite for large |r|
    log_ratio = np.log(v_sum / v_r) - np.abs(r) ** 2 * (1.0 / v_r - 1.0 / v_sum)
    with np.errstate(over="ignore"):
        odds = (1.0 - lam) / lam * np.exp(log_ratio) if lam < 1.0 else np.zeros_like(v_r)
    pi = 1.0 / (1.0 + odds)
    gamma = r * (phi / v_sum)
    nu = phi * v_r / v_sum
    x = pi * gamma
    v_x = np.maximum(pi * (nu + np.abs(gamma) ** 2) - np.abs(x) ** 2, 0.0)
    return x, v_x, pi, gamma, nu


def _bg_log_evidence(r, v_r, lam, phi):
    """``log Z + log(pi v_r)`` with ``Z = int p(x) CN(r; x, v_r) dx`` under a BG prior."""
    r2 = np.abs(r) ** 2
    v_sum = phi + v_r
    inactive = np.log1p(-lam) - r2 / v_r if lam < 1.0 else np.full(r2.shape, -np.inf)
    active = np.log(lam) + np.log(v_r / v_sum) - r2 / v_sum
    return np.logaddexp(inactive, active)


def _gamp_cost(y, a, a2, r, v_r, x, v_x, lam, phi, psi):
    """GAMP cost (larger is better): expected log-likelihood minus the KL from prior to posterior."""
    m = y.size
    out = -m * np.log(np.pi * psi) - (np.sum(np.abs(y - a @ x) ** 2) + np.sum(a2 @ v_x)) / psi
    inp = np.sum(_bg_log_evidence(r, v_r, lam, phi) + (np.abs(x - r) ** 2 + v_x) / v_r)
    return float(out + inp)


def _gamp_init(y, a2, m, n, config):
    y2 = np.vdot(y, y).real
    psi = config.noise_var if config.noise_var is not None else y2 / (101.0 * m)
    lam = config.sparsity if config.sparsity is not None else min(0.1 * m / n, 1.0)
    if config.active_var is not None:
        phi = config.active_var
    else:
        phi = max(y2 - m * psi, 1e-12 * y2) / (a2.sum() * lam)
    return lam, phi, psi


def gamp_estimate(y, system, config=GampConfig()):
    """Sum-product GAMP with an AWGN output channel and a Bernoulli-Gaussian prior.

    With ``config.em`` the sparsity rate, active variance and noise variance
    are re-estimated after every accepted step. Damping applies to the means
    and variances of both the output and input estimates; with
    ``config.adaptive`` the step size is controlled by the GAMP cost, which
    keeps the iteration stable on structured (non-i.i.d.) sensing matrices.
    The returned ``h_v`` is the posterior mean; ``noise_var`` is the final
    noise estimate. Every attempted step, accepted or not, counts toward
    ``max_iter``.
    """
    y = _check_y(y, system)
    a = system.matrix
    m, n = a.shape
    if not np.any(y):
        return SparseEstimate(h_v=np.zeros(n, dtype=complex), support=np.zeros(0, dtype=int),
                              iterations_used=0, residual_norm=0.0, noise_var=0.0)
    ah = a.conj().T
    a2 = np.abs(a) ** 2
    a2t = a2.T
    lam, phi, psi = _gamp_init(y, a2, m, n, config)
    floor = config.var_floor
    x = np.zeros(n, dtype=complex)
    v_x = np.full(n, lam * phi)
    s = np.zeros(m, dtype=complex)
    v_s = None
    step = config.damping
    cost = -np.inf
    r0 = np.linalg.norm(y)
    bad = 0
    trace = []
    t0 = time.perf_counter()
    k = 0
    for k in range(1, config.max_iter + 1):
        v_p = np.maximum(a2 @ v_x, floor)
        p = a @ x - v_p * s
        denom = v_p + psi
        s_new = (y - p) / denom
        v_s_new = 1.0 / denom
        if v_s is None:
            s_try, v_s_try = s_new, v_s_new
        else:
            s_try = step * s_new + (1.0 - step) * s
            v_s_try = step * v_s_new + (1.0 - step) * v_s
        v_r = 1.0 / np.maximum(a2t @ v_s_try, floor)
        r = x + v_r * (ah @ s_try)
        x_den, v_den, pi, gamma, nu = _bg_denoise(r, v_r, lam, phi)
        if config.adaptive:
            new_cost = _gamp_cost(y, a, a2, r, v_r, x_den, v_den, lam, phi, psi)
            if new_cost < cost and step > config.min_step:
                step = max(step * config.step_decrease, config.min_step)
                trace.append(trace[-1])
                continue
            step = min(step * config.step_increase, config.damping)
        x_old = x
        first = v_s is None
        s, v_s = s_try, v_s_try
        if first:
            x, v_x = x_den, v_den
        else:
            x = step * x_den + (1.0 - step) * x
            v_x = step * v_den + (1.0 - step) * v_x
        if config.em:
            lam = float(np.clip(pi.mean(), 1e-6, 1.0))
            w = pi.sum()
            if w > 0:
                phi = float(max(np.sum(pi * (np.abs(gamma) ** 2 + nu)) / w, floor))
            z_hat = (v_p * y + psi * p) / denom
            v_z = v_p * psi / denom
            psi = float(max(np.mean(np.abs(y - z_hat) ** 2 + v_z), floor))
        if config.adaptive:
            # rescore the accepted point under the (possibly) updated prior
            x_c, v_c = _bg_denoise(r, v_r, lam, phi)[:2] if config.em else (x_den, v_den)
            cost = _gamp_cost(y, a, a2, r, v_r, x_c, v_c, lam, phi, psi)
        res = np.linalg.norm(y - a @ x)
        trace.append(float(res))
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"GAMP produced non-finite estimates at iteration {k}; increase damping", iterations=k)
        bad = bad + 1 if res > config.divergence_factor * r0 else 0
        if bad >= config.divergence_patience:
            raise DivergenceError(f"GAMP residual grew {config.divergence_factor}x for "
                                  f"{bad} iterations at iteration {k}; increase damping", iterations=k)
        if np.linalg.norm(x - x_old) <= config.tol * max(np.linalg.norm(x), 1e-300):
            break
    support = np.flatnonzero(np.abs(x) > 0)
    return SparseEstimate(
        h_v=x, support=support, iterations_used=k, residual_norm=trace[-1],
        wall_time_per_iteration=_per_iter(t0, k), trace=trace, noise_var=psi,
    )


def gamp_onebit_estimate(y, system, config=GampConfig()):
    """Linear-output GAMP run on the unit-modulus one-bit symbols ``Q1(y)``.

    The result carries an arbitrary scale; compare it after optimal scaling.
    """
    return gamp_estimate(quantize(y, 1), system, config)


ESTIMATORS = ("omp", "lasso", "gamp")


def estimate_channel(name, y, system, noise_var=0.0, onebit=False):
    """Run a baseline by name and map its result back to a channel matrix."""
    if name == "omp":
        est = omp_estimate(quantize(y, 1) if onebit else y, system, noise_var)
    elif name == "lasso":
        est = lasso_estimate(quantize(y, 1) if onebit else y, system)
    elif name == "gamp":
        est = gamp_onebit_estimate(y, system) if onebit else gamp_estimate(y, system)
    else:
        raise ArgumentError(f"unknown baseline {name!r}")
    return beamspace_to_channel(est.h_v, system), est
