"""Generative channel estimation: gradient descent over the generator's latent input.

The generator runs in inference mode and its output is denormalized inside
the differentiated graph, ``H_i = mu_i + sigma_i * G(z)_i``.

Full resolution minimizes ``||y - A vec(H(z)) s||^2 + lambda ||z||^2``.
One-bit minimizes ``-lambda * corr(Q1(y), H(z)) + ||H(z)||_*``. The default
correlation ``"complex"`` is ``Re <Q1(y), A vec(H) s>``: the real parts of the
signs weigh the real part of each noiseless sample, the imaginary parts weigh
its imaginary part. ``"literal"`` pairs ``Re(sA)`` with ``Re(H)`` and
``Im(sA)`` with ``Im(H)`` instead.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .errors import ArgumentError, ConfigError, DegenerateError, EstimationError, NumericalError
from .genprior import network as net
from .linalg import svd
from .measurement import SensingOperator, quantize

FULLRES_LAMBDA = 0.001
ONEBIT_LAMBDA = 1.0


@dataclass(frozen=True)
class GceConfig:
    """Latent-space optimizer settings.

    ``lambda_reg=None`` picks the mode default (0.001 full resolution,
    1.0 one-bit). ``lambda_reg="noise"`` (full resolution only) uses half the
    measurement noise variance, the weight that makes the full-resolution
    loss a scaled negative log posterior for ``z ~ N(0, I)``. A nonzero
    ``model_error`` (relative, linear scale) adds ``model_error`` times the
    measured signal power to that variance, treating the generator's own
    approximation error as extra noise.
    """

    lambda_reg: object = None
    latent_dim: int = None
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 100
    restarts: int = 3
    correlation: str = "complex"
    model_error: float = 0.0

    def __post_init__(self):
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.correlation not in ("complex", "literal"):
            raise ConfigError(f"unknown correlation {self.correlation!r}")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if not self.model_error >= 0:
            raise ConfigError("model_error must be >= 0")
        if self.lambda_reg == "noise":
            return
        if self.lambda_reg is not None and not self.lambda_reg >= 0:
            raise ConfigError("lambda_reg must be >= 0 or 'noise'")

    def lam(self, mode, noise_var=0.0, signal_power=0.0):
        if self.lambda_reg == "noise":
            if mode == "onebit":
                raise ConfigError("lambda_reg='noise' applies to full resolution only")
            return 0.5 * (noise_var + self.model_error * signal_power)
        if self.lambda_reg is not None:
            return self.lambda_reg
        return ONEBIT_LAMBDA if mode == "onebit" else FULLRES_LAMBDA


@dataclass
class EstimationResult:
    h_hat: np.ndarray
    z_star: np.ndarray
    loss_trace: np.ndarray
    final_loss: float
    wall_time_per_iteration: float
    restart_index_chosen: int
    restart_losses: np.ndarray = field(default=None)
    iterations: int = 0

    def to_record(self, include_h=False):
        rec = {
            "z_star": [float(v) for v in self.z_star],
            "final_loss": float(self.final_loss),
            "loss_trace": [float(v) for v in self.loss_trace],
            "wall_time_per_iteration": float(self.wall_time_per_iteration),
            "restart_index_chosen": int(self.restart_index_chosen),
        }
        if include_h:
            rec["h_hat_real"] = self.h_hat.real.tolist()
            rec["h_hat_imag"] = self.h_hat.imag.tolist()
        return rec


class GenerativePrior:
    """A generator plus the normalization that maps its output to channels."""

    def __init__(self, spec, store):
        if store.stats is None:
            raise ArgumentError("generator weights carry no normalization stats")
        store.check_matches(spec)
        self.spec, self.store, self.stats = spec, store, store.stats
        out = spec.output_shape
        if out != (self.stats.n_r, self.stats.n_t, 2):
            raise ArgumentError(f"generator output {out} does not match stats ({self.stats.n_r}, {self.stats.n_t}, 2)")
        self.mu = ch.flat_to_tensor(self.stats.mu, self.n_r, self.n_t)
        self.sigma = ch.flat_to_tensor(self.stats.sigma, self.n_r, self.n_t)

    @property
    def n_r(self):
        return self.stats.n_r

    @property
    def n_t(self):
        return self.stats.n_t

    @property
    def latent_dim(self):
        return self.spec.input_shape[0]

    def decode(self, z, with_tape=False):
        """Denormalized channel(s) for latent(s) ``z``."""
        g, tape = net.generator_forward(self.store, self.spec, z, mode="infer")
        t = self.mu + self.sigma * g.astype(np.float64)
        h = t[..., 0] + 1j * t[..., 1]
        return (h, tape) if with_tape else h

    def pullback(self, tape, grad_re, grad_im):
        """Map gradients w.r.t. Re/Im of the channel back to the latent input."""
        up = self.sigma * np.stack([grad_re, grad_im], axis=-1)
        gz, _ = net.generator_backward(tape, up)
        return gz.astype(np.float64)


def _vec_batch(h):
    """Column-major vec of each matrix in a ``(B, n_r, n_t)`` stack."""
    return h.transpose(0, 2, 1).reshape(h.shape[0], -1)


def _unvec_batch(v, n_r, n_t):
    return v.reshape(v.shape[0], n_t, n_r).transpose(0, 2, 1)


def _as_batch(z):
    z = np.asarray(z, dtype=np.float64)
    return (z[None], True) if z.ndim == 1 else (z, False)


def fullres_objective(z, measurement, op, prior, config=GceConfig()):
    """Loss and latent gradient of the regularized least-squares fit.

    Accepts one latent vector or a batch ``(B, d)``.
    """
    zb, single = _as_batch(z)
    y = measurement.y
    power = max(np.vdot(y, y).real / y.size - measurement.noise_var, 0.0) if config.model_error else 0.0
    lam = config.lam("fullres", measurement.noise_var, power)
    h, tape = prior.decode(zb, with_tape=True)
    r = op.apply(_vec_batch(h)) - measurement.y
    loss = np.sum(np.abs(r) ** 2, axis=1) + lam * np.sum(zb * zb, axis=1)
    g = _unvec_batch(op.adjoint(r), prior.n_r, prior.n_t)
    grad = prior.pullback(tape, 2.0 * g.real, 2.0 * g.imag) + 2.0 * lam * zb
    if single:
        if not np.isfinite(loss[0]):
            raise NumericalError("non-finite full-resolution loss")
        return float(loss[0]), grad[0]
    return loss, grad


def correlation(q, op, h, kind="complex"):
    """Sign correlation per channel in a stack, and its gradient w.r.t. Re/Im of ``h``."""
    n = h.shape[0]
    if kind == "complex":
        corr = np.real(op.apply(_vec_batch(h)) @ np.conj(q))
        c = _unvec_batch(np.broadcast_to(op.adjoint(q), (n, op.shape[1])), op.n_r, op.n_t)
        return corr, c.real, c.imag
    q_re, q_im = q.real, q.imag
    corr = np.real(op.apply(_vec_batch(h.real))) @ q_re + np.imag(op.apply(_vec_batch(h.imag))) @ q_im
    g_re = _unvec_batch(np.broadcast_to(np.real(op.adjoint(q_re.astype(complex))), (n, op.shape[1])), op.n_r, op.n_t)
    g_im = _unvec_batch(np.broadcast_to(-np.imag(op.adjoint(q_im.astype(complex))), (n, op.shape[1])), op.n_r, op.n_t)
    return corr, g_re, g_im


def onebit_objective(z, measurement, op, prior, config=GceConfig()):
    """Loss and latent gradient of the correlation / nuclear-norm objective."""
    zb, single = _as_batch(z)
    lam = config.lam("onebit")
    q = quantize(measurement.y, 1)
    h, tape = prior.decode(zb, with_tape=True)
    corr, c_re, c_im = correlation(q, op, h, config.correlation)
    nuc = np.empty(zb.shape[0])
    sub = np.empty_like(h)
    for b in range(zb.shape[0]):
        r = svd(h[b])
        nuc[b] = r.s.sum()
        sub[b] = r.U @ r.V.conj().T
    loss = -lam * corr + nuc
    grad = prior.pullback(tape, sub.real - lam * c_re, sub.imag - lam * c_im)
    if single:
        if not np.isfinite(loss[0]):
            raise NumericalError("non-finite one-bit loss")
        return float(loss[0]), grad[0]
    return loss, grad


OBJECTIVES = {"fullres": fullres_objective, "onebit": onebit_objective}


def estimate(measurement, pilot, prior, config=GceConfig(), mode="fullres", rng=None, z0=None):
    """Recover a channel by Adam over the latent input, with random restarts.

    All restarts run together as one batch. The restart with the lowest
    final loss wins; its trace is reported.
    """
    if mode not in OBJECTIVES:
        raise ArgumentError(f"mode must be one of {sorted(OBJECTIVES)}")
    if mode == "onebit" and not measurement.is_onebit:
        raise ArgumentError("one-bit estimation needs a one-bit measurement")
    if config.latent_dim is not None and config.latent_dim != prior.latent_dim:
        raise ArgumentError(f"config latent_dim {config.latent_dim} != generator input {prior.latent_dim}")
    objective = OBJECTIVES[mode]
    op = SensingOperator(pilot, prior.n_r)
    if measurement.y.size != op.shape[0]:
        raise ArgumentError(f"measurement length {measurement.y.size} does not match operator {op.shape}")
    if z0 is None:
        rng = np.random.default_rng() if rng is None else rng
        z0 = rng.standard_normal((config.restarts, prior.latent_dim))
    z = np.array(z0, dtype=np.float64, ndmin=2)
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    alive = np.ones(z.shape[0], dtype=bool)
    trace = np.empty((config.iterations, z.shape[0]))

    t0 = time.perf_counter()
    loss, grad = objective(z, measurement, op, prior, config)
    for k in range(config.iterations):
        alive &= np.isfinite(loss) & np.all(np.isfinite(grad), axis=1)
        if not alive.any():
            break
        grad = np.where(alive[:, None], grad, 0.0)
        m = config.beta1 * m + (1 - config.beta1) * grad
        v = config.beta2 * v + (1 - config.beta2) * grad * grad
        m_hat = m / (1 - config.beta1 ** (k + 1))
        v_hat = v / (1 - config.beta2 ** (k + 1))
        z = z - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
        loss, grad = objective(z, measurement, op, prior, config)
        trace[k] = loss
    elapsed = time.perf_counter() - t0

    alive &= np.isfinite(loss)
    if not alive.any():
        raise EstimationError("every restart produced a non-finite loss", iterations=config.iterations)
    final = np.where(alive, loss, np.inf)
    best = int(np.argmin(final))
    return EstimationResult(
        h_hat=prior.decode(z[best]),
        z_star=z[best].copy(),
        loss_trace=trace[:, best].copy(),
        final_loss=float(final[best]),
        wall_time_per_iteration=elapsed / max(config.iterations, 1),
        restart_index_chosen=best,
        restart_losses=final,
        iterations=config.iterations,
    )


def optimal_scale(h_true, h_hat):
    """Complex ``kappa`` minimizing ``||h_true - kappa * h_hat||_F``."""
    h_hat = np.asarray(h_hat)
    energy = np.vdot(h_hat, h_hat).real
    if energy == 0.0:
        raise DegenerateError("zero estimate has no optimal scale")
    return complex(np.vdot(h_hat, np.asarray(h_true)) / energy)
