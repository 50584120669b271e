"""Wasserstein GAN training with weight clipping.

One epoch is one generator update preceded by ``n_critic`` critic updates,
each on a freshly sampled minibatch.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, ConfigError, NumericalError
from . import network as net

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerConfig:
    n_critic: int = 5
    clip: float = 0.01
    lr: float = 5e-5
    rho: float = 0.9
    eps: float = 1e-8
    batch_size: int = 200
    epochs: int = 3000
    bn_momentum: float = net.BN_MOMENTUM

    def __post_init__(self):
        if self.n_critic < 1:
            raise ConfigError("n_critic must be >= 1")
        if self.clip <= 0:
            raise ConfigError("clip must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class TrainingLog:
    wasserstein: list = field(default_factory=list)
    generator_loss: list = field(default_factory=list)
    critic_max_abs: list = field(default_factory=list)


@dataclass
class TrainResult:
    generator: net.WeightStore
    critic: net.WeightStore
    log: TrainingLog


class RMSProp:
    """``v <- rho*v + (1-rho)*g^2;  theta <- theta -/+ lr*g/(sqrt(v)+eps)``."""

    def __init__(self, store, lr, rho=0.9, eps=1e-8):
        self.lr, self.rho, self.eps = lr, rho, eps
        self.v = [{k: np.zeros_like(a) for k, a in p.items()} for p in store.params]

    def step(self, store, grads, ascend=False):
        sign = 1.0 if ascend else -1.0
        for i, (p, g) in enumerate(zip(store.params, grads)):
            for k, a in p.items():
                gk = g[k]
                v = self.v[i][k]
                v *= self.rho
                v += (1.0 - self.rho) * gk * gk
                a += (sign * self.lr) * gk / (np.sqrt(v) + self.eps)


def clip_weights(store, c):
    """Project every critic parameter onto ``[-c, c]`` in place."""
    for p in store.params:
        for a in p.values():
            np.clip(a, -c, c, out=a)


def _check_finite(store, epoch, what):
    for i, p in enumerate(store.params):
        for k, a in p.items():
            if not np.all(np.isfinite(a)):
                raise NumericalError(f"non-finite {what} parameter {k!r} in layer {i} at epoch {epoch}", iterations=epoch)


def critic_objective(critic, critic_spec, real, fake):
    """``mean D(real) - mean D(fake)``, the critic's Wasserstein estimate."""
    d_real, _ = net.critic_forward(critic, critic_spec, real)
    d_fake, _ = net.critic_forward(critic, critic_spec, fake)
    return float(np.mean(d_real, dtype=np.float64) - np.mean(d_fake, dtype=np.float64))


def critic_step(critic, critic_spec, opt, real, fake, clip):
    """One ascent step on the critic objective followed by clipping."""
    m_real, m_fake = real.shape[0], fake.shape[0]
    scores, tape = net.critic_forward(critic, critic_spec, np.concatenate([real, fake]), mode="train")
    up = np.concatenate([np.full(m_real, 1.0 / m_real), np.full(m_fake, -1.0 / m_fake)])
    _, grads = net.critic_backward(tape, up)
    opt.step(critic, grads, ascend=True)
    clip_weights(critic, clip)
    return float(np.mean(scores[:m_real], dtype=np.float64) - np.mean(scores[m_real:], dtype=np.float64))


def generator_step(generator, gen_spec, critic, critic_spec, opt, z, momentum):
    """One descent step on ``mean(-D(G(z)))``."""
    m = z.shape[0]
    fake, g_tape = net.generator_forward(generator, gen_spec, z, mode="train")
    scores, c_tape = net.critic_forward(critic, critic_spec, fake, mode="train")
    dx, _ = net.critic_backward(c_tape, np.full(m, -1.0 / m))
    _, grads = net.generator_backward(g_tape, dx)
    net.update_running_stats(generator, g_tape, momentum)
    opt.step(generator, grads)
    return float(-np.mean(scores, dtype=np.float64))


def wgan_train(dataset, gen_spec, critic_spec, config, rng, generator=None, critic=None, callback=None):
    """Train generator and critic on a normalized dataset.

    Parameters
    ----------
    dataset : ndarray, shape (N, n_r, n_t, 2)
        Normalized training tensors.
    generator, critic : WeightStore, optional
        Starting weights; freshly initialized when omitted.
    callback : callable, optional
        Called as ``callback(epoch, log)`` after every epoch.
    """
    data = np.asarray(dataset)
    if data.shape[1:] != gen_spec.output_shape or data.shape[1:] != critic_spec.input_shape:
        raise ArgumentError(f"dataset shape {data.shape[1:]} does not match the network specs")
    if data.shape[0] < config.batch_size:
        raise ArgumentError(f"dataset of {data.shape[0]} is smaller than batch size {config.batch_size}")
    if generator is None:
        generator = net.init_weights(gen_spec, rng)
    if critic is None:
        critic = net.init_weights(critic_spec, rng)
    clip_weights(critic, config.clip)
    data = data.astype(generator.dtype)
    d = gen_spec.input_shape[0]
    m = config.batch_size
    g_opt = RMSProp(generator, config.lr, config.rho, config.eps)
    c_opt = RMSProp(critic, config.lr, config.rho, config.eps)
    history = TrainingLog()

    for epoch in range(config.epochs):
        for _ in range(config.n_critic):
            z = rng.standard_normal((m, d))
            fake, _ = net.generator_forward(generator, gen_spec, z, mode="train")
            real = data[rng.choice(data.shape[0], size=m, replace=False)]
            w_est = critic_step(critic, critic_spec, c_opt, real, fake, config.clip)
            _check_finite(critic, epoch, "critic")
            history.critic_max_abs.append(critic.max_abs())
        z = rng.standard_normal((m, d))
        g_loss = generator_step(generator, gen_spec, critic, critic_spec, g_opt, z, config.bn_momentum)
        _check_finite(generator, epoch, "generator")
        history.wasserstein.append(w_est)
        history.generator_loss.append(g_loss)
        if callback is not None:
            callback(epoch, history)
        if epoch % 100 == 0:
            log.debug("epoch %d: W=%.4g G=%.4g", epoch, w_est, g_loss)
    return TrainResult(generator=generator, critic=critic, log=history)
