import numpy as np
import pytest

from conftest import fd_gradient, make_prior, rel_err
from genchan import gce
from genchan import measurement as M
from genchan.errors import ArgumentError, ConfigError, DegenerateError


def _setup(prior, rng, snr=10.0, onebit=False, n_p=4):
    h = prior.decode(rng.standard_normal(prior.latent_dim)) + 0.1 * rng.standard_normal((prior.n_r, prior.n_t))
    pilot = M.gen_pilots(prior.n_t, n_p, rng)
    m = M.measure(h, pilot, snr, rng)
    if onebit:
        m = M.quantize_measurement(m)
    return h, pilot, m, M.SensingOperator(pilot, prior.n_r)


def test_config_defaults_and_lambda():
    cfg = gce.GceConfig()
    assert (cfg.lr, cfg.iterations, cfg.restarts) == (1e-2, 100, 3)
    assert cfg.lam("fullres") == gce.FULLRES_LAMBDA == 0.001
    assert cfg.lam("onebit") == gce.ONEBIT_LAMBDA
    assert gce.GceConfig(lambda_reg="noise").lam("fullres", 0.4) == pytest.approx(0.2)
    assert gce.GceConfig(lambda_reg="noise", model_error=0.5).lam("fullres", 0.4, 2.0) == pytest.approx(0.7)
    with pytest.raises(ConfigError):
        gce.GceConfig(lambda_reg="noise").lam("onebit")
    for bad in (dict(lambda_reg=-1.0), dict(restarts=0), dict(iterations=-1), dict(correlation="x"),
                dict(latent_dim=0), dict(model_error=-0.1)):
        with pytest.raises(ConfigError):
            gce.GceConfig(**bad)


@pytest.mark.parametrize("lam", [0.0, 0.3])
def test_fullres_gradient_matches_fd(small_prior, rng, lam):
    _, _, m, op = _setup(small_prior, rng)
    cfg = gce.GceConfig(lambda_reg=lam)
    z = rng.standard_normal(small_prior.latent_dim)
    loss, grad = gce.fullres_objective(z, m, op, small_prior, cfg)
    fd = fd_gradient(lambda v: gce.fullres_objective(v, m, op, small_prior, cfg)[0], z)
    assert rel_err(grad, fd) < 1e-6
    h = small_prior.decode(z)
    ref = np.sum(np.abs(op.apply(h.reshape(-1, order="F")) - m.y) ** 2) + lam * z @ z
    assert loss == pytest.approx(ref, rel=1e-12)


def test_model_error_weights_penalty_by_signal_power(small_prior, rng):
    _, _, m, op = _setup(small_prior, rng)
    z = rng.standard_normal(small_prior.latent_dim)
    base = gce.GceConfig(lambda_reg="noise")
    mixed = gce.GceConfig(lambda_reg="noise", model_error=0.2)
    power = np.vdot(m.y, m.y).real / m.y.size - m.noise_var
    diff = gce.fullres_objective(z, m, op, small_prior, mixed)[0] - gce.fullres_objective(z, m, op, small_prior, base)[0]
    assert diff == pytest.approx(0.5 * 0.2 * power * z @ z, rel=1e-10)
    _, grad = gce.fullres_objective(z, m, op, small_prior, mixed)
    fd = fd_gradient(lambda v: gce.fullres_objective(v, m, op, small_prior, mixed)[0], z)
    assert rel_err(grad, fd) < 1e-6


def test_batched_objective_matches_single(small_prior, rng):
    _, _, m, op = _setup(small_prior, rng)
    zs = rng.standard_normal((3, small_prior.latent_dim))
    loss_b, grad_b = gce.fullres_objective(zs, m, op, small_prior)
    for i in range(3):
        loss, grad = gce.fullres_objective(zs[i], m, op, small_prior)
        assert loss == pytest.approx(loss_b[i], rel=1e-12)
        np.testing.assert_allclose(grad, grad_b[i], rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("kind", ["complex", "literal"])
def test_onebit_gradient_matches_fd(small_prior, rng, kind):
    _, _, m, op = _setup(small_prior, rng, onebit=True)
    cfg = gce.GceConfig(correlation=kind)
    z = rng.standard_normal(small_prior.latent_dim)
    s = np.linalg.svd(small_prior.decode(z), compute_uv=False)
    assert np.min(np.diff(s[::-1])) > 1e-3 * s[0]  # away from degenerate singular values
    _, grad = gce.onebit_objective(z, m, op, small_prior, cfg)
    fd = fd_gradient(lambda v: gce.onebit_objective(v, m, op, small_prior, cfg)[0], z)
    assert rel_err(grad, fd) < 1e-6


def test_correlation_forms(small_prior, rng):
    _, _, m, op = _setup(small_prior, rng, onebit=True)
    h = rng.standard_normal((2, small_prior.n_r, small_prior.n_t)) + 1j * rng.standard_normal((2, 4, 8))
    ax = op.apply(h[0].reshape(-1, order="F"))
    c, _, _ = gce.correlation(m.y, op, h, "complex")
    assert c[0] == pytest.approx(np.real(np.vdot(m.y, ax)))
    lit, _, _ = gce.correlation(m.y, op, h, "literal")
    a_re = op.apply(h[0].real.reshape(-1, order="F"))
    a_im = op.apply(h[0].imag.reshape(-1, order="F"))
    assert lit[0] == pytest.approx(a_re.real @ m.y.real + a_im.imag @ m.y.imag)


def test_estimate_result_shape_and_trace(small_prior, rng):
    h, pilot, m, _ = _setup(small_prior, rng)
    cfg = gce.GceConfig(iterations=30, restarts=2)
    res = gce.estimate(m, pilot, small_prior, cfg, rng=rng)
    assert res.h_hat.shape == (4, 8) and np.all(np.isfinite(res.h_hat))
    assert res.loss_trace.shape == (30,) and res.z_star.shape == (3,)
    assert res.restart_losses.shape == (2,)
    assert res.final_loss == pytest.approx(res.loss_trace[-1])
    assert res.final_loss == res.restart_losses.min()
    assert res.restart_index_chosen == int(np.argmin(res.restart_losses))
    rec = res.to_record(include_h=True)
    assert len(rec["loss_trace"]) == 30 and len(rec["h_hat_real"]) == 4


def test_estimate_reduces_loss(small_prior, rng):
    _, pilot, m, op = _setup(small_prior, rng, snr=30.0)
    z0 = rng.standard_normal((1, small_prior.latent_dim))
    start = gce.fullres_objective(z0[0], m, op, small_prior)[0]
    res = gce.estimate(m, pilot, small_prior, gce.GceConfig(iterations=200, lr=0.05), z0=z0)
    assert res.final_loss < 0.5 * start


def test_estimate_with_zero_iterations_returns_start(small_prior, rng):
    _, pilot, m, _ = _setup(small_prior, rng)
    z0 = rng.standard_normal((1, 3))
    res = gce.estimate(m, pilot, small_prior, gce.GceConfig(iterations=0), z0=z0)
    np.testing.assert_array_equal(res.z_star, z0[0])
    assert res.loss_trace.size == 0


def test_estimate_argument_errors(small_prior, rng):
    _, pilot, m, _ = _setup(small_prior, rng)
    with pytest.raises(ArgumentError):
        gce.estimate(m, pilot, small_prior, mode="onebit")
    with pytest.raises(ArgumentError):
        gce.estimate(m, pilot, small_prior, gce.GceConfig(latent_dim=5))
    with pytest.raises(ArgumentError):
        gce.estimate(m, M.gen_pilots(8, 2, rng), small_prior)


def test_prior_requires_stats(rng):
    prior = make_prior(4, 4, 2, 2)
    store = prior.store.copy()
    store.stats = None
    with pytest.raises(ArgumentError):
        gce.GenerativePrior(prior.spec, store)


def test_optimal_scale(rng):
    h = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    k = 0.3 - 1.7j
    assert gce.optimal_scale(h, h / k) == pytest.approx(k)
    with pytest.raises(DegenerateError):
        gce.optimal_scale(h, np.zeros_like(h))


def test_decode_denormalizes(small_prior, rng):
    z = rng.standard_normal(3)
    g, _ = small_prior.spec, None
    from genchan.genprior import network as N
    from genchan.channel import denormalize, tensor_to_flat
    out, _ = N.generator_forward(small_prior.store, small_prior.spec, z)
    np.testing.assert_allclose(small_prior.decode(z), denormalize(tensor_to_flat(out), small_prior.stats), atol=1e-12)
