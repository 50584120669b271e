import numpy as np
import pytest

from conftest import fd_gradient, rel_err
from genchan.errors import ArgumentError, ConfigError, ContractError, FormatError
from genchan.genprior import (
    TrainerConfig, critic_spec, generator_spec, init_weights, load_weights, save_weights, wgan_train,
)
from genchan.genprior import network as N
from genchan.genprior import train as T
from genchan.genprior.layers import Activation, BatchNorm, Conv2D, Dense, Reshape, Upsample2x

LAYER_CASES = [
    (Dense(5, 3), (4, 5)),
    (Reshape((2, 3, 2)), (3, 12)),
    (Upsample2x(), (2, 2, 3, 2)),
    (Conv2D(4, 2, 3), (2, 4, 5, 2)),
    (Conv2D(3, 2, 3), (2, 5, 4, 2)),
    (Conv2D(4, 2, 3, stride=2), (2, 6, 5, 2)),
    (BatchNorm(3), (4, 2, 2, 3)),
    (Activation("relu"), (3, 7)),
    (Activation("leaky_relu", 0.2), (3, 7)),
    (Activation("linear"), (3, 7)),
]


def _params(layer, rng):
    return {k: rng.standard_normal(s) for k, s in layer.param_shapes().items()}


@pytest.mark.parametrize("layer,shape", LAYER_CASES, ids=lambda v: type(v).__name__ if not isinstance(v, tuple) else "")
@pytest.mark.parametrize("train", [True, False])
def test_layer_gradients(layer, shape, train, rng):
    p = _params(layer, rng)
    running = {"mean": rng.standard_normal(layer.channels), "var": rng.uniform(0.5, 2, layer.channels)} \
        if isinstance(layer, BatchNorm) else None
    x = rng.standard_normal(shape)
    if isinstance(layer, Activation):
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # keep away from the kink
    w = rng.standard_normal(layer.forward(p, x, train, running)[0].shape)

    def loss_x(xv):
        return float(np.sum(w * layer.forward(p, xv, train, running)[0]))

    _, cache = layer.forward(p, x, train, running)
    dx, grads = layer.backward(p, cache, w)
    assert rel_err(dx, fd_gradient(loss_x, x)) < 1e-6
    for name in p:
        def loss_p(v, name=name):
            q = dict(p)
            q[name] = v
            return float(np.sum(w * layer.forward(q, x, train, running)[0]))
        assert rel_err(grads[name], fd_gradient(loss_p, p[name])) < 1e-6, name


def test_conv_same_padding_shapes():
    assert Conv2D(4, 2, 8).output_shape((4, 16, 2)) == (4, 16, 8)
    assert Conv2D(4, 2, 8, stride=2).output_shape((4, 16, 2)) == (2, 8, 8)
    assert Conv2D(4, 2, 8, stride=2).output_shape((5, 7, 2)) == (3, 4, 8)
    with pytest.raises(ArgumentError):
        Conv2D(4, 3, 8).output_shape((4, 16, 2))


def test_conv_matches_direct_correlation(rng):
    layer = Conv2D(3, 1, 1)
    x = rng.standard_normal((1, 4, 4, 1))
    p = {"w": rng.standard_normal((3, 3, 1, 1)), "b": np.zeros(1)}
    y, _ = layer.forward(p, x, False)
    xp = np.pad(x[0, :, :, 0], 1)
    ref = np.array([[np.sum(xp[i:i + 3, j:j + 3] * p["w"][:, :, 0, 0]) for j in range(4)] for i in range(4)])
    np.testing.assert_allclose(y[0, :, :, 0], ref, atol=1e-12)


def test_batchnorm_train_normalizes(rng):
    bn = BatchNorm(3)
    x = 5 + 3 * rng.standard_normal((16, 2, 2, 3))
    y, _ = bn.forward({"gamma": np.ones(3), "beta": np.zeros(3)}, x, True)
    np.testing.assert_allclose(y.mean(axis=(0, 1, 2)), 0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=(0, 1, 2)), 1, atol=1e-3)


def test_network_architectures():
    g = generator_spec(16, 64, latent_dim=35, channels=128)
    assert g.input_shape == (35,) and g.output_shape == (16, 64, 2)
    c = critic_spec(16, 64)
    assert c.input_shape == (16, 64, 2) and c.output_shape == (1,)
    assert not c.bn_layers()
    with pytest.raises(ArgumentError):
        generator_spec(6, 64)


def test_generator_backward_matches_fd(rng):
    spec = generator_spec(4, 8, latent_dim=3, channels=4)
    store = init_weights(spec, rng, std=0.5, dtype=np.float64)
    z = rng.standard_normal((2, 3))
    w = rng.standard_normal((2, 4, 8, 2))
    for mode in ("infer", "train"):
        out, tape = N.generator_forward(store, spec, z, mode)
        dz, grads = N.generator_backward(tape, w)

        def f(zv):
            return float(np.sum(w * N.generator_forward(store, spec, zv, mode)[0]))

        assert rel_err(dz, fd_gradient(f, z)) < 1e-6


def test_critic_backward_matches_fd(rng):
    spec = critic_spec(4, 8, channels=(3, 4))
    store = init_weights(spec, rng, std=0.3, dtype=np.float64)
    x = rng.standard_normal((3, 4, 8, 2))
    up = rng.standard_normal(3)
    _, tape = N.critic_forward(store, spec, x)
    dx, grads = N.critic_backward(tape, up)

    def f(xv):
        return float(np.dot(up, N.critic_forward(store, spec, xv)[0]))

    assert rel_err(dx, fd_gradient(f, x)) < 1e-6

    def f_w(wv):
        s = store.copy()
        s.params[0]["w"] = wv
        return float(np.dot(up, N.critic_forward(s, spec, x)[0]))

    assert rel_err(grads[0]["w"], fd_gradient(f_w, store.params[0]["w"])) < 1e-6


def test_tape_is_single_use(rng):
    spec = generator_spec(4, 4, latent_dim=2, channels=2)
    store = init_weights(spec, rng)
    out, tape = N.generator_forward(store, spec, rng.standard_normal(2))
    assert out.shape == (4, 4, 2)
    N.generator_backward(tape, np.ones_like(out))
    with pytest.raises(ContractError):
        N.generator_backward(tape, np.ones_like(out))


def test_forward_rejects_wrong_input(rng):
    spec = generator_spec(4, 4, latent_dim=2, channels=2)
    with pytest.raises(ArgumentError):
        N.generator_forward(init_weights(spec, rng), spec, np.zeros((3, 5)))
    with pytest.raises(ArgumentError):
        N.generator_forward(init_weights(spec, rng), spec, np.zeros(2), mode="eval")


def test_running_stats_update(rng):
    spec = generator_spec(4, 4, latent_dim=2, channels=2)
    store = init_weights(spec, rng)
    _, tape = N.generator_forward(store, spec, rng.standard_normal((8, 2)), mode="train")
    before = [r["mean"].copy() for r in store.running if r is not None]
    N.update_running_stats(store, tape, 0.9)
    for (i, (mean, var, n)), b in zip(tape.batch_stats().items(), before):
        np.testing.assert_allclose(store.running[i]["mean"], 0.9 * b + 0.1 * mean, rtol=1e-5)


def test_rmsprop_step_formula():
    spec = N.NetworkSpec((2,), [Dense(2, 1)])
    store = init_weights(spec, np.random.default_rng(0), dtype=np.float64)
    w0 = store.params[0]["w"].copy()
    opt = T.RMSProp(store, lr=0.1, rho=0.9, eps=1e-8)
    g = {"w": np.array([[2.0], [-1.0]]), "b": np.array([0.5])}
    opt.step(store, [g])
    expected = w0 - 0.1 * g["w"] / (np.sqrt(0.1 * g["w"] ** 2) + 1e-8)
    np.testing.assert_allclose(store.params[0]["w"], expected)


def test_trainer_config_validation():
    with pytest.raises(ConfigError):
        TrainerConfig(n_critic=0)
    with pytest.raises(ConfigError):
        TrainerConfig(clip=0)


def test_training_rejects_mismatched_data(rng):
    gs, cs = generator_spec(4, 4, 2, 2), critic_spec(4, 4, channels=(2, 2))
    with pytest.raises(ArgumentError):
        wgan_train(np.zeros((10, 4, 8, 2)), gs, cs, TrainerConfig(batch_size=5), rng)
    with pytest.raises(ArgumentError):
        wgan_train(np.zeros((3, 4, 4, 2)), gs, cs, TrainerConfig(batch_size=5), rng)


def test_training_is_seed_deterministic():
    gs, cs = generator_spec(4, 4, 2, 2), critic_spec(4, 4, channels=(2, 2))
    data = np.random.default_rng(0).standard_normal((20, 4, 4, 2))
    cfg = TrainerConfig(epochs=3, batch_size=8)
    a = wgan_train(data, gs, cs, cfg, np.random.default_rng(1))
    b = wgan_train(data, gs, cs, cfg, np.random.default_rng(1))
    for x, y in zip(a.generator.arrays(), b.generator.arrays()):
        np.testing.assert_array_equal(x, y)
    assert len(a.log.wasserstein) == 3 and len(a.log.critic_max_abs) == 15


def _trained_store(tmp_path):
    gs = generator_spec(4, 8, latent_dim=3, channels=4)
    store = init_weights(gs, np.random.default_rng(2))
    from genchan import channel as C
    store.stats = C.compute_norm_stats(C.generate_dataset(C.ChannelConfig(n_r=4, n_t=8), 20, 1))
    store.running[4]["mean"][:] = np.arange(4)
    return gs, store


def test_weight_file_round_trip_is_bit_exact(tmp_path):
    gs, store = _trained_store(tmp_path)
    path = tmp_path / "g.ggw"
    save_weights(path, gs, store)
    spec2, store2 = load_weights(path)
    assert spec2 == gs
    for a, b in zip(store.arrays(), store2.arrays()):
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes()
    for a, b in zip(store.running, store2.running):
        assert (a is None) == (b is None)
        if a is not None:
            assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    np.testing.assert_array_equal(store2.stats.mu, store.stats.mu)
    save_weights(tmp_path / "g2.ggw", spec2, store2)
    assert (tmp_path / "g2.ggw").read_bytes() == path.read_bytes()


def test_critic_weight_file_without_stats(tmp_path):
    cs = critic_spec(4, 8, channels=(2, 3))
    store = init_weights(cs, np.random.default_rng(0))
    save_weights(tmp_path / "c.ggw", cs, store)
    spec, back = load_weights(tmp_path / "c.ggw")
    assert spec == cs and back.stats is None


def test_weight_file_rejects_corruption(tmp_path):
    gs, store = _trained_store(tmp_path)
    path = tmp_path / "g.ggw"
    save_weights(path, gs, store)
    raw = path.read_bytes()
    cases = {"trunc": raw[:-3], "magic": b"GGW2" + raw[4:], "extra": raw + b"\0", "empty": b"",
             "version": raw[:4] + b"\x09\x00" + raw[6:]}
    for name, data in cases.items():
        (tmp_path / name).write_bytes(data)
        with pytest.raises(FormatError):
            load_weights(tmp_path / name)
