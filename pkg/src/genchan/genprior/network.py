"""Network specs, parameter stores, and taped forward/backward passes."""
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ArgumentError, ContractError, NumericalError
from .layers import Activation, BatchNorm, Conv2D, Dense, Reshape, Upsample2x

BN_MOMENTUM = 0.9
INIT_STD = 0.02


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()

    def shapes(self):
        """Per-layer output shapes (without the batch axis)."""
        shape, out = self.input_shape, []
        for layer in self.layers:
            shape = layer.output_shape(shape)
            out.append(shape)
        return out

    @property
    def output_shape(self):
        return self.shapes()[-1] if self.layers else self.input_shape

    def bn_layers(self):
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, BatchNorm)]


@dataclass
class WeightStore:
    """Parameters aligned with ``NetworkSpec.layers``.

    ``params[i]`` maps parameter names to arrays for layer ``i`` (empty for
    parameter-free layers); ``running[i]`` holds BatchNorm running
    ``mean``/``var`` or ``None``. ``stats`` carries the dataset normalization.
    """

    params: list
    running: list
    stats: object = None
    dtype: np.dtype = np.dtype(np.float32)

    def __post_init__(self):
        self.dtype = np.dtype(self.dtype)

    def copy(self):
        return WeightStore(
            params=[{k: v.copy() for k, v in p.items()} for p in self.params],
            running=[None if r is None else {k: v.copy() for k, v in r.items()} for r in self.running],
            stats=self.stats,
            dtype=self.dtype,
        )

    def astype(self, dtype):
        return WeightStore(
            params=[{k: v.astype(dtype) for k, v in p.items()} for p in self.params],
            running=[None if r is None else {k: v.astype(dtype) for k, v in r.items()} for r in self.running],
            stats=self.stats,
            dtype=dtype,
        )

    def arrays(self):
        """Every trainable array, in layer order."""
        return [v for p in self.params for v in p.values()]

    def max_abs(self):
        return max((float(np.max(np.abs(v))) for v in self.arrays() if v.size), default=0.0)

    def check_matches(self, spec):
        if len(self.params) != len(spec.layers) or len(self.running) != len(spec.layers):
            raise ArgumentError("weight store does not match spec layer count")
        for i, layer in enumerate(spec.layers):
            want = layer.param_shapes()
            got = {k: v.shape for k, v in self.params[i].items()}
            if want != got:
                raise ArgumentError(f"layer {i}: parameter shapes {got} do not match spec {want}")


@dataclass
class Tape:
    """Forward intermediates for one reverse pass; single use."""

    spec: NetworkSpec
    store: WeightStore
    caches: list
    squeeze: bool
    train: bool
    used: bool = field(default=False)

    def batch_stats(self):
        """``{layer_index: (mean, var, count)}`` for BatchNorm layers in train mode."""
        out = {}
        for i, layer in enumerate(self.spec.layers):
            if isinstance(layer, BatchNorm) and self.train:
                _, _, _, mean, var, n = self.caches[i]
                out[i] = (mean, var, n)
        return out


def init_weights(spec, rng, std=INIT_STD, dtype=np.float32):
    """Kernels from N(0, std^2), zero biases, BatchNorm scale 1 / shift 0."""
    params, running = [], []
    for layer in spec.layers:
        p = {}
        for name, shape in layer.param_shapes().items():
            if name == "w":
                p[name] = (std * rng.standard_normal(shape)).astype(dtype)
            elif name == "gamma":
                p[name] = np.ones(shape, dtype=dtype)
            else:
                p[name] = np.zeros(shape, dtype=dtype)
        params.append(p)
        if isinstance(layer, BatchNorm):
            running.append({"mean": np.zeros(layer.channels, dtype), "var": np.ones(layer.channels, dtype)})
        else:
            running.append(None)
    return WeightStore(params=params, running=running, dtype=dtype)


def forward(spec, store, x, train=False):
    x = np.asarray(x, dtype=store.dtype)
    squeeze = x.shape == spec.input_shape
    if squeeze:
        x = x[None]
    if x.shape[1:] != spec.input_shape:
        raise ArgumentError(f"input shape {x.shape[1:]} does not match spec {spec.input_shape}")
    caches = []
    for layer, p, r in zip(spec.layers, store.params, store.running):
        x, cache = layer.forward(p, x, train, r)
        caches.append(cache)
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite network output")
    tape = Tape(spec=spec, store=store, caches=caches, squeeze=squeeze, train=train)
    return (x[0] if squeeze else x), tape


def backward(tape, upstream):
    """Reverse pass. Returns ``(grad_input, grads)`` with ``grads`` per layer."""
    if tape.used:
        raise ContractError("tape has already been consumed by a backward pass")
    tape.used = True
    dy = np.asarray(upstream, dtype=tape.store.dtype)
    if tape.squeeze:
        dy = dy[None]
    grads = [None] * len(tape.spec.layers)
    for i in range(len(tape.spec.layers) - 1, -1, -1):
        dy, grads[i] = tape.spec.layers[i].backward(tape.store.params[i], tape.caches[i], dy)
    return (dy[0] if tape.squeeze else dy), grads


def update_running_stats(store, tape, momentum=BN_MOMENTUM):
    for i, (mean, var, n) in tape.batch_stats().items():
        unbiased = var * n / (n - 1) if n > 1 else var
        r = store.running[i]
        r["mean"] = (momentum * r["mean"] + (1 - momentum) * mean).astype(r["mean"].dtype)
        r["var"] = (momentum * r["var"] + (1 - momentum) * unbiased).astype(r["var"].dtype)


# -- architectures -------------------------------------------------------------

def generator_spec(n_r, n_t, latent_dim=35, channels=128):
    """Dense -> reshape to quarter resolution -> 2x [upsample, conv4, BN, relu] -> conv4."""
    if n_r % 4 or n_t % 4:
        raise ArgumentError("generator needs n_r and n_t divisible by 4")
    h, w = n_r // 4, n_t // 4
    layers = [
        Dense(latent_dim, h * w * channels),
        Reshape((h, w, channels)),
    ]
    for _ in range(2):
        layers += [Upsample2x(), Conv2D(4, channels, channels), BatchNorm(channels), Activation("relu")]
    layers += [Conv2D(4, channels, 2), Activation("linear")]
    return NetworkSpec(input_shape=(latent_dim,), layers=layers)


def critic_spec(n_r, n_t, channels=(64, 128), slope=0.2):
    """Two stride-2 conv4 + leaky relu stages, then a linear dense score."""
    c1, c2 = channels
    layers = [
        Conv2D(4, 2, c1, stride=2), Activation("leaky_relu", slope),
        Conv2D(4, c1, c2, stride=2), Activation("leaky_relu", slope),
    ]
    spec = NetworkSpec(input_shape=(n_r, n_t, 2), layers=layers)
    flat = int(np.prod(spec.output_shape))
    layers += [Reshape((flat,)), Dense(flat, 1), Activation("linear")]
    return NetworkSpec(input_shape=(n_r, n_t, 2), layers=layers)


def generator_forward(store, spec, z, mode="infer"):
    """Generator output ``(n_r, n_t, 2)`` (or batched) and its tape."""
    return forward(spec, store, z, train=_train_flag(mode))


def generator_backward(tape, upstream):
    return backward(tape, upstream)


def critic_forward(store, spec, x, mode="infer"):
    """Critic score(s); a scalar for a single unbatched input."""
    out, tape = forward(spec, store, x, train=_train_flag(mode))
    return (float(out[0]) if tape.squeeze else out[:, 0]), tape


def critic_backward(tape, upstream):
    up = np.asarray(upstream, dtype=tape.store.dtype)
    up = up.reshape(1) if tape.squeeze else up[:, None]
    return backward(tape, up)


def _train_flag(mode):
    if mode not in ("train", "infer"):
        raise ArgumentError(f"mode must be 'train' or 'infer', got {mode!r}")
    return mode == "train"


def with_stats(store, stats):
    return replace(store, stats=stats)
