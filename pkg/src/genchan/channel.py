"""Clustered narrowband MIMO channel generator and element-wise normalization.

A realization is

    H = sqrt(N_t * N_r / L) * sum_l alpha_l * a_R(theta_l) * a_T(phi_l)^H

with ULA steering vectors of configurable element spacing (in wavelengths).
Small spacing gives strongly correlated, low effective rank channels.
"""
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigError, FormatError

SIGMA_FLOOR = 1e-6
MAX_CENTER_ANGLE = np.pi / 3


@dataclass(frozen=True)
class ArrayGeometry:
    num_antennas: int
    spacing_wavelengths: float = 0.1

    def __post_init__(self):
        if self.num_antennas < 1:
            raise ConfigError("num_antennas must be >= 1")
        if not 0.0 < self.spacing_wavelengths <= 10.0:
            raise ConfigError("spacing_wavelengths must lie in (0, 10]")


@dataclass(frozen=True)
class ChannelConfig:
    n_r: int = 16
    n_t: int = 64
    spacing: float = 0.1
    n_clusters: int = 3
    rays_per_cluster: int = 10
    angular_spread: float = float(np.deg2rad(5.0))

    def __post_init__(self):
        if self.n_clusters < 1 or self.rays_per_cluster < 1:
            raise ConfigError("n_clusters and rays_per_cluster must be >= 1")
        if self.angular_spread < 0:
            raise ConfigError("angular_spread must be >= 0")

    @property
    def num_paths(self):
        return self.n_clusters * self.rays_per_cluster

    @property
    def tx(self):
        return ArrayGeometry(self.n_t, self.spacing)

    @property
    def rx(self):
        return ArrayGeometry(self.n_r, self.spacing)


@dataclass(frozen=True)
class ClusterParams:
    aoa: np.ndarray
    aod: np.ndarray
    gains: np.ndarray
    angular_spread: float = 0.0

    def __post_init__(self):
        n = len(self.gains)
        if n < 1 or len(self.aoa) != n or len(self.aod) != n:
            raise ArgumentError("aoa, aod and gains must share a length >= 1")

    @property
    def num_paths(self):
        return len(self.gains)


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray
    params: ClusterParams
    geometry_tx: ArrayGeometry
    geometry_rx: ArrayGeometry


@dataclass(frozen=True)
class NormalizationStats:
    """Per-element mean and standard deviation.

    Both arrays have length ``2 * n_r * n_t``: the real plane followed by the
    imaginary plane, each flattened column-major.
    """

    mu: np.ndarray
    sigma: np.ndarray
    n_r: int
    n_t: int

    def __post_init__(self):
        size = 2 * self.n_r * self.n_t
        if self.mu.shape != (size,) or self.sigma.shape != (size,):
            raise ArgumentError(f"stats arrays must have shape ({size},)")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.sigma))):
            raise ArgumentError("stats must be finite")

    @property
    def size(self):
        return self.mu.size


def steering_vector(geometry, angle):
    n = np.arange(geometry.num_antennas)
    phase = 2.0 * np.pi * geometry.spacing_wavelengths * n * np.sin(angle)
    return np.exp(1j * phase) / np.sqrt(geometry.num_antennas)


def steering_matrix(geometry, angles):
    """Steering vectors for several angles stacked as columns."""
    n = np.arange(geometry.num_antennas)[:, None]
    phase = 2.0 * np.pi * geometry.spacing_wavelengths * n * np.sin(np.asarray(angles))[None, :]
    return np.exp(1j * phase) / np.sqrt(geometry.num_antennas)


def sample_cluster_params(config, rng):
    c, r = config.n_clusters, config.rays_per_cluster
    centers_r = rng.uniform(-MAX_CENTER_ANGLE, MAX_CENTER_ANGLE, size=c)
    centers_t = rng.uniform(-MAX_CENTER_ANGLE, MAX_CENTER_ANGLE, size=c)
    # Laplacian ray offsets with standard deviation equal to the spread
    scale = config.angular_spread / np.sqrt(2.0)
    off_r = rng.laplace(0.0, scale, size=(c, r)) if scale > 0 else np.zeros((c, r))
    off_t = rng.laplace(0.0, scale, size=(c, r)) if scale > 0 else np.zeros((c, r))
    aoa = np.clip(centers_r[:, None] + off_r, -np.pi / 2, np.pi / 2).ravel()
    aod = np.clip(centers_t[:, None] + off_t, -np.pi / 2, np.pi / 2).ravel()
    gains = (rng.standard_normal(c * r) + 1j * rng.standard_normal(c * r)) / np.sqrt(2.0)
    return ClusterParams(aoa=aoa, aod=aod, gains=gains, angular_spread=config.angular_spread)


def generate_channel(params, tx, rx):
    a_r = steering_matrix(rx, params.aoa)
    a_t = steering_matrix(tx, params.aod)
    scale = np.sqrt(tx.num_antennas * rx.num_antennas / params.num_paths)
    h = scale * (a_r * params.gains) @ a_t.conj().T
    return ChannelRealization(h=h, params=params, geometry_tx=tx, geometry_rx=rx)


def stream(seed, index):
    """RNG stream for item ``index`` under master ``seed``.

    Equivalent to ``np.random.SeedSequence(seed).spawn(n)[index]`` for any
    ``n > index``, so streams are independent of how many are drawn.
    """
    key = index if isinstance(index, tuple) else (index,)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def random_channel(config, rng):
    params = sample_cluster_params(config, rng)
    return generate_channel(params, config.tx, config.rx)


def generate_dataset(config, count, seed):
    """``count`` channel matrices, shape ``(count, n_r, n_t)``."""
    out = np.empty((count, config.n_r, config.n_t), dtype=np.complex128)
    for i in range(count):
        out[i] = random_channel(config, stream(seed, i)).h
    return out


def effective_rank(h, rel=0.01):
    s = np.linalg.svd(h, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s >= rel * s[0]))


def _as_stack(dataset):
    if isinstance(dataset, np.ndarray):
        arr = dataset if dataset.ndim == 3 else dataset[None]
    else:
        arr = np.stack([d.h if isinstance(d, ChannelRealization) else np.asarray(d) for d in dataset])
    return arr


def to_flat(h):
    """Complex matrix (or stack) to the real/imag column-major layout."""
    h = np.asarray(h)
    if h.ndim == 2:
        return np.concatenate([h.real.reshape(-1, order="F"), h.imag.reshape(-1, order="F")])
    n = h.shape[0]
    re = h.real.transpose(0, 2, 1).reshape(n, -1)
    im = h.imag.transpose(0, 2, 1).reshape(n, -1)
    return np.concatenate([re, im], axis=1)


def from_flat(g, n_r, n_t):
    g = np.asarray(g)
    half = n_r * n_t
    if g.shape[-1] != 2 * half:
        raise ArgumentError(f"expected trailing length {2 * half}, got {g.shape[-1]}")
    if g.ndim == 1:
        re = g[:half].reshape(n_r, n_t, order="F")
        im = g[half:].reshape(n_r, n_t, order="F")
        return re + 1j * im
    re = g[:, :half].reshape(-1, n_t, n_r).transpose(0, 2, 1)
    im = g[:, half:].reshape(-1, n_t, n_r).transpose(0, 2, 1)
    return re + 1j * im


def flat_to_tensor(g, n_r, n_t):
    """Flat layout to ``(..., n_r, n_t, 2)`` real tensors."""
    h = from_flat(g, n_r, n_t)
    return np.stack([h.real, h.imag], axis=-1)


def tensor_to_flat(x):
    x = np.asarray(x)
    return to_flat(x[..., 0] + 1j * x[..., 1])


def compute_norm_stats(dataset, sigma_floor=SIGMA_FLOOR):
    arr = _as_stack(dataset)
    if arr.shape[0] == 0:
        raise ArgumentError("dataset is empty")
    flat = to_flat(arr).astype(np.float64)
    mu = flat.mean(axis=0)
    sigma = np.maximum(flat.std(axis=0), sigma_floor)
    return NormalizationStats(mu=mu, sigma=sigma, n_r=arr.shape[1], n_t=arr.shape[2])


def normalize(h, stats):
    """Normalize a channel (matrix, stack, or realization) to the flat layout."""
    if isinstance(h, ChannelRealization):
        h = h.h
    h = np.asarray(h)
    if h.shape[-2:] != (stats.n_r, stats.n_t):
        raise ArgumentError(f"channel shape {h.shape} does not match stats ({stats.n_r}, {stats.n_t})")
    return (to_flat(h) - stats.mu) / stats.sigma


def denormalize(g, stats):
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != stats.size:
        raise ArgumentError(f"length {g.shape[-1]} does not match stats length {stats.size}")
    return from_flat(stats.mu + stats.sigma * g, stats.n_r, stats.n_t)


# -- GCH1 dataset files ------------------------------------------------------

_GCH_MAGIC = b"GCH1"
_GCH_HEADER = struct.Struct("<4sIII")


def write_dataset(path, channels, stats=None):
    """Write a channel stack as a GCH1 file.

    Layout: ``"GCH1"``, u32 n_r, u32 n_t, u32 count, then ``count`` records of
    ``2*n_r*n_t`` little-endian float32 (real plane, imaginary plane, each
    column-major), then ``mu`` and ``sigma`` as little-endian float64 arrays.
    """
    arr = _as_stack(channels)
    count, n_r, n_t = arr.shape
    if stats is None:
        stats = compute_norm_stats(arr)
    payload = [
        _GCH_HEADER.pack(_GCH_MAGIC, n_r, n_t, count),
        to_flat(arr).astype("<f4").tobytes(),
        stats.mu.astype("<f8").tobytes(),
        stats.sigma.astype("<f8").tobytes(),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(payload))


def read_dataset(path):
    """Read a GCH1 file, returning ``(channels, stats)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _GCH_HEADER.size:
        raise FormatError("truncated GCH1 header")
    magic, n_r, n_t, count = _GCH_HEADER.unpack_from(raw, 0)
    if magic != _GCH_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_GCH_MAGIC!r}")
    size = 2 * n_r * n_t
    expected = _GCH_HEADER.size + 4 * size * count + 16 * size
    if len(raw) != expected:
        raise FormatError(f"GCH1 file has {len(raw)} bytes, expected {expected}")
    off = _GCH_HEADER.size
    flat = np.frombuffer(raw, dtype="<f4", count=size * count, offset=off).reshape(count, size)
    off += 4 * size * count
    mu = np.frombuffer(raw, dtype="<f8", count=size, offset=off).astype(np.float64)
    sigma = np.frombuffer(raw, dtype="<f8", count=size, offset=off + 8 * size).astype(np.float64)
    channels = from_flat(flat.astype(np.float64), n_r, n_t)
    return channels, NormalizationStats(mu=mu, sigma=sigma, n_r=n_r, n_t=n_t)
