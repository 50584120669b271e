"""GGW1: binary weight files for a network spec plus its parameters.

Layout (little-endian)::

    "GGW1" | u16 version | u8 ndim | u32 input dims... | u32 layer count
    per layer:  u8 kind tag | kind config | float32 params | BN running stats
    u8 has_stats | [u32 n_r | u32 n_t | f64 mu[2 n_r n_t] | f64 sigma[...]]

Parameters are written in ``param_shapes`` order, C-contiguous.
"""
import struct

import numpy as np

from ..channel import NormalizationStats
from ..errors import FormatError
from .layers import ACTIVATIONS, LAYER_KINDS, Activation, BatchNorm, Conv2D, Dense, Reshape, Upsample2x
from .network import NetworkSpec, WeightStore

MAGIC = b"GGW1"
VERSION = 1
_KIND_NAMES = {v: k for k, v in ACTIVATIONS.items()}


def _layer_config(layer):
    if isinstance(layer, Dense):
        return struct.pack("<II", layer.n_in, layer.n_out)
    if isinstance(layer, Reshape):
        return struct.pack(f"<B{len(layer.shape)}I", len(layer.shape), *layer.shape)
    if isinstance(layer, Upsample2x):
        return b""
    if isinstance(layer, Conv2D):
        return struct.pack("<IIII", layer.kernel, layer.in_ch, layer.out_ch, layer.stride)
    if isinstance(layer, BatchNorm):
        return struct.pack("<I", layer.channels)
    if isinstance(layer, Activation):
        return struct.pack("<Bd", ACTIVATIONS[layer.kind], layer.slope)
    raise FormatError(f"cannot serialize layer {layer!r}")


def save_weights(path, spec, store):
    """Write ``spec`` and ``store`` to ``path``; parameters are stored as float32."""
    store.check_matches(spec)
    out = [MAGIC, struct.pack("<HB", VERSION, len(spec.input_shape))]
    out.append(struct.pack(f"<{len(spec.input_shape)}I", *spec.input_shape))
    out.append(struct.pack("<I", len(spec.layers)))
    for layer, p, r in zip(spec.layers, store.params, store.running):
        out.append(struct.pack("<B", layer.tag) + _layer_config(layer))
        for name in layer.param_shapes():
            out.append(np.ascontiguousarray(p[name], dtype="<f4").tobytes())
        if isinstance(layer, BatchNorm):
            out.append(np.ascontiguousarray(r["mean"], dtype="<f4").tobytes())
            out.append(np.ascontiguousarray(r["var"], dtype="<f4").tobytes())
    stats = store.stats
    if stats is None:
        out.append(b"\x00")
    else:
        out.append(struct.pack("<BII", 1, stats.n_r, stats.n_t))
        out.append(np.asarray(stats.mu, dtype="<f8").tobytes())
        out.append(np.asarray(stats.sigma, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        if self.pos + s.size > len(self.raw):
            raise FormatError(f"truncated GGW1 file at byte {self.pos}")
        vals = s.unpack_from(self.raw, self.pos)
        self.pos += s.size
        return vals

    def array(self, dtype, shape):
        count = int(np.prod(shape))
        nbytes = count * np.dtype(dtype).itemsize
        if self.pos + nbytes > len(self.raw):
            raise FormatError(f"truncated GGW1 file at byte {self.pos}")
        a = np.frombuffer(self.raw, dtype=dtype, count=count, offset=self.pos).reshape(shape)
        self.pos += nbytes
        return a.astype(np.dtype(dtype).newbyteorder("="))


def _read_layer(rd):
    (tag,) = rd.unpack("<B")
    cls = LAYER_KINDS.get(tag)
    if cls is None:
        raise FormatError(f"unknown layer kind tag {tag}")
    if cls is Dense:
        return Dense(*rd.unpack("<II"))
    if cls is Reshape:
        (nd,) = rd.unpack("<B")
        return Reshape(tuple(rd.unpack(f"<{nd}I")))
    if cls is Upsample2x:
        return Upsample2x()
    if cls is Conv2D:
        return Conv2D(*rd.unpack("<IIII"))
    if cls is BatchNorm:
        return BatchNorm(*rd.unpack("<I"))
    kind, slope = rd.unpack("<Bd")
    if kind not in _KIND_NAMES:
        raise FormatError(f"unknown activation code {kind}")
    return Activation(_KIND_NAMES[kind], slope)


def load_weights(path):
    """Read a GGW1 file, returning ``(spec, store)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    rd = _Reader(raw)
    (magic,) = rd.unpack("<4s")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, nd = rd.unpack("<HB")
    if version != VERSION:
        raise FormatError(f"unsupported GGW1 version {version}")
    input_shape = rd.unpack(f"<{nd}I")
    (n_layers,) = rd.unpack("<I")
    layers, params, running = [], [], []
    for _ in range(n_layers):
        layer = _read_layer(rd)
        layers.append(layer)
        params.append({name: rd.array("<f4", shape) for name, shape in layer.param_shapes().items()})
        if isinstance(layer, BatchNorm):
            running.append({"mean": rd.array("<f4", (layer.channels,)), "var": rd.array("<f4", (layer.channels,))})
        else:
            running.append(None)
    try:
        spec = NetworkSpec(input_shape=input_shape, layers=layers)
    except ValueError as exc:
        raise FormatError(f"inconsistent layer stack: {exc}") from exc
    (has_stats,) = rd.unpack("<B")
    stats = None
    if has_stats == 1:
        n_r, n_t = rd.unpack("<II")
        mu = rd.array("<f8", (2 * n_r * n_t,))
        sigma = rd.array("<f8", (2 * n_r * n_t,))
        stats = NormalizationStats(mu=mu, sigma=sigma, n_r=n_r, n_t=n_t)
    elif has_stats != 0:
        raise FormatError(f"bad stats flag {has_stats}")
    if rd.pos != len(raw):
        raise FormatError(f"{len(raw) - rd.pos} trailing bytes after GGW1 payload")
    return spec, WeightStore(params=params, running=running, stats=stats, dtype=np.float32)
