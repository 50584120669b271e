"""Pilot transmission, the Kronecker sensing operator and one-bit quantization.

Received training signal, column-stacked::

    y = (P^T kron I_{N_r}) vec(H) s + n

The operator is applied matrix-free as ``vec(H @ P) * s``.
"""
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateError, FormatError, UnsupportedError
from .linalg import kron, unvec, vec

QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


@dataclass(frozen=True)
class PilotMatrix:
    """Training precoder ``p`` (N_t x N_p) and training symbol ``s``."""

    p: np.ndarray
    s: complex = 1.0

    def __post_init__(self):
        if self.p.ndim != 2 or self.p.shape[1] < 1:
            raise ArgumentError("pilot matrix must be 2-D with N_p >= 1")

    @property
    def n_t(self):
        return self.p.shape[0]

    @property
    def n_p(self):
        return self.p.shape[1]

    def is_qpsk(self, atol=1e-12):
        d = np.abs(self.p[..., None] - QPSK)
        return bool(np.all(d.min(axis=-1) <= atol))


@dataclass(frozen=True)
class SensingOperator:
    pilot: PilotMatrix
    n_r: int

    @property
    def n_t(self):
        return self.pilot.n_t

    @property
    def shape(self):
        return (self.n_r * self.pilot.n_p, self.n_r * self.pilot.n_t)

    def apply(self, vec_h):
        vec_h = np.asarray(vec_h)
        if vec_h.shape[-1] != self.shape[1]:
            raise ArgumentError(f"expected length {self.shape[1]}, got {vec_h.shape[-1]}")
        if vec_h.ndim == 1:
            return vec(unvec(vec_h, self.n_r, self.n_t) @ self.pilot.p) * self.pilot.s
        # batch of vectors along the leading axis
        h = vec_h.reshape(-1, self.n_t, self.n_r).transpose(0, 2, 1)
        y = (h @ self.pilot.p) * self.pilot.s
        return y.transpose(0, 2, 1).reshape(vec_h.shape[0], -1)

    def adjoint(self, vec_y):
        vec_y = np.asarray(vec_y)
        if vec_y.shape[-1] != self.shape[0]:
            raise ArgumentError(f"expected length {self.shape[0]}, got {vec_y.shape[-1]}")
        ph = self.pilot.p.conj().T * np.conj(self.pilot.s)
        if vec_y.ndim == 1:
            return vec(unvec(vec_y, self.n_r, self.pilot.n_p) @ ph)
        y = vec_y.reshape(-1, self.pilot.n_p, self.n_r).transpose(0, 2, 1)
        h = y @ ph
        return h.transpose(0, 2, 1).reshape(vec_y.shape[0], -1)

    def dense(self):
        """The explicit matrix ``s * (P^T kron I_{N_r})``."""
        return kron(self.pilot.p.T, np.eye(self.n_r)) * self.pilot.s


@dataclass(frozen=True)
class MeasurementSet:
    """Received vector plus how it was produced.

    ``quantization_bits`` is 1 for one-bit measurements and ``None`` for
    full resolution.
    """

    y: np.ndarray
    noise_var: float
    snr_db: float
    quantization_bits: int = None

    def __post_init__(self):
        if self.noise_var < 0:
            raise ArgumentError("noise_var must be >= 0")

    @property
    def is_onebit(self):
        return self.quantization_bits == 1


def n_pilots(alpha, n_t):
    """Pilot count for density ``alpha = N_p / N_t`` (at least one)."""
    if not 0.0 < alpha <= 1.0:
        raise ArgumentError("alpha must lie in (0, 1]")
    return max(1, int(round(alpha * n_t)))


def gen_pilots(n_t, n_p, rng, s=1.0):
    if n_t < 1 or n_p < 1:
        raise ArgumentError("n_t and n_p must be >= 1")
    idx = rng.integers(0, 4, size=(n_t, n_p))
    return PilotMatrix(p=QPSK[idx], s=s)


def apply_sensing(op, vec_h):
    return op.apply(vec_h)


def snr_to_noise_var(snr_db, h, pilot):
    """Noise variance giving per-entry average signal power / noise power = SNR."""
    signal = vec(np.asarray(h) @ pilot.p) * pilot.s
    power = np.vdot(signal, signal).real / signal.size
    if power == 0.0:
        raise DegenerateError("zero channel has undefined SNR")
    return float(power / 10.0 ** (snr_db / 10.0))


def measure(h, pilot, snr_db, rng):
    """Noisy received training signal. ``snr_db=inf`` disables noise."""
    if hasattr(h, "h"):
        h = h.h
    h = np.asarray(h)
    if h.shape[1] != pilot.n_t:
        raise ArgumentError(f"channel has {h.shape[1]} tx antennas, pilot has {pilot.n_t}")
    clean = vec(h @ pilot.p) * pilot.s
    if np.isposinf(snr_db):
        return MeasurementSet(y=clean, noise_var=0.0, snr_db=snr_db)
    noise_var = snr_to_noise_var(snr_db, h, pilot)
    noise = np.sqrt(noise_var / 2.0) * (rng.standard_normal(clean.size) + 1j * rng.standard_normal(clean.size))
    return MeasurementSet(y=clean + noise, noise_var=noise_var, snr_db=snr_db)


def _sign(x):
    return np.where(x >= 0, 1.0, -1.0)


def quantize(y, bits=1):
    """One-bit quantizer on real and imaginary parts; output has unit modulus.

    ``bits`` of ``None`` or ``"full"`` returns ``y`` unchanged.
    """
    if bits is None or bits == "full":
        return np.asarray(y)
    if bits != 1:
        raise UnsupportedError(f"only one-bit quantization is implemented, got bits={bits!r}")
    y = np.asarray(y)
    return (_sign(y.real) + 1j * _sign(y.imag)) / np.sqrt(2.0)


def quantize_measurement(m):
    return MeasurementSet(y=quantize(m.y, 1), noise_var=m.noise_var, snr_db=m.snr_db, quantization_bits=1)


# -- GMS1 measurement dumps ----------------------------------------------------

_GMS_MAGIC = b"GMS1"
_GMS_HEADER = struct.Struct("<4sIIBd")


def write_measurement(path, m, n_r):
    """Write ``m`` as GMS1.

    Layout: ``"GMS1"``, u32 n_r, u32 n_p, u8 bits (0 = full resolution),
    f64 noise variance, then ``n_r*n_p`` interleaved little-endian float64
    ``(re, im)`` pairs.
    """
    n = m.y.size
    if n % n_r:
        raise ArgumentError(f"length {n} is not a multiple of n_r={n_r}")
    bits = m.quantization_bits or 0
    y = np.empty(2 * n, dtype="<f8")
    y[0::2] = m.y.real
    y[1::2] = m.y.imag
    with open(path, "wb") as fh:
        fh.write(_GMS_HEADER.pack(_GMS_MAGIC, n_r, n // n_r, bits, float(m.noise_var)) + y.tobytes())


def read_measurement(path):
    """Read a GMS1 file, returning ``(measurement, n_r)``.

    The SNR is not stored; ``snr_db`` comes back as NaN.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _GMS_HEADER.size:
        raise FormatError("truncated GMS1 header")
    magic, n_r, n_p, bits, noise_var = _GMS_HEADER.unpack_from(raw, 0)
    if magic != _GMS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_GMS_MAGIC!r}")
    if bits not in (0, 1):
        raise FormatError(f"unsupported bit depth {bits}")
    n = n_r * n_p
    if len(raw) != _GMS_HEADER.size + 16 * n:
        raise FormatError(f"GMS1 file has {len(raw)} bytes, expected {_GMS_HEADER.size + 16 * n}")
    pairs = np.frombuffer(raw, dtype="<f8", offset=_GMS_HEADER.size)
    y = pairs[0::2] + 1j * pairs[1::2]
    return MeasurementSet(y=y, noise_var=noise_var, snr_db=float("nan"), quantization_bits=bits or None), n_r
