"""SNR-adaptive top-k sparsification with error feedback, plus the quantized baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SimConfig

DENSE_VALUE_BITS = 32


@dataclass(frozen=True)
class SparseUpdate:
    dim: int
    indices: np.ndarray
    values: np.ndarray
    value_bits: int = DENSE_VALUE_BITS

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if idx.ndim != 1 or len(idx) != len(self.values):
            raise ValueError("indices and values must be 1-D and equally long")
        if len(idx) and (idx[0] < 0 or idx[-1] >= self.dim or np.any(np.diff(idx) <= 0)):
            raise ValueError("indices must be strictly increasing and within [0, dim)")

    @property
    def k(self) -> int:
        return len(self.indices)

    @classmethod
    def empty(cls, dim: int) -> "SparseUpdate":
        return cls(dim, np.empty(0, dtype=np.int64), np.empty(0))


@dataclass(frozen=True)
class QuantizedVector:
    dim: int
    codes: np.ndarray
    scale: float
    offset: float
    bits: int

    def dequantize(self) -> np.ndarray:
        return self.offset + self.codes * self.scale


def compression_rate(snr_db: float, cfg: SimConfig) -> float:
    """Fraction of entries to drop on a link at ``snr_db``: falls linearly as SNR rises."""
    span = cfg.snr_max_db - cfg.snr_min_db
    cr = cfg.cr_max - (cfg.cr_max - cfg.cr_min) * (snr_db - cfg.snr_min_db) / span
    return min(max(cr, cfg.cr_min), cfg.cr_max)


def keep_count(dim: int, keep_fraction: float) -> int:
    if not keep_fraction > 0:
        raise ValueError(f"keep_fraction must be > 0, got {keep_fraction}")
    if keep_fraction > 1:
        raise ValueError(f"keep_fraction must be <= 1, got {keep_fraction}")
    return max(1, math.floor(keep_fraction * dim))


def topk_compress(v: np.ndarray, keep_fraction: float) -> SparseUpdate:
    """Keep the ``k`` largest-magnitude entries; ties go to the lower index."""
    v = np.asarray(v, dtype=np.float64)
    dim = v.size
    k = keep_count(dim, keep_fraction)
    if k >= dim:
        idx = np.arange(dim)
    else:
        mag = np.abs(v)
        kth = np.partition(mag, dim - k)[dim - k]
        above = np.flatnonzero(mag > kth)
        ties = np.flatnonzero(mag == kth)[: k - len(above)]
        idx = np.sort(np.concatenate([above, ties]))
    return SparseUpdate(dim, idx, v[idx].copy())


def apply_sparse(u: SparseUpdate) -> np.ndarray:
    out = np.zeros(u.dim)
    out[u.indices] = u.values
    return out


def index_bits(dim: int) -> int:
    return max(1, math.ceil(math.log2(dim))) if dim > 1 else 1


def payload_bits(u: SparseUpdate) -> int:
    return u.k * (u.value_bits + index_bits(u.dim))


def dense_bits(dim: int) -> int:
    return dim * DENSE_VALUE_BITS


def quantized_bits(q: QuantizedVector) -> int:
    # Codes plus offset and scale as two 32-bit floats.
    if q.bits >= DENSE_VALUE_BITS:
        return dense_bits(q.dim)
    return q.dim * q.bits + 2 * DENSE_VALUE_BITS


def quantize_uniform(v: np.ndarray, bits: int, rng: np.random.Generator) -> QuantizedVector:
    """Unbiased stochastic rounding onto ``2**bits`` evenly spaced levels spanning [min, max]."""
    if not 1 <= bits <= 32:
        raise ValueError(f"bits must be in [1, 32], got {bits}")
    v = np.asarray(v, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    steps = 2**bits - 1
    if hi == lo:
        return QuantizedVector(v.size, np.zeros(v.size, dtype=np.int64), 0.0, lo, bits)
    scale = (hi - lo) / steps
    pos = (v - lo) / scale
    floor = np.floor(pos)
    codes = floor + (rng.random(v.size) < (pos - floor))
    codes = np.clip(codes, 0, steps).astype(np.int64)
    return QuantizedVector(v.size, codes, scale, lo, bits)


def error_feedback_step(
    residual: np.ndarray,
    delta: np.ndarray,
    keep_fraction: float,
    enabled: bool = True,
) -> tuple[SparseUpdate, np.ndarray]:
    """Compress ``residual + delta``; whatever is not sent becomes the new residual.

    With ``enabled=False`` the residual is ignored and the returned one is zero.
    """
    residual = np.asarray(residual, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if residual.shape != delta.shape:
        raise ValueError(f"dimension mismatch: residual {residual.shape} vs delta {delta.shape}")
    acc = residual + delta if enabled else delta
    update = topk_compress(acc, keep_fraction)
    if not enabled:
        return update, np.zeros_like(delta)
    new_residual = acc.copy()
    new_residual[update.indices] = 0.0
    return update, new_residual
