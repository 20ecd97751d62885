"""Wireless link model: SNR process, AWGN on semantic symbols, Shannon-rate energy."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ChannelDraw:
    snr_db: float

    @property
    def snr_linear(self) -> float:
        return db_to_linear(self.snr_db)


def db_to_linear(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


def noise_variance(snr_db: float) -> float:
    """Per-symbol noise variance for unit-power symbols."""
    return 10.0 ** (-snr_db / 10.0)


def sample_snr(rng: np.random.Generator, lo: float, hi: float) -> ChannelDraw:
    if lo > hi:
        raise ValueError(f"SNR range is empty: lo={lo} > hi={hi}")
    if lo == hi:
        return ChannelDraw(float(lo))
    return ChannelDraw(float(rng.uniform(lo, hi)))


def normalize_power(symbols: np.ndarray) -> np.ndarray:
    """Scale each row (or the vector) to unit mean power."""
    x = np.asarray(symbols, dtype=np.float64)
    if x.size == 0 or x.shape[-1] == 0:
        raise ValueError("empty payload")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite symbol")
    energy = np.sum(x * x, axis=-1, keepdims=True)
    if np.any(energy == 0):
        raise ValueError("zero-power signal")
    return x * np.sqrt(x.shape[-1] / energy)


def awgn_transmit(symbols: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Power-normalize ``symbols`` along the last axis and add white Gaussian noise.

    A 2-D input is treated as a batch: every row is normalized on its own and
    gets independent noise.
    """
    x = normalize_power(symbols)
    sigma = math.sqrt(noise_variance(snr_db))
    return x + sigma * rng.standard_normal(x.shape)


def shannon_rate(bandwidth_hz: float, snr_db: float) -> float:
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    return bandwidth_hz * math.log2(1.0 + db_to_linear(snr_db))


def tx_energy(bits: float, power_w: float, rate: float) -> float:
    """Joules spent pushing ``bits`` through a link of ``rate`` bit/s at ``power_w``."""
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if bits < 0:
        raise ValueError(f"negative payload: {bits} bits")
    return power_w * bits / rate


@dataclass
class EnergyLedger:
    """Communication energy per (entity, round). Entries keep insertion order."""

    entries: list = field(default_factory=list)
    _cell: dict = field(default_factory=lambda: defaultdict(float), repr=False)

    def charge(self, entity: str, round_idx: int, joules: float) -> "EnergyLedger":
        if not joules >= 0:
            raise ValueError(f"energy charge must be >= 0, got {joules}")
        self.entries.append((entity, round_idx, float(joules)))
        self._cell[(entity, round_idx)] += float(joules)
        return self

    def entity_total(self, entity: str) -> float:
        return math.fsum(j for e, _, j in self.entries if e == entity)

    def round_total(self, round_idx: int) -> float:
        # Fixed order: insertion order, which the orchestrator keeps sorted by id.
        total = 0.0
        for _, r, j in self.entries:
            if r == round_idx:
                total += j
        return total

    def cell(self, entity: str, round_idx: int) -> float:
        return self._cell.get((entity, round_idx), 0.0)

    def entities(self) -> list[str]:
        return sorted({e for e, _, _ in self.entries})

    def count(self, round_idx: int) -> int:
        return sum(1 for _, r, _ in self.entries if r == round_idx)
