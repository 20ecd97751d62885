"""Shared types, configuration and the seeded randomness contract."""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

# Parameter vectors are plain 1-D float64 arrays.
ParamVector = np.ndarray

TOPOLOGY_KINDS = ("ring", "path", "complete")
AGGREGATION_MODES = ("counts", "snr")


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_bs: int = 3
    total_meds: int = 20
    topology_kind: str = "complete"
    snr_min_db: float = 0.1
    snr_max_db: float = 20.0
    power_w: float = 0.1
    bandwidth_hz: float = 1e6
    cr_min: float = 0.8
    cr_max: float = 0.95
    quant_bits: int = 8
    local_iters: int = 5
    rounds: int = 100
    lr: float = 2.0
    latent_dim: int = 32
    hidden_dim: int = 64
    image_size: int = 16
    lambda_cls: float = 0.03
    dirichlet_alpha: float = 0.3
    error_feedback: bool = True
    dataset_source: str = "synthetic"
    n_samples: int = 226
    aggregation_weights: str = "counts"
    min_meds_per_bs: int = 1
    max_meds_per_bs: int = 10

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


def validate_config(cfg: SimConfig) -> list[str]:
    """Return the names of every violated invariant; an empty list means valid."""
    problems = []

    def need(ok: bool, name: str) -> None:
        if not ok:
            problems.append(name)

    need(cfg.seed >= 0, "seed >= 0")
    need(cfg.n_bs >= 1, "n_bs >= 1")
    need(cfg.topology_kind in TOPOLOGY_KINDS, f"topology_kind in {TOPOLOGY_KINDS}")
    need(cfg.snr_min_db < cfg.snr_max_db, "snr_min_db < snr_max_db")
    need(cfg.cr_min >= 0, "cr_min >= 0")
    need(cfg.cr_min <= cfg.cr_max, "cr_min <= cr_max")
    need(cfg.cr_max < 1, "cr_max < 1")
    need(cfg.power_w > 0, "power_w > 0")
    need(cfg.bandwidth_hz > 0, "bandwidth_hz > 0")
    need(cfg.total_meds >= cfg.n_bs, "total_meds >= n_bs")
    need(1 <= cfg.min_meds_per_bs <= cfg.max_meds_per_bs, "1 <= min_meds_per_bs <= max_meds_per_bs")
    need(
        cfg.n_bs * cfg.min_meds_per_bs <= cfg.total_meds <= cfg.n_bs * cfg.max_meds_per_bs,
        "n_bs * min_meds_per_bs <= total_meds <= n_bs * max_meds_per_bs",
    )
    need(1 <= cfg.quant_bits <= 32, "1 <= quant_bits <= 32")
    need(cfg.local_iters >= 1, "local_iters >= 1")
    need(cfg.rounds >= 0, "rounds >= 0")
    need(cfg.lr >= 0, "lr >= 0")
    need(cfg.latent_dim >= 1, "latent_dim >= 1")
    need(cfg.hidden_dim >= 1, "hidden_dim >= 1")
    need(cfg.image_size >= 8, "image_size >= 8")
    need(cfg.lambda_cls >= 0, "lambda_cls >= 0")
    need(cfg.dirichlet_alpha > 0, "dirichlet_alpha > 0")
    need(cfg.n_samples >= 4, "n_samples >= 4")
    need(
        cfg.aggregation_weights in AGGREGATION_MODES,
        f"aggregation_weights in {AGGREGATION_MODES}",
    )
    need(bool(cfg.dataset_source), "dataset_source nonempty")
    return problems


class ConfigError(ValueError):
    pass


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(raw: str, typ: type, key: str):
    if typ is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


_FIELD_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def dump_config(cfg: SimConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: SimConfig | None = None) -> SimConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys raise."""
    types = {f.name: _FIELD_TYPES[f.type] for f in dataclasses.fields(SimConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(raw, types[key], key)
    return dataclasses.replace(base or SimConfig(), **values)


def load_config(path: Union[str, Path]) -> SimConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------

def derive_rng(master_seed: int, entity, round_idx: int, purpose: str) -> np.random.Generator:
    """Counter-based stream keyed by ``(master_seed, entity, round, purpose)``.

    The Philox key is a hash of the four inputs, so the stream depends on
    nothing else (in particular not on the order streams are created in).
    """
    tag = f"{int(master_seed)}|{entity}|{int(round_idx)}|{purpose}".encode()
    digest = hashlib.blake2b(tag, digest_size=16, person=b"dsfl-rng").digest()
    key = np.array(struct.unpack("<2Q", digest), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def med_id(i: int) -> str:
    return f"med:{i}"


def bs_id(i: int) -> str:
    return f"bs:{i}"


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    n_bs: int
    bs_edges: frozenset
    med_assignment: dict = field(hash=False)

    def __post_init__(self):
        for i, j in self.bs_edges:
            if i == j:
                raise ValueError(f"self-loop on BS {i}")
            if not (0 <= i < self.n_bs and 0 <= j < self.n_bs):
                raise ValueError(f"edge ({i}, {j}) out of range")
        for med, bs in self.med_assignment.items():
            if not 0 <= bs < self.n_bs:
                raise ValueError(f"MED {med} assigned to unknown BS {bs}")

    def neighbors(self, i: int) -> list[int]:
        out = [b if a == i else a for a, b in self.bs_edges if i in (a, b)]
        return sorted(out)

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    def meds_of(self, bs: int) -> list[int]:
        return sorted(m for m, b in self.med_assignment.items() if b == bs)

    def is_connected(self) -> bool:
        seen, stack = {0}, [0]
        while stack:
            for j in self.neighbors(stack.pop()):
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n_bs


def bs_graph_edges(n_bs: int, kind: str) -> frozenset:
    if kind == "complete":
        edges = {(i, j) for i in range(n_bs) for j in range(i + 1, n_bs)}
    elif kind == "path":
        edges = {(i, i + 1) for i in range(n_bs - 1)}
    elif kind == "ring":
        edges = {(i, i + 1) for i in range(n_bs - 1)}
        if n_bs > 2:
            edges.add((0, n_bs - 1))
    else:
        raise ValueError(f"unknown topology kind {kind!r}")
    return frozenset(edges)


def build_topology(cfg: SimConfig) -> Topology:
    """Round-robin the MEDs over BSs, then shuffle the assignment with a seeded stream."""
    rng = derive_rng(cfg.seed, "topology", 0, "assignment")
    slots = np.arange(cfg.total_meds) % cfg.n_bs
    rng.shuffle(slots)
    assignment = {m: int(b) for m, b in enumerate(slots)}
    topo = Topology(cfg.n_bs, bs_graph_edges(cfg.n_bs, cfg.topology_kind), assignment)
    for b in range(cfg.n_bs):
        n = len(topo.meds_of(b))
        if not cfg.min_meds_per_bs <= n <= cfg.max_meds_per_bs:
            raise ValueError(f"BS {b} covers {n} MEDs, outside [{cfg.min_meds_per_bs}, {cfg.max_meds_per_bs}]")
    return topo
