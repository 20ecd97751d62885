"""Two-layer DSFL rounds: intra-BS aggregation, inter-BS gossip, and the baselines.

Algorithms
----------
``dsfl``
    SNR-adaptive top-k (with optional error feedback) on every link.
``dfedavg``
    The same flow with every link sending the full vector at 32 bits/entry.
``qdfedavg``
    Dense stochastic uniform quantization at ``cfg.quant_bits`` on every link.

All three share topology, data, SNR draws and training noise for a given
seed, so the link codec is the only thing that differs between them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import channel, codec
from .channel import EnergyLedger
from .core import SimConfig, Topology, bs_id, build_topology, derive_rng, med_id, validate_config
from .data import Dataset, gen_synthetic, label_distribution, load_directory, partition_dirichlet, train_test_split
from .metrics import accuracy, ms_ssim_batch, psnr, tv_distance
from .semantics import SemanticModel, forward, init_model, local_train

log = logging.getLogger(__name__)

ALGORITHMS = ("dsfl", "dfedavg", "qdfedavg")
PROBE_SNRS_DB = (1.0, 13.0)
TEST_FRACTION = 0.2


class SimulationError(RuntimeError):
    def __init__(self, round_idx: int, cause: Exception):
        super().__init__(f"round {round_idx}: {cause}")
        self.round_idx = round_idx


@dataclass(frozen=True)
class RoundRecord:
    round: int
    algo: str
    seed: int
    psnr_mean_1db: float
    psnr_mean_13db: float
    ms_ssim_mean_1db: float
    ms_ssim_mean_13db: float
    accuracy: float
    energy_round_j: float
    energy_cum_j: float
    cr_mean: float
    snr_mean_db: float


@dataclass(frozen=True)
class Transmission:
    sender: str
    receiver: str
    bits: int
    snr_db: float
    cr: float
    joules: float


# ---------------------------------------------------------------------------
# Mixing matrix
# ---------------------------------------------------------------------------

def build_mixing_matrix(topo: Topology) -> np.ndarray:
    """Metropolis weights: ``1 / (1 + max(deg_i, deg_j))`` on every edge."""
    if not topo.is_connected():
        raise ValueError("consensus impossible: the BS graph is disconnected")
    n = topo.n_bs
    W = np.zeros((n, n))
    deg = [topo.degree(i) for i in range(n)]
    for i, j in topo.bs_edges:
        W[i, j] = W[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    for i in range(n):
        W[i, i] = 1.0 - (W[i].sum() - W[i, i])
    return W


def second_eigenvalue(W: np.ndarray) -> float:
    """Second-largest eigenvalue magnitude of a symmetric mixing matrix."""
    mags = np.sort(np.abs(np.linalg.eigvalsh(W)))[::-1]
    return float(mags[1]) if len(mags) > 1 else 0.0


# ---------------------------------------------------------------------------
# Link codec
# ---------------------------------------------------------------------------

def encode_link(
    vec: np.ndarray,
    snr_db: float,
    residual: np.ndarray,
    cfg: SimConfig,
    algo: str,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Send ``vec`` over one link; returns ``(decoded, new residual, bits, cr)``."""
    if algo == "qdfedavg":
        q = codec.quantize_uniform(vec, cfg.quant_bits, rng)
        return q.dequantize(), residual, codec.quantized_bits(q), 0.0
    if algo == "dsfl":
        cr = codec.compression_rate(snr_db, cfg)
    elif algo == "dfedavg":
        cr = 0.0
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    update, residual = codec.error_feedback_step(residual, vec, 1.0 - cr, cfg.error_feedback)
    bits = codec.payload_bits(update) if algo == "dsfl" else codec.dense_bits(update.dim)
    return codec.apply_sparse(update), residual, bits, cr


def _charge(cfg: SimConfig, sender: str, receiver: str, bits: int, snr_db: float, cr: float) -> Transmission:
    rate = channel.shannon_rate(cfg.bandwidth_hz, snr_db)
    return Transmission(sender, receiver, bits, snr_db, cr, channel.tx_energy(bits, cfg.power_w, rate))


@dataclass
class IntraResult:
    aggregate: np.ndarray
    transmissions: list[Transmission]
    weights: dict[int, float]


def aggregation_weights(meds: list[int], counts: dict, snr_db: dict, mode: str = "counts") -> dict[int, float]:
    if mode == "counts":
        raw = {m: float(counts[m]) for m in meds}
    elif mode == "snr":
        raw = {m: channel.db_to_linear(snr_db[m]) for m in meds}
    else:
        raise ValueError(f"unknown weighting {mode!r}")
    total = sum(raw.values())
    return {m: raw[m] / total for m in meds}


def intra_bs_round(
    bs: int,
    deltas: dict[int, np.ndarray],
    counts: dict[int, int],
    snr_db: dict[int, float],
    cfg: SimConfig,
    residuals: dict[int, np.ndarray],
    algo: str = "dsfl",
    round_idx: int = 0,
) -> IntraResult:
    """Collect every MED's compressed delta at ``bs`` and form the weighted mean.

    ``residuals`` (one per MED) is updated in place.
    """
    meds = sorted(deltas)
    if not meds:
        raise ValueError(f"BS {bs} has no MEDs")
    weights = aggregation_weights(meds, counts, snr_db, cfg.aggregation_weights)
    aggregate = np.zeros_like(deltas[meds[0]])
    sent = []
    for m in meds:
        rng = derive_rng(cfg.seed, med_id(m), round_idx, "quant") if algo == "qdfedavg" else None
        decoded, residuals[m], bits, cr = encode_link(deltas[m], snr_db[m], residuals[m], cfg, algo, rng)
        aggregate += weights[m] * decoded
        sent.append(_charge(cfg, med_id(m), bs_id(bs), bits, snr_db[m], cr))
    return IntraResult(aggregate, sent, weights)


@dataclass
class GossipState:
    """Per directed edge ``(i, j)``: what ``j`` believes ``i`` holds, and ``i``'s residual."""

    estimates: dict[tuple[int, int], np.ndarray]
    residuals: dict[tuple[int, int], np.ndarray]
    last_sent: dict[int, np.ndarray]

    @classmethod
    def start(cls, params: list[np.ndarray], topo: Topology) -> "GossipState":
        edges = directed_edges(topo)
        return cls(
            estimates={(i, j): params[i].copy() for i, j in edges},
            residuals={(i, j): np.zeros_like(params[i]) for i, j in edges},
            last_sent={i: p.copy() for i, p in enumerate(params)},
        )


def directed_edges(topo: Topology) -> list[tuple[int, int]]:
    return sorted([(i, j) for i, j in topo.bs_edges] + [(j, i) for i, j in topo.bs_edges])


@dataclass
class InterResult:
    params: list[np.ndarray]
    transmissions: list[Transmission] = field(default_factory=list)


def inter_bs_round(
    params: list[np.ndarray],
    W: np.ndarray,
    snr_db: dict[tuple[int, int], float],
    cfg: SimConfig,
    state: GossipState,
    algo: str = "dsfl",
    round_idx: int = 0,
) -> InterResult:
    """One compressed gossip step across BSs.

    Each BS sends, per neighbor, the change in its parameters since its last
    broadcast (plus the edge residual). Receivers keep running estimates of
    their neighbors and mix: ``x_i += sum_j W[i, j] * (xhat_j - x_i)``.
    ``state`` is updated in place.
    """
    dims = {p.shape for p in params}
    if len(dims) != 1:
        raise ValueError(f"BS parameter dimensions differ: {sorted(dims)}")
    sent = []
    for i, j in sorted(state.estimates):
        if algo == "qdfedavg":
            vec = params[i] - state.estimates[(i, j)]
            rng = derive_rng(cfg.seed, f"{bs_id(i)}->{bs_id(j)}", round_idx, "quant")
        else:
            vec = params[i] - state.last_sent[i]
            rng = None
        decoded, state.residuals[(i, j)], bits, cr = encode_link(
            vec, snr_db[(i, j)], state.residuals[(i, j)], cfg, algo, rng
        )
        state.estimates[(i, j)] = state.estimates[(i, j)] + decoded
        sent.append(_charge(cfg, bs_id(i), bs_id(j), bits, snr_db[(i, j)], cr))
    for i, p in enumerate(params):
        state.last_sent[i] = p.copy()

    mixed = []
    for i, x in enumerate(params):
        step = np.zeros_like(x)
        for j in range(len(params)):
            if j != i and W[i, j] != 0:
                step += W[i, j] * (state.estimates[(j, i)] - x)
        mixed.append(x + step)
    return InterResult(mixed, sent)


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    """Everything fixed for a seed: topology, data, shards and the initial model."""

    cfg: SimConfig
    topology: Topology
    train: Dataset
    test: Dataset
    shards: dict[int, list[int]]
    initial: SemanticModel

    def bs_label_report(self) -> list[dict]:
        """Per BS: TV of the pooled label mix to global, and of each MED to global."""
        glob = label_distribution(self.train.labels)
        out = []
        for b in range(self.topology.n_bs):
            meds = self.topology.meds_of(b)
            pooled = np.concatenate([self.shards[m] for m in meds])
            med_tv = [tv_distance(label_distribution(self.train.labels[self.shards[m]]), glob) for m in meds]
            bs_tv = tv_distance(label_distribution(self.train.labels[pooled]), glob)
            out.append({"bs": b, "bs_tv": bs_tv, "med_tv": med_tv})
        return out


def load_dataset(cfg: SimConfig) -> Dataset:
    if cfg.dataset_source == "synthetic":
        return gen_synthetic(cfg.n_samples, cfg.image_size, derive_rng(cfg.seed, "data", 0, "generate"))
    return load_directory(cfg.dataset_source, cfg.image_size)


def build_scenario(cfg: SimConfig) -> Scenario:
    problems = validate_config(cfg)
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))
    topo = build_topology(cfg)
    ds = load_dataset(cfg)
    train, test = train_test_split(ds, derive_rng(cfg.seed, "data", 0, "split"), TEST_FRACTION)
    if len(test) == 0:
        raise ValueError("dataset too small for a test split")
    shards = partition_dirichlet(
        train.labels, cfg.total_meds, cfg.dirichlet_alpha, derive_rng(cfg.seed, "data", 0, "partition")
    )
    initial = init_model(cfg, derive_rng(cfg.seed, "global", 0, "init"))
    return Scenario(cfg, topo, train, test, shards, initial)


def evaluate(models: list[SemanticModel], test: Dataset, cfg: SimConfig, round_idx: int) -> dict[str, float]:
    """Mean PSNR / MS-SSIM per probe SNR and mean accuracy over BS models and probes."""
    n = len(test)
    images = test.images
    out = {}
    accs = []
    for snr in PROBE_SNRS_DB:
        psnrs, ssims = [], []
        for b, m in enumerate(models):
            rng = derive_rng(cfg.seed, bs_id(b), round_idx, f"eval@{snr:g}dB")
            recon, logits, _ = forward(m, images, snr, rng)
            recon = recon.reshape(images.shape)
            psnrs.extend(psnr(recon[k], images[k]) for k in range(n))
            ssims.extend(ms_ssim_batch(recon, images))
            accs.append(accuracy(np.argmax(logits, axis=1), test.labels))
        tag = f"{snr:g}db"
        out[f"psnr_mean_{tag}"] = float(np.mean(psnrs))
        out[f"ms_ssim_mean_{tag}"] = float(np.mean(ssims))
    out["accuracy"] = float(np.mean(accs))
    return out


def draw_link_snrs(cfg: SimConfig, topo: Topology, round_idx: int):
    med_snr = {
        m: channel.sample_snr(derive_rng(cfg.seed, med_id(m), round_idx, "snr"), cfg.snr_min_db, cfg.snr_max_db).snr_db
        for m in range(cfg.total_meds)
    }
    edge_snr = {
        (i, j): channel.sample_snr(
            derive_rng(cfg.seed, f"{bs_id(i)}->{bs_id(j)}", round_idx, "snr"), cfg.snr_min_db, cfg.snr_max_db
        ).snr_db
        for i, j in directed_edges(topo)
    }
    return med_snr, edge_snr


class Simulation:
    """Mutable run state for one algorithm on one scenario."""

    def __init__(self, scenario: Scenario, algo: str):
        if algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algo!r}")
        self.scenario = scenario
        self.cfg = scenario.cfg
        self.algo = algo
        self.topology = scenario.topology
        self.W = build_mixing_matrix(self.topology)
        self.models = [scenario.initial.copy() for _ in range(self.topology.n_bs)]
        dim = scenario.initial.dim
        self.med_residuals = {m: np.zeros(dim) for m in range(self.cfg.total_meds)}
        self.gossip = GossipState.start([m.params for m in self.models], self.topology)
        self.ledger = EnergyLedger()
        self.transmissions: dict[int, list[Transmission]] = {}
        self.cumulative = 0.0

    def step(self, r: int) -> RoundRecord:
        cfg, topo, sc = self.cfg, self.topology, self.scenario
        med_snr, edge_snr = draw_link_snrs(cfg, topo, r)

        deltas = {}
        for m in range(cfg.total_meds):
            idx = sc.shards[m]
            deltas[m], _ = local_train(
                self.models[topo.med_assignment[m]],
                sc.train.images[idx],
                sc.train.labels[idx],
                cfg.local_iters,
                cfg.lr,
                med_snr[m],
                derive_rng(cfg.seed, med_id(m), r, "train"),
                cfg.lambda_cls,
            )

        sent: list[Transmission] = []
        for b in range(topo.n_bs):
            meds = topo.meds_of(b)
            res = intra_bs_round(
                b,
                {m: deltas[m] for m in meds},
                {m: len(sc.shards[m]) for m in meds},
                {m: med_snr[m] for m in meds},
                cfg,
                self.med_residuals,
                self.algo,
                r,
            )
            self.models[b].add_(res.aggregate)
            sent.extend(res.transmissions)

        inter = inter_bs_round([m.params for m in self.models], self.W, edge_snr, cfg, self.gossip, self.algo, r)
        for model, p in zip(self.models, inter.params):
            model.set_params(p)
        sent.extend(inter.transmissions)

        sent.sort(key=_entity_order)
        for t in sent:
            self.ledger.charge(t.sender, r, t.joules)
        self.transmissions[r] = sent
        energy = self.ledger.round_total(r)
        self.cumulative += energy
        scores = evaluate(self.models, sc.test, cfg, r)
        return RoundRecord(
            round=r,
            algo=self.algo,
            seed=cfg.seed,
            energy_round_j=energy,
            energy_cum_j=self.cumulative,
            cr_mean=float(np.mean([t.cr for t in sent])),
            snr_mean_db=float(np.mean([t.snr_db for t in sent])),
            **scores,
        )


def _entity_order(t: Transmission):
    kind, _, num = t.sender.partition(":")
    rkind, _, rnum = t.receiver.partition(":")
    return (kind != "med", int(num), rkind, int(rnum))


def iter_rounds(cfg: SimConfig, algo: str, scenario: Scenario | None = None) -> Iterator[RoundRecord]:
    """Yield one record per global round (numbered from 1) as each completes."""
    sim = Simulation(scenario or build_scenario(cfg), algo)
    for r in range(1, cfg.rounds + 1):
        try:
            record = sim.step(r)
        except Exception as exc:
            raise SimulationError(r, exc) from exc
        log.debug("%s round %d: %s", algo, r, record)
        yield record


def run_experiment(cfg: SimConfig, algo: str, scenario: Scenario | None = None) -> list[RoundRecord]:
    """Run ``cfg.rounds`` global rounds of ``algo``; rounds are numbered from 1."""
    return list(iter_rounds(cfg, algo, scenario))
