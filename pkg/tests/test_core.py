import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsfl.core import (
    ConfigError,
    SimConfig,
    Topology,
    bs_graph_edges,
    build_topology,
    derive_rng,
    dump_config,
    parse_config,
    validate_config,
)


def test_same_derivation_same_stream():
    a = derive_rng(7, "med:3", 0, "channel").random(100)
    b = derive_rng(7, "med:3", 0, "channel").random(100)
    assert np.array_equal(a, b)


@pytest.mark.parametrize(
    "other",
    [(7, "med:4", 0, "channel"), (7, "med:3", 1, "channel"), (8, "med:3", 0, "channel"), (7, "med:3", 0, "train")],
)
def test_distinct_derivations_differ(other):
    a = derive_rng(7, "med:3", 0, "channel").random(100)
    b = derive_rng(*other).random(100)
    assert np.any(a != b)


def test_stream_independent_of_creation_order():
    first = derive_rng(1, "bs:0", 2, "x")
    _ = [derive_rng(1, f"med:{i}", 2, "x").random(10) for i in range(5)]
    late = derive_rng(1, "bs:0", 2, "x")
    assert np.array_equal(first.random(20), late.random(20))


def test_defaults_validate():
    assert validate_config(SimConfig()) == []


def test_default_values():
    cfg = SimConfig()
    assert (cfg.n_bs, cfg.total_meds, cfg.local_iters, cfg.rounds) == (3, 20, 5, 100)
    assert (cfg.snr_min_db, cfg.snr_max_db, cfg.power_w) == (0.1, 20.0, 0.1)


@pytest.mark.parametrize(
    "changes, violation",
    [
        (dict(snr_min_db=20.0, snr_max_db=0.1), "snr_min_db < snr_max_db"),
        (dict(cr_max=1.0), "cr_max < 1"),
        (dict(cr_min=0.9, cr_max=0.5), "cr_min <= cr_max"),
        (dict(power_w=0.0), "power_w > 0"),
        (dict(bandwidth_hz=-1.0), "bandwidth_hz > 0"),
        (dict(total_meds=2), "total_meds >= n_bs"),
        (dict(topology_kind="star"), "topology_kind in ('ring', 'path', 'complete')"),
    ],
)
def test_violations_are_named(changes, violation):
    assert violation in validate_config(SimConfig().replace(**changes))


def test_multiple_violations_all_listed():
    bad = SimConfig().replace(snr_min_db=30.0, cr_max=1.5, power_w=-1.0)
    problems = validate_config(bad)
    assert {"snr_min_db < snr_max_db", "cr_max < 1", "power_w > 0"} <= set(problems)


def test_config_round_trip_defaults():
    cfg = SimConfig()
    assert parse_config(dump_config(cfg)) == cfg


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    lr=st.floats(1e-6, 10, allow_nan=False),
    snr=st.floats(-5, 5, allow_nan=False),
    ef=st.booleans(),
    kind=st.sampled_from(["ring", "path", "complete"]),
)
def test_config_round_trip_property(seed, lr, snr, ef, kind):
    cfg = SimConfig(seed=seed, lr=lr, snr_min_db=snr, error_feedback=ef, topology_kind=kind)
    back = parse_config(dump_config(cfg))
    for f in dataclasses.fields(cfg):
        assert getattr(back, f.name) == getattr(cfg, f.name)


def test_parse_comments_and_blank_lines():
    cfg = parse_config("# header\n\nseed = 5  # trailing\nerror_feedback = false\ntopology_kind = path\n")
    assert cfg.seed == 5 and cfg.error_feedback is False and cfg.topology_kind == "path"


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("sead = 3\n")


def test_bad_value_is_an_error():
    with pytest.raises(ConfigError, match="rounds"):
        parse_config("rounds = many\n")


@pytest.mark.parametrize(
    "kind, n, edges",
    [
        ("complete", 3, {(0, 1), (0, 2), (1, 2)}),
        ("path", 3, {(0, 1), (1, 2)}),
        ("ring", 4, {(0, 1), (1, 2), (2, 3), (0, 3)}),
        ("ring", 2, {(0, 1)}),
    ],
)
def test_graph_edges(kind, n, edges):
    assert bs_graph_edges(n, kind) == edges


def test_self_loop_rejected():
    with pytest.raises(ValueError, match="self-loop"):
        Topology(2, frozenset({(1, 1)}), {0: 0})


@pytest.mark.parametrize("seed", range(10))
def test_default_assignment_respects_bounds(seed):
    cfg = SimConfig(seed=seed)
    topo = build_topology(cfg)
    sizes = sorted(len(topo.meds_of(b)) for b in range(cfg.n_bs))
    assert sizes == [6, 7, 7]
    assert sorted(topo.med_assignment) == list(range(cfg.total_meds))
    assert topo.is_connected()


def test_assignment_depends_on_seed():
    a = build_topology(SimConfig(seed=0)).med_assignment
    b = build_topology(SimConfig(seed=1)).med_assignment
    assert a != b
