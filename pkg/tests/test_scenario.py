"""Configuration container, unit conversions, node placement."""

import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crisac.scenario import (
    ScenarioConfig,
    config_hash,
    dbm_to_watt,
    default_scenario,
    load_scenario,
    make_scenario,
    place_nodes,
    serialize_scenario,
    watt_to_dbm,
)

from conftest import desk_config


def test_default_dimensions_consistent():
    cfg = default_scenario()
    assert cfg.n_b == 16 and cfg.n_r == 32 and cfg.n_m == 6
    assert cfg.m_ms == 2 and cfg.k_su == 2 and cfg.l_pu == 2
    assert len(cfg.lambda_m) == cfg.m_ms
    assert len(cfg.r_k) == cfg.k_su
    assert len(cfg.gamma_l0) == cfg.l_pu
    assert math.isclose(cfg.prob_h0 + cfg.prob_h1, 1.0)
    assert 0.0 < cfg.p_d0 < 1.0 and 0.0 < cfg.p_f0 < 1.0


def test_dbm_conversion_exact():
    # -60 dBm is exactly a nanowatt; 30 dBm exactly a watt
    assert dbm_to_watt(-60.0) == 1e-9
    assert dbm_to_watt(30.0) == 1.0
    assert watt_to_dbm(1.0) == 30.0
    for x in (-10.0, 0.0, 17.0, 35.0):
        assert math.isclose(watt_to_dbm(dbm_to_watt(x)), x, rel_tol=0, abs_tol=1e-12)


def test_default_powers_are_35_dbm():
    cfg = default_scenario()
    assert math.isclose(cfg.p_sbs, dbm_to_watt(35.0))
    assert math.isclose(cfg.p_pbs, dbm_to_watt(35.0))
    assert cfg.sigma2_ms == cfg.sigma2_su == cfg.sigma2_sbs == 1e-9


def test_make_scenario_resizes_per_entity_tuples():
    cfg = make_scenario(m_ms=3, k_su=1, l_pu=4)
    assert len(cfg.lambda_m) == 3
    assert len(cfg.r_k) == 1
    assert len(cfg.gamma_l0) == 4


def test_make_scenario_rejects_unknown_field():
    with pytest.raises(TypeError):
        make_scenario(not_a_field=1.0)


def test_serialize_round_trip_identity():
    for cfg in (default_scenario(), desk_config(), make_scenario(n_b=5, rician_k=3.0)):
        assert load_scenario(serialize_scenario(cfg)) == cfg


def test_serialize_uses_dbm_for_powers():
    doc = json.loads(serialize_scenario(default_scenario()))
    assert math.isclose(doc["p_sbs"], 35.0)
    assert math.isclose(doc["sigma2_ms"], -60.0)


def test_load_scenario_accepts_dict():
    cfg = default_scenario()
    doc = json.loads(serialize_scenario(cfg))
    assert load_scenario(doc) == cfg


def test_config_hash_sensitivity():
    base = default_scenario()
    same = default_scenario()
    assert config_hash(base) == config_hash(same)
    seen = {config_hash(base)}
    for variant in (make_scenario(n_b=17),
                    make_scenario(p_sbs=dbm_to_watt(34.0)),
                    make_scenario(r_k=(2.0, 2.5)),
                    make_scenario(pos_ris=(41.0, 40.0))):
        h = config_hash(variant)
        assert h not in seen
        seen.add(h)


def test_place_nodes_deterministic_and_clustered():
    cfg = desk_config()
    a = place_nodes(cfg, 7)
    b = place_nodes(cfg, 7)
    for key in ("ms", "su", "pu"):
        np.testing.assert_array_equal(a[key], b[key])
    c = place_nodes(cfg, 8)
    assert not np.array_equal(a["ms"], c["ms"])
    centers = {"ms": cfg.cluster_ms, "su": cfg.cluster_su, "pu": cfg.cluster_pu}
    counts = {"ms": cfg.m_ms, "su": cfg.k_su, "pu": cfg.l_pu}
    for key, center in centers.items():
        pts = np.asarray(a[key])
        assert pts.shape == (counts[key], 2)
        dist = np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1])
        assert np.all(dist <= cfg.cluster_radius + 1e-9)


@given(st.floats(min_value=-80.0, max_value=60.0))
@settings(max_examples=60, deadline=None)
def test_dbm_round_trip_property(x):
    assert math.isclose(watt_to_dbm(dbm_to_watt(x)), x, rel_tol=0, abs_tol=1e-9)


def test_config_is_frozen():
    cfg = default_scenario()
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.n_b = 3
