"""Channel model: steering, path gains, realization shapes, RIS composition."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crisac.channels import (
    RisPhase,
    bearing,
    channels_to_document,
    distance,
    effective_channels,
    generate_channels,
    geometric_ms_link,
    load_channels,
    path_gain,
    place_nodes,
    steering_derivative,
    steering_vector,
    zero_ris_links,
)
from crisac.scenario import make_scenario

from conftest import desk_config, instance, random_phase


# ------------------------------------------------------------------
# array responses
# ------------------------------------------------------------------


def test_steering_vector_basics():
    a = steering_vector(0.37, 9)
    assert a.shape == (9,)
    assert np.allclose(np.abs(a), 1.0)
    assert a[0] == 1.0 + 0.0j
    # broadside: all elements in phase
    assert np.allclose(steering_vector(0.0, 6), np.ones(6))


def test_steering_vector_explicit_entry():
    theta, n = 0.61, 5
    i = 3
    expected = np.exp(-1j * np.pi * i * np.sin(theta))
    assert steering_vector(theta, n)[i] == pytest.approx(expected)


@pytest.mark.parametrize("theta", [-1.1, -0.3, 0.0, 0.42, 1.3])
def test_steering_derivative_matches_finite_difference(theta):
    n, h = 7, 1e-6
    fd = (steering_vector(theta + h, n) - steering_vector(theta - h, n)) / (2 * h)
    an = steering_derivative(theta, n)
    assert np.max(np.abs(an - fd)) < 1e-5


# ------------------------------------------------------------------
# geometry helpers
# ------------------------------------------------------------------


def test_distance_and_bearing_basics():
    assert distance((0.0, 0.0), (3.0, 4.0)) == pytest.approx(5.0)
    assert bearing((0.0, 0.0), (1.0, 1.0)) == pytest.approx(math.pi / 4)
    # bearing uses absolute offsets, so it is end-symmetric
    p, q = (2.0, -1.0), (-3.0, 4.0)
    assert bearing(p, q) == pytest.approx(bearing(q, p))
    with pytest.raises(ValueError):
        distance((1.0, 2.0), (1.0, 2.0))
    with pytest.raises(ValueError):
        bearing((0.0, 0.0), (0.0, 5.0))


def test_path_gain_reference_values():
    assert path_gain(1.0, 4.0, 1e-3) == pytest.approx(1e-3)
    assert path_gain(100.0, 4.0, 1e-3) == pytest.approx(1e-11)
    assert path_gain(10.0, 2.0, 1e-3) == pytest.approx(1e-5)


@given(
    d=st.floats(min_value=1.0, max_value=1e4),
    alpha=st.floats(min_value=1.5, max_value=6.0),
)
@settings(max_examples=50, deadline=None)
def test_path_gain_monotone_in_distance(d, alpha):
    g0 = 1e-3
    assert path_gain(d, alpha, g0) >= path_gain(d * 1.5, alpha, g0)


# ------------------------------------------------------------------
# RIS phase container
# ------------------------------------------------------------------


def test_ris_phase_validation_and_constructors():
    with pytest.raises(ValueError):
        RisPhase(np.array([1.0 + 0j, 0.5 + 0j]))
    ones = RisPhase.ones(4)
    assert np.allclose(ones.phi, 1.0)
    ang = np.array([0.1, 2.0, -1.0])
    rp = RisPhase.from_angles(ang)
    assert np.allclose(np.angle(rp.phi), ang)
    assert rp.n == 3
    assert np.allclose(rp.diag(), np.diag(rp.phi))
    aug = rp.augmented()
    assert aug[-1] == 1.0 + 0.0j
    assert np.allclose(rp.lifted(), np.outer(aug, aug.conj()))


def test_ris_phase_random_deterministic_unit_modulus():
    a = RisPhase.random(16, [7, 0xC1])
    b = RisPhase.random(16, [7, 0xC1])
    c = RisPhase.random(16, [8, 0xC1])
    assert np.array_equal(a.phi, b.phi)
    assert not np.array_equal(a.phi, c.phi)
    assert np.max(np.abs(np.abs(a.phi) - 1.0)) < 1e-12


# ------------------------------------------------------------------
# statistical realizations
# ------------------------------------------------------------------

ASYM = dict(n_b=5, n_r=7, n_m=3, m_ms=2, k_su=2, l_pu=1)


def test_generate_channels_shapes_asymmetric_dims():
    cfg = make_scenario(**ASYM)
    ch = instance(cfg, 3)[1]
    assert ch.h_p2s.shape == (5,)
    assert ch.h_s2su.shape == (2, 5)
    assert ch.h_s2pu.shape == (1, 5)
    assert ch.h_s2r.shape == (5, 7)
    assert ch.h_s2ms.shape == (2, 5, 3)
    assert ch.h_p2r.shape == (7,)
    assert ch.h_p2ms.shape == (2, 3)
    assert ch.h_p2su.shape == (2,)
    assert ch.h_r2ms.shape == (2, 7, 3)
    assert ch.h_r2su.shape == (2, 7)
    assert ch.h_r2pu.shape == (1, 7)


def test_generate_channels_deterministic_in_seed():
    cfg = desk_config()
    a = instance(cfg, 11)[1]
    b = instance(cfg, 11)[1]
    c = instance(cfg, 12)[1]
    assert np.array_equal(a.h_s2su, b.h_s2su)
    assert np.array_equal(a.h_r2ms, b.h_r2ms)
    assert not np.array_equal(a.h_s2su, c.h_s2su)


def test_place_nodes_required_for_channels():
    cfg = make_scenario(**ASYM)
    pos = place_nodes(cfg, 5)
    ch = generate_channels(cfg, pos, 5)
    assert ch.n_b == 5 and ch.n_r == 7 and ch.n_m == 3
    assert ch.m_ms == 2 and ch.k_su == 2 and ch.l_pu == 1


# ------------------------------------------------------------------
# RIS composition
# ------------------------------------------------------------------


def test_effective_channels_match_direct_cascade():
    cfg = make_scenario(**ASYM)
    ch = instance(cfg, 3)[1]
    ris = random_phase(cfg, 3)
    eff = effective_channels(ch, ris)
    phi = ris.phi
    for k in range(cfg.k_su):
        direct = np.conj(ch.h_s2su[k] + ch.h_s2r @ (phi * ch.h_r2su[k]))
        assert np.max(np.abs(eff.g_su[k] - direct)) < 1e-12
    for l in range(cfg.l_pu):
        direct = np.conj(ch.h_s2pu[l] + ch.h_s2r @ (phi * ch.h_r2pu[l]))
        assert np.max(np.abs(eff.g_pu[l] - direct)) < 1e-12
    refl_t = phi[:, None] * ch.h_s2r.T
    for m in range(cfg.m_ms):
        direct = ch.h_r2ms[m].T @ refl_t + ch.h_s2ms[m].T
        assert np.max(np.abs(eff.g_ms[m] - direct)) < 1e-12


def test_effective_channels_rejects_wrong_ris_size():
    cfg = make_scenario(**ASYM)
    ch = instance(cfg, 3)[1]
    with pytest.raises(ValueError):
        effective_channels(ch, RisPhase.ones(cfg.n_r + 1))


def test_zero_ris_links_blocks_reflection():
    cfg = make_scenario(**ASYM)
    ch = instance(cfg, 3)[1]
    dead = zero_ris_links(ch)
    assert not np.any(dead.h_s2r)
    assert not np.any(dead.h_r2su)
    assert not np.any(dead.h_r2ms)
    assert not np.any(dead.h_r2pu)
    assert not np.any(dead.h_p2r)
    assert np.array_equal(dead.h_s2su, ch.h_s2su)
    assert np.array_equal(dead.h_p2s, ch.h_p2s)
    # with no reflected path the composition no longer depends on the phases
    e1 = effective_channels(dead, random_phase(cfg, 1))
    e2 = effective_channels(dead, random_phase(cfg, 2))
    assert np.array_equal(e1.g_su, e2.g_su)
    assert np.array_equal(e1.g_ms, e2.g_ms)
    assert np.max(np.abs(e1.g_su - np.conj(ch.h_s2su))) < 1e-15


# ------------------------------------------------------------------
# geometric two-path link
# ------------------------------------------------------------------


def test_geometric_ms_link_bearings_and_gains():
    cfg = make_scenario(**ASYM)
    pos = place_nodes(cfg, 3)
    link = geometric_ms_link(cfg, 1, 3, positions=pos)
    ms = np.asarray(pos["ms"][1])
    assert np.allclose(link.ms_pos, ms)
    sbs, ris = cfg.pos_sbs, cfg.pos_ris

    def ang(p, q):
        return math.atan(abs(q[1] - p[1]) / abs(q[0] - p[0]))

    assert link.theta_d == pytest.approx(ang(sbs, ms))
    assert link.theta_d_dep == pytest.approx(link.theta_d)
    assert link.theta_r == pytest.approx(ang(ris, ms))
    assert link.theta_r_dep == pytest.approx(ang(sbs, ris))

    d_sm = math.hypot(ms[0] - sbs[0], ms[1] - sbs[1])
    d_sr = math.hypot(ris[0] - sbs[0], ris[1] - sbs[1])
    d_rm = math.hypot(ms[0] - ris[0], ms[1] - ris[1])
    g_d = cfg.g0_ref * d_sm ** -cfg.alpha_direct
    g_r = (cfg.g0_ref * d_sr ** -cfg.alpha_ris) * (cfg.g0_ref * d_rm ** -cfg.alpha_ris)
    assert abs(link.h_d) == pytest.approx(math.sqrt(g_d))
    assert abs(link.h_r) == pytest.approx(math.sqrt(g_r))


def test_geometric_ms_link_deterministic_and_bounds():
    cfg = make_scenario(**ASYM)
    a = geometric_ms_link(cfg, 0, 9)
    b = geometric_ms_link(cfg, 0, 9)
    assert a.h_d == b.h_d and a.h_r == b.h_r and a.ms_pos == b.ms_pos
    assert geometric_ms_link(cfg, 1, 9).h_d != a.h_d
    with pytest.raises(ValueError):
        geometric_ms_link(cfg, cfg.m_ms, 9)


# ------------------------------------------------------------------
# serialization
# ------------------------------------------------------------------


def test_channels_document_round_trip():
    cfg = make_scenario(**ASYM)
    ch = instance(cfg, 3)[1]
    doc = channels_to_document(ch)
    back = load_channels(doc)
    assert np.array_equal(back.h_s2r, ch.h_s2r)
    assert np.array_equal(back.h_r2ms, ch.h_r2ms)
    assert np.array_equal(back.h_p2s, ch.h_p2s)
    parsed = json.loads(doc)
    assert set(parsed) >= {"h_s2r", "h_r2ms", "h_p2s"}
