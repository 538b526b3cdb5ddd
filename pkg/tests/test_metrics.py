"""SINR/rate/interference metrics and the localization error chain."""

import dataclasses
import math

import numpy as np
import pytest

from crisac.channels import RisPhase, bearing, effective_channels, geometric_ms_link
from crisac.metrics import (
    FeasibilityReport,
    MsSinr,
    SingularFimError,
    fim_channel,
    fim_position,
    jacobian,
    ms_objectives,
    ms_sinr,
    noiseless_rx,
    p1_feasibility,
    partials_channel,
    peb,
    peb_with_condition,
    pue_interference,
    su_rate,
    weighted_peb,
)
from crisac.sensing import calibrate_threshold, duty_weights, effective_epsilon
from crisac.channels import steering_vector

from conftest import desk_config, instance, random_phase


def random_beams(cfg, seed, scale=None):
    rng = np.random.default_rng([seed, 0xBEA])
    shape = (cfg.n_b, cfg.m_ms + cfg.k_su)
    w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if scale is None:
        scale = math.sqrt(cfg.p_sbs / (2.0 * w.shape[1]))
    return w * scale / math.sqrt(cfg.n_b)


# ------------------------------------------------------------------
# observation model derivatives
# ------------------------------------------------------------------


def fd_partials(link, w_m, ris, cfg):
    """Central finite differences of the noiseless observation."""
    cols = []
    h_ang, h_re = 1e-6, 1e-9

    def rx(lnk):
        return noiseless_rx(lnk, w_m, ris, cfg)

    for field, step in (("theta_d", h_ang), ("theta_r", h_ang)):
        up = dataclasses.replace(link, **{field: getattr(link, field) + step})
        dn = dataclasses.replace(link, **{field: getattr(link, field) - step})
        cols.append((rx(up) - rx(dn)) / (2 * step))
    for field in ("h_d", "h_r"):
        base = getattr(link, field)
        up_i = dataclasses.replace(link, **{field: base + 1j * h_re})
        dn_i = dataclasses.replace(link, **{field: base - 1j * h_re})
        cols.append((rx(up_i) - rx(dn_i)) / (2 * h_re))
        up_r = dataclasses.replace(link, **{field: base + h_re})
        dn_r = dataclasses.replace(link, **{field: base - h_re})
        cols.append((rx(up_r) - rx(dn_r)) / (2 * h_re))
    # reorder (th_d, th_r, hd_im, hd_re, hr_im, hr_re)
    return np.stack([cols[0], cols[1], cols[2], cols[3], cols[4], cols[5]], axis=1)


@pytest.mark.parametrize("seed", [0, 1, 2, 5])
def test_partials_match_finite_differences(desk_cfg, seed):
    link = geometric_ms_link(desk_cfg, seed % desk_cfg.m_ms, seed)
    ris = random_phase(desk_cfg, seed)
    w_m = random_beams(desk_cfg, seed)[:, 0]
    an = partials_channel(link, w_m, ris, desk_cfg)
    fd = fd_partials(link, w_m, ris, desk_cfg)
    scale = np.max(np.abs(an), axis=0)
    assert np.all(scale > 0)
    rel = np.max(np.abs(an - fd), axis=0) / scale
    assert np.max(rel) < 1e-5


def test_noiseless_rx_closed_form(desk_cfg):
    link = geometric_ms_link(desk_cfg, 0, 7)
    ris = random_phase(desk_cfg, 7)
    w_m = random_beams(desk_cfg, 7)[:, 0]
    rx = noiseless_rx(link, w_m, ris, desk_cfg)
    a_dep_d = steering_vector(link.theta_d_dep, desk_cfg.n_b)
    a_dep_r = steering_vector(link.theta_r_dep, desk_cfg.n_b)
    kappa = steering_vector(link.theta_r, desk_cfg.n_r) \
        @ (ris.phi * steering_vector(link.theta_r_dep, desk_cfg.n_r))
    expected = link.h_d * (a_dep_d @ w_m) * steering_vector(link.theta_d, desk_cfg.n_m) \
        + link.h_r * kappa * (a_dep_r @ w_m) * steering_vector(link.theta_r, desk_cfg.n_m)
    assert np.max(np.abs(rx - expected)) < 1e-18


# ------------------------------------------------------------------
# Fisher information chain
# ------------------------------------------------------------------


def test_fim_channel_formula_and_validation(desk_cfg):
    link = geometric_ms_link(desk_cfg, 0, 3)
    ris = random_phase(desk_cfg, 3)
    w_m = random_beams(desk_cfg, 3)[:, 0]
    tau = 0.3 * desk_cfg.t_total
    f = fim_channel(link, w_m, ris, tau, desk_cfg)
    d = partials_channel(link, w_m, ris, desk_cfg)
    pref = 2.0 * (desk_cfg.t_total - tau) / desk_cfg.sigma2_ms
    assert np.allclose(f, pref * (d.conj().T @ d).real, rtol=1e-14)
    assert np.allclose(f, f.T)
    assert np.min(np.linalg.eigvalsh(f)) > -1e-6 * np.max(np.abs(f))
    for bad in (-0.1, desk_cfg.t_total * 1.01):
        with pytest.raises(ValueError):
            fim_channel(link, w_m, ris, bad, desk_cfg)


def test_jacobian_matches_bearing_gradient(desk_cfg):
    link = geometric_ms_link(desk_cfg, 1, 5)
    x, y = link.ms_pos
    gam = jacobian(link.ms_pos, desk_cfg)
    h = 1e-6
    for row, anchor in ((0, desk_cfg.pos_sbs), (1, desk_cfg.pos_ris)):
        fd_x = (bearing(anchor, (x + h, y)) - bearing(anchor, (x - h, y))) / (2 * h)
        fd_y = (bearing(anchor, (x, y + h)) - bearing(anchor, (x, y - h))) / (2 * h)
        assert gam[row, 0] == pytest.approx(fd_x, rel=1e-6, abs=1e-9)
        assert gam[row, 1] == pytest.approx(fd_y, rel=1e-6, abs=1e-9)
        assert np.all(gam[row, 2:] == 0.0)
    assert np.array_equal(gam[2:, 2:], np.eye(4))
    with pytest.raises(ValueError):
        jacobian(desk_cfg.pos_ris, desk_cfg)


def test_fim_position_is_congruence(desk_cfg):
    link = geometric_ms_link(desk_cfg, 0, 3)
    ris = random_phase(desk_cfg, 3)
    w_m = random_beams(desk_cfg, 3)[:, 0]
    tau = 0.5 * desk_cfg.t_total
    gam = jacobian(link.ms_pos, desk_cfg)
    f_c = fim_channel(link, w_m, ris, tau, desk_cfg)
    assert np.allclose(fim_position(link, w_m, ris, tau, desk_cfg),
                       gam.T @ f_c @ gam, rtol=1e-14)


def test_peb_scaling_laws(desk_cfg):
    link = geometric_ms_link(desk_cfg, 0, 3)
    ris = random_phase(desk_cfg, 3)
    w_m = random_beams(desk_cfg, 3)[:, 0]
    t = desk_cfg.t_total
    base = peb(fim_position(link, w_m, ris, 0.5 * t, desk_cfg))
    # noise scaling: c times the noise floor means sqrt(c) times the bound
    c = 4.0
    noisy = desk_config(sigma2_ms=desk_cfg.sigma2_ms * c)
    link_n = dataclasses.replace(link)
    scaled = peb(fim_position(link_n, w_m, ris, 0.5 * t, noisy))
    assert scaled == pytest.approx(math.sqrt(c) * base, rel=1e-10)
    # observation-time scaling: T - tau4 = (T - tau1)/4 doubles the bound
    tau1, tau4 = 0.5 * t, t - 0.125 * t
    quarter = peb(fim_position(link, w_m, ris, tau4, desk_cfg))
    assert quarter == pytest.approx(2.0 * base, rel=1e-10)


def test_peb_diagonal_pin():
    f = np.diag([4.0, 8.0, 3.0, 5.0, 7.0, 9.0])
    val, cond = peb_with_condition(f)
    assert val == pytest.approx(math.sqrt(0.25 + 0.125), rel=1e-12)
    # condition is measured after diagonal rescaling: diagonal input -> identity
    assert cond == pytest.approx(1.0, rel=1e-12)


def test_peb_survives_wild_diagonal_scaling():
    # nuisance parameters a million times weaker than position entries:
    # rescaling-based inversion must still match the analytic block inverse
    rng = np.random.default_rng(99)
    a = rng.standard_normal((6, 6))
    m = a @ a.T + 6 * np.eye(6)
    d = np.diag([1.0, 1.0, 1e-6, 1e-6, 1e-6, 1e-6])
    f = d @ m @ d
    inv_block = np.linalg.inv(m)[:2, :2]
    expected = math.sqrt(inv_block[0, 0] + inv_block[1, 1])
    assert peb(f) == pytest.approx(expected, rel=1e-9)


def test_peb_singularity_detection(desk_cfg):
    with pytest.raises(SingularFimError) as info:
        peb(np.diag([1.0, 1.0, 0.0, 1.0, 1.0, 1.0]))
    assert info.value.null_direction is not None
    # rank-deficient but positive diagonal
    v = np.ones(6)
    with pytest.raises(SingularFimError):
        peb(np.outer(v, v) + 1e-20 * np.eye(6))
    # no reflected path: its parameters are unobservable
    link = geometric_ms_link(desk_cfg, 0, 3)
    dead = dataclasses.replace(link, h_r=0.0 + 0.0j)
    ris = random_phase(desk_cfg, 3)
    w_m = random_beams(desk_cfg, 3)[:, 0]
    with pytest.raises(SingularFimError):
        peb(fim_position(dead, w_m, ris, 0.5 * desk_cfg.t_total, desk_cfg))


def test_weighted_peb_is_dot_product(desk_cfg):
    vals = [0.3, 0.7, 1.1, 0.2][: desk_cfg.m_ms]
    expected = sum(l * v for l, v in zip(desk_cfg.lambda_m, vals))
    assert weighted_peb(vals, desk_cfg) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        weighted_peb(vals + [1.0], desk_cfg)


# ------------------------------------------------------------------
# average SINR / rate / interference
# ------------------------------------------------------------------


def test_ms_sinr_closed_form(desk_cfg):
    ch = instance(desk_cfg, 6)[1]
    ris = random_phase(desk_cfg, 6)
    w = random_beams(desk_cfg, 6)
    tau, pd, pf = 0.4 * desk_cfg.t_total, 0.92, 0.08
    m = 1
    out = ms_sinr(ch, w, ris, tau, pd, pf, desk_cfg, m)
    eff = effective_channels(ch, ris)
    rx = eff.g_ms[m] @ w
    sig = float(np.linalg.norm(rx[:, m]) ** 2)
    zeta = float(np.linalg.norm(rx[:, desk_cfg.m_ms:]) ** 2)
    pbs = ch.h_p2ms[m] + ch.h_r2ms[m].T @ (ris.phi * ch.h_p2r)
    d_m = desk_cfg.p_pbs * float(np.linalg.norm(pbs) ** 2)
    assert out.case1 == pytest.approx(sig / (zeta + desk_cfg.sigma2_ms), rel=1e-12)
    assert out.case2 == pytest.approx(sig / (zeta + d_m + desk_cfg.sigma2_ms), rel=1e-12)
    b, bt = duty_weights(tau, pd, pf, desk_cfg)
    assert out.avg == pytest.approx(b * out.case1 + bt * out.case2, rel=1e-12)
    assert out.case2 < out.case1  # primary interference can only hurt
    with pytest.raises(ValueError):
        ms_sinr(ch, w[:, :-1], ris, tau, pd, pf, desk_cfg, m)


def test_ms_objectives_aggregation(desk_cfg):
    ch = instance(desk_cfg, 6)[1]
    ris = random_phase(desk_cfg, 6)
    w = random_beams(desk_cfg, 6)
    tau, pd, pf = 0.4 * desk_cfg.t_total, 0.92, 0.08
    mn, sm, vals = ms_objectives(ch, w, ris, tau, pd, pf, desk_cfg)
    per_m = [ms_sinr(ch, w, ris, tau, pd, pf, desk_cfg, m).avg
             for m in range(desk_cfg.m_ms)]
    assert vals == pytest.approx(per_m, rel=1e-12)
    weighted = [desk_cfg.lambda_m[m] * per_m[m] for m in range(desk_cfg.m_ms)]
    assert mn == pytest.approx(min(weighted), rel=1e-12)
    assert sm == pytest.approx(sum(weighted), rel=1e-12)


def test_su_rate_closed_form(desk_cfg):
    ch = instance(desk_cfg, 6)[1]
    ris = random_phase(desk_cfg, 6)
    w = random_beams(desk_cfg, 6)
    tau, pd, pf = 0.4 * desk_cfg.t_total, 0.92, 0.08
    k = 0
    r = su_rate(ch, w, ris, tau, pd, pf, desk_cfg, k)
    eff = effective_channels(ch, ris)
    rx = np.abs(eff.g_su[k].conj() @ w) ** 2
    sig = rx[desk_cfg.m_ms + k]
    zeta = float(np.sum(rx[desk_cfg.m_ms:])) - sig
    p_link = ch.h_p2su[k] + ch.h_r2su[k] @ (ris.phi * ch.h_p2r)
    d_k = desk_cfg.p_pbs * abs(p_link) ** 2
    b, bt = duty_weights(tau, pd, pf, desk_cfg)
    expected = b * math.log2(1 + sig / (zeta + desk_cfg.sigma2_su)) \
        + bt * math.log2(1 + sig / (zeta + d_k + desk_cfg.sigma2_su))
    assert r == pytest.approx(expected, rel=1e-12)
    # localization beams carry known waveforms: they do not interfere
    w_boost = w.copy()
    w_boost[:, : desk_cfg.m_ms] *= 100.0
    assert su_rate(ch, w_boost, ris, tau, pd, pf, desk_cfg, k) == pytest.approx(
        r, rel=1e-12)


def test_pue_interference_closed_form(desk_cfg):
    ch = instance(desk_cfg, 6)[1]
    ris = random_phase(desk_cfg, 6)
    w = random_beams(desk_cfg, 6)
    for l in range(desk_cfg.l_pu):
        got = pue_interference(ch, w, ris, desk_cfg, l)
        eff = effective_channels(ch, ris)
        expected = float(np.sum(np.abs(eff.g_pu[l].conj() @ w) ** 2))
        assert got == pytest.approx(expected, rel=1e-12)
        assert got > 0


# ------------------------------------------------------------------
# original-constraint audit
# ------------------------------------------------------------------


def test_p1_feasibility_slack_arithmetic(desk_cfg):
    ch = instance(desk_cfg, 6)[1]
    ris = random_phase(desk_cfg, 6)
    w = random_beams(desk_cfg, 6)
    tau = 0.5 * desk_cfg.t_total
    eps = effective_epsilon(desk_cfg)
    rep = p1_feasibility(ch, w, ris, tau, desk_cfg, eps)
    assert rep.tau == tau
    for k in range(desk_cfg.k_su):
        assert rep.rate_slack[k] == pytest.approx(
            rep.rates[k] - desk_cfg.r_k[k], rel=1e-12)
    assert rep.pd_slack == pytest.approx(rep.p_d - desk_cfg.p_d0)
    assert rep.pf_slack == pytest.approx(desk_cfg.p_f0 - rep.p_f)
    b, bt = duty_weights(tau, rep.p_d, rep.p_f, desk_cfg)
    assert rep.avg_power == pytest.approx(
        (b + bt) * float(np.sum(np.abs(w) ** 2)), rel=1e-12)
    assert rep.power_slack == pytest.approx(desk_cfg.p_sbs - rep.avg_power)
    for l in range(desk_cfg.l_pu):
        assert rep.interference[l] == pytest.approx(
            bt * pue_interference(ch, w, ris, desk_cfg, l), rel=1e-12)
        assert rep.interference_slack[l] == pytest.approx(
            desk_cfg.gamma_l0[l] - rep.interference[l])
    assert rep.unit_mod_err < 1e-12
    # threshold recalibrated at this tau keeps the false alarm on target
    eps_tau = calibrate_threshold(tau, desk_cfg.p_f0, desk_cfg)
    rep2 = p1_feasibility(ch, w, ris, tau, desk_cfg, eps_tau)
    assert abs(rep2.pf_slack) < 1e-9


def test_feasibility_report_verdict():
    rep = FeasibilityReport(
        tau=0.005, p_d=0.95, p_f=0.05,
        rates=(1.2,), rate_slack=(0.2,), pd_slack=0.05, pf_slack=0.05,
        avg_power=1.0, power_slack=0.1,
        interference=(1e-9,), interference_slack=(1e-10,), unit_mod_err=1e-12)
    assert rep.feasible()
    bad = dataclasses.replace(rep, rate_slack=(-0.1,))
    assert not bad.feasible()
    # reference scales widen the relative tolerance, not the sign rule
    tight = dataclasses.replace(rep, interference_slack=(-1e-12,))
    assert not tight.feasible()
    assert tight.feasible(gamma_ref=(1e-5,), interf_rel=1e-6)
