"""Performance metrics: average SINRs and rates, primary-user interference,
true-constraint audits, and the localization error chain.

Beams live in a single matrix w_mat of shape (N_B, M+K): columns 0..M-1 are
the sensing/localization beams (one per MS), columns M..M+K-1 serve the
secondary users.  Localization beams use known waveforms, so only the SU
beams interfere at the receivers; an SU sees every SU beam but its own.

The localization chain works on the geometric two-path model: partial
derivatives of the noiseless MS observation with respect to the channel
parameters (theta_d, theta_r, Im/Re h_d, Im/Re h_r), the resulting Fisher
information, a Jacobian to position parameters, and finally the position
error bound (PEB).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channels import (ChannelSet, EffectiveChannels, GeometricLink, RisPhase,
                       effective_channels, steering_derivative, steering_vector)
from .scenario import ScenarioConfig
from .sensing import duty_weights


class SingularFimError(ValueError):
    """Fisher information not invertible; carries the near-null direction."""

    def __init__(self, msg: str, null_direction=None):
        super().__init__(msg)
        self.null_direction = null_direction


# =====================================================================
# Geometric observation model and its derivatives
# =====================================================================


def _path_scalars(link: GeometricLink, w_m: np.ndarray, ris: RisPhase, cfg: ScenarioConfig):
    """Shared factors of the two-path observation."""
    a_dep_d = steering_vector(link.theta_d_dep, cfg.n_b)
    a_dep_r = steering_vector(link.theta_r_dep, cfg.n_b)
    alpha_d = a_dep_d @ w_m                      # direct-path transmit factor
    alpha_r = a_dep_r @ w_m                      # reflected-path transmit factor
    c_ms = steering_vector(link.theta_r, cfg.n_r)
    c_sbs = steering_vector(link.theta_r_dep, cfg.n_r)
    kappa = c_ms @ (ris.phi * c_sbs)             # RIS inner product
    return alpha_d, alpha_r, c_sbs, kappa


def noiseless_rx(link: GeometricLink, w_m: np.ndarray, ris: RisPhase,
                 cfg: ScenarioConfig) -> np.ndarray:
    """Noiseless MS observation of its own beam through both paths."""
    alpha_d, alpha_r, _, kappa = _path_scalars(link, w_m, ris, cfg)
    b_d = steering_vector(link.theta_d, cfg.n_m)
    b_r = steering_vector(link.theta_r, cfg.n_m)
    return link.h_d * alpha_d * b_d + link.h_r * kappa * alpha_r * b_r


def partials_channel(link: GeometricLink, w_m: np.ndarray, ris: RisPhase,
                     cfg: ScenarioConfig) -> np.ndarray:
    """(N_M, 6) partials of the noiseless observation.

    Column order: theta_d, theta_r, Im h_d, Re h_d, Im h_r, Re h_r.  The
    theta_r column carries both the MS-side steering change and the RIS
    inner-product change of the reflected path.
    """
    alpha_d, alpha_r, c_sbs, kappa = _path_scalars(link, w_m, ris, cfg)
    b_d = steering_vector(link.theta_d, cfg.n_m)
    b_r = steering_vector(link.theta_r, cfg.n_m)
    db_d = steering_derivative(link.theta_d, cfg.n_m)
    db_r = steering_derivative(link.theta_r, cfg.n_m)
    dc_ms = steering_derivative(link.theta_r, cfg.n_r)
    dkappa = dc_ms @ (ris.phi * c_sbs)

    cols = np.empty((cfg.n_m, 6), dtype=complex)
    cols[:, 0] = link.h_d * alpha_d * db_d
    cols[:, 1] = link.h_r * alpha_r * (kappa * db_r + dkappa * b_r)
    cols[:, 2] = 1j * alpha_d * b_d
    cols[:, 3] = alpha_d * b_d
    cols[:, 4] = 1j * kappa * alpha_r * b_r
    cols[:, 5] = kappa * alpha_r * b_r
    return cols


def fim_channel(link: GeometricLink, w_m: np.ndarray, ris: RisPhase,
                tau: float, cfg: ScenarioConfig) -> np.ndarray:
    """6x6 Fisher information of the channel parameters after T - tau of
    transmission."""
    if tau < 0.0 or tau > cfg.t_total:
        raise ValueError(f"tau must lie in [0, T], got {tau}")
    d = partials_channel(link, w_m, ris, cfg)
    pref = 2.0 * (cfg.t_total - tau) / cfg.sigma2_ms
    return pref * (d.conj().T @ d).real


def jacobian(ms_pos, cfg: ScenarioConfig) -> np.ndarray:
    """Map channel-parameter information to position parameters.

    Top-left 2x2 block: exact gradients of the two absolute bearings
    arctan(|dy|/|dx|) with respect to the MS coordinates, one row per
    anchor (SBS then RIS); gain parameters map onto themselves.  On the
    axis-aligned kinks of |dy| the one-sided derivative is used.
    """
    x, y = float(ms_pos[0]), float(ms_pos[1])
    gam = np.zeros((6, 6))
    for row, anchor in ((0, cfg.pos_sbs), (1, cfg.pos_ris)):
        dx = abs(x - anchor[0])
        dy = abs(anchor[1] - y)
        d2 = dx * dx + dy * dy
        if d2 == 0.0:
            raise ValueError(f"MS coincides with anchor at {tuple(anchor)}")
        sx = math.copysign(1.0, x - anchor[0])
        sy = math.copysign(1.0, y - anchor[1])
        gam[row, 0] = -sx * dy / d2
        gam[row, 1] = sy * dx / d2
    gam[2:, 2:] = np.eye(4)
    return gam


def fim_position(link: GeometricLink, w_m: np.ndarray, ris: RisPhase,
                 tau: float, cfg: ScenarioConfig) -> np.ndarray:
    """Position-parameter Fisher information for one MS."""
    gam = jacobian(link.ms_pos, cfg)
    f_c = fim_channel(link, w_m, ris, tau, cfg)
    return gam.T @ f_c @ gam


def peb_with_condition(f_p: np.ndarray) -> tuple:
    """(PEB, condition number) from a position-parameter FIM.

    The gain parameters sit ~1e6x below O(1) position sensitivities, so the
    raw FIM is float-singular even for healthy geometry.  Rescaling nuisance
    parameters leaves the position block of the inverse unchanged; the
    inversion and the singularity test run on the unit-diagonal matrix.
    """
    f_p = np.asarray(f_p, dtype=float)
    f_p = 0.5 * (f_p + f_p.T)
    diag = np.diag(f_p)
    if not np.all(np.isfinite(diag)) or np.any(diag <= 0.0):
        null = np.zeros(f_p.shape[0])
        null[int(np.argmin(diag))] = 1.0
        raise SingularFimError(
            "position FIM is singular; some parameter combination is "
            "unobservable", null_direction=null)
    s = np.sqrt(diag)
    fn = f_p / np.outer(s, s)
    w, v = np.linalg.eigh(fn)
    w_max = float(w[-1])
    if w_max <= 0.0 or float(w[0]) <= 1e-13 * w_max:
        null = v[:, 0] / s
        raise SingularFimError(
            "position FIM is singular; some parameter combination is "
            "unobservable", null_direction=null / np.linalg.norm(null))
    inv_diag_xy = (v[:2, :] ** 2) @ (1.0 / w) / s[:2] ** 2
    return float(np.sqrt(np.sum(inv_diag_xy))), w_max / float(w[0])


def peb(f_p: np.ndarray) -> float:
    """Position error bound: root trace of the position block of the CRB."""
    return peb_with_condition(f_p)[0]


def weighted_peb(pebs, cfg: ScenarioConfig) -> float:
    pebs = np.asarray(pebs, dtype=float)
    if pebs.size != cfg.m_ms:
        raise ValueError(f"need {cfg.m_ms} PEB values, got {pebs.size}")
    return float(np.dot(np.asarray(cfg.lambda_m), pebs))


# =====================================================================
# Average SINRs, rates, interference
# =====================================================================


@dataclass(frozen=True)
class MsSinr:
    avg: float     # throughput-weighted average over the two transmit branches
    case1: float   # idle channel, no false alarm
    case2: float   # busy channel, missed detection


def _check_beams(ch: ChannelSet, w_mat: np.ndarray):
    if w_mat.shape != (ch.n_b, ch.m_ms + ch.k_su):
        raise ValueError(f"beam matrix must be (N_B, M+K) = "
                         f"({ch.n_b}, {ch.m_ms + ch.k_su}), got {w_mat.shape}")


def _su_slice(ch: ChannelSet) -> slice:
    return slice(ch.m_ms, ch.m_ms + ch.k_su)


def ms_sinr(ch: ChannelSet, w_mat: np.ndarray, ris: RisPhase, tau: float,
            p_d: float, p_f: float, cfg: ScenarioConfig, m: int,
            eff: EffectiveChannels | None = None) -> MsSinr:
    """Average downlink SINR of MS m under the two-branch transmit model."""
    _check_beams(ch, w_mat)
    if eff is None:
        eff = effective_channels(ch, ris)
    g_m = eff.g_ms[m]
    rx = g_m @ w_mat
    sig = float(np.vdot(rx[:, m], rx[:, m]).real)
    su = rx[:, _su_slice(ch)]
    zeta = float(np.sum(np.abs(su) ** 2))
    pbs_rx = ch.h_p2ms[m] + ch.h_r2ms[m].T @ (ris.phi * ch.h_p2r)
    d_m = cfg.p_pbs * float(np.vdot(pbs_rx, pbs_rx).real)
    case1 = sig / (zeta + cfg.sigma2_ms)
    case2 = sig / (zeta + d_m + cfg.sigma2_ms)
    b, bt = duty_weights(tau, p_d, p_f, cfg)
    return MsSinr(avg=b * case1 + bt * case2, case1=case1, case2=case2)


def ms_objectives(ch: ChannelSet, w_mat: np.ndarray, ris: RisPhase, tau: float,
                  p_d: float, p_f: float, cfg: ScenarioConfig,
                  eff: EffectiveChannels | None = None) -> tuple:
    """(min weighted, sum weighted, per-MS average SINR list)."""
    if eff is None:
        eff = effective_channels(ch, ris)
    vals = [ms_sinr(ch, w_mat, ris, tau, p_d, p_f, cfg, m, eff=eff).avg
            for m in range(ch.m_ms)]
    weighted = [cfg.lambda_m[m] * vals[m] for m in range(ch.m_ms)]
    return min(weighted), sum(weighted), vals


def su_rate(ch: ChannelSet, w_mat: np.ndarray, ris: RisPhase, tau: float,
            p_d: float, p_f: float, cfg: ScenarioConfig, k: int,
            eff: EffectiveChannels | None = None) -> float:
    """Average achievable rate of SU k [bit/s/Hz]."""
    _check_beams(ch, w_mat)
    if eff is None:
        eff = effective_channels(ch, ris)
    rx = np.abs(eff.g_su[k].conj() @ w_mat) ** 2
    sig = float(rx[ch.m_ms + k])
    zeta = float(np.sum(rx[_su_slice(ch)])) - sig
    p_link = ch.h_p2su[k] + ch.h_r2su[k] @ (ris.phi * ch.h_p2r)
    d_k = cfg.p_pbs * float(abs(p_link) ** 2)
    case1 = sig / (zeta + cfg.sigma2_su)
    case2 = sig / (zeta + d_k + cfg.sigma2_su)
    b, bt = duty_weights(tau, p_d, p_f, cfg)
    return b * math.log2(1.0 + case1) + bt * math.log2(1.0 + case2)


def pue_interference(ch: ChannelSet, w_mat: np.ndarray, ris: RisPhase,
                     cfg: ScenarioConfig, l: int,
                     eff: EffectiveChannels | None = None) -> float:
    """Raw received power of all M+K beams at PU l (no duty weighting)."""
    _check_beams(ch, w_mat)
    if eff is None:
        eff = effective_channels(ch, ris)
    rx = np.abs(eff.g_pu[l].conj() @ w_mat) ** 2
    return float(np.sum(rx))


# =====================================================================
# True-problem feasibility audit
# =====================================================================


@dataclass(frozen=True)
class FeasibilityReport:
    """Slack of every original-design constraint at one operating point.

    Positive slack means satisfied.  Rates and SINRs are evaluated with the
    exact detector probabilities at (tau, epsilon, phi).
    """

    tau: float
    p_d: float
    p_f: float
    rates: tuple
    rate_slack: tuple          # R_k - r_k
    pd_slack: float            # P_d - P_d0
    pf_slack: float            # P_f0 - P_f
    avg_power: float
    power_slack: float         # P_sbs - average transmit power
    interference: tuple        # duty-weighted received power per PU
    interference_slack: tuple  # gamma_l0 - interference
    unit_mod_err: float        # worst | |phi_n| - 1 |

    def feasible(self, rate_tol: float = 1e-3, pd_tol: float = 1e-3,
                 pf_tol: float = 1e-6, power_rel: float = 1e-6,
                 interf_rel: float = 1e-6, mod_tol: float = 1e-9,
                 gamma_ref: tuple | None = None,
                 power_ref: float | None = None) -> bool:
        ok = all(s >= -rate_tol for s in self.rate_slack)
        ok &= self.pd_slack >= -pd_tol
        ok &= self.pf_slack >= -pf_tol
        p_ref = self.avg_power + self.power_slack if power_ref is None else power_ref
        ok &= self.power_slack >= -power_rel * max(1.0, abs(p_ref))
        for i, s in enumerate(self.interference_slack):
            g_ref = (self.interference[i] + s) if gamma_ref is None else gamma_ref[i]
            ok &= s >= -interf_rel * max(g_ref, 1e-30)
        ok &= self.unit_mod_err <= mod_tol
        return bool(ok)


def p1_feasibility(ch: ChannelSet, w_mat: np.ndarray, ris: RisPhase, tau: float,
                   cfg: ScenarioConfig, epsilon: float) -> FeasibilityReport:
    """Audit every original constraint at the given operating point."""
    from .sensing import detection_probability, false_alarm_probability, sensing_snr
    _check_beams(ch, w_mat)
    snr = sensing_snr(ch, ris, cfg)
    p_d = detection_probability(tau, epsilon, snr, cfg)
    p_f = false_alarm_probability(tau, epsilon, cfg)
    eff = effective_channels(ch, ris)
    b, bt = duty_weights(tau, p_d, p_f, cfg)

    rates = tuple(su_rate(ch, w_mat, ris, tau, p_d, p_f, cfg, k, eff=eff)
                  for k in range(ch.k_su))
    rate_slack = tuple(r - cfg.r_k[k] for k, r in enumerate(rates))
    avg_power = (b + bt) * float(np.sum(np.abs(w_mat) ** 2))
    interf = tuple(bt * pue_interference(ch, w_mat, ris, cfg, l, eff=eff)
                   for l in range(ch.l_pu))
    interf_slack = tuple(cfg.gamma_l0[l] - g for l, g in enumerate(interf))
    return FeasibilityReport(
        tau=tau, p_d=p_d, p_f=p_f,
        rates=rates, rate_slack=rate_slack,
        pd_slack=p_d - cfg.p_d0, pf_slack=cfg.p_f0 - p_f,
        avg_power=avg_power, power_slack=cfg.p_sbs - avg_power,
        interference=interf, interference_slack=interf_slack,
        unit_mod_err=float(np.max(np.abs(np.abs(ris.phi) - 1.0))))
