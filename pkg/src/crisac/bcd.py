"""Joint design of sensing time, transmit beams, and RIS phases.

Outer block rounds alternate an exhaustive sensing-time search, a
fractional-programming round for the transmit covariances (ratio
auxiliaries + tangent rate surrogates + semidefinite lifting), and a
lifted phase design with an auxiliary deflection variable and Gaussian
rounding back to unit modulus.

All conic subproblems are expressed in noise / budget units so slacks sit
at O(1); the physical quantities live around 1e-9 W.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .scenario import ScenarioConfig
from .channels import ChannelSet, RisPhase, effective_channels
from .sensing import (DetectionRegimeError, calibrate_threshold,
                      detection_probability, duty_weights,
                      false_alarm_probability, pd_bound_z, sensing_lift,
                      sensing_snr, z_min_for, z_of_phi)
from .metrics import ms_objectives, p1_feasibility, pue_interference, su_rate
from .convex_core import (ConicProblem, gaussian_randomization,
                          principal_rank1, psd_project)

_LN2 = math.log(2.0)


class InfeasibleDesignError(RuntimeError):
    """A design stage has no feasible point (reported with its context)."""


def _rtr(a: np.ndarray, b: np.ndarray) -> float:
    """Re Tr(a b) for Hermitian a and b."""
    return float(np.einsum("ij,ji->", a, b).real)


def _herm(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def _vform(v: np.ndarray) -> np.ndarray:
    """Hermitian PSD coefficient of |v^T phibar|^2 as Re Tr(. Phibar)."""
    return np.outer(v.conj(), v)


def epsilon_for(cfg: ScenarioConfig, tau: float) -> float:
    """Detector threshold at sensing time tau: explicit, or calibrated so
    the false-alarm target binds exactly."""
    if cfg.epsilon_det is not None:
        return cfg.epsilon_det
    return calibrate_threshold(tau, cfg.p_f0, cfg)


# =====================================================================
# Lifted data for the transmit-beam subproblem
# =====================================================================


@dataclass(frozen=True)
class LiftedW:
    """Constants of the transmit-covariance subproblem at fixed (tau, phi)."""

    q_ms: np.ndarray    # (M, N_B, N_B)   G_m^H G_m
    p_su: np.ndarray    # (K, N_B, N_B)   g_k g_k^H
    r_pu: np.ndarray    # (L, N_B, N_B)   g_l g_l^H
    b: float            # idle-and-quiet duty weight
    bt: float           # busy-but-missed duty weight
    a1: np.ndarray      # (M,) lambda_m * b
    a2: np.ndarray      # (M,) lambda_m * bt
    abar: np.ndarray    # (M,) primary interference + noise floor at MS m
    atil: np.ndarray    # (K,) primary interference + noise floor at SU k
    tau: float
    epsilon: float
    p_d: float
    p_f: float

    @property
    def m_ms(self) -> int:
        return self.q_ms.shape[0]

    @property
    def k_su(self) -> int:
        return self.p_su.shape[0]

    def zeta_ms(self, wbars, m: int) -> float:
        """Secondary-user beam power leaking onto MS m."""
        mm = self.m_ms
        return sum(_rtr(self.q_ms[m], wbars[mm + i]) for i in range(self.k_su))

    def zeta_su(self, wbars, k: int) -> float:
        """Other-user beam power received by SU k."""
        mm = self.m_ms
        return sum(_rtr(self.p_su[k], wbars[mm + i])
                   for i in range(self.k_su) if i != k)

    def objective(self, wbars) -> tuple:
        """(min weighted average SINR, per-MS values) on lifted covariances."""
        s2 = self.abar_noise
        vals = []
        for m in range(self.m_ms):
            sig = _rtr(self.q_ms[m], wbars[m])
            zeta = self.zeta_ms(wbars, m)
            vals.append(self.a1[m] * sig / (zeta + s2)
                        + self.a2[m] * sig / (zeta + self.abar[m]))
        return min(vals), vals

    abar_noise: float = 0.0   # thermal floor at the MS receivers
    atil_noise: float = 0.0   # thermal floor at the SU receivers


def build_lifted_w(ch: ChannelSet, ris: RisPhase, tau: float,
                   cfg: ScenarioConfig, epsilon: float | None = None) -> LiftedW:
    """Assemble the fixed data of the transmit subproblem."""
    eps = epsilon_for(cfg, tau) if epsilon is None else float(epsilon)
    snr = sensing_snr(ch, ris, cfg)
    p_d = detection_probability(tau, eps, snr, cfg)
    p_f = false_alarm_probability(tau, eps, cfg)
    b, bt = duty_weights(tau, p_d, p_f, cfg)
    eff = effective_channels(ch, ris)
    q_ms = np.stack([_herm(eff.g_ms[m].conj().T @ eff.g_ms[m])
                     for m in range(ch.m_ms)]) \
        if ch.m_ms else np.zeros((0, ch.n_b, ch.n_b), complex)
    p_su = np.stack([_vform(eff.g_su[k].conj()) for k in range(ch.k_su)]) \
        if ch.k_su else np.zeros((0, ch.n_b, ch.n_b), complex)
    r_pu = np.stack([_vform(eff.g_pu[l].conj()) for l in range(ch.l_pu)]) \
        if ch.l_pu else np.zeros((0, ch.n_b, ch.n_b), complex)
    abar, atil = [], []
    for m in range(ch.m_ms):
        rx = ch.h_p2ms[m] + ch.h_r2ms[m].T @ (ris.phi * ch.h_p2r)
        abar.append(cfg.p_pbs * float(np.vdot(rx, rx).real) + cfg.sigma2_ms)
    for k in range(ch.k_su):
        s = ch.h_p2su[k] + ch.h_r2su[k] @ (ris.phi * ch.h_p2r)
        atil.append(cfg.p_pbs * float(abs(s) ** 2) + cfg.sigma2_su)
    lam = np.asarray(cfg.lambda_m, dtype=float)
    return LiftedW(q_ms=q_ms, p_su=p_su, r_pu=r_pu, b=b, bt=bt,
                   a1=lam * b, a2=lam * bt,
                   abar=np.asarray(abar), atil=np.asarray(atil),
                   tau=tau, epsilon=eps, p_d=p_d, p_f=p_f,
                   abar_noise=cfg.sigma2_ms, atil_noise=cfg.sigma2_su)


# =====================================================================
# Ratio auxiliaries and tangent surrogates
# =====================================================================


@dataclass(frozen=True)
class DinkelbachState:
    """Ratio auxiliaries of one fractional round."""

    y1: np.ndarray
    y2: np.ndarray
    iteration: int
    trace: tuple


def dinkelbach_state(m: int) -> DinkelbachState:
    return DinkelbachState(np.zeros(m), np.zeros(m), 0, ())


def dinkelbach_update_w(state: DinkelbachState, wbars,
                        lifted: LiftedW) -> DinkelbachState:
    """Reset the auxiliaries to the current SINR ratio values."""
    y1 = np.zeros(lifted.m_ms)
    y2 = np.zeros(lifted.m_ms)
    s2 = lifted.abar_noise
    for m in range(lifted.m_ms):
        sig = _rtr(lifted.q_ms[m], wbars[m])
        zeta = lifted.zeta_ms(wbars, m)
        y1[m] = lifted.a1[m] * sig / (zeta + s2)
        y2[m] = lifted.a2[m] * sig / (zeta + lifted.abar[m])
    return replace(state, y1=y1, y2=y2, iteration=state.iteration + 1)


@dataclass(frozen=True)
class SurrogateAffine:
    """const + sum Re Tr(mat_i X_{idx_i}): a tangent affine majorant."""

    const: float
    terms: tuple   # ((index, matrix), ...)

    def value(self, mats) -> float:
        return self.const + sum(_rtr(mat, mats[idx]) for idx, mat in self.terms)


def sca_rate_surrogate_w(lifted: LiftedW, wbars_prev, k: int) -> tuple:
    """Tangent majorants of the two interference log terms of SU k.

    Returned pair upper-bounds (b log2(zeta'+sigma2), bt log2(zeta'+atil))
    over the beam covariances; equality at the expansion point.
    """
    mm = lifted.m_ms
    zeta0 = lifted.zeta_su(wbars_prev, k)
    out = []
    for beta, floor in ((lifted.b, lifted.atil_noise),
                        (lifted.bt, lifted.atil[k])):
        den = zeta0 + floor
        if den <= 0.0:
            raise ValueError(f"nonpositive log argument {den} at expansion")
        terms = []
        lin0 = 0.0
        for i in range(lifted.k_su):
            if i == k:
                continue
            terms.append((mm + i, (beta / (_LN2 * den)) * lifted.p_su[k]))
            lin0 += (beta / (_LN2 * den)) * _rtr(lifted.p_su[k],
                                                 wbars_prev[mm + i])
        out.append(SurrogateAffine(beta * math.log2(den) - lin0, tuple(terms)))
    return out[0], out[1]


# =====================================================================
# Transmit-beam subproblem
# =====================================================================


def _w_var_names(mk: int):
    return [f"W{i}" for i in range(mk)]


def _add_power_rows(prob, names, lifted: LiftedW, cfg: ScenarioConfig):
    n_b = lifted.q_ms.shape[1] if lifted.m_ms else lifted.p_su.shape[1]
    eye = np.eye(n_b)
    duty = lifted.b + lifted.bt
    prob.add_affine([(nm, duty * eye / cfg.p_sbs) for nm in names], 1.0,
                    label="power")
    for l in range(len(lifted.r_pu)):
        gam = cfg.gamma_l0[l]
        prob.add_affine([(nm, lifted.bt * lifted.r_pu[l] / gam)
                         for nm in names], 1.0, label=f"interf{l}")


def _init_w(lifted: LiftedW, ch: ChannelSet, cfg: ScenarioConfig,
            solver_tol: float):
    """Feasibility-biased start: affine SINR-target restriction of the
    rate constraints plus the worst-case linear objective rows."""
    mk = lifted.m_ms + lifted.k_su
    s_ms, s_su = lifted.abar_noise, lifted.atil_noise
    modes = ["avg"] + (["idle"] if lifted.b > 0.0 else [])
    last = None
    for mode in modes:
        prob = ConicProblem()
        names = _w_var_names(mk)
        for nm in names:
            prob.add_psd_var(nm, ch.n_b)
        for m in range(lifted.m_ms):
            gain = (lifted.a1[m] + lifted.a2[m]) / s_ms
            prob.add_affine([(names[m], -gain * lifted.q_ms[m])], 0.0,
                            t_coeff=1.0, label=f"obj{m}")
        for k in range(lifted.k_su):
            if mode == "avg":
                s_star = 2.0 ** (cfg.r_k[k] / (lifted.b + lifted.bt)) - 1.0
                floor = lifted.atil[k]
            else:
                s_star = 2.0 ** (cfg.r_k[k] / lifted.b) - 1.0
                floor = s_su
            terms = [(names[lifted.m_ms + k], lifted.p_su[k] / s_su)]
            for i in range(lifted.k_su):
                if i != k:
                    terms.append((names[lifted.m_ms + i],
                                  -s_star * lifted.p_su[k] / s_su))
            prob.add_affine(terms, s_star * floor / s_su, sense=">=",
                            label=f"rate{k}")
        _add_power_rows(prob, names, lifted, cfg)
        sol = prob.solve(tol=solver_tol)
        last = sol
        if sol.status != "infeasible":
            return [psd_project(sol.variables[nm]) for nm in names]
    raise InfeasibleDesignError(
        "transmit design infeasible at initialization: rate or interference "
        f"targets unattainable ({last.message or last.status})")


def _build_p3(lifted: LiftedW, cfg: ScenarioConfig, ch: ChannelSet,
              state: DinkelbachState, wbars_prev):
    mk = lifted.m_ms + lifted.k_su
    s_ms, s_su = lifted.abar_noise, lifted.atil_noise
    prob = ConicProblem()
    names = _w_var_names(mk)
    for nm in names:
        prob.add_psd_var(nm, ch.n_b)
    # worst-case weighted SINR rows with frozen ratio auxiliaries
    for m in range(lifted.m_ms):
        terms = [(names[m], (lifted.a1[m] + lifted.a2[m]) * lifted.q_ms[m] / s_ms)]
        drag = state.y1[m] + state.y2[m]
        for i in range(lifted.k_su):
            terms.append((names[lifted.m_ms + i], -drag * lifted.q_ms[m] / s_ms))
        rhs = state.y1[m] + state.y2[m] * lifted.abar[m] / s_ms
        prob.add_affine(terms, rhs, t_coeff=-1.0, sense=">=", label=f"sinr{m}")
    # rate constraints: concave logs minus tangent majorants
    for k in range(lifted.k_su):
        s1, s2 = sca_rate_surrogate_w(lifted, wbars_prev, k)
        all_terms_1 = [(names[lifted.m_ms + i], lifted.p_su[k] / s_su)
                       for i in range(lifted.k_su)]
        all_terms_2 = [(names[lifted.m_ms + i], lifted.p_su[k] / lifted.atil[k])
                       for i in range(lifted.k_su)]
        rhs_terms = {}
        for idx, mat in s1.terms + s2.terms:
            rhs_terms[idx] = rhs_terms.get(idx, 0.0) + mat
        rhs_const = (cfg.r_k[k] + s1.const + s2.const
                     - lifted.b * math.log2(s_su)
                     - lifted.bt * math.log2(lifted.atil[k]))
        prob.add_log_constraint(
            [(lifted.b, 1.0, all_terms_1), (lifted.bt, 1.0, all_terms_2)],
            rhs_const=rhs_const,
            rhs_terms=[(names[idx], mat) for idx, mat in rhs_terms.items()],
            label=f"rate{k}")
    _add_power_rows(prob, names, lifted, cfg)
    return prob, names


@dataclass(frozen=True)
class WSolution:
    w_mat: np.ndarray       # (N_B, M+K) extracted beams
    w_bars: tuple           # lifted covariances at the last accepted round
    objective: float        # true min weighted average SINR at w_mat
    objective_lifted: float
    trace: tuple            # outer-round objective values (lifted)
    n_dt: int
    n_sca: int
    rank1_min: float
    low_rank: bool


def _extract_beams(wbars, p_sbs: float):
    cols, ratios = [], []
    for wb in wbars:
        tr = float(np.trace(wb).real)
        if tr <= 1e-18 * max(p_sbs, 1e-18):
            cols.append(np.zeros(wb.shape[0], complex))
            ratios.append(1.0)
            continue
        x, ratio = principal_rank1(wb)
        lam = float(np.vdot(x, x).real)
        cols.append(x * math.sqrt(tr / lam))
        ratios.append(ratio)
    return np.stack(cols, axis=1), ratios


def solve_w(ch: ChannelSet, ris: RisPhase, tau: float, cfg: ScenarioConfig,
            epsilon: float | None = None, solver_tol: float = 1e-7) -> WSolution:
    """Nested ratio-auxiliary / surrogate rounds for the transmit beams."""
    lifted = build_lifted_w(ch, ris, tau, cfg, epsilon)
    wbars = _init_w(lifted, ch, cfg, solver_tol)
    obj, _ = lifted.objective(wbars)
    trace = [obj]
    state = dinkelbach_state(lifted.m_ms)
    n_sca = 0
    n_dt = 0
    for _ in range(cfg.i_max):
        n_dt += 1
        state = dinkelbach_update_w(state, wbars, lifted)
        sca_obj = obj
        for _ in range(cfg.j_max):
            prob, names = _build_p3(lifted, cfg, ch, state, wbars)
            sol = prob.solve(tol=solver_tol,
                             warm_start=dict(zip(names, wbars)))
            n_sca += 1
            if sol.status == "infeasible":
                break
            cand = [psd_project(sol.variables[nm]) for nm in names]
            cand_obj, _ = lifted.objective(cand)
            if cand_obj < sca_obj - 1e-12 * max(1.0, abs(sca_obj)):
                break                      # keep the better iterate
            moved = abs(cand_obj - sca_obj) / max(abs(sca_obj), 1e-12)
            wbars, sca_obj = cand, cand_obj
            if moved < cfg.eps_tol:
                break
        rel = abs(sca_obj - obj) / max(abs(obj), 1e-12)
        obj = max(obj, sca_obj)
        trace.append(obj)
        if rel < cfg.eps_tol:
            break
    w_mat, ratios = _extract_beams(wbars, cfg.p_sbs)
    eff = effective_channels(ch, ris)
    true_obj = ms_objectives(ch, w_mat, ris, tau, lifted.p_d, lifted.p_f,
                             cfg, eff=eff)[0]
    rank1_min = min(ratios) if ratios else 1.0
    return WSolution(w_mat=w_mat, w_bars=tuple(wbars), objective=true_obj,
                     objective_lifted=obj, trace=tuple(trace), n_dt=n_dt,
                     n_sca=n_sca, rank1_min=rank1_min,
                     low_rank=rank1_min < 0.95)


# =====================================================================
# Lifted data for the phase subproblem
# =====================================================================


@dataclass(frozen=True)
class LiftedPhi:
    """Constants of the phase subproblem at fixed (tau, W)."""

    gbar: np.ndarray    # (M, M+K, n1, n1) per-beam MS quadratic forms
    gtil: np.ndarray    # (M, n1, n1)      primary->MS path form
    e_su: np.ndarray    # (K, K, n1, n1)   per-SUE-beam forms at SU k
    ebar: np.ndarray    # (K, n1, n1)      primary->SU path form
    etil: np.ndarray    # (L, M+K, n1, n1) per-beam forms at PU l
    ehat: np.ndarray    # (n1, n1)         sensing energy form
    b: float
    ct: float           # busy-slot duty prefactor (1 - tau/T) Pr{busy}
    a1: np.ndarray      # (M,) lambda_m * b
    c_m: np.ndarray     # (M,) lambda_m * ct
    tau: float
    epsilon: float
    s2_ms: float
    s2_su: float

    @property
    def m_ms(self) -> int:
        return self.gbar.shape[0]

    @property
    def k_su(self) -> int:
        return self.e_su.shape[0]

    def d_ms(self, phibar: np.ndarray, m: int, p_pbs: float) -> float:
        return p_pbs * max(_rtr(self.gtil[m], phibar), 0.0) + self.s2_ms

    def d_su(self, phibar: np.ndarray, k: int, p_pbs: float) -> float:
        return p_pbs * max(_rtr(self.ebar[k], phibar), 0.0) + self.s2_su

    def zeta_su(self, phibar: np.ndarray, k: int) -> float:
        return sum(max(_rtr(self.e_su[k, i], phibar), 0.0)
                   for i in range(self.k_su) if i != k)


def build_lifted_phi(ch: ChannelSet, w_mat: np.ndarray, tau: float,
                     cfg: ScenarioConfig,
                     epsilon: float | None = None) -> LiftedPhi:
    """Assemble every lifted quadratic form of the phase subproblem."""
    eps = epsilon_for(cfg, tau) if epsilon is None else float(epsilon)
    mk = ch.m_ms + ch.k_su
    n1 = ch.n_r + 1
    if w_mat.shape != (ch.n_b, mk):
        raise ValueError(f"beam matrix must be ({ch.n_b}, {mk}), "
                         f"got {w_mat.shape}")
    sw = ch.h_s2r.T @ w_mat                     # (N_R, M+K) incident amplitudes
    gbar = np.zeros((ch.m_ms, mk, n1, n1), complex)
    gtil = np.zeros((ch.m_ms, n1, n1), complex)
    for m in range(ch.m_ms):
        a_rm = ch.h_r2ms[m].T                   # (N_M, N_R)
        for i in range(mk):
            v = np.concatenate([a_rm * sw[:, i][None, :],
                                (ch.h_s2ms[m].T @ w_mat[:, i])[:, None]],
                               axis=1)
            gbar[m, i] = _herm(v.conj().T @ v)
        vp = np.concatenate([a_rm * ch.h_p2r[None, :],
                             ch.h_p2ms[m][:, None]], axis=1)
        gtil[m] = _herm(vp.conj().T @ vp)
    e_su = np.zeros((ch.k_su, ch.k_su, n1, n1), complex)
    ebar = np.zeros((ch.k_su, n1, n1), complex)
    for k in range(ch.k_su):
        for i in range(ch.k_su):
            v = np.concatenate([ch.h_r2su[k] * sw[:, ch.m_ms + i],
                                [ch.h_s2su[k] @ w_mat[:, ch.m_ms + i]]])
            e_su[k, i] = _herm(_vform(v))
        v = np.concatenate([ch.h_r2su[k] * ch.h_p2r, [ch.h_p2su[k]]])
        ebar[k] = _herm(_vform(v))
    etil = np.zeros((ch.l_pu, mk, n1, n1), complex)
    for l in range(ch.l_pu):
        for i in range(mk):
            v = np.concatenate([ch.h_r2pu[l] * sw[:, i],
                                [ch.h_s2pu[l] @ w_mat[:, i]]])
            etil[l, i] = _herm(_vform(v))
    pre = (1.0 - tau / cfg.t_total)
    b = pre * cfg.prob_h0 * (1.0 - false_alarm_probability(tau, eps, cfg))
    ct = pre * cfg.prob_h1
    lam = np.asarray(cfg.lambda_m, dtype=float)
    return LiftedPhi(gbar=gbar, gtil=gtil, e_su=e_su, ebar=ebar, etil=etil,
                     ehat=sensing_lift(ch), b=b, ct=ct, a1=lam * b,
                     c_m=lam * ct, tau=tau, epsilon=eps,
                     s2_ms=cfg.sigma2_ms, s2_su=cfg.sigma2_su)


def sca_pd_surrogate(lifted: LiftedPhi, phibar_prev: np.ndarray, z: float,
                     tau: float, cfg: ScenarioConfig) -> SurrogateAffine:
    """Tangent majorant of the detection-margin square root term.

    The majorized quantity is sigma2 * sqrt((z/(tau fs)) (2 P Tr(E_hat
    Phibar)/sigma2 + N_B)); at z = 0 it vanishes identically.
    """
    if z < 0.0:
        raise ValueError(f"deflection must be nonnegative, got {z}")
    if z == 0.0:
        return SurrogateAffine(0.0, ())
    s2 = cfg.sigma2_sbs
    tr0 = max(_rtr(lifted.ehat, phibar_prev), 0.0)
    u0 = (z / (tau * cfg.f_s)) * (2.0 * cfg.p_pbs * tr0 / s2 + cfg.n_b)
    if u0 <= 0.0:
        raise ValueError("degenerate square-root argument at expansion point")
    root0 = math.sqrt(u0)
    slope = z * cfg.p_pbs / (tau * cfg.f_s * root0)
    return SurrogateAffine(s2 * root0 - slope * tr0,
                           ((0, slope * lifted.ehat),))


def sca_rate_surrogate_phi(lifted: LiftedPhi, phibar_prev: np.ndarray, k: int,
                           p_d: float, cfg: ScenarioConfig) -> tuple:
    """Tangent majorants of the two interference log terms of SU k over
    the lifted phase matrix."""
    zeta0 = lifted.zeta_su(phibar_prev, k)
    beta2 = lifted.ct * (1.0 - p_d)
    out = []
    for beta, floor, extra in (
            (lifted.b, lifted.s2_su, None),
            (beta2, lifted.d_su(phibar_prev, k, cfg.p_pbs), lifted.ebar[k])):
        den = zeta0 + floor
        if den <= 0.0:
            raise ValueError(f"nonpositive log argument {den} at expansion")
        grad = np.zeros_like(phibar_prev)
        for i in range(lifted.k_su):
            if i != k:
                grad = grad + lifted.e_su[k, i]
        if extra is not None:
            grad = grad + cfg.p_pbs * extra
        grad = (beta / (_LN2 * den)) * grad
        const = beta * math.log2(den) - _rtr(grad, phibar_prev)
        out.append(SurrogateAffine(const, ((0, grad),)))
    return out[0], out[1]


def dinkelbach_update_phi(state: DinkelbachState, phibar: np.ndarray,
                          lifted: LiftedPhi, z: float,
                          cfg: ScenarioConfig) -> DinkelbachState:
    """Reset the phase-round auxiliaries to the current ratio values."""
    p_d = pd_bound_z(z)
    y1 = np.zeros(lifted.m_ms)
    y2 = np.zeros(lifted.m_ms)
    for m in range(lifted.m_ms):
        sig = max(_rtr(lifted.gbar[m, m], phibar), 0.0)
        zeta = sum(max(_rtr(lifted.gbar[m, lifted.m_ms + i], phibar), 0.0)
                   for i in range(lifted.k_su))
        y1[m] = lifted.a1[m] * sig / (zeta + lifted.s2_ms)
        y2[m] = (lifted.c_m[m] * (1.0 - p_d) * sig
                 / (zeta + lifted.d_ms(phibar, m, cfg.p_pbs)))
    return replace(state, y1=y1, y2=y2, iteration=state.iteration + 1)


def _build_p5(lifted: LiftedPhi, cfg: ScenarioConfig, state: DinkelbachState,
              phibar_prev: np.ndarray, z: float):
    n1 = lifted.ehat.shape[0]
    p_d = pd_bound_z(z)
    s_ms, s_su = lifted.s2_ms, lifted.s2_su
    prob = ConicProblem()
    prob.add_psd_var("P", n1)
    mm, kk = lifted.m_ms, lifted.k_su
    for m in range(mm):
        coef = (lifted.a1[m] + lifted.c_m[m] * (1.0 - p_d)) * lifted.gbar[m, m]
        drag = state.y1[m] + state.y2[m]
        for i in range(kk):
            coef = coef - drag * lifted.gbar[m, mm + i]
        coef = coef - state.y2[m] * cfg.p_pbs * lifted.gtil[m]
        prob.add_affine([("P", coef / s_ms)], state.y1[m] + state.y2[m],
                        t_coeff=-1.0, sense=">=", label=f"sinr{m}")
    beta2 = lifted.ct * (1.0 - p_d)
    for k in range(kk):
        s1, s2 = sca_rate_surrogate_phi(lifted, phibar_prev, k, p_d, cfg)
        sig_all = np.zeros((n1, n1), complex)
        for i in range(kk):
            sig_all = sig_all + lifted.e_su[k, i]
        rhs_mat = s1.terms[0][1] + s2.terms[0][1] if s1.terms else s2.terms[0][1]
        rhs_const = (cfg.r_k[k] + s1.const + s2.const
                     - (lifted.b + beta2) * math.log2(s_su))
        prob.add_log_constraint(
            [(lifted.b, 1.0, [("P", sig_all / s_su)]),
             (beta2, 1.0,
              [("P", (sig_all + cfg.p_pbs * lifted.ebar[k]) / s_su)])],
            rhs_const=rhs_const, rhs_terms=[("P", rhs_mat)], label=f"rate{k}")
    # detection margin at the frozen deflection
    sur = sca_pd_surrogate(lifted, phibar_prev, z, lifted.tau, cfg)
    eps = lifted.epsilon
    coef = cfg.p_pbs * lifted.ehat
    if sur.terms:
        coef = coef - sur.terms[0][1]
    rhs = (eps - cfg.sigma2_sbs * cfg.n_b + sur.const) / eps
    prob.add_affine([("P", coef / eps)], rhs, sense=">=", label="detect")
    for l in range(lifted.etil.shape[0]):
        tot = np.zeros((n1, n1), complex)
        for i in range(lifted.etil.shape[1]):
            tot = tot + lifted.etil[l, i]
        prob.add_affine([("P", beta2 * tot / cfg.gamma_l0[l])], 1.0,
                        label=f"interf{l}")
    prob.fix_diagonal("P")
    return prob


@dataclass(frozen=True)
class PhiSolution:
    ris: RisPhase
    phibar: np.ndarray      # last lifted solution (pre-rounding)
    objective: float
    trace: tuple
    n_dt: int
    n_ao: int
    n_sca: int
    rank1_ratio: float
    z: float
    feasible: bool


def _phi_evaluator(ch, w_mat, tau, eps, cfg):
    """True-constraint screen for rounded phase candidates; the score is
    the min weighted average SINR at the exact operating point."""
    p_f = false_alarm_probability(tau, eps, cfg)

    def evaluate(phi_vec):
        ris = RisPhase(np.asarray(phi_vec, dtype=complex))
        snr = sensing_snr(ch, ris, cfg)
        p_d = detection_probability(tau, eps, snr, cfg)
        eff = effective_channels(ch, ris)
        feas = p_d >= cfg.p_d0 - 1e-12
        if feas:
            _, bt = duty_weights(tau, p_d, p_f, cfg)
            for k in range(ch.k_su):
                if su_rate(ch, w_mat, ris, tau, p_d, p_f, cfg, k,
                           eff=eff) < cfg.r_k[k] - 1e-9:
                    feas = False
                    break
            if feas:
                for l in range(ch.l_pu):
                    if bt * pue_interference(ch, w_mat, ris, cfg, l, eff=eff) \
                            > cfg.gamma_l0[l] * (1.0 + 1e-12):
                        feas = False
                        break
        score = ms_objectives(ch, w_mat, ris, tau, p_d, p_f, cfg, eff=eff)[0]
        return feas, score

    return evaluate


def _polish_phases(cur, cur_obj, cur_feas, evaluate, n_r, max_passes=3):
    """Cyclic one-element phase refreshes scored on the true objective.

    Rounding keeps candidates near the relaxed solution, so the kept
    phase can sit a hair inside the element-wise optimum; coarse-to-fine
    angle grids close that gap while preserving feasibility gating."""
    passes = 0
    improved = True
    while improved and passes < max_passes:
        improved = False
        passes += 1
        for n in range(n_r):
            base = float(np.angle(cur.phi[n]))
            best_a = None
            best_obj, best_feas = cur_obj, cur_feas
            width = math.pi
            for _ in range(2):
                for a in np.linspace(base - width, base + width, 25):
                    cand = cur.phi.copy()
                    cand[n] = complex(math.cos(a), math.sin(a))
                    feas, score = evaluate(cand)
                    g = 1e-12 * max(1.0, abs(best_obj))
                    if (feas and not best_feas) or \
                            (feas == best_feas and score > best_obj + g):
                        best_a, best_obj, best_feas = float(a), score, feas
                if best_a is None:
                    break
                base, width = best_a, width / 12.0
            if best_a is not None:
                phi_new = cur.phi.copy()
                phi_new[n] = complex(math.cos(best_a), math.sin(best_a))
                cur = RisPhase(phi_new)
                cur_obj, cur_feas = best_obj, best_feas
                improved = True
    return cur, cur_obj, cur_feas, passes


def _safe_z(phibar, ch, tau, eps, cfg):
    try:
        return z_of_phi(phibar, ch, tau, eps, cfg)
    except DetectionRegimeError:
        return None


def _z_search(ch, w_mat, ris, tau, eps, cfg, z_lo, z_hi):
    """Exhaustive deflection refresh at a fixed rounded phase state."""
    p_f = false_alarm_probability(tau, eps, cfg)
    eff = effective_channels(ch, ris)
    best_z, best_obj = z_lo, -math.inf
    for z in np.linspace(z_lo, max(z_hi, z_lo), cfg.z_grid):
        p_d = pd_bound_z(float(z))
        if p_d < cfg.p_d0 - 1e-12:
            continue
        _, bt = duty_weights(tau, p_d, p_f, cfg)
        ok = all(su_rate(ch, w_mat, ris, tau, p_d, p_f, cfg, k, eff=eff)
                 >= cfg.r_k[k] - 1e-9 for k in range(ch.k_su))
        if ok:
            ok = all(bt * pue_interference(ch, w_mat, ris, cfg, l, eff=eff)
                     <= cfg.gamma_l0[l] * (1.0 + 1e-12)
                     for l in range(ch.l_pu))
        if not ok:
            continue
        obj = ms_objectives(ch, w_mat, ris, tau, p_d, p_f, cfg, eff=eff)[0]
        if obj > best_obj:
            best_z, best_obj = float(z), obj
    return best_z


def solve_phi(ch: ChannelSet, w_mat: np.ndarray, tau: float,
              cfg: ScenarioConfig, ris0: RisPhase | None = None,
              epsilon: float | None = None, seed: int = 0,
              solver_tol: float = 1e-7) -> PhiSolution:
    """Nested ratio / alternating / surrogate rounds for the RIS phases,
    each conic solve followed by Gaussian rounding to unit modulus."""
    eps = epsilon_for(cfg, tau) if epsilon is None else float(epsilon)
    lifted = build_lifted_phi(ch, w_mat, tau, cfg, eps)
    if ris0 is None:
        ris0 = RisPhase.random(ch.n_r, [seed, 0xB0])
    evaluate = _phi_evaluator(ch, w_mat, tau, eps, cfg)
    rand_seq = itertools.count()
    z_lo = z_min_for(cfg.p_d0)

    cur = ris0
    cur_feas, cur_obj = evaluate(cur.phi)
    cur_bar = cur.lifted()
    z_cur = _safe_z(cur_bar, ch, tau, eps, cfg)
    z_cur = z_lo if z_cur is None else max(z_lo, z_cur)
    rank1 = 1.0
    n_sca = 0
    n_ao = 0
    jumped = False   # entered the feasible set at a lower score

    def accept(cand_phi, ratio):
        nonlocal cur, cur_feas, cur_obj, cur_bar, rank1, jumped
        feas, obj_c = evaluate(cand_phi)
        g = 1e-12 * max(1.0, abs(cur_obj))
        take = (feas and not cur_feas) or \
               (feas == cur_feas and obj_c >= cur_obj - g)
        if take:
            if feas and not cur_feas and obj_c < cur_obj:
                jumped = True
            cur = RisPhase(np.asarray(cand_phi, dtype=complex))
            cur_feas, cur_obj, cur_bar = feas, obj_c, cur.lifted()
            rank1 = ratio
        return take

    def solve_round(state):
        nonlocal n_sca
        prob = _build_p5(lifted, cfg, state, cur_bar, z_cur)
        warm = 0.98 * cur_bar + 0.02 * np.eye(cur_bar.shape[0])
        sol = prob.solve(tol=solver_tol, warm_start={"P": warm})
        n_sca += 1
        if sol.status == "infeasible":
            return False
        bar = psd_project(sol.variables["P"])
        extras = [cur.phi]
        ratio = 1.0
        try:
            v, ratio = principal_rank1(bar)
            if abs(v[-1]) > 1e-12 * np.linalg.norm(v):
                extras.append(np.exp(1j * np.angle(v[:-1] * np.conj(v[-1]))))
        except ValueError:
            pass
        rnd = gaussian_randomization(
            bar, cfg.n_rand, evaluate, [seed, 0xB1, next(rand_seq)],
            extra_candidates=extras)
        return accept(rnd.phi, ratio)

    # feasibility-biased first round with zeroed ratio auxiliaries
    state = dinkelbach_state(lifted.m_ms)
    solve_round(state)
    jumped = False
    obj = cur_obj
    trace = [obj]
    n_dt = 0
    for _ in range(cfg.i_max):
        n_dt += 1
        z_y = _safe_z(cur_bar, ch, tau, eps, cfg)
        state = dinkelbach_update_phi(state, cur_bar, lifted,
                                      z_cur if z_y is None else max(z_lo, z_y),
                                      cfg)
        ao_obj = cur_obj
        for _ in range(cfg.j_max):
            n_ao += 1
            sca_obj = cur_obj
            for _ in range(cfg.k_max):
                if not solve_round(state):
                    break
                moved = abs(cur_obj - sca_obj) / max(abs(sca_obj), 1e-12)
                sca_obj = cur_obj
                if moved < cfg.eps_tol:
                    break
            z_hi = _safe_z(cur_bar, ch, tau, eps, cfg)
            z_cur = _z_search(ch, w_mat, cur, tau, eps, cfg, z_lo,
                              z_lo if z_hi is None else z_hi)
            moved = abs(cur_obj - ao_obj) / max(abs(ao_obj), 1e-12)
            ao_obj = cur_obj
            if moved < cfg.eps_tol:
                break
        if jumped:
            # earlier entries scored an infeasible design; restart the log
            jumped = False
            obj = cur_obj
            trace = [obj]
            continue
        rel = abs(cur_obj - obj) / max(abs(obj), 1e-12)
        obj = max(obj, cur_obj)
        trace.append(obj)
        if rel < cfg.eps_tol:
            break
    cur, cur_obj, cur_feas, polish_passes = _polish_phases(
        cur, cur_obj, cur_feas, evaluate, ch.n_r)
    n_ao += polish_passes
    cur_bar = cur.lifted()
    z_hi = _safe_z(cur_bar, ch, tau, eps, cfg)
    z_cur = _z_search(ch, w_mat, cur, tau, eps, cfg, z_lo,
                      z_lo if z_hi is None else z_hi)
    if cur_obj > trace[-1]:
        trace.append(cur_obj)
    return PhiSolution(ris=cur, phibar=cur_bar, objective=cur_obj,
                       trace=tuple(trace), n_dt=n_dt, n_ao=n_ao, n_sca=n_sca,
                       rank1_ratio=rank1, z=z_cur, feasible=cur_feas)


# =====================================================================
# Sensing-time search and the outer block rounds
# =====================================================================


def tau_search(ch: ChannelSet, w_mat: np.ndarray, ris: RisPhase,
               cfg: ScenarioConfig, extra=()) -> float:
    """Best feasible sensing time on the uniform interior grid.

    Each candidate re-calibrates the detector threshold to the false-alarm
    target, checks the full constraint set, and scores the min weighted
    average SINR.
    """
    if cfg.tau_grid < 2:
        raise ValueError(f"sensing-time grid needs >= 2 points, got {cfg.tau_grid}")
    delta = cfg.t_total / (cfg.tau_grid + 1)
    grid = [i * delta for i in range(1, cfg.tau_grid + 1)]
    grid.extend(float(t) for t in extra if 0.0 < t < cfg.t_total)
    best_tau, best_obj = None, -math.inf
    for tau in grid:
        eps = epsilon_for(cfg, tau)
        report = p1_feasibility(ch, w_mat, ris, tau, cfg, eps)
        if not report.feasible():
            continue
        obj = ms_objectives(ch, w_mat, ris, tau, report.p_d, report.p_f,
                            cfg)[0]
        if obj > best_obj:
            best_tau, best_obj = tau, obj
    if best_tau is None:
        raise InfeasibleDesignError(
            "no feasible sensing time on the grid: detection or rate targets "
            "unattainable at every sensing window")
    return best_tau


@dataclass(frozen=True)
class BcdTraceRow:
    iter: int
    stage: str
    objective: float
    pd: float
    pf: float
    tau: float
    min_rate: float
    max_interf: float
    rank1_ratio_min: float


TRACE_HEADER = "iter,stage,objective,pd,pf,tau,min_rate,max_interf,rank1_ratio_min"


def write_trace(rows, path):
    with open(path, "w") as fh:
        fh.write(TRACE_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.iter},{r.stage},{r.objective:.12g},{r.pd:.9g},"
                     f"{r.pf:.9g},{r.tau:.9g},{r.min_rate:.9g},"
                     f"{r.max_interf:.9g},{r.rank1_ratio_min:.6g}\n")


@dataclass(frozen=True)
class BcdResult:
    tau: float
    epsilon: float
    w_mat: np.ndarray
    w_bars: tuple
    ris: RisPhase
    objective: float        # min weighted average SINR
    objective_sum: float    # sum weighted average SINR
    objectives: tuple       # accepted outer-round objective values
    trace: tuple            # per-stage BcdTraceRow records
    n_iter: int
    converged: bool
    feasible: bool
    counts: dict
    report: object          # FeasibilityReport of the returned design


def _operating_point(ch, ris, tau, eps, cfg):
    snr = sensing_snr(ch, ris, cfg)
    return (detection_probability(tau, eps, snr, cfg),
            false_alarm_probability(tau, eps, cfg))


def _stage_row(i, stage, ch, w_mat, ris, tau, eps, cfg, rank1):
    p_d, p_f = _operating_point(ch, ris, tau, eps, cfg)
    eff = effective_channels(ch, ris)
    obj = ms_objectives(ch, w_mat, ris, tau, p_d, p_f, cfg, eff=eff)[0]
    _, bt = duty_weights(tau, p_d, p_f, cfg)
    rates = [su_rate(ch, w_mat, ris, tau, p_d, p_f, cfg, k, eff=eff)
             for k in range(ch.k_su)]
    interfs = [bt * pue_interference(ch, w_mat, ris, cfg, l, eff=eff)
               for l in range(ch.l_pu)]
    return BcdTraceRow(iter=i, stage=stage, objective=obj, pd=p_d, pf=p_f,
                       tau=tau, min_rate=min(rates, default=math.inf),
                       max_interf=max(interfs, default=0.0),
                       rank1_ratio_min=rank1)


def bcd(ch: ChannelSet, cfg: ScenarioConfig, seed: int,
        solver_tol: float = 1e-7, pin_tau: float | None = None) -> BcdResult:
    """Outer block rounds over sensing time, transmit beams, and phases.

    Stage updates are accepted only when they keep the true design
    feasible and do not reduce the true objective, so the reported
    objective sequence is nondecreasing by construction.  `pin_tau`
    freezes the sensing time and skips its refresh stage.
    """
    ris = RisPhase.random(ch.n_r, [seed, 0xA0])
    tau = cfg.t_total / 2.0 if pin_tau is None else float(pin_tau)
    eps = epsilon_for(cfg, tau)
    wsol = solve_w(ch, ris, tau, cfg, epsilon=eps, solver_tol=solver_tol)
    w_mat, w_bars = wsol.w_mat, wsol.w_bars
    rank1 = wsol.rank1_min
    counts = {"n_dt_bs": wsol.n_dt, "n_sca_bs": wsol.n_sca,
              "n_dt_ris": 0, "n_ao_ris": 0, "n_sca_ris": 0, "n_bcd": 0}

    def full_state_eval(tau_, eps_, w_):
        p_d, p_f = _operating_point(ch, ris, tau_, eps_, cfg)
        obj = ms_objectives(ch, w_, ris, tau_, p_d, p_f, cfg)[0]
        rep = p1_feasibility(ch, w_, ris, tau_, cfg, eps_)
        return obj, rep.feasible(), rep

    obj, feas, rep = full_state_eval(tau, eps, w_mat)
    rows = [_stage_row(0, "init", ch, w_mat, ris, tau, eps, cfg, rank1)]
    objectives = [obj]
    guard = lambda ref: 1e-12 * max(1.0, abs(ref))
    n_iter = 0
    converged = False
    for i in range(1, cfg.i_max + 1):
        n_iter = i
        counts["n_bcd"] = i
        prev_obj = obj
        # sensing-time refresh
        if pin_tau is None:
            try:
                tau_new = tau_search(ch, w_mat, ris, cfg, extra=(tau,))
                eps_new = epsilon_for(cfg, tau_new)
                obj_new, feas_new, rep_new = full_state_eval(tau_new, eps_new,
                                                             w_mat)
                if (feas_new and not feas) or \
                        (feas_new == feas and obj_new >= obj - guard(obj)):
                    tau, eps = tau_new, eps_new
                    obj, feas, rep = obj_new, feas_new, rep_new
            except InfeasibleDesignError:
                pass
            rows.append(_stage_row(i, "tau", ch, w_mat, ris, tau, eps, cfg,
                                   rank1))
        # transmit refresh
        try:
            wsol = solve_w(ch, ris, tau, cfg, epsilon=eps,
                           solver_tol=solver_tol)
            counts["n_dt_bs"] += wsol.n_dt
            counts["n_sca_bs"] += wsol.n_sca
            obj_new, feas_new, rep_new = full_state_eval(tau, eps, wsol.w_mat)
            if (feas_new and not feas) or \
                    (feas_new == feas and obj_new >= obj - guard(obj)):
                w_mat, w_bars = wsol.w_mat, wsol.w_bars
                obj, feas, rep = obj_new, feas_new, rep_new
                rank1 = min(rank1, wsol.rank1_min)
        except InfeasibleDesignError:
            pass
        rows.append(_stage_row(i, "beams", ch, w_mat, ris, tau, eps, cfg, rank1))
        # phase refresh
        psol = solve_phi(ch, w_mat, tau, cfg, ris0=ris, epsilon=eps,
                         seed=seed + 7919 * i, solver_tol=solver_tol)
        counts["n_dt_ris"] += psol.n_dt
        counts["n_ao_ris"] += psol.n_ao
        counts["n_sca_ris"] += psol.n_sca
        p_d, p_f = _operating_point(ch, psol.ris, tau, eps, cfg)
        obj_new = ms_objectives(ch, w_mat, psol.ris, tau, p_d, p_f, cfg)[0]
        rep_new = p1_feasibility(ch, w_mat, psol.ris, tau, cfg, eps)
        feas_new = rep_new.feasible()
        if (feas_new and not feas) or \
                (feas_new == feas and obj_new >= obj - guard(obj)):
            ris = psol.ris
            obj, feas, rep = obj_new, feas_new, rep_new
            rank1 = min(rank1, psol.rank1_ratio)
        rows.append(_stage_row(i, "ris", ch, w_mat, ris, tau, eps, cfg, rank1))
        objectives.append(obj)
        if abs(obj - prev_obj) / max(abs(prev_obj), 1e-12) < cfg.eps_tol:
            converged = True
            break
    obj_sum = ms_objectives(ch, w_mat, ris, tau, rep.p_d, rep.p_f, cfg)[1]
    return BcdResult(tau=tau, epsilon=eps, w_mat=w_mat, w_bars=w_bars,
                     ris=ris, objective=obj, objective_sum=obj_sum,
                     objectives=tuple(objectives), trace=tuple(rows),
                     n_iter=n_iter, converged=converged, feasible=feas,
                     counts=counts, report=rep)


# =====================================================================
# Arithmetic cost model
# =====================================================================


def per_level_counts(counts: dict) -> dict:
    """Convert the totals recorded by the block rounds into per-level
    factors (rounds of each nesting level per round of the one above)."""
    n_bcd = max(counts["n_bcd"], 1)
    n_dt_bs = counts["n_dt_bs"] / n_bcd
    n_dt_ris = counts["n_dt_ris"] / n_bcd
    n_ao = counts["n_ao_ris"] / max(counts["n_dt_ris"], 1)
    return {
        "n_bcd": counts["n_bcd"],
        "n_dt_bs": n_dt_bs,
        "n_sca_bs": counts["n_sca_bs"] / max(counts["n_dt_bs"], 1),
        "n_dt_ris": n_dt_ris,
        "n_ao_ris": n_ao,
        "n_sca_ris": counts["n_sca_ris"] / max(counts["n_ao_ris"], 1),
    }


def complexity_report(cfg: ScenarioConfig, counts: dict,
                      tol: float = 1e-7) -> dict:
    """Dominant-term arithmetic cost of the two conic stages and the
    outer rounds.  `counts` holds per-level iteration factors; use
    `per_level_counts` to derive them from recorded totals."""
    lg = math.log(1.0 / tol)
    mk2 = 2 * (cfg.m_ms + cfg.k_su) + cfg.l_pu + 1
    o_bs = (lg * counts["n_dt_bs"] * counts["n_sca_bs"]
            * max(cfg.n_b, mk2) ** 4 * math.sqrt(mk2))
    o_ris = (lg * counts["n_dt_ris"] * counts["n_ao_ris"] * counts["n_sca_ris"]
             * (cfg.n_r + cfg.m_ms + cfg.k_su + cfg.l_pu + 3) ** 4
             * math.sqrt(cfg.n_r + 1))
    return {"o_bs": o_bs, "o_ris": o_ris,
            "o_bcd": counts["n_bcd"] * (o_bs + o_ris)}
