"""Energy-detection statistics at the secondary base station.

The SBS listens for tau seconds (tau*f_s samples) and compares the average
received energy against a threshold epsilon.  False alarm and detection
probabilities follow the Gaussian approximation of the energy statistic;
the detection probability also admits an exponential lower bound built from
a squared deflection variable z, which is what the RIS design optimizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .channels import ChannelSet, RisPhase
from .scenario import ScenarioConfig


class DetectionRegimeError(ValueError):
    """Raised when the operating point gives no usable detection margin."""


def q_function(x):
    """Gaussian tail probability Q(x) = P(N(0,1) > x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0)) if np.ndim(x) \
        else 0.5 * math.erfc(float(x) / math.sqrt(2.0))


def _normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def q_inverse(p: float) -> float:
    """Inverse of q_function on (0, 1), safeguarded Newton iteration."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"q_inverse needs p in (0, 1), got {p}")
    lo, hi = -40.0, 40.0
    x = 0.0
    for _ in range(200):
        f = q_function(x) - p
        if f > 0.0:
            lo = x
        else:
            hi = x
        d = _normal_pdf(x)
        step = f / d if d > 0.0 else 0.0
        x_new = x + step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


# =====================================================================
# Detector operating point
# =====================================================================


@dataclass(frozen=True)
class SensingPoint:
    """One detector operating point."""

    tau: float       # sensing time [s]
    epsilon: float   # energy threshold [W]
    snr: float       # sensing SNR at the SBS
    p_d: float
    p_f: float


def sensing_snr(ch: ChannelSet, ris: RisPhase, cfg: ScenarioConfig) -> float:
    """Received primary-signal SNR at the SBS for the current RIS phases."""
    combined = ch.h_p2s + ch.h_s2r @ (ris.phi * ch.h_p2r)
    return cfg.p_pbs * float(np.vdot(combined, combined).real) / cfg.sigma2_sbs


def false_alarm_probability(tau: float, epsilon: float, cfg: ScenarioConfig) -> float:
    """P_f of the energy detector with threshold epsilon after tau seconds."""
    if tau <= 0.0:
        raise ValueError(f"sensing time must be positive, got {tau}")
    s2, nb = cfg.sigma2_sbs, cfg.n_b
    arg = (epsilon - s2 * nb) * math.sqrt(tau * cfg.f_s) / (s2 * math.sqrt(nb))
    return q_function(arg)


def detection_probability(tau: float, epsilon: float, snr: float,
                          cfg: ScenarioConfig) -> float:
    """P_d of the energy detector at the given sensing SNR."""
    if tau <= 0.0:
        raise ValueError(f"sensing time must be positive, got {tau}")
    if snr < 0.0:
        raise ValueError(f"SNR must be nonnegative, got {snr}")
    s2, nb = cfg.sigma2_sbs, cfg.n_b
    arg = (epsilon - s2 * (nb + snr)) * math.sqrt(tau * cfg.f_s) \
        / (s2 * math.sqrt(2.0 * snr + nb))
    return q_function(arg)


def calibrate_threshold(tau: float, p_f0: float, cfg: ScenarioConfig) -> float:
    """Threshold that meets the false-alarm target exactly at sensing time tau."""
    if tau <= 0.0:
        raise ValueError(f"sensing time must be positive, got {tau}")
    s2, nb = cfg.sigma2_sbs, cfg.n_b
    return s2 * (nb + q_inverse(p_f0) * math.sqrt(nb / (tau * cfg.f_s)))


def effective_epsilon(cfg: ScenarioConfig) -> float:
    """Scenario threshold: explicit value, or calibrated at tau = T/2."""
    if cfg.epsilon_det is not None:
        return cfg.epsilon_det
    return calibrate_threshold(cfg.t_total / 2.0, cfg.p_f0, cfg)


def sensing_point(tau: float, epsilon: float, snr: float,
                  cfg: ScenarioConfig) -> SensingPoint:
    return SensingPoint(tau=tau, epsilon=epsilon, snr=snr,
                        p_d=detection_probability(tau, epsilon, snr, cfg),
                        p_f=false_alarm_probability(tau, epsilon, cfg))


def duty_weights(tau: float, p_d: float, p_f: float, cfg: ScenarioConfig):
    """Average-throughput weights of the two transmit opportunities.

    b weights the idle-and-correct branch, b_tilde the busy-but-missed one.
    """
    pre = 1.0 - tau / cfg.t_total
    return pre * cfg.prob_h0 * (1.0 - p_f), pre * cfg.prob_h1 * (1.0 - p_d)


# =====================================================================
# Exponential detection bound and its deflection variable
# =====================================================================


def pd_bound_z(z) -> float:
    """Lower bound on P_d as a function of the squared deflection z >= 0."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0.0):
        raise ValueError("z must be nonnegative")
    val = 1.0 - np.exp(-z / 2.0) / 12.0 - np.exp(-2.0 * z / 3.0) / 4.0
    return float(val) if val.ndim == 0 else val


def z_min_for(p_d0: float) -> float:
    """Smallest z whose bound reaches p_d0; 0 when the bound already does."""
    if not 0.0 < p_d0 < 1.0:
        raise ValueError(f"p_d0 must lie in (0, 1), got {p_d0}")
    if pd_bound_z(0.0) >= p_d0:
        return 0.0
    lo, hi = 0.0, 1.0
    while pd_bound_z(hi) < p_d0:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError(f"detection target {p_d0} unreachable by the bound")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if pd_bound_z(mid) < p_d0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def sensing_lift(ch: ChannelSet) -> np.ndarray:
    """PSD matrix whose quadratic form in the augmented phase vector equals
    the received primary-signal energy ||h_p2s + H_s2r (phi o h_p2r)||^2."""
    u = ch.h_s2r * ch.h_p2r[None, :]                 # H_s2r diag(h_p2r)
    v = np.concatenate([u, ch.h_p2s[:, None]], axis=1)
    e_hat = v.conj().T @ v
    return 0.5 * (e_hat + e_hat.conj().T)


def z_of_phi(phibar: np.ndarray, ch: ChannelSet, tau: float, epsilon: float,
             cfg: ScenarioConfig) -> float:
    """Squared deflection of the detector for a lifted RIS state.

    Requires the favorable regime (threshold below the busy-hypothesis mean);
    otherwise the bound machinery does not apply and a DetectionRegimeError
    is raised.
    """
    if tau <= 0.0:
        raise ValueError(f"sensing time must be positive, got {tau}")
    e_hat = sensing_lift(ch)
    tr = float(np.trace(e_hat @ phibar).real)
    snr = cfg.p_pbs * max(tr, 0.0) / cfg.sigma2_sbs
    s2, nb = cfg.sigma2_sbs, cfg.n_b
    g = (epsilon - s2 * (nb + snr)) * math.sqrt(tau * cfg.f_s) \
        / (s2 * math.sqrt(2.0 * snr + nb))
    if g > 0.0:
        raise DetectionRegimeError(
            f"threshold sits above the busy-hypothesis mean (margin {g:.3e}); "
            "detection bound undefined at this operating point")
    return g * g


def roc_curve(ch: ChannelSet, ris: RisPhase, tau: float, cfg: ScenarioConfig,
              pf_grid) -> np.ndarray:
    """Detector operating curve: rows (p_f, p_d, 1 - p_d).

    Each false-alarm target gets its own calibrated threshold.
    """
    snr = sensing_snr(ch, ris, cfg)
    rows = []
    for pf in np.asarray(pf_grid, dtype=float):
        eps = calibrate_threshold(tau, float(pf), cfg)
        pd = detection_probability(tau, eps, snr, cfg)
        rows.append((float(pf), pd, 1.0 - pd))
    return np.asarray(rows)
