"""Channel realizations and RIS composition.

Two channel descriptions coexist.  The statistical one (ChannelSet) drives
SINRs, rates and detection: direct links are Rayleigh with exponent
alpha_direct, RIS-assisted links are Rician with exponent alpha_ris and a
steering-structured line-of-sight part.  The geometric one (GeometricLink)
is a two-path model of a single mobile station used by the localization
error chain: one direct path and one RIS-reflected path, each with a bearing
and a complex gain.

Uniform linear arrays with half-wavelength spacing everywhere; element i of
a steering vector is exp(-j*pi*i*sin(theta)).  Bearings use
arctan(|dy|/|dx|), which makes the angle of a link the same seen from either
end; vertical geometries (dx = 0) are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields

import numpy as np

from .scenario import ScenarioConfig, place_nodes

# =====================================================================
# Array geometry
# =====================================================================


def steering_vector(theta: float, n: int) -> np.ndarray:
    """ULA steering vector, entry i = exp(-j*pi*i*sin(theta))."""
    idx = np.arange(n)
    return np.exp(-1j * np.pi * idx * np.sin(theta))


def steering_derivative(theta: float, n: int) -> np.ndarray:
    """Elementwise derivative of steering_vector with respect to theta."""
    idx = np.arange(n)
    return steering_vector(theta, n) * (-1j * np.pi * idx * np.cos(theta))


def distance(p, q) -> float:
    d = math.hypot(q[0] - p[0], q[1] - p[1])
    if d == 0.0:
        raise ValueError(f"coincident nodes at {tuple(p)}")
    return d


def bearing(p, q) -> float:
    """Link angle arctan(|dy|/|dx|), identical from both ends."""
    dx = abs(q[0] - p[0])
    dy = abs(q[1] - p[1])
    if dx == 0.0:
        raise ValueError(f"vertical geometry between {tuple(p)} and {tuple(q)}: "
                         "bearing arctan(|dy|/|dx|) is undefined")
    return math.atan(dy / dx)


def path_gain(d: float, alpha: float, g0: float) -> float:
    """Distance power law g0 * d^-alpha."""
    if d <= 0.0:
        raise ValueError(f"distance must be positive, got {d}")
    return g0 * d ** (-alpha)


# =====================================================================
# RIS phase state
# =====================================================================


@dataclass(frozen=True)
class RisPhase:
    """Unit-modulus reflection coefficients of the RIS."""

    phi: np.ndarray  # (N_R,) complex, |phi_n| = 1

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=complex)
        object.__setattr__(self, "phi", phi)
        if phi.ndim != 1 or phi.size < 1:
            raise ValueError("phi must be a nonempty vector")
        err = np.max(np.abs(np.abs(phi) - 1.0))
        if err > 1e-9:
            raise ValueError(f"phi entries must be unit modulus, worst deviation {err:.3e}")

    @property
    def n(self) -> int:
        return self.phi.size

    def diag(self) -> np.ndarray:
        """The N_R x N_R diagonal reflection matrix."""
        return np.diag(self.phi)

    def augmented(self) -> np.ndarray:
        """(phi^T, 1)^T, the vector used by the lifted RIS parametrization."""
        return np.concatenate([self.phi, [1.0 + 0.0j]])

    def lifted(self) -> np.ndarray:
        """Rank-one lifted matrix of the augmented phase vector."""
        v = self.augmented()
        return np.outer(v, v.conj())

    @classmethod
    def from_angles(cls, angles) -> "RisPhase":
        return cls(np.exp(1j * np.asarray(angles, dtype=float)))

    @classmethod
    def ones(cls, n: int) -> "RisPhase":
        return cls(np.ones(n, dtype=complex))

    @classmethod
    def random(cls, n: int, seed) -> "RisPhase":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls.from_angles(rng.uniform(0.0, 2.0 * np.pi, size=n))


# =====================================================================
# Statistical channel set
# =====================================================================


@dataclass(frozen=True)
class ChannelSet:
    """One static realization of every link in the cell."""

    h_p2s: np.ndarray    # (N_B,)          PBS -> SBS
    h_s2su: np.ndarray   # (K, N_B)        SBS -> SU k
    h_s2pu: np.ndarray   # (L, N_B)        SBS -> PU l
    h_s2r: np.ndarray    # (N_B, N_R)      SBS -> RIS
    h_s2ms: np.ndarray   # (M, N_B, N_M)   SBS -> MS m
    h_p2r: np.ndarray    # (N_R,)          PBS -> RIS
    h_p2ms: np.ndarray   # (M, N_M)        PBS -> MS m
    h_p2su: np.ndarray   # (K,)            PBS -> SU k
    h_r2ms: np.ndarray   # (M, N_R, N_M)   RIS -> MS m
    h_r2su: np.ndarray   # (K, N_R)        RIS -> SU k
    h_r2pu: np.ndarray   # (L, N_R)        RIS -> PU l

    @property
    def n_b(self) -> int:
        return self.h_p2s.size

    @property
    def n_r(self) -> int:
        return self.h_p2r.size

    @property
    def n_m(self) -> int:
        return self.h_s2ms.shape[2]

    @property
    def m_ms(self) -> int:
        return self.h_s2ms.shape[0]

    @property
    def k_su(self) -> int:
        return self.h_s2su.shape[0]

    @property
    def l_pu(self) -> int:
        return self.h_s2pu.shape[0]


def _rayleigh(rng: np.random.Generator, shape, gain: float) -> np.ndarray:
    """Zero-mean complex Gaussian entries with E|h|^2 = gain."""
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return math.sqrt(gain / 2.0) * z

def _rician(rng: np.random.Generator, los: np.ndarray, gain: float, k: float) -> np.ndarray:
    """Rician fading around a unit-modulus LoS structure, E|h_ij|^2 = gain."""
    if math.isinf(k):
        return math.sqrt(gain) * los
    nlos = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / math.sqrt(2.0)
    return math.sqrt(gain) * (math.sqrt(k / (k + 1.0)) * los + math.sqrt(1.0 / (k + 1.0)) * nlos)


def generate_channels(cfg: ScenarioConfig, positions: dict, seed: int) -> ChannelSet:
    """Draw one channel realization, deterministic in (cfg, positions, seed).

    positions is the dict produced by place_nodes.  Draw order is fixed:
    direct links first (PBS->SBS, SBS->SU, SBS->PU, SBS->MS, PBS->MS,
    PBS->SU), then RIS-assisted links (SBS->RIS, PBS->RIS, RIS->MS, RIS->SU,
    RIS->PU).
    """
    rng = np.random.default_rng([int(seed), 0xC4])
    g0, a_d, a_r, kf = cfg.g0_ref, cfg.alpha_direct, cfg.alpha_ris, cfg.rician_k
    sbs, pbs, ris = cfg.pos_sbs, cfg.pos_pbs, cfg.pos_ris
    ms, su, pu = positions["ms"], positions["su"], positions["pu"]

    def ray(shape, p, q):
        return _rayleigh(rng, shape, path_gain(distance(p, q), a_d, g0))

    def ric(los, p, q):
        return _rician(rng, los, path_gain(distance(p, q), a_r, g0), kf)

    h_p2s = ray((cfg.n_b,), pbs, sbs)
    h_s2su = np.stack([ray((cfg.n_b,), sbs, su[k]) for k in range(cfg.k_su)]) \
        if cfg.k_su else np.zeros((0, cfg.n_b), complex)
    h_s2pu = np.stack([ray((cfg.n_b,), sbs, pu[l]) for l in range(cfg.l_pu)]) \
        if cfg.l_pu else np.zeros((0, cfg.n_b), complex)
    h_s2ms = np.stack([ray((cfg.n_b, cfg.n_m), sbs, ms[m]) for m in range(cfg.m_ms)])
    h_p2ms = np.stack([ray((cfg.n_m,), pbs, ms[m]) for m in range(cfg.m_ms)])
    h_p2su = np.array([ray((), pbs, su[k]) for k in range(cfg.k_su)], dtype=complex)

    th_sr = bearing(sbs, ris)
    h_s2r = ric(np.outer(steering_vector(th_sr, cfg.n_b), steering_vector(th_sr, cfg.n_r)),
                sbs, ris)
    th_pr = bearing(pbs, ris)
    h_p2r = ric(steering_vector(th_pr, cfg.n_r), pbs, ris)
    h_r2ms = np.stack([
        ric(np.outer(steering_vector(bearing(ris, ms[m]), cfg.n_r),
                     steering_vector(bearing(ris, ms[m]), cfg.n_m)), ris, ms[m])
        for m in range(cfg.m_ms)])
    h_r2su = np.stack([ric(steering_vector(bearing(ris, su[k]), cfg.n_r), ris, su[k])
                       for k in range(cfg.k_su)]) \
        if cfg.k_su else np.zeros((0, cfg.n_r), complex)
    h_r2pu = np.stack([ric(steering_vector(bearing(ris, pu[l]), cfg.n_r), ris, pu[l])
                       for l in range(cfg.l_pu)]) \
        if cfg.l_pu else np.zeros((0, cfg.n_r), complex)

    return ChannelSet(h_p2s=h_p2s, h_s2su=h_s2su, h_s2pu=h_s2pu, h_s2r=h_s2r,
                      h_s2ms=h_s2ms, h_p2r=h_p2r, h_p2ms=h_p2ms, h_p2su=h_p2su,
                      h_r2ms=h_r2ms, h_r2su=h_r2su, h_r2pu=h_r2pu)


def zero_ris_links(ch: ChannelSet) -> ChannelSet:
    """Copy of the channel set with every RIS-assisted link zeroed."""
    return ChannelSet(
        h_p2s=ch.h_p2s, h_s2su=ch.h_s2su, h_s2pu=ch.h_s2pu,
        h_s2r=np.zeros_like(ch.h_s2r), h_s2ms=ch.h_s2ms,
        h_p2r=np.zeros_like(ch.h_p2r), h_p2ms=ch.h_p2ms, h_p2su=ch.h_p2su,
        h_r2ms=np.zeros_like(ch.h_r2ms), h_r2su=np.zeros_like(ch.h_r2su),
        h_r2pu=np.zeros_like(ch.h_r2pu))


# =====================================================================
# Composed downlink channels for a given RIS state
# =====================================================================


@dataclass(frozen=True)
class EffectiveChannels:
    """Downlink channels with the RIS folded in."""

    g_ms: np.ndarray   # (M, N_M, N_B)  SBS -> MS m including reflection
    g_su: np.ndarray   # (K, N_B)       conjugated SBS -> SU row channels
    g_pu: np.ndarray   # (L, N_B)       conjugated SBS -> PU row channels


def effective_channels(ch: ChannelSet, ris: RisPhase) -> EffectiveChannels:
    """Compose direct and reflected links for the current RIS phases.

    The MS matrix is G_m = H_r2ms^T Phi H_s2r^T + H_s2ms^T.  The user rows
    are stored conjugated so that |row . w|^2 = Tr(g g^H w w^H) holds for
    the lifted beams.
    """
    phi = ris.phi
    if phi.size != ch.n_r:
        raise ValueError(f"RIS has {phi.size} phases but channels expect {ch.n_r}")
    refl_t = phi[:, None] * ch.h_s2r.T                     # Phi H_s2r^T, (N_R, N_B)
    g_ms = np.stack([ch.h_r2ms[m].T @ refl_t + ch.h_s2ms[m].T
                     for m in range(ch.m_ms)]) \
        if ch.m_ms else np.zeros((0, ch.n_m, ch.n_b), complex)
    g_su = np.conj(ch.h_s2su + ch.h_r2su @ refl_t) \
        if ch.k_su else np.zeros((0, ch.n_b), complex)
    g_pu = np.conj(ch.h_s2pu + ch.h_r2pu @ refl_t) \
        if ch.l_pu else np.zeros((0, ch.n_b), complex)
    return EffectiveChannels(g_ms=g_ms, g_su=g_su, g_pu=g_pu)


# =====================================================================
# Geometric two-path model of one mobile station
# =====================================================================


@dataclass(frozen=True)
class GeometricLink:
    """Two-path parametrization of one MS used for localization accuracy."""

    theta_d: float        # direct-path bearing SBS <-> MS
    theta_d_dep: float    # departure angle of the direct path at the SBS
    theta_r: float        # reflected-path bearing RIS <-> MS
    theta_r_dep: float    # departure angle of the reflected path at the SBS
    h_d: complex          # complex gain of the direct path
    h_r: complex          # complex gain of the cascaded reflected path
    ms_pos: tuple         # (x, y) of the MS


def geometric_ms_link(cfg: ScenarioConfig, ms_index: int, seed: int,
                      positions: dict | None = None) -> GeometricLink:
    """Build the two-path model for MS ms_index.

    Bearings come from the node geometry; gain magnitudes follow the
    path-gain law (direct exponent for the direct path, product of the two
    RIS-hop gains for the reflected path); gain phases are uniform and
    deterministic in (seed, ms_index).
    """
    if positions is None:
        positions = place_nodes(cfg, seed)
    if not 0 <= ms_index < cfg.m_ms:
        raise ValueError(f"ms_index {ms_index} out of range for {cfg.m_ms} stations")
    ms = tuple(positions["ms"][ms_index])
    sbs, ris = cfg.pos_sbs, cfg.pos_ris

    theta_d = bearing(sbs, ms)
    theta_r = bearing(ris, ms)
    theta_r_dep = bearing(sbs, ris)

    g_d = path_gain(distance(sbs, ms), cfg.alpha_direct, cfg.g0_ref)
    g_r = path_gain(distance(sbs, ris), cfg.alpha_ris, cfg.g0_ref) \
        * path_gain(distance(ris, ms), cfg.alpha_ris, cfg.g0_ref)

    rng = np.random.default_rng([int(seed), 0x6E, int(ms_index)])
    ph_d, ph_r = rng.uniform(0.0, 2.0 * np.pi, size=2)
    return GeometricLink(theta_d=theta_d, theta_d_dep=theta_d,
                         theta_r=theta_r, theta_r_dep=theta_r_dep,
                         h_d=math.sqrt(g_d) * np.exp(1j * ph_d),
                         h_r=math.sqrt(g_r) * np.exp(1j * ph_r),
                         ms_pos=ms)


# =====================================================================
# Channel dump for cross-implementation comparison
# =====================================================================


def channels_to_document(ch: ChannelSet) -> str:
    """JSON text with each channel as shape plus interleaved re/im floats."""
    out = {}
    for f in fields(ch):
        arr = np.asarray(getattr(ch, f.name), dtype=complex)
        flat = np.empty(2 * arr.size)
        flat[0::2] = arr.real.ravel()
        flat[1::2] = arr.imag.ravel()
        out[f.name] = {"shape": list(arr.shape), "ri": flat.tolist()}
    return json.dumps(out)


def dump_channels(ch: ChannelSet, path: str):
    with open(path, "w") as fh:
        fh.write(channels_to_document(ch))


def load_channels(document: str) -> ChannelSet:
    """Inverse of channels_to_document."""
    data = json.loads(document)
    kwargs = {}
    for name, entry in data.items():
        flat = np.asarray(entry["ri"], dtype=float)
        arr = (flat[0::2] + 1j * flat[1::2]).reshape(entry["shape"])
        kwargs[name] = arr
    return ChannelSet(**kwargs)
