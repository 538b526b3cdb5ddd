"""Scenario configuration and node placement.

A scenario bundles every quantity the pipeline needs: array sizes, node
geometry, powers, noise levels, sensing targets, channel-model parameters and
iteration caps.  Scenario files are flat JSON documents whose keys equal the
dataclass field names; power-like entries live in dBm on disk and in watts on
the config object.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

# Fields stored in watts internally but written to disk in dBm.
_DBM_FIELDS = ("p_sbs", "p_pbs", "sigma2_sbs", "sigma2_ms", "sigma2_su")
# Per-entity tuple fields and the count field that sizes them.
_TUPLE_FIELDS = {"lambda_m": "m_ms", "r_k": "k_su", "gamma_l0": "l_pu"}
_POSITION_FIELDS = ("pos_sbs", "pos_pbs", "pos_ris", "cluster_ms", "cluster_su", "cluster_pu")
# gamma_l0 is a per-PU power threshold, also dBm on disk.
_DBM_TUPLE_FIELDS = ("gamma_l0",)


def dbm_to_watt(x: float) -> float:
    """Convert dBm to watts."""
    return 10.0 ** ((x - 30.0) / 10.0)


def watt_to_dbm(x: float) -> float:
    """Convert watts to dBm."""
    if x <= 0.0:
        raise ValueError(f"power must be positive to express in dBm, got {x}")
    return 10.0 * math.log10(x) + 30.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one simulation scenario.

    Powers and noise variances are linear watts here; serialization converts
    them to dBm.  Tuple fields hold one entry per mobile station, secondary
    user, or primary user respectively.
    """

    # --- array sizes -----------------------------------------------------
    n_b: int = 16      # SBS antennas
    n_r: int = 32      # RIS elements
    n_m: int = 6       # MS antennas
    m_ms: int = 2      # mobile stations (sensing targets)
    k_su: int = 2      # secondary users
    l_pu: int = 2      # primary users

    # --- geometry [m] ----------------------------------------------------
    pos_sbs: tuple = (0.0, 50.0)
    pos_pbs: tuple = (0.0, -50.0)
    pos_ris: tuple = (40.0, 40.0)
    cluster_ms: tuple = (70.0, 30.0)
    cluster_su: tuple = (25.0, 50.0)
    cluster_pu: tuple = (70.0, -30.0)
    cluster_radius: float = 5.0

    # --- powers and noise [W] -------------------------------------------
    p_sbs: float = 3.1622776601683795       # 35 dBm
    p_pbs: float = 3.1622776601683795       # 35 dBm
    sigma2_sbs: float = 1e-9                # -60 dBm
    sigma2_ms: float = 1e-9                 # -60 dBm
    sigma2_su: float = 1e-9                 # -60 dBm

    # --- occupancy prior -------------------------------------------------
    prob_h0: float = 0.8
    prob_h1: float = 0.2

    # --- frame and sampling ----------------------------------------------
    f_c: float = 3e9        # carrier [Hz]
    f_s: float = 6e6        # sensing sample rate [Hz]
    t_total: float = 0.01   # frame length [s]

    # --- per-entity weights and targets ----------------------------------
    lambda_m: tuple = (0.5, 0.5)    # PEB weights, one per MS
    r_k: tuple = (2.0, 2.0)         # rate targets [bit/s/Hz], one per SU
    gamma_l0: tuple = (1e-4, 1e-4)  # interference caps [W], one per PU (-10 dBm)

    # --- sensing targets -------------------------------------------------
    p_d0: float = 0.9
    p_f0: float = 0.1
    epsilon_det: float | None = None  # detection threshold; None = calibrate

    # --- channel model ---------------------------------------------------
    alpha_ris: float = 2.2      # path-loss exponent, RIS-assisted links
    alpha_direct: float = 4.0   # path-loss exponent, direct links
    g0_ref: float = 1e-3        # reference gain at 1 m (-30 dB)
    rician_k: float = 10.0      # Rician factor for RIS-assisted links

    # --- algorithm knobs -------------------------------------------------
    eps_tol: float = 0.01   # relative convergence tolerance
    i_max: int = 15         # outer (Dinkelbach / block) iteration cap
    j_max: int = 10         # middle (SCA / AO) iteration cap
    k_max: int = 10         # inner SCA iteration cap
    tau_grid: int = 200     # sensing-time grid points
    z_grid: int = 100       # detection-bound grid points
    n_rand: int = 200       # Gaussian randomization samples

    def __post_init__(self):
        _validate(self)

    @property
    def prior(self) -> tuple:
        return (self.prob_h0, self.prob_h1)


def _err(field: str, msg: str):
    raise ValueError(f"scenario field '{field}': {msg}")


def _validate(cfg: ScenarioConfig):
    for f in ("n_b", "n_r", "n_m", "m_ms"):
        v = getattr(cfg, f)
        if not isinstance(v, int) or v < 1:
            _err(f, f"must be an integer >= 1, got {v!r}")
    for f in ("k_su", "l_pu"):
        v = getattr(cfg, f)
        if not isinstance(v, int) or v < 0:
            _err(f, f"must be an integer >= 0, got {v!r}")
    for f in _POSITION_FIELDS:
        v = getattr(cfg, f)
        if len(v) != 2 or not all(math.isfinite(float(c)) for c in v):
            _err(f, f"must be a finite (x, y) pair, got {v!r}")
    for f in ("p_sbs", "p_pbs", "sigma2_sbs", "sigma2_ms", "sigma2_su",
              "f_c", "f_s", "t_total", "g0_ref", "alpha_ris", "alpha_direct",
              "eps_tol"):
        v = getattr(cfg, f)
        if not v > 0:
            _err(f, f"must be positive, got {v!r}")
    if cfg.cluster_radius < 0:
        _err("cluster_radius", f"must be >= 0, got {cfg.cluster_radius!r}")
    if cfg.rician_k < 0:
        _err("rician_k", f"must be >= 0 (inf allowed), got {cfg.rician_k!r}")
    for f in ("prob_h0", "prob_h1"):
        v = getattr(cfg, f)
        if not 0.0 < v < 1.0:
            _err(f, f"must lie in (0, 1), got {v!r}")
    if abs(cfg.prob_h0 + cfg.prob_h1 - 1.0) > 1e-12:
        _err("prob_h0", f"prob_h0 + prob_h1 must equal 1, got {cfg.prob_h0 + cfg.prob_h1!r}")
    if not (0.0 < cfg.p_f0 < cfg.p_d0 < 1.0):
        _err("p_f0", f"need 0 < p_f0 < p_d0 < 1, got p_f0={cfg.p_f0!r}, p_d0={cfg.p_d0!r}")
    if cfg.epsilon_det is not None and not cfg.epsilon_det > 0:
        _err("epsilon_det", f"must be positive or None, got {cfg.epsilon_det!r}")
    for f, count_field in _TUPLE_FIELDS.items():
        v = getattr(cfg, f)
        n = getattr(cfg, count_field)
        if len(v) != n:
            _err(f, f"needs {n} entries (one per {count_field}), got {len(v)}")
        lo = 0.0 if f == "r_k" else None
        for x in v:
            if not math.isfinite(float(x)):
                _err(f, f"entries must be finite, got {x!r}")
            if lo is None and not x > 0:
                _err(f, f"entries must be positive, got {x!r}")
            if lo is not None and x < lo:
                _err(f, f"entries must be >= 0, got {x!r}")
    for f in ("i_max", "j_max", "k_max", "tau_grid", "z_grid", "n_rand"):
        v = getattr(cfg, f)
        if not isinstance(v, int) or v < 1:
            _err(f, f"must be an integer >= 1, got {v!r}")


def default_scenario() -> ScenarioConfig:
    """The reference scenario (all defaults)."""
    return ScenarioConfig()


def _coerce(field: str, raw, counts: dict):
    """Convert one JSON value to its config representation."""
    if field in _POSITION_FIELDS:
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            _err(field, f"must be an [x, y] pair, got {raw!r}")
        return (float(raw[0]), float(raw[1]))
    if field in _TUPLE_FIELDS:
        n = counts[_TUPLE_FIELDS[field]]
        vals = list(raw) if isinstance(raw, (list, tuple)) else [raw] * n
        vals = [float(v) for v in vals]
        if field in _DBM_TUPLE_FIELDS:
            vals = [dbm_to_watt(v) for v in vals]
        return tuple(vals)
    if field in _DBM_FIELDS:
        return dbm_to_watt(float(raw))
    if field == "epsilon_det":
        return None if raw is None else float(raw)
    default = getattr(ScenarioConfig, field)
    if isinstance(default, bool):
        return bool(raw)
    if isinstance(default, int):
        if isinstance(raw, float) and not raw.is_integer():
            _err(field, f"must be an integer, got {raw!r}")
        return int(raw)
    return float(raw)


def load_scenario(document: str | dict) -> ScenarioConfig:
    """Build a config from a JSON document (text or parsed dict).

    Unknown keys are rejected; omitted keys fall back to defaults.  Power
    entries (p_sbs, p_pbs, sigma2_*, gamma_l0) are interpreted as dBm.
    """
    data = json.loads(document) if isinstance(document, str) else dict(document)
    if not isinstance(data, dict):
        raise ValueError("scenario document must be a JSON object")
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown scenario keys: {unknown}")
    counts = {f: int(data.get(f, getattr(ScenarioConfig, f)))
              for f in ("m_ms", "k_su", "l_pu")}
    kwargs = {k: _coerce(k, v, counts) for k, v in data.items()}
    _resize_tuple_defaults(kwargs, counts)
    return ScenarioConfig(**kwargs)


def _resize_tuple_defaults(kwargs: dict, counts: dict):
    """Broadcast omitted per-entity tuples when the entity count changed."""
    for f, count_field in _TUPLE_FIELDS.items():
        n = counts[count_field]
        if f not in kwargs:
            default = getattr(ScenarioConfig, f)
            if len(default) != n:
                fill = default[0] if default else 1.0
                kwargs[f] = (fill,) * n


def make_scenario(**overrides) -> ScenarioConfig:
    """ScenarioConfig with overrides, resizing per-entity tuples as needed.

    Overrides are internal-unit values (watts), unlike load_scenario.
    """
    counts = {f: int(overrides.get(f, getattr(ScenarioConfig, f)))
              for f in ("m_ms", "k_su", "l_pu")}
    kwargs = dict(overrides)
    for f in _TUPLE_FIELDS:
        if f in kwargs and not isinstance(kwargs[f], tuple):
            v = kwargs[f]
            kwargs[f] = tuple(v) if isinstance(v, (list, np.ndarray)) else (float(v),) * counts[_TUPLE_FIELDS[f]]
    _resize_tuple_defaults(kwargs, counts)
    return ScenarioConfig(**kwargs)


def serialize_scenario(cfg: ScenarioConfig) -> str:
    """Inverse of load_scenario: JSON text with powers back in dBm."""
    out = {}
    for f in dataclasses.fields(ScenarioConfig):
        v = getattr(cfg, f.name)
        if f.name in _DBM_FIELDS:
            v = watt_to_dbm(v)
        elif f.name in _DBM_TUPLE_FIELDS:
            v = [watt_to_dbm(x) for x in v]
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return json.dumps(out, indent=2, sort_keys=True)


def config_hash(cfg: ScenarioConfig) -> str:
    """Stable hash of the internal (watt-level) field values."""
    payload = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(ScenarioConfig)}
    blob = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()


def place_nodes(cfg: ScenarioConfig, seed: int) -> dict:
    """Draw MS/SU/PU positions uniformly in their cluster disks.

    Returns {'ms': (M,2), 'su': (K,2), 'pu': (L,2)} float arrays.  The draw
    is deterministic in (cfg, seed); entities sample in the order ms, su, pu.
    """
    rng = np.random.default_rng([int(seed), 0x5C])
    out = {}
    for key, center, count in (("ms", cfg.cluster_ms, cfg.m_ms),
                               ("su", cfg.cluster_su, cfg.k_su),
                               ("pu", cfg.cluster_pu, cfg.l_pu)):
        # Uniform over the disk: radius scales with sqrt of the uniform draw.
        r = cfg.cluster_radius * np.sqrt(rng.uniform(size=count))
        ang = rng.uniform(0.0, 2.0 * np.pi, size=count)
        pts = np.stack([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)], axis=1)
        out[key] = pts
    return out
