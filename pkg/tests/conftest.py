"""Shared fixtures: reduced-size scenarios and instance builders.

The desk scenario is the reduced-dimension configuration used by the
acceptance suite: it keeps every structural element of the full setup
(two MSs, two SUEs, two PUEs, a RIS) but shrinks the arrays so a full
joint design runs in seconds.  The micro scenario is smaller still and
is meant for exercising solver code paths, not for performance claims.
"""

import numpy as np
import pytest

from crisac.channels import RisPhase, generate_channels
from crisac.scenario import dbm_to_watt, make_scenario, place_nodes

DESK = dict(
    n_b=8, n_r=16, n_m=4, m_ms=2, k_su=2, l_pu=2,
    r_k=(0.5, 0.5), p_pbs=dbm_to_watt(33.0),
)

MICRO = dict(
    n_b=4, n_r=4, n_m=2, m_ms=1, k_su=1, l_pu=1,
    r_k=(0.3,), p_pbs=dbm_to_watt(33.0), tau_grid=40, n_rand=60,
)


def desk_config(**overrides):
    merged = {**DESK, **overrides}
    return make_scenario(**merged)


def micro_config(**overrides):
    merged = {**MICRO, **overrides}
    return make_scenario(**merged)


def instance(cfg, seed):
    """(positions, channels) for one seeded realization."""
    positions = place_nodes(cfg, seed)
    return positions, generate_channels(cfg, positions, seed)


def random_phase(cfg, seed, salt=0xC1):
    return RisPhase.random(cfg.n_r, [seed, salt])


@pytest.fixture(scope="session")
def desk_cfg():
    return desk_config()


@pytest.fixture(scope="session")
def micro_cfg():
    return micro_config()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


# -- acceptance reporting ---------------------------------------------

ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
