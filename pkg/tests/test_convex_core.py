"""Dense conic solver: vectorization, oracles, rank-one recovery."""

import math

import numpy as np
import pytest

from crisac.convex_core import (
    ConicProblem,
    gaussian_randomization,
    hunvec,
    hvec,
    principal_rank1,
    psd_project,
)


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


# ------------------------------------------------------------------
# Hermitian vectorization
# ------------------------------------------------------------------


def test_hvec_round_trip_and_isometry():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5, 9):
        a = random_hermitian(rng, n)
        b = random_hermitian(rng, n)
        va, vb = hvec(a), hvec(b)
        assert va.shape == (n * n,)
        assert va.dtype.kind == "f"
        assert np.max(np.abs(hunvec(va, n) - a)) < 1e-14
        # orthonormal basis: coordinates preserve the trace inner product
        assert np.dot(va, vb) == pytest.approx(float(np.trace(a @ b).real),
                                               rel=1e-12, abs=1e-12)


def test_psd_project_matches_eigenvalue_clip():
    rng = np.random.default_rng(1)
    a = random_hermitian(rng, 6)
    p = psd_project(a)
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    clip = (v * np.clip(w, 0.0, None)) @ v.conj().T
    assert np.max(np.abs(p - clip)) < 1e-12
    assert np.min(np.linalg.eigvalsh(p)) > -1e-12
    spd = a @ a.conj().T + 6 * np.eye(6)
    assert np.max(np.abs(psd_project(spd) - 0.5 * (spd + spd.conj().T))) < 1e-12


def test_principal_rank1_recovery():
    rng = np.random.default_rng(2)
    v = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    a = np.outer(v, v.conj())
    x, ratio = principal_rank1(a)
    assert ratio == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(np.outer(x, x.conj()) - a)) < 1e-10
    u = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    u -= v * np.vdot(v, u) / np.vdot(v, v)
    v_n, u_n = v / np.linalg.norm(v), u / np.linalg.norm(u)
    mixed = 3.0 * np.outer(v_n, v_n.conj()) + 1.0 * np.outer(u_n, u_n.conj())
    x2, ratio2 = principal_rank1(mixed)
    assert ratio2 == pytest.approx(0.75, abs=1e-12)
    assert np.linalg.norm(x2) ** 2 == pytest.approx(3.0, rel=1e-12)
    with pytest.raises(ValueError):
        principal_rank1(-np.eye(3))


# ------------------------------------------------------------------
# conic solver oracles
# ------------------------------------------------------------------


@pytest.mark.parametrize("n,seed", [(2, 0), (3, 1), (4, 2), (6, 3)])
def test_solver_recovers_max_eigenvalue(n, seed):
    rng = np.random.default_rng(seed)
    c = random_hermitian(rng, n)
    prob = ConicProblem()
    prob.add_psd_var("x", n)
    prob.add_affine([("x", -c)], rhs=0.0, t_coeff=1.0, sense="<=", label="t<=trCX")
    prob.add_affine([("x", np.eye(n))], rhs=1.0, sense="==", label="trX=1")
    sol = prob.solve(tol=1e-9)
    lam = float(np.linalg.eigvalsh(c)[-1])
    assert sol.status == "optimal"
    assert sol.t == pytest.approx(lam, abs=1e-6)
    x = sol.variables["x"]
    assert float(np.trace(x).real) == pytest.approx(1.0, abs=1e-7)
    assert np.min(np.linalg.eigvalsh(x)) > -1e-9


def test_solver_unit_diagonal_oracle():
    # max Tr(RX) over PSD X with unit diagonal, n = 2:
    # X = [[1, z], [conj(z), 1]], |z| <= 1, optimum R11 + R22 + 2|R12|
    rng = np.random.default_rng(7)
    r = random_hermitian(rng, 2)
    prob = ConicProblem()
    prob.add_psd_var("x", 2)
    prob.fix_diagonal("x")
    prob.add_affine([("x", -r)], rhs=0.0, t_coeff=1.0, sense="<=")
    sol = prob.solve(tol=1e-9)
    expected = float(r[0, 0].real + r[1, 1].real + 2 * abs(r[0, 1]))
    assert sol.status == "optimal"
    assert sol.t == pytest.approx(expected, abs=1e-6)
    x = sol.variables["x"]
    assert np.allclose(np.diag(x).real, 1.0, atol=1e-7)


def test_solver_log_constraint_power_split():
    # max t s.t. log2(1+x1) + log2(1+x2) >= t, x1 + x2 <= p, xi >= 0:
    # symmetric optimum 2*log2(1 + p/2)
    p = 3.0
    one = np.ones((1, 1))
    prob = ConicProblem()
    prob.add_psd_var("x1", 1)
    prob.add_psd_var("x2", 1)
    prob.add_log_constraint(
        [(1.0, 1.0, [("x1", one)]), (1.0, 1.0, [("x2", one)])],
        t_coeff=-1.0)
    prob.add_affine([("x1", one), ("x2", one)], rhs=p, sense="<=")
    sol = prob.solve(tol=1e-9)
    assert sol.status == "optimal"
    assert sol.t == pytest.approx(2.0 * math.log2(1.0 + p / 2.0), abs=1e-6)
    assert float(sol.variables["x1"][0, 0].real) == pytest.approx(p / 2, abs=1e-4)


def test_solver_log_constraint_with_matrix_argument():
    # max t s.t. log2(1 + Tr(CX)) >= t, Tr(X) <= p: t* = log2(1 + p*lmax)
    rng = np.random.default_rng(11)
    n, p = 3, 2.0
    c = random_hermitian(rng, n)
    c = c @ c.conj().T                       # log coefficients must be PSD
    c /= np.linalg.eigvalsh(c)[-1]
    prob = ConicProblem()
    prob.add_psd_var("x", n)
    prob.add_log_constraint([(1.0, 1.0, [("x", c)])], t_coeff=-1.0)
    prob.add_affine([("x", np.eye(n))], rhs=p, sense="<=")
    sol = prob.solve(tol=1e-9)
    lam = float(np.linalg.eigvalsh(c)[-1])
    assert sol.t == pytest.approx(math.log2(1.0 + p * lam), abs=1e-6)


def test_solver_reports_infeasible():
    prob = ConicProblem()
    prob.add_psd_var("x", 2)
    prob.add_affine([("x", np.eye(2))], rhs=1.0, sense="<=")
    prob.add_affine([("x", np.eye(2))], rhs=2.0, sense=">=")
    prob.add_affine([], rhs=5.0, t_coeff=1.0, sense="<=")
    sol = prob.solve(tol=1e-8)
    assert sol.status == "infeasible"
    assert math.isnan(sol.t)


def test_solver_warm_start_consistency():
    rng = np.random.default_rng(5)
    c = random_hermitian(rng, 4)
    def build():
        prob = ConicProblem()
        prob.add_psd_var("x", 4)
        prob.add_affine([("x", -c)], rhs=0.0, t_coeff=1.0, sense="<=")
        prob.add_affine([("x", np.eye(4))], rhs=1.0, sense="==")
        return prob
    cold = build().solve(tol=1e-9)
    warm = build().solve(tol=1e-9, warm_start=cold.variables)
    assert warm.status == "optimal"
    assert warm.t == pytest.approx(cold.t, abs=1e-6)


def test_solver_rejects_unknown_sense_and_duplicate_var():
    prob = ConicProblem()
    prob.add_psd_var("x", 2)
    with pytest.raises(ValueError):
        prob.add_affine([("x", np.eye(2))], rhs=0.0, sense="!=")
    with pytest.raises(ValueError):
        prob.add_psd_var("x", 3)


# ------------------------------------------------------------------
# randomization
# ------------------------------------------------------------------


def test_gaussian_randomization_rank_one_exact():
    rng = np.random.default_rng(3)
    target = np.exp(1j * rng.uniform(0, 2 * np.pi, 6))
    vbar = np.concatenate([target, [1.0 + 0j]])
    xbar = np.outer(vbar, vbar.conj())

    def evaluator(phi):
        return True, -float(np.linalg.norm(phi - target))

    out = gaussian_randomization(xbar, 25, evaluator, seed=42)
    assert out.feasible
    assert out.n_candidates == 25
    assert out.n_feasible == 25
    # recovery is limited by eigh noise in the zero eigenvalues
    assert out.score == pytest.approx(0.0, abs=1e-6)
    assert np.max(np.abs(out.phi - target)) < 1e-6


def test_gaussian_randomization_extras_and_determinism():
    rng = np.random.default_rng(4)
    vbar = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    xbar = np.outer(vbar, vbar.conj()) + 0.5 * np.eye(5)
    golden = np.exp(1j * rng.uniform(0, 2 * np.pi, 4))

    def evaluator(phi):
        close = np.max(np.abs(phi - golden)) < 1e-12
        return True, 100.0 if close else -float(np.sum(np.abs(phi - golden)))

    a = gaussian_randomization(xbar, 30, evaluator, seed=9,
                               extra_candidates=(golden,))
    assert a.score == 100.0
    assert np.array_equal(a.phi, np.exp(1j * np.angle(golden)))
    assert a.n_candidates == 31
    b = gaussian_randomization(xbar, 30, evaluator, seed=9,
                               extra_candidates=(golden,))
    assert np.array_equal(a.phi, b.phi) and a.score == b.score


def test_gaussian_randomization_all_rejected_falls_back():
    xbar = np.eye(4)

    def evaluator(phi):
        return False, 123.0

    out = gaussian_randomization(xbar, 10, evaluator, seed=1)
    assert not out.feasible
    assert out.n_feasible == 0
    assert out.score == -math.inf
    assert out.phi is not None
    assert np.allclose(np.abs(out.phi), 1.0)
