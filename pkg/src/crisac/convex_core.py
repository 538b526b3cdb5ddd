"""Dense conic solver for the lifted subproblems, plus rank-one recovery.

The problem class is small and fixed: maximize a scalar t over Hermitian
positive semidefinite matrix variables subject to
  * affine inequalities / equalities in Re-trace functionals and t,
  * concave-log constraints  sum_j beta_j log2(a_j + <A_j, X>) >= affine,
  * fixed unit diagonals.
Everything is solved with a standard two-phase log-barrier method: damped
Newton steps on the equality-constrained centering problem, a geometric
barrier schedule, and a feasibility phase that relaxes every inequality by
one scalar.  No external solver is involved; the only dependencies are
dense linear algebra.

Matrix variables are parametrized by an orthonormal real basis of the
Hermitian space (hvec), which turns every Re-trace functional into a real
dot product and keeps the Newton systems symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

_LN2 = math.log(2.0)
_SQRT2 = math.sqrt(2.0)


# =====================================================================
# Hermitian vectorization
# =====================================================================


def _upper_indices(n: int):
    iu = np.triu_indices(n, k=1)
    return iu


def hvec(a: np.ndarray) -> np.ndarray:
    """Orthonormal real coordinates of a Hermitian matrix.

    Layout: n diagonal entries, then sqrt(2)*Re of the strict upper
    triangle (row-major), then sqrt(2)*Im of the same entries.  Satisfies
    hvec(A) . hvec(B) = Re Tr(A B) for Hermitian A, B.
    """
    a = np.asarray(a)
    n = a.shape[0]
    iu = _upper_indices(n)
    up = a[iu]
    return np.concatenate([a.diagonal().real, _SQRT2 * up.real, _SQRT2 * up.imag])


def hunvec(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of hvec."""
    v = np.asarray(v, dtype=float)
    if v.size != n * n:
        raise ValueError(f"coordinate vector has size {v.size}, expected {n * n}")
    out = np.zeros((n, n), dtype=complex)
    np.fill_diagonal(out, v[:n])
    m = n * (n - 1) // 2
    iu = _upper_indices(n)
    up = (v[n:n + m] + 1j * v[n + m:]) / _SQRT2
    out[iu] = up
    out[(iu[1], iu[0])] = up.conj()
    return out


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


_BASIS_CACHE: dict = {}


def _basis_matrix(n: int) -> scipy.sparse.csr_matrix:
    """Sparse (n^2 x n^2) map from hvec coordinates to row-major vec."""
    if n in _BASIS_CACHE:
        return _BASIS_CACHE[n]
    rows, cols, vals = [], [], []
    for i in range(n):
        rows.append(i * n + i)
        cols.append(i)
        vals.append(1.0 + 0.0j)
    m = n * (n - 1) // 2
    iu = _upper_indices(n)
    for p, (i, j) in enumerate(zip(iu[0], iu[1])):
        rows += [i * n + j, j * n + i]
        cols += [n + p, n + p]
        vals += [1.0 / _SQRT2, 1.0 / _SQRT2]
        rows += [i * n + j, j * n + i]
        cols += [n + m + p, n + m + p]
        vals += [1j / _SQRT2, -1j / _SQRT2]
    bm = scipy.sparse.csr_matrix(
        (np.asarray(vals, dtype=complex), (rows, cols)), shape=(n * n, n * n))
    _BASIS_CACHE[n] = bm
    return bm


def _psd_barrier_hessian(p_inv: np.ndarray) -> np.ndarray:
    """Hessian of -ln det X in hvec coordinates, given P = X^{-1}."""
    n = p_inv.shape[0]
    bm = _basis_matrix(n)
    k = np.kron(p_inv, p_inv.T)
    s = (bm.T @ k.T).T              # columns vec_r(P B_alpha P)
    h = (bm.conj().T @ s).real
    return np.ascontiguousarray(h)


# =====================================================================
# Problem description
# =====================================================================


@dataclass
class _Affine:
    vec: np.ndarray      # coefficient on u (matrices + t)
    rhs: float
    label: str


@dataclass
class _LogCon:
    betas: list          # positive weights
    offsets: list        # a_j constants inside each log
    gammas: list         # coefficient vectors of each log argument
    lin: np.ndarray      # affine part added to the log sum (includes -rhs terms)
    const: float         # constant part of the affine piece (includes -rhs)
    label: str


@dataclass
class ConicSolution:
    status: str                 # optimal | infeasible | stalled | max_iter
    t: float
    variables: dict
    niter: int
    gap: float
    residuals: dict
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class ConicProblem:
    """Maximize t over Hermitian PSD variables under the supported forms."""

    def __init__(self):
        self._dims = {}
        self._order = []
        self._affine: list[_Affine] = []
        self._logs: list[_LogCon] = []
        self._eq_rows = []
        self._eq_rhs = []
        self._frozen = False

    # ---- variable layout --------------------------------------------

    def add_psd_var(self, name: str, dim: int) -> str:
        if self._frozen:
            raise RuntimeError("problem already solved; build a new one")
        if self._affine or self._logs or self._eq_rows:
            raise RuntimeError("declare all variables before adding constraints")
        if name in self._dims:
            raise ValueError(f"duplicate variable '{name}'")
        if dim < 1:
            raise ValueError(f"dimension must be >= 1, got {dim}")
        self._dims[name] = dim
        self._order.append(name)
        return name

    def _layout(self):
        slices, off = {}, 0
        for name in self._order:
            d = self._dims[name]
            slices[name] = slice(off, off + d * d)
            off += d * d
        return slices, off + 1     # +1 for t (last coordinate)

    def _vec_of_terms(self, terms, t_coeff: float, nu: int, slices) -> np.ndarray:
        vec = np.zeros(nu)
        for name, mat in terms:
            d = self._dims[name]
            mat = np.asarray(mat, dtype=complex)
            if mat.shape != (d, d):
                raise ValueError(f"coefficient for '{name}' must be {d}x{d}, got {mat.shape}")
            vec[slices[name]] += hvec(_sym(mat))
        vec[-1] += t_coeff
        return vec

    # ---- constraints ------------------------------------------------

    def add_affine(self, terms, rhs: float, t_coeff: float = 0.0,
                   sense: str = "<=", label: str = ""):
        """sum Re Tr(A_v X_v) + t_coeff * t  (sense)  rhs."""
        slices, nu = self._layout()
        vec = self._vec_of_terms(terms, t_coeff, nu, slices)
        if sense == "<=":
            self._affine.append(_Affine(vec, float(rhs), label))
        elif sense == ">=":
            self._affine.append(_Affine(-vec, -float(rhs), label))
        elif sense == "==":
            self._eq_rows.append(vec)
            self._eq_rhs.append(float(rhs))
        else:
            raise ValueError(f"unknown sense {sense!r}")

    def add_log_constraint(self, entries, rhs_const: float = 0.0,
                           rhs_terms=(), t_coeff: float = 0.0, label: str = ""):
        """sum_j beta_j log2(a_j + sum Re Tr(A X)) + t_coeff*t
           >= rhs_const + sum Re Tr(B X).

        entries: iterable of (beta_j, a_j, terms_j); zero-weight entries are
        dropped.  Every a_j must be positive so the constraint is well posed
        on the PSD cone when the A are PSD.
        """
        slices, nu = self._layout()
        betas, offsets, gammas = [], [], []
        for beta, a_j, terms_j in entries:
            if beta < 0.0:
                raise ValueError(f"log weights must be nonnegative, got {beta}")
            if beta == 0.0:
                continue
            if not a_j > 0.0:
                raise ValueError(f"log offsets must be positive, got {a_j}")
            betas.append(float(beta))
            offsets.append(float(a_j))
            gammas.append(self._vec_of_terms(terms_j, 0.0, nu, slices))
        lin = -self._vec_of_terms(rhs_terms, 0.0, nu, slices)
        lin[-1] += t_coeff
        self._logs.append(_LogCon(betas, offsets, gammas, lin, -float(rhs_const),
                                  label or f"log{len(self._logs)}"))

    def fix_diagonal(self, name: str):
        """Pin diag(X) = 1 (unit-modulus lifting)."""
        slices, nu = self._layout()
        d = self._dims[name]
        base = slices[name].start
        for i in range(d):
            row = np.zeros(nu)
            row[base + i] = 1.0
            self._eq_rows.append(row)
            self._eq_rhs.append(1.0)

    # ---- evaluation helpers -----------------------------------------

    def _pad(self, vec: np.ndarray, nu: int, extra: int) -> np.ndarray:
        out = np.zeros(nu + extra)
        out[:vec.size] = vec
        return out

    def _log_value(self, con: _LogCon, u: np.ndarray):
        """(g(u), arg values); g must stay positive inside the domain."""
        args = [con.offsets[p] + float(con.gammas[p] @ u[:con.gammas[p].size])
                for p in range(len(con.betas))]
        if any(a <= 0.0 for a in args):
            return -np.inf, args
        g = sum(b * math.log2(a) for b, a in zip(con.betas, args))
        g += con.const + float(con.lin @ u[:con.lin.size])
        return g, args

    # ---- solver ------------------------------------------------------

    def solve(self, tol: float = 1e-8, warm_start: dict | None = None,
              max_newton: int = 4000) -> ConicSolution:
        self._frozen = True
        slices, nu = self._layout()
        scale = 1.0 + max([abs(a.rhs) for a in self._affine] + [1.0])

        # -- equality handling: rows touching a single coordinate pin that
        #    coordinate and leave the Newton system entirely; the remaining
        #    (small) block is enforced inside each Newton solve
        fixed_mask = np.zeros(nu, dtype=bool)
        fixed_vals = np.zeros(nu)
        gen_rows, gen_rhs = [], []
        for row, rhs in zip(self._eq_rows, self._eq_rhs):
            r = self._pad(row, nu, 0)
            nz = np.nonzero(r)[0]
            if nz.size == 0:
                if abs(rhs) > 1e-9 * scale:
                    return ConicSolution("infeasible", math.nan, {}, 0,
                                         math.inf, {}, "0 == nonzero equality")
                continue
            if nz.size == 1:
                j = int(nz[0])
                v = float(rhs) / r[j]
                if fixed_mask[j] and abs(fixed_vals[j] - v) > 1e-9 * scale:
                    return ConicSolution("infeasible", math.nan, {}, 0,
                                         math.inf, {},
                                         "conflicting coordinate pins")
                fixed_mask[j] = True
                fixed_vals[j] = v
            else:
                gen_rows.append(r)
                gen_rhs.append(float(rhs))
        a_gen = np.vstack(gen_rows) if gen_rows else np.zeros((0, nu))
        b_gen = np.asarray(gen_rhs) if gen_rhs else np.zeros(0)
        if a_gen.shape[0] and fixed_mask.any():
            b_gen = b_gen - a_gen[:, fixed_mask] @ fixed_vals[fixed_mask]
            a_gen = a_gen.copy()
            a_gen[:, fixed_mask] = 0.0
            live = np.abs(a_gen).max(axis=1) > 0.0
            if np.any(~live) and np.max(np.abs(b_gen[~live])) > 1e-9 * scale:
                return ConicSolution("infeasible", math.nan, {}, 0, math.inf,
                                     {}, "equality row emptied by pins")
            a_gen, b_gen = a_gen[live], b_gen[live]
        free_idx = np.flatnonzero(~fixed_mask)
        a_gen_f = a_gen[:, free_idx]

        u0 = self._initial_point(slices, nu, fixed_mask, fixed_vals, free_idx,
                                 a_gen_f, b_gen, warm_start)
        if u0 is None:
            return ConicSolution("infeasible", math.nan, {}, 0, math.inf, {},
                                 "equality/PSD initialization failed")
        u0[-1] = self._initial_t(u0, nu)

        newton_used = 0
        if not self._strictly_feasible(u0, slices):
            u0, steps, s_end = self._phase1(u0, slices, nu, free_idx, a_gen_f,
                                            b_gen, scale, max_newton)
            newton_used += steps
            if u0 is None:
                return ConicSolution(
                    "infeasible", math.nan, {}, newton_used, math.inf, {},
                    f"feasibility phase ended with relaxation {s_end:.3e} > 0")
            # phase 1 may drag t arbitrarily far down (lowering t only
            # slackens its rows), which would poison the |t|-relative gap
            # test; re-seat t just inside its bounds at the feasible point
            u_reseat = u0.copy()
            u_reseat[-1] = self._initial_t(u0, nu)
            if self._strictly_feasible(u_reseat, slices):
                u0 = u_reseat

        obj = np.zeros(nu)
        obj[-1] = 1.0
        u, steps, status = self._barrier_loop(u0, obj, slices, free_idx,
                                              a_gen_f, b_gen, tol,
                                              max_newton - newton_used)
        newton_used += steps
        variables = {name: hunvec(u[slices[name]], self._dims[name])
                     for name in self._order}
        nu_bar = self._barrier_count(slices)
        res = self._residuals(u, slices)
        gap = nu_bar / self._eta_final if self._eta_final > 0 else math.inf
        return ConicSolution(status, float(u[-1]), variables, newton_used, gap,
                             res)

    # -- initialization ------------------------------------------------

    def _initial_point(self, slices, nu, fixed_mask, fixed_vals, free_idx,
                       a_gen_f, b_gen, warm_start):
        attempts = (warm_start, None) if warm_start else (None,)
        for attempt in attempts:
            u0 = np.zeros(nu)
            for name in self._order:
                d = self._dims[name]
                x0 = np.eye(d)
                if attempt and name in attempt:
                    w = _sym(np.asarray(attempt[name], dtype=complex))
                    # pull strictly inside the cone, preserving the trace
                    tr = max(float(np.trace(w).real), 1e-30)
                    x0 = 0.98 * w + 0.02 * (tr / d) * np.eye(d)
                u0[slices[name]] = hvec(x0)
            u0[fixed_mask] = fixed_vals[fixed_mask]
            if a_gen_f.shape[0]:
                resid = b_gen - a_gen_f @ u0[free_idx]
                if np.max(np.abs(resid)) > 1e-12:
                    corr, *_ = np.linalg.lstsq(a_gen_f, resid, rcond=None)
                    u0[free_idx] += corr
            ok = True
            for name in self._order:
                x = hunvec(u0[slices[name]], self._dims[name])
                try:
                    np.linalg.cholesky(x + 0.0j)
                except np.linalg.LinAlgError:
                    ok = False
                    break
            if ok:
                return u0
        return None

    def _initial_t(self, u0, nu) -> float:
        """Largest t keeping every t-constraint strictly slack, minus margin."""
        bounds = []
        for a in self._affine:
            ct = a.vec[-1]
            if ct > 0.0:
                rest = float(a.vec[:-1] @ u0[:-1])
                bounds.append((a.rhs - rest) / ct)
        for con in self._logs:
            ct = con.lin[-1]
            if ct < 0.0:
                g0, args = self._log_value(con, np.concatenate([u0[:-1], [0.0]]))
                if math.isfinite(g0):
                    bounds.append(g0 / (-ct))
        if not bounds:
            return 0.0
        t_max = min(bounds)
        return t_max - max(1.0, 0.1 * abs(t_max))

    def _strictly_feasible(self, u, slices) -> bool:
        for a in self._affine:
            if a.rhs - float(a.vec @ u) <= 0.0:
                return False
        for con in self._logs:
            g, _ = self._log_value(con, u)
            if not g > 0.0:
                return False
        for name in self._order:
            x = hunvec(u[slices[name]], self._dims[name])
            try:
                np.linalg.cholesky(x + 0.0j)
            except np.linalg.LinAlgError:
                return False
        return True

    # -- barrier machinery --------------------------------------------

    def _barrier_count(self, slices) -> float:
        return (sum(self._dims[n] for n in self._order)
                + len(self._affine) + len(self._logs))

    def _barrier_terms(self, u, slices, relax: float | None):
        """(value, grad, hess_parts, in_domain).

        relax is the index of the relaxation coordinate in u (phase 1) or
        None; in phase 1 every inequality/log is loosened by u[relax].
        """
        nu = u.size
        grad = np.zeros(nu)
        hess_rank1 = []       # (coef, vector) pairs, H += coef * v v^T
        hess_blocks = []      # (slice, matrix)
        val = 0.0
        s_val = u[relax] if relax is not None else 0.0
        for a in self._affine:
            slack = a.rhs + s_val - float(a.vec @ u[:a.vec.size])
            if slack <= 0.0:
                return math.inf, grad, hess_rank1, hess_blocks, False
            val -= math.log(slack)
            gvec = np.zeros(nu)
            gvec[:a.vec.size] = a.vec
            if relax is not None:
                gvec[relax] -= 1.0
            grad += gvec / slack
            # reciprocal first: a huge slack then underflows harmlessly
            # instead of slack*slack overflowing, and the clamp keeps the
            # coefficient finite for tiny slacks
            inv_slack = 1.0 / max(slack, 1e-150)
            hess_rank1.append((inv_slack * inv_slack, gvec))
        for con in self._logs:
            uu = u[:con.lin.size]
            args = [con.offsets[p] + float(con.gammas[p] @ uu)
                    for p in range(len(con.betas))]
            if any(x <= 0.0 for x in args):
                return math.inf, grad, hess_rank1, hess_blocks, False
            g = sum(b * math.log2(x) for b, x in zip(con.betas, args))
            g += con.const + float(con.lin @ uu)
            if relax is not None:
                g += s_val
            if g <= 0.0:
                return math.inf, grad, hess_rank1, hess_blocks, False
            val -= math.log(g)
            dg = np.zeros(nu)
            dg[:con.lin.size] = con.lin
            for b, x, gam in zip(con.betas, args, con.gammas):
                dg[:gam.size] += (b / (_LN2 * x)) * gam
            if relax is not None:
                dg[relax] += 1.0
            grad -= dg / g
            hess_rank1.append((1.0 / max(g * g, 1e-300), dg))
            for b, x, gam in zip(con.betas, args, con.gammas):
                gv = np.zeros(nu)
                gv[:gam.size] = gam
                hess_rank1.append((b / max(_LN2 * x * x * g, 1e-300), gv))
        for name in self._order:
            d = self._dims[name]
            sl = slices[name]
            x = hunvec(u[sl], d)
            try:
                cf = np.linalg.cholesky(x + 0.0j)
            except np.linalg.LinAlgError:
                return math.inf, grad, hess_rank1, hess_blocks, False
            val -= 2.0 * float(np.sum(np.log(np.abs(np.diag(cf)))))
            p_inv = scipy.linalg.cho_solve((cf, True), np.eye(d, dtype=complex))
            p_inv = _sym(p_inv)
            grad[sl] -= hvec(p_inv)
            hess_blocks.append((sl, _psd_barrier_hessian(p_inv)))
        return val, grad, hess_rank1, hess_blocks, True

    def _merit(self, u, slices, eta_c, relax):
        val, *_rest, ok = self._barrier_terms(u, slices, relax)
        if not ok:
            return math.inf
        return val - float(eta_c @ u)

    def _newton_direction(self, hf, gf, ag, bg, uf):
        """Reduced Newton step; Cholesky plus a Schur complement for the
        general equality block.  Returns (step, squared decrement)."""
        n = hf.shape[0]
        base = 1e-12 * (1.0 + float(np.max(np.abs(np.diag(hf)), initial=0.0)))
        reg, cf = 0.0, None
        for _ in range(10):
            try:
                m = hf if reg == 0.0 else hf + reg * np.eye(n)
                cf = scipy.linalg.cho_factor(m, lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                reg = base if reg == 0.0 else reg * 100.0
        if cf is None:
            duf, *_ = np.linalg.lstsq(hf, -gf, rcond=None)
            return duf, float(duf @ (hf @ duf))
        if ag.shape[0] == 0:
            duf = scipy.linalg.cho_solve(cf, -gf, check_finite=False)
            return duf, float(-gf @ duf)
        rhs = np.column_stack([-gf[:, None], ag.T])
        z = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
        z0, z1 = z[:, 0], z[:, 1:]
        schur = ag @ z1
        r = ag @ z0 - (bg - ag @ uf)
        try:
            lam = np.linalg.solve(schur, r)
        except np.linalg.LinAlgError:
            lam, *_ = np.linalg.lstsq(schur, r, rcond=None)
        duf = z0 - z1 @ lam
        return duf, float(duf @ (hf @ duf))

    def _center(self, u, slices, eta_c, free_idx, a_gen_f, b_gen, relax,
                max_steps, ntol=1e-4, stop_fn=None):
        """Damped Newton centering; returns (u, steps_used, converged).

        Stops inside the quadratic zone (decrement <= ntol); tighter
        centering buys nothing because the path-following gap is set by
        the barrier weight, not by the centering accuracy.
        """
        nu = u.size
        steps = 0
        stalls = 0
        while steps < max_steps:
            val, grad, rank1, blocks, ok = self._barrier_terms(u, slices, relax)
            if not ok:
                raise RuntimeError("centering left the barrier domain")
            grad = grad - eta_c
            h = np.zeros((nu, nu))
            if rank1:
                coefs = np.asarray([c for c, _ in rank1])
                vmat = np.vstack([v for _, v in rank1])
                h += (vmat * coefs[:, None]).T @ vmat
            for sl, blk in blocks:
                h[sl, sl] += blk
            gf = grad[free_idx]
            hf = h[np.ix_(free_idx, free_idx)] if free_idx.size < nu else h
            duf, dec2 = self._newton_direction(hf, gf, a_gen_f, b_gen,
                                               u[free_idx])
            steps += 1
            if not math.isfinite(dec2):
                return u, steps, False
            if dec2 <= ntol * ntol:
                return u, steps, True
            du = np.zeros(nu)
            du[free_idx] = duf
            # backtracking on the merit function
            m0 = val - float(eta_c @ u)
            slope = float(gf @ duf)
            alpha = 1.0
            accepted = False
            progress = 0.0
            for _ in range(60):
                u_try = u + alpha * du
                m_try = self._merit(u_try, slices, eta_c, relax)
                if m_try <= m0 + 0.25 * alpha * slope:
                    progress = m0 - m_try
                    u = u_try
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # stalled at numerical precision; the point is near-centered
                return u, steps, dec2 <= 1e-2
            if progress <= 1e-12 * (1.0 + abs(m0)):
                stalls += 1
                if stalls >= 2:
                    return u, steps, dec2 <= 1e-2
            else:
                stalls = 0
            if stop_fn is not None and stop_fn(u):
                return u, steps, True
        return u, steps, False

    def _phase1(self, u0, slices, nu, free_idx, a_gen_f, b_gen, scale,
                max_newton):
        """Minimize the relaxation scalar until strictly negative."""
        viol = 0.0
        for a in self._affine:
            viol = max(viol, float(a.vec @ u0[:a.vec.size]) - a.rhs)
        for con in self._logs:
            g, args = self._log_value(con, u0)
            if any(x <= 0.0 for x in args):
                raise ValueError(
                    f"initial point leaves a log argument nonpositive in "
                    f"'{con.label}'; coefficients are expected PSD")
            viol = max(viol, -g)
        margin = 1e-6 * scale
        u = np.concatenate([u0, [viol + max(1.0, 0.1 * viol)]])
        free1 = np.concatenate([free_idx, [nu]])
        a_gen1 = np.hstack([a_gen_f, np.zeros((a_gen_f.shape[0], 1))])
        eta_vec = np.zeros(nu + 1)
        target = -2.0 * margin
        eta = 1.0
        used = 0
        nu_bar = self._barrier_count(slices) + 0.0
        for _ in range(40):
            eta_vec[-1] = -eta       # minimize the relaxation coordinate
            u, steps, _ = self._center(
                u, slices, eta_vec, free1, a_gen1, b_gen, nu,
                min(60, max(10, max_newton - used)),
                stop_fn=lambda w: w[-1] < target)
            used += steps
            if u[-1] < target:
                return u[:-1], used, u[-1]
            if nu_bar / eta < 0.25 * margin or used >= max_newton:
                break
            eta *= 10.0
        if u[-1] < 0.0:
            return u[:-1], used, u[-1]
        return None, used, u[-1]

    def _barrier_loop(self, u0, obj, slices, free_idx, a_gen_f, b_gen, tol,
                      budget):
        u = u0.copy()
        eta = 1.0
        nu_bar = self._barrier_count(slices)
        used = 0
        status = "optimal"
        for _ in range(60):
            eta_c = eta * obj
            u, steps, conv = self._center(u, slices, eta_c, free_idx, a_gen_f,
                                          b_gen, None,
                                          min(60, max(10, budget - used)))
            used += steps
            gap = nu_bar / eta
            if gap <= tol * max(1.0, abs(u[-1])):
                break
            if used >= budget:
                status = "max_iter"
                break
            eta *= 10.0
        self._eta_final = eta
        return u, used, status

    def _residuals(self, u, slices) -> dict:
        aff = 0.0
        for a in self._affine:
            aff = max(aff, float(a.vec @ u[:a.vec.size]) - a.rhs)
        logv = 0.0
        for con in self._logs:
            g, _ = self._log_value(con, u)
            logv = max(logv, -g if math.isfinite(g) else math.inf)
        eq = 0.0
        for row, rhs in zip(self._eq_rows, self._eq_rhs):
            eq = max(eq, abs(float(row @ u[:row.size]) - rhs))
        min_eig_rel = 0.0
        for name in self._order:
            x = hunvec(u[slices[name]], self._dims[name])
            w = np.linalg.eigvalsh(x)
            nrm = max(float(np.max(np.abs(w))), 1e-30)
            min_eig_rel = min(min_eig_rel, float(np.min(w)) / nrm)
        return {"max_affine_violation": aff, "max_eq_residual": eq,
                "max_log_violation": logv, "min_eig_rel": min_eig_rel}


# =====================================================================
# PSD helpers and rank-one extraction
# =====================================================================


def psd_project(a: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) PSD Hermitian matrix."""
    a = _sym(np.asarray(a, dtype=complex))
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    return _sym((v * w) @ v.conj().T)


def principal_rank1(a: np.ndarray):
    """(vector, ratio): dominant rank-one factor and its energy share.

    The vector x satisfies x x^H ~ A when A is near rank one; ratio is
    lambda_max / trace, 1.0 for exact rank one.
    """
    a = _sym(np.asarray(a, dtype=complex))
    w, v = np.linalg.eigh(a)
    if w[-1] <= 0.0:
        raise ValueError("matrix has no positive eigenvalue; nothing to extract")
    tr = float(np.sum(np.clip(w, 0.0, None)))
    x = math.sqrt(float(w[-1])) * v[:, -1]
    return x, float(w[-1]) / tr


@dataclass(frozen=True)
class RandomizationResult:
    phi: np.ndarray          # best unit-modulus phase vector found
    score: float             # evaluator score of phi
    feasible: bool           # whether any candidate passed the evaluator
    n_feasible: int
    n_candidates: int


def gaussian_randomization(xbar: np.ndarray, n_samples: int, evaluator,
                           seed, extra_candidates=()) -> RandomizationResult:
    """Recover unit-modulus phases from a lifted PSD matrix.

    Draws complex Gaussian vectors with covariance xbar, normalizes the
    last coordinate to one, projects entrywise to unit modulus and keeps
    the evaluator-feasible candidate of best score.  evaluator(phi) must
    return (feasible: bool, score: float).  extra_candidates (full-size
    phase vectors of length n-1) are screened along with the draws.
    """
    xbar = _sym(np.asarray(xbar, dtype=complex))
    n = xbar.shape[0]
    w, v = np.linalg.eigh(xbar)
    w = np.clip(w, 0.0, None)
    factor = v * np.sqrt(w)
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((n, n_samples)) + 1j * rng.standard_normal((n, n_samples))) \
        / math.sqrt(2.0)
    draws = factor @ z

    best = None
    n_feas = 0
    n_cand = 0

    def consider(phi):
        nonlocal best, n_feas, n_cand
        n_cand += 1
        feas, score = evaluator(phi)
        if feas:
            n_feas += 1
            if best is None or score > best[1]:
                best = (phi, score)

    fallback = None
    for cand in extra_candidates:
        cand = np.asarray(cand, dtype=complex)
        phi = np.exp(1j * np.angle(cand))
        if fallback is None:
            fallback = phi
        consider(phi)
    for s in range(n_samples):
        vec = draws[:, s]
        pivot = vec[-1]
        if abs(pivot) > 1e-12 * np.linalg.norm(vec):
            vec = vec / pivot
        phi = np.exp(1j * np.angle(vec[:-1]))
        if fallback is None:
            fallback = phi
        consider(phi)

    if best is None:
        return RandomizationResult(fallback, -math.inf, False, 0, n_cand)
    return RandomizationResult(best[0], best[1], True, n_feas, n_cand)
