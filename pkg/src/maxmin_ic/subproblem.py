"""Convex max-t subproblem solved at each design iteration.

The program over complex stacked variables x_i is

    maximize    t
    subject to  C_i + 2 Re{b_i^H x_i} + sum_j x_j^H G_ji x_j <= -t,  i = 1..N
                ||x_i||_2^2 <= p_i,                                  i = 1..N

with every G_ji Hermitian PSD and Kronecker structured,
G_ji = I_{k_j} (x) K_ji.  It is solved by a log-barrier path-following
Newton method on the real embedding xi = [Re x; Im x]; the barrier
parameter is reduced by 10 from mu = 1 until the KKT residual of the
recovered primal-dual pair certifies the solution.  Matrix-vector products
with G_ji apply the small factor K_ji blockwise; the full Kronecker matrix
is never materialized inside the solver.

The problem is always feasible: x = 0 with t = -max_i C_i satisfies every
constraint, and x = 0, t = -max_i C_i - 1 is strictly interior whenever
all p_i > 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .linalg import hermitian_part, is_hermitian, unvec, vec

__all__ = [
    "MinorizerCoefficients",
    "QcqpSolution",
    "RealEmbedding",
    "lift",
    "embed_real",
    "solve",
    "kkt_residual",
]


@dataclass(frozen=True)
class MinorizerCoefficients:
    """Data of one subproblem.

    C[i] is the real constant of constraint i; b[i] the complex linear
    vector acting on x_i (length m_i * k_i); K[j][i] the small Hermitian
    PSD factor of G_ji = I_{k_j} (x) K_ji, of shape (m_j, m_j); k[j] the
    per-user replication count; p[i] the power budgets.
    """

    C: np.ndarray
    b: list
    K: list
    k: tuple
    p: np.ndarray

    @property
    def n_users(self) -> int:
        return len(self.b)

    def block_dim(self, j: int) -> int:
        """Complex dimension of x_j."""
        return self.K[j][0].shape[0] * self.k[j]

    def G(self, j: int, i: int) -> np.ndarray:
        """Materialize the full quadratic-form matrix G_ji."""
        return np.kron(np.eye(self.k[j]), self.K[j][i])


@dataclass(frozen=True)
class QcqpSolution:
    """Solution of one subproblem with its certification data."""

    x: list
    t: float
    kkt_residual: float
    iterations: int
    converged: bool
    lam: np.ndarray
    nu: np.ndarray


def lift(g) -> np.ndarray:
    """Real embedding of a complex matrix: [[Re g, -Im g], [Im g, Re g]].

    For Hermitian g the result is symmetric with the same eigenvalues
    (each doubled in multiplicity), and x^H g x = xi^T ghat xi under
    xi = [Re x; Im x].
    """
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    return np.block([[g.real, -g.imag], [g.imag, g.real]])


@dataclass(frozen=True)
class RealEmbedding:
    """Fully materialized real-valued QCQP data (test and debug surface)."""

    C: np.ndarray
    beta: list
    Ghat: list
    p: np.ndarray


def embed_real(coeffs: MinorizerCoefficients) -> RealEmbedding:
    """Complex-to-real lifting of the subproblem data.

    Each complex x in C^n maps to xi = [Re x; Im x] in R^{2n}; quadratic
    forms map through :func:`lift` and the linear term 2 Re{b^H x} becomes
    2 beta^T xi with beta = [Re b; Im b].  Norms are preserved.
    """
    n = coeffs.n_users
    beta = [np.concatenate([np.asarray(bi).real, np.asarray(bi).imag])
            for bi in coeffs.b]
    ghat = [[lift(coeffs.G(j, i)) for i in range(n)] for j in range(n)]
    return RealEmbedding(C=np.asarray(coeffs.C, dtype=float), beta=beta,
                         Ghat=ghat, p=np.asarray(coeffs.p, dtype=float))


def _audit(coeffs: MinorizerCoefficients, psd_tol: float = 1e-9) -> None:
    """Input validation: finiteness, Hermitian PSD quadratic forms."""
    n = coeffs.n_users
    c = np.asarray(coeffs.C, dtype=float)
    p = np.asarray(coeffs.p, dtype=float)
    if c.shape != (n,) or not np.all(np.isfinite(c)):
        raise ValueError("C must be a finite real vector of length N")
    if p.shape != (n,) or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("p must be finite and nonnegative")
    for i, bi in enumerate(coeffs.b):
        if not np.all(np.isfinite(bi)):
            raise ValueError(f"b[{i}] contains non-finite entries")
    for j in range(n):
        for i in range(n):
            kji = np.asarray(coeffs.K[j][i])
            if not np.all(np.isfinite(kji)):
                raise ValueError(f"K[{j}][{i}] contains non-finite entries")
            if not is_hermitian(kji, 1e-10):
                raise ValueError(f"K[{j}][{i}] is not Hermitian within 1e-10")
            w = np.linalg.eigvalsh(hermitian_part(kji))
            if w.size and w[0] < -psd_tol:
                raise ValueError(
                    f"G[{j}][{i}] has eigenvalue {w[0]:.3e} < -{psd_tol:g}; "
                    "the subproblem would not be convex")


class _Problem:
    """Precomputed evaluation state for one subproblem.

    The real lifts of the Kronecker blocks are materialized once per user
    pair (they are small), so each Newton step assembles its Hessian from
    weighted sums without re-lifting.
    """

    def __init__(self, coeffs: MinorizerCoefficients):
        self.N = coeffs.n_users
        self.C = np.asarray(coeffs.C, dtype=float)
        self.p = np.asarray(coeffs.p, dtype=float)
        self.k = tuple(coeffs.k)
        self.m = tuple(np.asarray(coeffs.K[j][0]).shape[0] for j in range(self.N))
        self.n = tuple(self.m[j] * self.k[j] for j in range(self.N))
        self.b = [np.asarray(bi, dtype=complex).ravel() for bi in coeffs.b]
        self.Kstack = [
            np.stack([hermitian_part(np.asarray(coeffs.K[j][i], dtype=complex))
                      for i in range(self.N)])
            for j in range(self.N)
        ]
        self.active = [j for j in range(self.N) if self.p[j] > 0 and self.n[j] > 0]
        off = 0
        self.sl = {}
        for j in self.active:
            self.sl[j] = slice(off, off + 2 * self.n[j])
            off += 2 * self.n[j]
        self.dim = off + 1  # trailing t
        self.lifted = {
            j: np.stack([lift(np.kron(np.eye(self.k[j]), self.Kstack[j][i]))
                         for i in range(self.N)])
            for j in self.active
        }

    def zeros_x(self):
        return [np.zeros(self.n[j], dtype=complex) for j in range(self.N)]

    def parts(self, x):
        """Linear and quadratic constraint pieces plus the products G_ji x_j.

        Returns (lin, quad, ys) with lin[i] = 2 Re{b_i^H x_i},
        quad[i] = sum_j x_j^H G_ji x_j, and ys[j] of shape (N, m_j, k_j)
        holding K_ji V_j for active users j.
        """
        lin = np.zeros(self.N)
        quad = np.zeros(self.N)
        ys = {}
        for j in self.active:
            v = unvec(x[j], self.m[j], self.k[j])
            y = self.Kstack[j] @ v
            ys[j] = y
            quad += np.einsum("mk,imk->i", v.conj(), y).real
            lin[j] = 2.0 * np.vdot(self.b[j], x[j]).real
        return lin, quad, ys

    def constraints(self, x, t):
        lin, quad, ys = self.parts(x)
        f = self.C + lin + quad + t
        h = np.array([np.vdot(x[j], x[j]).real - self.p[j] for j in self.active])
        return f, h, ys

    def constraint_grad_rows(self, x, ys):
        """Real gradients of the quadratic constraints, one row per i."""
        rows = np.zeros((self.N, self.dim))
        for j in self.active:
            sl = self.sl[j]
            nj = self.n[j]
            # vec_F over the trailing axes of (N, m, k): row i = vec(ys[j][i])
            flat = 2.0 * ys[j].transpose(0, 2, 1).reshape(self.N, nj)
            rows[:, sl.start:sl.start + nj] = flat.real
            rows[:, sl.start + nj:sl.stop] = flat.imag
            rows[j, sl.start:sl.start + nj] += 2.0 * self.b[j].real
            rows[j, sl.start + nj:sl.stop] += 2.0 * self.b[j].imag
        rows[:, -1] = 1.0
        return rows

    def xi_of(self, x, j):
        return np.concatenate([x[j].real, x[j].imag])


def _psi(f, h, t, mu):
    return -t / mu - float(np.sum(np.log(-f))) - float(np.sum(np.log(-h)))


def _strictly_feasible(f, h):
    return bool(np.all(f < 0) and np.all(h < 0))


def _newton_step(prob, x, t, mu, pre=None):
    """Barrier gradient, Hessian, and current constraint data."""
    f, h, ys = prob.constraints(x, t) if pre is None else pre
    af = 1.0 / (-f)
    rows = prob.constraint_grad_rows(x, ys)
    grad = rows.T @ af
    grad[-1] += -1.0 / mu
    hess = (rows * (af ** 2)[:, None]).T @ rows
    for idx, j in enumerate(prob.active):
        sl = prob.sl[j]
        blk = 2.0 * np.einsum("i,iab->ab", af, prob.lifted[j])
        ah = 1.0 / (-h[idx])
        xi = prob.xi_of(x, j)
        blk[np.diag_indices_from(blk)] += 2.0 * ah
        blk += (4.0 * ah ** 2) * np.outer(xi, xi)
        hess[sl, sl] += blk
        grad[sl] += (2.0 * ah) * xi
    return f, h, grad, hess, rows


def _solve_spd(hess, grad):
    """Newton direction -H^-1 g, with iterative refinement.

    The barrier Hessian conditions like 1/mu^2 near the end of the path;
    two refinement passes on the factorization recover the digits lost to
    that.  Escalating jitter guards rare Cholesky failures.
    """
    jitter = 0.0
    scale = float(np.mean(np.diag(hess))) + 1.0
    for _ in range(4):
        try:
            c = np.linalg.cholesky(hess + jitter * np.eye(hess.shape[0]))
        except np.linalg.LinAlgError:
            jitter = max(10.0 * jitter, 1e-12 * scale)
            continue

        def back(rhs):
            y = sla.solve_triangular(c, rhs, lower=True, check_finite=False)
            return sla.solve_triangular(c.T, y, lower=False, check_finite=False)

        d = back(grad)
        for _ in range(2):
            r = hess @ d - grad
            d = d - back(r)
        return -d
    return -np.linalg.lstsq(hess, grad, rcond=None)[0]


def _complex_direction(prob, direction):
    d = prob.zeros_x()
    for j in prob.active:
        sl = prob.sl[j]
        nj = prob.n[j]
        d[j] = direction[sl.start:sl.start + nj] + 1j * direction[sl.start + nj:sl.stop]
    return d


def _apply_step(prob, x, t, dx, dt, step):
    xn = [x[j] + step * dx[j] for j in range(prob.N)]
    return xn, t + step * dt


def _max_feasible_step(prob, x, f, h, rows, direction, dx):
    """Largest step keeping every constraint strictly negative.

    Along the Newton direction each constraint is an exact quadratic
    c + L s + Q s^2 with Q >= 0, so the boundary crossing is closed form.
    """
    smax = np.inf
    _, quad_d, _ = prob.parts(dx)
    lin_f = rows @ direction
    for i in range(prob.N):
        smax = min(smax, _pos_root(f[i], lin_f[i], quad_d[i]))
    for idx, j in enumerate(prob.active):
        lj = 2.0 * np.vdot(x[j], dx[j]).real
        qj = float(np.vdot(dx[j], dx[j]).real)
        smax = min(smax, _pos_root(h[idx], lj, qj))
    return smax


def _pos_root(c, lin, quad):
    """Smallest positive root of c + lin*s + quad*s^2 (c < 0, quad >= 0)."""
    if quad <= 0.0:
        return -c / lin if lin > 0.0 else np.inf
    disc = lin * lin - 4.0 * quad * c
    return (-lin + np.sqrt(disc)) / (2.0 * quad)


def _center_t(C, mu):
    """Scalar pre-centering of t at x = 0.

    Minimizes -t/mu - sum_i log(-C_i - t) over t < -max C; starting the
    multivariate Newton from here removes most of its damped phase.
    """
    hi = float(-np.max(C))
    t = hi - 1.0
    for _ in range(100):
        s = -C - t
        g = -1.0 / mu + float(np.sum(1.0 / s))
        hss = float(np.sum(1.0 / s ** 2))
        t_new = t - g / hss
        if t_new >= hi:
            t_new = 0.5 * (t + hi)
        if abs(t_new - t) <= 1e-12 * (1.0 + abs(t)):
            t = t_new
            break
        t = t_new
    return min(t, hi - 1e-9 * (1.0 + abs(hi)))


def _fit_multipliers(prob, x, t, lam_b, nu_b):
    """Least-squares multiplier recovery at a near-optimal primal point.

    The barrier multipliers inherit the 1/mu^2 conditioning of the final
    centering steps; the primal iterate itself is far more accurate.  A
    small NNLS fit of the stationarity system over the active constraints
    (detected from the barrier multipliers) gives certificates that match
    the primal accuracy.
    """
    from scipy.optimize import nnls

    act_f = [i for i in range(prob.N) if lam_b[i] >= 1e-5]
    act_h = [j for j in prob.active if nu_b[j] >= 1e-5]
    if not act_f:
        act_f = [int(np.argmax(lam_b))]
    lin, quad, ys = prob.parts(x)
    rows = prob.constraint_grad_rows(x, ys)
    cols = []
    for i in act_f:
        cols.append(np.append(rows[i, :-1], 10.0))  # t-row weighted
    for j in act_h:
        col = np.zeros(prob.dim - 1 + 1)
        sl = prob.sl[j]
        col[sl.start:sl.stop] = 2.0 * prob.xi_of(x, j)
        cols.append(col)
    mat = np.column_stack(cols)
    rhs = np.zeros(mat.shape[0])
    rhs[-1] = 10.0  # sum lam = 1
    z, _ = nnls(mat, rhs)
    lam = np.zeros(prob.N)
    nu = np.zeros(prob.N)
    for pos, i in enumerate(act_f):
        lam[i] = z[pos]
    for pos, j in enumerate(act_h):
        nu[j] = z[len(act_f) + pos]
    return lam, nu


def solve(coeffs: MinorizerCoefficients, tol: float = 1e-7,
          max_newton: int = 200) -> QcqpSolution:
    """Solve the subproblem to a certified KKT residual.

    Returns the final iterate with t set to the exact surrogate value
    min_i of -(C_i + 2 Re{b_i^H x_i} + sum_j x_j^H G_ji x_j) at the
    returned x, so the quadratic constraints hold with equality for the
    worst i and t is never below the x = 0 baseline -max_i C_i.  If the
    Newton iteration cap is exceeded the best iterate is returned flagged
    non-converged.
    """
    _audit(coeffs)
    prob = _Problem(coeffs)
    x = prob.zeros_x()
    mu = 1.0
    t = _center_t(prob.C, mu)
    total = 0
    converged = False
    res = np.inf
    lam = np.full(prob.N, np.nan)
    nu_full = np.zeros(prob.N)
    while True:
        # loose centering suffices while tracking the path; tighten at the end
        tight = mu <= 10.0 * tol
        center_tol = 1e-10 if tight else 1e-5
        pre = None
        dec_prev = np.inf
        stall = 0
        for _ in range(80):
            if total >= max_newton:
                break
            f, h, grad, hess, rows = _newton_step(prob, x, t, mu, pre=pre)
            direction = _solve_spd(hess, grad)
            dec2 = float(-grad @ direction)
            if not np.isfinite(dec2) or dec2 / 2.0 <= center_tol:
                break
            if tight:
                # decrement can floor out near machine precision; stop pushing
                stall = stall + 1 if dec2 > 0.5 * dec_prev else 0
                dec_prev = min(dec_prev, dec2)
                if stall >= 5:
                    break
            dx = _complex_direction(prob, direction)
            dt = float(direction[-1])
            smax = _max_feasible_step(prob, x, f, h, rows, direction, dx)
            psi0 = _psi(f, h, t, mu)
            slope = float(grad @ direction)
            step = min(1.0, 0.9 * smax)
            accepted = False
            while step > 1e-14:
                xn, tn = _apply_step(prob, x, t, dx, dt, step)
                cand = prob.constraints(xn, tn)
                fn, hn = cand[0], cand[1]
                if _strictly_feasible(fn, hn):
                    psin = _psi(fn, hn, tn, mu)
                    if np.isfinite(psin) and psin <= psi0 + 1e-4 * step * slope:
                        accepted = True
                        break
                step *= 0.5
            total += 1
            if not accepted:
                break
            x, t = xn, tn
            pre = cand
        f, h, _ = prob.constraints(x, t)
        lam = mu / (-f)
        nu_full = np.zeros(prob.N)
        for idx, j in enumerate(prob.active):
            nu_full[j] = mu / (-h[idx])
        t_pol = t - float(np.max(f))
        if mu <= tol:
            res = _kkt_residual(prob, x, t_pol, lam, nu_full)
            lam_fit, nu_fit = _fit_multipliers(prob, x, t_pol, lam, nu_full)
            res_fit = _kkt_residual(prob, x, t_pol, lam_fit, nu_fit)
            if res_fit < res:
                res, lam, nu_full = res_fit, lam_fit, nu_fit
            if res <= tol:
                converged = True
                break
        if total >= max_newton or mu <= 1e-11:
            if not np.isfinite(res):
                res = _kkt_residual(prob, x, t_pol, lam, nu_full)
            break
        mu /= 10.0
    t_base = float(-np.max(prob.C))
    if t_pol < t_base - 1e-12:
        # never observed in practice: fall back to the feasible baseline
        x = prob.zeros_x()
        t_pol = t_base
        converged = False
        res = _kkt_residual(prob, x, t_pol, lam, nu_full)
    return QcqpSolution(x=x, t=t_pol, kkt_residual=float(res), iterations=total,
                        converged=converged, lam=lam, nu=nu_full)


def kkt_residual(coeffs: MinorizerCoefficients, x, t, lam, nu) -> float:
    """Max of primal violations, complementarity, and dual residuals.

    Certifies a candidate primal-dual pair for the subproblem; users with
    p_i = 0 hold no variables and contribute no stationarity rows.
    """
    return _kkt_residual(_Problem(coeffs), x, t, lam, nu)


def _kkt_residual(prob, x, t, lam, nu) -> float:
    lam = np.asarray(lam, dtype=float)
    nu = np.asarray(nu, dtype=float)
    lin, quad, ys = prob.parts(x)
    f = prob.C + lin + quad + t
    r = max(float(np.max(f, initial=-np.inf)), 0.0)
    r = max(r, float(np.max(-lam, initial=0.0)), float(np.max(-nu, initial=0.0)))
    r = max(r, float(np.max(np.abs(lam * f))))
    r = max(r, abs(float(np.sum(lam)) - 1.0))
    for j in prob.active:
        hj = float(np.vdot(x[j], x[j]).real - prob.p[j])
        r = max(r, hj, abs(nu[j] * hj))
        stat = 2.0 * np.einsum("i,imk->mk", lam, ys[j]).reshape(-1, order="F")
        stat = stat + 2.0 * lam[j] * prob.b[j] + 2.0 * nu[j] * x[j]
        if stat.size:
            r = max(r, float(np.max(np.abs(stat.real))),
                    float(np.max(np.abs(stat.imag))))
    return float(r)
