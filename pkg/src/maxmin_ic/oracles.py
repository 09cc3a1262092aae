"""Independent brute-force and closed-form verifiers.

These deliberately share no code with the main solver paths: closed-form
water-filling for the single-user problem, exhaustive grid search for
scalar instances, and a projected-subgradient method (with a dual-averaging
gap certificate) for the convex subproblem.  They are slow and simple on
purpose.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .linalg import unvec, vec
from .subproblem import MinorizerCoefficients
from .system import LogBase, SystemInstance

__all__ = [
    "waterfilling_single_user",
    "grid_search_scalar_maxmin",
    "projected_subgradient_qcqp",
]


def _waterfill(gains, p):
    """Allocate total power p over parallel channels with gains lambda_k.

    Returns (q, level) with q_k = max(1/level - 1/lambda_k, 0), sum q = p.
    """
    gains = np.asarray(gains, dtype=float)
    q = np.zeros_like(gains)
    pos = gains > 0
    if p <= 0 or not np.any(pos):
        return q, np.inf
    lam = np.sort(gains[pos])[::-1]
    n_active = lam.size
    for m in range(lam.size, 0, -1):
        inv_level = (p + np.sum(1.0 / lam[:m])) / m
        if inv_level - 1.0 / lam[m - 1] > 0:
            n_active = m
            break
    inv_level = (p + np.sum(1.0 / lam[:n_active])) / n_active
    order = np.argsort(gains)[::-1]
    for rank in range(n_active):
        idx = order[rank]
        q[idx] = inv_level - 1.0 / gains[idx]
    return q, 1.0 / inv_level


def waterfilling_single_user(H, Gamma, p, log_base: LogBase = LogBase.NATURAL):
    """Single-user MIMO capacity: water-filling over whitened channel modes.

    Returns (Q_opt, capacity) where Q_opt is the optimal M x M transmit
    covariance with tr(Q_opt) = p and capacity = sum_k log(1 + lambda_k q_k)
    in the requested base.  A zero channel gives Q = 0 and capacity 0.
    """
    H = np.asarray(H, dtype=complex)
    Gamma = np.asarray(Gamma, dtype=complex)
    m = H.shape[1]
    if p <= 0 or not np.any(np.abs(H) > 0):
        return np.zeros((m, m), dtype=complex), 0.0
    # whiten: A = L^-1 H with Gamma = L L^H
    low = np.linalg.cholesky(Gamma)
    A = sla.solve_triangular(low, H, lower=True, check_finite=False)
    gains, modes = np.linalg.eigh(A.conj().T @ A)
    gains = np.clip(gains, 0.0, None)
    q, _level = _waterfill(gains, p)
    Q = (modes * q) @ modes.conj().T
    capacity = float(np.sum(np.log1p(gains * q))) * LogBase(log_base).scale
    return Q, capacity


def _scalar_rates(instance, q):
    """Per-user rates of a scalar (all M_i = L_i = 1) instance.

    q can carry broadcastable grid axes; returns an array with a leading
    user axis.  Computed with naive scalar arithmetic, independently of the
    matrix rate formulas.
    """
    n = instance.config.N
    g = np.array([[abs(complex(instance.H[j][i][0, 0])) ** 2 for i in range(n)]
                  for j in range(n)])
    noise = np.array([float(instance.Gamma[i][0, 0].real) for i in range(n)])
    rates = []
    for i in range(n):
        denom = noise[i]
        for j in range(n):
            if j != i:
                denom = denom + g[j, i] * q[j]
        rates.append(np.log1p(g[i, i] * q[i] / denom))
    return np.stack(rates) * instance.config.log_base.scale


def grid_search_scalar_maxmin(instance: SystemInstance, grid_step=None):
    """Exhaustive max-min search over q_i in [0, p_i] for scalar instances.

    Returns (q_best, minrate_best).  Only sensible for N <= 3; the grid
    step defaults to max(p)/200.
    """
    cfg = instance.config
    if any(m != 1 for m in cfg.M) or any(v != 1 for v in cfg.L):
        raise ValueError("grid search requires all M_i = L_i = 1")
    if cfg.N > 3:
        raise ValueError("grid search supports at most N = 3 users")
    p = np.asarray(instance.p, dtype=float)
    if grid_step is None:
        grid_step = float(np.max(p)) / 200.0
    axes = [np.linspace(0.0, pi, max(2, int(np.floor(pi / grid_step)) + 1))
            if pi > 0 else np.zeros(1) for pi in p]
    best_val = -np.inf
    best_q = np.zeros(cfg.N)
    if cfg.N == 1:
        rates = _scalar_rates(instance, [axes[0]])
        idx = int(np.argmax(rates[0]))
        return np.array([axes[0][idx]]), float(rates[0][idx])
    # vectorize users 1..2 on a mesh; loop the third axis if present
    q1 = axes[0][:, None]
    q2 = axes[1][None, :]
    third = axes[2] if cfg.N == 3 else [None]
    for q3 in third:
        q = [q1, q2] if cfg.N == 2 else [q1, q2, q3]
        minrate = np.min(_scalar_rates(instance, q), axis=0)
        flat = int(np.argmax(minrate))
        i1, i2 = np.unravel_index(flat, minrate.shape)
        if minrate[i1, i2] > best_val:
            best_val = float(minrate[i1, i2])
            best_q = np.array([axes[0][i1], axes[1][i2]] +
                              ([q3] if cfg.N == 3 else []))
    return best_q, best_val


def _ball_min(S, k_rep, c, p):
    """Minimize 2 Re{c^H x} + x^H (I_k (x) S) x over ||x||^2 <= p.

    S is Hermitian PSD (m x m); x and c live in C^{m*k}.  Returns
    (x_opt, value, eta) with eta the multiplier of the ball constraint.
    """
    m = S.shape[0]
    n = m * k_rep
    c = np.asarray(c, dtype=complex).ravel()
    if p <= 0 or n == 0:
        return np.zeros(n, dtype=complex), 0.0, 0.0
    w, E = np.linalg.eigh(0.5 * (S + S.conj().T))
    w = np.clip(w, 0.0, None)
    ct = E.conj().T @ unvec(c, m, k_rep)  # (m, k) coefficients, eigenvalue w per row
    wv = np.repeat(w[:, None], k_rep, axis=1)

    def x_of(eta):
        return -ct / (wv + eta)

    interior_ok = np.all(np.abs(ct[w <= 1e-14 * max(w[-1], 1.0), :]) <= 1e-300)
    if interior_ok:
        with np.errstate(divide="ignore", invalid="ignore"):
            x0 = np.where(wv > 0, -ct / np.where(wv > 0, wv, 1.0), 0.0)
        if np.sum(np.abs(x0) ** 2) <= p:
            xm = E @ x0
            val = 2.0 * np.vdot(c, vec(xm)).real + float(
                np.sum(wv * np.abs(x0) ** 2))
            return vec(xm), val, 0.0
    hi = float(np.linalg.norm(ct)) / np.sqrt(p) + 1e-30
    lo = 0.0
    for _ in range(200):
        eta = 0.5 * (lo + hi)
        if np.sum(np.abs(x_of(eta)) ** 2) > p:
            lo = eta
        else:
            hi = eta
    eta = hi
    xt = x_of(eta)
    xm = E @ xt
    x_flat = vec(xm)
    val = 2.0 * np.vdot(c, x_flat).real + float(np.sum(wv * np.abs(xt) ** 2))
    return x_flat, val, eta


def _dual_value(prob_C, bs, Kgrid, ks, p, lam):
    """Lagrangian dual bound at simplex weights lam, plus its primal response."""
    n = len(bs)
    total = -float(lam @ prob_C)
    xs = []
    for j in range(n):
        S = sum(lam[i] * Kgrid[j][i] for i in range(n))
        xj, val, _ = _ball_min(S, ks[j], lam[j] * bs[j], p[j])
        total -= val
        xs.append(xj)
    return total, xs


def projected_subgradient_qcqp(coeffs: MinorizerCoefficients, iters: int = 100_000,
                               gap_tol: float = 1e-6):
    """First-order cross-check of the subproblem solver.

    Maximizes min_i of the concave constraint surrogates by projected
    subgradient ascent on the power balls.  Polyak step sizes and the
    stopping certificate come from a Lagrangian dual upper bound that is
    tightened alongside by mirror descent on the simplex of constraint
    weights (each dual evaluation is a closed-form per-user ball
    minimization).  Stops once the certified duality gap falls below
    ``gap_tol`` or the iteration budget is spent.  Returns (x, t).
    """
    n = coeffs.n_users
    C = np.asarray(coeffs.C, dtype=float)
    p = np.asarray(coeffs.p, dtype=float)
    ks = tuple(coeffs.k)
    bs = [np.asarray(bi, dtype=complex).ravel() for bi in coeffs.b]
    Kgrid = [[0.5 * (np.asarray(coeffs.K[j][i], dtype=complex) +
                     np.asarray(coeffs.K[j][i], dtype=complex).conj().T)
              for i in range(n)] for j in range(n)]
    dims = [Kgrid[j][0].shape[0] * ks[j] for j in range(n)]

    def surrogate(x):
        vals = np.empty(n)
        gx = [[None] * n for _ in range(n)]
        for i in range(n):
            acc = C[i] + 2.0 * np.vdot(bs[i], x[i]).real
            for j in range(n):
                v = unvec(x[j], Kgrid[j][i].shape[0], ks[j])
                y = Kgrid[j][i] @ v
                gx[j][i] = vec(y)
                acc += np.vdot(x[j], gx[j][i]).real
            vals[i] = -acc
        return vals, gx

    def project(x):
        out = []
        for j in range(n):
            nrm2 = np.vdot(x[j], x[j]).real
            if p[j] <= 0:
                out.append(np.zeros_like(x[j]))
            elif nrm2 > p[j]:
                out.append(x[j] * np.sqrt(p[j] / nrm2))
            else:
                out.append(x[j])
        return out

    x = [np.zeros(d, dtype=complex) for d in dims]
    lam = np.full(n, 1.0 / n)
    best_val = -np.inf
    best_x = x
    ub = np.inf
    radius = float(np.sqrt(np.sum(p)))
    grad_scale = 1.0
    for it in range(max(1, iters)):
        # dual side: one mirror-descent step on phi(lam) = max_x L(x, lam)
        val_ub, x_resp = _dual_value(C, bs, Kgrid, ks, p, lam)
        ub = min(ub, val_ub)
        resp_vals, _ = surrogate(project(x_resp))
        if float(np.min(resp_vals)) > best_val:
            best_val = float(np.min(resp_vals))
            best_x = project(x_resp)
        if ub - best_val <= gap_tol:
            break
        dual_grad, _ = surrogate(x_resp)  # Danskin: d phi / d lam_i = g_i(x(lam))
        grad_scale = max(grad_scale, float(np.max(np.abs(dual_grad))))
        eta = np.sqrt(np.log(max(n, 2))) / (grad_scale * np.sqrt(it + 1.0))
        w = lam * np.exp(-eta * (dual_grad - np.max(dual_grad)))
        lam = w / np.sum(w)
        # primal side: projected subgradient ascent with a Polyak step
        vals, gx = surrogate(x)
        i0 = int(np.argmin(vals))
        if vals[i0] > best_val:
            best_val = float(vals[i0])
            best_x = [xi.copy() for xi in x]
        d = []
        gnorm2 = 0.0
        for j in range(n):
            dj = -2.0 * gx[j][i0]
            if j == i0:
                dj = dj - 2.0 * bs[i0]
            d.append(dj)
            gnorm2 += float(np.vdot(dj, dj).real)
        if gnorm2 <= 1e-300:
            continue
        step = (ub - vals[i0]) / gnorm2
        step = min(max(step, 0.0), radius / np.sqrt(gnorm2))
        if step <= 0.0:
            step = radius / (np.sqrt(gnorm2) * (it + 1.0))
        x = project([x[j] + step * d[j] for j in range(n)])
    return best_x, float(best_val)
