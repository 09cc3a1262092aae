"""Minorizer construction and the max-min design loops.

The per-user rate is rewritten as logdet(U^H B_i^-1 U) over a lifted
Hermitian PD block B_i that is quadratic in the stacked precoder factors.
Because X -> logdet(U^H X^-1 U) is convex on PD matrices, its linearization
at the current block B_bar minorizes the rate globally:

    logdet(U^H B^-1 U) >= logdet(U^H B_bar^-1 U) - tr{F (B - B_bar)},
    F = B_bar^-1 U (U^H B_bar^-1 U)^-1 U^H B_bar^-1.

Expanding tr{F B} in the stacked variables x_i = vec(X_i) yields the
concave-quadratic surrogate handled by :mod:`maxmin_ic.subproblem`; the
design loop alternates coefficient refresh and subproblem solves until the
subproblem value t stalls within ``epsilon``.

Covariance mode optimizes square factors X_i (M_i x M_i) giving
Q_i = X_i X_i^H; fixed-d mode optimizes tall precoders (M_i x d_i)
directly.  All coefficients are scaled to the configured rate base, so t,
the histories, and ``epsilon`` share the reported units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import chol_logdet, crandn, hermitian_part, is_hermitian, solve_psd, unvec, vec
from .rates import rate_vector
from .subproblem import MinorizerCoefficients, solve as solve_subproblem
from .system import CovarianceSet, PrecoderSet, SystemInstance

__all__ = [
    "LiftedBlock",
    "MmTrace",
    "hermitian_sqrt",
    "build_B",
    "build_F",
    "minorizer_coefficients",
    "minorizer_value",
    "mm_design_covariance",
    "mm_design_precoder_fixed_d",
    "extract_precoders",
    "stationarity_residual",
]


def hermitian_sqrt(Q) -> np.ndarray:
    """Hermitian PSD square root, with negative eigenvalues clamped to 0."""
    q = np.asarray(Q, dtype=complex)
    tol = 1e-10 * (1.0 + float(np.max(np.abs(q), initial=0.0)))
    if not is_hermitian(q, tol):
        raise ValueError("hermitian_sqrt requires a Hermitian input")
    w, e = np.linalg.eigh(hermitian_part(q))
    w = np.clip(w, 0.0, None)
    return (e * np.sqrt(w)) @ e.conj().T


@dataclass(frozen=True)
class LiftedBlock:
    """One user's lifted block B_i with its selector width k_i.

    B_i = [[I_k, X_i^H H_ii^H], [H_ii X_i, Gamma_i + sum_j H_ji X_j X_j^H H_ji^H]]
    and U = [I_k; 0], so the top-left k x k block of B_i^-1 carries the rate.
    """

    B: np.ndarray
    k: int

    @property
    def U(self) -> np.ndarray:
        return np.eye(self.B.shape[0], dtype=complex)[:, :self.k]


def build_B(instance: SystemInstance, X, i: int, gamma=None) -> LiftedBlock:
    """Assemble and PD-verify the lifted block of user i at factors X.

    ``gamma`` overrides the noise covariance slot (used by the robust
    design, whose effective noise carries the estimation-error mass).
    """
    k = X[i].shape[1]
    g = instance.Gamma[i] if gamma is None else gamma
    lower = np.asarray(g, dtype=complex).copy()
    for j in range(instance.config.N):
        hx = instance.H[j][i] @ X[j]
        lower += hx @ hx.conj().T
    hxi = instance.H[i][i] @ X[i]
    b = np.block([
        [np.eye(k, dtype=complex), hxi.conj().T],
        [hxi, lower],
    ])
    b = hermitian_part(b)
    try:
        np.linalg.cholesky(b)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(
            f"lifted block for user {i} is not positive definite; "
            "the noise covariance must be PD") from exc
    return LiftedBlock(B=b, k=k)


def build_F(block: LiftedBlock) -> np.ndarray:
    """Curvature matrix F = B^-1 U (U^H B^-1 U)^-1 U^H B^-1 (Hermitian PSD).

    Equals minus the gradient of X -> logdet(U^H X^-1 U) at X = B (natural
    log); only the first k columns of B^-1 are ever formed.
    """
    n = block.B.shape[0]
    y = solve_psd(block.B, np.eye(n, dtype=complex)[:, :block.k])
    top = hermitian_part(y[:block.k, :])
    f = y @ solve_psd(top, y.conj().T)
    return hermitian_part(f)


def minorizer_coefficients(instance: SystemInstance, blocks, F, gamma=None,
                           error_weights=None) -> MinorizerCoefficients:
    """Expand the linearized surrogate into subproblem data (C_i, b_i, G_ji).

    With F_i partitioned in 2x2 blocks against (k_i, L_i),

        b_i    = vec(H_ii^H (F_i)_12^H),
        K_ji   = H_ji^H (F_i)_22 H_ji          (G_ji = I_{k_j} (x) K_ji),
        C_i    = -logdet(U^H B_i^-1 U) - tr{F_i B_i} + tr{(F_i)_11}
                 + tr{(F_i)_22 Gamma_i},

    so that g_i(x) = -C_i - 2 Re{b_i^H x_i} - sum_j x_j^H G_ji x_j.  All
    terms are scaled to the configured rate base.  ``gamma`` overrides the
    noise matrices entering C_i; ``error_weights[j, i]`` adds the
    channel-uncertainty mass w_ji tr{(F_i)_22} I to K_ji (the trace term
    tr(Q_j) = ||x_j||^2 is exactly quadratic, so the surrogate stays a
    global lower bound).
    """
    cfg = instance.config
    scale = cfg.log_base.scale
    n = cfg.N
    C = np.empty(n)
    b = [None] * n
    K = [[None] * n for _ in range(n)]
    for i in range(n):
        ki = blocks[i].k
        bi_mat = blocks[i].B
        fi = F[i]
        f11 = fi[:ki, :ki]
        f12 = fi[:ki, ki:]
        f22 = hermitian_part(fi[ki:, ki:])
        y = solve_psd(bi_mat, np.eye(bi_mat.shape[0], dtype=complex)[:, :ki])
        logdet_i = chol_logdet(hermitian_part(y[:ki, :]))
        g = instance.Gamma[i] if gamma is None else gamma[i]
        c_nat = (-logdet_i - float(np.trace(fi @ bi_mat).real)
                 + float(np.trace(f11).real) + float(np.trace(f22 @ g).real))
        C[i] = scale * c_nat
        b[i] = scale * vec(instance.H[i][i].conj().T @ f12.conj().T)
        for j in range(n):
            hji = instance.H[j][i]
            kji = scale * hermitian_part(hji.conj().T @ f22 @ hji)
            if error_weights is not None and error_weights[j, i] != 0.0:
                kji = kji + (error_weights[j, i] * scale
                             * float(np.trace(f22).real)) * np.eye(hji.shape[1])
            K[j][i] = kji
    return MinorizerCoefficients(C=C, b=b, K=K,
                                 k=tuple(bl.k for bl in blocks),
                                 p=np.asarray(instance.p, dtype=float))


def minorizer_value(coeffs: MinorizerCoefficients, x) -> np.ndarray:
    """Evaluate the per-user surrogates g_i at stacked vectors x."""
    n = coeffs.n_users
    quads = np.zeros(n)
    for j in range(n):
        m = coeffs.K[j][0].shape[0]
        v = unvec(x[j], m, coeffs.k[j])
        for i in range(n):
            quads[i] += np.vdot(x[j], vec(coeffs.K[j][i] @ v)).real
    vals = np.empty(n)
    for i in range(n):
        vals[i] = -(coeffs.C[i] + 2.0 * np.vdot(coeffs.b[i], x[i]).real + quads[i])
    return vals


@dataclass(frozen=True)
class MmTrace:
    """Convergence record of one design run.

    ``minrate_history`` is nondecreasing up to 1e-6 slack (surrogate
    ascent); ``stationarity_residual`` is NaN for fixed-d designs, whose
    rank restriction need not be stationary for the covariance program.
    """

    t_history: np.ndarray
    minrate_history: np.ndarray
    rates_history: np.ndarray
    iterations: int
    converged: bool
    stationarity_residual: float


def _init_factors(rng, dims, p):
    """CSCG initial factors scaled so ||x_i||^2 = p_i exactly."""
    out = []
    for (m, k), pj in zip(dims, p):
        if pj <= 0 or k == 0:
            out.append(np.zeros((m, k), dtype=complex))
            continue
        a = crandn(rng, (m, k))
        a *= np.sqrt(pj) / np.linalg.norm(a)
        out.append(a)
    return out


def _mm_loop(instance, dims, builder, rate_fn, epsilon, max_iters, init_seed,
             qcqp_tol):
    rng = np.random.default_rng(init_seed)
    X = _init_factors(rng, dims, instance.p)
    t_hist, minrate_hist, rates_hist = [], [], []
    t_prev = None
    converged = False
    iterations = 0
    for it in range(1, max_iters + 1):
        iterations = it
        coeffs = builder(X)
        try:
            sol = solve_subproblem(coeffs, tol=qcqp_tol)
        except ValueError as exc:
            raise RuntimeError(f"subproblem rejected at design iteration {it}: {exc}") from exc
        g_old = float(np.min(minorizer_value(coeffs, [vec(xj) for xj in X])))
        g_new = float(np.min(minorizer_value(coeffs, sol.x)))
        if g_new >= g_old:
            X_next = [unvec(sol.x[j], *dims[j]) for j in range(instance.config.N)]
            t_cur = sol.t
        else:
            # solver tolerance exhausted: keep the iterate, let t stall
            X_next = X
            t_cur = g_old
        rates = rate_fn(X_next)
        minr = float(np.min(rates))
        if minrate_hist and minr < minrate_hist[-1] - 1e-6:
            raise RuntimeError(
                f"min-rate decreased by {minrate_hist[-1] - minr:.3e} at design "
                f"iteration {it}; surrogate ascent forbids this, so the "
                "subproblem solution is unsound")
        t_hist.append(t_cur)
        minrate_hist.append(minr)
        rates_hist.append(rates)
        X = X_next
        if t_prev is not None and abs(t_cur - t_prev) <= epsilon:
            converged = True
            break
        t_prev = t_cur
    return (X, np.asarray(t_hist), np.asarray(minrate_hist),
            np.asarray(rates_hist), iterations, converged)


def _cov_of(X) -> CovarianceSet:
    return CovarianceSet(Q=[hermitian_part(xj @ xj.conj().T) for xj in X])


def mm_design_covariance(instance: SystemInstance, *, epsilon=None, max_iters=None,
                         init_seed: int = 0, qcqp_tol: float = 1e-7,
                         stationarity_directions: int = 64):
    """Design the transmit covariances maximizing the minimum rate.

    Returns (CovarianceSet, MmTrace).  Stops when |t(k) - t(k-1)| falls
    below ``epsilon`` (defaults from the instance config) or at the
    iteration cap.
    """
    cfg = instance.config
    eps = cfg.epsilon if epsilon is None else epsilon
    cap = cfg.max_iters if max_iters is None else max_iters
    dims = [(m, m) for m in cfg.M]

    def builder(X):
        blocks = [build_B(instance, X, i) for i in range(cfg.N)]
        F = [build_F(bl) for bl in blocks]
        return minorizer_coefficients(instance, blocks, F)

    def rate_fn(X):
        return rate_vector(instance, _cov_of(X))

    X, t_h, mr_h, r_h, iters, conv = _mm_loop(
        instance, dims, builder, rate_fn, eps, cap, init_seed, qcqp_tol)
    cov = _cov_of(X)
    resid = stationarity_residual(instance, cov,
                                  n_directions=stationarity_directions)
    trace = MmTrace(t_history=t_h, minrate_history=mr_h, rates_history=r_h,
                    iterations=iters, converged=conv,
                    stationarity_residual=resid)
    return cov, trace


def mm_design_precoder_fixed_d(instance: SystemInstance, d, *, epsilon=None,
                               max_iters=None, init_seed: int = 0,
                               qcqp_tol: float = 1e-7):
    """Design tall precoders V_i for given stream lengths d_i.

    Same loop as the covariance design with the selector width k_i = d_i;
    a strict restriction of the covariance program, so its min rate never
    exceeds the covariance-mode value.  Returns (PrecoderSet, MmTrace).
    """
    cfg = instance.config
    if np.isscalar(d):
        d = (int(d),) * cfg.N
    d = tuple(int(v) for v in d)
    if len(d) != cfg.N or any(v < 0 or v > m for v, m in zip(d, cfg.M)):
        raise ValueError("need 0 <= d_i <= M_i for every user")
    eps = cfg.epsilon if epsilon is None else epsilon
    cap = cfg.max_iters if max_iters is None else max_iters
    dims = [(m, di) for m, di in zip(cfg.M, d)]

    def builder(X):
        blocks = [build_B(instance, X, i) for i in range(cfg.N)]
        F = [build_F(bl) for bl in blocks]
        return minorizer_coefficients(instance, blocks, F)

    def rate_fn(X):
        return rate_vector(instance, _cov_of(X))

    X, t_h, mr_h, r_h, iters, conv = _mm_loop(
        instance, dims, builder, rate_fn, eps, cap, init_seed, qcqp_tol)
    trace = MmTrace(t_history=t_h, minrate_history=mr_h, rates_history=r_h,
                    iterations=iters, converged=conv,
                    stationarity_residual=float("nan"))
    return PrecoderSet.from_matrices(X), trace


def extract_precoders(cov: CovarianceSet, rel_threshold: float = 1e-8) -> PrecoderSet:
    """Factor each Q_i into V_i with eigenvalue thresholding.

    Eigenpairs with lambda >= rel_threshold * lambda_max are kept (in
    descending order), so d_i is the numerically significant rank and the
    dropped mass bounds ||V_i V_i^H - Q_i||_F.
    """
    V = []
    for q in cov.Q:
        w, e = np.linalg.eigh(hermitian_part(np.asarray(q, dtype=complex)))
        wmax = float(w[-1]) if w.size else 0.0
        if wmax <= 0:
            V.append(np.zeros((q.shape[0], 0), dtype=complex))
            continue
        keep = np.where(w >= rel_threshold * wmax)[0][::-1]  # descending
        V.append(e[:, keep] * np.sqrt(w[keep]))
    return PrecoderSet.from_matrices(V)


def _nominal_rate_grads(instance: SystemInstance, cov: CovarianceSet):
    """Closed-form gradients d R_i / d Q_j, in the configured base.

    From R_i = logdet(T_i) - logdet(C_i) with T_i the total received
    covariance and C_i its interference-plus-noise part.
    """
    cfg = instance.config
    scale = cfg.log_base.scale
    grads = [[None] * cfg.N for _ in range(cfg.N)]
    for i in range(cfg.N):
        c = instance.Gamma[i].astype(complex).copy()
        for j in range(cfg.N):
            if j != i:
                hji = instance.H[j][i]
                c += hji @ cov.Q[j] @ hji.conj().T
        hii = instance.H[i][i]
        t = c + hii @ cov.Q[i] @ hii.conj().T
        tinv = solve_psd(hermitian_part(t), np.eye(t.shape[0], dtype=complex))
        cinv = solve_psd(hermitian_part(c), np.eye(c.shape[0], dtype=complex))
        for j in range(cfg.N):
            hji = instance.H[j][i]
            g = hji.conj().T @ tinv @ hji
            if j != i:
                g = g - hji.conj().T @ cinv @ hji
            grads[i][j] = scale * hermitian_part(g)
    return grads


def directional_residual(instance: SystemInstance, cov: CovarianceSet, rates,
                         grads, *, n_directions: int = 64, seed: int = 0,
                         active_tol: float = 1e-6) -> float:
    """Largest positive ascent derivative of the min rate over sampled
    feasible directions.

    Directions point from Q toward random feasible covariance sets (plus
    the zero and isotropic targets), jointly normalized to unit Frobenius
    norm; they are trace-nonincreasing whenever the power is tight.  The
    derivative of the min is the minimum over the active users' gradients.
    """
    cfg = instance.config
    rng = np.random.default_rng(seed)
    minr = float(np.min(rates))
    active = [i for i in range(cfg.N)
              if rates[i] <= minr + active_tol * (1.0 + abs(minr))]
    best = 0.0
    for s in range(n_directions + 2):
        targets = []
        for j in range(cfg.N):
            m = cfg.M[j]
            if s == 0:
                targets.append(np.zeros((m, m), dtype=complex))
            elif s == 1:
                targets.append((instance.p[j] / m) * np.eye(m, dtype=complex))
            else:
                w = crandn(rng, (m, m))
                a = w @ w.conj().T
                tr = float(np.trace(a).real)
                u = rng.uniform()
                targets.append(a * (u * instance.p[j] / tr) if tr > 0 else a * 0)
        D = [targets[j] - cov.Q[j] for j in range(cfg.N)]
        nrm = np.sqrt(sum(float(np.sum(np.abs(dj) ** 2)) for dj in D))
        if nrm <= 1e-14:
            continue
        val = min(sum(float(np.trace(grads[i][j] @ D[j]).real) for j in range(cfg.N))
                  for i in active) / nrm
        best = max(best, val)
    return best


def stationarity_residual(instance: SystemInstance, cov: CovarianceSet, *,
                          n_directions: int = 64, seed: int = 0,
                          active_tol: float = 1e-6) -> float:
    """First-order stationarity diagnostic of the max-min program at Q.

    A value near zero certifies that no sampled feasible direction has a
    positive directional derivative of min_i R_i; at a converged design
    point this matches the surrogate's tangent derivative.
    """
    rates = rate_vector(instance, cov)
    grads = _nominal_rate_grads(instance, cov)
    return directional_residual(instance, cov, rates, grads,
                                n_directions=n_directions, seed=seed,
                                active_tol=active_tol)
