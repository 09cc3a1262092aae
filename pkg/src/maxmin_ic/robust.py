"""Worst-case design under noise-covariance and CSI uncertainty.

The channel is modeled as H = H_hat + Z with uncorrelated i.i.d. entries
(variances rho^2 sigma^2 and (1 - rho^2) sigma^2), so the estimation error
enters the achievable-rate lower bound only through

    E{Z_ji Q'_j Z_ji^H} = (1 - rho_ji^2) sigma_ji^2 tr{Q'_j} I.

Noise covariances are known within a spectral-norm ball
||Gamma_i - Gamma_hat_i||_2 <= zeta_i, whose worst case is the shifted
nominal Gamma'_i = Gamma_hat_i + zeta_i I (Loewner-largest member, hence
rate-smallest).  The robust design therefore runs the same surrogate loop
against the worst-case rate R'_i: Gamma is replaced by Gamma'_i plus the
design-dependent error mass, which stays inside the quadratic form of the
surrogate.  With rho = 1 and zeta = 0 every operation reduces exactly to
its nominal counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import chol_logdet, crandn, hermitian_part, is_hermitian, min_eigval, solve_psd
from .mm import MmTrace, _cov_of, _mm_loop, build_B, build_F, directional_residual, minorizer_coefficients
from .subproblem import MinorizerCoefficients
from .system import CovarianceSet, SystemConfig, SystemInstance, power_budgets

__all__ = [
    "UncertaintyModel",
    "EstimatedChannels",
    "worst_case_noise",
    "effective_noise_cov",
    "robust_rate",
    "robust_rate_vector",
    "robust_min_rate",
    "error_expectation_check",
    "draw_estimated_channels",
    "estimated_instance",
    "sample_noise_in_ball",
    "robust_minorizer_coefficients",
    "mm_design_robust",
    "loss_parameter",
]


@dataclass(frozen=True)
class UncertaintyModel:
    """CSI accuracies, channel variances, and noise-covariance radii.

    rho[j, i] and sigma2[j, i] describe the link from transmitter j to
    receiver i; zeta[i] is the spectral-norm radius around the nominal
    noise covariance Gamma_hat[i].
    """

    rho: np.ndarray
    sigma2: np.ndarray
    zeta: np.ndarray
    Gamma_hat: list

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        object.__setattr__(self, "sigma2", np.asarray(self.sigma2, dtype=float))
        object.__setattr__(self, "zeta", np.asarray(self.zeta, dtype=float))
        if np.any(self.rho < 0) or np.any(self.rho > 1):
            raise ValueError("rho entries must lie in [0, 1]")
        if np.any(self.sigma2 <= 0):
            raise ValueError("sigma2 entries must be positive")
        if np.any(self.zeta < 0):
            raise ValueError("zeta entries must be nonnegative")
        for i, g in enumerate(self.Gamma_hat):
            if not is_hermitian(np.asarray(g), 1e-12) or min_eigval(g) <= 0:
                raise ValueError(f"Gamma_hat[{i}] must be Hermitian positive definite")

    @classmethod
    def broadcast(cls, config: SystemConfig, rho, sigma2=1.0, zeta=0.0,
                  Gamma_hat=None) -> "UncertaintyModel":
        """Scalars broadcast to full grids; identity nominal noise by default."""
        n = config.N
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (n, n)).copy()
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (n, n)).copy()
        zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (n,)).copy()
        if Gamma_hat is None:
            Gamma_hat = [np.eye(li, dtype=complex) for li in config.L]
        return cls(rho=rho, sigma2=sigma2, zeta=zeta, Gamma_hat=Gamma_hat)

    @property
    def error_weights(self) -> np.ndarray:
        """w[j, i] = (1 - rho_ji^2) sigma_ji^2, the error-mass coefficients."""
        return (1.0 - self.rho ** 2) * self.sigma2


@dataclass(frozen=True)
class EstimatedChannels:
    """Estimates H_hat plus the (test-only) errors Z, with H = H_hat + Z."""

    H_hat: list
    Z: list


def worst_case_noise(Gamma_hat_i, zeta_i: float) -> np.ndarray:
    """Worst-case member of the spectral-norm ball: Gamma_hat + zeta I."""
    g = np.asarray(Gamma_hat_i, dtype=complex)
    return g + zeta_i * np.eye(g.shape[0])


def effective_noise_cov(model: UncertaintyModel, instance: SystemInstance,
                        cov: CovarianceSet, i: int) -> np.ndarray:
    """Gamma'_i plus the accumulated estimation-error mass.

    Gamma'_i + sum_j (1 - rho_ji^2) sigma_ji^2 tr(Q'_j) I_{L_i}.
    """
    g = worst_case_noise(model.Gamma_hat[i], model.zeta[i])
    w = model.error_weights
    li = g.shape[0]
    mass = sum(w[j, i] * float(np.trace(cov.Q[j]).real)
               for j in range(instance.config.N))
    return g + mass * np.eye(li)


def robust_rate(model: UncertaintyModel, instance: SystemInstance,
                cov: CovarianceSet, i: int, gamma=None) -> float:
    """Worst-case rate lower bound R'_i of user i.

    ``instance`` carries the estimated channels; ``gamma`` substitutes an
    explicit noise covariance for Gamma'_i (used when sampling the
    uncertainty ball), keeping the error mass.
    """
    cfg = instance.config
    if gamma is None:
        gamma = worst_case_noise(model.Gamma_hat[i], model.zeta[i])
    w = model.error_weights
    mass = sum(w[j, i] * float(np.trace(cov.Q[j]).real) for j in range(cfg.N))
    c = np.asarray(gamma, dtype=complex) + mass * np.eye(gamma.shape[0])
    for j in range(cfg.N):
        if j != i:
            hji = instance.H[j][i]
            c += hji @ cov.Q[j] @ hji.conj().T
    hii = instance.H[i][i]
    t = c + hii @ cov.Q[i] @ hii.conj().T
    val = chol_logdet(hermitian_part(t)) - chol_logdet(hermitian_part(c))
    return val * cfg.log_base.scale


def robust_rate_vector(model, instance, cov) -> np.ndarray:
    return np.array([robust_rate(model, instance, cov, i)
                     for i in range(instance.config.N)])


def robust_min_rate(model, instance, cov) -> float:
    return float(np.min(robust_rate_vector(model, instance, cov)))


def error_expectation_check(rho: float, sigma2: float, Vprime, samples: int,
                            L: int, seed: int = 0) -> np.ndarray:
    """Monte-Carlo average of Z V' V'^H Z^H over i.i.d. error draws.

    The analytic value is (1 - rho^2) sigma2 tr{V' V'^H} I_L; the test
    contract compares at >= 1e4 samples.
    """
    v = np.asarray(Vprime, dtype=complex)
    m = v.shape[0]
    var = (1.0 - rho ** 2) * sigma2
    if var == 0.0 or not np.any(np.abs(v) > 0):
        return np.zeros((L, L), dtype=complex)
    rng = np.random.default_rng(seed)
    acc = np.zeros((L, L), dtype=complex)
    chunk = 2000
    done = 0
    q = v @ v.conj().T
    while done < samples:
        nb = min(chunk, samples - done)
        z = crandn(rng, (nb, L, m)) * np.sqrt(var)
        acc += np.einsum("blm,mn,bkn->lk", z, q, z.conj())
        done += nb
    return acc / samples


def draw_estimated_channels(config: SystemConfig, model: UncertaintyModel,
                            rng=None) -> EstimatedChannels:
    """Draw estimates and errors with the modeled variance split."""
    n = config.N
    if rng is None:
        rng = np.random.default_rng(config.seed)
    H_hat = [[None] * n for _ in range(n)]
    Z = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            shape = (config.L[i], config.M[j])
            s2 = model.sigma2[j, i]
            H_hat[j][i] = crandn(rng, shape) * np.sqrt(model.rho[j, i] ** 2 * s2)
            Z[j][i] = crandn(rng, shape) * np.sqrt((1.0 - model.rho[j, i] ** 2) * s2)
    return EstimatedChannels(H_hat=H_hat, Z=Z)


def estimated_instance(config: SystemConfig, model: UncertaintyModel,
                       H_hat) -> SystemInstance:
    """Instance carrying the estimated channels and the nominal noise."""
    p = power_budgets(config, model.Gamma_hat)
    return SystemInstance(config=config, H=H_hat,
                          Gamma=[np.asarray(g, dtype=complex)
                                 for g in model.Gamma_hat], p=p)


def sample_noise_in_ball(Gamma_hat, zeta: float, rng) -> np.ndarray:
    """Random PSD member of {Gamma : ||Gamma - Gamma_hat||_2 <= zeta}.

    A random Hermitian perturbation scaled to spectral norm <= zeta, with a
    PSD projection afterwards.
    """
    g = np.asarray(Gamma_hat, dtype=complex)
    li = g.shape[0]
    a = crandn(rng, (li, li))
    s = hermitian_part(a)
    nrm = float(np.linalg.norm(s, 2))
    if nrm > 0:
        s = s * (rng.uniform() / nrm)
    cand = g + zeta * s
    w, e = np.linalg.eigh(hermitian_part(cand))
    return (e * np.clip(w, 0.0, None)) @ e.conj().T


def _robust_builder(instance: SystemInstance, model: UncertaintyModel):
    cfg = instance.config
    w = model.error_weights
    gamma_prime = [worst_case_noise(model.Gamma_hat[i], model.zeta[i])
                   for i in range(cfg.N)]

    def build(X):
        tr_x = [float(np.sum(np.abs(xj) ** 2)) for xj in X]
        blocks = []
        for i in range(cfg.N):
            mass = sum(w[j, i] * tr_x[j] for j in range(cfg.N))
            gamma_eff = gamma_prime[i] + mass * np.eye(gamma_prime[i].shape[0])
            blocks.append(build_B(instance, X, i, gamma=gamma_eff))
        F = [build_F(bl) for bl in blocks]
        return minorizer_coefficients(instance, blocks, F, gamma=gamma_prime,
                                      error_weights=w)

    return build


def robust_minorizer_coefficients(model: UncertaintyModel, instance: SystemInstance,
                                  X) -> MinorizerCoefficients:
    """Surrogate coefficients of the worst-case rate at expansion factors X.

    Identical to the nominal coefficients except that Gamma'_i enters B_i
    and C_i, and every K_ji gains the scaled identity
    (1 - rho_ji^2) sigma_ji^2 tr{(F_i)_22} I.
    """
    return _robust_builder(instance, model)(X)


def mm_design_robust(model: UncertaintyModel, instance: SystemInstance, *,
                     epsilon=None, max_iters=None, init_seed: int = 0,
                     qcqp_tol: float = 1e-7, stationarity_directions: int = 64):
    """Covariance design maximizing the worst-case minimum rate R'.

    Same loop and guarantees as the nominal design; with rho = 1 and
    zeta = 0 the trajectory coincides with it from the same init.
    Returns (CovarianceSet, MmTrace).
    """
    cfg = instance.config
    eps = cfg.epsilon if epsilon is None else epsilon
    cap = cfg.max_iters if max_iters is None else max_iters
    dims = [(m, m) for m in cfg.M]
    builder = _robust_builder(instance, model)

    def rate_fn(X):
        return robust_rate_vector(model, instance, _cov_of(X))

    X, t_h, mr_h, r_h, iters, conv = _mm_loop(
        instance, dims, builder, rate_fn, eps, cap, init_seed, qcqp_tol)
    cov = _cov_of(X)
    resid = _robust_stationarity_residual(model, instance, cov,
                                          n_directions=stationarity_directions)
    trace = MmTrace(t_history=t_h, minrate_history=mr_h, rates_history=r_h,
                    iterations=iters, converged=conv,
                    stationarity_residual=resid)
    return cov, trace


def _robust_rate_grads(model, instance, cov):
    """Gradients d R'_i / d Q_j; the error mass adds tr(.^-1) I terms."""
    cfg = instance.config
    scale = cfg.log_base.scale
    w = model.error_weights
    grads = [[None] * cfg.N for _ in range(cfg.N)]
    for i in range(cfg.N):
        gamma = worst_case_noise(model.Gamma_hat[i], model.zeta[i])
        mass = sum(w[j, i] * float(np.trace(cov.Q[j]).real) for j in range(cfg.N))
        c = gamma + mass * np.eye(gamma.shape[0])
        for j in range(cfg.N):
            if j != i:
                hji = instance.H[j][i]
                c = c + hji @ cov.Q[j] @ hji.conj().T
        hii = instance.H[i][i]
        t = c + hii @ cov.Q[i] @ hii.conj().T
        tinv = solve_psd(hermitian_part(t), np.eye(t.shape[0], dtype=complex))
        cinv = solve_psd(hermitian_part(c), np.eye(c.shape[0], dtype=complex))
        tr_tinv = float(np.trace(tinv).real)
        tr_cinv = float(np.trace(cinv).real)
        for j in range(cfg.N):
            hji = instance.H[j][i]
            g = hji.conj().T @ tinv @ hji + w[j, i] * tr_tinv * np.eye(hji.shape[1])
            g = g - (w[j, i] * tr_cinv * np.eye(hji.shape[1]))
            if j != i:
                g = g - hji.conj().T @ cinv @ hji
            grads[i][j] = scale * hermitian_part(g)
    return grads


def _robust_stationarity_residual(model, instance, cov, *, n_directions=64,
                                  seed=0, active_tol=1e-6) -> float:
    rates = robust_rate_vector(model, instance, cov)
    grads = _robust_rate_grads(model, instance, cov)
    return directional_residual(instance, cov, rates, grads,
                                n_directions=n_directions, seed=seed,
                                active_tol=active_tol)


def loss_parameter(minrate_nonrobust_worstcase: float, minrate_robust: float) -> float:
    """Relative penalty of the non-robust design, L = 1 - R_nr / R_r.

    Undefined (NaN) when the robust rate is zero.
    """
    if minrate_robust <= 0:
        return float("nan")
    return 1.0 - minrate_nonrobust_worstcase / minrate_robust
