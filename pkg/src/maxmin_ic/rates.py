"""LMMSE decoding and the equivalent per-user rate formulations.

Four routes to the same per-user rate:

* ``rate_with_decoder``  -- explicit linear decoder W_i,
* ``rate_lmmse``         -- reduced form after substituting the LMMSE decoder,
* ``rate_from_cov``      -- covariance form in Q_i = V_i V_i^H,
* ``rate_schur``         -- lifted block form logdet(U^H B_i^{-1} U).

Rates are returned in the base selected by ``config.log_base``.  Decoder
sets are plain lists of d_i x L_i arrays; rate vectors are plain float
arrays.  A user with d_i = 0 has rate 0 by definition.
"""

from __future__ import annotations

import numpy as np

from .linalg import chol_logdet, solve_psd
from .system import CovarianceSet, PrecoderSet, SystemInstance

__all__ = [
    "DegenerateDecoderError",
    "interference_noise_cov",
    "lmmse_decoder",
    "rate_with_decoder",
    "rate_lmmse",
    "rate_from_cov",
    "rate_schur",
    "rate_vector",
    "min_rate",
]


class DegenerateDecoderError(ValueError):
    """The decoder output covariance W_i C W_i^H is rank deficient."""


def interference_noise_cov(instance: SystemInstance, pre: PrecoderSet, i: int) -> np.ndarray:
    """Interference-plus-noise covariance at receiver i.

    C = Gamma_i + sum_{j != i} H_ji V_j V_j^H H_ji^H, Hermitian PD.
    """
    c = instance.Gamma[i].astype(complex).copy()
    for j in range(instance.config.N):
        if j == i:
            continue
        hv = instance.H[j][i] @ pre.V[j]
        c += hv @ hv.conj().T
    return c


def _total_cov(instance: SystemInstance, pre: PrecoderSet, i: int) -> np.ndarray:
    c = instance.Gamma[i].astype(complex).copy()
    for j in range(instance.config.N):
        hv = instance.H[j][i] @ pre.V[j]
        c += hv @ hv.conj().T
    return c


def lmmse_decoder(instance: SystemInstance, pre: PrecoderSet, i: int) -> np.ndarray:
    """LMMSE decoder W_i = V_i^H H_ii^H (sum_j H_ji V_j V_j^H H_ji^H + Gamma_i)^-1."""
    total = _total_cov(instance, pre, i)
    hv = instance.H[i][i] @ pre.V[i]
    return solve_psd(total, hv).conj().T


def rate_with_decoder(instance: SystemInstance, pre: PrecoderSet, W, i: int) -> float:
    """Rate of user i under an explicit decoder W_i.

    logdet(I + W H V V^H H^H W^H (W C W^H)^-1) in the configured base.
    Raises :class:`DegenerateDecoderError` if W_i C W_i^H is singular.
    """
    wi = np.asarray(W[i])
    if wi.shape[0] == 0:
        return 0.0
    c = interference_noise_cov(instance, pre, i)
    s = wi @ c @ wi.conj().T
    a = wi @ instance.H[i][i] @ pre.V[i]
    try:
        val = chol_logdet(s + a @ a.conj().T) - chol_logdet(s)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDecoderError(
            f"decoder {i} yields a rank-deficient output covariance") from exc
    return val * instance.config.log_base.scale


def rate_lmmse(instance: SystemInstance, pre: PrecoderSet, i: int) -> float:
    """Rate of user i under the LMMSE decoder (reduced form).

    logdet(I_{d_i} + V_i^H H_ii^H C^-1 H_ii V_i) with C the
    interference-plus-noise covariance.
    """
    if pre.d[i] == 0:
        return 0.0
    c = interference_noise_cov(instance, pre, i)
    hv = instance.H[i][i] @ pre.V[i]
    a = np.eye(pre.d[i], dtype=complex) + hv.conj().T @ solve_psd(c, hv)
    return chol_logdet(a) * instance.config.log_base.scale


def rate_from_cov(instance: SystemInstance, cov: CovarianceSet, i: int) -> float:
    """Rate of user i from transmit covariances.

    logdet(I_{L_i} + H_ii Q_i H_ii^H C^-1), computed as
    logdet(C + H_ii Q_i H_ii^H) - logdet(C).
    """
    c = instance.Gamma[i].astype(complex).copy()
    for j in range(instance.config.N):
        if j != i:
            hji = instance.H[j][i]
            c += hji @ cov.Q[j] @ hji.conj().T
    hii = instance.H[i][i]
    t = c + hii @ cov.Q[i] @ hii.conj().T
    val = chol_logdet(0.5 * (t + t.conj().T)) - chol_logdet(0.5 * (c + c.conj().T))
    return val * instance.config.log_base.scale


def rate_schur(instance: SystemInstance, Vtilde, i: int) -> float:
    """Rate of user i via the lifted block form logdet(U^H B_i^-1 U)."""
    from .mm import build_B  # deferred: mm imports this module for the loop

    block = build_B(instance, Vtilde, i)
    y = solve_psd(block.B, np.eye(block.B.shape[0], dtype=complex)[:, :block.k])
    top = y[:block.k, :]
    return chol_logdet(0.5 * (top + top.conj().T)) * instance.config.log_base.scale


def rate_vector(instance: SystemInstance, cov: CovarianceSet) -> np.ndarray:
    return np.array([rate_from_cov(instance, cov, i) for i in range(instance.config.N)])


def min_rate(instance: SystemInstance, cov: CovarianceSet) -> float:
    """Worst user rate, the design objective."""
    return float(np.min(rate_vector(instance, cov)))
