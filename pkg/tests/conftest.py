"""Shared builders for randomized test instances."""

import numpy as np

from maxmin_ic.linalg import crandn
from maxmin_ic.subproblem import MinorizerCoefficients
from maxmin_ic.system import (CovarianceSet, PrecoderSet, SystemConfig,
                              SystemInstance, generate_channels)


def small_config(rng, n_max=3, dim_max=4, log_base="natural", snr_db=None):
    """Random small system config (dims <= dim_max, N <= n_max)."""
    n = int(rng.integers(1, n_max + 1))
    m = tuple(int(rng.integers(1, dim_max + 1)) for _ in range(n))
    ell = tuple(int(rng.integers(1, dim_max + 1)) for _ in range(n))
    snr = float(rng.uniform(0, 15)) if snr_db is None else snr_db
    return SystemConfig(N=n, M=m, L=ell, snr_db=snr,
                        seed=int(rng.integers(2 ** 31)), log_base=log_base)


def random_instance(rng, **kw):
    return generate_channels(small_config(rng, **kw))


def scalar_instance(h, gamma, p, log_base="natural"):
    """Instance with all M_i = L_i = 1 from a gain matrix h[j][i]."""
    n = len(h)
    config = SystemConfig(N=n, M=(1,) * n, L=(1,) * n, seed=0, log_base=log_base)
    H = [[np.array([[complex(h[j][i])]]) for i in range(n)] for j in range(n)]
    Gamma = [np.array([[complex(g)]]) for g in gamma]
    return SystemInstance(config=config, H=H, Gamma=Gamma,
                          p=np.asarray(p, dtype=float))


def random_precoders(rng, instance, power_frac=1.0, d=None):
    """Random feasible precoder set, full rank, power_frac of the budget."""
    cfg = instance.config
    vs = []
    for i in range(cfg.N):
        di = d if d is not None else min(cfg.M[i], cfg.L[i])
        v = crandn(rng, (cfg.M[i], di))
        v *= np.sqrt(power_frac * instance.p[i]) / np.linalg.norm(v)
        vs.append(v)
    return PrecoderSet.from_matrices(vs)


def cov_of(pre):
    return CovarianceSet(Q=[v @ v.conj().T for v in pre.V])


def random_coefficients(rng, n=2, m=2, k=2, c_scale=1.0):
    """Random feasible subproblem data with PSD Kronecker factors."""
    C = c_scale * rng.standard_normal(n)
    b = [crandn(rng, (m * k,)) for _ in range(n)]
    K = [[None] * n for _ in range(n)]
    for j in range(n):
        for i in range(n):
            a = crandn(rng, (m, m))
            K[j][i] = (a @ a.conj().T) / m
    p = rng.uniform(0.5, 4.0, size=n)
    return MinorizerCoefficients(C=C, b=b, K=K, k=(k,) * n, p=p)
