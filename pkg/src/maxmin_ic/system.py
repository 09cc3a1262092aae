"""N-user MIMO interference channel instances.

Dimensions, per-transmitter power budgets, channel matrices, and noise
covariances for one channel realization, plus reproducible random
generation, validation, and the JSON interchange format used by the CLI.

All types are immutable after construction and safe to share read-only
across workers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import crandn, is_hermitian, min_eigval

__all__ = [
    "LogBase",
    "SystemConfig",
    "SystemInstance",
    "CovarianceSet",
    "PrecoderSet",
    "generate_channels",
    "power_budgets",
    "validate",
    "covariance_violations",
    "precoder_violations",
    "instance_to_json",
    "instance_from_json",
    "save_instance",
    "load_instance",
]


class LogBase(str, enum.Enum):
    """Logarithm base for reported rates."""

    NATURAL = "natural"
    BASE2 = "base2"

    @property
    def scale(self) -> float:
        """Multiplier converting a natural-log rate to this base."""
        return 1.0 if self is LogBase.NATURAL else 1.0 / float(np.log(2.0))


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and run parameters for an N-user interference channel.

    SNR is defined as L_i * p_i / tr(Gamma_i), so the power budget derived
    from it is p_i = 10**(snr_db / 10) * tr(Gamma_i) / L_i.  ``epsilon`` is
    the stop tolerance on |t(k) - t(k-1)| of the design loop, in the rate
    units selected by ``log_base``.
    """

    N: int = 3
    M: tuple = (4, 4, 4)
    L: tuple = (4, 4, 4)
    snr_db: float = 15.0
    seed: int = 0
    epsilon: float = 1e-3
    max_iters: int = 500
    log_base: LogBase = LogBase.BASE2

    def __post_init__(self):
        object.__setattr__(self, "M", tuple(int(m) for m in self.M))
        object.__setattr__(self, "L", tuple(int(v) for v in self.L))
        object.__setattr__(self, "log_base", LogBase(self.log_base))
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if len(self.M) != self.N or len(self.L) != self.N:
            raise ValueError("M and L must each have N entries")
        if min(self.M) < 1 or min(self.L) < 1:
            raise ValueError("antenna counts must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @property
    def snr_linear(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "M": list(self.M),
            "L": list(self.L),
            "snr_db": self.snr_db,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "max_iters": self.max_iters,
            "log_base": self.log_base.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        known = {f: d[f] for f in ("N", "M", "L", "snr_db", "seed", "epsilon",
                                   "max_iters", "log_base") if f in d}
        return cls(**known)


@dataclass(frozen=True)
class SystemInstance:
    """One realization of the interference channel.

    ``H[j][i]`` is the L_i x M_j channel from transmitter j to receiver i;
    ``Gamma[i]`` the Hermitian positive definite noise covariance at
    receiver i; ``p[i]`` the power budget of transmitter i (linear scale).
    """

    config: SystemConfig
    H: list
    Gamma: list
    p: np.ndarray


def power_budgets(config: SystemConfig, Gamma) -> np.ndarray:
    """Per-transmitter powers implied by the SNR definition."""
    return np.array([config.snr_linear * float(np.trace(g).real) / g.shape[0]
                     for g in Gamma])


def generate_channels(config: SystemConfig, rng=None) -> SystemInstance:
    """Draw one instance: i.i.d. CSCG unit-variance channels, white noise.

    Deterministic given ``config.seed`` when ``rng`` is omitted: receiver i
    gets its own substream spawned from the seed, so instances are stable
    under parallel trial execution.
    """
    n = config.N
    if rng is None:
        streams = [np.random.default_rng(s)
                   for s in np.random.SeedSequence(config.seed).spawn(n)]
    else:
        streams = [rng] * n
    H = [[None] * n for _ in range(n)]
    for i in range(n):
        g = streams[i]
        for j in range(n):
            H[j][i] = crandn(g, (config.L[i], config.M[j]))
    Gamma = [np.eye(li, dtype=complex) for li in config.L]
    p = power_budgets(config, Gamma)
    return SystemInstance(config=config, H=H, Gamma=Gamma, p=p)


def validate(instance: SystemInstance) -> list:
    """Return human-readable invariant violations (empty list if well formed)."""
    cfg = instance.config
    out = []
    if len(instance.H) != cfg.N or any(len(row) != cfg.N for row in instance.H):
        out.append(f"H must be an {cfg.N}x{cfg.N} grid of matrices")
        return out
    for j in range(cfg.N):
        for i in range(cfg.N):
            got = np.shape(instance.H[j][i])
            want = (cfg.L[i], cfg.M[j])
            if got != want:
                out.append(f"H[{j}][{i}] has shape {got}, expected {want}")
    if len(instance.Gamma) != cfg.N:
        out.append("Gamma must have N entries")
        return out
    for i, g in enumerate(instance.Gamma):
        if np.shape(g) != (cfg.L[i], cfg.L[i]):
            out.append(f"Gamma_{i} has shape {np.shape(g)}, expected "
                       f"({cfg.L[i]}, {cfg.L[i]})")
            continue
        if not is_hermitian(np.asarray(g), 1e-12):
            out.append(f"Gamma_{i} is not Hermitian within 1e-12")
        elif min_eigval(g) <= 0:
            out.append(f"Gamma_{i} is not positive definite "
                       f"(min eigenvalue {min_eigval(g):.3e})")
    p = np.asarray(instance.p, dtype=float)
    if p.shape != (cfg.N,):
        out.append("p must have N entries")
    else:
        for i in range(cfg.N):
            if not p[i] >= 0:
                out.append(f"p_{i} = {p[i]} is negative")
    return out


@dataclass(frozen=True)
class CovarianceSet:
    """Per-user transmit covariances Q_i = V_i V_i^H (Hermitian PSD)."""

    Q: list

    def traces(self) -> np.ndarray:
        return np.array([float(np.trace(q).real) for q in self.Q])


@dataclass(frozen=True)
class PrecoderSet:
    """Per-user tall precoders V_i (M_i x d_i) with stream lengths d_i."""

    V: list
    d: tuple

    @classmethod
    def from_matrices(cls, V) -> "PrecoderSet":
        mats = [np.asarray(v, dtype=complex) for v in V]
        return cls(V=mats, d=tuple(v.shape[1] for v in mats))


def covariance_violations(instance: SystemInstance, cov: CovarianceSet) -> list:
    """Invariant check for a CovarianceSet against an instance."""
    out = []
    for i, q in enumerate(cov.Q):
        if np.shape(q) != (instance.config.M[i],) * 2:
            out.append(f"Q_{i} has shape {np.shape(q)}")
            continue
        if not is_hermitian(np.asarray(q), 1e-10):
            out.append(f"Q_{i} is not Hermitian within 1e-10")
        if min_eigval(q) < -1e-10:
            out.append(f"Q_{i} has eigenvalue {min_eigval(q):.3e} < -1e-10")
        tr = float(np.trace(q).real)
        if tr > instance.p[i] + 1e-8:
            out.append(f"tr(Q_{i}) = {tr:.8g} exceeds p_{i} = {instance.p[i]:.8g}")
    return out


def precoder_violations(instance: SystemInstance, pre: PrecoderSet) -> list:
    """Invariant check for a PrecoderSet against an instance."""
    out = []
    for i, v in enumerate(pre.V):
        if v.shape[0] != instance.config.M[i] or pre.d[i] > instance.config.M[i]:
            out.append(f"V_{i} has shape {v.shape} for M_{i} = {instance.config.M[i]}")
        power = float(np.sum(np.abs(v) ** 2))
        if power > instance.p[i] + 1e-8:
            out.append(f"||V_{i}||_F^2 = {power:.8g} exceeds p_{i} = {instance.p[i]:.8g}")
    return out


# ---------------------------------------------------------------------------
# JSON interchange: matrices as nested row lists of {"re", "im"} cells.

def _matrix_to_json(a) -> list:
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    return [[{"re": float(v.real), "im": float(v.imag)} for v in row] for row in a]


def _matrix_from_json(rows) -> np.ndarray:
    return np.array([[cell["re"] + 1j * cell["im"] for cell in row] for row in rows],
                    dtype=complex)


def instance_to_json(instance: SystemInstance) -> dict:
    return {
        "config": instance.config.to_dict(),
        "H": [[_matrix_to_json(instance.H[j][i]) for i in range(instance.config.N)]
              for j in range(instance.config.N)],
        "Gamma": [_matrix_to_json(g) for g in instance.Gamma],
        "p": [float(v) for v in instance.p],
    }


def instance_from_json(d: dict) -> SystemInstance:
    config = SystemConfig.from_dict(d["config"])
    H = [[_matrix_from_json(d["H"][j][i]) for i in range(config.N)]
         for j in range(config.N)]
    Gamma = [_matrix_from_json(g) for g in d["Gamma"]]
    p = np.asarray(d["p"], dtype=float)
    return SystemInstance(config=config, H=H, Gamma=Gamma, p=p)


def save_instance(instance: SystemInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_json(instance)))


def load_instance(path) -> SystemInstance:
    return instance_from_json(json.loads(Path(path).read_text()))
