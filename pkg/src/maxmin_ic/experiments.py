"""Desk-scale experiment harness emitting plot-ready CSV.

Each runner reproduces one experiment shape: convergence traces, SNR
sweeps, per-user fairness, covariance-vs-fixed-stream comparisons, an
init-sensitivity histogram, and the robust-design loss sweep.  Trials run
in a process pool (capped by the MAXMIN_IC_THREADS environment variable)
with one seeded substream per trial, so results are deterministic for a
fixed (spec, seed) regardless of scheduling.  CSV files carry '#'-prefixed
metadata lines before the RFC-4180 header row.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .linalg import crandn
from .mm import mm_design_covariance, mm_design_precoder_fixed_d, extract_precoders
from .rates import min_rate, rate_vector
from .robust import (UncertaintyModel, estimated_instance, loss_parameter,
                     mm_design_robust, robust_min_rate)
from .system import (CovarianceSet, SystemConfig, SystemInstance, _matrix_to_json,
                     generate_channels, instance_to_json)

__all__ = [
    "ExperimentSpec",
    "ExperimentResult",
    "isotropic_baseline",
    "trace_rows",
    "run_trace",
    "run_snr_sweep",
    "run_fairness",
    "run_cov_vs_fixed_d",
    "run_init_histogram",
    "run_robust_loss",
    "design",
]

KINDS = ("trace", "snr_sweep", "fairness", "cov_vs_fixed_d", "init_histogram",
         "robust_loss", "design")


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run and at which scale.

    ``paper_scale`` restores the publication sizes (30 trials, 200 inits);
    the defaults are desk scale.
    """

    kind: str = "trace"
    config: SystemConfig = SystemConfig()
    trials: int = 10
    snr_grid: tuple = (0.0, 5.0, 10.0, 15.0)
    d: tuple = (2,)
    robust: UncertaintyModel | None = None
    seed: int = 0
    output_path: str | None = None
    paper_scale: bool = False
    m_grid: tuple = (2, 3, 4)
    rho_grid: tuple = (0.7, 0.8, 0.9, 1.0)
    zeta: float = 0.25
    n_inits: int | None = None
    eig_threshold: float = 1e-8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.snr_grid) == 0:
            raise ValueError("snr_grid must be nonempty")
        if np.isscalar(self.d):
            object.__setattr__(self, "d", (int(self.d),))

    @property
    def effective_trials(self) -> int:
        return 30 if self.paper_scale else self.trials

    @property
    def effective_inits(self) -> int:
        if self.n_inits is not None:
            return self.n_inits
        return 200 if self.paper_scale else 50


@dataclass(frozen=True)
class ExperimentResult:
    """Rows plus bookkeeping for the CLI exit code."""

    header: tuple
    rows: list
    converged: bool
    files: tuple = ()


def _max_workers(n_tasks: int) -> int:
    cap = os.environ.get("MAXMIN_IC_THREADS")
    cap = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def _pool_map(fn, args_list):
    """Ordered map over trials, parallel when it pays off."""
    if _max_workers(len(args_list)) <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=_max_workers(len(args_list))) as ex:
        return list(ex.map(fn, args_list))


def _write_csv(path, header, rows, meta=()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in meta:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _trial_config(config: SystemConfig, seed: int, trial: int) -> SystemConfig:
    child = int(np.random.SeedSequence((seed, trial)).generate_state(1)[0])
    return replace(config, seed=child)


def isotropic_baseline(instance: SystemInstance) -> CovarianceSet:
    """Isotropic transmission: Q_i = (p_i / M_i) I, full power, no shaping."""
    return CovarianceSet(Q=[(instance.p[i] / m) * np.eye(m, dtype=complex)
                            for i, m in enumerate(instance.config.M)])


def trace_rows(trace) -> list:
    """CSV rows (iter, t, minrate, R_1..R_N) of one design trace."""
    out = []
    for it in range(trace.iterations):
        out.append([it + 1, trace.t_history[it], trace.minrate_history[it],
                    *trace.rates_history[it]])
    return out


# ---------------------------------------------------------------------------
# trace

def run_trace(spec: ExperimentSpec) -> ExperimentResult:
    """Convergence trace of the design loop, one CSV per SNR point."""
    n = spec.config.N
    header = ("iter", "t", "minrate", *[f"R_{i+1}" for i in range(n)])
    all_rows = []
    files = []
    converged = True
    for snr in spec.snr_grid:
        cfg = replace(spec.config, snr_db=float(snr), seed=spec.seed)
        instance = generate_channels(cfg)
        _, trace = mm_design_covariance(instance, init_seed=spec.seed)
        converged &= trace.converged
        rows = trace_rows(trace)
        all_rows.append((snr, rows))
        if spec.output_path:
            p = Path(spec.output_path)
            out = p.with_name(f"{p.stem}_snr{int(round(snr))}db{p.suffix or '.csv'}")
            _write_csv(out, header, rows,
                       meta=[f"kind=trace snr_db={snr} seed={spec.seed} "
                             f"N={cfg.N} M={cfg.M} L={cfg.L}"])
            files.append(str(out))
    flat = [[snr, *r] for snr, rows in all_rows for r in rows]
    return ExperimentResult(header=("snr_db", *header), rows=flat,
                            converged=converged, files=tuple(files))


# ---------------------------------------------------------------------------
# snr sweep

def _sweep_trial(args):
    spec, snr, trial = args
    cfg = _trial_config(replace(spec.config, snr_db=float(snr)), spec.seed, trial)
    instance = generate_channels(cfg)
    cov, tr_cov = mm_design_covariance(instance, init_seed=trial)
    pre, tr_fd = mm_design_precoder_fixed_d(instance, spec.d[0], init_seed=trial)
    fd_cov = CovarianceSet(Q=[v @ v.conj().T for v in pre.V])
    iso = isotropic_baseline(instance)
    vals = {
        "mm_cov": min_rate(instance, cov),
        "mm_fixed_d": min_rate(instance, fd_cov),
        "isotropic": min_rate(instance, iso),
    }
    return snr, trial, vals, tr_cov.converged and tr_fd.converged


def run_snr_sweep(spec: ExperimentSpec) -> ExperimentResult:
    """Mean/std of the achieved min rate versus SNR for the three methods."""
    tasks = [(spec, snr, t) for snr in spec.snr_grid
             for t in range(spec.effective_trials)]
    results = _pool_map(_sweep_trial, tasks)
    converged = all(r[3] for r in results)
    header = ("snr_db", "method", "mean_minrate", "std_minrate", "trials")
    rows = []
    for snr in spec.snr_grid:
        per = [r[2] for r in results if r[0] == snr]
        for method in ("mm_cov", "mm_fixed_d", "isotropic"):
            vals = np.array([v[method] for v in per])
            rows.append([snr, method, float(vals.mean()), float(vals.std()),
                         len(vals)])
    files = ()
    if spec.output_path:
        _write_csv(spec.output_path, header, rows,
                   meta=[f"kind=snr_sweep seed={spec.seed} trials={spec.effective_trials} "
                         f"d={spec.d[0]} N={spec.config.N}; channel realizations shared "
                         "across methods per trial, inits method-local"])
        files = (spec.output_path,)
    return ExperimentResult(header=header, rows=rows, converged=converged,
                            files=files)


# ---------------------------------------------------------------------------
# fairness

def _fairness_trial(args):
    spec, trial = args
    cfg = _trial_config(spec.config, spec.seed, trial)
    instance = generate_channels(cfg)
    cov, tr = mm_design_covariance(instance, init_seed=trial)
    rows = []
    for method, rates in (("mm_cov", rate_vector(instance, cov)),
                          ("isotropic", rate_vector(instance,
                                                    isotropic_baseline(instance)))):
        spread = float(np.max(rates) - np.min(rates))
        for i, r in enumerate(rates):
            rows.append([trial, i + 1, float(r), method, spread])
    return rows, tr.converged


def run_fairness(spec: ExperimentSpec) -> ExperimentResult:
    """Per-user rates (and their spread) for the design and the baseline."""
    results = _pool_map(_fairness_trial, [(spec, t) for t in range(spec.effective_trials)])
    rows = [r for chunk, _ in results for r in chunk]
    converged = all(c for _, c in results)
    header = ("trial", "user", "rate", "method", "spread")
    files = ()
    if spec.output_path:
        _write_csv(spec.output_path, header, rows,
                   meta=[f"kind=fairness seed={spec.seed} N={spec.config.N}"])
        files = (spec.output_path,)
    return ExperimentResult(header=header, rows=rows, converged=converged,
                            files=files)


# ---------------------------------------------------------------------------
# covariance vs fixed-d

def _cov_fd_trial(args):
    spec, m, trial = args
    cfg = _trial_config(replace(spec.config, M=(m,) * spec.config.N,
                                L=(m,) * spec.config.N), spec.seed, trial)
    instance = generate_channels(cfg)
    out = []
    t0 = time.perf_counter()
    cov, tr = mm_design_covariance(instance, init_seed=trial)
    out.append(("cov", 0, min_rate(instance, cov), time.perf_counter() - t0,
                tr.converged))
    for d in spec.d:
        if d > m:
            continue
        t0 = time.perf_counter()
        pre, tr_fd = mm_design_precoder_fixed_d(instance, d, init_seed=trial)
        fd_cov = CovarianceSet(Q=[v @ v.conj().T for v in pre.V])
        out.append((f"fixed_d", d, min_rate(instance, fd_cov),
                    time.perf_counter() - t0, tr_fd.converged))
    return m, out


def run_cov_vs_fixed_d(spec: ExperimentSpec) -> ExperimentResult:
    """Covariance design versus fixed-stream design across antenna counts."""
    tasks = [(spec, m, t) for m in spec.m_grid for t in range(spec.effective_trials)]
    results = _pool_map(_cov_fd_trial, tasks)
    header = ("M", "mode", "d", "mean_minrate", "mean_runtime_s")
    rows = []
    converged = True
    for m in spec.m_grid:
        chunks = [out for mm, out in results if mm == m]
        keys = [(mode, d) for mode, d, _, _, _ in chunks[0]]
        for mode, d in keys:
            vals = [v for ch in chunks for md, dd, v, _, _ in ch
                    if (md, dd) == (mode, d)]
            runts = [rt for ch in chunks for md, dd, _, rt, _ in ch
                     if (md, dd) == (mode, d)]
            converged &= all(cv for ch in chunks for md, dd, _, _, cv in ch
                             if (md, dd) == (mode, d))
            rows.append([m, mode, d if mode == "fixed_d" else "",
                         float(np.mean(vals)), float(np.mean(runts))])
    files = ()
    if spec.output_path:
        _write_csv(spec.output_path, header, rows,
                   meta=[f"kind=cov_vs_fixed_d seed={spec.seed} "
                         f"trials={spec.effective_trials}"])
        files = (spec.output_path,)
    return ExperimentResult(header=header, rows=rows, converged=converged,
                            files=files)


# ---------------------------------------------------------------------------
# init histogram

def _init_trial(args):
    spec, init_index = args
    cfg = replace(spec.config, seed=spec.seed)
    instance = generate_channels(cfg)
    _, trace = mm_design_covariance(instance, init_seed=init_index)
    return init_index, float(trace.minrate_history[-1]), trace.converged


def run_init_histogram(spec: ExperimentSpec) -> ExperimentResult:
    """Final min rate over random initializations on one fixed realization."""
    results = _pool_map(_init_trial, [(spec, i) for i in range(spec.effective_inits)])
    header = ("init_index", "final_minrate")
    rows = [[i, v] for i, v, _ in results]
    converged = all(c for _, _, c in results)
    files = ()
    if spec.output_path:
        vals = np.array([v for _, v in rows])
        _write_csv(spec.output_path, header, rows,
                   meta=[f"kind=init_histogram seed={spec.seed} "
                         f"inits={spec.effective_inits} "
                         f"sample_variance={float(np.var(vals)):.6g}"])
        files = (spec.output_path,)
    return ExperimentResult(header=header, rows=rows, converged=converged,
                            files=files)


# ---------------------------------------------------------------------------
# robust loss

def _loss_trial(args):
    spec, trial = args
    cfg = _trial_config(spec.config, spec.seed, trial)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.N
    h_std = [[crandn(rng, (cfg.L[i], cfg.M[j])) for i in range(n)] for j in range(n)]
    out = []
    conv = True
    for rho in spec.rho_grid:
        model = UncertaintyModel.broadcast(cfg, rho=rho, sigma2=1.0, zeta=spec.zeta)
        # estimates share the standard draw across rho: entries ~ rho * sigma * std
        h_hat = [[rho * h_std[j][i] for i in range(n)] for j in range(n)]
        inst_hat = estimated_instance(cfg, model, h_hat)
        q_nom, tr_n = mm_design_covariance(inst_hat, init_seed=trial)
        q_rob, tr_r = mm_design_robust(model, inst_hat, init_seed=trial)
        conv &= tr_n.converged and tr_r.converged
        r_nr = robust_min_rate(model, inst_hat, q_nom)
        r_r = robust_min_rate(model, inst_hat, q_rob)
        out.append((rho, loss_parameter(r_nr, r_r)))
    return out, conv


def run_robust_loss(spec: ExperimentSpec) -> ExperimentResult:
    """Loss of the non-robust design under worst-case evaluation, per rho."""
    results = _pool_map(_loss_trial, [(spec, t) for t in range(spec.effective_trials)])
    converged = all(c for _, c in results)
    header = ("rho", "zeta", "max_loss_over_trials", "mean_loss")
    rows = []
    for idx, rho in enumerate(spec.rho_grid):
        losses = np.array([chunk[idx][1] for chunk, _ in results])
        rows.append([rho, spec.zeta, float(np.nanmax(losses)),
                     float(np.nanmean(losses))])
    files = ()
    if spec.output_path:
        _write_csv(spec.output_path, header, rows,
                   meta=[f"kind=robust_loss seed={spec.seed} "
                         f"trials={spec.effective_trials} zeta={spec.zeta}; "
                         "non-robust design evaluated at the worst-case rate"])
        files = (spec.output_path,)
    return ExperimentResult(header=header, rows=rows, converged=converged,
                            files=files)


# ---------------------------------------------------------------------------
# single-shot design

def design(instance: SystemInstance, *, mode: str = "cov", d=None,
           robust_model: UncertaintyModel | None = None, epsilon=None,
           max_iters=None, init_seed: int = 0, eig_threshold: float = 1e-8) -> dict:
    """One design run returning a JSON-ready result document."""
    kw = dict(epsilon=epsilon, max_iters=max_iters, init_seed=init_seed)
    if mode == "fixed-d":
        if d is None:
            raise ValueError("fixed-d mode requires stream lengths d")
        pre, trace = mm_design_precoder_fixed_d(instance, d, **kw)
        payload = {"V": [_matrix_to_json(v) for v in pre.V], "d": list(pre.d)}
        cov = CovarianceSet(Q=[v @ v.conj().T for v in pre.V])
    elif mode == "cov":
        if robust_model is not None:
            cov, trace = mm_design_robust(robust_model, instance, **kw)
        else:
            cov, trace = mm_design_covariance(instance, **kw)
        pre = extract_precoders(cov, rel_threshold=eig_threshold)
        payload = {"Q": [_matrix_to_json(q) for q in cov.Q],
                   "V": [_matrix_to_json(v) for v in pre.V], "d": list(pre.d)}
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if robust_model is not None:
        minrate = robust_min_rate(robust_model, instance, cov)
    else:
        minrate = min_rate(instance, cov)
    payload.update({
        "minrate": float(minrate),
        "trace": {
            "t": [float(v) for v in trace.t_history],
            "minrate": [float(v) for v in trace.minrate_history],
            "rates": [[float(v) for v in row] for row in trace.rates_history],
        },
        "iterations": trace.iterations,
        "converged": bool(trace.converged),
        "stationarity_residual": float(trace.stationarity_residual),
        "instance": instance_to_json(instance),
    })
    return payload
