"""Command-line entry point: ``maxmin-ic <subcommand>``.

Exit codes: 0 success, 1 config error, 2 solver non-convergence in any
trial (unless --allow-nonconverged), 3 I/O error.  The pool size for
multi-trial experiments is capped by the MAXMIN_IC_THREADS environment
variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .experiments import (ExperimentSpec, design, run_cov_vs_fixed_d, run_fairness,
                          run_init_histogram, run_robust_loss, run_snr_sweep,
                          run_trace)
from .robust import UncertaintyModel
from .system import SystemConfig, generate_channels, load_instance, save_instance, validate

_RUNNERS = {
    "trace": run_trace,
    "snr-sweep": run_snr_sweep,
    "fairness": run_fairness,
    "cov-vs-fixed-d": run_cov_vs_fixed_d,
    "init-histogram": run_init_histogram,
    "robust-loss": run_robust_loss,
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxmin-ic",
                                description="Max-min fair transmit covariance "
                                            "design for MIMO interference channels")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("design", *_RUNNERS):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="output path (CSV, or JSON for design)")
        sp.add_argument("--paper-scale", action="store_true")
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--allow-nonconverged", action="store_true")
        sp.add_argument("--dump-instance", help="write the generated instance JSON")
        sp.add_argument("--load-instance", help="read the instance JSON instead "
                                                "of generating channels")
        if name == "design":
            sp.add_argument("--mode", choices=("cov", "fixed-d"), default="cov")
            sp.add_argument("--d", type=int, default=None)
            sp.add_argument("--eig-threshold", type=float, default=1e-8)
            sp.add_argument("--epsilon", type=float, default=None)
            sp.add_argument("--max-iters", type=int, default=None)
    return p


def _load_config_doc(path):
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError("config JSON must be an object")
    return doc


def _spec_from(args, doc, kind) -> ExperimentSpec:
    config = SystemConfig.from_dict(doc.get("config", {}))
    kw = dict(kind=kind, config=config)
    for key in ("trials", "snr_grid", "d", "m_grid", "rho_grid", "zeta", "n_inits"):
        if key in doc:
            val = doc[key]
            kw[key] = tuple(val) if isinstance(val, list) else val
    if "robust" in doc:
        r = doc["robust"]
        kw["robust"] = UncertaintyModel.broadcast(
            config, rho=r.get("rho", 1.0), sigma2=r.get("sigma2", 1.0),
            zeta=r.get("zeta", 0.0))
    if args.seed is not None:
        kw["seed"] = args.seed
    elif "seed" in doc:
        kw["seed"] = doc["seed"]
    if args.trials is not None:
        kw["trials"] = args.trials
    kw["paper_scale"] = bool(args.paper_scale)
    kw["output_path"] = args.out
    return ExperimentSpec(**kw)


def _run_design(args, doc) -> int:
    config = SystemConfig.from_dict(doc.get("config", {}))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.load_instance:
        instance = load_instance(args.load_instance)
    else:
        instance = generate_channels(config)
    problems = validate(instance)
    if problems:
        print("invalid instance:", *problems, sep="\n  ", file=sys.stderr)
        return 1
    if args.dump_instance:
        save_instance(instance, args.dump_instance)
    robust_model = None
    if "robust" in doc:
        r = doc["robust"]
        robust_model = UncertaintyModel.broadcast(
            instance.config, rho=r.get("rho", 1.0), sigma2=r.get("sigma2", 1.0),
            zeta=r.get("zeta", 0.0), Gamma_hat=instance.Gamma)
    d = args.d if args.d is not None else doc.get("d")
    result = design(instance, mode=args.mode, d=d, robust_model=robust_model,
                    epsilon=args.epsilon, max_iters=args.max_iters,
                    init_seed=args.seed if args.seed is not None else config.seed,
                    eig_threshold=args.eig_threshold)
    text = json.dumps(result)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    if not result["converged"] and not args.allow_nonconverged:
        print("design did not converge within the iteration cap", file=sys.stderr)
        return 2
    print(f"minrate={result['minrate']:.6g} iterations={result['iterations']} "
          f"converged={result['converged']}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        doc = _load_config_doc(args.config)
        if args.command == "design":
            return _run_design(args, doc)
        spec = _spec_from(args, doc, args.command.replace("-", "_"))
        if args.load_instance or args.dump_instance:
            inst = (load_instance(args.load_instance) if args.load_instance
                    else generate_channels(spec.config))
            if args.dump_instance:
                save_instance(inst, args.dump_instance)
        result = _RUNNERS[args.command](spec)
        for f in result.files:
            print(f"wrote {f}", file=sys.stderr)
        if not result.files:
            print(",".join(str(h) for h in result.header))
            for row in result.rows:
                print(",".join(str(v) for v in row))
        if not result.converged and not args.allow_nonconverged:
            print("at least one trial did not converge", file=sys.stderr)
            return 2
        return 0
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
