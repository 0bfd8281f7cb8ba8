"""
tail / bounds - score tail study and closed-form error bounds
"""

import logging
from pathlib import Path
from typing import Any, Dict

import pandas as pd

from core.manifest import ManifestRecorder, manifest_path_for
from services.bounds import (
    MIN_TAIL_REPS,
    as_bound,
    constants_from_truth,
    l1_lq_bounds,
    l2_error_bound,
    tail_bound,
    tail_study,
)
from services.survival_sim import load_sim_config
from utils.cli import float_list, int_list
from utils.io import write_frame_csv, write_json

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    tail = subparsers.add_parser("tail", parents=parents,
                                 help="Monte Carlo tail of ||U_n(beta0)||_inf against the union bound")
    tail.add_argument("--config", required=True, help="SimConfig JSON")
    tail.add_argument("--n", type=int_list, required=True, help="Comma-separated sample sizes")
    level = tail.add_mutually_exclusive_group(required=True)
    level.add_argument("--gamma", type=float_list, help="Comma-separated gamma values")
    level.add_argument("--k2", type=float, help="K2 of the gamma schedule")
    tail.add_argument("--alpha", type=float, default=0.5, help="Exponent of the gamma schedule")
    tail.add_argument("--reps", type=int, default=500, help="Replications per n")
    tail.add_argument("--out", required=True, help="Output JSON path; a CSV is written next to it")
    tail.set_defaults(handler=run_tail)

    bounds = subparsers.add_parser("bounds", parents=parents, help="Evaluate the error and tail bounds")
    bounds.add_argument("--config", help="SimConfig JSON supplying K1, S, p and the constants")
    bounds.add_argument("--gamma", type=float, required=True, help="Constraint level")
    bounds.add_argument("--n", type=int, help="Sample size for the tail bound")
    bounds.add_argument("--p", type=int, help="Number of covariates")
    bounds.add_argument("--s", type=int, help="Support size")
    bounds.add_argument("--K1", type=float, help="Covariate bound")
    bounds.add_argument("--K3", type=float, help="Tail bound variance constant")
    bounds.add_argument("--K4", type=float, help="l2 bound constant")
    bounds.add_argument("--K5", type=float, help="l1/lq bound constant")
    bounds.add_argument("--re", type=float, help="Restricted eigenvalue")
    bounds.add_argument("--kappa", type=float, help="Compatibility factor")
    bounds.add_argument("--fq", type=float, help="Weak cone invertibility factor F_q")
    bounds.add_argument("--q", type=float, default=2.0, help="q of F_q")
    bounds.add_argument("--eps", type=float, default=0.0, help="eps_n")
    bounds.add_argument("--out", required=True, help="Output JSON path")
    bounds.set_defaults(handler=run_bounds)


def run_tail(args) -> None:
    out = Path(args.out)
    with ManifestRecorder("tail", args.argv, manifest_path_for(out)) as recorder:
        if args.reps < MIN_TAIL_REPS:
            raise ValueError(f"--reps must be at least {MIN_TAIL_REPS}, got {args.reps}")
        sim_config = load_sim_config(args.config)
        recorder.record_config({
            "sim": sim_config.model_dump(mode="json"),
            "ns": args.n,
            "gammas": args.gamma,
            "k2": args.k2,
            "alpha": args.alpha,
            "reps": args.reps,
        }, seeds=[sim_config.seed])

        rows = tail_study(sim_config, args.n, args.reps, K2=args.k2, alpha=args.alpha,
                          gammas=args.gamma, jobs=args.jobs)
        constants = constants_from_truth(sim_config.beta0(), sim_config.K1, sim_config)
        recorder.add_output(write_json(out, {"constants": constants.model_dump(), "rows": rows}))
        recorder.add_output(write_frame_csv(out.with_suffix(".csv"), pd.DataFrame(rows)))
        checked = [row["within_bound"] for row in rows if row["within_bound"] is not None]
        logger.info(f"Tail study: {sum(checked)} of {len(checked)} non-trivial cells within the union bound")


def evaluate_bounds(args) -> Dict[str, Any]:
    """Every bound whose inputs are available, from flags and an optional SimConfig"""
    K1, K3, K4, K5, S, p = args.K1, args.K3, args.K4, args.K5, args.s, args.p
    if args.config:
        sim_config = load_sim_config(args.config)
        constants = constants_from_truth(sim_config.beta0(), sim_config.K1, sim_config)
        K1 = K1 if K1 is not None else sim_config.K1
        K3 = K3 if K3 is not None else constants.K3
        K4 = K4 if K4 is not None else constants.K4
        K5 = K5 if K5 is not None else constants.K5
        S = S if S is not None else sim_config.s
        p = p if p is not None else sim_config.p

    result: Dict[str, Any] = {"gamma": args.gamma, "eps_n": args.eps,
                              "constants": {"K1": K1, "K3": K3, "K4": K4, "K5": K5}}
    if args.n is not None and None not in (K1, K3):
        result["tail"] = tail_bound(args.gamma, args.n, K1, K3, p or 1).model_dump()
    if None not in (K4, args.re):
        result["l2_squared"] = as_bound(l2_error_bound(K4, args.gamma, args.re, args.eps))
    if None not in (K5, S, args.kappa, args.fq):
        error_bounds = l1_lq_bounds(K5, S, args.gamma, args.kappa, args.fq, args.q, args.eps)
        result["l1"] = as_bound(error_bounds.l1)
        result[f"l{args.q:g}"] = as_bound(error_bounds.lq)
    if len(result) == 3:
        raise ValueError("not enough inputs for any bound; see --help")
    return result


def run_bounds(args) -> None:
    out = Path(args.out)
    with ManifestRecorder("bounds", args.argv, manifest_path_for(out)) as recorder:
        recorder.record_config({key: value for key, value in vars(args).items()
                                if key not in ("handler", "argv")})
        result = evaluate_bounds(args)
        recorder.add_output(write_json(out, result))
        logger.info(f"Bounds at gamma={args.gamma:g}: "
                    + ", ".join(f"{k}={v}" for k, v in result.items() if k.startswith("l")))
