"""
factors - cone factors and restricted constants of a matrix
The matrix is read from a file or built as the population surrogate of a
simulation design.
"""

import logging
from pathlib import Path

from core.config import get_config
from core.manifest import ManifestRecorder, manifest_path_for
from services.factors import (
    DEFAULT_QS,
    FACTOR_PRESETS,
    MIN_POPULATION_N,
    SupportSet,
    factor_report,
    get_factor_options,
    population_matrix,
)
from services.survival_sim import load_sim_config
from utils.cli import float_list, int_list
from utils.io import read_matrix, write_json

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("factors", parents=parents, help="Compute cone factors of a matrix")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--matrix", help="Square matrix as headerless CSV or JSON")
    source.add_argument("--sim-config", help="SimConfig JSON; use its population surrogate matrix")
    parser.add_argument("--support", type=int_list,
                        help="0-based support indices (default: the simulation support)")
    parser.add_argument("--q", type=float_list, default=list(DEFAULT_QS), help="q values for F_q")
    parser.add_argument("--preset", choices=sorted(FACTOR_PRESETS), default=get_config().factor_preset,
                        help="Optimizer preset")
    parser.add_argument("--seed", type=int, default=0, help="Optimizer seed")
    parser.add_argument("--sampled", action="store_true",
                        help="Sample subsets when exact enumeration exceeds the budget")
    parser.add_argument("--population-n", type=int, default=MIN_POPULATION_N,
                        help="Subjects per surrogate replicate")
    parser.add_argument("--population-reps", type=int, default=1, help="Surrogate replicates")
    parser.add_argument("--out", required=True, help="Output JSON path")
    parser.set_defaults(handler=run_factors)


def run_factors(args) -> None:
    out = Path(args.out)
    with ManifestRecorder("factors", args.argv, manifest_path_for(out)) as recorder:
        opts = get_factor_options(args.preset, seed=args.seed, sampled=args.sampled)
        population = None
        if args.matrix:
            if not args.support:
                raise ValueError("--support is required with --matrix")
            matrix = read_matrix(args.matrix)
            support = args.support
            seeds = [args.seed]
        else:
            sim_config = load_sim_config(args.sim_config)
            population = population_matrix(sim_config, n_big=args.population_n,
                                           mc_reps=args.population_reps, jobs=args.jobs)
            matrix = population.matrix
            support = args.support or sim_config.support()
            seeds = [args.seed, sim_config.seed]

        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix must be square, got shape {matrix.shape}")
        support_set = SupportSet(indices=sorted(set(support)), p=matrix.shape[0])
        recorder.record_config({
            "matrix": args.matrix,
            "sim_config": args.sim_config,
            "support": support_set.indices,
            "qs": args.q,
            "options": opts.model_dump(mode="json"),
            "population_n": args.population_n,
            "population_reps": args.population_reps,
        }, seeds=seeds)

        report = factor_report(matrix, support_set.indices, qs=args.q, opts=opts)
        payload = {"factors": report.model_dump(mode="json")}
        if population is not None:
            payload["population"] = population.to_dict()
        recorder.add_output(write_json(out, payload))
        logger.info(f"kappa={report.kappa:.4g}, RE={report.re:.4g}, phi_2S={report.phi_2s}")
