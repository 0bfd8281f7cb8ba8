"""
fit - run the Dantzig selector on a survival CSV
"""

import logging
from pathlib import Path

from core.config import get_config
from core.manifest import ManifestRecorder, manifest_path_for
from services.dantzig import (
    FitStatus,
    SolverConfig,
    gamma_grid_fit,
    gamma_schedule,
    local_optimality_check,
    objective_monotone,
    solve_dsfph,
)
from services.survival_sim import load_csv
from utils.cli import float_list
from utils.io import write_json

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    defaults = get_config()
    parser = subparsers.add_parser("fit", parents=parents, help="Fit the Dantzig selector")
    parser.add_argument("--data", required=True, help="CSV with columns time,status,z1..zp")
    parser.add_argument("--tau", type=float, help="Study horizon; defaults to the largest follow-up time")
    level = parser.add_mutually_exclusive_group()
    level.add_argument("--gamma", type=float, help="Constraint level")
    level.add_argument("--gammas", type=float_list, help="Descending gamma grid, warm-started")
    level.add_argument("--k2", type=float, help="K2 in gamma = K2 log(1+p) / n^alpha")
    parser.add_argument("--alpha", type=float, default=0.5, help="Exponent in the gamma schedule")
    parser.add_argument("--max-outer", type=int, default=defaults.max_outer, help="Outer linearization steps")
    parser.add_argument("--tol", type=float, default=defaults.outer_tol, help="Outer step tolerance")
    parser.add_argument("--lp-tol", type=float, default=defaults.lp_tol, help="Relative duality gap tolerance")
    parser.add_argument("--check-local", type=int, default=0, metavar="POINTS",
                        help="Check local optimality with this many perturbations")
    parser.add_argument("--out", required=True, help="Output JSON path")
    parser.set_defaults(handler=run_fit)


def resolve_gamma(args, n: int, p: int) -> float:
    if args.gamma is not None:
        return args.gamma
    if args.k2 is not None:
        return gamma_schedule(n, p, args.k2, args.alpha)
    raise ValueError("fit needs --gamma, --gammas or --k2")


def run_fit(args) -> None:
    out = Path(args.out)
    with ManifestRecorder("fit", args.argv, manifest_path_for(out)) as recorder:
        dataset = load_csv(args.data, tau=args.tau)
        settings = dict(max_outer=args.max_outer, outer_tol=args.tol, lp_tol=args.lp_tol,
                        feasibility_slack=get_config().feasibility_slack)

        if args.gammas:
            solver = SolverConfig(gamma=args.gammas[0], **settings)
            recorder.record_config({"data": str(args.data), "tau": dataset.tau, "gammas": args.gammas,
                                    "solver": solver.model_dump(mode="json")})
            results = gamma_grid_fit(dataset, args.gammas, solver)
            clean = [res for res in results if res.error is None]
            payload = {
                "results": [res.model_dump(mode="json") for res in results],
                "objective_monotone": objective_monotone(clean),
            }
            recorder.add_output(write_json(out, payload))
            return

        solver = SolverConfig(gamma=resolve_gamma(args, dataset.n, dataset.p), **settings)
        recorder.record_config({"data": str(args.data), "tau": dataset.tau, "k2": args.k2, "alpha": args.alpha,
                                "solver": solver.model_dump(mode="json")})
        result = solve_dsfph(dataset, solver)
        if result.status == FitStatus.INFEASIBLE:
            logger.warning(f"No feasible estimate at gamma={solver.gamma:.4g}: {result.error or 'constraint violated'}")
        recorder.add_output(write_json(out, result.model_dump(mode="json")))

        if args.check_local > 0:
            report = local_optimality_check(dataset, result, n_points=args.check_local)
            local_path = out.with_name(out.stem + ".local.json")
            recorder.add_output(write_json(local_path, report.model_dump(mode="json")))
            logger.info(f"Local optimality: {report.feasible_points} feasible perturbations, "
                        f"best improvement {report.best_improvement:.3g}")
