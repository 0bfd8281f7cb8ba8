"""
simulate - draw a censored survival dataset and write it as CSV
"""

import logging
from pathlib import Path

from core.manifest import ManifestRecorder, manifest_path_for
from services.survival_sim import SimConfig, load_sim_config, simulate_dataset, write_csv
from utils.cli import float_list

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("simulate", parents=parents, help="Simulate a survival dataset")
    parser.add_argument("--config", help="SimConfig JSON; the flags below override its fields")
    parser.add_argument("--n", type=int, help="Number of subjects")
    parser.add_argument("--p", type=int, help="Number of covariates")
    parser.add_argument("--s", type=int, help="Support size of beta0")
    parser.add_argument("--beta0", type=float_list, help="Nonzero beta0 values (default: all ones)")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--censor-rate", type=float, help="Target censoring fraction")
    parser.add_argument("--out", required=True, help="Output CSV path")
    parser.set_defaults(handler=run_simulate)


def build_sim_config(args) -> SimConfig:
    """Config file (if any) with flag overrides applied"""
    fields = load_sim_config(args.config).model_dump() if args.config else {}
    overrides = {
        "n": args.n,
        "p": args.p,
        "s": args.s,
        "seed": args.seed,
        "censor_rate": args.censor_rate,
        "beta0_values": args.beta0,
    }
    fields.update({key: value for key, value in overrides.items() if value is not None})
    missing = [key for key in ("n", "p", "s") if key not in fields]
    if missing:
        raise ValueError(f"simulate needs --{', --'.join(missing)} or a --config providing them")
    if args.beta0 is None and len(fields.get("beta0_values", [])) != fields["s"]:
        fields["beta0_values"] = [1.0] * fields["s"]
    return SimConfig(**fields)


def run_simulate(args) -> None:
    out = Path(args.out)
    with ManifestRecorder("simulate", args.argv, manifest_path_for(out)) as recorder:
        sim_config = build_sim_config(args)
        recorder.record_config(sim_config.model_dump(mode="json"), seeds=[sim_config.seed])
        dataset = simulate_dataset(sim_config)
        recorder.add_output(write_csv(dataset, out))
        logger.info(
            f"Wrote {dataset.n} subjects ({dataset.n_events} events, p={dataset.p}) to {out}"
        )
