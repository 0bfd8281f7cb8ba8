"""
experiment - consistency experiment over an n grid
"""

import logging
from pathlib import Path

from core.manifest import ManifestRecorder, manifest_path_for
from services.experiment import load_experiment_config, run_experiment, write_report

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("experiment", parents=parents,
                                   help="Simulate, fit and check the error bounds on an n grid")
    parser.add_argument("--config", required=True, help="ExperimentConfig JSON (seed is mandatory)")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.set_defaults(handler=run_experiment_command)


def run_experiment_command(args) -> None:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with ManifestRecorder("experiment", args.argv, manifest_path_for(out_dir)) as recorder:
        config = load_experiment_config(args.config)
        recorder.record_config(config.model_dump(mode="json"), seeds=[config.seed])
        report = run_experiment(config, jobs=args.jobs)
        for path in write_report(report, out_dir):
            recorder.add_output(path)
        if not report.median_l2_decreasing:
            logger.warning("Median l2 error is not strictly decreasing along the n grid")
        logger.info(f"Experiment '{config.name}' written to {out_dir}")
