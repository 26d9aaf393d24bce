# -*- coding: utf-8 -*-
"""
Main entry point for the FLARE robustness simulator.

This script parses the command line, resolves the experiment configuration
and dispatches to the experiment runner. Subcommands:

    run     one experiment (all repetitions) into <output>/<run_id>/
    sweep   Cartesian product over malicious fractions, attacks and aggregators
    report  pool finished runs into report.csv and an accuracy plot
"""

import argparse
import logging
import sys

from analysis.errors import ConfigError, FlareError
from core.experiment_runner import ExperimentRunner
from core.settings_manager import SettingsManager

logger = logging.getLogger("flare")

EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2


def configure_logging(verbose: bool):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        datefmt="%H:%M:%S")


def _add_experiment_flags(parser: argparse.ArgumentParser):
    """Flags shared by `run` and `sweep`, each one a config override."""
    parser.add_argument("--config", help="Experiment document (JSON)")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--rounds", type=int, help="Communication rounds")
    parser.add_argument("--aggregator", help="flare, fedavg, krum or trimmed_mean")
    parser.add_argument("--dirichlet-alpha", type=float, help="Label heterogeneity")
    parser.add_argument("--output", help="Output directory")
    parser.add_argument("--repetitions", type=int, help="Repetitions with seeds seed, seed+1, ...")
    parser.add_argument("--run-id", help="Run directory name")
    parser.add_argument("--max-workers", type=int, help="Threads for client-side work")
    parser.add_argument("--force", action="store_true", help="Overwrite existing run directories")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flare",
                                     description="Deterministic federated-learning robustness simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log per-round progress")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run one experiment")
    _add_experiment_flags(run)
    run.add_argument("--attack", help="none, all, label_flip, byzantine, scaling, adaptive, alie or sm")
    run.add_argument("--malicious-fraction", type=float, help="Share of malicious clients, below 0.5")

    sweep = commands.add_parser("sweep", help="Run a grid of experiments")
    _add_experiment_flags(sweep)
    sweep.add_argument("--fractions", type=float, nargs="+", required=True)
    sweep.add_argument("--attacks", nargs="+", required=True)
    sweep.add_argument("--aggregators", nargs="+", help="Defaults to the configured aggregator")

    report = commands.add_parser("report", help="Summarize finished runs")
    report.add_argument("paths", nargs="+", help="Run directories or their parents")
    report.add_argument("--output", default="report", help="Directory for report.csv and the plot")
    return parser


def collect_overrides(args: argparse.Namespace) -> dict:
    """Map parsed flags to dotted config paths; unset flags stay None and are skipped."""
    return {
        "hyperparameters.seed": args.seed,
        "hyperparameters.rounds": args.rounds,
        "attack.name": getattr(args, "attack", None),
        "attack.malicious_fraction": getattr(args, "malicious_fraction", None),
        "federation.dirichlet_alpha": args.dirichlet_alpha,
        "experiment.aggregator": args.aggregator,
        "experiment.output_dir": args.output,
        "experiment.repetitions": args.repetitions,
        "experiment.run_id": args.run_id,
        "experiment.max_workers": args.max_workers,
    }


def main(argv=None) -> int:
    """
    Run the command line.

    Returns:
        int: 0 on success, 2 on a configuration error, 1 on any other failure.
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    runner = ExperimentRunner()
    try:
        if args.command == "report":
            frame = runner.report(args.paths, args.output)
            print(frame.to_string(index=False))
            return EXIT_OK

        settings = SettingsManager()
        config = settings.load_settings(args.config, collect_overrides(args))
        if args.command == "run":
            result = runner.run_experiment(config, force=args.force)
            print(result.run_dir)
        else:
            results = runner.sweep(config, args.fractions, args.attacks, args.aggregators, force=args.force)
            for result in results:
                print(result.run_dir)
        return EXIT_OK
    except ConfigError as e:
        logger.error("❌ %s", e)
        return EXIT_CONFIG_ERROR
    except (FlareError, OSError) as e:
        logger.error("❌ %s", e)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
