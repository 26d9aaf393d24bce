"""
Experiment Runner Module

This module contains the ExperimentRunner class responsible for the artifact
side of the simulator: running all repetitions of an experiment, writing the
per-round CSV files and the summary document, sweeping over attack settings
and pooling finished runs into a report.
"""

import csv
import json
import logging
import os
import shutil
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from PySide6.QtCore import QObject, Signal

from constants import AGGREGATOR_PALETTE, ROUND_COLUMNS, TIMING_COLUMNS
from analysis.aggregation import AggregatorKind, AggregatorSpec
from analysis.client_models import ClientRole
from analysis.errors import FlareError, OutputExistsError
from analysis.metrics import (convergence_round, detection_metrics, ever_flagged_metrics,
                              mean_round_f1, robustness)
from analysis.rng import RngStream
from analysis.simulation import SyntheticTask, generate_federation, label_entropy, train_reference
from core.flare_engine import FederationEngine, RoundLog
from core.settings_manager import (ExperimentConfig, SettingsManager, canonical_aggregator, canonical_attack,
                                   default_krum_f)

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"
CONFIG_FILE = "config.json"
REPORT_FILE = "report.csv"
CURVES_FILE = "accuracy_curves.png"

# Summary keys shown in the pooled report, in column order.
REPORT_METRICS = [
    "final_accuracy",
    "final_loss",
    "tail_accuracy",
    "convergence_round",
    "precision",
    "recall",
    "f1",
    "ever_flagged_f1",
    "mean_round_f1",
    "robustness",
    "distance_to_optimum",
    "mean_drift_per_round",
    "expected_drift_per_round",
    "stalled_rounds",
    "total_aggregation_time",
    "mean_server_time",
]


@dataclass
class RunResult:
    """Location and content of a finished experiment."""

    run_id: str
    run_dir: str
    summary: Dict[str, Any]
    logs: List[List[RoundLog]] = field(default_factory=list)


def default_run_id(config: ExperimentConfig) -> str:
    """Readable identifier built from the settings that distinguish sweep points."""
    return (f"{config.aggregator.name}_{config.attack}_f{config.malicious_fraction:g}"
            f"_a{config.dirichlet_alpha:g}_s{config.hp.seed}")


def build_task(config: ExperimentConfig, stream: RngStream) -> SyntheticTask:
    """Generate the federation of one repetition and train its reference model."""
    task = generate_federation(config.n_clients, config.samples_per_client, config.dirichlet_alpha,
                               config.feature_dim, stream, class_separation=config.class_separation,
                               test_samples=config.test_samples, label_noise=config.label_noise)
    train_reference(task, config.hp.weight_decay)
    return task


def write_rounds(path: str, logs: Sequence[RoundLog]):
    """Write the per-round metrics CSV (fixed column order, blank = not applicable)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=ROUND_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for log in logs:
            writer.writerow(log.to_row())


def write_timing(path: str, logs: Sequence[RoundLog]):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TIMING_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for log in logs:
            writer.writerow(log.timing_row())


def _plain(value):
    """Convert numpy scalars and NaN to JSON-friendly values."""
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return None if np.isnan(value) else value
    return value


def pool_repetitions(repetitions: Sequence[Dict[str, Any]]) -> Dict[str, Dict[str, Optional[float]]]:
    """
    Mean and sample standard deviation of every numeric summary key.

    Keys that are missing or None in some repetitions are pooled over the
    repetitions that have them.
    """
    frame = pd.DataFrame(list(repetitions))
    pooled = {}
    for column in frame.columns:
        if column == "seed":
            continue
        values = pd.to_numeric(frame[column], errors="coerce")
        if values.notna().sum() == 0 or frame[column].map(lambda v: isinstance(v, bool)).any():
            continue
        std = values.std(ddof=1) if values.notna().sum() > 1 else 0.0
        pooled[column] = {"mean": _plain(values.mean()), "std": _plain(std), "n": int(values.notna().sum())}
    return pooled


class ExperimentRunner(QObject):
    """
    Runner for complete experiments.

    This class handles:
    - Creating the run directory and refusing to overwrite results
    - Running every repetition with its derived seed
    - Writing rounds_rep<k>.csv, timing_rep<k>.csv, config.json and summary.json
    - Sweeping attack fractions, attacks and aggregators
    - Pooling finished runs into a report table and an accuracy plot
    """

    run_started = Signal(str)  # run id
    repetition_completed = Signal(int, dict)
    run_completed = Signal(str)  # run directory
    error_occurred = Signal(str)

    def __init__(self, settings_manager: Optional[SettingsManager] = None):
        """
        Initialize the runner.

        Args:
            settings_manager: Used to echo the resolved configuration.
        """
        super().__init__()
        self.settings_manager = settings_manager or SettingsManager()

    def prepare_run_dir(self, config: ExperimentConfig, force: bool = False) -> str:
        """
        Create the run directory.

        Raises:
            OutputExistsError: If it already holds files and force is False.
        """
        run_id = config.run_id or default_run_id(config)
        run_dir = os.path.join(config.output_dir, run_id)
        if os.path.isdir(run_dir) and os.listdir(run_dir):
            if not force:
                raise OutputExistsError(f"Run directory {run_dir} already exists; use --force to overwrite")
            logger.warning("⚠️ Overwriting existing run directory %s", run_dir)
            shutil.rmtree(run_dir)
        os.makedirs(run_dir, exist_ok=True)
        return run_dir

    def run_repetition(self, config: ExperimentConfig, repetition: int):
        """
        Run one repetition with seed = master seed + repetition.

        Returns:
            tuple: (round logs, repetition summary).
        """
        seed = config.hp.seed + repetition
        rep_config = replace(config, hp=replace(config.hp, seed=seed))
        task = build_task(rep_config, RngStream(seed))

        engine = FederationEngine(rep_config, RngStream(seed), task)
        logs = engine.run()

        clean_curve = None
        if rep_config.clean_reference and rep_config.attacked:
            logger.info("Running clean reference for seed %d", seed)
            clean_engine = FederationEngine(rep_config.clean(), RngStream(seed), task)
            clean_curve = [log.test_accuracy for log in clean_engine.run()]

        summary = self._summarize(rep_config, engine, task, logs, clean_curve)
        summary["seed"] = seed
        return logs, summary

    def _summarize(self, config: ExperimentConfig, engine: FederationEngine, task: SyntheticTask,
                   logs: Sequence[RoundLog], clean_curve: Optional[List[float]]) -> Dict[str, Any]:
        accuracies = [log.test_accuracy for log in logs]
        last = logs[-1]
        summary: Dict[str, Any] = {
            "final_accuracy": last.test_accuracy,
            "final_loss": last.test_loss,
            "tail_accuracy": float(np.mean(accuracies[-10:])),
            "convergence_round": convergence_round(accuracies),
            "reference_loss": task.reference_loss,
            "distance_to_optimum": float(np.linalg.norm(engine.global_model - task.reference_model)),
            "stalled_rounds": sum(1 for log in logs if log.stalled),
            "total_aggregation_time": float(sum(log.aggregation_time for log in logs)),
            "mean_aggregation_time": float(np.mean([log.aggregation_time for log in logs])),
            "mean_server_time": float(np.mean([log.server_time for log in logs])),
            "mean_label_entropy": float(np.mean([label_entropy(d) for d in task.clients])),
            "role_counts": engine.role_counts(),
            "precision": None,
            "recall": None,
            "f1": None,
            "ever_flagged_precision": None,
            "ever_flagged_recall": None,
            "ever_flagged_f1": None,
            "mean_round_f1": mean_round_f1([log.confusion for log in logs if log.confusion is not None]),
            "robustness": None,
            "clean_final_accuracy": None,
        }

        reputation_path = (config.aggregator.kind is AggregatorKind.FLARE and config.pin_reputation is None)
        if reputation_path:
            summary["final_theta"] = engine.threshold.theta
            summary["precision"], summary["recall"], summary["f1"] = detection_metrics(
                engine.clients, engine.threshold.theta)
            (summary["ever_flagged_precision"], summary["ever_flagged_recall"],
             summary["ever_flagged_f1"]) = ever_flagged_metrics(engine.clients)

        drifts = [log.drift_along_direction for log in logs if log.drift_along_direction is not None]
        summary["mean_drift_per_round"] = float(np.mean(drifts)) if drifts else None
        sm_spec = engine.controller.attack_specs.get(ClientRole.SM)
        sm_share = engine.malicious_share(ClientRole.SM)
        if sm_spec is not None and sm_share > 0.0:
            summary["expected_drift_per_round"] = sm_share * sm_spec.params.drift(1)
        else:
            summary["expected_drift_per_round"] = None

        if clean_curve is not None:
            summary["robustness"] = robustness(accuracies, clean_curve)
            summary["clean_final_accuracy"] = clean_curve[-1]
        return {key: _plain(value) for key, value in summary.items()}

    def run_experiment(self, config: ExperimentConfig, force: bool = False) -> RunResult:
        """
        Run every repetition and write all output files.

        Args:
            config (ExperimentConfig): Validated configuration.
            force (bool): Overwrite an existing non-empty run directory.

        Returns:
            RunResult: Run directory, pooled summary and round logs.

        Raises:
            OutputExistsError: If the run directory holds results and force is False.
            FlareError: Propagated from the round loop.
        """
        run_dir = self.prepare_run_dir(config, force)
        run_id = os.path.basename(run_dir)
        self.run_started.emit(run_id)
        logger.info("Starting run %s (%d repetition(s), %d rounds)", run_id, config.repetitions, config.hp.rounds)
        self.settings_manager.save_settings(config, os.path.join(run_dir, CONFIG_FILE))

        all_logs, repetitions = [], []
        try:
            for repetition in range(config.repetitions):
                logs, summary = self.run_repetition(config, repetition)
                write_rounds(os.path.join(run_dir, f"rounds_rep{repetition}.csv"), logs)
                write_timing(os.path.join(run_dir, f"timing_rep{repetition}.csv"), logs)
                all_logs.append(logs)
                repetitions.append(summary)
                self.repetition_completed.emit(repetition, summary)
                logger.info("✅ Repetition %d: accuracy %.4f, f1 %s", repetition,
                            summary["final_accuracy"], summary["f1"])
        except (FlareError, OSError) as e:
            error_msg = f"❌ Run {run_id} failed: {e}"
            logger.error(error_msg)
            self.error_occurred.emit(error_msg)
            raise

        document = {
            "run_id": run_id,
            "config": config.to_document(),
            "repetitions": repetitions,
            "pooled": pool_repetitions([{k: v for k, v in r.items() if k != "role_counts"}
                                        for r in repetitions]),
        }
        with open(os.path.join(run_dir, SUMMARY_FILE), "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, sort_keys=True, ensure_ascii=False)
        self.run_completed.emit(run_dir)
        logger.info("✅ Results written to %s", run_dir)
        return RunResult(run_id, run_dir, document, all_logs)

    def sweep(self, config: ExperimentConfig, fractions: Sequence[float], attacks: Sequence[str],
              aggregators: Optional[Sequence[str]] = None, force: bool = False) -> List[RunResult]:
        """
        Run the Cartesian product of fractions, attacks and aggregators.

        Args:
            config: Base configuration; run ids are derived per point.
            fractions: Malicious fractions.
            attacks: Attack names.
            aggregators: Aggregator names; defaults to the configured one. Krum's f
                is re-derived from each fraction.
            force: Overwrite existing run directories.

        Returns:
            list: One RunResult per sweep point.
        """
        kinds = [canonical_aggregator(a) for a in aggregators] if aggregators else [config.aggregator.kind]
        results = []
        for kind in kinds:
            for attack in attacks:
                for fraction in fractions:
                    spec = AggregatorSpec(kind=kind, f=default_krum_f(float(fraction), config.hp.cohort_size),
                                          trim_fraction=config.aggregator.trim_fraction)
                    point = replace(config, aggregator=spec, attack=canonical_attack(attack),
                                    malicious_fraction=float(fraction), run_id=None)
                    if config.run_id:
                        point = replace(point, run_id=os.path.join(config.run_id, default_run_id(point)))
                    results.append(self.run_experiment(point, force))
        logger.info("✅ Sweep finished: %d runs", len(results))
        return results

    def report(self, paths: Sequence[str], output_dir: str) -> pd.DataFrame:
        """
        Pool finished runs into report.csv and an accuracy-curve plot.

        Args:
            paths: Run directories or parents of run directories.
            output_dir: Where report.csv and accuracy_curves.png are written.

        Returns:
            pd.DataFrame: One row per run.
        """
        run_dirs = []
        for path in paths:
            for root, _, files in os.walk(path):
                if SUMMARY_FILE in files:
                    run_dirs.append(root)
        run_dirs = sorted(set(run_dirs))
        if not run_dirs:
            raise FlareError(f"No {SUMMARY_FILE} found under {', '.join(paths)}")

        rows = []
        for run_dir in run_dirs:
            with open(os.path.join(run_dir, SUMMARY_FILE), "r", encoding="utf-8") as f:
                document = json.load(f)
            config = document["config"]
            row = {
                "run_id": document["run_id"],
                "run_dir": run_dir,
                "aggregator": config["experiment"]["aggregator"],
                "attack": config["attack"]["name"],
                "malicious_fraction": config["attack"]["malicious_fraction"],
                "dirichlet_alpha": config["federation"]["dirichlet_alpha"],
                "repetitions": len(document["repetitions"]),
            }
            for metric in REPORT_METRICS:
                stats = document["pooled"].get(metric)
                row[metric] = stats["mean"] if stats else None
                row[f"{metric}_std"] = stats["std"] if stats else None
            rows.append(row)

        frame = pd.DataFrame(rows).sort_values(["aggregator", "attack", "malicious_fraction", "run_id"])
        os.makedirs(output_dir, exist_ok=True)
        frame.to_csv(os.path.join(output_dir, REPORT_FILE), index=False)
        self._plot_curves(frame, os.path.join(output_dir, CURVES_FILE))
        logger.info("✅ Report of %d runs written to %s", len(frame), output_dir)
        return frame

    def _plot_curves(self, frame: pd.DataFrame, path: str):
        fig, ax = plt.subplots(figsize=(9, 5))
        per_aggregator = frame.groupby("aggregator").size().to_dict()
        drawn: Dict[str, int] = {}
        for _, row in frame.iterrows():
            curve_path = os.path.join(row["run_dir"], "rounds_rep0.csv")
            if not os.path.exists(curve_path):
                continue
            curve = pd.read_csv(curve_path)
            aggregator = row["aggregator"]
            index = drawn.get(aggregator, 0)
            drawn[aggregator] = index + 1
            cmap = AGGREGATOR_PALETTE.get(aggregator, AGGREGATOR_PALETTE["flare"])
            shade = 0.2 + 0.6 * index / max(1, per_aggregator[aggregator] - 1)
            ax.plot(curve["round"], curve["test_accuracy"], color=cmap(shade), linewidth=1.2,
                    label=row["run_id"])
        ax.set_xlabel("Round")
        ax.set_ylabel("Test accuracy")
        ax.set_ylim(0.0, 1.0)
        ax.grid(alpha=0.3)
        if drawn:
            ax.legend(fontsize=7, loc="lower right")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
