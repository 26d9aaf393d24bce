"""
Federation Engine Module

This module contains the FederationEngine class responsible for running the
communication rounds of one repetition: the reputation-based round (scoring,
adaptive threshold, clipping, weighted aggregation, reputation evolution) and
the baseline rounds (FedAvg, Krum, trimmed mean) that share the same client
side.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from PySide6.QtCore import QObject, Signal

from constants import ROUND_COLUMNS, TIMING_COLUMNS
from analysis.aggregation import (AggregatorKind, clip_rows, fedavg_aggregate, flare_aggregate,
                                  hard_cut_aggregate, krum_aggregate, lower_median,
                                  trimmed_mean_aggregate)
from analysis.assessment import (AttackPattern, ClientClass, ClientObservation, DetectionHistory,
                                 DetectionRecord, ThresholdState, analyze_pattern, classify,
                                 compute_anomaly_rate, convergence_metric, evolve_reputation,
                                 update_threshold)
from analysis.client_models import ClientRole
from analysis.errors import CohortTooSmall, FlareError
from analysis.metrics import ConfusionCounts, confusion_counts
from analysis.reputation import (DynamicWeights, VarianceTracker, composite_scores,
                                 compute_dynamic_weights, score_cohort)
from analysis.rng import RngStream
from analysis.simulation import SyntheticTask, evaluate, zero_model
from core.client_controller import ClientController, ClientSubmission

logger = logging.getLogger(__name__)


@dataclass
class RoundLog:
    """
    Metrics of one round. None marks a value that does not apply (blank in CSV).
    """

    round: int
    test_loss: float
    test_accuracy: float
    theta: Optional[float] = None
    conv: Optional[float] = None
    anomaly_rate: Optional[float] = None
    w1: Optional[float] = None
    w2: Optional[float] = None
    w3: Optional[float] = None
    n_selected: int = 0
    n_responded: int = 0
    dropped: int = 0
    trusted: Optional[int] = None
    suspicious: Optional[int] = None
    untrusted: Optional[int] = None
    tp: Optional[int] = None
    fp: Optional[int] = None
    tn: Optional[int] = None
    fn: Optional[int] = None
    graded_weight_mean: Optional[float] = None
    stalled: bool = False
    attack_pattern: Optional[str] = None
    drift_along_direction: Optional[float] = None
    rep_benign: Optional[float] = None
    rep_label_flip: Optional[float] = None
    rep_byzantine: Optional[float] = None
    rep_scaling: Optional[float] = None
    rep_adaptive: Optional[float] = None
    rep_alie: Optional[float] = None
    rep_sm: Optional[float] = None
    aggregation_time: float = 0.0
    server_time: float = 0.0

    @property
    def confusion(self) -> Optional[ConfusionCounts]:
        if self.tp is None:
            return None
        return ConfusionCounts(self.tp, self.fp, self.tn, self.fn)

    def set_confusion(self, counts: ConfusionCounts):
        self.tp, self.fp, self.tn, self.fn = counts.tp, counts.fp, counts.tn, counts.fn

    def to_row(self) -> Dict[str, str]:
        """Values of ROUND_COLUMNS formatted for the metrics CSV."""
        return {name: _format(getattr(self, name)) for name in ROUND_COLUMNS}

    def timing_row(self) -> Dict[str, str]:
        return {name: _format(getattr(self, name)) for name in TIMING_COLUMNS}


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


class FederationEngine(QObject):
    """
    Core engine for the federated training rounds of one repetition.

    This class handles:
    - Holding the global model and all server-side state between rounds
    - Running the reputation-based round or a baseline round
    - Asserting the reputation bounds after every round
    - Emitting one RoundLog per round
    """

    round_completed = Signal(object)  # RoundLog
    stall_detected = Signal(int)  # round
    error_occurred = Signal(str)

    def __init__(self, config, stream: RngStream, task: SyntheticTask,
                 controller: Optional[ClientController] = None):
        """
        Initialize the engine and its client population.

        Args:
            config: ExperimentConfig of the run.
            stream: Seeded stream of this repetition.
            task: Synthetic task, with reference model when attack directions are needed.
            controller: Client controller; created from config when omitted.
        """
        super().__init__()
        self.config = config
        self.hp = config.hp
        self.task = task
        self.controller = controller or ClientController(config, stream, task)
        if not self.controller.clients:
            self.controller.setup_clients()

        self.global_model = zero_model(task.feature_dim, task.num_classes)
        self.previous_model: Optional[np.ndarray] = None
        self.threshold = ThresholdState.initial(self.hp.theta_base)
        self.weights = DynamicWeights.initial(config.scored_dimensions)
        self.variance = VarianceTracker()
        self.history = DetectionHistory()
        self.attack_pattern = AttackPattern.NONE
        self.direction = task.attack_direction() if task.reference_model is not None else None
        self.logs: List[RoundLog] = []

        if config.pin_reputation is not None:
            for client in self.clients:
                client.reputation = config.pin_reputation

    @property
    def clients(self):
        return self.controller.clients

    def run(self, rounds: Optional[int] = None) -> List[RoundLog]:
        """
        Run all rounds with the configured aggregator.

        Args:
            rounds (int, optional): Number of rounds; defaults to hp.rounds.

        Returns:
            list: One RoundLog per round.
        """
        total = rounds if rounds is not None else self.hp.rounds
        flare = self.config.aggregator.kind is AggregatorKind.FLARE
        start = len(self.logs) + 1
        try:
            for t in range(start, start + total):
                log = self.run_flare_round(t) if flare else self.run_baseline_round(t)
                logger.debug("Round %d: loss=%.4f acc=%.4f theta=%s",
                             t, log.test_loss, log.test_accuracy, log.theta)
        except FlareError as e:
            error_msg = f"❌ Round loop aborted: {e}"
            logger.error(error_msg)
            self.error_occurred.emit(error_msg)
            raise
        return self.logs

    def _cohort(self, t: int):
        """Select and collect; returns the cohort, its responders and the selection wall-time."""
        selection_start = time.perf_counter()
        cohort = self.controller.select(t, self.config.resolved_selection)
        selection_time = time.perf_counter() - selection_start
        submissions = self.controller.collect(t, cohort, self.global_model)
        responders = [s for s in submissions if s.responded]
        dropped = len(cohort) - len(responders)
        if dropped:
            logger.info("Round %d: %d of %d selected clients dropped out", t, dropped, len(cohort))
        return cohort, responders, selection_time

    def _attack_displacement(self, new_model: np.ndarray, responders: Sequence[ClientSubmission],
                             aggregate: Optional[Callable[[np.ndarray], np.ndarray]]) -> float:
        """
        Displacement along the attack direction caused by this round's attacked submissions.

        The round's aggregation is replayed with every attacked submission
        replaced by the client's honest update; honest progress cancels out.
        With LDP enabled the attacked clients' noise is included.
        """
        if aggregate is None or not any(s.attacked for s in responders):
            return 0.0
        honest = np.vstack([s.honest if s.attacked else s.update for s in responders])
        return float((new_model - aggregate(honest)) @ self.direction)

    def _finish_round(self, log: RoundLog, new_model: np.ndarray,
                      responders: Sequence[ClientSubmission] = (),
                      aggregate: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> RoundLog:
        if self.direction is not None:
            log.drift_along_direction = self._attack_displacement(new_model, responders, aggregate)
        self.previous_model = self.global_model
        self.global_model = new_model
        evaluation_start = time.perf_counter()
        log.test_loss, log.test_accuracy = evaluate(self.global_model, self.task)
        log.server_time += time.perf_counter() - evaluation_start
        if log.stalled:
            logger.warning("⚠️ Round %d stalled, global model unchanged", log.round)
            self.stall_detected.emit(log.round)
        self.logs.append(log)
        self.round_completed.emit(log)
        return log

    def _fill_reputations(self, log: RoundLog):
        for role, value in self.controller.mean_reputation_by_role().items():
            setattr(log, f"rep_{role.value}", value)

    def run_flare_round(self, t: int) -> RoundLog:
        """
        One reputation-based round.

        Sequence: select, client work (training, attack, LDP), scoring of the
        privatized updates, convergence / anomaly rate / threshold,
        median-norm clipping, weighted aggregation over the clients with
        R >= theta / 2, reputation evolution of the participants.

        aggregation_time covers scoring through aggregation; server_time adds
        selection, bookkeeping and the evaluation of the new model.

        Args:
            t (int): Round number, 1-based.

        Returns:
            RoundLog: Metrics of the round.
        """
        hp = self.hp
        config = self.config
        cohort, responders, selection_time = self._cohort(t)
        server_start = time.perf_counter()
        self.controller.record_participation([s.client_id for s in responders])
        log = RoundLog(round=t, test_loss=0.0, test_accuracy=0.0, n_selected=len(cohort),
                       n_responded=len(responders), dropped=len(cohort) - len(responders))
        conv = convergence_metric(self.global_model, self.previous_model)
        log.conv = conv
        pinned = config.pin_reputation is not None

        if not responders:
            log.theta = self.threshold.theta
            log.anomaly_rate = 0.0
            log.w1, log.w2, log.w3 = (float(w) for w in self.weights.w)
            log.trusted = log.suspicious = log.untrusted = 0
            log.stalled = True
            log.attack_pattern = self.attack_pattern.value
            log.server_time = selection_time + time.perf_counter() - server_start
            self._fill_reputations(log)
            return self._finish_round(log, np.array(self.global_model, copy=True))

        clients = [self.clients[s.client_id] for s in responders]
        updates = np.vstack([s.update for s in responders])

        scoring_start = time.perf_counter()
        if pinned:
            reputations = np.array([c.reputation for c in clients])
            norms = np.linalg.norm(updates, axis=1)
            components = np.vstack([c.components for c in clients])
            anomaly_rate = 0.0
        else:
            previous_reputations = np.array([c.reputation for c in clients])
            previous_theta = self.threshold.theta
            scores = score_cohort(clients, updates, self.variance, hp)
            self.variance = scores.tracker
            components, norms = scores.components, scores.norms

            anomaly_rate = compute_anomaly_rate(previous_reputations, previous_theta)
            self.weights = compute_dynamic_weights(components, self.weights, previous_reputations,
                                                   previous_theta, conv, self.attack_pattern,
                                                   hp.tau_conv, t, importance_scale=hp.importance_scale,
                                                   enabled=config.scored_dimensions)
            reputations = composite_scores(components, self.weights)
            self.threshold = update_threshold(self.threshold, hp, conv, anomaly_rate,
                                              adaptive=config.adaptive_threshold)
            for client, row, ema in zip(clients, components, scores.emas):
                client.components = row
                client.update_ema = ema

        theta = self.threshold.theta
        log.theta = theta
        log.anomaly_rate = anomaly_rate
        log.w1, log.w2, log.w3 = (float(w) for w in self.weights.w)

        classes = [classify(float(r), theta) for r in reputations]
        log.trusted = sum(1 for c in classes if c.kind is ClientClass.TRUSTED)
        log.suspicious = sum(1 for c in classes if c.kind is ClientClass.SUSPICIOUS)
        log.untrusted = sum(1 for c in classes if c.kind is ClientClass.UNTRUSTED)
        log.graded_weight_mean = sum(c.weight for c in classes) / len(classes)

        clip_bound = lower_median(norms)
        clipping = config.server_clipping and clip_bound > 0.0
        half = theta / 2.0
        sizes = [c.n_samples for c in clients]

        def aggregate(matrix: np.ndarray, row_norms: Optional[np.ndarray] = None) -> np.ndarray:
            if clipping:
                row_norms = np.linalg.norm(matrix, axis=1) if row_norms is None else row_norms
                matrix = clip_rows(matrix, row_norms, clip_bound)
            entries = [(matrix[i], float(r), n) for i, (r, n) in enumerate(zip(reputations, sizes))]
            if config.soft_exclusion:
                return flare_aggregate(self.global_model, [e for e in entries if e[1] >= half])
            return hard_cut_aggregate(self.global_model, entries, theta)

        aggregation_start = time.perf_counter()
        new_model = aggregate(updates, norms)
        cut = half if config.soft_exclusion else theta
        log.stalled = not any(r >= cut for r in reputations)
        aggregation_end = time.perf_counter()
        log.aggregation_time = aggregation_end - scoring_start
        logger.debug("Round %d: scoring %.6fs, aggregation %.6fs", t,
                     aggregation_start - scoring_start, aggregation_end - aggregation_start)

        flagged = [bool(r < half) for r in reputations]
        if not pinned:
            for client, r, is_flagged in zip(clients, reputations, flagged):
                client.reputation = evolve_reputation(float(r), not is_flagged, hp,
                                                      decay=config.reputation_decay)
                client.ever_flagged = client.ever_flagged or is_flagged
                client.check_bounds()

            observations = tuple(
                ClientObservation(client_id=c.id, flagged=f, reputation=float(r), half_threshold=half,
                                  pre_clip_norm=float(n), median_norm=clip_bound,
                                  r1=float(row[0]), r2=float(row[1]))
                for c, f, r, n, row in zip(clients, flagged, reputations, norms, components))
            self.history.append(DetectionRecord(t, observations))
            if self.history.has_flagged:
                self.attack_pattern = analyze_pattern(self.history)
            else:
                self.attack_pattern = AttackPattern.NONE
        log.attack_pattern = self.attack_pattern.value

        log.set_confusion(confusion_counts((s.attacked for s in responders), flagged))
        log.server_time = selection_time + time.perf_counter() - server_start
        self._fill_reputations(log)
        return self._finish_round(log, new_model, responders, aggregate)

    def run_baseline_round(self, t: int) -> RoundLog:
        """
        One round of a baseline aggregator; no scoring, threshold or evolution.

        Krum's rejected updates are reported as flagged in the confusion
        columns; the other baselines leave detection columns blank. Timing
        boundaries match run_flare_round.

        Args:
            t (int): Round number, 1-based.

        Returns:
            RoundLog: Metrics of the round.
        """
        spec = self.config.aggregator
        cohort, responders, selection_time = self._cohort(t)
        server_start = time.perf_counter()
        log = RoundLog(round=t, test_loss=0.0, test_accuracy=0.0, n_selected=len(cohort),
                       n_responded=len(responders), dropped=len(cohort) - len(responders))
        log.conv = convergence_metric(self.global_model, self.previous_model)
        sizes = [self.clients[s.client_id].n_samples for s in responders]

        def aggregate(matrix: np.ndarray) -> np.ndarray:
            updates = list(matrix)
            if spec.kind is AggregatorKind.FEDAVG:
                return fedavg_aggregate(self.global_model, list(zip(updates, sizes)))
            if spec.kind is AggregatorKind.KRUM:
                return krum_aggregate(self.global_model, updates, spec.f)[0]
            if spec.kind is AggregatorKind.TRIMMED_MEAN:
                return trimmed_mean_aggregate(self.global_model, updates, spec.trim_fraction)
            raise FlareError(f"Aggregator '{spec.name}' has no baseline round")

        aggregation_start = time.perf_counter()
        new_model = np.array(self.global_model, copy=True)
        counterfactual = None
        if not responders:
            log.stalled = True
        else:
            updates = np.vstack([s.update for s in responders])
            try:
                if spec.kind is AggregatorKind.KRUM:
                    new_model, chosen = krum_aggregate(self.global_model, list(updates), spec.f)
                    flagged = [i != chosen for i in range(len(responders))]
                    log.set_confusion(confusion_counts((s.attacked for s in responders), flagged))
                else:
                    new_model = aggregate(updates)
                counterfactual = aggregate
            except CohortTooSmall as e:
                logger.warning("⚠️ Round %d: %s", t, e)
                log.stalled = True
        log.aggregation_time = time.perf_counter() - aggregation_start
        log.server_time = selection_time + time.perf_counter() - server_start
        return self._finish_round(log, new_model, responders, counterfactual)

    def role_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for client in self.clients:
            counts[client.role.value] = counts.get(client.role.value, 0) + 1
        return counts

    def malicious_share(self, role: ClientRole) -> float:
        """Fraction of the federation holding a given role."""
        return sum(1 for c in self.clients if c.role is role) / len(self.clients)
