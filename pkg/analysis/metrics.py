# analysis/metrics.py
"""
Metrics Module

Post-processing of a finished run: detection quality against the ground
truth roles, robustness against a clean reference run and convergence speed.
Malicious clients are the positive class.
"""

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from analysis.client_models import ClientState
from analysis.errors import LengthMismatch

# Accuracy gap (absolute) beyond which a round counts as degraded.
DEGRADATION_MARGIN = 0.05
# Share of the final accuracy a run must reach to count as converged.
CONVERGENCE_FRACTION = 0.9
# Number of trailing rounds averaged into the final accuracy.
FINAL_WINDOW = 10

NOT_REACHED = None


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        flagged = self.tp + self.fp
        return self.tp / flagged if flagged else 1.0

    @property
    def recall(self) -> float:
        positives = self.tp + self.fn
        return self.tp / positives if positives else 1.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r > 0.0 else 0.0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


def confusion_counts(actual: Iterable[bool], predicted: Iterable[bool]) -> ConfusionCounts:
    """Count outcomes over paired (is_malicious, flagged) values."""
    tp = fp = tn = fn = 0
    actual, predicted = list(actual), list(predicted)
    if len(actual) != len(predicted):
        raise LengthMismatch(f"{len(actual)} labels against {len(predicted)} predictions")
    for truth, guess in zip(actual, predicted):
        if truth and guess:
            tp += 1
        elif guess:
            fp += 1
        elif truth:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def final_confusion(clients: Sequence[ClientState], theta_final: float) -> ConfusionCounts:
    """Final-round verdict: a client is flagged when R < theta / 2."""
    return confusion_counts((c.role.is_malicious for c in clients),
                            (c.reputation < theta_final / 2.0 for c in clients))


def detection_metrics(clients: Sequence[ClientState], theta_final: float) -> Tuple[float, float, float]:
    """
    Precision, recall and F1 of the final-round verdict.

    Args:
        clients: Every client of the federation, with ground-truth roles.
        theta_final: Threshold of the last round.

    Returns:
        tuple: (precision, recall, f1).
    """
    counts = final_confusion(clients, theta_final)
    return counts.precision, counts.recall, counts.f1


def ever_flagged_metrics(clients: Sequence[ClientState]) -> Tuple[float, float, float]:
    """Precision, recall and F1 of the cumulative "flagged at least once" verdict."""
    counts = confusion_counts((c.role.is_malicious for c in clients),
                              (c.ever_flagged for c in clients))
    return counts.precision, counts.recall, counts.f1


def mean_round_f1(per_round: Sequence[ConfusionCounts]) -> Optional[float]:
    """F1 averaged over rounds, or None when no round was scored."""
    if not per_round:
        return None
    return float(np.mean([c.f1 for c in per_round]))


def robustness(round_accuracies: Sequence[float], clean_reference: Sequence[float],
               margin: float = DEGRADATION_MARGIN) -> float:
    """
    Fraction of rounds whose accuracy is more than `margin` below the clean run.

    Raises:
        LengthMismatch: If the two curves differ in length.
    """
    if len(round_accuracies) != len(clean_reference):
        raise LengthMismatch(
            f"Accuracy curve has {len(round_accuracies)} rounds, clean reference {len(clean_reference)}")
    if len(round_accuracies) == 0:
        return 0.0
    attacked = np.asarray(round_accuracies, dtype=np.float64)
    clean = np.asarray(clean_reference, dtype=np.float64)
    return float(np.mean(clean - attacked > margin))


def convergence_round(round_accuracies: Sequence[float],
                      fraction: float = CONVERGENCE_FRACTION,
                      window: int = FINAL_WINDOW) -> Optional[int]:
    """
    First round (1-based) at which accuracy reaches `fraction` of the final level.

    The final level is the mean over the last `window` rounds.

    Returns:
        int or None: The round, or NOT_REACHED.
    """
    if len(round_accuracies) == 0:
        return NOT_REACHED
    accuracies = np.asarray(round_accuracies, dtype=np.float64)
    target = fraction * float(accuracies[-window:].mean())
    reached = np.nonzero(accuracies >= target)[0]
    if reached.size == 0:
        return NOT_REACHED
    return int(reached[0]) + 1
