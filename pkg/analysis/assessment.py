# analysis/assessment.py
"""
Assessment Module

Turns reputations into decisions: the adaptive threshold, the three-way client
classification, the asymmetric reputation evolution and the heuristic attack
pattern analysis that feeds back into the dynamic weights.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence

import numpy as np

from constants import PATTERN_WINDOW
from analysis.client_models import ModelVector, check_same_dimension

logger = logging.getLogger(__name__)

# Flagged clients whose average pre-clip norm exceeds this multiple of the
# cohort median vote for gradient scaling.
SCALING_NORM_RATIO = 3.0
# Crossings of the untrusted cut that mark an oscillating client.
MIN_OSCILLATIONS = 2
# Label flipping: inconsistent direction while statistically unremarkable.
FLIP_MAX_CONSISTENCY = 0.4
FLIP_MIN_ANOMALY_SCORE = 0.8


@dataclass(frozen=True)
class ThresholdState:
    """Threshold of the current round with the inputs it was computed from."""

    theta: float
    anomaly_rate: float = 0.0
    conv: float = 0.0

    @classmethod
    def initial(cls, theta_base: float) -> "ThresholdState":
        return cls(theta=theta_base)


class ClientClass(Enum):
    TRUSTED = "trusted"
    SUSPICIOUS = "suspicious"
    UNTRUSTED = "untrusted"


@dataclass(frozen=True)
class Classification:
    kind: ClientClass
    weight: float


class AttackPattern(Enum):
    """Dominant attack pattern inferred from recent detection history."""

    NONE = "none"
    GRADIENT_SCALING = "gradient_scaling"
    ADAPTIVE_ATTACK = "adaptive_attack"
    LABEL_FLIPPING = "label_flipping"


# Tie-break order when two patterns collect the same number of votes.
PATTERN_PRIORITY = [
    AttackPattern.GRADIENT_SCALING,
    AttackPattern.ADAPTIVE_ATTACK,
    AttackPattern.LABEL_FLIPPING,
]


def convergence_metric(w_curr: Optional[ModelVector], w_prev: Optional[ModelVector]) -> float:
    """
    How little the global model changed between two rounds.

    Args:
        w_curr: Model after the more recent round, or None before it exists.
        w_prev: Model one round earlier, or None before it exists.

    Returns:
        float: 1 / (1 + ||w_curr - w_prev|| / (||w_prev|| + 1e-12)) in (0, 1];
        0.0 when either model is missing (first round).

    Raises:
        DimensionMismatch: If the two models differ in length.
    """
    if w_curr is None or w_prev is None:
        return 0.0
    check_same_dimension(w_curr, w_prev)
    relative_change = float(np.linalg.norm(w_curr - w_prev)) / (float(np.linalg.norm(w_prev)) + 1e-12)
    return 1.0 / (1.0 + relative_change)


def compute_anomaly_rate(prev_reputations: Sequence[float], prev_theta: float) -> float:
    """Fraction of the cohort whose previous reputation is below half the previous threshold."""
    if len(prev_reputations) == 0:
        return 0.0
    half = prev_theta / 2.0
    return sum(1 for r in prev_reputations if r < half) / len(prev_reputations)


def update_threshold(state: ThresholdState, hp, conv: float, anomaly_rate: float,
                     adaptive: bool = True) -> ThresholdState:
    """
    Adaptive threshold: clamp(theta_base + gamma * conv - delta * anomaly_rate).

    The previous state is accepted for symmetry with the other round-state
    transitions; the new threshold depends only on this round's inputs.

    Args:
        state: Threshold state of the previous round.
        hp: HyperParams supplying theta_base, gamma, delta and the clamp bounds.
        conv: Convergence metric in [0, 1].
        anomaly_rate: Fraction of suspicious clients in [0, 1].
        adaptive: When False the threshold stays at theta_base (clamped).

    Returns:
        ThresholdState: New threshold within [theta_min, theta_max].
    """
    theta = hp.theta_base
    if adaptive:
        theta += hp.gamma * conv - hp.delta * anomaly_rate
    theta = min(hp.theta_max, max(hp.theta_min, theta))
    if theta != state.theta:
        logger.debug("Threshold %.4f -> %.4f (conv=%.4f, anomaly=%.4f)",
                     state.theta, theta, conv, anomaly_rate)
    return ThresholdState(theta=theta, anomaly_rate=anomaly_rate, conv=conv)


def classify(reputation: float, theta: float) -> Classification:
    """
    Three-way classification against the threshold.

    Args:
        reputation: Client reputation in [0, 1].
        theta: Current threshold.

    Returns:
        Classification: Trusted with weight 1 at or above theta, Suspicious with
        weight R / theta down to theta / 2, Untrusted with weight 0 below.
    """
    if reputation >= theta:
        return Classification(ClientClass.TRUSTED, 1.0)
    if reputation >= theta / 2.0:
        return Classification(ClientClass.SUSPICIOUS, reputation / theta)
    return Classification(ClientClass.UNTRUSTED, 0.0)


def evolve_reputation(reputation: float, behaved_benign: bool, hp, decay: bool = True) -> float:
    """
    Additive recovery by rho_up or decay by rho_down, saturating at 1 and 0.

    With decay disabled a flagged client keeps its reputation unchanged.
    """
    if behaved_benign:
        return min(reputation + hp.rho_up, 1.0)
    if not decay:
        return reputation
    return max(reputation - hp.rho_down, 0.0)


def rounds_to_untrusted(initial: float, theta_max: float, rho_down: float) -> int:
    """Upper bound on consecutive flagged participations before a client is Untrusted."""
    return max(0, math.ceil((initial - theta_max / 2.0) / rho_down))


@dataclass(frozen=True)
class ClientObservation:
    """What the server saw of one cohort client in one round."""

    client_id: int
    flagged: bool
    reputation: float
    half_threshold: float
    pre_clip_norm: float
    median_norm: float
    r1: float
    r2: float


@dataclass(frozen=True)
class DetectionRecord:
    round_index: int
    observations: tuple


class DetectionHistory:
    """Sliding window of the most recent detection records."""

    def __init__(self, window: int = PATTERN_WINDOW):
        self.records: Deque[DetectionRecord] = deque(maxlen=window)
        self._flag_counts: Deque[int] = deque(maxlen=window)

    def append(self, record: DetectionRecord):
        self.records.append(record)
        self._flag_counts.append(sum(1 for o in record.observations if o.flagged))

    @property
    def has_flagged(self) -> bool:
        """Whether any record in the window flags a client."""
        return any(self._flag_counts)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_client(self) -> Dict[int, List[ClientObservation]]:
        """Observations grouped per client, in round order."""
        grouped: Dict[int, List[ClientObservation]] = {}
        for record in self.records:
            for observation in record.observations:
                grouped.setdefault(observation.client_id, []).append(observation)
        return grouped


def _votes_scaling(observations: List[ClientObservation]) -> bool:
    ratios = [o.pre_clip_norm / o.median_norm for o in observations if o.median_norm > 0.0]
    return bool(ratios) and float(np.mean(ratios)) > SCALING_NORM_RATIO


def _votes_adaptive(observations: List[ClientObservation]) -> bool:
    signs = [o.reputation >= o.half_threshold for o in observations]
    crossings = sum(1 for a, b in zip(signs, signs[1:]) if a != b)
    return crossings >= MIN_OSCILLATIONS


def _votes_label_flip(observations: List[ClientObservation]) -> bool:
    mean_r1 = float(np.mean([o.r1 for o in observations]))
    mean_r2 = float(np.mean([o.r2 for o in observations]))
    return mean_r1 < FLIP_MAX_CONSISTENCY and mean_r2 >= FLIP_MIN_ANOMALY_SCORE


_RULES = {
    AttackPattern.GRADIENT_SCALING: _votes_scaling,
    AttackPattern.ADAPTIVE_ATTACK: _votes_adaptive,
    AttackPattern.LABEL_FLIPPING: _votes_label_flip,
}


def analyze_pattern(history: DetectionHistory) -> AttackPattern:
    """
    Heuristic vote over the clients flagged anywhere in the window.

    Each flagged client votes for every rule its own observations satisfy. A
    pattern is a candidate when a strict majority of flagged clients votes for
    it; the candidate with most votes wins, ties resolved by PATTERN_PRIORITY.

    Args:
        history: Recent detection records.

    Returns:
        AttackPattern: The dominant pattern, or NONE.
    """
    grouped = history.by_client()
    flagged = {cid: obs for cid, obs in grouped.items() if any(o.flagged for o in obs)}
    if not flagged:
        return AttackPattern.NONE

    best, best_votes = AttackPattern.NONE, 0
    for pattern in PATTERN_PRIORITY:
        votes = sum(1 for obs in flagged.values() if _RULES[pattern](obs))
        if 2 * votes > len(flagged) and votes > best_votes:
            best, best_votes = pattern, votes
    return best
