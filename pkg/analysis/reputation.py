# analysis/reputation.py
"""
Reputation Module

Per-round evidence scores for each client and their combination into a
composite reputation:

- consistency: cosine agreement of an update with the client's own history
- anomaly: standardized distance of an update from the cohort, using an
  incrementally tracked per-parameter variance (diagonal covariance)
- temporal: participation rate and response-time stability

The three scores are mixed with weights recomputed every round from how well
each dimension separates suspicious clients from the rest.

The single-client functions state the scoring rules; score_cohort applies the
same rules to a whole cohort at once on an (n, d) update matrix.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from constants import INITIAL_REPUTATION, VARIANCE_FLOOR, WEIGHT_SMOOTHING
from analysis.assessment import AttackPattern
from analysis.client_models import (ClientState, ModelVector, check_same_dimension,
                                    cosine_similarity)
from analysis.errors import DimensionMismatch, EmptyCohort, InvalidParameter

# Convergence-phase multipliers on the dimension importances (r1, r2, r3).
LATE_PHASE_MULTIPLIERS = np.array([1.5, 1.0, 1.2])
EARLY_PHASE_MULTIPLIERS = np.array([0.8, 1.3, 1.0])

# Boost applied when the history points at a dominant attack pattern.
PATTERN_MULTIPLIERS = {
    AttackPattern.NONE: np.array([1.0, 1.0, 1.0]),
    AttackPattern.GRADIENT_SCALING: np.array([1.0, 2.0, 1.0]),
    AttackPattern.ADAPTIVE_ATTACK: np.array([1.0, 1.0, 2.0]),
    AttackPattern.LABEL_FLIPPING: np.array([1.8, 1.0, 1.0]),
}

ALL_DIMENSIONS = (True, True, True)


@dataclass(frozen=True)
class VarianceTracker:
    """Per-parameter variance estimate carried across rounds."""

    variance: Optional[np.ndarray] = None
    initialized: bool = False


@dataclass(frozen=True)
class DynamicWeights:
    """Mixing weights of the three evidence dimensions and the previous round's weights."""

    w: np.ndarray = field(default_factory=lambda: np.full(3, 1.0 / 3.0))
    previous: np.ndarray = field(default_factory=lambda: np.full(3, 1.0 / 3.0))

    @classmethod
    def initial(cls, enabled: Sequence[bool] = ALL_DIMENSIONS) -> "DynamicWeights":
        mask = _dimension_mask(enabled)
        w = mask / mask.sum()
        return cls(w=w, previous=np.array(w, copy=True))


@dataclass(frozen=True)
class CohortScores:
    """
    Evidence of one round for every responding cohort member, in cohort order.

    Attributes:
        components: (n, 3) matrix of r1, r2, r3.
        emas: (n, d) updated moving averages, one row per member.
        distances: Anomaly distance of each member.
        norms: L2 norm of each member's update.
        reference: Members that fed the cohort mean and the variance estimate.
        tracker: Variance state after this round.
    """

    components: np.ndarray
    emas: np.ndarray
    distances: np.ndarray
    norms: np.ndarray
    reference: np.ndarray
    tracker: VarianceTracker


def _dimension_mask(enabled: Sequence[bool]) -> np.ndarray:
    mask = np.asarray(enabled, dtype=bool).reshape(-1)
    if mask.shape[0] != 3 or not mask.any():
        raise InvalidParameter(f"Need three dimension switches with at least one enabled, got {list(enabled)}")
    return mask.astype(np.float64)


def _stack_updates(updates) -> np.ndarray:
    if isinstance(updates, np.ndarray) and updates.ndim == 2:
        return updates
    dim = updates[0].shape[0]
    for update in updates:
        if update.shape[0] != dim:
            raise DimensionMismatch(dim, update.shape[0])
    return np.vstack(updates)


def consistency_score(client: ClientState, update: ModelVector,
                      alpha: float) -> Tuple[float, ModelVector]:
    """
    Consistency of an update with the client's moving average of past updates.

    The recursion s = alpha * s_prev + (1 - alpha) * cos(update, ema) runs on
    the raw cosine scale [-1, 1]; the stored component is (s + 1) / 2, so the
    raw value of the previous round is recovered as 2 * r1_prev - 1. A first
    participation scores the neutral 0.5 and seeds the average with the update.

    Args:
        client: Client whose history is consulted (not modified).
        update: The client's update for this round.
        alpha: Decay factor of both the score recursion and the moving average.

    Returns:
        tuple: (r1 in [0, 1], new moving average).

    Raises:
        DimensionMismatch: If the update and the stored average differ in length.
    """
    if client.update_ema is None:
        return INITIAL_REPUTATION, np.array(update, dtype=np.float64, copy=True)

    check_same_dimension(update, client.update_ema)
    raw_previous = 2.0 * float(client.components[0]) - 1.0
    raw = alpha * raw_previous + (1.0 - alpha) * cosine_similarity(update, client.update_ema)
    new_ema = alpha * client.update_ema + (1.0 - alpha) * update
    r1 = min(1.0, max(0.0, (raw + 1.0) / 2.0))
    return r1, new_ema


def cohort_consistency(clients: Sequence[ClientState], updates: np.ndarray,
                       alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    consistency_score for a whole cohort.

    Args:
        clients: Cohort members, aligned with the rows of updates.
        updates: (n, d) update matrix.
        alpha: Decay factor.

    Returns:
        tuple: (r1 per member, (n, d) matrix of new moving averages).
    """
    n = updates.shape[0]
    r1 = np.full(n, INITIAL_REPUTATION)
    emas = np.array(updates, dtype=np.float64, copy=True)
    rows = [i for i, client in enumerate(clients) if client.update_ema is not None]
    if not rows:
        return r1, emas

    history = np.vstack([clients[i].update_ema for i in rows])
    if history.shape[1] != updates.shape[1]:
        raise DimensionMismatch(history.shape[1], updates.shape[1])
    current = updates[rows]
    dots = np.einsum("ij,ij->i", current, history)
    norms = np.linalg.norm(current, axis=1) * np.linalg.norm(history, axis=1)
    cosines = np.clip(np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0.0), -1.0, 1.0)
    previous = np.array([clients[i].components[0] for i in rows], dtype=np.float64)

    raw = alpha * (2.0 * previous - 1.0) + (1.0 - alpha) * cosines
    r1[rows] = np.clip((raw + 1.0) / 2.0, 0.0, 1.0)
    emas[rows] = alpha * history + (1.0 - alpha) * current
    return r1, emas


def update_variance(tracker: VarianceTracker, updates: Sequence[ModelVector],
                    alpha_cov: float) -> VarianceTracker:
    """
    Incremental per-parameter variance update.

    sigma2 <- alpha_cov * sigma2_prev + (1 - alpha_cov) / |C| * sum_i (dw_i - mu)^2,
    element-wise, with sigma2_prev = 0 on the first call. Memory and time are
    linear in the model dimension.

    Args:
        tracker: State from the previous round.
        updates: This round's cohort updates, a list of vectors or an (n, d) matrix.
        alpha_cov: Decay of the previous estimate.

    Returns:
        VarianceTracker: The new, initialized state.

    Raises:
        EmptyCohort: If no updates are given.
        DimensionMismatch: If updates differ in dimension from each other or the tracker.
    """
    if len(updates) == 0:
        raise EmptyCohort("Variance update requires at least one client update")
    stacked = _stack_updates(updates)
    dim = stacked.shape[1]

    if tracker.initialized:
        if tracker.variance.shape[0] != dim:
            raise DimensionMismatch(tracker.variance.shape[0], dim)
        previous = tracker.variance
    else:
        previous = np.zeros(dim, dtype=np.float64)

    deviation = stacked - stacked.mean(axis=0)
    spread = np.einsum("ij,ij->j", deviation, deviation) / stacked.shape[0]
    variance = alpha_cov * previous + (1.0 - alpha_cov) * spread
    return VarianceTracker(variance=np.maximum(variance, 0.0), initialized=True)


def anomaly_distance(update: ModelVector, cohort_mean: ModelVector,
                     tracker: VarianceTracker) -> float:
    """
    Standardized Euclidean distance of an update from the cohort mean.

    Args:
        update: The client's update.
        cohort_mean: Mean update of this round's cohort.
        tracker: Initialized variance state for this dimension.

    Returns:
        float: sqrt(sum_p (dw_p - mu_p)^2 / max(sigma2_p, floor)).

    Raises:
        DimensionMismatch: If the three vectors differ in length.
        InvalidParameter: If the tracker has not been initialized.
    """
    if not tracker.initialized:
        raise InvalidParameter("Variance tracker must be initialized before measuring distances")
    check_same_dimension(update, cohort_mean)
    check_same_dimension(update, tracker.variance)
    deviation = update - cohort_mean
    return float(np.sqrt(np.sum(deviation * deviation / np.maximum(tracker.variance, VARIANCE_FLOOR))))


def normalized_anomaly_distance(update: ModelVector, cohort_mean: ModelVector,
                                tracker: VarianceTracker) -> float:
    """Standardized distance divided by sqrt(d): a root-mean-square z-score."""
    return anomaly_distance(update, cohort_mean, tracker) / math.sqrt(update.shape[0])


def anomaly_distances(updates: np.ndarray, cohort_mean: ModelVector, tracker: VarianceTracker,
                      normalize: bool = False) -> np.ndarray:
    """Row-wise anomaly_distance (or its normalized form) of an (n, d) update matrix."""
    if not tracker.initialized:
        raise InvalidParameter("Variance tracker must be initialized before measuring distances")
    if updates.shape[1] != cohort_mean.shape[0]:
        raise DimensionMismatch(cohort_mean.shape[0], updates.shape[1])
    if updates.shape[1] != tracker.variance.shape[0]:
        raise DimensionMismatch(tracker.variance.shape[0], updates.shape[1])
    deviation = updates - cohort_mean
    scaled = deviation / np.maximum(tracker.variance, VARIANCE_FLOOR)
    distances = np.sqrt(np.einsum("ij,ij->i", deviation, scaled))
    if normalize:
        distances = distances / math.sqrt(updates.shape[1])
    return distances


def reference_members(norms, ratio: float) -> np.ndarray:
    """
    Members whose update norm is within ratio times the cohort's lower-median norm.

    At least half of the cohort always qualifies. When the median norm is zero
    only the zero updates qualify.

    Raises:
        EmptyCohort: If no norms are given.
    """
    norms = np.asarray(norms, dtype=np.float64).reshape(-1)
    if norms.shape[0] == 0:
        raise EmptyCohort("Reference set of an empty cohort")
    median = float(np.sort(norms)[(norms.shape[0] - 1) // 2])
    if median == 0.0:
        return norms == 0.0
    return norms <= ratio * median


def anomaly_score(d: float, tau_d: float, lambda_: float) -> float:
    """Penalty score: 1 up to the threshold, exponential decay beyond it."""
    if d <= tau_d:
        return 1.0
    return math.exp(-lambda_ * (d - tau_d))


def anomaly_scores(distances, tau_d: float, lambda_: float) -> np.ndarray:
    excess = np.maximum(np.asarray(distances, dtype=np.float64) - tau_d, 0.0)
    return np.exp(-lambda_ * excess)


def temporal_score(client: ClientState, beta: float) -> float:
    """
    Temporal reliability: beta * participation + (1 - beta) / (1 + sigma_RT).

    Args:
        client: Client whose participation and response windows are read.
        beta: Balance between the two factors.

    Returns:
        float: Score in [0, 1].
    """
    participation = client.participation_rate()
    stability = 1.0 / (1.0 + client.response_time_std())
    return beta * participation + (1.0 - beta) * stability


def score_cohort(clients: Sequence[ClientState], updates, tracker: VarianceTracker,
                 hp) -> CohortScores:
    """
    Compute r1, r2 and r3 for every responding cohort member.

    The cohort mean and the variance update use the reference members only,
    so a minority of oversized updates cannot inflate the variance that their
    own distances are measured against. Every member is then scored against
    that reference.

    Args:
        clients: Cohort members (not modified).
        updates: Their privatized updates, a list of vectors or an (n, d) matrix.
        tracker: Variance state of the previous round.
        hp: HyperParams supplying alpha, beta, tau_d, lambda, alpha_cov,
            reference_norm_ratio and normalize_distance.

    Returns:
        CohortScores: Scores, new moving averages and the new variance state.

    Raises:
        EmptyCohort: If the cohort is empty.
        DimensionMismatch: If updates disagree in dimension.
    """
    if len(updates) == 0:
        raise EmptyCohort("Scoring requires at least one client update")
    stacked = _stack_updates(updates)
    norms = np.linalg.norm(stacked, axis=1)
    reference = reference_members(norms, hp.reference_norm_ratio)
    members = stacked[reference]

    tracker = update_variance(tracker, members, hp.alpha_cov)
    distances = anomaly_distances(stacked, members.mean(axis=0), tracker, hp.normalize_distance)
    r1, emas = cohort_consistency(clients, stacked, hp.alpha)
    r2 = anomaly_scores(distances, hp.tau_d, hp.lambda_)
    r3 = np.array([temporal_score(client, hp.beta) for client in clients], dtype=np.float64)

    components = np.clip(np.column_stack((r1, r2, r3)), 0.0, 1.0)
    return CohortScores(components=components, emas=emas, distances=distances, norms=norms,
                        reference=reference, tracker=tracker)


def normalize_importance(eta: np.ndarray) -> np.ndarray:
    """Softmax of the dimension importances."""
    return softmax(np.asarray(eta, dtype=np.float64))


def compute_dynamic_weights(components, prev_weights: DynamicWeights, prev_reputation,
                            prev_threshold: float, conv: float,
                            attack_pattern: AttackPattern, tau_conv: float,
                            round_index: int, importance_scale: float = 1.0,
                            enabled: Sequence[bool] = ALL_DIMENSIONS) -> DynamicWeights:
    """
    Recompute the mixing weights of the three evidence dimensions.

    The importance of dimension j is the cohort variance of r_j times the gap
    between its mean over non-suspicious and suspicious clients, where a client
    is suspicious if its previous reputation is below half the previous
    threshold. The gap is 0 when either group is empty. Importances are then
    scaled by the convergence phase, the detected attack pattern and
    importance_scale, passed through a softmax over the enabled dimensions,
    and smoothed against the previous weights from round 2 on. Disabled
    dimensions always get weight 0.

    Args:
        components: Array-like of shape (|C|, 3) with this round's r1, r2, r3.
        prev_weights: Weights of the previous round.
        prev_reputation: Previous reputation of each cohort client, same order.
        prev_threshold: Threshold of the previous round.
        conv: Convergence metric of this round.
        attack_pattern: Output of the pattern analysis over recent rounds.
        tau_conv: Convergence level separating early and late training.
        round_index: Current round, 1-based; smoothing is skipped in round 1.
        importance_scale: Factor applied to the importances before the softmax.
        enabled: Which of r1, r2, r3 take part in the composite score.

    Returns:
        DynamicWeights: Weights summing to 1.

    Raises:
        EmptyCohort: If the cohort is empty.
        InvalidParameter: If importance_scale is not positive or no dimension is enabled.
    """
    scores = np.asarray(components, dtype=np.float64).reshape(-1, 3)
    if scores.shape[0] == 0:
        raise EmptyCohort("Dynamic weights require a non-empty cohort")
    reputations = np.asarray(prev_reputation, dtype=np.float64).reshape(-1)
    if reputations.shape[0] != scores.shape[0]:
        raise DimensionMismatch(scores.shape[0], reputations.shape[0])
    if importance_scale <= 0.0:
        raise InvalidParameter(f"importance_scale must be > 0, got {importance_scale}")
    active = _dimension_mask(enabled) > 0.0

    variance = scores.var(axis=0)
    suspicious = reputations < prev_threshold / 2.0
    if suspicious.any() and (~suspicious).any():
        separation = np.abs(scores[~suspicious].mean(axis=0) - scores[suspicious].mean(axis=0))
    else:
        separation = np.zeros(3)

    eta = variance * separation
    eta = eta * (LATE_PHASE_MULTIPLIERS if conv > tau_conv else EARLY_PHASE_MULTIPLIERS)
    eta = eta * PATTERN_MULTIPLIERS[attack_pattern]

    weights = np.zeros(3)
    weights[active] = normalize_importance(importance_scale * eta[active])
    if round_index > 1:
        weights = WEIGHT_SMOOTHING * weights + (1.0 - WEIGHT_SMOOTHING) * prev_weights.w
        weights[~active] = 0.0
    weights = weights / weights.sum()
    return DynamicWeights(w=weights, previous=np.array(prev_weights.w, copy=True))


def composite_score(components, weights: DynamicWeights) -> float:
    """Convex combination of the evidence scores; stays in [0, 1]."""
    value = float(np.dot(weights.w, np.asarray(components, dtype=np.float64)))
    return min(1.0, max(0.0, value))


def composite_scores(components: np.ndarray, weights: DynamicWeights) -> np.ndarray:
    """composite_score for every row of a (n, 3) component matrix."""
    return np.clip(np.asarray(components, dtype=np.float64) @ weights.w, 0.0, 1.0)
