# analysis/aggregation.py
"""
Aggregation Module

Server-side clipping, the client-side local differential privacy mechanism,
the reputation-weighted aggregation and the baseline aggregators (FedAvg,
Krum, coordinate-wise trimmed mean) used for comparison runs.

All aggregators take the previous global model and a list of update deltas
and return the new global model; none of them mutate their inputs.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from analysis.client_models import ModelVector, check_same_dimension
from analysis.errors import CohortTooSmall, EmptyCohort, InvalidParameter

logger = logging.getLogger(__name__)


class AggregatorKind(Enum):
    FLARE = "flare"
    FEDAVG = "fedavg"
    KRUM = "krum"
    TRIMMED_MEAN = "trimmed_mean"


@dataclass(frozen=True)
class AggregatorSpec:
    """
    Aggregator choice with its parameters.

    `f` is the number of Byzantine clients Krum tolerates; `trim_fraction` is
    the share of values dropped at each end by the trimmed mean.
    """

    kind: AggregatorKind = AggregatorKind.FLARE
    f: int = 1
    trim_fraction: float = 0.1

    def __post_init__(self):
        if self.f < 0:
            raise InvalidParameter(f"Krum f must be >= 0, got {self.f}")
        if not 0.0 <= self.trim_fraction < 0.5:
            raise InvalidParameter(f"trim_fraction must lie in [0, 0.5), got {self.trim_fraction}")

    @property
    def name(self) -> str:
        return self.kind.value

    def check_cohort(self, cohort_size: int):
        """
        Verify that a cohort of this size can be aggregated.

        Raises:
            CohortTooSmall: If Krum has fewer than f + 3 updates or the trimmed
                mean would drop every value.
        """
        if self.kind is AggregatorKind.KRUM and cohort_size < self.f + 3:
            raise CohortTooSmall(f"Krum with f={self.f} needs at least {self.f + 3} updates, got {cohort_size}")
        if self.kind is AggregatorKind.TRIMMED_MEAN:
            trimmed = math.floor(self.trim_fraction * cohort_size)
            if 2 * trimmed >= cohort_size:
                raise CohortTooSmall(
                    f"Trimmed mean with trim={self.trim_fraction} leaves nothing of {cohort_size} updates")


def clip_update(update: ModelVector, c: float) -> ModelVector:
    """
    Scale an update down to L2 norm at most c.

    Args:
        update: Update delta.
        c: Clipping bound, strictly positive.

    Returns:
        np.ndarray: update * min(1, c / ||update||); zero updates are returned as-is.
    """
    if c <= 0.0:
        raise InvalidParameter(f"Clipping bound must be positive, got {c}")
    norm = float(np.linalg.norm(update))
    if norm <= c:
        return np.array(update, dtype=np.float64, copy=True)
    return update * (c / norm)


def median_norm(updates: Sequence[ModelVector]) -> float:
    """Lower median of the updates' L2 norms."""
    if len(updates) == 0:
        raise EmptyCohort("Median norm of an empty cohort")
    return lower_median(np.linalg.norm(_stack(updates), axis=1))


def lower_median(values) -> float:
    ordered = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    return float(ordered[(ordered.shape[0] - 1) // 2])


def clip_rows(updates: np.ndarray, norms: np.ndarray, c: float) -> np.ndarray:
    """
    clip_update applied to every row of an (n, d) matrix whose row norms are known.

    Raises:
        InvalidParameter: If c is not positive.
    """
    if c <= 0.0:
        raise InvalidParameter(f"Clipping bound must be positive, got {c}")
    scale = np.divide(c, norms, out=np.ones_like(norms), where=norms > c)
    return updates * scale[:, None]


def apply_ldp(update: ModelVector, c_ldp: float, sigma: float,
              rng: np.random.Generator) -> ModelVector:
    """
    Gaussian mechanism run on the client before transmission.

    Args:
        update: Raw update delta.
        c_ldp: Sensitivity clip.
        sigma: Noise multiplier; noise std per coordinate is c_ldp * sigma.
        rng: The client's LDP substream for this round.

    Returns:
        np.ndarray: Clipped update plus N(0, (c_ldp * sigma)^2 I) noise.
    """
    if sigma < 0.0:
        raise InvalidParameter(f"LDP noise multiplier must be >= 0, got {sigma}")
    clipped = clip_update(update, c_ldp)
    if sigma == 0.0:
        return clipped
    return clipped + rng.normal(0.0, c_ldp * sigma, size=clipped.shape[0])


def _stack(updates: Sequence[ModelVector]) -> np.ndarray:
    for update in updates[1:]:
        check_same_dimension(updates[0], update)
    return np.vstack(updates)


def _weighted_step(w_prev: ModelVector, deltas: Sequence[ModelVector], weights: np.ndarray) -> ModelVector:
    check_same_dimension(w_prev, deltas[0])
    return w_prev + np.average(_stack(deltas), axis=0, weights=weights)


def flare_aggregate(w_prev: ModelVector,
                    updates: Sequence[Tuple[ModelVector, float, int]]) -> ModelVector:
    """
    Reputation- and size-weighted average over the trusted set.

    Args:
        w_prev: Current global model.
        updates: (delta, reputation, n_samples) for every client with R >= theta / 2,
            already clipped to the round's median norm.

    Returns:
        np.ndarray: w_prev + sum(R_i n_i delta_i) / sum(R_i n_i), or a copy of
        w_prev when the trusted set is empty or carries no weight.
    """
    if len(updates) == 0:
        logger.warning("⚠️ Empty trusted set, global model unchanged")
        return np.array(w_prev, copy=True)
    weights = np.array([r * n for _, r, n in updates], dtype=np.float64)
    if weights.sum() <= 0.0:
        logger.warning("⚠️ Trusted set carries zero total weight, global model unchanged")
        return np.array(w_prev, copy=True)
    return _weighted_step(w_prev, [u for u, _, _ in updates], weights)


def hard_cut_aggregate(w_prev: ModelVector, updates: Sequence[Tuple[ModelVector, float, int]],
                       theta: float) -> ModelVector:
    """Unweighted mean over clients with R >= theta; everyone else is dropped."""
    kept = [u for u, r, _ in updates if r >= theta]
    if not kept:
        logger.warning("⚠️ No client at or above the threshold, global model unchanged")
        return np.array(w_prev, copy=True)
    return _weighted_step(w_prev, kept, np.ones(len(kept)))


def fedavg_aggregate(w_prev: ModelVector, updates: Sequence[Tuple[ModelVector, int]]) -> ModelVector:
    """
    Sample-size weighted mean of the deltas, no defense.

    Raises:
        EmptyCohort: If no updates are given.
    """
    if len(updates) == 0:
        raise EmptyCohort("FedAvg needs at least one update")
    weights = np.array([n for _, n in updates], dtype=np.float64)
    return _weighted_step(w_prev, [u for u, _ in updates], weights)


def krum_scores(updates: Sequence[ModelVector], f: int) -> np.ndarray:
    """Sum of squared distances from each update to its n - f - 2 nearest peers."""
    n = len(updates)
    if n < f + 3:
        raise CohortTooSmall(f"Krum with f={f} needs at least {f + 3} updates, got {n}")
    stacked = _stack(updates)
    distances = cdist(stacked, stacked, metric="sqeuclidean")
    neighbours = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(distances[i], i))
        scores[i] = others[:neighbours].sum()
    return scores


def krum_select(updates: Sequence[ModelVector], f: int) -> int:
    """
    Index of the update with the smallest Krum score.

    Args:
        updates: Cohort updates.
        f: Number of Byzantine clients to tolerate.

    Returns:
        int: Selected index; ties go to the lowest index.

    Raises:
        CohortTooSmall: If fewer than f + 3 updates are given.
    """
    return int(np.argmin(krum_scores(updates, f)))


def krum_aggregate(w_prev: ModelVector, updates: Sequence[ModelVector], f: int) -> Tuple[ModelVector, int]:
    """Apply the single update chosen by Krum; also returns the chosen index."""
    index = krum_select(updates, f)
    check_same_dimension(w_prev, updates[index])
    return w_prev + updates[index], index


def trimmed_mean_aggregate(w_prev: ModelVector, updates: Sequence[ModelVector], trim: float) -> ModelVector:
    """
    Coordinate-wise trimmed mean.

    For every coordinate the floor(trim * n) lowest and highest values are
    discarded and the remaining ones averaged.

    Args:
        w_prev: Current global model.
        updates: Cohort updates.
        trim: Fraction trimmed at each end, in [0, 0.5).

    Returns:
        np.ndarray: w_prev plus the trimmed mean delta.

    Raises:
        CohortTooSmall: If trimming would leave no values.
    """
    n = len(updates)
    if n == 0:
        raise EmptyCohort("Trimmed mean needs at least one update")
    if not 0.0 <= trim < 0.5:
        raise InvalidParameter(f"trim must lie in [0, 0.5), got {trim}")
    k = math.floor(trim * n)
    if 2 * k >= n:
        raise CohortTooSmall(f"Trimming {k} values per side leaves nothing of {n} updates")
    ordered = np.sort(_stack(updates), axis=0)
    check_same_dimension(w_prev, ordered[0])
    return w_prev + ordered[k:n - k].mean(axis=0)

