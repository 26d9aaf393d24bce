# analysis/adversary.py
"""
Adversary Module

Update generators for the six malicious behaviours. Every generator takes the
client's honest update (computed by the simulation environment, on flipped
labels for label-flip clients) and returns what the client actually sends.

Colluding attackers (ALIE and statistical mimicry) share a CollusionPool: the
mean and per-coordinate variance of their members' honest updates in the
current round. The pool is built once per round before any member crafts its
update.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from analysis.aggregation import clip_update
from analysis.client_models import ClientRole, ClientState, ModelVector, check_same_dimension
from analysis.errors import InvalidParameter, UnknownRole

logger = logging.getLogger(__name__)


def _unit(direction) -> Optional[np.ndarray]:
    if direction is None:
        return None
    vector = np.asarray(direction, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise InvalidParameter("Attack direction must be a non-zero vector")
    return vector / norm


@dataclass(frozen=True)
class LabelFlipParams:
    """Label flipping acts on the training data; nothing to configure here."""


@dataclass(frozen=True)
class ByzantineParams:
    variance: float = 1.0

    def __post_init__(self):
        if self.variance <= 0.0:
            raise InvalidParameter(f"Byzantine variance must be > 0, got {self.variance}")


@dataclass(frozen=True)
class ScalingParams:
    factor: float = 5.0

    def __post_init__(self):
        if self.factor <= 0.0:
            raise InvalidParameter(f"Scaling factor must be > 0, got {self.factor}")


@dataclass(frozen=True)
class AdaptiveParams:
    attack_prob: float = 0.3
    payload: ScalingParams = field(default_factory=ScalingParams)

    def __post_init__(self):
        if not 0.0 <= self.attack_prob <= 1.0:
            raise InvalidParameter(f"attack_prob must lie in [0, 1], got {self.attack_prob}")


@dataclass(frozen=True)
class AlieParams:
    z: float = 1.5
    direction: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.z < 0.0:
            raise InvalidParameter(f"ALIE z must be >= 0, got {self.z}")
        object.__setattr__(self, "direction", _unit(self.direction))


@dataclass(frozen=True)
class SmParams:
    """
    Statistical mimicry parameters.

    Attributes:
        mix_alpha: Weight of the sampled template against the honest update.
        total_bias: Drift B accumulated along `direction` over the horizon.
        horizon: Number of rounds T the drift is spread over.
        direction: Unit drift direction.
        clip: Optional L2 bound the crafted update is projected onto.
    """

    mix_alpha: float = 0.3
    total_bias: float = 0.5
    horizon: int = 200
    direction: Optional[np.ndarray] = None
    clip: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.mix_alpha <= 1.0:
            raise InvalidParameter(f"mix_alpha must lie in [0, 1], got {self.mix_alpha}")
        if self.total_bias < 0.0:
            raise InvalidParameter(f"total_bias must be >= 0, got {self.total_bias}")
        if self.horizon < 1:
            raise InvalidParameter(f"horizon must be >= 1, got {self.horizon}")
        if self.clip is not None and self.clip <= 0.0:
            raise InvalidParameter(f"clip must be > 0, got {self.clip}")
        object.__setattr__(self, "direction", _unit(self.direction))

    def drift(self, t: int) -> float:
        """Per-round bias gamma_t = B / T inside the horizon, 0 after it."""
        if 1 <= t <= self.horizon:
            return self.total_bias / self.horizon
        return 0.0


AttackParams = Union[LabelFlipParams, ByzantineParams, ScalingParams, AdaptiveParams, AlieParams, SmParams]

_PARAM_TYPES = {
    ClientRole.LABEL_FLIP: LabelFlipParams,
    ClientRole.BYZANTINE: ByzantineParams,
    ClientRole.SCALING: ScalingParams,
    ClientRole.ADAPTIVE: AdaptiveParams,
    ClientRole.ALIE: AlieParams,
    ClientRole.SM: SmParams,
}


@dataclass(frozen=True)
class AttackSpec:
    """Malicious role together with its parameters."""

    role: ClientRole
    params: AttackParams

    def __post_init__(self):
        expected = _PARAM_TYPES.get(self.role)
        if expected is None:
            raise UnknownRole(f"No attack behaviour for role '{self.role.value}'")
        if not isinstance(self.params, expected):
            raise InvalidParameter(
                f"Role '{self.role.value}' expects {expected.__name__}, got {type(self.params).__name__}")

    @classmethod
    def default(cls, role: ClientRole, rounds: int = 200,
                direction: Optional[np.ndarray] = None) -> "AttackSpec":
        """Default parameters for a role; colluding roles receive the drift direction."""
        if role is ClientRole.ALIE:
            return cls(role, AlieParams(direction=direction))
        if role is ClientRole.SM:
            return cls(role, SmParams(horizon=rounds, direction=direction))
        if role not in _PARAM_TYPES:
            raise UnknownRole(f"No attack behaviour for role '{role.value}'")
        return cls(role, _PARAM_TYPES[role]())

    @classmethod
    def from_dict(cls, role: ClientRole, values: Optional[dict], rounds: int = 200,
                  direction: Optional[np.ndarray] = None) -> "AttackSpec":
        """
        Build a spec from the parameter mapping of an experiment document.

        Args:
            role: Malicious role.
            values: Parameter overrides, e.g. {"variance": 0.5}; the adaptive
                payload is given as a plain scaling factor.
            rounds: Run length, the default SM horizon.
            direction: Drift direction for the colluding roles.

        Raises:
            UnknownRole: If the role has no behaviour.
            InvalidParameter: If a key is unknown or a value out of range.
        """
        if role not in _PARAM_TYPES:
            raise UnknownRole(f"No attack behaviour for role '{role.value}'")
        values = dict(values or {})
        try:
            if role is ClientRole.ADAPTIVE:
                payload = values.pop("payload", None)
                if payload is not None:
                    values["payload"] = ScalingParams(float(payload))
                params = AdaptiveParams(**values)
            elif role is ClientRole.ALIE:
                params = AlieParams(direction=direction, **values)
            elif role is ClientRole.SM:
                values.setdefault("horizon", rounds)
                params = SmParams(direction=direction, **values)
            else:
                params = _PARAM_TYPES[role](**values)
        except TypeError as e:
            raise InvalidParameter(f"Bad parameters for attack '{role.value}': {e}") from e
        return cls(role, params)


class CollusionPool:
    """
    Shared honest-update statistics of colluding attackers for one round.

    Only the diagonal of the covariance is kept.
    """

    def __init__(self, member_ids: Sequence[int], mean: ModelVector, variance: ModelVector):
        check_same_dimension(mean, variance)
        self.member_ids = tuple(member_ids)
        self.mean = mean
        self.variance = np.maximum(variance, 0.0)

    @classmethod
    def from_updates(cls, member_ids: Sequence[int], honest_updates: Sequence[ModelVector]) -> "CollusionPool":
        """Estimate mean and population variance from the members' honest updates."""
        if len(member_ids) != len(honest_updates) or not honest_updates:
            raise InvalidParameter("Collusion pool needs one honest update per member")
        stacked = np.vstack(honest_updates)
        return cls(member_ids, stacked.mean(axis=0), stacked.var(axis=0))

    @classmethod
    def solo(cls, client_id: int, honest: ModelVector) -> "CollusionPool":
        """Fallback for a lone attacker: its own update with zero variance."""
        return cls([client_id], np.array(honest, copy=True), np.zeros_like(honest))

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def __len__(self):
        return len(self.member_ids)

    def __str__(self):
        return f"CollusionPool(members={len(self.member_ids)}, d={self.mean.shape[0]})"


def byzantine_update(dim: int, variance: float, rng: np.random.Generator) -> ModelVector:
    """Pure noise: i.i.d. N(0, variance) per coordinate."""
    if variance <= 0.0:
        raise InvalidParameter(f"Byzantine variance must be > 0, got {variance}")
    return rng.normal(0.0, np.sqrt(variance), size=dim)


def scaling_update(honest: ModelVector, factor: float) -> ModelVector:
    """Amplify the honest update by `factor`."""
    if factor <= 0.0:
        raise InvalidParameter(f"Scaling factor must be > 0, got {factor}")
    return factor * honest


def adaptive_update(honest: ModelVector, params: AdaptiveParams,
                    rng: np.random.Generator) -> Tuple[ModelVector, bool]:
    """
    Intermittent attacker: sends the scaled payload with probability attack_prob.

    Returns:
        tuple: (update, attacked) where attacked reports the coin flip.
    """
    attacked = bool(rng.random() < params.attack_prob)
    if attacked:
        return scaling_update(honest, params.payload.factor), True
    return np.array(honest, copy=True), False


def alie_update(pool: CollusionPool, params: AlieParams) -> ModelVector:
    """
    Synthetic update z estimated standard deviations away from the honest mean.

    Args:
        pool: Colluders' honest-update statistics for this round.
        params: ALIE parameters; `direction` must be set.

    Returns:
        np.ndarray: mean - z * (std * direction).
    """
    if params.direction is None:
        raise InvalidParameter("ALIE requires a direction")
    check_same_dimension(pool.mean, params.direction)
    return pool.mean - params.z * (pool.std * params.direction)


def sm_update(honest: ModelVector, pool: CollusionPool, params: SmParams, t: int,
              rng: np.random.Generator) -> ModelVector:
    """
    Statistical mimicry: honest update blended with a sampled template plus a small drift.

    g = (1 - alpha) * honest + alpha * (mean + eps) + gamma_t * direction,
    eps ~ N(0, diag(variance)), optionally projected onto the clip ball.

    Args:
        honest: The client's true local update.
        pool: Colluders' honest-update statistics for this round.
        params: SM parameters.
        t: Current round, 1-based.
        rng: The client's attack substream for this round.

    Returns:
        np.ndarray: The crafted update.
    """
    check_same_dimension(honest, pool.mean)
    gamma = params.drift(t)
    template = pool.mean + rng.normal(0.0, pool.std)
    crafted = (1.0 - params.mix_alpha) * honest + params.mix_alpha * template
    if gamma != 0.0:
        if params.direction is None:
            raise InvalidParameter("Statistical mimicry with a non-zero bias requires a direction")
        check_same_dimension(honest, params.direction)
        crafted = crafted + gamma * params.direction
    if params.clip is not None:
        crafted = clip_update(crafted, params.clip)
    return crafted


def make_update(client: ClientState, honest: ModelVector, spec: Optional[AttackSpec],
                pool: Optional[CollusionPool], t: int,
                rng: np.random.Generator) -> Tuple[ModelVector, bool]:
    """
    Route a client's honest update through its role's behaviour.

    Args:
        client: The sending client.
        honest: Update from local training (already on flipped labels for
            label-flip clients).
        spec: Attack specification of the client's role; ignored for benign clients.
        pool: Collusion pool of the round, or None when no colluder is in the cohort.
        t: Current round, 1-based.
        rng: The client's attack substream for this round.

    Returns:
        tuple: (update, attacked) where attacked is the ground truth of this round.

    Raises:
        UnknownRole: If the role has no registered behaviour or no spec is given.
    """
    role = client.role
    if role is ClientRole.BENIGN:
        return honest, False
    if spec is None or spec.role is not role:
        raise UnknownRole(f"Client {client.id} has role '{role.value}' but no matching attack spec")

    if role is ClientRole.LABEL_FLIP:
        return honest, True
    if role is ClientRole.BYZANTINE:
        return byzantine_update(honest.shape[0], spec.params.variance, rng), True
    if role is ClientRole.SCALING:
        return scaling_update(honest, spec.params.factor), True
    if role is ClientRole.ADAPTIVE:
        return adaptive_update(honest, spec.params, rng)

    if pool is None or len(pool) < 2:
        pool = CollusionPool.solo(client.id, honest)
    if role is ClientRole.ALIE:
        return alie_update(pool, spec.params), True
    if role is ClientRole.SM:
        return sm_update(honest, pool, spec.params, t, rng), True
    raise UnknownRole(f"No attack behaviour for role '{role.value}'")
