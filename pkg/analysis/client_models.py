# analysis/client_models.py
"""
Client Models Module

Domain types shared by every part of the simulator: model vectors, client
roles, the per-client persistent record and the validated hyperparameter set.
The classes here hold data and enforce their own bounds; scoring and
aggregation live in the neighbouring analysis modules.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, fields
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from constants import HYPERPARAMETER_DEFAULTS, INITIAL_REPUTATION
from analysis.errors import (DimensionMismatch, InvariantViolation,
                             NonFiniteVector, ReputationBoundViolation)

logger = logging.getLogger(__name__)

# A model vector is a dense 1-D float64 array of parameters or parameter deltas.
ModelVector = np.ndarray


def as_model_vector(values, dim: Optional[int] = None) -> ModelVector:
    """
    Convert values to a finite 1-D float64 model vector.

    Args:
        values: Any array-like of reals.
        dim (int, optional): Required dimension.

    Returns:
        np.ndarray: The validated vector (a copy when a conversion was needed).

    Raises:
        DimensionMismatch: If dim is given and does not match.
        NonFiniteVector: If any entry is NaN or infinite.
    """
    vector = np.asarray(values, dtype=np.float64).reshape(-1)
    if dim is not None and vector.shape[0] != dim:
        raise DimensionMismatch(dim, vector.shape[0])
    if not np.all(np.isfinite(vector)):
        raise NonFiniteVector("Model vector contains NaN or infinite entries")
    return vector


def check_same_dimension(a: ModelVector, b: ModelVector):
    """Raise DimensionMismatch unless a and b have the same length."""
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(a.shape[0], b.shape[0])


def cosine_similarity(a: ModelVector, b: ModelVector) -> float:
    """
    Cosine of the angle between two model vectors.

    A zero-norm argument yields 0.0: zero updates occur legitimately once the
    model has converged and carry no directional evidence either way.

    Args:
        a (np.ndarray): First vector.
        b (np.ndarray): Second vector.

    Returns:
        float: Similarity in [-1, 1].

    Raises:
        DimensionMismatch: If the vectors differ in length.
    """
    check_same_dimension(a, b)
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    value = float(np.dot(a, b)) / (norm_a * norm_b)
    return min(1.0, max(-1.0, value))


class ClientRole(Enum):
    """Ground-truth behaviour of a client. Never visible to the server logic."""

    BENIGN = "benign"
    LABEL_FLIP = "label_flip"
    BYZANTINE = "byzantine"
    SCALING = "scaling"
    ADAPTIVE = "adaptive"
    ALIE = "alie"
    SM = "sm"

    @property
    def is_malicious(self) -> bool:
        return self is not ClientRole.BENIGN

    @property
    def colludes(self) -> bool:
        """Whether the role pools honest-proxy statistics with its peers."""
        return self in (ClientRole.ALIE, ClientRole.SM)


class ClientState:
    """
    Persistent per-client record kept by the server across rounds.

    Holds the reputation, its three evidence components, the moving average of
    the client's past updates and the participation / response-time windows
    the temporal score is computed from. The role is the simulator's ground
    truth and is only read by the harness and the attack dispatcher.
    """

    def __init__(self, client_id: int, role: ClientRole, n_samples: int,
                 participation_window: int = 10, response_window: int = 20,
                 response_mu: float = 0.0, response_sigma: float = 0.1):
        """
        Initialize a client record.

        Args:
            client_id: Index of the client in [0, N).
            role: Ground-truth behaviour.
            n_samples: Size of the client's local dataset, at least 1.
            participation_window: Capacity k of the participation ring buffer.
            response_window: Capacity W_rt of the response-time ring buffer.
            response_mu: Log-normal location of the client's response times.
            response_sigma: Log-normal shape of the client's response times.
        """
        if n_samples < 1:
            raise InvariantViolation("n_samples", ">= 1", n_samples)
        self.id = int(client_id)
        self.role = role
        self.n_samples = int(n_samples)
        self._reputation = INITIAL_REPUTATION
        self.components = np.full(3, INITIAL_REPUTATION, dtype=np.float64)
        self.update_ema: Optional[ModelVector] = None
        self.participation_window = deque(maxlen=participation_window)
        self.response_times = deque(maxlen=response_window)
        self.response_mu = float(response_mu)
        self.response_sigma = float(response_sigma)
        self._response_std = 0.0

        # Harness-side bookkeeping, never consulted by scoring
        self.ever_flagged = False
        self.participations = 0

    @property
    def reputation(self) -> float:
        return self._reputation

    @reputation.setter
    def reputation(self, value: float):
        value = float(value)
        if not math.isfinite(value):
            raise ReputationBoundViolation(f"Client {self.id}: non-finite reputation {value}")
        if value < 0.0 or value > 1.0:
            logger.debug("Clamping reputation %.6f of client %d", value, self.id)
            value = min(1.0, max(0.0, value))
        self._reputation = value

    def set_components(self, r1: float, r2: float, r3: float):
        """Store the three evidence scores, clamped to [0, 1]."""
        self.components = np.clip(np.array([r1, r2, r3], dtype=np.float64), 0.0, 1.0)

    def record_participation(self, responded: bool):
        """Append this round's participation outcome to the ring buffer."""
        self.participation_window.append(bool(responded))

    def record_response_time(self, seconds: float):
        """Append an observed response time to the ring buffer and refresh its spread."""
        self.response_times.append(float(seconds))
        if len(self.response_times) >= 2:
            self._response_std = float(np.std(np.fromiter(self.response_times, dtype=np.float64), ddof=1))

    def participation_rate(self) -> float:
        """Fraction of the recorded rounds (at most k) in which the client responded."""
        if not self.participation_window:
            return 0.0
        return sum(self.participation_window) / len(self.participation_window)

    def response_time_std(self) -> float:
        """Sample standard deviation of the response window, 0 below two observations."""
        return self._response_std

    def check_bounds(self):
        """
        Assert that reputation and components lie in [0, 1].

        Raises:
            ReputationBoundViolation: If any value is outside the unit interval.
        """
        if not 0.0 <= self._reputation <= 1.0:
            raise ReputationBoundViolation(
                f"Client {self.id}: reputation {self._reputation} outside [0, 1]")
        if np.any(self.components < 0.0) or np.any(self.components > 1.0):
            raise ReputationBoundViolation(
                f"Client {self.id}: components {self.components.tolist()} outside [0, 1]")

    def __str__(self):
        return (f"ClientState(id={self.id}, role={self.role.value}, "
                f"R={self._reputation:.3f}, n={self.n_samples})")


@dataclass(frozen=True)
class HyperParams:
    """
    Validated hyperparameters of one experiment.

    Construction checks every documented bound and raises InvariantViolation
    naming the offending field. `lambda_` is addressed as "lambda" in
    configuration documents.
    """

    alpha: float = HYPERPARAMETER_DEFAULTS["alpha"]
    beta: float = HYPERPARAMETER_DEFAULTS["beta"]
    tau_d: float = HYPERPARAMETER_DEFAULTS["tau_d"]
    lambda_: float = HYPERPARAMETER_DEFAULTS["lambda"]
    gamma: float = HYPERPARAMETER_DEFAULTS["gamma"]
    delta: float = HYPERPARAMETER_DEFAULTS["delta"]
    theta_base: float = HYPERPARAMETER_DEFAULTS["theta_base"]
    rho_up: float = HYPERPARAMETER_DEFAULTS["rho_up"]
    rho_down: float = HYPERPARAMETER_DEFAULTS["rho_down"]
    alpha_cov: float = HYPERPARAMETER_DEFAULTS["alpha_cov"]
    tau_conv: float = HYPERPARAMETER_DEFAULTS["tau_conv"]
    theta_min: float = HYPERPARAMETER_DEFAULTS["theta_min"]
    theta_max: float = HYPERPARAMETER_DEFAULTS["theta_max"]
    sigma_ldp: float = HYPERPARAMETER_DEFAULTS["sigma_ldp"]
    c_ldp: float = HYPERPARAMETER_DEFAULTS["c_ldp"]
    participation_window: int = HYPERPARAMETER_DEFAULTS["participation_window"]
    response_window: int = HYPERPARAMETER_DEFAULTS["response_window"]
    normalize_distance: bool = HYPERPARAMETER_DEFAULTS["normalize_distance"]
    reference_norm_ratio: float = HYPERPARAMETER_DEFAULTS["reference_norm_ratio"]
    importance_scale: float = HYPERPARAMETER_DEFAULTS["importance_scale"]
    rounds: int = HYPERPARAMETER_DEFAULTS["rounds"]
    cohort_size: int = HYPERPARAMETER_DEFAULTS["cohort_size"]
    local_epochs: int = HYPERPARAMETER_DEFAULTS["local_epochs"]
    learning_rate: float = HYPERPARAMETER_DEFAULTS["learning_rate"]
    batch_size: int = HYPERPARAMETER_DEFAULTS["batch_size"]
    weight_decay: float = HYPERPARAMETER_DEFAULTS["weight_decay"]
    seed: int = HYPERPARAMETER_DEFAULTS["seed"]

    def __post_init__(self):
        for name in ("alpha", "beta", "alpha_cov", "tau_conv"):
            _require(name, 0.0 <= getattr(self, name) <= 1.0, "0 <= value <= 1", getattr(self, name))
        _require("rho_up", self.rho_up >= 0.0, "rho_up >= 0", self.rho_up)
        _require("rho_up", self.rho_up < self.rho_down, "rho_up < rho_down", self.rho_up)
        _require("theta_min", 0.0 <= self.theta_min, "0 <= theta_min", self.theta_min)
        _require("theta_base", self.theta_min <= self.theta_base,
                 "theta_min <= theta_base", self.theta_base)
        _require("theta_max", self.theta_base <= self.theta_max,
                 "theta_base <= theta_max", self.theta_max)
        _require("theta_max", self.theta_max <= 1.0, "theta_max <= 1", self.theta_max)
        _require("tau_d", self.tau_d > 0.0, "tau_d > 0", self.tau_d)
        _require("lambda", self.lambda_ > 0.0, "lambda > 0", self.lambda_)
        _require("gamma", self.gamma >= 0.0, "gamma >= 0", self.gamma)
        _require("delta", self.delta >= 0.0, "delta >= 0", self.delta)
        _require("sigma_ldp", self.sigma_ldp >= 0.0, "sigma_ldp >= 0", self.sigma_ldp)
        _require("c_ldp", self.c_ldp > 0.0, "c_ldp > 0", self.c_ldp)
        _require("reference_norm_ratio", self.reference_norm_ratio >= 1.0,
                 "reference_norm_ratio >= 1", self.reference_norm_ratio)
        _require("importance_scale", self.importance_scale > 0.0,
                 "importance_scale > 0", self.importance_scale)
        _require("participation_window", self.participation_window >= 1,
                 "participation_window >= 1", self.participation_window)
        _require("response_window", self.response_window >= 2,
                 "response_window >= 2", self.response_window)
        _require("rounds", self.rounds >= 1, "rounds >= 1", self.rounds)
        _require("cohort_size", self.cohort_size >= 1, "cohort_size >= 1", self.cohort_size)
        _require("local_epochs", self.local_epochs >= 0, "local_epochs >= 0", self.local_epochs)
        _require("learning_rate", self.learning_rate > 0.0, "learning_rate > 0", self.learning_rate)
        _require("batch_size", self.batch_size >= 1, "batch_size >= 1", self.batch_size)
        _require("weight_decay", self.weight_decay >= 0.0, "weight_decay >= 0", self.weight_decay)
        _require("seed", 0 <= self.seed < 2 ** 64, "0 <= seed < 2**64", self.seed)

    @classmethod
    def config_keys(cls) -> Sequence[str]:
        """Names under which each field is addressed in experiment documents."""
        return [_config_key(f.name) for f in fields(cls)]

    def to_dict(self) -> dict:
        """Return the parameters keyed by their configuration names."""
        return {_config_key(f.name): getattr(self, f.name) for f in fields(self)}


def _config_key(field_name: str) -> str:
    return "lambda" if field_name == "lambda_" else field_name


def _require(field: str, condition: bool, bound: str, value):
    if not condition:
        raise InvariantViolation(field, bound, value)
