# analysis/simulation.py
"""
Simulation Environment Module

Synthetic federated task the round loop runs on:

- Gaussian class clusters around orthogonal centers, partitioned over clients
  with per-client Dirichlet class proportions
- a multinomial logistic regression model flattened into a ModelVector
- local mini-batch training returning the update delta
- evaluation on a balanced held-out set and a centrally trained reference
- cohort selection and response-time simulation
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from constants import NUM_CLASSES, RESPONSE_SIGMA_ERRATIC, RESPONSE_SIGMA_STEADY, SELECTION_FLOOR
from analysis.client_models import ClientRole, ClientState, ModelVector
from analysis.errors import CohortTooLarge, InvalidParameter
from analysis.rng import PURPOSE_TASK, SERVER, RngStream

logger = logging.getLogger(__name__)

DEFAULT_FEATURE_DIM = 20
DEFAULT_CLASS_SEPARATION = 4.0
DEFAULT_TEST_SAMPLES = 2000

# Spread of the per-client log-normal location of response times.
RESPONSE_MU_SPREAD = 0.25


@dataclass
class ClientDataset:
    """Local samples of one client."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return int(self.labels.shape[0])

    def class_histogram(self, num_classes: int = NUM_CLASSES) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)


@dataclass
class SyntheticTask:
    """
    Federated classification task with a held-out test set.

    Attributes:
        centers: Class centers, shape (classes, p).
        clients: One dataset per client.
        test: Balanced held-out set.
        label_noise: Share of training labels replaced by a random class.
        reference_model: Centrally trained model, once computed.
        reference_loss: Test loss of the reference model (L*).
    """

    centers: np.ndarray
    clients: List[ClientDataset]
    test: ClientDataset
    label_noise: float = 0.0
    reference_model: Optional[ModelVector] = None
    reference_loss: Optional[float] = None
    num_classes: int = NUM_CLASSES

    @property
    def feature_dim(self) -> int:
        return int(self.centers.shape[1])

    @property
    def model_dim(self) -> int:
        return model_dimension(self.feature_dim, self.num_classes)

    def pooled(self) -> ClientDataset:
        """All clients' training data concatenated."""
        return ClientDataset(np.vstack([c.features for c in self.clients]),
                             np.concatenate([c.labels for c in self.clients]))

    def attack_direction(self) -> np.ndarray:
        """Unit vector pointing from the origin away from the reference optimum."""
        if self.reference_model is None:
            raise InvalidParameter("Reference model must be trained before deriving an attack direction")
        norm = float(np.linalg.norm(self.reference_model))
        if norm == 0.0:
            raise InvalidParameter("Reference model is zero; no attack direction")
        return -self.reference_model / norm


def model_dimension(feature_dim: int, num_classes: int = NUM_CLASSES) -> int:
    """Parameter count of the model: one weight row plus bias per class."""
    return num_classes * (feature_dim + 1)


def zero_model(feature_dim: int, num_classes: int = NUM_CLASSES) -> ModelVector:
    return np.zeros(model_dimension(feature_dim, num_classes), dtype=np.float64)


def _augment(features: np.ndarray) -> np.ndarray:
    return np.hstack([features, np.ones((features.shape[0], 1))])


def _weights(model: ModelVector, num_classes: int) -> np.ndarray:
    return model.reshape(num_classes, -1)


def flip_labels(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Label-flip rule: y -> (y + 1) mod classes."""
    return (labels + 1) % num_classes


def loss_and_gradient(model: ModelVector, features: np.ndarray, labels: np.ndarray,
                      weight_decay: float = 0.0,
                      num_classes: int = NUM_CLASSES) -> Tuple[float, ModelVector]:
    """
    Mean cross-entropy plus L2 penalty and its gradient.

    Args:
        model: Flattened weights, row-major (classes, p + 1).
        features: Samples, shape (n, p).
        labels: Integer labels, shape (n,).
        weight_decay: Coefficient of 0.5 * weight_decay * ||model||^2.
        num_classes: Number of classes.

    Returns:
        tuple: (loss, gradient with the shape of model).
    """
    x = _augment(features)
    logits = x @ _weights(model, num_classes).T
    log_probs = log_softmax(logits, axis=1)
    n = labels.shape[0]
    loss = -float(log_probs[np.arange(n), labels].mean()) + 0.5 * weight_decay * float(model @ model)

    residual = np.exp(log_probs)
    residual[np.arange(n), labels] -= 1.0
    grad = (residual.T @ x) / n
    return loss, grad.reshape(-1) + weight_decay * model


def predict_proba(model: ModelVector, features: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    return softmax(_augment(features) @ _weights(model, num_classes).T, axis=1)


def generate_federation(n_clients: int, samples_per_client: int, dirichlet_alpha: float,
                        p: int, rng: RngStream, class_separation: float = DEFAULT_CLASS_SEPARATION,
                        test_samples: int = DEFAULT_TEST_SAMPLES,
                        label_noise: float = 0.0) -> SyntheticTask:
    """
    Build the synthetic federated task.

    Class centers are `class_separation` times orthonormal directions, so every
    pair of centers lies class_separation * sqrt(2) apart. Each client draws its
    class proportions from Dirichlet(alpha * 1) and its class counts from the
    matching multinomial; features are unit-variance Gaussians around the
    centers. Each client uses its own substream so its data does not depend on
    how many clients the federation has.

    Args:
        n_clients: Number of clients, at least 1.
        samples_per_client: Local dataset size, at least 1.
        dirichlet_alpha: Concentration; small values give skewed clients.
        p: Feature dimension, at least the number of classes.
        rng: Seeded stream of the run.
        class_separation: Radius of the centers, at least sqrt(2).
        test_samples: Size of the balanced held-out set.
        label_noise: Share of training labels replaced by a uniform class.

    Returns:
        SyntheticTask: The generated task, without reference model.

    Raises:
        InvalidParameter: If any argument is out of range.
    """
    if n_clients < 1:
        raise InvalidParameter(f"n_clients must be >= 1, got {n_clients}")
    if samples_per_client < 1:
        raise InvalidParameter(f"samples_per_client must be >= 1, got {samples_per_client}")
    if dirichlet_alpha <= 0.0:
        raise InvalidParameter(f"dirichlet_alpha must be > 0, got {dirichlet_alpha}")
    if p < NUM_CLASSES:
        raise InvalidParameter(f"feature dimension must be >= {NUM_CLASSES}, got {p}")
    if class_separation < np.sqrt(2.0):
        raise InvalidParameter(f"class_separation must be >= sqrt(2), got {class_separation}")
    if not 0.0 <= label_noise < 1.0:
        raise InvalidParameter(f"label_noise must lie in [0, 1), got {label_noise}")
    if test_samples < 1:
        raise InvalidParameter(f"test_samples must be >= 1, got {test_samples}")

    setup = rng.generator(PURPOSE_TASK, SERVER, 0)
    basis, _ = np.linalg.qr(setup.normal(size=(p, NUM_CLASSES)))
    centers = class_separation * basis.T

    clients = []
    for client_id in range(n_clients):
        local = rng.generator(PURPOSE_TASK, client_id, 0)
        proportions = local.dirichlet(np.full(NUM_CLASSES, dirichlet_alpha))
        total = proportions.sum()
        if not np.isfinite(total) or total <= 0.0:
            proportions = np.eye(NUM_CLASSES)[local.integers(NUM_CLASSES)]
        else:
            proportions = proportions / total
        counts = local.multinomial(samples_per_client, proportions)
        labels = np.repeat(np.arange(NUM_CLASSES), counts)
        features = centers[labels] + local.normal(size=(samples_per_client, p))
        if label_noise > 0.0:
            noisy = local.random(samples_per_client) < label_noise
            labels = labels.copy()
            labels[noisy] = local.integers(NUM_CLASSES, size=int(noisy.sum()))
        clients.append(ClientDataset(features, labels))

    held_out = rng.generator(PURPOSE_TASK, SERVER, 1)
    test_labels = np.arange(test_samples) % NUM_CLASSES
    test_features = centers[test_labels] + held_out.normal(size=(test_samples, p))

    logger.info("Generated federation: %d clients x %d samples, p=%d, alpha=%g",
                n_clients, samples_per_client, p, dirichlet_alpha)
    return SyntheticTask(centers=centers, clients=clients,
                         test=ClientDataset(test_features, test_labels), label_noise=label_noise)


def local_train(global_model: ModelVector, data: ClientDataset, hp, flip: bool,
                rng: np.random.Generator) -> ModelVector:
    """
    Mini-batch gradient descent from the global model.

    Args:
        global_model: Starting point.
        data: The client's dataset, non-empty.
        hp: HyperParams supplying local_epochs, learning_rate, batch_size, weight_decay.
        flip: Train on (y + 1) mod 10 instead of y.
        rng: The client's training substream for this round.

    Returns:
        np.ndarray: w_local - w_global.
    """
    if len(data) == 0:
        raise InvalidParameter("Local training needs a non-empty dataset")
    labels = flip_labels(data.labels) if flip else data.labels
    model = np.array(global_model, dtype=np.float64, copy=True)
    n = len(data)
    for _ in range(hp.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            batch = order[start:start + hp.batch_size]
            _, grad = loss_and_gradient(model, data.features[batch], labels[batch], hp.weight_decay)
            model -= hp.learning_rate * grad
    return model - global_model


def evaluate(model: ModelVector, task: SyntheticTask) -> Tuple[float, float]:
    """
    Cross-entropy and top-1 accuracy on the held-out set.

    Returns:
        tuple: (test_loss, test_accuracy).
    """
    loss, _ = loss_and_gradient(model, task.test.features, task.test.labels, 0.0, task.num_classes)
    predictions = np.argmax(predict_proba(model, task.test.features, task.num_classes), axis=1)
    return loss, float(np.mean(predictions == task.test.labels))


def train_reference(task: SyntheticTask, weight_decay: float) -> ModelVector:
    """
    Centralized optimum on the pooled training data.

    Minimizes the same regularized objective the clients train on with
    L-BFGS, then stores the model and its test loss on the task.

    Returns:
        np.ndarray: The reference model.
    """
    pooled = task.pooled()
    result = minimize(loss_and_gradient, zero_model(task.feature_dim, task.num_classes),
                      args=(pooled.features, pooled.labels, weight_decay, task.num_classes),
                      jac=True, method="L-BFGS-B", options={"maxiter": 1000, "gtol": 1e-9})
    if not result.success:
        logger.warning("⚠️ Reference training stopped early: %s", result.message)
    task.reference_model = np.asarray(result.x, dtype=np.float64)
    task.reference_loss, accuracy = evaluate(task.reference_model, task)
    logger.info("Reference model: test loss %.4f, accuracy %.4f", task.reference_loss, accuracy)
    return task.reference_model


def response_profile(role: ClientRole, rng: np.random.Generator) -> Tuple[float, float]:
    """Log-normal (mu, sigma) of a client's response times, fixed at setup."""
    mu = float(rng.normal(0.0, RESPONSE_MU_SPREAD))
    sigma = RESPONSE_SIGMA_ERRATIC if role is ClientRole.ADAPTIVE else RESPONSE_SIGMA_STEADY
    return mu, sigma


def simulate_response(client: ClientState, rng: np.random.Generator) -> float:
    """Draw a response time, append it to the client's window and return it."""
    seconds = float(rng.lognormal(client.response_mu, client.response_sigma))
    client.record_response_time(seconds)
    return seconds


def select_cohort(clients: Sequence[ClientState], size: int, rng: np.random.Generator,
                  mode: str = "reputation") -> List[int]:
    """
    Sample the round's cohort without replacement.

    Args:
        clients: All clients of the federation.
        size: Cohort size.
        rng: Server selection substream for this round.
        mode: "reputation" samples proportionally to max(R, 0.05); "uniform"
            ignores reputations.

    Returns:
        list: Selected client ids in ascending order.

    Raises:
        CohortTooLarge: If size exceeds the number of clients.
    """
    n = len(clients)
    if size > n:
        raise CohortTooLarge(f"Cohort of {size} requested from {n} clients")
    if size < 1:
        raise InvalidParameter(f"Cohort size must be >= 1, got {size}")
    if mode not in ("reputation", "uniform"):
        raise InvalidParameter(f"Unknown selection mode '{mode}'")
    if size == n:
        return sorted(c.id for c in clients)

    if mode == "uniform":
        probabilities = None
    else:
        scores = np.array([max(c.reputation, SELECTION_FLOOR) for c in clients])
        probabilities = scores / scores.sum()
    picked = rng.choice(n, size=size, replace=False, p=probabilities)
    return sorted(clients[i].id for i in picked)


def label_entropy(data: ClientDataset, num_classes: int = NUM_CLASSES) -> float:
    """Shannon entropy (nats) of a client's label distribution."""
    histogram = data.class_histogram(num_classes).astype(np.float64)
    shares = histogram[histogram > 0] / histogram.sum()
    return float(-(shares * np.log(shares)).sum())
