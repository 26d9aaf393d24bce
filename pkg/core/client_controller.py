"""
Client Controller Module

This module contains the ClientController class responsible for the client
population of one run: role assignment, cohort selection, and the client-side
part of every round (dropout, local training, attack crafting, local
differential privacy, response times).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from PySide6.QtCore import QObject, Signal

from constants import ALL_ATTACKS_ORDER
from analysis.adversary import AttackSpec, CollusionPool, make_update
from analysis.aggregation import apply_ldp
from analysis.client_models import ClientRole, ClientState, ModelVector
from analysis.rng import (PURPOSE_ATTACK, PURPOSE_DROPOUT, PURPOSE_LDP, PURPOSE_RESPONSE,
                          PURPOSE_RESPONSE_PROFILE, PURPOSE_ROLES, PURPOSE_SELECT,
                          PURPOSE_TRAIN, SERVER, RngStream)
from analysis.simulation import SyntheticTask, local_train, response_profile, select_cohort, simulate_response

logger = logging.getLogger(__name__)


@dataclass
class ClientSubmission:
    """
    Outcome of one selected client's round.

    `update` is what reaches the server (after attack and LDP); `honest` is
    the local training result. Both are None when the client dropped out.
    `attacked` is the ground truth of this round.
    """

    client_id: int
    responded: bool
    update: Optional[ModelVector] = None
    honest: Optional[ModelVector] = None
    attacked: bool = False
    response_time: Optional[float] = None


def assign_roles(n_clients: int, n_malicious: int, attack: str, stream: RngStream) -> List[ClientRole]:
    """
    Ground-truth role of every client.

    Malicious clients are the first n_malicious entries of a seeded
    permutation. In "all" mode they receive the six behaviours round-robin in
    ascending id order.

    Args:
        n_clients (int): Federation size.
        n_malicious (int): Number of attackers.
        attack (str): "none", "all" or a canonical role value.
        stream (RngStream): Run stream.

    Returns:
        list: One ClientRole per client id.
    """
    roles = [ClientRole.BENIGN] * n_clients
    if attack == "none" or n_malicious == 0:
        return roles
    permutation = stream.generator(PURPOSE_ROLES).permutation(n_clients)
    malicious = sorted(int(i) for i in permutation[:n_malicious])
    for position, client_id in enumerate(malicious):
        if attack == "all":
            roles[client_id] = ClientRole(ALL_ATTACKS_ORDER[position % len(ALL_ATTACKS_ORDER)])
        else:
            roles[client_id] = ClientRole(attack)
    return roles


class ClientController(QObject):
    """
    Controller for the simulated client population.

    This class handles:
    - Creating client records with roles and response-time profiles
    - Selecting the cohort of each round
    - Running client-side work, optionally on a thread pool
    - Recording participation outcomes
    """

    clients_created = Signal(int)
    cohort_selected = Signal(int, list)  # round, client ids
    error_occurred = Signal(str)

    def __init__(self, config, stream: RngStream, task: SyntheticTask,
                 attack_specs: Optional[Dict[ClientRole, AttackSpec]] = None):
        """
        Initialize the controller.

        Args:
            config: ExperimentConfig of the run.
            stream: Seeded stream of this repetition.
            task: Synthetic task providing the local datasets.
            attack_specs: Attack specification per malicious role.
        """
        super().__init__()
        self.config = config
        self.hp = config.hp
        self.stream = stream
        self.task = task
        self.attack_specs = attack_specs or {}
        self.clients: List[ClientState] = []

    def setup_clients(self) -> List[ClientState]:
        """
        Create one ClientState per dataset of the task.

        Returns:
            list: The client records, indexed by id.
        """
        roles = assign_roles(len(self.task.clients), self.config.n_malicious,
                             self.config.attack, self.stream)
        direction = self.task.attack_direction() if self.task.reference_model is not None else None
        self.clients = []
        for client_id, (role, data) in enumerate(zip(roles, self.task.clients)):
            mu, sigma = response_profile(role, self.stream.generator(PURPOSE_RESPONSE_PROFILE, client_id))
            self.clients.append(ClientState(client_id, role, len(data),
                                            participation_window=self.hp.participation_window,
                                            response_window=self.hp.response_window,
                                            response_mu=mu, response_sigma=sigma))
            if role.is_malicious and role not in self.attack_specs:
                self.attack_specs[role] = self.config.attack_spec(role, direction)
        malicious = sum(1 for c in self.clients if c.role.is_malicious)
        logger.info("✅ Created %d clients (%d malicious, attack=%s)",
                    len(self.clients), malicious, self.config.attack)
        self.clients_created.emit(len(self.clients))
        return self.clients

    def select(self, round_index: int, mode: str) -> List[int]:
        """Pick the cohort of a round."""
        cohort = select_cohort(self.clients, self.hp.cohort_size,
                               self.stream.generator(PURPOSE_SELECT, SERVER, round_index), mode)
        self.cohort_selected.emit(round_index, cohort)
        return cohort

    def _responds(self, client_id: int, round_index: int) -> bool:
        if self.config.dropout_prob == 0.0:
            return True
        draw = self.stream.generator(PURPOSE_DROPOUT, client_id, round_index).random()
        return bool(draw >= self.config.dropout_prob)

    def _train(self, client_id: int, round_index: int, global_model: ModelVector) -> ModelVector:
        client = self.clients[client_id]
        return local_train(global_model, self.task.clients[client_id], self.hp,
                           client.role is ClientRole.LABEL_FLIP,
                           self.stream.generator(PURPOSE_TRAIN, client_id, round_index))

    def _craft(self, submission: ClientSubmission, round_index: int,
               pool: Optional[CollusionPool]) -> ClientSubmission:
        client = self.clients[submission.client_id]
        update, attacked = make_update(client, submission.honest, self.attack_specs.get(client.role), pool,
                                       round_index,
                                       self.stream.generator(PURPOSE_ATTACK, client.id, round_index))
        if self.config.ldp:
            update = apply_ldp(update, self.hp.c_ldp, self.hp.sigma_ldp,
                               self.stream.generator(PURPOSE_LDP, client.id, round_index))
        submission.update = update
        submission.attacked = attacked
        return submission

    def _map(self, fn, items: Sequence):
        if self.config.max_workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
                return list(executor.map(fn, items))
        return [fn(item) for item in items]

    def collect(self, round_index: int, cohort: Sequence[int],
                global_model: ModelVector) -> List[ClientSubmission]:
        """
        Run the client side of a round for every cohort member.

        Training and crafting fan out over the thread pool when max_workers > 1;
        the collusion pool is built in between from the colluders' honest
        updates. Every draw uses the client's own substream, so the result does
        not depend on scheduling.

        Args:
            round_index (int): Current round, 1-based.
            cohort (list): Selected client ids.
            global_model (np.ndarray): Model broadcast this round.

        Returns:
            list: One ClientSubmission per cohort member, in cohort order.
        """
        submissions = [ClientSubmission(cid, self._responds(cid, round_index)) for cid in cohort]
        responders = [s for s in submissions if s.responded]

        honest = self._map(lambda s: self._train(s.client_id, round_index, global_model), responders)
        for submission, update in zip(responders, honest):
            submission.honest = update

        colluders = [s for s in responders if self.clients[s.client_id].role.colludes]
        pool = None
        if len(colluders) >= 2:
            pool = CollusionPool.from_updates([s.client_id for s in colluders], [s.honest for s in colluders])

        self._map(lambda s: self._craft(s, round_index, pool), responders)

        for submission in responders:
            submission.response_time = simulate_response(
                self.clients[submission.client_id],
                self.stream.generator(PURPOSE_RESPONSE, submission.client_id, round_index))

        return submissions

    def record_participation(self, responded_ids: Sequence[int]):
        """Append this round's outcome to every client's participation window."""
        responded = set(responded_ids)
        for client in self.clients:
            client.record_participation(client.id in responded)
            if client.id in responded:
                client.participations += 1

    def mean_reputation_by_role(self) -> Dict[ClientRole, float]:
        """Mean stored reputation per ground-truth role present in the federation."""
        groups: Dict[ClientRole, List[float]] = {}
        for client in self.clients:
            groups.setdefault(client.role, []).append(client.reputation)
        return {role: float(np.mean(values)) for role, values in groups.items()}
