"""
Seeded random-number contract.

Every random draw in a run comes from a generator derived from
(master seed, purpose, client, round). Derivation is a pure function, so a
client's draws do not depend on cohort order, cohort size or on how many
other clients drew before it, and substreams can be created from several
threads at once.
"""

import zlib

import numpy as np

# Purpose tags used across the simulator.
PURPOSE_ROLES = "roles"
PURPOSE_TASK = "task"
PURPOSE_RESPONSE_PROFILE = "response-profile"
PURPOSE_SELECT = "select"
PURPOSE_DROPOUT = "dropout"
PURPOSE_RESPONSE = "response"
PURPOSE_TRAIN = "train"
PURPOSE_ATTACK = "attack"
PURPOSE_LDP = "ldp"

SERVER = -1


class RngStream:
    """Factory of independent numpy generators keyed by purpose, client and round."""

    def __init__(self, master_seed: int):
        """
        Args:
            master_seed (int): 64-bit non-negative master seed.
        """
        if not 0 <= int(master_seed) < 2 ** 64:
            raise ValueError(f"master_seed must be a 64-bit non-negative integer, got {master_seed}")
        self.master_seed = int(master_seed)

    def generator(self, purpose: str, client: int = SERVER, round_index: int = 0) -> np.random.Generator:
        """
        Derive the generator for one (purpose, client, round) key.

        Args:
            purpose (str): Tag naming what the draws are for.
            client (int): Client id, or SERVER (-1) for server-level draws.
            round_index (int): Round number, 0 for setup-time draws.

        Returns:
            np.random.Generator: A fresh generator; equal keys give equal sequences.
        """
        tag = zlib.crc32(purpose.encode("utf-8"))
        key = [self.master_seed, tag, int(client) + 1, int(round_index)]
        return np.random.default_rng(np.random.SeedSequence(key))

    def derive(self, offset: int) -> "RngStream":
        """Return the stream of a sibling run whose master seed is shifted by offset."""
        return RngStream((self.master_seed + int(offset)) % (2 ** 64))
