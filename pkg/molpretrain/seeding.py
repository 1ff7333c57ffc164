from __future__ import annotations

import hashlib
import json

import numpy as np


def derive_seed(seed: int, name: str) -> int:
    """Derive a subsystem seed from the run seed.

    The derived seed is the first 8 bytes (little endian) of
    ``blake2b(f"{seed}:{name}")``, so every random stream in a run can be
    traced back to the single ``seed`` value in its manifest.

    Parameters
    ----------
    seed : int
        Run seed
    name : str
        Subsystem name, e.g. ``"shuffle"`` or ``"init"``

    Returns
    -------
    int
        Non-negative 64 bit seed
    """
    digest = hashlib.blake2b(f"{seed}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, name))


def rng_state_to_json(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state)


def rng_from_json(text: str) -> np.random.Generator:
    state = json.loads(text)
    bit_generator = getattr(np.random, state["bit_generator"])()
    bit_generator.state = state
    return np.random.Generator(bit_generator)
