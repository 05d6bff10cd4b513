"""Named random streams derived from one master seed.

Every consumer of randomness asks for a stream by purpose and index, e.g.
``stream(seed, "env.init", 3)``. Streams are PCG64 generators seeded from a
``numpy.random.SeedSequence`` whose spawn key encodes the purpose (CRC32 of
the name) and the indices, so they are independent of each other and stable
across runs and platforms.
"""

from __future__ import annotations

import json
import zlib

import numpy as np


def purpose_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def seed_sequence(seed: int, purpose: str, *index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(purpose_key(purpose), *map(int, index)))


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, purpose, *index)))


def rng_state_bytes(rng: np.random.Generator) -> bytes:
    return json.dumps(rng.bit_generator.state, sort_keys=True).encode("utf-8")


def rng_from_state_bytes(raw: bytes) -> np.random.Generator:
    state = json.loads(raw.decode("utf-8"))
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)
