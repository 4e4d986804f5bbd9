"""Named deterministic random streams derived from one master seed.

Each component (init, dropout, shuffle, synth, baseline) draws from its own
stream, so changing one consumer's draws never shifts another's.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for ``name`` under ``seed``; stable across runs and platforms."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    digest = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, digest]))


def generator_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's position."""
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: int(v) for k, v in state["state"].items()},
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def restore_generator(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": state["bit_generator"],
        "state": {k: int(v) for k, v in state["state"].items()},
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }
    return rng
