"""Deterministic random streams for reproducible parallel simulation.

Two layers:

* Orchestrator-level sampling (beam emission, loss draws, optimizer moves)
  uses numpy Generators seeded through SeedSequence with integer tag
  tuples, so every run component owns an independent, named stream.

* The collision kernel needs order-independent randomness: one substream
  per (seed, step, cell), realized as splitmix64 starting states derived
  by integer mixing.  The same seed then yields identical physics for any
  execution order or thread count.  The mixing functions exist twice: in
  plain Python (reference, tests) and njit-compiled (kernels); both
  produce identical sequences.
"""

from __future__ import annotations

import numpy as np
from numba import float64, njit, types, uint64

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
INV53 = 1.0 / 9007199254740992.0      # 2**-53


def rng_for(master_seed: int, *tags: int) -> np.random.Generator:
    """Independent numpy Generator for a named component of a run."""
    ss = np.random.SeedSequence([int(master_seed) & 0x7FFFFFFFFFFFFFFF,
                                 *(int(t) & 0x7FFFFFFFFFFFFFFF for t in tags)])
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# splitmix64, Python reference
# ---------------------------------------------------------------------------

def mix64_py(z: int) -> int:
    z &= 0xFFFFFFFFFFFFFFFF
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    z ^= z >> 31
    return z


def stream_state_py(seed: int, step: int, cell: int) -> int:
    s = mix64_py((seed & 0xFFFFFFFFFFFFFFFF) ^ 0xD1B54A32D192ED03)
    s = mix64_py(s ^ ((step * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF))
    s = mix64_py(s ^ ((cell * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF))
    return s


def next_unit_py(state: int) -> tuple[int, float]:
    state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    u = mix64_py(state)
    return state, (u >> 11) * INV53


# ---------------------------------------------------------------------------
# splitmix64, numba kernels
# ---------------------------------------------------------------------------

@njit(uint64(uint64), cache=True, inline="always")
def mix64(z):
    z ^= z >> uint64(30)
    z *= MIX1
    z ^= z >> uint64(27)
    z *= MIX2
    z ^= z >> uint64(31)
    return z


@njit(uint64(uint64, uint64, uint64), cache=True, inline="always")
def stream_state(seed, step, cell):
    s = mix64(seed ^ uint64(0xD1B54A32D192ED03))
    s = mix64(s ^ (step * GAMMA))
    s = mix64(s ^ (cell * MIX1))
    return s


@njit(types.Tuple((uint64, float64))(uint64), cache=True, inline="always")
def next_unit(state):
    """Advance a splitmix64 state; returns (new_state, uniform in [0,1))."""
    new = state + GAMMA
    u = mix64(new)
    return new, (u >> uint64(11)) * INV53
