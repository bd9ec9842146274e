"""SplitMix64 streams with hierarchical seed derivation.

Every random quantity in the package comes from a stream derived from
``(base_seed, trial_index, image_index, purpose)``. Streams are never shared
between images, so fanning work out over any number of workers reproduces the
single-worker result bit for bit.

Derivation (all arithmetic mod 2**64)::

    mix(z)  = finalize(z + GAMMA)          # one SplitMix64 output for state z
    state   = mix(base_seed
                  ^ mix(trial_index)
                  ^ mix(image_index * GAMMA)
                  ^ mix(purpose * TAG_MULT))
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
# Odd multiplier keeping purpose tags out of the trial-index lane.
TAG_MULT = 0xD1B54A32D192ED03

_INV_2_53 = 1.0 / (1 << 53)


class Purpose(IntEnum):
    CCP_WEIGHTS = 1
    AUGMENTATION = 2
    ATTACK_SEARCH = 3
    MODEL_INIT = 4
    SHUFFLE = 5
    DATASET = 6


def finalize(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def mix(z: int) -> int:
    return finalize((z + GAMMA) & MASK64)


def _finalize_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


class RngState:
    """A single-owner SplitMix64 stream."""

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & MASK64

    def __repr__(self) -> str:
        return f"RngState(0x{self.state:016x})"

    def copy(self) -> RngState:
        return RngState(self.state)

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return finalize(self.state)

    def next_uniform(self) -> float:
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_uniform()

    def below(self, n: int) -> int:
        """Integer in ``[0, n)`` via floor(n * u); bias is < 2**-40 for small n."""
        return min(int(self.next_uniform() * n), n - 1)

    def u64_array(self, n: int) -> np.ndarray:
        """The next ``n`` outputs at once; identical to ``n`` calls of next_u64."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GAMMA)
            out = _finalize_array(states)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def uniform_array(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return lo + (hi - lo) * u


@dataclass(frozen=True)
class SeedPath:
    base_seed: int
    trial_index: int = 0
    image_index: int = 0
    purpose: Purpose = Purpose.CCP_WEIGHTS

    def derive(self) -> RngState:
        return derive(self)


def derive(path: SeedPath) -> RngState:
    z = (
        (path.base_seed & MASK64)
        ^ mix(path.trial_index)
        ^ mix((path.image_index * GAMMA) & MASK64)
        ^ mix((int(path.purpose) * TAG_MULT) & MASK64)
    )
    return RngState(mix(z))


def stream(base_seed: int, trial_index: int, image_index: int, purpose: Purpose) -> RngState:
    return derive(SeedPath(base_seed, trial_index, image_index, purpose))
