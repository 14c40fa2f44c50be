"""
Counter-based pseudo-random numbers.

Every draw is a pure function of (seed, domain, stream, counter): the 64-bit
SplitMix64 finaliser applied twice,

    key  = mix(seed)                       then  key = mix(key ^ domain)
    bits = mix(mix(key ^ stream) ^ counter)
    u    = (bits >> 11) * 2**-53           in [0, 1)

where mix(x) is SplitMix64's output function for state x (add the golden-gamma
constant 0x9E3779B97F4A7C15, then xor-shift-multiply by 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB with shifts 30, 27, 31). All arithmetic is modulo 2**64, so a
reimplementation in any language reproduces the same bits.
"""

from __future__ import annotations

from typing import Union

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 2.0**-53

# Domains keep unrelated consumers of one seed from sharing streams.
DOMAIN_PLAN = 1
DOMAIN_SHUFFLE = 2
DOMAIN_NEGATIVES = 3

IntLike = Union[int, np.ndarray]


def _u64(x: IntLike) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(np.uint64)
    return np.asarray(int(x) & _MASK, dtype=np.uint64)


def splitmix64(x: IntLike) -> np.ndarray:
    z = _u64(x)
    with np.errstate(over="ignore"):
        z = z + _GAMMA
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


class CounterRNG:
    """Stateless generator: the same (stream, counter) always yields the same value."""

    def __init__(self, seed: int, domain: int = 0) -> None:
        self.seed = seed
        self.domain = domain
        self._key = splitmix64(splitmix64(seed) ^ _u64(domain))

    def bits(self, stream: IntLike, counter: IntLike) -> np.ndarray:
        return splitmix64(splitmix64(self._key ^ _u64(stream)) ^ _u64(counter))

    def uniform(self, stream: IntLike, counter: IntLike) -> np.ndarray:
        return (self.bits(stream, counter) >> _S11).astype(np.float64) * _INV53

    def permutation(self, n: int, stream: IntLike = 0) -> np.ndarray:
        """Random permutation of range(n): indices sorted by their draw."""
        keys = self.bits(stream, np.arange(n, dtype=np.uint64))
        return np.argsort(keys, kind="stable")
