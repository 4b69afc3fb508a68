"""Memory self-test: LFSR pattern fill, readback and bit-error counting.

The pattern generator is a 32-bit Fibonacci LFSR with taps (32, 22, 2, 1),
i.e. feedback polynomial x^32 + x^22 + x^2 + x + 1.  The register shifts left;
the new bit 0 is the XOR of bits 31, 21, 1 and 0.  One output word is the
register state after 32 shifts, so consecutive words share no bits.

Each iteration reseeds the generator with :func:`derive_seed`, fills the region
word by word, then regenerates the same sequence to check the readback.  The
expected data is never stored.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidStateError, ShapeError
from .memsim import MemoryModel, Region

MASK32 = 0xFFFFFFFF
TAPS = (32, 22, 2, 1)
_FEEDBACK_BITS = tuple(t - 1 for t in TAPS)


def _step_state(s: int) -> int:
    fb = 0
    for b in _FEEDBACK_BITS:
        fb ^= (s >> b) & 1
    return ((s << 1) | fb) & MASK32


def _matrix_apply(cols: list[int], s: int) -> int:
    out = 0
    for j in range(32):
        if (s >> j) & 1:
            out ^= cols[j]
    return out


def _matrix_mul(a: list[int], b: list[int]) -> list[int]:
    # column j of A.B is A applied to column j of B
    return [_matrix_apply(a, c) for c in b]


@lru_cache(maxsize=None)
def _word_matrix() -> tuple[int, ...]:
    """Columns of the GF(2) matrix that advances the state by one word."""
    cols = []
    for j in range(32):
        s = 1 << j
        for _ in range(32):
            s = _step_state(s)
        cols.append(s)
    return tuple(cols)


@lru_cache(maxsize=64)
def _tables(power: int) -> np.ndarray:
    """Byte lookup tables (4, 256) for the word matrix raised to ``power``."""
    result = [1 << j for j in range(32)]
    base = list(_word_matrix())
    p = power
    while p:
        if p & 1:
            result = _matrix_mul(base, result)
        base = _matrix_mul(base, base)
        p >>= 1
    tab = np.zeros((4, 256), dtype=np.uint32)
    for k in range(4):
        for v in range(256):
            tab[k, v] = _matrix_apply(result, v << (8 * k))
    return tab


def _apply_tables(tab: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (tab[0][x & 0xFF] ^ tab[1][(x >> 8) & 0xFF]
            ^ tab[2][(x >> 16) & 0xFF] ^ tab[3][x >> 24])


class Lfsr32:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK32
        if self.state == 0:
            raise InvalidStateError("LFSR seed must be nonzero")

    def step(self) -> int:
        """Advance one bit; returns the new state."""
        self._check()
        self.state = _step_state(self.state)
        return self.state

    def next(self) -> int:
        """Advance one 32-bit output word and return it."""
        self._check()
        s = self.state
        for _ in range(32):
            s = _step_state(s)
        self.state = s
        return s

    def words(self, n: int) -> np.ndarray:
        """The next ``n`` outputs of :meth:`next`, as uint32, computed in bulk."""
        self._check()
        out = np.empty(n, dtype=np.uint32)
        if n == 0:
            return out
        out[0] = _apply_tables(_tables(1), np.array([self.state], dtype=np.uint32))[0]
        filled = 1
        while filled < n:
            take = min(filled, n - filled)
            out[filled:filled + take] = _apply_tables(_tables(filled), out[:take])
            filled += take
        self.state = int(out[-1])
        return out

    def _check(self) -> None:
        if self.state == 0:
            raise InvalidStateError("LFSR state is zero")


def lfsr_next(lfsr: Lfsr32) -> int:
    return lfsr.next()


def derive_seed(seed0: int, iteration: int) -> int:
    """Nonzero 32-bit seed for ``iteration`` (splitmix64 finalizer, folded)."""
    z = (int(seed0) + (iteration + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    z ^= z >> 31
    s = (z ^ (z >> 32)) & MASK32
    return s or 1


@dataclass(frozen=True)
class BerEstimate:
    bits_observed: int
    bit_errors: int

    @property
    def rate(self) -> float:
        return self.bit_errors / self.bits_observed if self.bits_observed else 0.0

    @property
    def floor(self) -> float:
        return 1.0 / self.bits_observed if self.bits_observed else float("inf")

    def format(self) -> str:
        if self.bit_errors == 0:
            return f"< {self.floor:.3g}"
        return f"{self.rate:.6g}"

    def __str__(self) -> str:
        return self.format()


def run_selftest(mem: MemoryModel, region: Region | str, iterations: int = 1, seed0: int = 1,
                 first_words: list | None = None) -> BerEstimate:
    """Write/readback sweep over a whole region, ``iterations`` times.

    Only whole 32-bit words are tested.  If ``first_words`` is a list, the first
    pattern word of every iteration is appended to it.
    """
    if isinstance(region, str):
        region = mem.map[region]
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    nwords = region.size // 4
    if nwords == 0:
        raise ShapeError(f"region {region.name} is smaller than one 32-bit word")
    nbytes = nwords * 4
    errors = 0
    for i in range(iterations):
        seed = derive_seed(seed0, i)
        pattern = Lfsr32(seed).words(nwords).astype("<u4")
        if first_words is not None:
            first_words.append(int(pattern[0]))
        mem.write(region.base, pattern)
        got = mem.read(region.base, nbytes).view("<u4")
        expected = Lfsr32(seed).words(nwords).astype("<u4")
        errors += int(np.bitwise_count(got ^ expected).sum())
    return BerEstimate(nbytes * 8 * iterations, errors)
