"""Stack-based range-ANS coder with an explicit auxiliary bit source.

64-bit state, 32-bit renormalization words, last-in-first-out word stack.
When a pop drains the stack, further words come from the attached
:class:`AuxSource` (a seeded PRNG, a borrowed word list, or nothing, in
which case underflow is a hard error).  Every word drawn is recorded so
decompression can verify that the borrowed bits come back verbatim.

The coder state itself is seeded from 64 auxiliary bits rather than a
constant.  This keeps the realized stream length within one
renormalization word of the summed symbol information content, since the
flushed final state carries as much entropy as the seeded initial one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dists import CdfTable

RANS_L = 1 << 32           # lower bound of the normalization interval
WORD_BITS = 32
WORD_MASK = (1 << 32) - 1
STATE_MASK = (1 << 64) - 1


class UnderflowError(RuntimeError):
    """Popping required auxiliary bits but none were available."""


class AuxSource:
    """Supplier of auxiliary 32-bit words, with exact accounting."""

    def __init__(self, mode: str, seed: int = 0,
                 words: list[int] | None = None):
        if mode not in ("prng", "chained", "none"):
            raise ValueError(f"unknown aux mode {mode!r}")
        self.mode = mode
        self.seed = seed
        self.bits_consumed = 0
        self.words_drawn: list[int] = []
        self._rng = np.random.default_rng(seed) if mode == "prng" else None
        self._words = list(words) if words is not None else []

    @classmethod
    def prng(cls, seed: int) -> "AuxSource":
        return cls("prng", seed=seed)

    @classmethod
    def chained(cls, words: list[int]) -> "AuxSource":
        return cls("chained", words=words)

    @classmethod
    def none(cls) -> "AuxSource":
        return cls("none")

    def draw(self) -> int:
        if self.mode == "prng":
            w = int(self._rng.integers(0, 1 << 32, dtype=np.uint64))
        elif self.mode == "chained":
            if not self._words:
                raise UnderflowError("chained auxiliary stream exhausted")
            w = self._words.pop(0)
        else:
            raise UnderflowError("auxiliary bits required but no source attached")
        self.bits_consumed += WORD_BITS
        self.words_drawn.append(w)
        return w

    def replay(self) -> "AuxSource":
        """A fresh source that will produce the same words again."""
        if self.mode == "prng":
            return AuxSource.prng(self.seed)
        if self.mode == "chained":
            return AuxSource.chained(self.words_drawn + self._words)
        return AuxSource.none()


class AnsState:
    """Mutable coder state: 64-bit integer plus the word stack."""

    def __init__(self, aux: AuxSource | None = None):
        self.aux = aux if aux is not None else AuxSource.none()
        self.state = RANS_L
        self.stack: list[int] = []
        self.push_bits = 0.0   # sum of -log2 mass over pushed symbols
        self.pop_bits = 0.0    # sum of -log2 mass over popped symbols
        self.initial_state = RANS_L

    def seed_state_from_aux(self) -> int:
        """Initialize the state from 64 auxiliary bits (top bit forced)."""
        hi = self.aux.draw() | 0x8000_0000
        lo = self.aux.draw()
        self.state = (hi << 32) | lo
        self.initial_state = self.state
        return self.state

    # -- raw word plumbing -------------------------------------------------

    def _read_word(self) -> int:
        if self.stack:
            return self.stack.pop()
        return self.aux.draw()

    # -- symbol coding -----------------------------------------------------

    def push(self, start: int, freq: int, precision: int) -> None:
        s = self.state
        if s >= (freq << (64 - precision)):
            self.stack.append(s & WORD_MASK)
            s >>= WORD_BITS
        self.state = ((s // freq) << precision) + (s % freq) + start
        self.push_bits += precision - math.log2(freq)

    def pop_cf(self, precision: int) -> int:
        """Peek the cumulative-frequency slot of the next symbol."""
        return self.state & ((1 << precision) - 1)

    def pop_advance(self, cf: int, start: int, freq: int, precision: int) -> None:
        s = freq * (self.state >> precision) + cf - start
        while s < RANS_L:
            s = (s << WORD_BITS) | self._read_word()
        self.state = s
        self.pop_bits += precision - math.log2(freq)

    # -- serialization -----------------------------------------------------

    def serialize_words(self) -> list[int]:
        """Words in pop order: state high, state low, stack top-down."""
        return [(self.state >> 32) & WORD_MASK, self.state & WORD_MASK,
                *reversed(self.stack)]

    @classmethod
    def from_words(cls, words: list[int],
                   aux: AuxSource | None = None) -> "AnsState":
        if len(words) < 2:
            raise ValueError("stream too short to hold a coder state")
        a = cls(aux)
        a.state = (words[0] << 32) | words[1]
        a.stack = list(reversed(words[2:]))
        return a

    def total_bits(self) -> int:
        return WORD_BITS * len(self.serialize_words())


def push_symbol(a: AnsState, sym: int, t: CdfTable) -> AnsState:
    """Encode one symbol under a quantized table; returns the state."""
    start = int(t.cumulative[sym])
    freq = int(t.freqs[sym])
    a.push(start, freq, t.precision)
    return a


def pop_symbol(a: AnsState, t: CdfTable) -> tuple[int, AnsState]:
    """Decode one symbol under a quantized table; inverse of push_symbol."""
    cf = a.pop_cf(t.precision)
    sym = int(np.searchsorted(t.cumulative, cf, side="right")) - 1
    a.pop_advance(cf, int(t.cumulative[sym]), int(t.freqs[sym]), t.precision)
    return sym, a


def serialize_stream(words: list[int]) -> bytes:
    """u32 word count followed by the words in pop order, little-endian."""
    arr = np.asarray(words, dtype="<u4")
    return len(words).to_bytes(4, "little") + arr.tobytes()


def deserialize_stream(blob: bytes) -> list[int]:
    count = int.from_bytes(blob[:4], "little")
    arr = np.frombuffer(blob[4:4 + 4 * count], dtype="<u4")
    if len(arr) != count:
        raise ValueError("truncated bitstream")
    return [int(w) for w in arr]
