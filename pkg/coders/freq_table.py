"""
Static 12-bit frequency model shared by every entropy coder.
"""

import math
from dataclasses import dataclass

import numpy as np

from engine.exceptions import CodecError, EmptyStreamError

PRECISION_BITS = 12
TOTAL = 1 << PRECISION_BITS
MAX_ALPHABET = 1 << 16


@dataclass
class FrequencyTable:
    """Integer frequencies over symbols 0..S-1 summing to 4096"""
    freqs: np.ndarray

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=np.int64)
        self.starts = np.zeros(len(self.freqs) + 1, dtype=np.int64)
        np.cumsum(self.freqs, out=self.starts[1:])
        if len(self.freqs) and self.starts[-1] != TOTAL:
            raise CodecError(f"frequency table sums to {int(self.starts[-1])}, expected {TOTAL}")
        # slot -> symbol lookup for the decoders
        self.slot_symbols = np.repeat(np.arange(len(self.freqs)), self.freqs)

    @property
    def symbol_count(self) -> int:
        return int(len(self.freqs))

    def freq(self, symbol: int) -> int:
        return int(self.freqs[symbol]) if 0 <= symbol < len(self.freqs) else 0

    def start(self, symbol: int) -> int:
        return int(self.starts[symbol])

    def symbol_at(self, slot: int) -> int:
        return int(self.slot_symbols[slot])


def build_freq_table(symbols, alphabet_size: int = None) -> FrequencyTable:
    """Counts normalized to 4096: largest-remainder rounding, ties to the lower symbol,
    every seen symbol gets at least 1"""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.size == 0:
        raise EmptyStreamError()
    if symbols.min() < 0 or symbols.max() >= MAX_ALPHABET:
        raise CodecError(f"symbols must lie in [0, {MAX_ALPHABET})")
    size = int(symbols.max()) + 1 if alphabet_size is None else int(alphabet_size)
    counts = np.bincount(symbols, minlength=size).astype(np.int64)
    seen = counts > 0
    if int(seen.sum()) > TOTAL:
        raise CodecError(f"{int(seen.sum())} distinct symbols do not fit a {TOTAL}-slot table")

    n = int(symbols.size)
    scaled = counts * TOTAL
    freqs = scaled // n
    remainders = scaled % n
    deficit = TOTAL - int(freqs.sum())
    if deficit:
        order = np.lexsort((np.arange(size), -remainders))
        freqs[order[:deficit]] += 1

    freqs[seen & (freqs == 0)] = 1
    excess = int(freqs.sum()) - TOTAL
    while excess > 0:
        freqs[int(np.argmax(freqs))] -= 1
        excess -= 1
    return FrequencyTable(freqs)


def estimate_rate_bits(symbols, table: FrequencyTable) -> float:
    """Ideal code length of the stream under the static model"""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.size == 0:
        return 0.0
    counts = np.bincount(symbols, minlength=table.symbol_count)
    used = np.nonzero(counts)[0]
    freqs = table.freqs[used] if used.max() < table.symbol_count else None
    if freqs is None or np.any(freqs == 0):
        return math.inf
    return float(np.sum(counts[used] * -np.log2(freqs / TOTAL)))
