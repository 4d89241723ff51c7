"""
Static range coder with carry propagation (LZMA-style low/cache scheme).

The encoder keeps a 33-bit low and a 32-bit range; each symbol narrows the
range by (range >> 12) * freq. The first output byte is always the initial
cache byte 0.
"""

import numpy as np

from engine.exceptions import CorruptStreamError, ZeroFrequencyError

from .base_coder import EntropyCoder
from .freq_table import PRECISION_BITS, TOTAL, FrequencyTable

TOP = 1 << 24
MASK32 = 0xFFFFFFFF


class _RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        if (self.low & MASK32) < 0xFF000000 or (self.low >> 32) != 0:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode(self, start: int, freq: int):
        r = self.range >> PRECISION_BITS
        self.low += r * start
        self.range = r * freq
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


def arith_encode(symbols, table: FrequencyTable) -> bytes:
    freqs = table.freqs.tolist()
    starts = table.starts.tolist()
    size = len(freqs)
    enc = _RangeEncoder()
    for s in np.asarray(symbols, dtype=np.int64).reshape(-1).tolist():
        freq = freqs[s] if 0 <= s < size else 0
        if freq == 0:
            raise ZeroFrequencyError(s)
        enc.encode(starts[s], freq)
    return enc.finish()


def arith_decode(data: bytes, table: FrequencyTable, n: int) -> np.ndarray:
    if len(data) < 5:
        raise CorruptStreamError("range-coded stream shorter than its 5-byte preamble")
    freqs = table.freqs.tolist()
    starts = table.starts.tolist()
    slot_symbols = table.slot_symbols.tolist()
    code = 0
    for b in data[:5]:
        code = ((code << 8) | b) & MASK32
    pos = 5
    size = len(data)
    rng = MASK32
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        r = rng >> PRECISION_BITS
        value = min(code // r, TOTAL - 1)
        s = slot_symbols[value]
        code -= r * starts[s]
        rng = r * freqs[s]
        if code < 0 or code >= rng:
            raise CorruptStreamError(f"range decoder left its interval at symbol {i}")
        while rng < TOP:
            if pos >= size:
                raise CorruptStreamError(f"range-coded stream truncated at symbol {i}")
            code = ((code << 8) | data[pos]) & MASK32
            rng <<= 8
            pos += 1
        out[i] = s
    if pos != size:
        raise CorruptStreamError(f"{size - pos} unread bytes after the last symbol")
    return out


class ArithCoder(EntropyCoder):
    name = "arith"
    coder_id = 2

    def encode(self, symbols, model):
        return arith_encode(symbols, model)

    def decode(self, data, model, n):
        return arith_decode(data, model, n)
