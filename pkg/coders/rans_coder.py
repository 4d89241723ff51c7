"""
Byte-wise rANS with a 32-bit state (ryg_rans layout).

Stream layout: final encoder state as 4 little-endian bytes, then the
renormalization bytes in the order the decoder consumes them.
"""

import struct

import numpy as np

from engine.exceptions import CorruptStreamError, ZeroFrequencyError

from .base_coder import EntropyCoder
from .freq_table import PRECISION_BITS, FrequencyTable

RANS_L = 1 << 23
SLOT_MASK = (1 << PRECISION_BITS) - 1


def rans_encode(symbols, table: FrequencyTable) -> bytes:
    freqs = table.freqs.tolist()
    starts = table.starts.tolist()
    size = len(freqs)
    x = RANS_L
    emitted = bytearray()
    for s in reversed(np.asarray(symbols, dtype=np.int64).reshape(-1).tolist()):
        freq = freqs[s] if 0 <= s < size else 0
        if freq == 0:
            raise ZeroFrequencyError(s)
        x_max = ((RANS_L >> PRECISION_BITS) << 8) * freq
        while x >= x_max:
            emitted.append(x & 0xFF)
            x >>= 8
        x = ((x // freq) << PRECISION_BITS) + (x % freq) + starts[s]
    emitted.reverse()
    return struct.pack("<I", x) + bytes(emitted)


def rans_decode(data: bytes, table: FrequencyTable, n: int) -> np.ndarray:
    if len(data) < 4:
        raise CorruptStreamError("rANS stream shorter than its 4-byte state")
    freqs = table.freqs.tolist()
    starts = table.starts.tolist()
    slot_symbols = table.slot_symbols.tolist()
    x = struct.unpack_from("<I", data, 0)[0]
    pos = 4
    size = len(data)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        if x < RANS_L:
            raise CorruptStreamError(f"rANS state below the lower bound at symbol {i}")
        slot = x & SLOT_MASK
        s = slot_symbols[slot]
        x = freqs[s] * (x >> PRECISION_BITS) + slot - starts[s]
        while x < RANS_L:
            if pos >= size:
                raise CorruptStreamError(f"rANS stream truncated at symbol {i}")
            x = (x << 8) | data[pos]
            pos += 1
        out[i] = s
    if x != RANS_L or pos != size:
        raise CorruptStreamError("rANS stream did not end in the initial state")
    return out


class RansCoder(EntropyCoder):
    name = "rans"
    coder_id = 0

    def encode(self, symbols, model):
        return rans_encode(symbols, model)

    def decode(self, data, model, n):
        return rans_decode(data, model, n)
