"""
Canonical Huffman coding with code lengths limited to 16 bits (package-merge).

Codes are assigned in (length, symbol) order; bits are written MSB first and
the final byte is zero-padded. Only the code lengths are serialized.
"""

import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from engine.exceptions import BundleFormatError, CorruptStreamError, ZeroFrequencyError

from .base_coder import EntropyCoder, _read_u16
from .freq_table import FrequencyTable

MAX_CODE_LENGTH = 16


def package_merge(weights, max_length: int = MAX_CODE_LENGTH) -> np.ndarray:
    """Optimal length-limited code lengths for the symbols with weight > 0"""
    weights = np.asarray(weights, dtype=np.int64)
    lengths = np.zeros(len(weights), dtype=np.int64)
    used = [int(s) for s in np.nonzero(weights > 0)[0]]
    if not used:
        return lengths
    if len(used) == 1:
        lengths[used[0]] = 1
        return lengths
    if len(used) > (1 << max_length):
        raise ValueError(f"{len(used)} symbols cannot be coded within {max_length} bits")

    # leaves sorted by (weight, symbol); an item is (weight, symbols it contains)
    leaves: List[Tuple[int, List[int]]] = sorted(((int(weights[s]), [s]) for s in used), key=lambda it: (it[0], it[1][0]))
    current = list(leaves)
    for _ in range(max_length - 1):
        packages = [(current[i][0] + current[i + 1][0], current[i][1] + current[i + 1][1])
                    for i in range(0, len(current) - 1, 2)]
        merged = []
        li = pi = 0
        while li < len(leaves) or pi < len(packages):
            if pi >= len(packages) or (li < len(leaves) and leaves[li][0] <= packages[pi][0]):
                merged.append(leaves[li])
                li += 1
            else:
                merged.append(packages[pi])
                pi += 1
        current = merged

    for _, symbols in current[:2 * len(used) - 2]:
        for s in symbols:
            lengths[s] += 1
    return lengths


@dataclass
class HuffmanCode:
    lengths: np.ndarray

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if len(self.lengths) and self.lengths.max() > MAX_CODE_LENGTH:
            raise BundleFormatError(f"Huffman code length above {MAX_CODE_LENGTH}")
        self.codes = canonical_codes(self.lengths)
        # decoder tables: per length, first code, count and offset into the sorted symbol list
        order = sorted((int(l), s) for s, l in enumerate(self.lengths) if l > 0)
        self.sorted_symbols = [s for _, s in order]
        self.count = [0] * (MAX_CODE_LENGTH + 1)
        for l, _ in order:
            self.count[l] += 1
        self.first_code = [0] * (MAX_CODE_LENGTH + 2)
        self.first_index = [0] * (MAX_CODE_LENGTH + 2)
        code = 0
        index = 0
        for l in range(1, MAX_CODE_LENGTH + 1):
            self.first_code[l] = code
            self.first_index[l] = index
            code = (code + self.count[l]) << 1
            index += self.count[l]


def canonical_codes(lengths) -> List[int]:
    codes = [0] * len(lengths)
    order = sorted((int(l), s) for s, l in enumerate(lengths) if l > 0)
    code = 0
    for n, (length, symbol) in enumerate(order):
        codes[symbol] = code
        code += 1
        if n + 1 < len(order):
            code <<= order[n + 1][0] - length
    return codes


def huffman_code_from_table(table: FrequencyTable) -> HuffmanCode:
    return HuffmanCode(package_merge(table.freqs))


def _encode_with(symbols, code: HuffmanCode) -> bytes:
    lengths = code.lengths.tolist()
    codes = code.codes
    size = len(lengths)
    out = bytearray()
    acc = 0
    nbits = 0
    for s in np.asarray(symbols, dtype=np.int64).reshape(-1).tolist():
        length = lengths[s] if 0 <= s < size else 0
        if length == 0:
            raise ZeroFrequencyError(s)
        acc = (acc << length) | codes[s]
        nbits += length
        while nbits >= 8:
            nbits -= 8
            out.append((acc >> nbits) & 0xFF)
        acc &= (1 << nbits) - 1
    if nbits:
        out.append((acc << (8 - nbits)) & 0xFF)
    return bytes(out)


def _decode_with(data: bytes, code: HuffmanCode, n: int) -> np.ndarray:
    out = np.empty(n, dtype=np.int64)
    total_bits = len(data) * 8
    bitpos = 0
    count, first_code, first_index = code.count, code.first_code, code.first_index
    symbols = code.sorted_symbols
    for i in range(n):
        value = 0
        for length in range(1, MAX_CODE_LENGTH + 1):
            if bitpos >= total_bits:
                raise CorruptStreamError(f"Huffman stream truncated at symbol {i}")
            value = (value << 1) | ((data[bitpos >> 3] >> (7 - (bitpos & 7))) & 1)
            bitpos += 1
            offset = value - first_code[length]
            if 0 <= offset < count[length]:
                out[i] = symbols[first_index[length] + offset]
                break
        else:
            raise CorruptStreamError(f"invalid Huffman code at symbol {i}")
    if (total_bits - bitpos) >= 8:
        raise CorruptStreamError("trailing bytes after the last Huffman code")
    return out


def huffman_encode(symbols, table: FrequencyTable) -> bytes:
    return _encode_with(symbols, huffman_code_from_table(table))


def huffman_decode(data: bytes, table: FrequencyTable, n: int) -> np.ndarray:
    return _decode_with(data, huffman_code_from_table(table), n)


class HuffmanCoder(EntropyCoder):
    name = "huffman"
    coder_id = 1

    def build_model(self, symbols):
        return huffman_code_from_table(super().build_model(symbols))

    def encode(self, symbols, model):
        return _encode_with(symbols, model)

    def decode(self, data, model, n):
        return _decode_with(data, model, n)

    def write_model(self, model: HuffmanCode) -> bytes:
        return struct.pack("<H", len(model.lengths)) + np.asarray(model.lengths, dtype=np.uint8).tobytes()

    def read_model(self, buf: bytes, offset: int):
        count, offset = _read_u16(buf, offset)
        end = offset + count
        if end > len(buf):
            raise BundleFormatError("Huffman code lengths run past the end of their section")
        return HuffmanCode(np.frombuffer(buf[offset:end], dtype=np.uint8).astype(np.int64)), end
