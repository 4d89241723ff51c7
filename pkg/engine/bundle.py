"""
Single-file compressed bundle: encoder and decoder.

Layout (little-endian, normative description in FORMAT.md):

    "SPWZ" | u8 version | u16 section count | count x {tag[4], u64 offset, u64 length}
    | section payloads | u32 CRC32 of every preceding byte

The decoder is a pure function of the bytes. The encoder builds its
reference dequantized scene through the same assembly code the decoder uses,
so render checks run against exactly what a decoder will reconstruct.
"""

import logging
import struct
import zlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from coders import get_coder
from coders.base_coder import EntropyCoder

from .exceptions import (BadMagicError, BundleFormatError, CodecError, CrcMismatchError,
                         DirectoryError)
from .morton import morton_sort
from .pruning import DEFAULT_MASK_THRESHOLD, bake_mask
from .quantize import QuantGrid, dequantize, fit_grid, quantize
from .scene import DEFAULT_MASK_LOGIT, GaussianScene, normalized_rotations, validate_scene
from .vq import fit_codebook

logger = logging.getLogger(__name__)

MAGIC = b"SPWZ"
VERSION = 1
SECTION_TAGS = (b"META", b"POSQ", b"ROTQ", b"SCLQ", b"OPAQ", b"SHDC", b"MSKB", b"VQ12", b"VQ3 ")
HEADER_SIZE = 7
DIR_ENTRY_SIZE = 20
CRC_SIZE = 4
MAX_CODEBOOK = 65536

# grid order inside META; field name of the matching section
GRID_SECTIONS = (("POSQ", "positions"), ("ROTQ", "rotation_params"), ("SCLQ", "log_scales"),
                 ("OPAQ", "opacity_logits"), ("SHDC", "sh_dc"))


@dataclass
class EncodeConfig:
    position_bits: int = 16
    attribute_bits: int = 8
    k12: int = 256
    k3: int = 256
    coder: str = "rans"
    seed: int = 42
    kmeans_iterations: int = 30
    mask_threshold: float = DEFAULT_MASK_THRESHOLD

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> "EncodeConfig":
        return cls(
            position_bits=int(config["position_bits"]),
            attribute_bits=int(config["attribute_bits"]),
            k12=int(config["k12"]),
            k3=int(config["k3"]),
            coder=str(config["coder"]),
            seed=int(config["seed"]),
            kmeans_iterations=int(config["kmeans_iterations"]),
            mask_threshold=float(config["mask_threshold"]),
        )


@dataclass
class DecodedParts:
    """Everything the bundle stores, before assembly into a scene"""
    count: int
    sh_degree: int
    grids: Dict[str, QuantGrid]
    symbols: Dict[str, np.ndarray]
    mask: np.ndarray
    centroids12: np.ndarray
    indices12: np.ndarray
    centroids3: np.ndarray
    indices3: np.ndarray
    coder_id: int = 0
    seed: int = 0


@dataclass
class EncodeResult:
    data: bytes
    reference: GaussianScene
    permutation: np.ndarray
    section_sizes: Dict[str, int] = field(default_factory=dict)
    masked_fraction: float = 0.0
    distortion12: float = 0.0
    distortion3: float = 0.0

    @property
    def bits_per_gaussian(self) -> float:
        return 8.0 * len(self.data) / self.reference.count if self.reference.count else 0.0


# ---------------------------------------------------------------- streams

class _Reader:
    def __init__(self, buf: bytes, name: str):
        self.buf = buf
        self.pos = 0
        self.name = name

    def take(self, size: int) -> bytes:
        if size < 0 or self.pos + size > len(self.buf):
            raise BundleFormatError(f"section {self.name} is truncated")
        chunk = self.buf[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str):
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def finish(self):
        if self.pos != len(self.buf):
            raise BundleFormatError(f"section {self.name} has {len(self.buf) - self.pos} trailing bytes")


def _planes_for(max_symbol: int) -> int:
    return 1 if max_symbol <= 0xFF else 2


def encode_stream(symbols: np.ndarray, planes: int, coder: EntropyCoder) -> bytes:
    """u32 n, u8 planes, then per plane: model, u32 payload length, payload"""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    out = [struct.pack("<IB", symbols.size, planes)]
    if symbols.size:
        for plane in range(planes):
            values = (symbols >> (8 * plane)) & 0xFF
            model = coder.build_model(values)
            payload = coder.encode(values, model)
            out.append(coder.write_model(model))
            out.append(struct.pack("<I", len(payload)))
            out.append(payload)
    return b"".join(out)


def decode_stream(reader: _Reader, coder: EntropyCoder) -> np.ndarray:
    n, planes = reader.unpack("<IB")
    if planes not in (1, 2):
        raise BundleFormatError(f"section {reader.name}: stream has {planes} planes")
    symbols = np.zeros(n, dtype=np.int64)
    if n == 0:
        return symbols
    for plane in range(planes):
        model, reader.pos = coder.read_model(reader.buf, reader.pos)
        length = reader.unpack("<I")
        payload = reader.take(length)
        symbols |= coder.decode(payload, model, n) << (8 * plane)
    return symbols


def _encode_attribute(q: np.ndarray, bits: int, coder: EntropyCoder) -> bytes:
    channels = q.shape[1]
    planes = 1 if bits <= 8 else 2
    return struct.pack("<B", channels) + b"".join(encode_stream(q[:, c], planes, coder) for c in range(channels))


def _decode_attribute(reader: _Reader, count: int, channels: int, coder: EntropyCoder) -> np.ndarray:
    stored = reader.unpack("<B")
    if stored != channels:
        raise BundleFormatError(f"section {reader.name}: {stored} channels, expected {channels}")
    cols = []
    for _ in range(channels):
        col = decode_stream(reader, coder)
        if col.size != count:
            raise BundleFormatError(f"section {reader.name}: stream of {col.size} symbols, expected {count}")
        cols.append(col)
    return np.stack(cols, axis=1) if cols else np.zeros((count, 0), dtype=np.int64)


def _encode_vq(centroids: np.ndarray, dim: int, indices: np.ndarray, coder: EntropyCoder) -> bytes:
    k = centroids.shape[0]
    head = struct.pack("<IB", k, dim) + np.asarray(centroids, dtype="<f4").tobytes()
    return head + encode_stream(indices, _planes_for(k - 1), coder)


def _decode_vq(reader: _Reader, dim: int, coder: EntropyCoder) -> Tuple[np.ndarray, np.ndarray]:
    k, stored_dim = reader.unpack("<IB")
    if stored_dim != dim or k > MAX_CODEBOOK:
        raise BundleFormatError(f"section {reader.name}: codebook {k} x {stored_dim} not allowed")
    centroids = np.frombuffer(reader.take(4 * k * dim), dtype="<f4").astype(np.float64).reshape(k, dim)
    indices = decode_stream(reader, coder)
    if indices.size and (indices.max() >= k):
        raise BundleFormatError(f"section {reader.name}: codebook index out of range")
    return centroids, indices


# ---------------------------------------------------------------- assembly

def assemble_scene(parts: DecodedParts) -> GaussianScene:
    """Dequantize and rebuild the scene from decoded parts (shared by encoder and decoder)"""
    n = parts.count
    values = {name: dequantize(parts.symbols[name], parts.grids[name]) for _, name in GRID_SECTIONS}

    rest = np.zeros((n, 3, 15), dtype=np.float64)
    if parts.sh_degree >= 1 and n:
        block12 = parts.centroids12[parts.indices12].reshape(n, 3, 8)
        used = (parts.sh_degree + 1) ** 2 - 1
        rest[:, :, :min(used, 8)] = block12[:, :, :min(used, 8)]
    if parts.sh_degree == 3 and parts.indices3.size:
        rows = np.nonzero(parts.mask)[0]
        rest[rows, :, 8:] = parts.centroids3[parts.indices3].reshape(-1, 3, 7)

    mask_logits = np.where(parts.mask, DEFAULT_MASK_LOGIT, -DEFAULT_MASK_LOGIT)[:, None]
    return GaussianScene(
        positions=values["positions"].reshape(n, 3),
        rotation_params=values["rotation_params"].reshape(n, 4),
        log_scales=values["log_scales"].reshape(n, 3),
        opacity_logits=values["opacity_logits"].reshape(n, 1),
        sh_dc=values["sh_dc"].reshape(n, 3),
        sh_rest=rest.reshape(n, 45),
        mask_logits=mask_logits.astype(np.float64),
        max_sh_degree=parts.sh_degree,
    )


# ---------------------------------------------------------------- encoder

def _pack_meta(parts: DecodedParts) -> bytes:
    pos = parts.grids["positions"]
    out = [struct.pack("<IB", parts.count, parts.sh_degree)]
    out.append(np.concatenate([pos.mins, pos.maxs]).astype("<f4").tobytes())
    for _, name in GRID_SECTIONS:
        grid = parts.grids[name]
        out.append(struct.pack("<BB", grid.bits, grid.channels))
        out.append(np.stack([grid.mins, grid.maxs], axis=1).astype("<f4").tobytes())
    out.append(struct.pack("<BIIQ", parts.coder_id, parts.centroids12.shape[0], parts.centroids3.shape[0],
                           parts.seed & 0xFFFFFFFFFFFFFFFF))
    return b"".join(out)


def _container(sections: List[Tuple[bytes, bytes]]) -> bytes:
    directory = []
    offset = HEADER_SIZE + DIR_ENTRY_SIZE * len(sections)
    for tag, payload in sections:
        directory.append(struct.pack("<4sQQ", tag, offset, len(payload)))
        offset += len(payload)
    body = MAGIC + struct.pack("<BH", VERSION, len(sections)) + b"".join(directory) + b"".join(p for _, p in sections)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def encode_scene(scene: GaussianScene, cfg: Optional[EncodeConfig] = None) -> EncodeResult:
    """Morton sort, bake mask, quantize, vector-quantize SH and entropy code into one bundle"""
    cfg = cfg or EncodeConfig()
    violations = validate_scene(scene)
    if violations:
        raise CodecError(f"cannot encode an invalid scene: {violations[0]}")
    coder = get_coder(cfg.coder)

    ordered, perm = morton_sort(scene)
    baked = bake_mask(ordered, cfg.mask_threshold)
    n = baked.count
    degree = baked.max_sh_degree
    mask = baked.mask_logits[:, 0] > 0

    attributes = {
        "positions": (baked.positions, cfg.position_bits),
        "rotation_params": (normalized_rotations(baked.rotation_params) if n else baked.rotation_params,
                            cfg.attribute_bits),
        "log_scales": (baked.log_scales, cfg.attribute_bits),
        "opacity_logits": (baked.opacity_logits, cfg.attribute_bits),
        "sh_dc": (baked.sh_dc, cfg.attribute_bits),
    }
    grids, symbols = {}, {}
    for name, (values, bits) in attributes.items():
        grids[name] = fit_grid(values, bits)
        symbols[name] = quantize(values, grids[name]) if n else np.zeros((0, grids[name].channels), dtype=np.int64)

    distortion12 = distortion3 = 0.0
    centroids12 = np.zeros((0, 24))
    indices12 = np.zeros(0, dtype=np.int64)
    if degree >= 1 and n:
        k12 = min(cfg.k12, n, MAX_CODEBOOK)
        if k12 < cfg.k12:
            logger.warning(f"degree-1/2 codebook clamped from {cfg.k12} to {k12} rows")
        book = fit_codebook(baked.degree12_block(), k12, cfg.seed, cfg.kmeans_iterations)
        centroids12 = book.centroids.astype(np.float32).astype(np.float64)
        indices12, distortion12 = book.indices, book.distortion

    centroids3 = np.zeros((0, 21))
    indices3 = np.zeros(0, dtype=np.int64)
    kept = int(mask.sum())
    if degree == 3 and kept:
        k3 = min(cfg.k3, kept, MAX_CODEBOOK)
        if k3 < cfg.k3:
            logger.warning(f"degree-3 codebook clamped from {cfg.k3} to {k3} rows")
        book = fit_codebook(baked.degree3_block()[mask], k3, cfg.seed + 1, cfg.kmeans_iterations)
        centroids3 = book.centroids.astype(np.float32).astype(np.float64)
        indices3, distortion3 = book.indices, book.distortion

    parts = DecodedParts(count=n, sh_degree=degree, grids=grids, symbols=symbols, mask=mask,
                         centroids12=centroids12, indices12=indices12, centroids3=centroids3,
                         indices3=indices3, coder_id=coder.coder_id, seed=cfg.seed)

    payloads = {"META": _pack_meta(parts)}
    for tag, name in GRID_SECTIONS:
        payloads[tag] = _encode_attribute(symbols[name], grids[name].bits, coder)
    payloads["MSKB"] = struct.pack("<I", n) + np.packbits(mask.astype(np.uint8), bitorder="little").tobytes()
    payloads["VQ12"] = _encode_vq(centroids12, 24, indices12, coder)
    payloads["VQ3 "] = _encode_vq(centroids3, 21, indices3, coder)

    sections = [(tag, payloads[tag.decode("ascii")]) for tag in SECTION_TAGS]
    data = _container(sections)
    masked = float(np.mean(~mask)) if n else 0.0
    logger.info(f"encoded {n} Gaussians into {len(data)} bytes with {coder.name} (masked degree-3: {masked:.1%})")
    return EncodeResult(
        data=data,
        reference=assemble_scene(parts),
        permutation=perm,
        section_sizes={tag.decode("ascii"): len(p) for tag, p in sections},
        masked_fraction=masked,
        distortion12=distortion12,
        distortion3=distortion3,
    )


def encode_bundle(scene: GaussianScene, cfg: Optional[EncodeConfig] = None) -> bytes:
    return encode_scene(scene, cfg).data


# ---------------------------------------------------------------- decoder

@dataclass
class BundleInfo:
    version: int
    sections: Dict[str, Tuple[int, int]]
    crc: int
    size: int


def read_directory(data: bytes) -> BundleInfo:
    """Validate magic, CRC and directory bounds"""
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(data[:4])
    if len(data) < HEADER_SIZE + CRC_SIZE:
        raise BundleFormatError("bundle shorter than its fixed header")
    stored = struct.unpack_from("<I", data, len(data) - CRC_SIZE)[0]
    computed = zlib.crc32(data[:-CRC_SIZE]) & 0xFFFFFFFF
    if stored != computed:
        raise CrcMismatchError(stored, computed)

    version, count = struct.unpack_from("<BH", data, 4)
    if version != VERSION:
        raise BundleFormatError(f"unsupported bundle version {version}")
    payload_start = HEADER_SIZE + DIR_ENTRY_SIZE * count
    payload_end = len(data) - CRC_SIZE
    if payload_start > payload_end:
        raise DirectoryError(f"directory of {count} sections does not fit in {len(data)} bytes")
    sections = {}
    for i in range(count):
        tag, offset, length = struct.unpack_from("<4sQQ", data, HEADER_SIZE + DIR_ENTRY_SIZE * i)
        if offset < payload_start or offset + length > payload_end:
            raise DirectoryError(f"section {tag!r} [{offset}, {offset + length}) outside the payload area")
        sections[tag.decode("ascii", errors="replace")] = (offset, length)
    return BundleInfo(version=version, sections=sections, crc=stored, size=len(data))


def _section(data: bytes, info: BundleInfo, tag: str) -> _Reader:
    if tag not in info.sections:
        raise BundleFormatError(f"bundle has no {tag!r} section")
    offset, length = info.sections[tag]
    return _Reader(data[offset:offset + length], tag)


def decode_parts(data: bytes) -> DecodedParts:
    data = bytes(data)
    info = read_directory(data)

    meta = _section(data, info, "META")
    count, degree = meta.unpack("<IB")
    if degree > 3:
        raise BundleFormatError(f"SH degree {degree} not in 0..3")
    meta.take(24)
    grids = {}
    for _, name in GRID_SECTIONS:
        bits, channels = meta.unpack("<BB")
        bounds = np.frombuffer(meta.take(8 * channels), dtype="<f4").astype(np.float64).reshape(channels, 2)
        try:
            grids[name] = QuantGrid(bounds[:, 0], bounds[:, 1], bits)
        except ValueError as e:
            raise BundleFormatError(f"META: {e}") from e
    coder_id, k12, k3, seed = meta.unpack("<BIIQ")
    meta.finish()
    coder = get_coder(int(coder_id))

    symbols = {}
    for tag, name in GRID_SECTIONS:
        reader = _section(data, info, tag)
        q = _decode_attribute(reader, count, grids[name].channels, coder)
        reader.finish()
        if q.size and q.max() > grids[name].levels:
            raise BundleFormatError(f"section {tag}: symbol above the grid's {grids[name].levels} levels")
        symbols[name] = q

    reader = _section(data, info, "MSKB")
    stored = reader.unpack("<I")
    if stored != count:
        raise BundleFormatError(f"MSKB covers {stored} rows, expected {count}")
    packed = np.frombuffer(reader.take((count + 7) // 8), dtype=np.uint8)
    reader.finish()
    mask = np.unpackbits(packed, bitorder="little")[:count].astype(bool)

    reader = _section(data, info, "VQ12")
    centroids12, indices12 = _decode_vq(reader, 24, coder)
    reader.finish()
    reader = _section(data, info, "VQ3 ")
    centroids3, indices3 = _decode_vq(reader, 21, coder)
    reader.finish()

    if centroids12.shape[0] != k12 or centroids3.shape[0] != k3:
        raise BundleFormatError("codebook sizes disagree with META")
    if degree >= 1 and count and indices12.size != count:
        raise BundleFormatError(f"VQ12 holds {indices12.size} indices, expected {count}")
    expected3 = int(mask.sum()) if degree == 3 else 0
    if indices3.size != expected3:
        raise BundleFormatError(f"VQ3 holds {indices3.size} indices, expected {expected3}")

    return DecodedParts(count=count, sh_degree=degree, grids=grids, symbols=symbols, mask=mask,
                        centroids12=centroids12, indices12=indices12, centroids3=centroids3,
                        indices3=indices3, coder_id=int(coder_id), seed=int(seed))


def decode_bundle(data: bytes) -> GaussianScene:
    """Rebuild the scene from bundle bytes alone"""
    scene = assemble_scene(decode_parts(data))
    logger.debug(f"decoded bundle of {len(data)} bytes into {scene.count} Gaussians")
    return scene
