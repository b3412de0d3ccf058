"""Bit-exact serialization of compressed models (the .sqz format).

Layout (all integers little-endian):

    magic   "SQSM"
    version u16 (currently 1)
    payload:
        n_layers u16, K u16, nonzero f64, seed u64
        per layer:
            out u32, in u32
            strategy u8 (0 = equal, 1 = outlier); single-window fallback
                is implied by an empty boundary list
            n_boundaries u8, boundaries f64 each
            n_redirect u8, redirect u8 each
            n_live u8, then per live window: K_w u16, mu f32 * K_w
            live-component count C u16
            n_live_weights u64
            index stream: ceil(log2 C) bits per live weight, flat-index
                order, LSB-first within each byte
            zero bitmap: 1 bit per weight (1 = kept), LSB-first
    footer  CRC-32 (IEEE) of the payload, u32

Codebook means are stored in IEEE-754 single precision: they are the
deployed weights.  Window boundaries stay double precision.
"""

from __future__ import annotations

import math
import struct
import zlib

import numpy as np

from .inference import CompressedLayer, CompressedModel

MAGIC = b"SQSM"
VERSION = 1

_STRATEGY_CODE = {"equal": 0, "outlier": 1}
_STRATEGY_NAME = {v: k for k, v in _STRATEGY_CODE.items()}


class CodecError(ValueError):
    pass


class BadMagic(CodecError):
    pass


class BadVersion(CodecError):
    pass


class CrcMismatch(CodecError):
    pass


class Truncated(CodecError):
    pass


# -- bit packing ----------------------------------------------------------


def pack_indices(values: np.ndarray, width: int) -> bytes:
    """Pack ints into ``width``-bit fields, LSB-first within each byte."""
    values = np.asarray(values, dtype=np.uint64)
    if width == 0:
        return b""
    bits = np.zeros(len(values) * width, dtype=np.uint8)
    for j in range(width):
        bits[j::width] = (values >> np.uint64(j)) & np.uint64(1)
    return np.packbits(bits, bitorder="little").tobytes()


def unpack_indices(data: bytes, n: int, width: int) -> np.ndarray:
    if width == 0:
        return np.zeros(n, dtype=np.int64)
    need = (n * width + 7) // 8
    if len(data) < need:
        raise Truncated("index stream shorter than declared")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    bits = bits[: n * width].astype(np.int64)
    out = np.zeros(n, dtype=np.int64)
    for j in range(width):
        out |= bits[j::width] << j
    return out


def pack_bitmap(mask: np.ndarray) -> bytes:
    return np.packbits(np.asarray(mask, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bitmap(data: bytes, n: int) -> np.ndarray:
    need = (n + 7) // 8
    if len(data) < need:
        raise Truncated("bitmap shorter than declared")
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    return bits[:n].astype(bool)


# -- encode ---------------------------------------------------------------


def encode(m: CompressedModel) -> bytes:
    payload = bytearray()
    payload += struct.pack("<HHdQ", len(m.layers), m.K, m.nonzero, m.seed)
    for (out, inp), cl in zip(m.shapes, m.layers):
        payload += struct.pack("<II", out, inp)
        payload += struct.pack("<B", _STRATEGY_CODE.get(cl.strategy, 1))
        payload += struct.pack("<B", len(cl.boundaries))
        for b in cl.boundaries:
            payload += struct.pack("<d", b)
        payload += struct.pack("<B", len(cl.redirect))
        for r in cl.redirect:
            payload += struct.pack("<B", int(r))
        payload += struct.pack("<B", len(cl.window_K))
        pos = 0
        for kw in cl.window_K:
            payload += struct.pack("<H", kw)
            payload += cl.mu[pos : pos + kw].astype("<f4").tobytes()
            pos += kw
        payload += struct.pack("<H", cl.C)
        payload += struct.pack("<Q", len(cl.indices))
        payload += pack_indices(cl.indices, cl.index_bits)
        payload += pack_bitmap(cl.keep)
    crc = zlib.crc32(bytes(payload)) & 0xFFFFFFFF
    return MAGIC + struct.pack("<H", VERSION) + bytes(payload) + struct.pack("<I", crc)


# -- decode ---------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated("file ends inside a field")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> CompressedModel:
    if len(data) < 6:
        raise Truncated("shorter than the fixed header")
    if data[:4] != MAGIC:
        raise BadMagic("bad magic")
    (version,) = struct.unpack("<H", data[4:6])
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    if len(data) < 10:
        raise Truncated("missing CRC footer")
    payload, (crc,) = data[6:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CrcMismatch("payload CRC mismatch")
    r = _Reader(payload)
    n_layers, K, nonzero, seed = r.unpack("<HHdQ")
    shapes = []
    layers = []
    for _ in range(n_layers):
        out, inp = r.unpack("<II")
        shapes.append((out, inp))
        (strat,) = r.unpack("<B")
        (nb,) = r.unpack("<B")
        boundaries = np.array([r.unpack("<d")[0] for _ in range(nb)])
        (nr,) = r.unpack("<B")
        redirect = np.array([r.unpack("<B")[0] for _ in range(nr)], dtype=np.int64)
        (n_live,) = r.unpack("<B")
        window_K = []
        mus = []
        for _ in range(n_live):
            (kw,) = r.unpack("<H")
            window_K.append(kw)
            mus.append(np.frombuffer(r.take(4 * kw), dtype="<f4").copy())
        (C,) = r.unpack("<H")
        if C != sum(window_K):
            raise CodecError("inconsistent live-component count")
        (n_live_weights,) = r.unpack("<Q")
        width = max(int(math.ceil(math.log2(C))), 0) if C > 1 else 0
        stream = r.take((n_live_weights * width + 7) // 8)
        indices = unpack_indices(stream, n_live_weights, width)
        if C and np.any(indices >= C):
            raise CodecError("index addresses past the codebook")
        T_l = out * inp + out
        keep = unpack_bitmap(r.take((T_l + 7) // 8), T_l)
        if int(keep.sum()) != n_live_weights:
            raise CodecError("bitmap population does not match index count")
        layers.append(
            CompressedLayer(
                boundaries=boundaries,
                redirect=redirect,
                strategy=_STRATEGY_NAME.get(strat, "outlier"),
                window_K=window_K,
                mu=np.concatenate(mus) if mus else np.zeros(0, dtype=np.float32),
                indices=indices,
                keep=keep,
            )
        )
    if r.pos != len(payload):
        raise CodecError("trailing bytes after the last layer")
    return CompressedModel(shapes, layers, K=K, nonzero=nonzero, seed=seed)


# -- size accounting ------------------------------------------------------


def dense_size_bytes(T: int) -> int:
    """Baseline footprint: 32 bits per weight."""
    return 4 * T


def compressed_size_bytes(m: CompressedModel, *, include_header: bool = True) -> int:
    total = len(encode(m))
    if not include_header:
        total -= len(MAGIC) + 2 + 4  # magic + version + CRC footer
    return total


def index_payload_bytes(m: CompressedModel) -> int:
    """Index stream plus codebook floats only (no bitmap, no framing).

    This is the size the headline compression-rate convention implies.
    """
    total = 0
    for cl in m.layers:
        total += (len(cl.indices) * cl.index_bits + 7) // 8
        total += 4 * cl.C
    return total


def bitmap_payload_bytes(m: CompressedModel) -> int:
    return sum((len(cl.keep) + 7) // 8 for cl in m.layers)
