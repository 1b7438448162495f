"""Bit-packed storage for integer multiple matrices.

File layout, byte-exact: 16-byte header (magic "PQW1", u16 rows, u16 cols,
u8 bits_per_entry, u8 polarity, 6-byte scheme digest prefix; integers
little-endian) followed by the payload. Entries are packed row-major,
little-endian bit order within each byte.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

MAGIC = b"PQW1"
HEADER = struct.Struct("<4sHHBB6s")
POLARITY_POS = 0
POLARITY_NEG = 1


class PackError(ValueError):
    pass


@dataclass
class PackedLayer:
    rows: int
    cols: int
    bits_per_entry: int
    polarity: int
    digest6: bytes
    payload: bytes

    def to_bytes(self) -> bytes:
        return (
            HEADER.pack(MAGIC, self.rows, self.cols, self.bits_per_entry,
                        self.polarity, self.digest6)
            + self.payload
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PackedLayer":
        if len(raw) < HEADER.size:
            raise PackError(f"truncated header: {len(raw)} bytes")
        magic, rows, cols, bits, polarity, digest6 = HEADER.unpack(raw[: HEADER.size])
        if magic != MAGIC:
            raise PackError(f"bad magic {magic!r}")
        p = cls(rows, cols, bits, polarity, digest6, raw[HEADER.size :])
        expected = _payload_bytes(rows, cols, bits)
        if len(p.payload) != expected:
            raise PackError(
                f"payload length mismatch at byte {HEADER.size + len(p.payload)}: "
                f"have {len(p.payload)}, header implies {expected}"
            )
        return p


def bits_for(max_multiple: int) -> int:
    if max_multiple < 1:
        raise PackError("max multiple must be >= 1")
    return max(1, math.ceil(math.log2(max_multiple + 1)))


def _payload_bytes(rows: int, cols: int, bits: int) -> int:
    return (rows * cols * bits + 7) // 8


def pack_matrix(matrix, bits: int) -> bytes:
    m = np.asarray(matrix, dtype=np.int64)
    if (m < 0).any() or (m >= (1 << bits)).any():
        raise PackError(f"entry out of range for {bits}-bit packing")
    out = bytearray(_payload_bytes(m.shape[0], m.shape[1], bits))
    pos = 0
    for v in m.ravel():
        v = int(v)
        byte, off = divmod(pos, 8)
        out[byte] |= (v << off) & 0xFF
        spill = v >> (8 - off) if off else 0
        k = 1
        while spill:
            out[byte + k] |= spill & 0xFF
            spill >>= 8
            k += 1
        pos += bits
    return bytes(out)


def unpack_matrix(payload: bytes, rows: int, cols: int, bits: int) -> np.ndarray:
    need = _payload_bytes(rows, cols, bits)
    if len(payload) < need:
        raise PackError(f"truncated payload at byte {len(payload)}, need {need}")
    out = np.empty(rows * cols, dtype=np.int64)
    mask = (1 << bits) - 1
    pos = 0
    for i in range(rows * cols):
        byte, off = divmod(pos, 8)
        v = payload[byte] >> off
        got = 8 - off
        k = 1
        while got < bits:
            v |= payload[byte + k] << got
            got += 8
            k += 1
        out[i] = v & mask
        pos += bits
    return out.reshape(rows, cols)


def encode(dec, scheme):
    """Pack a decomposed layer into (positive, negative) PackedLayers.

    bits_per_entry is minimal for each bin set's largest multiple.
    """
    digest6 = bytes.fromhex(scheme.digest())[:6]
    out = []
    for matrix, bin_set, polarity in (
        (dec.m_pos, scheme.pos, POLARITY_POS),
        (dec.m_neg, scheme.neg, POLARITY_NEG),
    ):
        m_max = max(bin_set.multiples)
        if (matrix > m_max).any():
            raise PackError(f"multiple exceeds the scheme maximum {m_max}")
        bits = bits_for(m_max)
        rows, cols = matrix.shape
        out.append(
            PackedLayer(rows, cols, bits, polarity, digest6, pack_matrix(matrix, bits))
        )
    return tuple(out)


def decode(p: PackedLayer) -> np.ndarray:
    return unpack_matrix(p.payload, p.rows, p.cols, p.bits_per_entry)


def entropy_bits(values) -> float:
    """Zeroth-order entropy of the entry distribution, in bits per entry."""
    counts = np.array(list(Counter(np.asarray(values).ravel().tolist()).values()), dtype=float)
    probs = counts / counts.sum()
    return float(-(probs * np.log2(probs)).sum())


def compression_report(dec, scheme) -> dict:
    """Packed-size versus 32-bit-float baseline, with entry histograms and
    zeroth-order entropy per polarity."""
    pos_p, neg_p = encode(dec, scheme)
    rows, cols = dec.m_pos.shape
    baseline = rows * cols * 4
    report = {"rows": rows, "cols": cols, "baseline_bytes": baseline}
    total_packed = 0
    for tag, packed, matrix in (("pos", pos_p, dec.m_pos), ("neg", neg_p, dec.m_neg)):
        hist = {int(k): int(v) for k, v in sorted(Counter(matrix.ravel().tolist()).items())}
        report[tag] = {
            "bits_per_entry": packed.bits_per_entry,
            "packed_bytes": len(packed.payload),
            "ratio": baseline / len(packed.payload),
            "histogram": hist,
            "entropy_bits": entropy_bits(matrix),
        }
        total_packed += len(packed.payload) + HEADER.size
    report["total_packed_bytes"] = total_packed
    return report
