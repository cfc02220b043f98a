"""Minimal deterministic grayscale PNG encoding.

Fixed zlib level and no ancillary chunks, so identical pixel buffers always
produce identical bytes (the service's frame-determinism contract).
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))


def encode_gray(pixels: np.ndarray, bit_depth: int = 8) -> bytes:
    """Encode a 2-D array as grayscale PNG after min-max normalisation."""
    p = np.asarray(pixels, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("expected a 2-D pixel array")
    span = p.max() - p.min()
    norm = (p - p.min()) / span if span > 0 else np.zeros_like(p)
    if bit_depth == 8:
        data = np.round(norm * 255.0).astype(">u1")
    elif bit_depth == 16:
        data = np.round(norm * 65535.0).astype(">u2")
    else:
        raise ValueError("bit_depth must be 8 or 16")
    h, w = p.shape
    ihdr = struct.pack(">IIBBBBB", w, h, bit_depth, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + data[row].tobytes() for row in range(h))
    return (
        _SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(raw, 6))
        + _chunk(b"IEND", b"")
    )


def decode_gray(blob: bytes) -> np.ndarray:
    """Decode a PNG produced by :func:`encode_gray` (test support)."""
    if blob[:8] != _SIGNATURE:
        raise ValueError("not a PNG")
    pos = 8
    width = height = depth = None
    idat = b""
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        if tag == b"IHDR":
            width, height, depth = struct.unpack(">IIB", payload[:9])
        elif tag == b"IDAT":
            idat += payload
        pos += 12 + length
    raw = zlib.decompress(idat)
    dtype = ">u2" if depth == 16 else ">u1"
    stride = width * (2 if depth == 16 else 1) + 1
    rows = [
        np.frombuffer(raw[r * stride + 1 : (r + 1) * stride], dtype=dtype)
        for r in range(height)
    ]
    return np.stack(rows).astype(np.float64) / (65535.0 if depth == 16 else 255.0)
