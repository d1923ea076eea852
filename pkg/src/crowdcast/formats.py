"""Binary file formats: CDMP density sequences and PGM heatmap export.

CDMP layout: 8-byte magic b"CDMP\\x00\\x00\\x00\\x01", three little-endian
uint32 (T, H, W), then T*H*W little-endian float32 values in (t, row, column)
row-major order. Mask-plan sidecars reuse the same layout with 0.0/1.0
values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParameterError

CDMP_MAGIC = b"CDMP\x00\x00\x00\x01"
_HEADER = struct.Struct("<III")


def write_cdmp(path, seq: np.ndarray) -> None:
    seq = np.asarray(seq)
    if seq.ndim != 3:
        raise ParameterError(f"CDMP stores (T, H, W) sequences, got shape {seq.shape}")
    t, h, w = seq.shape
    with open(path, "wb") as f:
        f.write(CDMP_MAGIC)
        f.write(_HEADER.pack(t, h, w))
        f.write(np.ascontiguousarray(seq, dtype="<f4").tobytes())


def read_cdmp(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < len(CDMP_MAGIC) + _HEADER.size:
        raise ParameterError(f"{path}: truncated CDMP header")
    if raw[:len(CDMP_MAGIC)] != CDMP_MAGIC:
        raise ParameterError(f"{path}: bad CDMP magic {raw[:8]!r}")
    t, h, w = _HEADER.unpack_from(raw, len(CDMP_MAGIC))
    body = raw[len(CDMP_MAGIC) + _HEADER.size:]
    expected = t * h * w * 4
    if len(body) != expected:
        raise ParameterError(f"{path}: CDMP body holds {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype="<f4").reshape(t, h, w).copy()


def write_pgm(path, frame: np.ndarray) -> None:
    """Export a density frame as binary PGM (P5), value = round(density * 255)."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ParameterError(f"PGM export expects a (H, W) frame, got shape {frame.shape}")
    h, w = frame.shape
    pixels = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read back a binary PGM written by write_pgm (no comment handling)."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise ParameterError(f"{path}: not a binary PGM written by this package")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ParameterError(f"{path}: unexpected maxval {parts[2]!r}")
    body = parts[3]
    if len(body) != w * h:
        raise ParameterError(f"{path}: PGM body holds {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
