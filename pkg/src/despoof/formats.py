"""On-disk formats: binary PPM/PGM images, raw float planes, corpus manifest.

Raw plane layout: 16-byte header (4-byte magic ``DSPN`` for noise or ``DSPD``
for depth, then u32 height, width, channels, little-endian), followed by
little-endian float32 values in row-major order.
"""

from __future__ import annotations

import csv
import os
import struct

import numpy as np

NOISE_MAGIC = b"DSPN"
DEPTH_MAGIC = b"DSPD"

MANIFEST_FIELDS = ["path", "label", "medium", "subject_id", "split",
                   "noise_path", "depth_path"]


class DataError(Exception):
    """Corrupt or missing on-disk data."""


def quantize8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    """Write an [H,W,3] float image in [0,1] as binary PPM (P6, maxval 255)."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"write_ppm: expected [H,W,3], got {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantize8(img).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into an [H,W,3] float64 array in [0,1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:  # magic, width, height, maxval (comments skipped)
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise DataError(f"{path}: not a binary PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}")
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w * 3, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm(path, img: np.ndarray) -> None:
    """Write an [H,W] uint8 array as binary PGM (P5)."""
    if img.ndim != 2 or img.dtype != np.uint8:
        raise DataError(f"write_pgm: expected uint8 [H,W], got {img.shape} {img.dtype}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_plane(path, arr: np.ndarray, magic: bytes) -> None:
    if magic not in (NOISE_MAGIC, DEPTH_MAGIC):
        raise DataError(f"write_plane: unknown magic {magic!r}")
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise DataError(f"write_plane: expected [H,W] or [H,W,C], got {arr.shape}")
    h, w, c = a.shape
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_plane(path, magic: bytes | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if magic is not None and raw[:4] != magic:
        raise DataError(f"{path}: expected magic {magic!r}, found {raw[:4]!r}")
    h, w, c = struct.unpack_from("<III", raw, 4)
    data = np.frombuffer(raw, dtype="<f4", count=h * w * c, offset=16)
    return data.reshape(h, w, c).astype(np.float32)


def write_manifest(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def read_manifest(path) -> list[dict]:
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise DataError(f"{path}: bad manifest header {reader.fieldnames}")
        return list(reader)
