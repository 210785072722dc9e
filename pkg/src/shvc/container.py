"""On-disk container framing for compressed images, plus image I/O.

The container records everything needed to invert the coding: mode,
hierarchy shape, original and padded dimensions, a hash binding the
stream to the exact weight file, the auxiliary PRNG seed, the raw word
stream, and a CRC over the payload.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

CONTAINER_MAGIC = b"SHVC"
CONTAINER_VERSION = 1

MODE_CODES = {"shvc": 0, "arib": 1, "chained": 2}
MODE_NAMES = {v: k for k, v in MODE_CODES.items()}

_HEADER = "<4sBBBBHHIIIIQQQ"  # up to payload_len inclusive


class ContainerError(ValueError):
    """Base class for container parse failures."""


class MagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class HashMismatchError(ContainerError):
    pass


class CrcError(ContainerError):
    pass


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class Container:
    mode: str
    k: int
    L: int
    split_s: int
    C: int
    orig_h: int
    orig_w: int
    padded_h: int
    padded_w: int
    model_hash: int
    aux_seed: int
    payload: bytes

    def to_bytes(self) -> bytes:
        head = struct.pack(
            _HEADER, CONTAINER_MAGIC, CONTAINER_VERSION,
            MODE_CODES[self.mode], self.k, self.L, self.split_s, self.C,
            self.orig_h, self.orig_w, self.padded_h, self.padded_w,
            self.model_hash, self.aux_seed, len(self.payload))
        return head + self.payload + struct.pack(
            "<I", zlib.crc32(self.payload))

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Container":
        size = struct.calcsize(_HEADER)
        if len(blob) < size + 4:
            raise ContainerError("container truncated")
        (magic, version, mode_code, k, L, split_s, c, oh, ow, ph, pw,
         model_hash, aux_seed, payload_len) = struct.unpack(
            _HEADER, blob[:size])
        if magic != CONTAINER_MAGIC:
            raise MagicError("not a compressed image container")
        if version != CONTAINER_VERSION:
            raise VersionError(f"unsupported container version {version}")
        if mode_code not in MODE_NAMES:
            raise ContainerError(f"unknown mode code {mode_code}")
        payload = blob[size:size + payload_len]
        if len(payload) != payload_len:
            raise ContainerError("payload truncated")
        (crc,) = struct.unpack("<I", blob[size + payload_len:
                                          size + payload_len + 4])
        if crc != zlib.crc32(payload):
            raise CrcError("payload CRC mismatch")
        return cls(mode=MODE_NAMES[mode_code], k=k, L=L, split_s=split_s,
                   C=c, orig_h=oh, orig_w=ow, padded_h=ph, padded_w=pw,
                   model_hash=model_hash, aux_seed=aux_seed, payload=payload)

    def check_model(self, weight_bytes: bytes) -> None:
        if fnv1a64(weight_bytes) != self.model_hash:
            raise HashMismatchError(
                "container was written with a different weight file")


def pad_replicate(img: np.ndarray, divisor: int) -> np.ndarray:
    """Replicate-edge pad spatial dims up to a multiple of `divisor`."""
    _, h, w = img.shape
    ph = (-h) % divisor
    pw = (-w) % divisor
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="edge")


# ---------------------------------------------------------------------------
# Image file I/O


class ImageFormatError(ValueError):
    pass


def read_ppm(path) -> np.ndarray:
    """Read a binary (P6) 8-bit PPM as a (3, H, W) uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ImageFormatError(f"{path}: not a binary PPM")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit PPM supported")
    pos += 1  # single whitespace after maxval
    raster = np.frombuffer(data, dtype=np.uint8, offset=min(pos, len(data)))
    if raster.size < 3 * h * w:
        raise ImageFormatError(f"{path}: raster truncated")
    raster = raster[:3 * h * w]
    return np.ascontiguousarray(raster.reshape(h, w, 3).transpose(2, 0, 1))


def write_ppm(path, img: np.ndarray) -> None:
    c, h, w = img.shape
    if c != 3:
        raise ImageFormatError("PPM output requires 3 channels")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(
            img.transpose(1, 2, 0), dtype=np.uint8).tobytes())


def read_raw(path) -> np.ndarray:
    """Raw planar u8 with a `<path>.dims` sidecar holding 'C H W'."""
    dims_path = str(path) + ".dims"
    try:
        with open(dims_path) as fh:
            c, h, w = (int(v) for v in fh.read().split())
    except (OSError, ValueError) as exc:
        raise ImageFormatError(f"{path}: bad or missing dims sidecar") from exc
    data = np.fromfile(path, dtype=np.uint8)
    if data.size != c * h * w:
        raise ImageFormatError(f"{path}: size does not match sidecar dims")
    return data.reshape(c, h, w)


def write_raw(path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    img.tofile(path)
    with open(str(path) + ".dims", "w") as fh:
        fh.write("{} {} {}\n".format(*img.shape))


def read_image(path) -> np.ndarray:
    if str(path).endswith(".ppm"):
        return read_ppm(path)
    return read_raw(path)


def write_image(path, img: np.ndarray) -> None:
    if str(path).endswith(".ppm"):
        write_ppm(path, img)
    else:
        write_raw(path, img)
