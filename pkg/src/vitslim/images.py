"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

import numpy as np

from .errors import ImageFormatError
from .tensor import Tensor


def _tokens(blob: bytes, count: int) -> tuple:
    """First ``count`` header tokens (comments skipped) and the payload offset."""
    out, i, n = [], 0, len(blob)
    while len(out) < count:
        while i < n and blob[i:i + 1].isspace():
            i += 1
        if i < n and blob[i:i + 1] == b"#":
            while i < n and blob[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not blob[j:j + 1].isspace() and blob[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise ImageFormatError("truncated header")
        out.append(blob[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    return out, i + 1


def decode_pnm(blob: bytes, name: str = "<bytes>") -> np.ndarray:
    """Raw uint8 array of shape (H, W, C)."""
    try:
        (magic, w, h, maxval), start = _tokens(blob, 4)
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ImageFormatError(f"{name}: malformed header ({exc})") from exc
    channels = {b"P5": 1, b"P6": 3}.get(magic)
    if channels is None:
        raise ImageFormatError(f"{name}: unsupported magic {magic!r}; only binary P5/P6 are read")
    if maxval != 255:
        raise ImageFormatError(f"{name}: maxval {maxval} is unsupported; only 8-bit (255) images are read")
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{name}: bad dimensions {width}x{height}")
    size = width * height * channels
    raster = blob[start:start + size]
    if len(raster) != size:
        raise ImageFormatError(f"{name}: expected {size} raster bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)


def encode_pnm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    h, w, c = pixels.shape
    if c not in (1, 3):
        raise ImageFormatError(f"cannot encode {c} channels; need 1 or 3")
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + pixels.tobytes()


def read_image(path, expect_shape=None) -> Tensor:
    """Pixels scaled to [0, 1], channel-last."""
    with open(path, "rb") as fh:
        raw = decode_pnm(fh.read(), str(path))
    if expect_shape is not None and raw.shape != tuple(expect_shape):
        raise ImageFormatError(f"{path}: image shape {raw.shape} does not match expected {tuple(expect_shape)}")
    return Tensor(raw.astype(np.float64) / 255.0)


def to_bytes(image) -> np.ndarray:
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    return np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)


def write_image(path, image) -> None:
    """Write a [0, 1] image (H, W) or (H, W, 1|3) as P5/P6."""
    with open(path, "wb") as fh:
        fh.write(encode_pnm(to_bytes(image)))


def write_pgm_bytes(path, pixels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pnm(pixels))
