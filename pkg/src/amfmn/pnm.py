"""Binary PGM (P5) and PPM (P6) reading and writing."""

from __future__ import annotations

import numpy as np


class PnmError(ValueError):
    pass


def _tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping # comments."""
    out, pos = [], 2
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PnmError("malformed header")
        out.append(int(data[start:pos]))
    # exactly one whitespace byte separates header from raster
    return out, pos + 1


def read_pnm(path) -> np.ndarray:
    """Return H x W (P5) or H x W x 3 (P6) unsigned integer raster."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"{path}: unsupported magic {magic!r}")
    (width, height, maxval), start = _tokens(data, 3)
    if not 0 < maxval < 65536:
        raise PnmError(f"{path}: bad maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height * channels
    if len(data) < start + n * dtype.itemsize:
        raise PnmError(f"{path}: truncated raster")
    raster = np.frombuffer(data, dtype=dtype, count=n, offset=start)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return raster.reshape(shape).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pnm(path, raster: np.ndarray) -> None:
    raster = np.asarray(raster)
    if raster.dtype != np.uint8:
        raise PnmError("only 8-bit rasters are written")
    if raster.ndim == 2:
        magic = b"P5"
    elif raster.ndim == 3 and raster.shape[2] == 3:
        magic = b"P6"
    else:
        raise PnmError(f"cannot write raster of shape {raster.shape}")
    h, w = raster.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(raster).tobytes())


def raster_to_image(raster: np.ndarray) -> np.ndarray:
    """Integer raster -> 3 x H x W float image in [0, 1]; grayscale is replicated."""
    scale = 65535.0 if raster.dtype == np.uint16 else 255.0
    img = raster.astype(np.float64) / scale
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def image_to_raster(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    return raster_to_image(read_pnm(path))


def resize_nearest(image: np.ndarray, h: int, w: int) -> np.ndarray:
    """Nearest-neighbour resample of a C x H x W image to h x w."""
    _, sh, sw = image.shape
    rows = (np.arange(h) * sh) // h
    cols = (np.arange(w) * sw) // w
    return image[:, rows[:, None], cols[None, :]]
