"""Dense float64 tensor primitives, a counter-based RNG and the XTEN file format.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Every public
function here returns a fresh array and never mutates its inputs.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from typing import BinaryIO, Callable, Sequence

import numpy as np

NORM_EPS = 1e-12

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible."""


class FormatError(ValueError):
    """Raised on malformed or truncated XTEN data."""


def as_tensor(x, shape: Sequence[int] | None = None) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(tuple(shape))
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{what} produced non-finite values")
    return arr


# --------------------------------------------------------------------------
# random numbers
# --------------------------------------------------------------------------

def _splitmix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Splitmix64 counter generator.

    Value ``i`` of the stream is ``mix(seed + (i + 1) * gamma)``, so the stream
    is a pure function of the seed and independent of numpy's own generators.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def fork(self, tag: str) -> "Rng":
        """Independent child stream keyed by ``tag``."""
        key = np.array([self.seed ^ zlib.crc32(tag.encode("utf-8"))], dtype=np.uint64)
        return Rng(int(_splitmix(key + _GAMMA)[0]))

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _splitmix(np.uint64(self.seed) + idx * _GAMMA)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        bits = (self.next_u64(2 * m) >> np.uint64(11)).astype(np.float64)
        u1 = (bits[:m] + 1.0) * 2.0**-53  # (0, 1]
        u2 = bits[m:] * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return (std * z[:n]).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def integers(self, low: int, high: int, size: int) -> np.ndarray:
        span = high - low
        return low + (self.next_u64(size) % np.uint64(span)).astype(np.int64)


# --------------------------------------------------------------------------
# linear algebra and image-like ops
# --------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _finite(a @ b, "matmul")


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Stride-1 cross-correlation with zero "same" padding.

    ``x`` is C x H x W, ``kernels`` K x C x s x s with s in {1, 3}.
    """
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(f"conv2d: expected CxHxW input and KxCxsxs kernels, got {x.shape} and {kernels.shape}")
    k, c, s, s2 = kernels.shape
    if s != s2 or s not in (1, 3):
        raise ShapeError(f"conv2d: kernel size must be 1 or 3, got {s}x{s2}")
    if c != x.shape[0]:
        raise ShapeError(f"conv2d: kernel channels {c} do not match input channels {x.shape[0]}")
    _, h, w = x.shape
    if s == 1:
        out = (kernels.reshape(k, c) @ x.reshape(c, h * w)).reshape(k, h, w)
    else:
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        cols = np.empty((c, 3, 3, h, w))
        for dy in range(3):
            for dx in range(3):
                cols[:, dy, dx] = padded[:, dy:dy + h, dx:dx + w]
        out = (kernels.reshape(k, c * 9) @ cols.reshape(c * 9, h * w)).reshape(k, h, w)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64).reshape(k, 1, 1)
    return _finite(out, "conv2d")


def upsample_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    x = np.asarray(x, dtype=np.float64)
    return x.repeat(factor, axis=-2).repeat(factor, axis=-1)


def avg_pool(x: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping block mean over the last two axes; extents must divide."""
    if factor < 1:
        raise ValueError(f"pool factor must be >= 1, got {factor}")
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"avg_pool: extents {h}x{w} not divisible by {factor}")
    return x.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def resize_to(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bring a C x H x W map to ``h`` x ``w`` by integer nearest upsampling or block averaging."""
    _, sh, sw = x.shape
    if (sh, sw) == (h, w):
        return np.array(x, dtype=np.float64)
    if h % sh == 0 and w % sw == 0 and h // sh == w // sw:
        return upsample_nearest(x, h // sh)
    if sh % h == 0 and sw % w == 0 and sh // h == sw // w:
        return avg_pool(x, sh // h)
    raise ShapeError(f"resize_to: no integer ratio between {sh}x{sw} and {h}x{w}")


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("concat_channels: no inputs")
    spatial = {tuple(p.shape[1:]) for p in parts}
    if len(spatial) != 1:
        raise ShapeError(f"concat_channels: spatial extents differ: {sorted(spatial)}")
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def prelu(x, slope):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, np.asarray(slope, dtype=np.float64) * x)


def activate(x, kind: str, slope: float = 0.25) -> np.ndarray:
    if kind == "prelu":
        if not np.all(np.isfinite(slope)):
            raise ValueError("prelu slope must be finite")
        return prelu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(np.asarray(x, dtype=np.float64))
    raise ValueError(f"unknown activation {kind!r}")


def l2_normalize(x, axis: int = -1) -> np.ndarray:
    """Unit-normalize slices along ``axis``; slices with norm <= 1e-12 become zero."""
    x = np.asarray(x, dtype=np.float64)
    norm = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    safe = np.where(norm > NORM_EPS, norm, 1.0)
    return np.where(norm > NORM_EPS, x / safe, 0.0)


def mean_channel(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("mean_channel: empty tensor")
    # shifting by the first channel makes the mean exact when all channels agree
    ref = x[:1]
    return ref + (x - ref).mean(axis=0, keepdims=True)


def mean_all(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("mean_all: empty tensor")
    return float(x.mean())


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"finite_diff_grad: f is not finite near element {i}")
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


# --------------------------------------------------------------------------
# XTEN serialization
# --------------------------------------------------------------------------

TENSOR_MAGIC = b"XTEN"
BUNDLE_MAGIC = b"XBDL"
BUNDLE_VERSION = 1


def write_tensor(fh: BinaryIO, x: np.ndarray) -> None:
    x = np.ascontiguousarray(x, dtype="<f8")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<I", x.ndim))
    fh.write(struct.pack(f"<{x.ndim}Q", *x.shape))
    fh.write(x.tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated data: wanted {n} bytes, got {len(data)}")
    return data


def read_tensor(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4) != TENSOR_MAGIC:
        raise FormatError("bad tensor magic")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
    n = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(fh, 8 * n), dtype="<f8")
    return data.astype(np.float64).reshape(shape)


def save_tensor(path, x: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, x)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def dump_bundle(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    """Serialize a JSON header plus named tensors.

    Layout: ``XBDL``, u32 version, u64 header length, UTF-8 JSON header, then
    one XTEN record per name listed under ``header["tensors"]``.
    """
    header = dict(header)
    header["tensors"] = list(tensors)
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(BUNDLE_MAGIC)
    buf.write(struct.pack("<IQ", BUNDLE_VERSION, len(raw)))
    buf.write(raw)
    for name in header["tensors"]:
        write_tensor(buf, tensors[name])
    return buf.getvalue()


def parse_bundle(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    fh = io.BytesIO(data)
    if _read_exact(fh, 4) != BUNDLE_MAGIC:
        raise FormatError("bad bundle magic")
    version, hlen = struct.unpack("<IQ", _read_exact(fh, 12))
    if version != BUNDLE_VERSION:
        raise FormatError(f"unsupported bundle version {version}")
    try:
        header = json.loads(_read_exact(fh, hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt bundle header: {exc}") from exc
    tensors = {name: read_tensor(fh) for name in header.get("tensors", [])}
    if fh.read(1):
        raise FormatError("trailing bytes after last tensor")
    return header, tensors


def save_bundle(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_bundle(header, tensors))


def load_bundle(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return parse_bundle(fh.read())
