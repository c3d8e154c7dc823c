"""Feature pyramid acquisition and multiscale visual self-attention (MVSA).

The backbone is a seeded five-stage toy CNN (3x3 conv, PReLU, 2x2 average
pool per stage).  Real backbone outputs can be plugged in as XTEN bundles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    FormatError,
    Rng,
    ShapeError,
    avg_pool,
    concat_channels,
    conv2d,
    l2_normalize,
    load_bundle,
    mean_channel,
    prelu,
    resize_to,
    save_bundle,
    sigmoid,
)

N_STAGES = 5


@dataclass
class FeaturePyramid:
    stages: list[np.ndarray]  # C_m x H_m x W_m, halving extents
    global_vec: np.ndarray    # D

    def __post_init__(self):
        if len(self.stages) != N_STAGES:
            raise ShapeError(f"pyramid needs {N_STAGES} stages, got {len(self.stages)}")
        for a, b in zip(self.stages, self.stages[1:]):
            if b.shape[1] != -(-a.shape[1] // 2) or b.shape[2] != -(-a.shape[2] // 2):
                raise ShapeError(f"stage extents must halve: {a.shape} -> {b.shape}")


@dataclass
class Extractor:
    kernels: list[np.ndarray]
    biases: list[np.ndarray]
    slopes: list[float]
    proj: np.ndarray       # D x C5
    proj_bias: np.ndarray  # D

    @classmethod
    def init(cls, rng: Rng, channels=(8, 16, 32, 64, 128), dim: int = 512) -> "Extractor":
        kernels, biases = [], []
        c_in = 3
        for c in channels:
            kernels.append(rng.normal((c, c_in, 3, 3), std=np.sqrt(2.0 / (9 * c_in))))
            biases.append(np.zeros(c))
            c_in = c
        proj = rng.normal((dim, c_in), std=1.0 / np.sqrt(c_in))
        return cls(kernels, biases, [0.25] * len(channels), proj, np.zeros(dim))

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(k.shape[0] for k in self.kernels)


def extract_pyramid(image: np.ndarray, ext: Extractor) -> FeaturePyramid:
    """Run the toy backbone on a 3 x H x W image (H, W divisible by 32)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected a 3 x H x W image, got {image.shape}")
    if image.shape[1] % 32 or image.shape[2] % 32:
        raise ShapeError(f"image extents {image.shape[1:]} must be divisible by 32")
    stages = []
    x = image
    for k, b, a in zip(ext.kernels, ext.biases, ext.slopes):
        x = avg_pool(prelu(conv2d(x, k, b), a), 2)
        stages.append(x)
    pooled = x.mean(axis=(1, 2))
    return FeaturePyramid(stages, ext.proj @ pooled + ext.proj_bias)


def save_pyramid(path, p: FeaturePyramid) -> None:
    header = {"kind": "pyramid", "stages": [list(s.shape) for s in p.stages],
              "global": [int(p.global_vec.shape[0])]}
    tensors = {f"stage{i + 1}": s for i, s in enumerate(p.stages)}
    tensors["global"] = p.global_vec
    save_bundle(path, header, tensors)


def load_pyramid(path) -> FeaturePyramid:
    header, tensors = load_bundle(path)
    if header.get("kind") != "pyramid":
        raise FormatError(f"{path}: not a feature pyramid bundle")
    try:
        stages = [tensors[f"stage{i + 1}"] for i in range(N_STAGES)]
        g = tensors["global"]
    except KeyError as exc:
        raise FormatError(f"{path}: missing tensor {exc}") from exc
    for s, shape in zip(stages, header["stages"]):
        if list(s.shape) != shape:
            raise FormatError(f"{path}: stage shape {s.shape} disagrees with header {shape}")
    return FeaturePyramid(stages, g)


def build_low_high(p: FeaturePyramid) -> tuple[np.ndarray, np.ndarray]:
    """Low-level map from stages 1-3 at stage-3 extent, high-level from 4-5 at stage-4 extent.

    Larger stages are brought down by block averaging, smaller ones up by
    nearest replication.
    """
    h3, w3 = p.stages[2].shape[1:]
    h4, w4 = p.stages[3].shape[1:]
    low = concat_channels([resize_to(s, h3, w3) for s in p.stages[:3]])
    high = concat_channels([resize_to(s, h4, w4) for s in p.stages[3:]])
    return low, high


@dataclass
class MvsaParams:
    low_kernels: np.ndarray    # c_low x C_l x 3 x 3
    low_bias: np.ndarray
    high_kernels: np.ndarray   # c_high x C_h x 1 x 1
    high_bias: np.ndarray
    info_kernels: np.ndarray   # c_info x (c_low + c_high) x 1 x 1
    info_bias: np.ndarray
    gate_kernels: np.ndarray   # c_info x (c_low + c_high) x 1 x 1
    gate_bias: np.ndarray
    mask_w: np.ndarray         # D x (c_info * h * w)
    mask_b: np.ndarray         # D
    low_slope: float = 0.25
    high_slope: float = 0.25

    @classmethod
    def init(cls, rng: Rng, low_in: int, high_in: int, spatial: tuple[int, int], dim: int,
             c_low: int = 16, c_high: int = 16, c_info: int = 4) -> "MvsaParams":
        joint = c_low + c_high
        flat = c_info * spatial[0] * spatial[1]
        return cls(
            low_kernels=rng.normal((c_low, low_in, 3, 3), std=np.sqrt(2.0 / (9 * low_in))),
            low_bias=np.zeros(c_low),
            high_kernels=rng.normal((c_high, high_in, 1, 1), std=np.sqrt(2.0 / high_in)),
            high_bias=np.zeros(c_high),
            info_kernels=rng.normal((c_info, joint, 1, 1), std=np.sqrt(1.0 / joint)),
            info_bias=np.zeros(c_info),
            gate_kernels=rng.normal((c_info, joint, 1, 1), std=np.sqrt(1.0 / joint)),
            gate_bias=np.zeros(c_info),
            mask_w=rng.normal((dim, flat), std=np.sqrt(1.0 / flat)),
            mask_b=np.zeros(dim),
        )


def multiscale_fuse(low: np.ndarray, high: np.ndarray, m: MvsaParams) -> np.ndarray:
    """Joint map: per-pixel channel mean of ``high`` added onto Cat(low', high')."""
    low_t = conv2d(low, m.low_kernels, m.low_bias)
    if low_t.shape[1:] != high.shape[1:]:
        low_t = avg_pool(low_t, low_t.shape[1] // high.shape[1])
    low_t = prelu(low_t, m.low_slope)
    high_t = prelu(conv2d(high, m.high_kernels, m.high_bias), m.high_slope)
    assert low_t.shape[1:] == high_t.shape[1:], (low_t.shape, high_t.shape)
    return mean_channel(high) + concat_channels([low_t, high_t])


def redundancy_filter(joint: np.ndarray, m: MvsaParams) -> np.ndarray:
    normed = l2_normalize(joint, axis=0)
    info = conv2d(normed, m.info_kernels, m.info_bias)
    gate = sigmoid(conv2d(normed, m.gate_kernels, m.gate_bias))
    return info * gate


@dataclass
class SalientVisual:
    mask: np.ndarray
    features: np.ndarray  # F_v
    field: np.ndarray = field(repr=False, default=None)  # gated spatial map before flattening


def salient_mask(filtered: np.ndarray, global_vec: np.ndarray, m: MvsaParams) -> SalientVisual:
    flat = filtered.reshape(-1)
    if m.mask_w.shape[1] != flat.size or m.mask_w.shape[0] != global_vec.shape[0]:
        raise ShapeError(f"mask projection {m.mask_w.shape} cannot map {flat.size} values "
                         f"to a {global_vec.shape[0]}-vector")
    mask = sigmoid(m.mask_w @ flat + m.mask_b)
    return SalientVisual(mask=mask, features=global_vec * mask, field=filtered)


def mvsa(p: FeaturePyramid, m: MvsaParams) -> SalientVisual:
    low, high = build_low_high(p)
    return salient_mask(redundancy_filter(multiscale_fuse(low, high, m), m), p.global_vec, m)
