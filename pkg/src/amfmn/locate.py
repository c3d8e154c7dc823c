"""Text-driven localization: multiscale tiling, tile scoring, pixel aggregation, median filtering."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import pnm

log = logging.getLogger(__name__)

DEFAULT_SCALES = (128, 256, 512)
ROUNDS = ("base", "offset", "offset_x", "offset_y")


@dataclass(frozen=True)
class TileSpec:
    scale: int
    x: int
    y: int
    round: str = "base"

    @property
    def origin(self) -> tuple[int, int]:
        return self.x, self.y


@dataclass
class ProbabilityMap:
    values: np.ndarray   # H x W
    counts: np.ndarray   # H x W coverage

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _grid(start: int, extent: int, scale: int) -> range:
    """Tile origins start, start+scale, ... whose tiles end inside ``extent``."""
    if start + scale > extent:
        return range(0)
    return range(start, extent - scale + 1, scale)


def tile_multiscale(width: int, height: int, scales: Sequence[int] = DEFAULT_SCALES,
                    extra_rounds: bool = False) -> list[TileSpec]:
    """Fully contained tiles per scale: a base grid and a half-tile diagonal offset grid.

    ``extra_rounds`` adds the x-only and y-only half-offset grids.
    """
    scales = sorted({int(s) for s in scales})
    if not scales or scales[0] < 2:
        raise ValueError(f"scales must be integers >= 2, got {scales}")
    tiles = []
    for s in scales:
        h = s // 2
        rounds = [("base", 0, 0), ("offset", h, h)]
        if extra_rounds:
            rounds += [("offset_x", h, 0), ("offset_y", 0, h)]
        for name, ox, oy in rounds:
            for y in _grid(oy, height, s):
                for x in _grid(ox, width, s):
                    tiles.append(TileSpec(s, x, y, name))
    if not tiles:
        log.warning("scene %dx%d is smaller than every scale %s; no tiles", width, height, scales)
    return tiles


def crop(scene: np.ndarray, tile: TileSpec) -> np.ndarray:
    """C x s x s window of a C x H x W scene."""
    _, h, w = scene.shape
    if tile.x < 0 or tile.y < 0 or tile.x + tile.scale > w or tile.y + tile.scale > h:
        raise ValueError(f"tile {tile} exceeds the {w}x{h} scene")
    return scene[:, tile.y:tile.y + tile.scale, tile.x:tile.x + tile.scale]


def score_tiles(scene: np.ndarray, tiles: Sequence[TileSpec], model, text: str | None = None,
                keywords: Sequence[str] | None = None) -> np.ndarray:
    """Similarity of each tile to the query, mapped from [-1, 1] to [0, 1]."""
    query = model.prepare_text(text, keywords, derive_keywords=keywords is None)
    size = model.config.image_size
    feats = []
    for i, t in enumerate(tiles):
        try:
            feats.append(model.visual(pnm.resize_nearest(crop(scene, t), size, size)).features)
        except Exception as exc:
            raise RuntimeError(f"encoding tile {i} {t} failed: {exc}") from exc
    if not feats:
        return np.zeros(0)
    raw = model.score_matrix(np.stack(feats), [query])[:, 0]
    return (raw + 1.0) / 2.0


def aggregate_map(tiles: Sequence[TileSpec], scores, width: int, height: int,
                  scale_weights: dict[int, float] | None = None) -> ProbabilityMap:
    """Per-pixel (weighted) mean of the scores of all covering tiles; uncovered pixels stay 0."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(tiles),):
        raise ValueError(f"{len(tiles)} tiles but {scores.shape} scores")
    total = np.zeros((height, width))
    weight = np.zeros((height, width))
    counts = np.zeros((height, width), dtype=np.int64)
    for t, s in zip(tiles, scores):
        wgt = 1.0 if scale_weights is None else float(scale_weights.get(t.scale, 1.0))
        win = (slice(t.y, t.y + t.scale), slice(t.x, t.x + t.scale))
        total[win] += wgt * s
        weight[win] += wgt
        counts[win] += 1
    values = np.divide(total, weight, out=np.zeros_like(total), where=weight > 0)
    return ProbabilityMap(values, counts)


def median_filter(field, k: int = 3, passes: int = 1) -> np.ndarray:
    """Median over the k x k neighbourhood clipped at the borders.

    Even-sized clipped windows take the lower middle value, so every output
    is one of the input values.
    """
    if isinstance(field, ProbabilityMap):
        field = field.values
    if k < 3 or k % 2 == 0:
        raise ValueError(f"median window must be odd and >= 3, got {k}")
    out = np.asarray(field, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"median filter expects a 2-D field, got shape {out.shape}")
    r = k // 2
    h, w = out.shape
    for _ in range(passes):
        src = out
        out = np.empty_like(src)
        if h > 2 * r and w > 2 * r:
            windows = np.lib.stride_tricks.sliding_window_view(src, (k, k)).reshape(h - 2 * r, w - 2 * r, -1)
            out[r:h - r, r:w - r] = np.sort(windows, axis=-1)[..., (k * k - 1) // 2]
        for y in range(h):
            xs = range(w) if y < r or y >= h - r else [*range(min(r, w)), *range(max(r, w - r), w)]
            for x in xs:
                win = np.sort(src[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1], axis=None)
                out[y, x] = win[(win.size - 1) // 2]
    return out


def emit_heatmap(values: np.ndarray, path, meta: dict | None = None) -> tuple[Path, Path]:
    """Write an 8-bit PGM scaled from [0, 1] plus a JSON sidecar next to it."""
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("heatmap holds non-finite values")
    raster = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    sidecar = path.with_suffix(".json")
    try:
        pnm.write_pnm(path, raster)
        info = dict(meta or {})
        info.update(height=int(values.shape[0]), width=int(values.shape[1]),
                    value_range=[0.0, 1.0], encoding="8-bit linear")
        sidecar.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write heatmap {path}: {exc}") from exc
    return path, sidecar


def read_scene(path) -> np.ndarray:
    """PGM or PPM scene -> 3 x H x W float image."""
    return pnm.load_image(path)


def locate(scene: np.ndarray, model, text: str | None = None, keywords: Sequence[str] | None = None,
           scales: Sequence[int] = DEFAULT_SCALES, median: int = 3,
           extra_rounds: bool = False) -> tuple[np.ndarray, dict]:
    """Filtered probability map for a query over a scene, plus run metadata."""
    _, h, w = scene.shape
    tiles = tile_multiscale(w, h, scales, extra_rounds)
    scores = score_tiles(scene, tiles, model, text, keywords)
    pmap = aggregate_map(tiles, scores, w, h)
    values = median_filter(pmap.values, median) if median else pmap.values
    per_scale = {str(s): sum(t.scale == s for t in tiles) for s in sorted(set(scales))}
    meta = {"scales": sorted(int(s) for s in set(scales)), "tiles": per_scale,
            "extra_rounds": extra_rounds, "median_window": median, "median_passes": 1 if median else 0,
            "score_rescale": "(s + 1) / 2", "covered_pixels": int((pmap.counts > 0).sum())}
    return values, meta
