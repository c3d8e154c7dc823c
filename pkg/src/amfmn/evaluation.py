"""Ranking, R@K / mR, and evaluation of a model in the three query modes."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .data import Dataset
from .model import Model, TextInput

log = logging.getLogger(__name__)

MODES = ("sentence", "keywords", "joint")
KS = (1, 5, 10)


def rank(row) -> np.ndarray:
    """Corpus indices by descending score; ties go to the lower index."""
    row = np.asarray(row, dtype=np.float64)
    return np.lexsort((np.arange(row.size), -row))


@dataclass
class SimilarityMatrix:
    scores: np.ndarray              # queries x corpus
    truth: list[set[int]]           # ground-truth corpus indices per query

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("similarity matrix holds non-finite scores")
        if len(self.truth) != self.scores.shape[0]:
            raise ValueError("one ground-truth set per query is required")
        if any(not t for t in self.truth):
            raise ValueError("every query needs at least one ground-truth item")

    def best_ranks(self) -> np.ndarray:
        """1-based rank of the best-placed ground-truth item of each query."""
        out = np.empty(len(self.truth), dtype=np.int64)
        idx = np.arange(self.scores.shape[1])
        for q, (row, truth) in enumerate(zip(self.scores, self.truth)):
            best = None
            for g in truth:
                s = row[g]
                r = int(np.sum(row > s) + np.sum((row == s) & (idx < g))) + 1
                best = r if best is None else min(best, r)
            out[q] = best
        return out


def recall_at_k(sim: SimilarityMatrix, k: int) -> float:
    if k < 1:
        raise ValueError("K must be at least 1")
    n = sim.scores.shape[1]
    if k > n:
        log.warning("K=%d exceeds corpus size %d; clamping", k, n)
        k = n
    return float(np.mean(sim.best_ranks() <= k))


@dataclass
class RecallReport:
    text_r1: float
    text_r5: float
    text_r10: float
    image_r1: float
    image_r5: float
    image_r10: float

    def values(self) -> list[float]:
        return [self.text_r1, self.text_r5, self.text_r10, self.image_r1, self.image_r5, self.image_r10]

    @property
    def mr(self) -> float:
        return mean_recall(self.values())

    def as_dict(self) -> dict:
        d = asdict(self)
        d["mR"] = self.mr
        return d


def mean_recall(values: Sequence[float]) -> float:
    values = list(values)
    if len(values) != 6:
        raise ValueError(f"mR averages six recalls, got {len(values)}")
    return sum(values) / 6.0


def recall_report(scores: np.ndarray, text_owner: Sequence[int]) -> RecallReport:
    """``scores`` is images x texts; ``text_owner[t]`` is the matching image of text t."""
    scores = np.asarray(scores, dtype=np.float64)
    owner = np.asarray(text_owner)
    n_img = scores.shape[0]
    by_image = SimilarityMatrix(scores, [set(np.flatnonzero(owner == i).tolist()) for i in range(n_img)])
    by_text = SimilarityMatrix(scores.T, [{int(o)} for o in owner])
    tr = by_image.best_ranks()
    ir = by_text.best_ranks()
    n_txt, n_im = scores.shape[1], n_img
    return RecallReport(*(float(np.mean(tr <= min(k, n_txt))) for k in KS),
                        *(float(np.mean(ir <= min(k, n_im))) for k in KS))


def mode_queries(model: Model, dataset: Dataset, mode: str) -> tuple[list[TextInput], list[int]]:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    texts, owner = [], []
    for i, e in enumerate(dataset.entries):
        if mode == "keywords":
            if not e.keywords:
                raise ValueError(f"image {e.image_id!r} has no keywords")
            texts.append(model.prepare_text(None, e.keywords))
            owner.append(i)
            continue
        for s in e.sentences:
            if mode == "sentence":
                texts.append(model.prepare_text(s, None, derive_keywords=True))
            else:
                texts.append(model.prepare_text(s, e.keywords))
            owner.append(i)
    return texts, owner


def evaluate(model: Model, dataset: Dataset, mode: str = "sentence", features: np.ndarray | None = None,
             heads=None) -> RecallReport:
    if not len(dataset):
        raise ValueError("cannot evaluate an empty split")
    if features is None:
        features = model.visual_features([dataset.image_path(e) for e in dataset.entries])
    texts, owner = mode_queries(model, dataset, mode)
    return recall_report(model.score_matrix(features, texts, heads), owner)
