"""Bidirectional triplet losses with fixed or prior-similarity-driven margins.

Score matrices are laid out images x texts with matched pairs on the
diagonal: ``scores[i, j] = S(I_i, T_j)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fusion import ProjectionHeads, heads_backward, heads_forward

log = logging.getLogger(__name__)

STRATEGIES = ("all", "hardest")


@dataclass(frozen=True)
class MarginParams:
    mode: str = "dynamic"  # fixed | dynamic
    alpha: float = 0.2
    gamma: float = 0.6
    beta: float = 5.0
    strategy: str = "hardest"

    def __post_init__(self):
        if self.mode not in ("fixed", "dynamic"):
            raise ValueError(f"margin mode must be fixed or dynamic, got {self.mode!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.mode == "fixed" and not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.mode == "dynamic":
            if not 0.0 < self.gamma < 1.0:
                raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
            if self.beta == 0 or not math.isfinite(self.beta):
                raise ValueError(f"beta must be finite and nonzero, got {self.beta}")


def dynamic_margin(prior, gamma: float, beta: float):
    """gamma * (e^beta - e^(beta S)) / (e^beta - 1), evaluated via expm1."""
    if beta == 0:
        raise ValueError("beta = 0 leaves the margin undefined")
    prior = np.asarray(prior, dtype=np.float64)
    den = math.expm1(beta)
    out = gamma * (den - np.expm1(beta * prior)) / den
    return float(out) if out.ndim == 0 else out


def margin_curve(gamma: float, beta: float, n_samples: int = 101) -> list[tuple[float, float]]:
    if n_samples < 2:
        raise ValueError("margin curve needs at least two samples")
    s = np.linspace(0.0, 1.0, n_samples)
    return list(zip(s.tolist(), np.atleast_1d(dynamic_margin(s, gamma, beta)).tolist()))


def anchor_loss(positive: float, neg_text_scores, neg_image_scores, margin_text, margin_image,
                strategy: str = "all") -> float:
    """Loss for one matched pair: hinge over negative texts plus hinge over negative images."""
    ct = np.maximum(0.0, np.asarray(margin_text) - positive + np.asarray(neg_text_scores, float))
    ci = np.maximum(0.0, np.asarray(margin_image) - positive + np.asarray(neg_image_scores, float))
    if strategy == "hardest":
        return float((ct.max() if ct.size else 0.0) + (ci.max() if ci.size else 0.0))
    return float(ct.sum() + ci.sum())


def triplet_loss(scores, margins, strategy: str = "hardest", positives=None, with_grad: bool = False):
    """Batch triplet loss; ``margins`` is a scalar or an images x texts matrix.

    ``positives[i, j]`` marks pairs that must not act as negatives (the
    diagonal always does).  Hinge kinks get subgradient 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n_img, n_txt = scores.shape
    if n_img != n_txt:
        raise ValueError(f"triplet loss needs a square score matrix, got {scores.shape}")
    B = n_img
    if B < 2:
        log.warning("batch of size %d has no negatives; loss is 0", B)
        return (0.0, np.zeros_like(scores)) if with_grad else 0.0
    pos = np.eye(B, dtype=bool)
    if positives is not None:
        pos |= np.asarray(positives, dtype=bool)
    d = np.diag(scores)
    m = np.broadcast_to(np.asarray(margins, dtype=np.float64), scores.shape)
    # image i anchors, caption j negative (rows); caption j anchors, image i negative (columns)
    cost_s = np.where(pos, 0.0, np.maximum(0.0, m - d[:, None] + scores))
    cost_im = np.where(pos, 0.0, np.maximum(0.0, m - d[None, :] + scores))
    if strategy == "hardest":
        js = cost_s.argmax(axis=1)
        ii = cost_im.argmax(axis=0)
        row = cost_s[np.arange(B), js]
        col = cost_im[ii, np.arange(B)]
        loss = float(row.sum() + col.sum())
        if not with_grad:
            return loss
        grad = np.zeros_like(scores)
        act_r = row > 0
        act_c = col > 0
        np.add.at(grad, (np.arange(B)[act_r], js[act_r]), 1.0)
        np.add.at(grad, (np.arange(B)[act_r], np.arange(B)[act_r]), -1.0)
        np.add.at(grad, (ii[act_c], np.arange(B)[act_c]), 1.0)
        np.add.at(grad, (np.arange(B)[act_c], np.arange(B)[act_c]), -1.0)
        return loss, grad
    if strategy != "all":
        raise ValueError(f"unknown strategy {strategy!r}")
    loss = float(cost_s.sum() + cost_im.sum())
    if not with_grad:
        return loss
    act_s = (cost_s > 0).astype(np.float64)
    act_im = (cost_im > 0).astype(np.float64)
    grad = act_s + act_im
    grad[np.diag_indices(B)] -= act_s.sum(axis=1) + act_im.sum(axis=0)
    return loss, grad


def triplet_fixed(scores, alpha: float, strategy: str = "hardest", positives=None) -> float:
    return triplet_loss(scores, alpha, strategy, positives)


def triplet_dynamic(scores, priors, gamma: float, beta: float, strategy: str = "hardest",
                    positives=None) -> float:
    """``priors[i, j]`` is the prior similarity of caption j to image i's captions."""
    return triplet_loss(scores, dynamic_margin(priors, gamma, beta), strategy, positives)


def batch_margins(params: MarginParams, priors):
    if params.mode == "fixed":
        return params.alpha
    return dynamic_margin(priors, params.gamma, params.beta)


@dataclass
class Batch:
    """Training batch with encoder outputs already guided per (text, image) pair."""

    fv: np.ndarray        # B x D_v
    sv: np.ndarray        # B x B x H   [text, image]
    kv: np.ndarray        # B x B x H
    present: np.ndarray   # B
    priors: np.ndarray    # B x B       [image, text]
    positives: np.ndarray | None = field(default=None)


def loss_and_grads(heads: ProjectionHeads, batch: Batch, params: MarginParams):
    """Loss of the selected margin mode and its exact gradients w.r.t. the projection heads."""
    scores, cache = heads_forward(heads, batch.fv, batch.sv, batch.kv, batch.present)
    margins = batch_margins(params, batch.priors)
    loss, dscores = triplet_loss(scores, margins, params.strategy, batch.positives, with_grad=True)
    return loss, heads_backward(heads, cache, dscores)


def batch_loss(heads: ProjectionHeads, batch: Batch, params: MarginParams) -> float:
    scores, _ = heads_forward(heads, batch.fv, batch.sv, batch.kv, batch.present)
    return triplet_loss(scores, batch_margins(params, batch.priors), params.strategy, batch.positives)


def hinge_gap(heads: ProjectionHeads, batch: Batch, params: MarginParams) -> float:
    """Distance of the current point from the nearest hinge kink or hardest-negative tie."""
    scores, _ = heads_forward(heads, batch.fv, batch.sv, batch.kv, batch.present)
    B = scores.shape[0]
    pos = np.eye(B, dtype=bool)
    if batch.positives is not None:
        pos |= batch.positives
    m = np.broadcast_to(np.asarray(batch_margins(params, batch.priors), float), scores.shape)
    d = np.diag(scores)
    args_s = np.where(pos, np.inf, m - d[:, None] + scores)
    args_im = np.where(pos, np.inf, m - d[None, :] + scores)
    gap = min(np.abs(args_s).min(), np.abs(args_im).min())
    if params.strategy == "hardest":
        for arr in (np.where(pos, -np.inf, args_s), np.where(pos, -np.inf, args_im).T):
            top = np.sort(arr, axis=1)[:, -2:]
            live = top[:, 1] > 0
            if live.any():
                gap = min(gap, float((top[live, 1] - top[live, 0]).min()))
    return float(gap)
