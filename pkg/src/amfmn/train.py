"""Mini-batch Adam on the projection heads with a step-decay learning rate."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, prior_matrix
from .evaluation import mode_queries, recall_report
from .fusion import ProjectionHeads
from .loss import Batch, MarginParams, loss_and_grads
from .model import Model
from .tensor import Rng
from .text import tokenize

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    lr: float = 1e-4
    lr_decay: float = 0.7
    decay_every: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    margin: MarginParams = field(default_factory=MarginParams)
    mode: str = "joint"
    w_bleu: float = 0.5
    val_every: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need at least one epoch and batches of two or more")
        if self.lr < 0 or not 0 < self.lr_decay <= 1 or self.decay_every < 1:
            raise ValueError("invalid learning-rate schedule")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.decay_every)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        """Update ``params`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class Encoded:
    """Frozen encoder outputs for a dataset split."""

    features: np.ndarray     # images x D_v
    sentences: np.ndarray    # texts x H
    keywords: np.ndarray     # texts x H
    present: np.ndarray      # texts
    owner: np.ndarray        # texts
    priors: np.ndarray       # texts x images
    texts: list = field(repr=False, default_factory=list)


def encode_split(model: Model, dataset: Dataset, mode: str = "joint", w_bleu: float = 0.5,
                 features: np.ndarray | None = None) -> Encoded:
    if not len(dataset):
        raise ValueError("cannot train on an empty dataset")
    if features is None:
        features = model.visual_features([dataset.image_path(e) for e in dataset.entries])
    texts, owner = mode_queries(model, dataset, mode)
    if mode == "keywords":
        raw = [[t for k in e.keywords for t in tokenize(k)] for e in dataset.entries]
    else:
        raw = [tokenize(s) for e in dataset.entries for s in e.sentences]
    return Encoded(
        features=features,
        sentences=np.stack([t.sentence for t in texts]),
        keywords=np.stack([t.keywords for t in texts]),
        present=np.array([t.present for t in texts]),
        owner=np.asarray(owner),
        priors=prior_matrix(raw, dataset, w_bleu),
        texts=texts,
    )


def epoch_batches(owner: np.ndarray, batch_size: int, rng: Rng) -> list[np.ndarray]:
    """Text-index batches in which no image appears twice."""
    n_img = int(owner.max()) + 1
    by_image = [np.flatnonzero(owner == i) for i in range(n_img)]
    by_image = [ids[rng.permutation(len(ids))] for ids in by_image]
    rounds = max(len(ids) for ids in by_image)
    batches = []
    for r in rng.permutation(rounds):
        imgs = [i for i in range(n_img) if len(by_image[i]) > r]
        imgs = [imgs[j] for j in rng.permutation(len(imgs))]
        for lo in range(0, len(imgs), batch_size):
            chunk = imgs[lo:lo + batch_size]
            if len(chunk) >= 2:
                batches.append(np.array([by_image[i][r] for i in chunk]))
    return batches


def make_batch(model: Model, enc: Encoded, text_ids: np.ndarray) -> Batch:
    imgs = enc.owner[text_ids]
    fv = enc.features[imgs]
    return Batch(
        fv=fv,
        sv=model.guide(fv, enc.sentences[text_ids]),
        kv=model.guide(fv, enc.keywords[text_ids]),
        present=enc.present[text_ids],
        priors=enc.priors[np.ix_(text_ids, imgs)].T,
        positives=imgs[:, None] == imgs[None, :],
    )


@dataclass
class TrainResult:
    heads: ProjectionHeads
    history: list[dict]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "lr", "train_loss", "val_mR"])
            for row in self.history:
                val = "" if row["val_mR"] is None else repr(row["val_mR"])
                w.writerow([row["epoch"], repr(row["lr"]), repr(row["train_loss"]), val])
        return path


def train(config: TrainConfig, dataset: Dataset, model: Model, val: Dataset | None = None,
          encoded: Encoded | None = None, val_encoded: Encoded | None = None) -> TrainResult:
    """Fit ``model.heads`` in place; encoders stay at their seeded values."""
    enc = encoded or encode_split(model, dataset, config.mode, config.w_bleu)
    if val is not None and val_encoded is None and len(val):
        val_encoded = encode_split(model, val, config.mode, config.w_bleu)
    params = model.heads.as_dict()
    opt = Adam(params, config.beta1, config.beta2, config.eps)
    rng = Rng(config.seed).fork("batches")
    history = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        losses = []
        for ids in epoch_batches(enc.owner, config.batch_size, rng):
            loss, grads = loss_and_grads(model.heads, make_batch(model, enc, ids), config.margin)
            opt.step(params, grads, lr)
            losses.append(loss)
        train_loss = float(np.mean(losses)) if losses else 0.0
        if not np.isfinite(train_loss):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        val_mr = None
        if val_encoded is not None and config.val_every and (epoch + 1) % config.val_every == 0:
            val_mr = recall_report(model.score_matrix(val_encoded.features, val_encoded.texts),
                                   val_encoded.owner).mr
        history.append({"epoch": epoch + 1, "lr": lr, "train_loss": train_loss, "val_mR": val_mr})
        log.info("epoch %d lr %.3g loss %.5f val mR %s", epoch + 1, lr, train_loss, val_mr)
    return TrainResult(model.heads, history)
