"""Tokenization, vocabulary and the bidirectional-GRU text encoders."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .tensor import Rng, sigmoid

UNK = "<unk>"
_PUNCT = re.compile(r"[^\w\s]|_", re.UNICODE)


class EmptyTextError(ValueError):
    pass


class AbsentKeywordsError(ValueError):
    """No keyword phrases were supplied; the caller picks a fallback."""


def tokenize(raw: str) -> list[str]:
    """Lowercase, replace punctuation with spaces, split on whitespace."""
    return _PUNCT.sub(" ", raw.lower()).split()


class Vocabulary:
    """Word/index map with index 0 reserved for unknown words."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos = [UNK]
        self.stoi = {UNK: 0}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        idx = self.stoi.get(word)
        if idx is None:
            idx = len(self.itos)
            self.stoi[word] = idx
            self.itos.append(word)
        return idx

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for text in texts:
            for tok in tokenize(text):
                vocab.add(tok)
        return vocab

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, 0) for t in tokens]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for word in self.itos[1:]:
                fh.write(word + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))


@dataclass
class GruParams:
    """One GRU direction. Gate rows are stacked as [update; reset; candidate]."""

    w_in: np.ndarray   # 3H x E
    w_hid: np.ndarray  # 3H x H
    b_in: np.ndarray   # 3H
    b_hid: np.ndarray  # 3H

    @property
    def hidden(self) -> int:
        return self.w_hid.shape[1]

    @classmethod
    def init(cls, rng: Rng, embed_dim: int, hidden: int) -> "GruParams":
        scale = 1.0 / np.sqrt(hidden)
        return cls(
            w_in=rng.uniform((3 * hidden, embed_dim), -scale, scale),
            w_hid=rng.uniform((3 * hidden, hidden), -scale, scale),
            b_in=np.zeros(3 * hidden),
            b_hid=np.zeros(3 * hidden),
        )

    @classmethod
    def zeros(cls, embed_dim: int, hidden: int) -> "GruParams":
        return cls(np.zeros((3 * hidden, embed_dim)), np.zeros((3 * hidden, hidden)),
                   np.zeros(3 * hidden), np.zeros(3 * hidden))


def gru_step(x: np.ndarray, h: np.ndarray, p: GruParams) -> np.ndarray:
    """Standard GRU cell, hidden-side bias inside the reset product.

    z = sig(Wz x + bz + Uz h + cz), r = sig(Wr x + br + Ur h + cr),
    n = tanh(Wn x + bn + r * (Un h + cn)), h' = (1 - z) * n + z * h
    """
    H = p.hidden
    gi = p.w_in @ x + p.b_in
    gh = p.w_hid @ h + p.b_hid
    z = sigmoid(gi[:H] + gh[:H])
    r = sigmoid(gi[H:2 * H] + gh[H:2 * H])
    n = np.tanh(gi[2 * H:] + r * gh[2 * H:])
    return (1.0 - z) * n + z * h


@dataclass
class TextEncoding:
    steps: np.ndarray   # T x H per-step states
    pooled: np.ndarray  # H


@dataclass
class BiGru:
    forward: GruParams
    backward: GruParams

    @property
    def hidden(self) -> int:
        return self.forward.hidden


def bigru_encode(ids: Sequence[int], table: np.ndarray, gru: BiGru) -> TextEncoding:
    """Encode word indices; s_t averages both directions, pooled is the step mean."""
    if len(ids) == 0:
        raise EmptyTextError("cannot encode an empty token sequence")
    emb = table[np.asarray(ids, dtype=np.int64)]
    T, H = len(ids), gru.hidden
    hf = np.zeros((T, H))
    hb = np.zeros((T, H))
    h = np.zeros(H)
    for t in range(T):
        h = gru_step(emb[t], h, gru.forward)
        hf[t] = h
    h = np.zeros(H)
    for t in range(T - 1, -1, -1):
        h = gru_step(emb[t], h, gru.backward)
        hb[t] = h
    steps = (hf + hb) / 2.0
    return TextEncoding(steps=steps, pooled=steps.mean(axis=0))


@dataclass
class KeywordMlp:
    """k = W2 tanh(W1 x + b1) + b2."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.w2 @ np.tanh(self.w1 @ x + self.b1) + self.b2

    @classmethod
    def init(cls, rng: Rng, dim: int) -> "KeywordMlp":
        scale = 1.0 / np.sqrt(dim)
        return cls(rng.uniform((dim, dim), -scale, scale), np.zeros(dim),
                   rng.uniform((dim, dim), -scale, scale), np.zeros(dim))


def encode_keywords(phrases: Sequence[Sequence[int]], table: np.ndarray, gru: BiGru,
                    mlp: KeywordMlp) -> TextEncoding:
    """Run each phrase through the shared GRU, mean-pool the phrase vectors, apply the MLP."""
    phrases = [p for p in phrases if len(p)]
    if not phrases:
        raise AbsentKeywordsError("no keyword phrases")
    k = np.stack([bigru_encode(p, table, gru).pooled for p in phrases])
    return TextEncoding(steps=k, pooled=mlp(k.mean(axis=0)))
