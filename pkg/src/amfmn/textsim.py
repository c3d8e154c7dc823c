"""BLEU / METEOR scorers and the prior text similarity that drives the dynamic margin."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

Tokens = Sequence[str]


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Tokens, references: Sequence[Tokens], max_n: int = 4) -> float:
    """Multi-reference sentence BLEU with add-1 smoothing of higher orders.

    An order n >= 2 with no clipped matches contributes (0 + 1) / (count + 1)
    provided unigrams matched; with no unigram match the score is 0.
    """
    if not candidate:
        return 0.0
    if not references:
        raise ValueError("bleu needs at least one reference")
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        total = sum(cand.values())
        max_ref: Counter = Counter()
        for ref in references:
            for gram, cnt in _ngrams(ref, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        matched = sum(min(cnt, max_ref[gram]) for gram, cnt in cand.items())
        if n == 1 and matched == 0:
            return 0.0
        if matched == 0:
            p = 1.0 / (total + 1)
        else:
            p = matched / total
        log_sum += math.log(p)
    c = len(candidate)
    r = min((len(ref) for ref in references), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return min(1.0, bp * math.exp(log_sum / max_n))


def _align(candidate: Tokens, reference: Tokens) -> list[tuple[int, int]]:
    used = [False] * len(reference)
    pairs = []
    for i, tok in enumerate(candidate):
        for j, ref_tok in enumerate(reference):
            if not used[j] and ref_tok == tok:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def meteor(candidate: Tokens, reference: Tokens) -> float:
    """Exact-match METEOR: Fmean = 10PR/(R+9P), penalty 0.5 (chunks/m)^3."""
    if not candidate or not reference:
        return 0.0
    pairs = _align(candidate, reference)
    m = len(pairs)
    if m == 0:
        return 0.0
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    precision = m / len(candidate)
    recall = m / len(reference)
    fmean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1.0 - penalty)


def prior_similarity(text: Tokens, refs: Sequence[Tokens], w_bleu: float = 0.5) -> float:
    """Weighted BLEU (all refs jointly) plus METEOR (best single ref), clamped to [0, 1].

    A text identical to one of the references scores exactly 1.
    """
    if not refs:
        raise ValueError("prior_similarity needs the reference captions of the image")
    if not 0.0 <= w_bleu <= 1.0:
        raise ValueError(f"w_bleu must lie in [0, 1], got {w_bleu}")
    text = list(text)
    if any(list(r) == text for r in refs) and text:
        return 1.0
    s = w_bleu * bleu(text, refs) + (1.0 - w_bleu) * max(meteor(text, r) for r in refs)
    return min(1.0, max(0.0, s))
