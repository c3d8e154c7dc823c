"""The full matching model: encoders, MVSA, visual guidance, heads and checkpoints."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import pnm
from .fusion import JointEmbedding, ProjectionHeads, VgaParams, dynamic_fuse, heads_forward
from .tensor import FormatError, Rng, dump_bundle, parse_bundle
from .text import BiGru, GruParams, KeywordMlp, Vocabulary, bigru_encode, encode_keywords, tokenize
from .visual import (
    Extractor,
    FeaturePyramid,
    MvsaParams,
    SalientVisual,
    extract_pyramid,
    load_pyramid,
    mvsa,
)

CHECKPOINT_FORMAT = "amfmn-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(FormatError):
    pass


@dataclass
class ModelConfig:
    variant: str = "soft"
    word_dim: int = 300
    hidden: int = 512
    visual_dim: int = 512
    joint_dim: int = 512
    image_size: int = 256
    channels: tuple[int, ...] = (8, 16, 32, 64, 128)
    mvsa_low: int = 16
    mvsa_high: int = 16
    mvsa_info: int = 4
    use_mvsa: bool = True
    use_vga: bool = True
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.image_size % 32:
            raise ValueError(f"image_size must be divisible by 32, got {self.image_size}")

    @property
    def high_extent(self) -> int:
        return self.image_size // 16


@dataclass
class TextInput:
    sentence: np.ndarray   # s^(g)
    keywords: np.ndarray   # k^(g), zeros when absent
    present: bool


@dataclass
class Model:
    config: ModelConfig
    vocab: Vocabulary
    keyword_vocab: list[str]
    table: np.ndarray
    gru: BiGru
    kw_mlp: KeywordMlp
    extractor: Extractor
    mvsa: MvsaParams
    vga: VgaParams
    heads: ProjectionHeads
    _kw_set: set = field(default=None, repr=False)

    @classmethod
    def create(cls, config: ModelConfig, vocab: Vocabulary, keyword_vocab: Sequence[str] = ()) -> "Model":
        root = Rng(config.seed)
        c = config
        ext = Extractor.init(root.fork("extractor"), c.channels, c.visual_dim)
        low_in = sum(c.channels[:3])
        high_in = sum(c.channels[3:])
        mv = MvsaParams.init(root.fork("mvsa"), low_in, high_in, (c.high_extent, c.high_extent),
                             c.visual_dim, c.mvsa_low, c.mvsa_high, c.mvsa_info)
        trng = root.fork("text")
        table = trng.normal((len(vocab), c.word_dim), std=1.0)
        gru = BiGru(GruParams.init(trng, c.word_dim, c.hidden), GruParams.init(trng, c.word_dim, c.hidden))
        mlp = KeywordMlp.init(trng, c.hidden)
        vga = VgaParams.init(root.fork("vga"), c.variant, c.visual_dim, c.hidden)
        heads = ProjectionHeads.init(root.fork("heads"), c.visual_dim, c.hidden, c.joint_dim)
        return cls(c, vocab, sorted(set(keyword_vocab)), table, gru, mlp, ext, mv, vga, heads)

    # ---------------------------------------------------------------- visual

    def pyramid(self, source) -> FeaturePyramid:
        if isinstance(source, FeaturePyramid):
            return source
        if isinstance(source, (str, os.PathLike)):
            if str(source).endswith(".xten"):
                return load_pyramid(source)
            source = pnm.load_image(source)
        image = np.asarray(source, dtype=np.float64)
        size = self.config.image_size
        if image.shape[1:] != (size, size):
            image = pnm.resize_nearest(image, size, size)
        return extract_pyramid(image, self.extractor)

    def visual(self, source) -> SalientVisual:
        p = self.pyramid(source)
        if not self.config.use_mvsa:
            return SalientVisual(mask=np.ones_like(p.global_vec), features=p.global_vec.copy())
        return mvsa(p, self.mvsa)

    def visual_features(self, sources) -> np.ndarray:
        return np.stack([self.visual(s).features for s in sources])

    # ------------------------------------------------------------------ text

    @property
    def keyword_set(self) -> set:
        if self._kw_set is None:
            self._kw_set = set(self.keyword_vocab)
        return self._kw_set

    def sentence_vector(self, tokens: Sequence[str]) -> np.ndarray:
        return bigru_encode(self.vocab.encode(tokens), self.table, self.gru).pooled

    def keyword_vector(self, phrases: Sequence[Sequence[str]]) -> np.ndarray:
        ids = [self.vocab.encode(p) for p in phrases]
        return encode_keywords(ids, self.table, self.gru, self.kw_mlp).pooled

    def prepare_text(self, sentence: str | None = None, keywords: Sequence[str] | None = None,
                     derive_keywords: bool = True) -> TextInput:
        """Resolve the three query modes into sentence and keyword branch inputs.

        Keywords alone are joined into a pseudo-sentence for the sentence branch;
        a sentence alone gets keywords filtered from its own tokens when
        ``derive_keywords`` is set.
        """
        phrases = [tokenize(k) for k in keywords or ()]
        phrases = [p for p in phrases if p]
        if sentence is None or not tokenize(sentence):
            if not phrases:
                raise ValueError("need a sentence or at least one keyword")
            s_tokens = [t for p in phrases for t in p]
        else:
            s_tokens = tokenize(sentence)
        if not phrases and keywords is None and derive_keywords:
            seen = []
            for t in s_tokens:
                if t in self.keyword_set and [t] not in seen:
                    seen.append([t])
            phrases = seen[:5]
        s = self.sentence_vector(s_tokens)
        if not phrases:
            return TextInput(s, np.zeros_like(s), False)
        return TextInput(s, self.keyword_vector(phrases[:5]), True)

    # ---------------------------------------------------------------- fusion

    def guide(self, fv: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Guide T text vectors by I visual vectors -> T x I x H."""
        if not self.config.use_vga:
            return np.broadcast_to(t[:, None, :], (t.shape[0], fv.shape[0], t.shape[1])).copy()
        return self.vga(fv[None, :, :], t[:, None, :])

    def score_matrix(self, fv: np.ndarray, texts: Sequence[TextInput], heads: ProjectionHeads | None = None,
                     chunk: int = 64) -> np.ndarray:
        """Images x texts similarity matrix."""
        heads = heads or self.heads
        out = np.empty((fv.shape[0], len(texts)))
        for lo in range(0, len(texts), chunk):
            part = texts[lo:lo + chunk]
            s = np.stack([t.sentence for t in part])
            k = np.stack([t.keywords for t in part])
            present = np.array([t.present for t in part])
            scores, _ = heads_forward(heads, fv, self.guide(fv, s), self.guide(fv, k), present)
            out[:, lo:lo + len(part)] = scores
        return out

    def encode_pair(self, image, sentence: str | None = None, keywords: Sequence[str] | None = None,
                    derive_keywords: bool = False) -> JointEmbedding:
        fv = self.visual(image).features
        text = self.prepare_text(sentence, keywords, derive_keywords)
        h = self.heads
        s_v = self.guide(fv[None], text.sentence[None])[0, 0]
        k_v = self.guide(fv[None], text.keywords[None])[0, 0]
        fused = dynamic_fuse(h.w_s @ s_v, h.w_k @ k_v, h.gate_w, h.gate_b, text.present)
        return JointEmbedding(image=h.w_v @ fv, text=fused)

    # ----------------------------------------------------------- checkpoint

    def tensors(self) -> dict[str, np.ndarray]:
        t = {"text.embedding": self.table}
        for d, p in (("fwd", self.gru.forward), ("bwd", self.gru.backward)):
            for name in ("w_in", "w_hid", "b_in", "b_hid"):
                t[f"gru.{d}.{name}"] = getattr(p, name)
        for name in ("w1", "b1", "w2", "b2"):
            t[f"kw_mlp.{name}"] = getattr(self.kw_mlp, name)
        for i, (k, b) in enumerate(zip(self.extractor.kernels, self.extractor.biases)):
            t[f"extractor.kernel{i}"] = k
            t[f"extractor.bias{i}"] = b
        t["extractor.slopes"] = np.asarray(self.extractor.slopes, dtype=np.float64)
        t["extractor.proj"] = self.extractor.proj
        t["extractor.proj_bias"] = self.extractor.proj_bias
        for name, val in vars(self.mvsa).items():
            t[f"mvsa.{name}"] = np.asarray(val, dtype=np.float64)
        for name, val in sorted(self.vga.weights.items()):
            t[f"vga.{name}"] = val
        for name, val in self.heads.as_dict().items():
            t[f"heads.{name}"] = val
        return t

    def manifest(self) -> dict:
        cfg = asdict(self.config)
        cfg["channels"] = list(cfg["channels"])
        return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                "variant": self.config.variant, "config": cfg, "seed": self.config.seed,
                "guidance": "pre-projection visual vector",
                "vocab": self.vocab.itos[1:], "keyword_vocab": list(self.keyword_vocab)}

    def to_bytes(self) -> bytes:
        return dump_bundle(self.manifest(), self.tensors())

    def save(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, data: bytes, expect_variant: str | None = None) -> "Model":
        try:
            header, t = parse_bundle(data)
        except FormatError as exc:
            raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not a model checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"checkpoint version {header.get('version')} != {CHECKPOINT_VERSION}")
        if expect_variant is not None and header["variant"] != expect_variant:
            raise CheckpointError(f"checkpoint holds a {header['variant']!r} model, "
                                  f"configuration expects {expect_variant!r}")
        cfg = ModelConfig(**header["config"])
        try:
            gru = BiGru(*(GruParams(*(t[f"gru.{d}.{n}"] for n in ("w_in", "w_hid", "b_in", "b_hid")))
                          for d in ("fwd", "bwd")))
            mlp = KeywordMlp(*(t[f"kw_mlp.{n}"] for n in ("w1", "b1", "w2", "b2")))
            n_st = len(cfg.channels)
            ext = Extractor([t[f"extractor.kernel{i}"] for i in range(n_st)],
                            [t[f"extractor.bias{i}"] for i in range(n_st)],
                            t["extractor.slopes"].tolist(), t["extractor.proj"], t["extractor.proj_bias"])
            mv_fields = {k[len("mvsa."):]: v for k, v in t.items() if k.startswith("mvsa.")}
            mv_fields["low_slope"] = float(np.ravel(mv_fields["low_slope"])[0])
            mv_fields["high_slope"] = float(np.ravel(mv_fields["high_slope"])[0])
            mv = MvsaParams(**mv_fields)
            vga = VgaParams(cfg.variant, {k[4:]: v for k, v in t.items() if k.startswith("vga.")})
            heads = ProjectionHeads(**{n: t[f"heads.{n}"] for n in ProjectionHeads.NAMES})
            table = t["text.embedding"]
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"checkpoint is missing tensor {exc}") from exc
        return cls(cfg, Vocabulary(header["vocab"]), header["keyword_vocab"], table, gru, mlp, ext, mv, vga, heads)

    @classmethod
    def load(cls, path, expect_variant: str | None = None) -> "Model":
        return cls.from_bytes(Path(path).read_bytes(), expect_variant)
