"""Dataset records (JSONL), quality diagnostics, splits and the synthetic fixture."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .pnm import write_pnm
from .tensor import Rng
from .text import tokenize
from .textsim import prior_similarity

DATASET_FILE = "dataset.jsonl"
N_SENTENCES = 5
MAX_KEYWORDS = 5

# category names of a 32-class remote-sensing benchmark
CATEGORIES = (
    "industrial", "stadium", "storagetanks", "square", "playground", "river", "viaduct", "pond",
    "port", "farmland", "resort", "school", "park", "denseresidential", "sparseresidential",
    "bridge", "beach", "commercial", "center", "parking", "airport", "church", "mediumresidential",
    "meadow", "desert", "forest", "railwaystation", "mountain", "baseballfield", "intersection",
    "bareland", "boat",
)


class DatasetError(ValueError):
    pass


@dataclass
class DatasetEntry:
    image_id: str
    image: str
    category: str
    sentences: list[str]
    keywords: list[str]

    def validate(self) -> None:
        if not self.image_id:
            raise DatasetError("empty image id")
        if len(self.sentences) != N_SENTENCES:
            raise DatasetError(f"image {self.image_id!r} has {len(self.sentences)} sentences, "
                               f"expected {N_SENTENCES}")
        if not 1 <= len(self.keywords) <= MAX_KEYWORDS:
            raise DatasetError(f"image {self.image_id!r} has {len(self.keywords)} keywords, "
                               f"expected 1 to {MAX_KEYWORDS}")
        if not self.category:
            raise DatasetError(f"image {self.image_id!r} has an empty category")


@dataclass
class Dataset:
    entries: list[DatasetEntry]
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.entries)

    def image_path(self, entry: DatasetEntry) -> Path:
        return self.root / entry.image

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset([self.entries[i] for i in indices], self.root)

    def captions(self) -> list[tuple[int, str]]:
        """(image index, sentence) for every caption, image-major."""
        return [(i, s) for i, e in enumerate(self.entries) for s in e.sentences]

    def keyword_vocab(self) -> list[str]:
        return sorted({t for e in self.entries for k in e.keywords for t in tokenize(k)})


def _resolve(path) -> Path:
    path = Path(path)
    return path / DATASET_FILE if path.is_dir() else path


def load_dataset(path) -> Dataset:
    path = _resolve(path)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                entry = DatasetEntry(
                    image_id=str(raw["image_id"]), image=str(raw["image"]),
                    category=str(raw.get("category", "")), sentences=list(raw["sentences"]),
                    keywords=list(raw.get("keywords", [])),
                )
                entry.validate()
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            except KeyError as exc:
                raise DatasetError(f"{path}:{lineno}: missing field {exc}") from exc
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            entries.append(entry)
    return Dataset(entries, path.parent)


def save_dataset(dataset: Dataset | Sequence[DatasetEntry], path) -> Path:
    entries = dataset.entries if isinstance(dataset, Dataset) else dataset
    path = Path(path)
    if path.is_dir():
        path = path / DATASET_FILE
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(json.dumps(asdict(e), ensure_ascii=False, sort_keys=True) + "\n")
    return path


def split_indices(n: int, seed: int, fractions=(0.8, 0.1, 0.1)) -> dict[str, list[int]]:
    order = Rng(seed).fork("split").permutation(n).tolist()
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {"train": sorted(order[:n_train]), "val": sorted(order[n_train:n_train + n_val]),
            "test": sorted(order[n_train + n_val:])}


def split_hash(split: dict[str, list[int]]) -> str:
    return hashlib.sha256(json.dumps(split, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- diagnostics

def diversity_score(dataset: Dataset) -> float:
    """Distinct sentences (compared after tokenization) per image."""
    if not len(dataset):
        raise DatasetError("diversity of an empty dataset")
    unique = {tuple(tokenize(s)) for e in dataset.entries for s in e.sentences}
    return len(unique) / len(dataset)


def prior_matrix(texts: Sequence[Sequence[str]], dataset: Dataset, w_bleu: float = 0.5) -> np.ndarray:
    """Prior similarity of every text against every image's captions -> texts x images."""
    refs = [[tokenize(s) for s in e.sentences] for e in dataset.entries]
    out = np.empty((len(texts), len(refs)))
    for i, t in enumerate(texts):
        for j, r in enumerate(refs):
            out[i, j] = prior_similarity(t, r, w_bleu)
    return out


@dataclass
class SimilarityDiagnostic:
    matrix: np.ndarray      # sampled captions x images
    own_image: list[int]    # image index of each row
    average: float          # mean off-diagonal similarity
    captions: list[int] = field(default_factory=list)   # caption index of each row


def similarity_diagnostic(dataset: Dataset, sample: int | None = None, seed: int = 0,
                          w_bleu: float = 0.5) -> SimilarityDiagnostic:
    caps = dataset.captions()
    if sample is None or sample >= len(caps):
        chosen = list(range(len(caps)))
    else:
        if sample < 1:
            raise ValueError("sample size must be positive")
        chosen = sorted(Rng(seed).fork("diagnose").permutation(len(caps))[:sample].tolist())
    chosen.sort(key=lambda c: (caps[c][0], c))
    own = [caps[c][0] for c in chosen]
    mat = prior_matrix([tokenize(caps[c][1]) for c in chosen], dataset, w_bleu)
    off = np.ones_like(mat, dtype=bool)
    off[np.arange(len(own)), own] = False
    average = float(mat[off].mean()) if off.any() else 0.0
    return SimilarityDiagnostic(mat, own, average, chosen)


def diagnostics_report(dataset: Dataset, sample: int | None = 200, seed: int = 0) -> dict:
    diag = similarity_diagnostic(dataset, sample, seed)
    vocab = {t for e in dataset.entries for s in e.sentences for t in tokenize(s)}
    lengths = [len(tokenize(s)) for e in dataset.entries for s in e.sentences]
    return {
        "images": len(dataset),
        "captions": len(lengths),
        "diversity_score": diversity_score(dataset),
        "average_similarity": diag.average,
        "average_sentence_length": float(np.mean(lengths)),
        "vocabulary_size": len(vocab),
        "keywords": sum(len(e.keywords) for e in dataset.entries),
        "category_histogram": dict(sorted(Counter(e.category for e in dataset.entries).items())),
        "similarity_rows": len(diag.own_image),
        "sample_seed": seed,
    }


# ---------------------------------------------------------------- fixture

BACKGROUNDS = {"green": (70, 130, 60), "gray": (125, 125, 120), "sandy": (200, 175, 120), "dark": (30, 45, 70)}
FIRST_COLORS = {"red": (210, 40, 40), "orange": (240, 140, 20), "yellow": (235, 225, 40), "pink": (240, 130, 190)}
SECOND_COLORS = {"blue": (40, 70, 220), "purple": (130, 50, 170), "cyan": (60, 210, 220), "white": (245, 245, 245)}
FIRST_SHAPES = ("square", "ring")
SECOND_SHAPES = ("triangle", "grid")
BG_CATEGORIES = {
    "green": ("meadow", "farmland", "park", "forest"),
    "gray": ("industrial", "parking", "commercial", "square"),
    "sandy": ("desert", "bareland", "beach"),
    "dark": ("river", "pond", "port"),
}

FULL_TEMPLATES = (
    "a {c1} {s1} is next to a {c2} {s2} on {bg} ground",
    "there is a {c2} {s2} beside a {c1} {s1} in a {bg} area",
    "{bg} land with a {c1} {s1} and a {c2} {s2}",
    "the {c1} {s1} lies {rel} the {c2} {s2} over {bg} terrain",
    "a {c2} {s2} and a {c1} {s1} sit on the {bg} surface",
)
PARTIAL_TEMPLATES = (
    "a {c1} {s1} on {bg} ground",
    "there is a {s2} near a {s1}",
    "a {c2} {s2} in a {bg} area",
    "{bg} scene with two objects",
    "some buildings on {bg} ground",
    "a {s1} and a {s2} are close",
)


def _draw(canvas: np.ndarray, shape: str, color, cy: int, cx: int, r: int) -> None:
    h, w = canvas.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    if shape == "square":
        m = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    elif shape == "ring":
        d2 = dy * dy + dx * dx
        m = (d2 <= r * r) & (d2 >= (r * 2 // 3) ** 2)
    elif shape == "triangle":
        m = (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2)
    else:  # grid: checkerboard of colour and black cells
        cell = max(2, r // 4)
        box = (np.abs(dy) <= r) & (np.abs(dx) <= r)
        canvas[box] = (15, 15, 15)
        m = box & (((yy // cell) + (xx // cell)) % 2 == 0)
    canvas[m] = color


def render_scene(attrs: dict, rng: Rng, size: int = 256) -> np.ndarray:
    """H x W x 3 uint8 raster of two shapes on a textured background."""
    canvas = np.empty((size, size, 3))
    canvas[:] = BACKGROUNDS[attrs["bg"]]
    canvas += rng.normal((size // 8, size // 8, 1), std=12.0).repeat(8, 0).repeat(8, 1)
    r = size // 6
    jitter = rng.integers(-size // 16, size // 16 + 1, 4)
    if attrs["rel"] == "left of":
        p1 = (size // 2 + jitter[0], size // 4 + jitter[1])
        p2 = (size // 2 + jitter[2], 3 * size // 4 + jitter[3])
    else:
        p1 = (size // 4 + jitter[0], size // 2 + jitter[1])
        p2 = (3 * size // 4 + jitter[2], size // 2 + jitter[3])
    _draw(canvas, attrs["s1"], FIRST_COLORS[attrs["c1"]], int(p1[0]), int(p1[1]), r)
    _draw(canvas, attrs["s2"], SECOND_COLORS[attrs["c2"]], int(p2[0]), int(p2[1]), r)
    canvas += rng.normal((size, size, 1), std=4.0)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def _all_combos():
    return [(bg, c1, s1, c2, s2) for bg in BACKGROUNDS for c1 in FIRST_COLORS for s1 in FIRST_SHAPES
            for c2 in SECOND_COLORS for s2 in SECOND_SHAPES]


def fixture_entries(seed: int, n_images: int, planted: bool) -> list[tuple[DatasetEntry, dict]]:
    """Deterministic records plus the scene attributes used to render them."""
    if n_images < 4:
        raise ValueError("a fixture needs at least 4 images")
    rng = Rng(seed).fork("fixture")
    combos = _all_combos()
    if planted:
        if n_images > len(combos):
            raise ValueError(f"planted fixtures hold at most {len(combos)} images")
        picks = [combos[i] for i in rng.permutation(len(combos))[:n_images]]
    else:
        picks = [combos[i] for i in rng.integers(0, len(combos), n_images)]
    out = []
    for idx, (bg, c1, s1, c2, s2) in enumerate(picks):
        rel = ("left of", "above")[int(rng.integers(0, 2, 1)[0])]
        attrs = dict(bg=bg, c1=c1, s1=s1, c2=c2, s2=s2, rel=rel)
        if planted:
            sentences = [t.format(**attrs) for t in FULL_TEMPLATES]
            keywords = [f"{c1}-{s1}", f"{c2}-{s2}", f"-{bg}"]
        else:
            sentences = []
            for k in range(N_SENTENCES):
                if rng.uniform(1)[0] < 0.5:
                    sentences.append(FULL_TEMPLATES[k].format(**attrs))
                else:
                    t = PARTIAL_TEMPLATES[int(rng.integers(0, len(PARTIAL_TEMPLATES), 1)[0])]
                    sentences.append(t.format(**attrs))
            pool = [f"{c1}-{s1}", f"{c2}-{s2}", f"-{bg}"]
            order = rng.permutation(3)
            keywords = [pool[i] for i in sorted(order[:1 + int(rng.integers(0, 3, 1)[0])])]
        cats = BG_CATEGORIES[bg]
        category = cats[int(rng.integers(0, len(cats), 1)[0])]
        image_id = f"img{idx:04d}"
        entry = DatasetEntry(image_id, f"images/{image_id}.ppm", category, sentences, keywords)
        out.append((entry, attrs))
    return out


def make_fixture(out_dir, seed: int = 7, n_images: int = 64, planted: bool = True,
                 image_size: int = 256) -> Dataset:
    """Write images and ``dataset.jsonl`` under ``out_dir``; pure function of the arguments."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = fixture_entries(seed, n_images, planted)
    rng = Rng(seed).fork("render")
    for entry, attrs in records:
        write_pnm(out_dir / entry.image, render_scene(attrs, rng, image_size))
    entries = [e for e, _ in records]
    save_dataset(entries, out_dir / DATASET_FILE)
    return Dataset(entries, out_dir)
