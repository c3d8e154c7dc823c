"""Visual-guided attention, dynamic sentence/keyword fusion and the matching score.

All vector functions broadcast over leading axes, so a text batch can be
guided by every image of a corpus in one call: ``v[None, :, :]`` against
``t[:, None, :]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import NORM_EPS, Rng, ShapeError, l2_normalize, sigmoid

VARIANTS = ("soft", "fusion", "sim")


def _check_dim(x: np.ndarray, n: int, what: str) -> None:
    if x.shape[-1] != n:
        raise ShapeError(f"{what}: expected trailing dimension {n}, got shape {x.shape}")


@dataclass
class VgaParams:
    variant: str
    weights: dict[str, np.ndarray]

    @classmethod
    def init(cls, rng: Rng, variant: str, visual_dim: int, text_dim: int) -> "VgaParams":
        if variant not in VARIANTS:
            raise ValueError(f"unknown VGA variant {variant!r}; pick one of {VARIANTS}")
        D, H = visual_dim, text_dim
        if variant == "soft":
            w = {"w": rng.normal((H, D), std=1.0 / np.sqrt(D)), "b": np.zeros(H)}
        elif variant == "fusion":
            s = 1.0 / np.sqrt(D + H)
            w = {"w_info": rng.normal((H, D + H), std=s), "b_info": np.zeros(H),
                 "w_gate": rng.normal((H, D + H), std=s), "b_gate": np.zeros(H)}
        else:
            w = {"w_v": rng.normal((H, D), std=1.0 / np.sqrt(D)), "b_v": np.zeros(H),
                 "w_t": rng.normal((H, H), std=1.0 / np.sqrt(H)), "b_t": np.zeros(H)}
        return cls(variant, w)

    def __call__(self, v: np.ndarray, t: np.ndarray) -> np.ndarray:
        return GUIDES[self.variant](v, t, self)


def vga_soft(v, t, p: VgaParams) -> np.ndarray:
    """t * sigmoid(linear(v))."""
    _check_dim(v, p.weights["w"].shape[1], "vga_soft visual input")
    _check_dim(t, p.weights["w"].shape[0], "vga_soft text input")
    return sigmoid(v @ p.weights["w"].T + p.weights["b"]) * t


def vga_fusion(v, t, p: VgaParams) -> np.ndarray:
    """Information branch gated by an identically shaped sigmoid branch over Cat(v, t)."""
    w = p.weights
    _check_dim(t, w["w_info"].shape[0], "vga_fusion text input")
    _check_dim(v, w["w_info"].shape[1] - t.shape[-1], "vga_fusion visual input")
    shape = np.broadcast_shapes(v.shape[:-1], t.shape[:-1])
    joint = np.concatenate([np.broadcast_to(v, shape + v.shape[-1:]),
                            np.broadcast_to(t, shape + t.shape[-1:])], axis=-1)
    info = joint @ w["w_info"].T + w["b_info"]
    return info * sigmoid(joint @ w["w_gate"].T + w["b_gate"])


def cosine(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cosine along the last axis; 0 when either side has zero norm."""
    return np.sum(l2_normalize(x) * l2_normalize(y), axis=-1)


def vga_sim(v, t, p: VgaParams) -> np.ndarray:
    """Project both sides, gate the projected text by sigmoid of their cosine."""
    w = p.weights
    _check_dim(v, w["w_v"].shape[1], "vga_sim visual input")
    _check_dim(t, w["w_t"].shape[1], "vga_sim text input")
    fv = v @ w["w_v"].T + w["b_v"]
    ft = t @ w["w_t"].T + w["b_t"]
    return sigmoid(cosine(fv, ft))[..., None] * ft


GUIDES = {"soft": vga_soft, "fusion": vga_fusion, "sim": vga_sim}


def dynamic_fuse(s, k, gate_w, gate_b, present=True) -> np.ndarray:
    """g * s + (1 - g) * k with g = sigmoid(W Cat(L2(s), L2(k)) + b); g = 1 where keywords are absent."""
    s = np.asarray(s, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if s.shape[-1] != k.shape[-1]:
        raise ShapeError(f"dynamic_fuse: sentence {s.shape} and keyword {k.shape} dims differ")
    z = np.concatenate([l2_normalize(s), l2_normalize(k)], axis=-1) @ gate_w.T + gate_b
    g = sigmoid(z)
    present = np.asarray(present, dtype=bool)
    g = np.where(present[..., None], g, 1.0)
    return g * s + (1.0 - g) * k


@dataclass
class ProjectionHeads:
    w_v: np.ndarray     # F x D_v
    w_s: np.ndarray     # F x H
    w_k: np.ndarray     # F x H
    gate_w: np.ndarray  # F x 2F
    gate_b: np.ndarray  # F

    NAMES = ("w_v", "w_s", "w_k", "gate_w", "gate_b")

    @classmethod
    def init(cls, rng: Rng, visual_dim: int, text_dim: int, joint_dim: int) -> "ProjectionHeads":
        return cls(
            w_v=rng.normal((joint_dim, visual_dim), std=1.0 / np.sqrt(visual_dim)),
            w_s=rng.normal((joint_dim, text_dim), std=1.0 / np.sqrt(text_dim)),
            w_k=rng.normal((joint_dim, text_dim), std=1.0 / np.sqrt(text_dim)),
            gate_w=rng.normal((joint_dim, 2 * joint_dim), std=1.0 / np.sqrt(2 * joint_dim)),
            gate_b=np.zeros(joint_dim),
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.NAMES}

    def copy(self) -> "ProjectionHeads":
        return ProjectionHeads(**{n: a.copy() for n, a in self.as_dict().items()})


def similarity(fv, ft, heads: ProjectionHeads) -> np.ndarray:
    """Cosine between the projected visual vector and the fused text vector."""
    a = l2_normalize(np.asarray(fv) @ heads.w_v.T)
    return np.sum(a * l2_normalize(ft), axis=-1)


@dataclass
class JointEmbedding:
    image: np.ndarray
    text: np.ndarray

    @property
    def image_unit(self) -> np.ndarray:
        return l2_normalize(self.image)

    @property
    def text_unit(self) -> np.ndarray:
        return l2_normalize(self.text)

    def score(self) -> float:
        return float(self.image_unit @ self.text_unit)


def _norm(x):
    n = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    ok = n > NORM_EPS
    return np.where(ok, x / np.where(ok, n, 1.0), 0.0), n, ok


def _norm_back(dy, y, n, ok):
    proj = dy - y * np.sum(y * dy, axis=-1, keepdims=True)
    return np.where(ok, proj / np.where(ok, n, 1.0), 0.0)


def heads_forward(heads: ProjectionHeads, fv, sv, kv, present):
    """Score every (image, text) pair of a batch.

    fv: I x D_v salient visual vectors.  sv, kv: T x I x H guided sentence and
    keyword features (text t guided by image i).  present: T booleans.
    Returns an I x T score matrix and a cache for :func:`heads_backward`.
    """
    u = fv @ heads.w_v.T
    a, nu, oku = _norm(u)
    p = sv @ heads.w_s.T
    q = kv @ heads.w_k.T
    pn, np_, okp = _norm(p)
    qn, nq, okq = _norm(q)
    cat = np.concatenate([pn, qn], axis=-1)
    g = sigmoid(cat @ heads.gate_w.T + heads.gate_b)
    mask = np.asarray(present, dtype=bool)[:, None, None]
    g = np.where(mask, g, 1.0)
    fused = g * p + (1.0 - g) * q
    b, nf, okf = _norm(fused)
    scores = np.einsum("tif,if->it", b, a)
    cache = dict(fv=fv, sv=sv, kv=kv, mask=mask, a=a, nu=nu, oku=oku, p=p, q=q, pn=pn,
                 np_=np_, okp=okp, qn=qn, nq=nq, okq=okq, cat=cat, g=g, b=b, nf=nf, okf=okf)
    return scores, cache


def heads_backward(heads: ProjectionHeads, cache, dscores) -> dict[str, np.ndarray]:
    c = cache
    dst = np.asarray(dscores).T  # T x I
    db = dst[:, :, None] * c["a"][None, :, :]
    da = np.einsum("ti,tif->if", dst, c["b"])
    dfused = _norm_back(db, c["b"], c["nf"], c["okf"])
    du = _norm_back(da, c["a"], c["nu"], c["oku"])
    g = c["g"]
    dz = np.where(c["mask"], dfused * (c["p"] - c["q"]) * g * (1.0 - g), 0.0)
    dcat = dz @ heads.gate_w
    F = g.shape[-1]
    dp = dfused * g + _norm_back(dcat[..., :F], c["pn"], c["np_"], c["okp"])
    dq = dfused * (1.0 - g) + _norm_back(dcat[..., F:], c["qn"], c["nq"], c["okq"])
    return {
        "w_v": du.T @ c["fv"],
        "w_s": np.einsum("tif,tih->fh", dp, c["sv"]),
        "w_k": np.einsum("tif,tih->fh", dq, c["kv"]),
        "gate_w": np.einsum("tif,tig->fg", dz, c["cat"]),
        "gate_b": dz.sum(axis=(0, 1)),
    }
