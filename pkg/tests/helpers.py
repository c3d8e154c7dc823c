"""Builders shared by unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from amfmn.fusion import ProjectionHeads, VgaParams
from amfmn.loss import Batch, MarginParams, batch_loss, loss_and_grads
from amfmn.tensor import Rng

D, H, F = 6, 5, 4


def random_batch(seed: int, variant: str, B: int = 8) -> tuple[ProjectionHeads, Batch]:
    """Seeded heads and a B-pair batch guided by a random VGA of ``variant``."""
    r = np.random.default_rng(seed)
    vga = VgaParams.init(Rng(seed), variant, D, H)
    vga.weights = {k: v + 0.1 * r.normal(size=v.shape) for k, v in vga.weights.items()}
    heads = ProjectionHeads(
        w_v=r.normal(size=(F, D)), w_s=r.normal(size=(F, H)), w_k=r.normal(size=(F, H)),
        gate_w=r.normal(size=(F, 2 * F)), gate_b=r.normal(size=F),
    )
    fv = r.normal(size=(B, D))
    s, k = r.normal(size=(B, H)), r.normal(size=(B, H))
    batch = Batch(
        fv=fv, sv=vga(fv[None], s[:, None]), kv=vga(fv[None], k[:, None]),
        present=r.random(B) < 0.7, priors=r.random((B, B)),
    )
    return heads, batch


def numeric_grads(heads: ProjectionHeads, batch: Batch, params: MarginParams, eps: float = 1e-6) -> dict:
    out = {}
    for name in ProjectionHeads.NAMES:
        arr = getattr(heads, name)
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = batch_loss(heads, batch, params)
            flat[i] = orig - eps
            lo = batch_loss(heads, batch, params)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        out[name] = g
    return out


def max_relative_error(heads: ProjectionHeads, batch: Batch, params: MarginParams) -> float:
    """Largest per-tensor relative error between analytic and central-difference gradients."""
    _, analytic = loss_and_grads(heads, batch, params)
    numeric = numeric_grads(heads, batch, params)
    worst = 0.0
    for name in ProjectionHeads.NAMES:
        a, n = analytic[name], numeric[name]
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        if scale < 1e-9:
            continue
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst


def planted_mosaic(dataset, indices, target: int):
    """2 x 2 mosaic of four fixture images; returns the scene and the target's (y, x, size) footprint."""
    from amfmn.pnm import load_image

    imgs = [load_image(dataset.image_path(dataset.entries[i])) for i in indices]
    scene = np.concatenate([np.concatenate(imgs[:2], 2), np.concatenate(imgs[2:], 2)], 1)
    size = imgs[0].shape[1]
    return scene, ((target // 2) * size, (target % 2) * size, size)


def run_cli_suite(workdir) -> dict:
    """Run every subcommand once on small inputs inside ``workdir``, with relative paths.

    Returns the exit codes and a map from artifact name to bytes.
    """
    import os
    from pathlib import Path

    from amfmn.cli import main
    from amfmn.data import load_dataset
    from amfmn.pnm import image_to_raster, write_pnm

    w = Path(workdir)
    w.mkdir(parents=True, exist_ok=True)
    codes = {}
    cwd = os.getcwd()
    os.chdir(w)
    try:
        codes["fixture"] = main(["fixture", "--seed", "3", "--images", "8", "--planted", "--image-size", "64",
                                 "--out", "data"])
        codes["train"] = main(["train", "--data", "data", "--variant", "fusion", "--epochs", "2",
                               "--batch-size", "4", "--lr", "1e-3", "--split", "all", "--word-dim", "16",
                               "--hidden", "16", "--dim", "16", "--image-size", "64", "--seed", "5",
                               "--out", "m.ckpt"])
        codes["eval"] = main(["eval", "--data", "data", "--ckpt", "m.ckpt", "--mode", "joint",
                              "--split", "all", "--seed", "5", "--report", "report.json"])
        codes["query"] = main(["query", "--ckpt", "m.ckpt", "--corpus", "data", "--text", "a red square",
                               "--keywords", "red-square", "--topk", "3", "--seed", "5", "--out", "query.json"])
        scene, _ = planted_mosaic(load_dataset("data"), [0, 1, 2, 3], 0)
        write_pnm("scene.ppm", image_to_raster(scene))
        codes["locate"] = main(["locate", "--ckpt", "m.ckpt", "--scene", "scene.ppm", "--query", "a red square",
                                "--scales", "64,128", "--median", "3", "--seed", "5", "--out", "heat.pgm"])
        codes["diagnose"] = main(["diagnose", "--data", "data", "--sample", "10", "--seed", "5",
                                  "--out", "diag.json"])
        codes["margins"] = main(["margins", "--gamma", "0.5", "--beta", "4", "--samples", "11", "--seed", "5",
                                 "--out", "curve.csv"])
    finally:
        os.chdir(cwd)
    files = {str(p.relative_to(w)): p.read_bytes() for p in sorted(w.rglob("*")) if p.is_file()}
    return {"codes": codes, "files": files}
