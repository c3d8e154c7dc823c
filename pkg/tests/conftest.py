import time
from dataclasses import dataclass

import numpy as np
import pytest

from amfmn.data import make_fixture
from amfmn.loss import MarginParams
from amfmn.model import Model, ModelConfig
from amfmn.text import Vocabulary
from amfmn.train import TrainConfig, encode_split, train

# small dimensions that keep end-to-end runs within a few seconds
SMALL = dict(word_dim=32, hidden=64, visual_dim=64, joint_dim=64)


def build_model(dataset, variant="soft", seed=7, image_size=256, **overrides) -> Model:
    vocab = Vocabulary.build([s for e in dataset.entries for s in e.sentences + e.keywords])
    cfg = ModelConfig(variant=variant, image_size=image_size, seed=seed, **{**SMALL, **overrides})
    return Model.create(cfg, vocab, dataset.keyword_vocab())


def planted_train_config(**kw) -> TrainConfig:
    base = dict(epochs=200, batch_size=32, lr=1e-3, seed=7, val_every=0,
                margin=MarginParams("dynamic", gamma=0.6, beta=5.0))
    base.update(kw)
    return TrainConfig(**base)


@dataclass
class PlantedRun:
    dataset: object
    model: Model
    encoded: object
    history: list
    seconds: float


@pytest.fixture(scope="session")
def planted_run(tmp_path_factory) -> PlantedRun:
    """The 64-image planted fixture (seed 7) and a model trained on it, timed end to end."""
    t0 = time.perf_counter()
    ds = make_fixture(tmp_path_factory.mktemp("planted"), seed=7, n_images=64, planted=True)
    model = build_model(ds, "soft")
    enc = encode_split(model, ds, "joint")
    result = train(planted_train_config(), ds, model, encoded=enc)
    return PlantedRun(ds, model, enc, result.history, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    """Eight 64x64 images, fast enough for per-test use."""
    return make_fixture(tmp_path_factory.mktemp("small"), seed=3, n_images=8, planted=True, image_size=64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
