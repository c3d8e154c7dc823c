"""Model assembly, query routing and checkpoint persistence."""

import numpy as np
import pytest

from amfmn.model import CheckpointError, Model, ModelConfig
from conftest import build_model


@pytest.fixture(scope="module")
def model(small_fixture):
    return build_model(small_fixture, "fusion", image_size=64)


@pytest.fixture(scope="module")
def image(small_fixture):
    return small_fixture.image_path(small_fixture.entries[0])


class TestConfig:
    def test_image_size_multiple_of_32(self):
        with pytest.raises(ValueError):
            ModelConfig(image_size=100)

    def test_high_extent(self):
        assert ModelConfig(image_size=256).high_extent == 16


class TestRouting:
    def test_sentence_only_is_sentence_branch(self, model, image):
        emb = model.encode_pair(image, "a red square near a blue grid")
        fv = model.visual(image).features
        s = model.prepare_text("a red square near a blue grid", derive_keywords=False)
        s_v = model.guide(fv[None], s.sentence[None])[0, 0]
        assert np.array_equal(emb.text, model.heads.w_s @ s_v)

    def test_keywords_only(self, model):
        t = model.prepare_text(None, ["red-square", "blue-grid"])
        assert t.present
        joined = model.prepare_text("red square blue grid", derive_keywords=False)
        np.testing.assert_array_equal(t.sentence, joined.sentence)

    def test_derived_keywords(self, model):
        t = model.prepare_text("a red square", derive_keywords=True)
        assert t.present
        np.testing.assert_array_equal(t.keywords, model.keyword_vector([["red"], ["square"]]))

    def test_no_text(self, model):
        with pytest.raises(ValueError):
            model.prepare_text(None, None)

    def test_score_in_range(self, model, image):
        assert -1.0 <= model.encode_pair(image, "a red square", ["red-square"]).score() <= 1.0

    def test_resizes_input(self, model):
        a = model.visual(np.full((3, 32, 32), 0.4)).features
        b = model.visual(np.full((3, 64, 64), 0.4)).features
        np.testing.assert_array_equal(a, b)

    def test_deterministic_construction(self, small_fixture, image):
        a = build_model(small_fixture, "sim", image_size=64).encode_pair(image, "a red ring")
        b = build_model(small_fixture, "sim", image_size=64).encode_pair(image, "a red ring")
        np.testing.assert_array_equal(a.text, b.text)
        np.testing.assert_array_equal(a.image, b.image)

    def test_ablations(self, small_fixture, image):
        plain = build_model(small_fixture, "soft", image_size=64, use_mvsa=False, use_vga=False)
        fv = plain.visual(image).features
        np.testing.assert_array_equal(fv, plain.pyramid(image).global_vec)
        t = np.ones((2, plain.config.hidden))
        assert np.array_equal(plain.guide(fv[None], t)[:, 0], t)


class TestCheckpoint:
    def test_roundtrip_byte_identical(self, model, tmp_path):
        path = model.save(tmp_path / "m.ckpt")
        back = Model.load(path)
        assert back.to_bytes() == path.read_bytes()
        for k, v in model.tensors().items():
            np.testing.assert_array_equal(back.tensors()[k], v)

    def test_loaded_scores_identical(self, model, image, tmp_path):
        back = Model.load(model.save(tmp_path / "m.ckpt"))
        assert back.encode_pair(image, "a red square").score() == model.encode_pair(image, "a red square").score()

    def test_truncated(self, model, tmp_path):
        data = model.to_bytes()
        with pytest.raises(CheckpointError, match="corrupt"):
            Model.from_bytes(data[: len(data) // 2])

    def test_variant_mismatch(self, model):
        with pytest.raises(CheckpointError, match="variant|model"):
            Model.from_bytes(model.to_bytes(), expect_variant="sim")
        assert Model.from_bytes(model.to_bytes(), expect_variant="fusion").config.variant == "fusion"

    def test_not_a_checkpoint(self):
        with pytest.raises(CheckpointError):
            Model.from_bytes(b"garbage bytes that are not a bundle")
