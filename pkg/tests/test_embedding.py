"""Similarity metrics, mock/remote encoders, and the screening stage."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from changeqa.embedding import (
    MockEncoder,
    RemoteEncoder,
    ScreenConfig,
    cosine,
    distance,
    rank_classes,
    screen,
)
from changeqa.errors import UndefinedSimilarityError
from changeqa.raster import RgbImage

finite_vectors = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=2, max_size=8
)


@st.composite
def vector_pairs(draw):
    dim = draw(st.integers(2, 8))
    element = st.floats(min_value=-50, max_value=50, allow_nan=False)
    a = draw(st.lists(element, min_size=dim, max_size=dim))
    b = draw(st.lists(element, min_size=dim, max_size=dim))
    return np.asarray(a), np.asarray(b)


def solid(r, g, b, shape=(4, 4)) -> RgbImage:
    pixels = np.zeros(shape + (3,), dtype=np.uint8)
    pixels[:, :] = (r, g, b)
    return RgbImage(pixels)


class TestCosine:
    def test_self_similarity_is_one(self):
        v = np.array([0.3, -2.0, 5.0])
        assert cosine(v, v) == pytest.approx(1.0)

    def test_orthogonal_axes(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_direct_arithmetic_fixture(self):
        assert cosine(np.array([1.0, 2.0, 2.0]), np.array([2.0, 1.0, 2.0])) == pytest.approx(8 / 9)

    def test_zero_vector_rejected(self):
        with pytest.raises(UndefinedSimilarityError):
            cosine(np.zeros(3), np.ones(3))

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cosine(np.ones(2), np.ones(3))

    @given(v=finite_vectors, alpha=st.floats(min_value=0.01, max_value=100))
    @settings(max_examples=80)
    def test_scale_invariance(self, v, alpha):
        v = np.asarray(v)
        if np.linalg.norm(v) == 0:
            return
        w = v[::-1].copy() + 1.0
        if np.linalg.norm(w) == 0:
            return
        assert cosine(alpha * v, w) == pytest.approx(cosine(v, w), abs=1e-9)


class TestDistance:
    def test_identical_vectors_all_zero(self):
        v = np.array([1.0, -2.0, 3.0])
        for metric in ("l1", "l2", "wasserstein1d"):
            assert distance(v, v, metric) == 0.0

    def test_pythagorean_fixture(self):
        a = np.array([0.0, 0.0])
        b = np.array([3.0, 4.0])
        assert distance(a, b, "l1") == 7.0
        assert distance(a, b, "l2") == 5.0

    def test_wasserstein_equal_sorted_multisets(self):
        assert distance(np.array([1.0, 0.0]), np.array([0.0, 1.0]), "wasserstein1d") == 0.0

    def test_wasserstein_sort_and_average_oracle(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=6)
        b = rng.normal(size=6)
        expected = float(np.mean(np.abs(np.sort(a) - np.sort(b))))
        assert distance(a, b, "wasserstein1d") == pytest.approx(expected)

    @given(pair=vector_pairs())
    @settings(max_examples=80)
    def test_l2_below_l1_and_symmetry(self, pair):
        a, b = pair
        assert distance(a, b, "l2") <= distance(a, b, "l1") + 1e-12
        for metric in ("l1", "l2", "wasserstein1d"):
            assert distance(a, b, metric) == pytest.approx(distance(b, a, metric))
        # zero exactly when equal (l1/l2) or equal as sorted multisets
        if not np.array_equal(a, b):
            assert distance(a, b, "l1") > 0.0
            assert distance(a, b, "l2") > 0.0
        if not np.array_equal(np.sort(a), np.sort(b)):
            assert distance(a, b, "wasserstein1d") > 0.0

    def test_unknown_metric_rejected(self):
        with pytest.raises(ValueError):
            distance(np.ones(2), np.ones(2), "manhattan")


class TestMockEncoder:
    def test_identical_input_identical_embedding(self):
        enc = MockEncoder(dim=32)
        img = solid(10, 20, 30)
        a = enc.embed_image(img)
        b = enc.embed_image(solid(10, 20, 30))
        assert np.array_equal(a, b)
        assert a.shape == (32,)
        assert np.linalg.norm(a) == pytest.approx(1.0)

    def test_different_input_different_embedding(self):
        enc = MockEncoder(dim=32)
        assert not np.array_equal(enc.embed_image(solid(1, 2, 3)), enc.embed_image(solid(3, 2, 1)))

    def test_text_embedding_deterministic(self):
        enc = MockEncoder(dim=16)
        assert np.array_equal(enc.embed_text("building"), enc.embed_text("building"))

    def test_overrides(self):
        img = solid(5, 5, 5)
        key = MockEncoder.image_key(img)
        enc = MockEncoder(dim=3, image_overrides={key: [1.0, 0.0, 0.0]}, text_overrides={"t": [0.0, 1.0, 0.0]})
        assert np.array_equal(enc.embed_image(img), [1.0, 0.0, 0.0])
        assert np.array_equal(enc.embed_text("t"), [0.0, 1.0, 0.0])


class TestRemoteEncoderCache:
    def test_cache_round_trip_without_network(self, tmp_path):
        enc = RemoteEncoder("http://unreachable.invalid", cache_dir=tmp_path)
        vec = np.array([1.5, -2.25, 3.125])
        enc._cache_write("k1", vec)
        assert np.array_equal(enc._cache_read("k1"), vec)
        listing = list(tmp_path.iterdir())
        assert [p.name for p in listing] == ["k1"]
        header, values = (tmp_path / "k1").read_text().splitlines()
        assert header == "dim 3"
        assert [float(v) for v in values.split()] == [1.5, -2.25, 3.125]


def one_hot(i, dim=4):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def engineered_encoder(image_map: dict[str, int]) -> MockEncoder:
    """Encoder whose prompts are one-hot and images map to planted vectors."""
    prompts = {f"class {i}": one_hot(i) for i in range(4)}
    images = {}
    for key, cls in image_map.items():
        images[key] = one_hot(cls)
    return MockEncoder(dim=4, image_overrides=images, text_overrides=prompts)


SCREEN_PROMPTS = tuple(f"class {i}" for i in range(4))


class TestRankClasses:
    def test_single_class(self):
        enc = MockEncoder(dim=8)
        cfg = ScreenConfig(class_prompts=("only one",), k=1)
        ranked = rank_classes(solid(1, 1, 1), cfg, enc)
        assert len(ranked) == 1
        assert ranked[0][0] == 0

    def test_engineered_ordering(self):
        img = solid(9, 9, 9)
        enc = engineered_encoder({MockEncoder.image_key(img): 2})
        cfg = ScreenConfig(class_prompts=SCREEN_PROMPTS, k=4, tau_enc=0.0)
        ranked = rank_classes(img, cfg, enc)
        assert ranked[0] == (2, pytest.approx(1.0))
        # remaining classes tie at 0 and fall back to index order
        assert [cls for cls, _ in ranked[1:]] == [0, 1, 3]

    def test_prompt_permutation_preserves_pairing(self):
        img = solid(7, 7, 7)
        enc = MockEncoder(dim=16)
        cfg = ScreenConfig(class_prompts=("alpha", "beta", "gamma"))
        base = {("alpha", "beta", "gamma")[c]: s for c, s in rank_classes(img, cfg, enc)}
        permuted_cfg = ScreenConfig(class_prompts=("gamma", "alpha", "beta"))
        permuted = {("gamma", "alpha", "beta")[c]: s for c, s in rank_classes(img, permuted_cfg, enc)}
        assert base == permuted

    def test_rescaled_image_embedding_keeps_order(self):
        img = solid(3, 1, 4)
        enc = MockEncoder(dim=16)
        cfg = ScreenConfig(class_prompts=("a", "b", "c", "d"))
        ranked = rank_classes(img, cfg, enc)
        scaled = MockEncoder(
            dim=16,
            image_overrides={MockEncoder.image_key(img): 7.5 * enc.embed_image(img)},
        )
        ranked_scaled = rank_classes(img, cfg, scaled)
        assert [cls for cls, _ in ranked] == [cls for cls, _ in ranked_scaled]
        for (_, s1), (_, s2) in zip(ranked, ranked_scaled):
            assert s1 == pytest.approx(s2)


class TestScreen:
    def _config(self, **kwargs):
        defaults = dict(class_prompts=SCREEN_PROMPTS, k=2, tau_enc=0.5, tau_sim=0.9)
        defaults.update(kwargs)
        return ScreenConfig(**defaults)

    def test_expected_class_missing_from_after_topk_discards(self):
        before = solid(0, 0, 1)
        after = solid(0, 0, 2)
        enc = engineered_encoder(
            {MockEncoder.image_key(before): 0, MockEncoder.image_key(after): 3}
        )
        result = screen(before, after, expected_class=1, cfg=self._config(), encoder=enc)
        assert result.decision == "discard"
        assert not result.no_change_suspect

    def test_expected_class_in_after_only_accepts(self):
        before = solid(0, 0, 1)
        after = solid(0, 0, 2)
        enc = engineered_encoder(
            {MockEncoder.image_key(before): 0, MockEncoder.image_key(after): 1}
        )
        result = screen(before, after, expected_class=1, cfg=self._config(), encoder=enc)
        assert result.decision == "accept"
        # orthogonal planted embeddings: pair similarity 0 < tau_sim
        assert not result.no_change_suspect

    def test_identical_crops_ambiguous_and_no_change_suspect(self):
        before = solid(0, 5, 0)
        after = solid(0, 5, 0)
        enc = engineered_encoder({MockEncoder.image_key(before): 1})
        result = screen(before, after, expected_class=1, cfg=self._config(), encoder=enc)
        assert result.decision == "ambiguous"
        assert result.no_change_suspect
        assert result.pair_similarity == pytest.approx(1.0)

    def test_low_similarity_hit_does_not_count(self):
        before = solid(0, 0, 1)
        after = solid(0, 0, 2)
        # after embedding leans toward class 1 but below tau_enc
        weak = 0.4 * one_hot(1) + 0.92 * one_hot(0)
        enc = MockEncoder(
            dim=4,
            image_overrides={
                MockEncoder.image_key(before): one_hot(0),
                MockEncoder.image_key(after): weak,
            },
            text_overrides={f"class {i}": one_hot(i) for i in range(4)},
        )
        result = screen(before, after, expected_class=1, cfg=self._config(), encoder=enc)
        assert result.decision == "discard"
