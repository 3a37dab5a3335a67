"""VQ codec: quantization law, roundtrips, k-means behavior, PPM I/O."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskcompose.codec import (
    Codebook,
    assemble_patches,
    decode,
    encode,
    extract_patches,
    kmeans,
    learn_codebook,
    learn_codebook_from_images,
    quantize_oracle,
    quantize_patch,
    read_ppm,
    roundtrip_mse,
    write_ppm,
)
from maskcompose.errors import DimensionMismatch, TokenOutOfRange, TooFewPatches
from maskcompose.worlds import build_scene_world, render_tokens_to_image


def toy_codebook(entries, patch=1, channels=1):
    return Codebook(
        entries=np.asarray(entries, dtype=np.float64),
        patch_h=patch,
        patch_w=patch,
        channels=channels,
    )


class TestQuantize:
    def test_exact_entry_hits_its_index(self):
        cb = toy_codebook(np.linspace(0, 1, 5)[:, None])
        assert quantize_patch(np.array([cb.entries[3, 0]]), cb) == 3

    def test_tie_goes_to_lower_index(self):
        cb = toy_codebook([[0.0], [1.0]])
        assert quantize_patch(np.array([0.5]), cb) == 0

    def test_dimension_mismatch(self):
        cb = toy_codebook([[0.0, 0.0]], patch=1, channels=2)
        with pytest.raises(DimensionMismatch):
            quantize_patch(np.array([0.0, 0.0, 0.0]), cb)

    @given(seed=st.integers(0, 100_000))
    @settings(max_examples=80, deadline=None)
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        cb = Codebook(entries=rng.random((8, 12)), patch_h=2, patch_w=2, channels=3)
        z = rng.random(12)
        assert quantize_patch(z, cb) == quantize_oracle(z, cb)


class TestRoundtrips:
    def test_codebook_built_image_is_a_fixed_point(self):
        rng = np.random.default_rng(0)
        cb = Codebook(entries=rng.random((6, 12)), patch_h=2, patch_w=2, channels=3)
        tokens = rng.integers(0, 6, size=(3, 4))
        img = decode(tokens, cb)
        assert np.array_equal(encode(img, cb), tokens)
        again = decode(encode(img, cb), cb)
        assert np.array_equal(again, img)

    def test_decode_encode_idempotent_on_arbitrary_images(self):
        rng = np.random.default_rng(1)
        cb = learn_codebook(rng.random((200, 12)), n_entries=5,
                            patch_h=2, patch_w=2, channels=3)
        img = rng.random((6, 8, 3))
        once = decode(encode(img, cb), cb)
        twice = decode(encode(once, cb), cb)
        assert np.array_equal(once, twice)

    def test_zero_image_maps_to_zero_entry(self):
        cb = Codebook(
            entries=np.stack([np.full(3, 0.7), np.zeros(3), np.full(3, 0.3)]),
            patch_h=1, patch_w=1, channels=3,
        )
        tokens = encode(np.zeros((2, 2, 3)), cb)
        assert (tokens == 1).all()

    def test_decode_validates_tokens(self):
        cb = toy_codebook([[0.0], [1.0]])
        with pytest.raises(TokenOutOfRange):
            decode(np.array([[0, 2]]), cb)
        with pytest.raises(TokenOutOfRange):
            decode(np.array([[-1]]), cb)

    def test_encode_validates_divisibility(self):
        cb = Codebook(entries=np.zeros((2, 12)), patch_h=2, patch_w=2, channels=3)
        with pytest.raises(DimensionMismatch):
            encode(np.zeros((5, 4, 3)), cb)

    def test_decode_clamps_out_of_range_entries(self):
        cb = toy_codebook([[1.7], [-0.4]])
        img = decode(np.array([[0, 1]]), cb)
        assert img.max() <= 1.0 and img.min() >= 0.0

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_patch_tiling_is_invertible(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.random((6, 8, 3))
        patches = extract_patches(img, 2, 4)
        back = assemble_patches(patches, 3, 2, 2, 4, 3)
        assert np.array_equal(back, img)


class TestKMeans:
    def test_single_center_is_the_mean(self):
        rng = np.random.default_rng(2)
        data = rng.random((50, 4))
        centers, _, history = kmeans(data, 1, iters=3, rng_seed=0)
        assert np.allclose(centers[0], data.mean(axis=0))
        assert history[-1] == pytest.approx(float(((data - data.mean(0)) ** 2).sum(1).mean()))

    def test_as_many_centers_as_points_gives_zero_distortion(self):
        rng = np.random.default_rng(3)
        data = rng.random((8, 4))
        _, assign, history = kmeans(data, 8, iters=10, rng_seed=1)
        assert history[-1] == pytest.approx(0.0, abs=1e-24)
        assert sorted(assign) == list(range(8))

    def test_recovers_well_separated_clusters(self):
        """With tight, far-apart blobs the final objective equals the
        within-cluster distortion of the true partition to within 1%."""
        rng = np.random.default_rng(4)
        true_centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        labels = np.repeat(np.arange(3), 100)
        data = true_centers[labels] + 0.1 * rng.standard_normal((300, 2))
        truth = np.mean(
            [
                float(((data[labels == j] - data[labels == j].mean(0)) ** 2).sum(1).mean())
                for j in range(3)
            ]
        )
        _, _, history = kmeans(data, 3, iters=20, rng_seed=0)
        assert abs(history[-1] - truth) <= 0.01 * truth

    def test_too_few_patches(self):
        with pytest.raises(TooFewPatches):
            kmeans(np.zeros((3, 2)), 4)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(5)
        data = rng.random((120, 6))
        a = kmeans(data, 7, iters=12, rng_seed=9)
        b = kmeans(data, 7, iters=12, rng_seed=9)
        assert np.array_equal(a[0], b[0])
        assert a[2] == b[2]

    @given(seed=st.integers(0, 10_000), k=st.integers(1, 6))
    @settings(max_examples=40, deadline=None)
    def test_objective_never_increases(self, seed, k):
        rng = np.random.default_rng(seed)
        data = rng.random((60, 3))
        _, _, history = kmeans(data, k, iters=8, rng_seed=seed)
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    def test_nested_codebooks_never_hurt(self):
        """Adding entries to a codebook cannot raise roundtrip error."""
        rng = np.random.default_rng(6)
        base = rng.random((4, 12))
        extra = np.concatenate([base, rng.random((4, 12))])
        small = Codebook(entries=base, patch_h=2, patch_w=2, channels=3)
        large = Codebook(entries=extra, patch_h=2, patch_w=2, channels=3)
        for _ in range(10):
            img = rng.random((4, 6, 3))
            assert roundtrip_mse(img, large) <= roundtrip_mse(img, small) + 1e-15


class TestWorldImages:
    def test_roundtrip_mse_bounded_by_kmeans_objective(self):
        """Encoding the training images realizes the k-means distortion:
        per-pixel MSE times D equals the final mean squared patch distance."""
        world = build_scene_world(3, 3, n_shapes=2, n_colors=2, max_objects=3)
        rng = np.random.default_rng(7)
        grids = world.prior_sample(rng, 40)
        images = [render_tokens_to_image(world, g, cell_px=4) for g in grids]
        cb = learn_codebook_from_images(images, n_entries=16, iters=15, rng_seed=0)
        dim = cb.dim
        mse = np.mean([roundtrip_mse(im, cb) for im in images])
        assert mse * dim <= cb.objective_history[-1] + 1e-12

    def test_learned_codebook_shape(self):
        rng = np.random.default_rng(8)
        cb = learn_codebook(rng.random((100, 48)), n_entries=10, rng_seed=1)
        assert cb.entries.shape == (10, 48)
        assert cb.n_entries == 10
        assert len(cb.objective_history) >= 2

    def test_patch_width_validated(self):
        with pytest.raises(DimensionMismatch):
            learn_codebook(np.zeros((10, 7)), n_entries=2, patch_h=2, patch_w=2, channels=3)


class TestPpm:
    def test_write_read_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        img = np.round(rng.random((5, 7, 3)) * 255.0) / 255.0
        path = str(tmp_path / "img.ppm")
        write_ppm(path, img)
        back = read_ppm(path)
        assert np.array_equal(np.round(back * 255), np.round(img * 255))
        write_ppm(str(tmp_path / "again.ppm"), back)
        assert (tmp_path / "img.ppm").read_bytes() == (tmp_path / "again.ppm").read_bytes()

    def test_reader_tolerates_comments(self, tmp_path):
        path = tmp_path / "c.ppm"
        payload = bytes(range(12))
        path.write_bytes(b"P6\n# a comment\n2 2\n255\n" + payload)
        img = read_ppm(str(path))
        assert img.shape == (2, 2, 3)
        assert np.array_equal((img * 255).round().astype(np.uint8).ravel(), np.frombuffer(payload, np.uint8))

    def test_reader_rejects_other_formats(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        with pytest.raises(ValueError):
            read_ppm(str(path))

    def test_writer_rejects_non_rgb(self, tmp_path):
        with pytest.raises(DimensionMismatch):
            write_ppm(str(tmp_path / "x.ppm"), np.zeros((4, 4)))
