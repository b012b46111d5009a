import numpy as np
import pytest

from flowalign import datagen as D
from flowalign import geometry as G
from flowalign.datagen import ConfigError, GenConfig, GenerationError
from flowalign.flow import flow_matching_loss
from flowalign.model import grid_sample_points
from flowalign.tensor import FormatError


class TestPerturbCorners:
    def test_rho_zero_identity(self):
        rng = D.sample_rng(0, 0)
        corners, offsets = D.perturb_corners(64, 0.0, rng)
        np.testing.assert_array_equal(offsets, np.zeros((4, 2)))
        h = G.four_point_to_homography(corners, offsets)
        assert G.frobenius_gap(h, G.Homography.identity()) < 1e-12

    def test_offsets_within_bounds(self):
        rng = D.sample_rng(1, 0)
        for _ in range(200):
            _, offsets = D.perturb_corners(64, 8.0, rng)
            assert np.all(np.abs(offsets) <= 8.0)

    def test_offset_mean_near_zero(self):
        rng = D.sample_rng(2, 0)
        means = np.mean([D.perturb_corners(64, 8.0, rng)[1] for _ in range(10_000)],
                        axis=0)
        assert np.all(np.abs(means) < 0.5)

    def test_resample_exhaustion_raises(self):
        class AlwaysFolded:
            # moves TL past BR: every draw is non-convex
            def uniform(self, lo, hi, size):
                return np.array([[70.0, 70.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])

        with pytest.raises(GenerationError, match="100"):
            D.perturb_corners(64, 70.0, AlwaysFolded())


class TestSynthPattern:
    def test_checker_binary_and_periodic(self):
        img = D.synth_pattern(64, "checker", D.sample_rng(0, 0), cell=8)
        assert set(np.unique(img)) <= {0.0, 1.0}
        np.testing.assert_array_equal(img[:, :, :48], img[:, :, 16:])
        np.testing.assert_array_equal(img[:, :48, :], img[:, 16:, :])

    def test_same_seed_identical(self):
        a = D.synth_pattern(32, "blobs", D.sample_rng(5, 7))
        b = D.synth_pattern(32, "blobs", D.sample_rng(5, 7))
        np.testing.assert_array_equal(a, b)

    def test_blobs_have_texture(self):
        img = D.synth_pattern(64, "blobs", D.sample_rng(1, 1))
        gx = np.abs(np.diff(img, axis=2)).max(axis=0)
        assert (gx > 1e-3).mean() > 0.05

    @pytest.mark.parametrize("kind", ["checker", "blobs", "gradients", "mixed"])
    def test_range_and_shape(self, kind):
        img = D.synth_pattern(32, kind, D.sample_rng(2, 3))
        assert img.shape == (3, 32, 32)
        assert img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            D.synth_pattern(32, "plasma", D.sample_rng(0, 0))


class TestDomainShift:
    def test_invert_is_involution(self):
        img = D.synth_pattern(32, "blobs", D.sample_rng(3, 0))
        np.testing.assert_allclose(D.apply_domain_shift(
            D.apply_domain_shift(img, "invert"), "invert"), img, atol=1e-7)

    def test_gamma_one_is_identity(self):
        img = D.synth_pattern(32, "blobs", D.sample_rng(3, 1))
        np.testing.assert_allclose(D.apply_domain_shift(img, "gamma:1.0"), img,
                                   atol=1e-7)

    def test_invert_flips_mean(self):
        img = D.synth_pattern(32, "gradients", D.sample_rng(3, 2))
        out = D.apply_domain_shift(img, "invert")
        assert out.mean() == pytest.approx(1.0 - img.mean(), abs=1e-6)

    def test_channel_mix_in_range(self):
        img = D.synth_pattern(32, "blobs", D.sample_rng(3, 3))
        out = D.apply_domain_shift(img, "channel_mix")
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert abs(np.linalg.det(D.CHANNEL_MIX)) > 1e-6

    def test_pseudo_ir_monotone_in_luminance(self):
        ramp = np.linspace(0, 1, 64, dtype=np.float32)
        img = np.stack([np.tile(ramp, (64, 1))] * 3)
        out = D.apply_domain_shift(img, "pseudo_ir")
        for c in range(3):
            assert np.all(np.diff(out[c, 0]) >= 0)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            D.apply_domain_shift(np.zeros((3, 8, 8), np.float32), "sepia")


class TestGeneratePair:
    def test_rho_zero_no_shift_is_identity_pair(self):
        cfg = GenConfig(image_side=32, rho=0.0, shift_mode="none", seed=0,
                        pattern="blobs")
        [s] = D.make_dataset(cfg, 1)
        np.testing.assert_allclose(s.i_t, s.i_s, atol=1e-6)
        assert G.frobenius_gap(s.h_gt, G.Homography.identity()) < 1e-10
        np.testing.assert_allclose(s.w_gt, np.zeros_like(s.w_gt), atol=1e-5)

    def test_ace_bounded_by_rho_sqrt2(self):
        cfg = GenConfig(image_side=64, rho=8.0, seed=4)
        corners = G.image_corners(64)
        for s in D.make_dataset(cfg, 20):
            ace = G.average_corner_error(s.h_gt, G.Homography.identity(), corners)
            assert ace <= 8.0 * np.sqrt(2) + 1e-9

    def test_fit_round_trip_from_w_gt(self):
        cfg = GenConfig(image_side=64, rho=8.0, seed=5)
        pts = grid_sample_points(64)
        corners = G.image_corners(64)
        for s in D.make_dataset(cfg, 10):
            h_fit = G.fit_homography_from_displacement(s.w_gt.astype(np.float64),
                                                       points=pts)
            assert G.average_corner_error(h_fit, s.h_gt, corners) < 1e-5

    def test_h_gt_invertible_and_quad_round_trip(self):
        cfg = GenConfig(image_side=64, rho=10.0, seed=6)
        corners = G.image_corners(64)
        for s in D.make_dataset(cfg, 20):
            quad = s.h_gt.apply(corners)
            back = s.h_gt.inverse().apply(quad)
            assert np.abs(back - corners).max() < 1e-6

    def test_zero_loss_on_identity_samples(self):
        cfg = GenConfig(image_side=32, rho=0.0, shift_mode="none", seed=7)
        for s in D.make_dataset(cfg, 3):
            assert flow_matching_loss(np.zeros_like(s.w_gt), s.w_gt) < 1e-6

    def test_domain_labels(self):
        cfg = GenConfig(image_side=32, rho=2.0, shift_mode="invert", seed=8)
        [s] = D.make_dataset(cfg, 1)
        assert (s.domain_s, s.domain_t) == (0, 1)


class TestDatasetIO:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = GenConfig(image_side=32, rho=4.0, shift_mode="invert", seed=9,
                        pattern="blobs")
        samples = D.make_dataset(cfg, 10)
        path = tmp_path / "data.hfmd"
        D.write_dataset(path, samples, cfg)
        back, cfg2 = D.read_dataset(path)
        assert cfg2 == cfg
        assert len(back) == len(samples)
        for a, b in zip(samples, back):
            assert np.array_equal(a.i_s, b.i_s)
            assert np.array_equal(a.i_t, b.i_t)
            assert np.array_equal(a.w_gt, b.w_gt)
            assert np.array_equal(a.h_gt.m, b.h_gt.m)

    def test_truncated_file_no_partial_samples(self, tmp_path):
        cfg = GenConfig(image_side=32, rho=4.0, seed=10)
        samples = D.make_dataset(cfg, 4)
        path = tmp_path / "data.hfmd"
        D.write_dataset(path, samples, cfg)
        blob = path.read_bytes()
        (tmp_path / "cut.hfmd").write_bytes(blob[: len(blob) - 100])
        with pytest.raises(FormatError, match="byte"):
            D.read_dataset(tmp_path / "cut.hfmd")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hfmd"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            D.read_dataset(path)

    def test_identical_seed_identical_bytes(self, tmp_path):
        cfg = GenConfig(image_side=32, rho=4.0, seed=11)
        p1, p2 = tmp_path / "a.hfmd", tmp_path / "b.hfmd"
        D.write_dataset(p1, D.make_dataset(cfg, 6), cfg)
        D.write_dataset(p2, D.make_dataset(cfg, 6), cfg)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_write_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            D.write_dataset(tmp_path / "e.hfmd", [], GenConfig())

    def test_per_sample_reproducibility(self):
        cfg = GenConfig(image_side=32, rho=4.0, seed=12)
        full = D.make_dataset(cfg, 5)
        tail = D.make_dataset(cfg, 2, start_index=3)
        np.testing.assert_array_equal(full[3].i_s, tail[0].i_s)
        np.testing.assert_array_equal(full[4].w_gt, tail[1].w_gt)


class TestPhotoBasedGeneration:
    def test_pairs_from_user_image(self):
        rng = np.random.default_rng(40)
        img = rng.uniform(0, 1, (3, 96, 120)).astype(np.float32)
        cfg = GenConfig(image_side=32, rho=4.0, seed=3)
        samples = D.dataset_from_image(img, cfg, 5)
        assert len(samples) == 5
        assert samples[0].i_s.shape == (3, 32, 32)
        # deterministic given (seed, index)
        again = D.dataset_from_image(img, cfg, 5)
        np.testing.assert_array_equal(samples[2].i_t, again[2].i_t)

    def test_grayscale_image_upcast(self):
        img = np.random.default_rng(41).uniform(0, 1, (1, 96, 96)).astype(np.float32)
        cfg = GenConfig(image_side=32, rho=4.0, seed=4)
        [s] = D.dataset_from_image(img, cfg, 1)
        assert s.i_s.shape == (3, 32, 32)

    def test_too_small_image_rejected(self):
        img = np.zeros((3, 30, 30), np.float32)
        with pytest.raises(ConfigError, match="smaller"):
            D.dataset_from_image(img, GenConfig(image_side=32, rho=4.0), 1)


class TestRaster:
    @pytest.mark.parametrize("channels", [1, 3])
    def test_round_trip(self, tmp_path, channels):
        rng = np.random.default_rng(13)
        img = (rng.integers(0, 256, (channels, 9, 7)) / 255.0).astype(np.float32)
        path = tmp_path / "img.pnm"
        D.write_raster(path, img)
        back = D.read_raster(path)
        np.testing.assert_allclose(back, img, atol=1e-9)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "img.pgm"
        D.write_raster(path, np.zeros((1, 8, 8), np.float32))
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(FormatError):
            D.read_raster(path)


class TestGenConfigValidation:
    def test_rho_bound(self):
        with pytest.raises(ConfigError):
            GenConfig(image_side=64, rho=16.0)

    def test_side_divisibility(self):
        with pytest.raises(ConfigError):
            GenConfig(image_side=60)

    def test_unknown_shift(self):
        with pytest.raises(ConfigError):
            GenConfig(shift_mode="solarize")

    def test_gamma_parameterized_accepted(self):
        cfg = GenConfig(shift_mode="gamma:1.8")
        assert cfg.shift_mode == "gamma:1.8"
