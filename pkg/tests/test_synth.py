import numpy as np
import pytest

from polsketch import synth

from conftest import random_psd


class TestSampler:
    def test_same_seed_bit_identical(self):
        layout = np.zeros((12, 12), np.int32)
        a = synth.sample_wishart_scene(layout, [synth.SURFACE], 4, seed=42)
        b = synth.sample_wishart_scene(layout, [synth.SURFACE], 4, seed=42)
        assert (a.image.data == b.image.data).all()

    def test_different_seed_differs(self):
        layout = np.zeros((8, 8), np.int32)
        a = synth.sample_wishart_scene(layout, [synth.SURFACE], 4, seed=1)
        b = synth.sample_wishart_scene(layout, [synth.SURFACE], 4, seed=2)
        assert not np.allclose(a.image.data, b.image.data)

    def test_zero_covariance_gives_zero_pixels(self):
        layout = np.zeros((6, 6), np.int32)
        scene = synth.sample_wishart_scene(layout, [np.zeros((3, 3))], 4, seed=0)
        assert (scene.image.data == 0).all()

    def test_non_psd_rejected(self):
        bad = np.diag([1.0, -0.5, 1.0]).astype(complex)
        with pytest.raises(ValueError, match="invalid covariance"):
            synth.sample_wishart_scene(np.zeros((4, 4), np.int32), [bad], 4, 0)

    def test_non_hermitian_rejected(self):
        bad = np.eye(3, dtype=complex)
        bad[0, 1] = 1.0  # not mirrored below the diagonal
        with pytest.raises(ValueError, match="invalid covariance"):
            synth.sample_wishart_scene(np.zeros((4, 4), np.int32), [bad], 4, 0)

    def test_law_of_large_numbers(self):
        # with many looks the per-pixel mean matrix converges to the class
        # covariance; 64x64 at 512 looks stays well within 5% Frobenius
        layout = np.zeros((64, 64), np.int32)
        scene = synth.sample_wishart_scene(layout, [synth.SURFACE], 512, seed=3)
        mean = scene.image.data.mean(axis=(0, 1))
        rel = np.linalg.norm(mean - synth.SURFACE) / np.linalg.norm(synth.SURFACE)
        assert rel < 0.05

    def test_rank_deficient_class_sampled(self):
        canonical = np.diag([1.0, 0.0, 0.0]).astype(complex)
        layout = np.zeros((32, 32), np.int32)
        scene = synth.sample_wishart_scene(layout, [canonical], 64, seed=4)
        mean = scene.image.data.mean(axis=(0, 1))
        assert abs(mean[0, 0].real - 1.0) < 0.1
        assert abs(mean[1, 1].real) < 1e-6

    def test_pixels_follow_layout(self):
        layout = np.zeros((16, 16), np.int32)
        layout[:, 8:] = 1
        scene = synth.sample_wishart_scene(
            layout, [synth.SURFACE, synth.SURFACE * 100.0], 16, seed=5
        )
        left = np.trace(scene.image.data[:, :8].mean(axis=(0, 1))).real
        right = np.trace(scene.image.data[:, 8:].mean(axis=(0, 1))).real
        assert right > 10 * left

    def test_output_is_valid_image(self):
        rng = np.random.default_rng(6)
        mats = [random_psd(rng), random_psd(rng)]
        layout = (np.arange(64).reshape(8, 8) % 2).astype(np.int32)
        scene = synth.sample_wishart_scene(layout, mats, 2, seed=6)
        # CoherencyImage constructor enforces Hermitian/PSD invariants
        assert scene.image.shape == (8, 8)

    def test_label_without_matrix_rejected(self):
        layout = np.full((4, 4), 2, np.int32)
        with pytest.raises(ValueError):
            synth.sample_wishart_scene(layout, [synth.SURFACE], 4, 0)


class TestLayouts:
    def test_edge_layout_split(self):
        layout, mats = synth.edge_layout(32, 6.0)
        assert (layout[:, :16] == 0).all() and (layout[:, 16:] == 1).all()
        assert np.trace(mats[1]).real / np.trace(mats[0]).real == pytest.approx(
            10 ** 0.6, rel=1e-9
        )

    def test_line_layout(self):
        layout, mats = synth.line_layout(64, 8.0)
        rows = np.nonzero((layout == 1).any(axis=1))[0]
        assert len(rows) == 3 and (np.diff(rows) == 1).all()

    def test_mosaic_class_counts(self):
        layout, mats = synth.mosaic_layout(60, 3)
        counts = np.bincount(layout.ravel(), minlength=3)
        assert (counts == 1200).all()  # 60*60/3 per strip
        assert len(mats) == 3

    def test_mosaic_rejects_single_class(self):
        with pytest.raises(ValueError):
            synth.mosaic_layout(32, 1)

    def test_composite_truth_ids(self):
        layout, mats, truth = synth.composite_layout(144)
        assert set(np.unique(truth)) == {0, 1, 2}
        assert set(np.unique(layout)) == {0, 1, 2, 3}
        # urban truth covers scatterers and gaps alike
        assert (truth[layout == 2] == 1).all()
        assert (truth[layout == 1] == 1).all()

    def test_sweep_truth_ids(self):
        layout, mats, truth = synth.sweep_layout(144)
        assert set(np.unique(truth)) == {0, 1, 2, 3}
        assert len(mats) == 6
        # dashes inherit the strip class they straddle
        assert set(np.unique(truth[layout == 5])) <= {0, 1}

    def test_dot_grid_has_scatterers(self):
        layout, mats = synth.dot_grid_layout(64)
        assert (layout == 1).sum() > 100
