import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polsketch import rasters
from polsketch.rasters import CoherencyImage, RasterIOError, ScalarRaster

from conftest import constant_image, random_image


class TestSpan:
    def test_identity_matrix(self):
        img = constant_image(np.eye(3), 4, 5)
        assert np.allclose(rasters.span(img).values, 3.0)

    def test_zero_matrix(self):
        img = constant_image(np.zeros((3, 3)), 3, 3)
        assert (rasters.span(img).values == 0.0).all()

    def test_matches_eigenvalue_sum(self):
        # oracle: span equals the sum of eigenvalues
        rng = np.random.default_rng(0)
        img = random_image(rng, 6, 7)
        expected = np.linalg.eigvalsh(img.data).sum(axis=-1)
        assert np.allclose(rasters.span(img).values, expected, atol=1e-9)

    @given(st.floats(min_value=0.0, max_value=100.0))
    @settings(max_examples=25, deadline=None)
    def test_linearity(self, a):
        rng = np.random.default_rng(1)
        img = random_image(rng, 3, 3)
        scaled = CoherencyImage(img.data * a, img.looks)
        assert np.allclose(rasters.span(scaled).values, a * rasters.span(img).values,
                           rtol=1e-12, atol=1e-12)


class TestPauliRgb:
    def test_single_channel_scene(self):
        img = constant_image(np.diag([1.0, 0.0, 0.0]), 4, 4)
        r, g, b = rasters.pauli_rgb(img)
        assert (b.values == 1.0).all()
        assert (r.values == 0.0).all()
        assert (g.values == 0.0).all()

    def test_two_value_normalization(self):
        data = np.zeros((2, 2, 3, 3), dtype=complex)
        data[..., 0, 0] = [[0.5, 0.5], [2.0, 2.0]]
        img = CoherencyImage(data, 1.0)
        _, _, b = rasters.pauli_rgb(img, clip_percentile=1.0)
        assert b.values[0, 0] == 0.0
        assert b.values[1, 0] == 1.0

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(2)
        img = random_image(rng, 8, 8)
        q = 0.95
        r, g, b = rasters.pauli_rgb(img, clip_percentile=q)
        # oracle: recompute one channel by hand
        for chan, idx in ((r, (1, 1)), (g, (2, 2)), (b, (0, 0))):
            vals = img.data[:, :, idx[0], idx[1]].real
            lv = np.log(vals)
            lo, hi = lv.min(), np.quantile(lv, q)
            expect = np.clip((lv - lo) / (hi - lo), 0, 1)
            assert np.allclose(chan.values, expect, atol=1e-9)

    def test_all_zero_raster(self):
        img = constant_image(np.zeros((3, 3)), 3, 3)
        r, g, b = rasters.pauli_rgb(img)
        assert (r.values == 0).all() and (g.values == 0).all() and (b.values == 0).all()

    def test_bad_percentile_rejected(self):
        img = constant_image(np.eye(3), 2, 2)
        with pytest.raises(ValueError):
            rasters.pauli_rgb(img, clip_percentile=0.4)


class TestMultilook:
    def test_identity(self):
        rng = np.random.default_rng(3)
        img = random_image(rng, 4, 4)
        out = rasters.multilook(img, 1, 1)
        assert np.allclose(out.data, img.data)
        assert out.looks == img.looks

    def test_equal_blocks(self):
        img = constant_image(np.diag([2.0, 1.0, 0.5]), 4, 4, looks=2.0)
        out = rasters.multilook(img, 2, 2)
        assert out.shape == (2, 2)
        assert np.allclose(out.data[0, 0], np.diag([2.0, 1.0, 0.5]))
        assert out.looks == 8.0

    def test_matches_block_sum_oracle(self):
        rng = np.random.default_rng(4)
        img = random_image(rng, 4, 4)
        out = rasters.multilook(img, 4, 4)
        expected = img.data.reshape(16, 3, 3).sum(axis=0) / 16.0
        assert np.allclose(out.data[0, 0], expected, atol=1e-12)

    def test_partial_blocks_dropped(self):
        rng = np.random.default_rng(5)
        img = random_image(rng, 5, 7)
        out = rasters.multilook(img, 2, 3)
        assert out.shape == (2, 2)

    def test_block_exceeds_image(self):
        rng = np.random.default_rng(6)
        img = random_image(rng, 3, 3)
        with pytest.raises(ValueError, match="block exceeds image"):
            rasters.multilook(img, 4, 1)

    def test_commutes_with_scaling(self):
        rng = np.random.default_rng(7)
        img = random_image(rng, 6, 6)
        scaled = CoherencyImage(img.data * 2.5, img.looks)
        a = rasters.multilook(scaled, 2, 2).data
        b = rasters.multilook(img, 2, 2).data * 2.5
        assert np.allclose(a, b, rtol=1e-12)

    def test_output_stays_hermitian_psd(self):
        rng = np.random.default_rng(8)
        img = random_image(rng, 6, 6)
        out = rasters.multilook(img, 3, 2)
        assert np.allclose(out.data, out.data.conj().swapaxes(2, 3))
        assert np.linalg.eigvalsh(out.data).min() > -1e-9


class TestContainerIO:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        img = random_image(rng, 5, 6, looks=3.0)
        path = tmp_path / "img.t3img"
        rasters.save_image(path, img)
        back = rasters.load_image(path)
        assert back.looks == img.looks
        assert (back.data == img.data).all()

    def test_truncated_file(self, tmp_path):
        rng = np.random.default_rng(10)
        img = random_image(rng, 4, 4)
        path = tmp_path / "img.t3img"
        rasters.save_image(path, img)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(RasterIOError):
            rasters.load_image(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTANIMG" + b"\0" * 64)
        with pytest.raises(RasterIOError):
            rasters.load_image(path)


class TestT3IO:
    def test_nine_plane_assembly_is_hermitian(self, tmp_path):
        rng = np.random.default_rng(11)
        img = random_image(rng, 6, 5)
        rasters.save_t3(tmp_path / "t3", img)
        back = rasters.load_t3(tmp_path / "t3", looks=4.0)
        assert np.allclose(back.data, back.data.conj().swapaxes(2, 3))
        # float32 planes: agreement to single precision
        assert np.allclose(back.data, img.data, atol=1e-5)

    def test_inconsistent_planes(self, tmp_path):
        rng = np.random.default_rng(12)
        img = random_image(rng, 4, 4)
        rasters.save_t3(tmp_path / "t3", img)
        (tmp_path / "t3" / "T22.bin").write_bytes(b"\0" * 12)
        with pytest.raises(RasterIOError, match="inconsistent planes"):
            rasters.load_t3(tmp_path / "t3")

    def test_missing_plane(self, tmp_path):
        rng = np.random.default_rng(13)
        img = random_image(rng, 4, 4)
        rasters.save_t3(tmp_path / "t3", img)
        (tmp_path / "t3" / "T33.bin").unlink()
        with pytest.raises(RasterIOError):
            rasters.load_t3(tmp_path / "t3")


class TestPnm:
    def test_pgm_round_trip_8bit(self, tmp_path):
        arr = np.arange(30).reshape(5, 6) % 256
        rasters.write_pgm(tmp_path / "a.pgm", arr)
        assert (rasters.read_pgm(tmp_path / "a.pgm") == arr).all()

    def test_pgm_round_trip_16bit(self, tmp_path):
        arr = np.arange(30).reshape(5, 6) * 300
        rasters.write_pgm(tmp_path / "a.pgm", arr)
        assert (rasters.read_pgm(tmp_path / "a.pgm") == arr).all()

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        rgb = rng.integers(0, 256, size=(4, 7, 3))
        rasters.write_ppm(tmp_path / "a.ppm", rgb)
        assert (rasters.read_ppm(tmp_path / "a.ppm") == rgb).all()

    def test_palette_map(self):
        pal = np.array([[0, 0, 0], [255, 0, 0]], dtype=np.uint8)
        labels = np.array([[0, 1], [1, 0]])
        out = rasters.palette_map(labels, pal)
        assert (out[0, 1] == [255, 0, 0]).all()


class TestInvariants:
    def test_non_hermitian_rejected(self):
        data = np.zeros((1, 1, 3, 3), dtype=complex)
        data[0, 0] = np.array([[1, 1j, 0], [1j, 1, 0], [0, 0, 1]])
        with pytest.raises(ValueError):
            CoherencyImage(data, 1.0)

    def test_negative_definite_rejected(self):
        data = np.zeros((1, 1, 3, 3), dtype=complex)
        data[0, 0] = -np.eye(3)
        with pytest.raises(ValueError):
            CoherencyImage(data, 1.0)

    def test_scalar_raster_rejects_nan(self):
        with pytest.raises(ValueError):
            ScalarRaster(np.array([[np.nan, 0.0]]))
