import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polsketch import detect, synth
from polsketch.rasters import ScalarRaster

from conftest import constant_image, random_image, random_psd


def lnq_direct(zi, zj, n, m, p=3):
    """Independent oracle: the likelihood ratio evaluated term by term with
    plain determinants."""
    det = lambda z: np.linalg.det(z).real
    return (
        p * (n + m) * np.log(n + m)
        - p * n * np.log(n)
        - p * m * np.log(m)
        + n * np.log(det(zi))
        + m * np.log(det(zj))
        - (n + m) * np.log(det(zi + zj))
    )


class TestFilterBank:
    def test_default_geometry(self, bank):
        assert len(bank.scales) == 3
        assert bank.n_orientations == 18
        assert len(bank.windows) == 54

    def test_sides_disjoint_and_mirrored(self, bank):
        for win in bank.windows:
            s1 = {tuple(p) for p in win.side1}
            s2 = {tuple(p) for p in win.side2}
            c = {tuple(p) for p in win.center}
            assert not s1 & s2
            assert not s1 & c and not s2 & c
            assert s2 == {(-x, -y) for x, y in s1}

    def test_weights_positive_normalized(self, bank):
        for win in bank.windows:
            assert (win.w_side > 0).all() and (win.w_center > 0).all()
            assert win.w_side.sum() == pytest.approx(1.0, abs=1e-12)
            assert win.w_center.sum() == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_scale_rejected(self):
        with pytest.raises(ValueError, match="degenerate filter"):
            detect.build_filter_bank(scales=(0.1,), n_orientations=4)


class TestWeightedMean:
    def test_constant_image(self, bank):
        img = constant_image(np.diag([2.0, 1.0, 0.5]), 16, 16)
        win = bank.window(0, 3)
        z = detect.weighted_mean_coherency(img, win.side1, win.w_side, (8, 8))
        assert np.allclose(z, np.diag([2.0, 1.0, 0.5]), atol=1e-12)

    def test_uniform_two_pixel_mean(self):
        rng = np.random.default_rng(0)
        img = random_image(rng, 4, 4)
        offsets = np.array([[0, 0], [1, 0]])
        w = np.array([0.5, 0.5])
        z = detect.weighted_mean_coherency(img, offsets, w, (1, 1))
        assert np.allclose(z, 0.5 * (img.data[1, 1] + img.data[1, 2]), atol=1e-12)

    def test_matches_brute_force(self, bank):
        rng = np.random.default_rng(1)
        img = random_image(rng, 24, 24)
        win = bank.window(1, 5)
        z = detect.weighted_mean_coherency(img, win.side1, win.w_side, (12, 12))
        expect = np.zeros((3, 3), dtype=complex)
        for (dx, dy), w in zip(win.side1, win.w_side):
            expect += w * img.data[12 + dy, 12 + dx]
        assert np.allclose(z, expect, atol=1e-12)

    def test_mirror_padding_at_border(self):
        rng = np.random.default_rng(2)
        img = random_image(rng, 6, 6)
        offsets = np.array([[-1, 0]])
        z = detect.weighted_mean_coherency(img, offsets, np.array([1.0]), (0, 3))
        assert np.allclose(z, img.data[3, 1])  # reflect: index -1 -> 1

    def test_empty_offsets_rejected(self):
        img = constant_image(np.eye(3), 4, 4)
        with pytest.raises(ValueError, match="degenerate filter"):
            detect.weighted_mean_coherency(img, np.empty((0, 2)), np.empty(0), (2, 2))


class TestWishartLogRatio:
    def test_identical_inputs_equal_looks(self):
        rng = np.random.default_rng(3)
        z = random_psd(rng)
        assert detect.wishart_log_ratio(z, z.copy(), 64, 64) == 0.0

    def test_against_direct_oracle(self):
        zi, zj = np.eye(3, dtype=complex), 4.0 * np.eye(3, dtype=complex)
        got = detect.wishart_log_ratio(zi, zj, 4, 4)
        assert got == pytest.approx(lnq_direct(zi, zj, 4, 4), abs=1e-9)

    def test_oracle_over_many_random_pairs(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            zi, zj = random_psd(rng), random_psd(rng)
            n = float(rng.integers(2, 200))
            m = float(rng.integers(2, 200))
            got = detect.wishart_log_ratio(zi, zj, n, m)
            want = lnq_direct(zi, zj, n, m)
            assert got == pytest.approx(want, abs=1e-9 * max(1, abs(want)))

    def test_swap_symmetry_equal_looks(self):
        rng = np.random.default_rng(5)
        zi, zj = random_psd(rng), random_psd(rng)
        assert detect.wishart_log_ratio(zi, zj, 8, 8) == pytest.approx(
            detect.wishart_log_ratio(zj, zi, 8, 8), abs=1e-12
        )

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_never_positive(self, seed):
        rng = np.random.default_rng(seed)
        zi, zj = random_psd(rng), random_psd(rng)
        n = float(rng.integers(1, 500))
        m = float(rng.integers(1, 500))
        assert detect.wishart_log_ratio(zi, zj, n, m) <= 0.0

    def test_congruence_invariance(self):
        # Zi -> A Zi A^H, Zj -> A Zj A^H leaves the ratio unchanged
        rng = np.random.default_rng(6)
        zi, zj = random_psd(rng), random_psd(rng)
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        base = detect.wishart_log_ratio(zi, zj, 32, 32)
        cong = detect.wishart_log_ratio(a @ zi @ a.conj().T, a @ zj @ a.conj().T, 32, 32)
        assert cong == pytest.approx(base, rel=1e-9, abs=1e-9)

    def test_singular_input_never_nan(self):
        z = np.diag([1.0, 0.0, 0.0]).astype(complex)
        out = detect.wishart_log_ratio(z, z.copy(), 4, 4)
        assert np.isfinite(out)


class TestCfarEnergies:
    def test_edge_zero_on_constant_image(self, bank):
        img = constant_image(synth.SURFACE, 30, 30)
        e, _, _ = detect.cfar_edge_energy(img, bank, (15, 15))
        assert abs(e) <= 1e-12

    def test_line_zero_on_constant_image(self, bank):
        img = constant_image(synth.SURFACE, 30, 30)
        e, _, _ = detect.cfar_line_energy(img, bank, (15, 15))
        assert abs(e) <= 1e-12

    def test_boundary_orientation(self, edge_scene, edge_fields, bank):
        # on-edge pixels must win with a near-vertical orientation
        field = edge_fields["cfar_edge"]
        vertical = bank.n_orientations // 2  # 90 degrees
        hits = 0
        rows = range(4, 124)
        for y in rows:
            oi = field.orientation[y, 64]
            if min(abs(oi - vertical), bank.n_orientations - abs(oi - vertical)) <= 1:
                hits += 1
        assert hits / len(rows) >= 0.9

    def test_energy_grows_with_separation(self, bank):
        rng = np.random.default_rng(7)
        base = random_psd(rng)
        prev = -1.0
        for c in (1.0, 2.0, 4.0, 8.0):
            data = np.broadcast_to(base, (20, 40, 3, 3)).copy()
            data[:, 20:] = c * base
            from polsketch.rasters import CoherencyImage

            img = CoherencyImage(data, 4.0)
            e, _, _ = detect.cfar_edge_energy(img, bank, (20, 10))
            assert e > prev
            prev = e

    def test_scaling_invariance(self, bank):
        rng = np.random.default_rng(8)
        img = random_image(rng, 26, 26)
        e0, o0, s0 = detect.cfar_edge_energy(img, bank, (13, 13))
        for c in (0.1, 10.0):
            from polsketch.rasters import CoherencyImage

            scaled = CoherencyImage(img.data * c, img.looks)
            e, o, s = detect.cfar_edge_energy(scaled, bank, (13, 13))
            assert e == pytest.approx(e0, rel=1e-9, abs=1e-9)
            assert (o, s) == (o0, s0)

    def test_ridge_peaks_on_line_center(self, bank):
        layout, mats = synth.line_layout(64, 8.0)
        scene = synth.sample_wishart_scene(layout, mats, 16, seed=11)
        rows = np.nonzero((layout == 1).any(axis=1))[0]
        center = rows[1]
        e_center = detect.cfar_line_energy(scene.image, bank, (32, center))[0]
        e_off = detect.cfar_line_energy(scene.image, bank, (32, center + 4))[0]
        assert e_center > e_off

    def test_step_edge_has_weak_ridge(self, edge_scene, bank):
        e_edge = detect.cfar_edge_energy(edge_scene.image, bank, (64, 64))[0]
        e_ridge = detect.cfar_line_energy(edge_scene.image, bank, (64, 64))[0]
        assert e_ridge < 0.5 * e_edge


class TestGradient:
    def test_constant_image_at_floor(self, bank):
        img = constant_image(synth.SURFACE, 30, 30)
        g_edge, g_ridge = detect.gradient_energy(img, bank, (15, 15))
        assert g_edge == pytest.approx(0.0, abs=1e-6)
        assert g_ridge == pytest.approx(0.0, abs=1e-6)

    def test_power_doubling_adds_ln2(self, bank):
        rng = np.random.default_rng(9)
        img = random_image(rng, 26, 26)
        from polsketch.rasters import CoherencyImage

        doubled = CoherencyImage(img.data * 2.0, img.looks)
        g1, _ = detect.gradient_energy(img, bank, (13, 13))
        g2, _ = detect.gradient_energy(doubled, bank, (13, 13))
        assert g2 - g1 == pytest.approx(np.log(2.0), abs=1e-9)

    def test_raw_norm_concentrates_without_log(self, edge_scene, bank, edge_fields):
        # without the log transform, nearly all gradient response mass sits
        # in a tiny fraction of pixels
        win = bank.window(0, 0)
        corr = detect._FieldCorrelator(edge_scene.image, bank.max_reach)
        v1 = detect.matrix_vector(corr.region_mean(win.side1, win.w_side))
        v2 = detect.matrix_vector(corr.region_mean(win.side2, win.w_side))
        raw = np.linalg.norm(v1 - v2, axis=-1)
        top = np.sort(raw.ravel())[::-1]
        n_top = max(1, int(0.01 * top.size))
        assert top[:n_top].sum() / top.sum() > 0.5
        # the log-domain field spreads far wider
        logged = edge_fields["grad_edge"].energy.values
        top_l = np.sort(logged.ravel())[::-1]
        assert top_l[:n_top].sum() / top_l.sum() < 0.1

    def test_vectorization_layout(self):
        t = np.arange(9).reshape(3, 3) + 1j * np.arange(9).reshape(3, 3)
        t = t + t.conj().T
        v = detect.matrix_vector(t)
        assert v.shape == (9,)
        assert v[0] == t[0, 0].real and v[3] == t[0, 1].real and v[4] == t[0, 1].imag


class TestFieldsAgainstPerPixel:
    def test_cross_check(self, edge_scene, edge_fields, bank):
        img = edge_scene.image
        for (x, y) in ((20, 20), (64, 40), (100, 90)):
            e, oi, si = detect.cfar_edge_energy(img, bank, (x, y))
            f = edge_fields["cfar_edge"]
            assert f.energy.values[y, x] == pytest.approx(e, rel=1e-9, abs=1e-9)
            assert (f.orientation[y, x], f.scale[y, x]) == (oi, si)
            el, _, _ = detect.cfar_line_energy(img, bank, (x, y))
            assert edge_fields["cfar_line"].energy.values[y, x] == pytest.approx(
                el, rel=1e-9, abs=1e-9
            )
            ge, gr = detect.gradient_energy(img, bank, (x, y))
            assert edge_fields["grad_edge"].energy.values[y, x] == pytest.approx(
                ge, rel=1e-9, abs=1e-9
            )
            assert edge_fields["grad_line"].energy.values[y, x] == pytest.approx(
                gr, rel=1e-9, abs=1e-9
            )


class TestFusion:
    def _field(self, vals, kind="edge"):
        vals = np.asarray(vals, dtype=float)
        return detect.EnergyField(
            ScalarRaster(vals),
            np.zeros(vals.shape, np.int16),
            np.zeros(vals.shape, np.int16),
            kind,
            18,
        )

    def test_zero_gradient_passthrough(self):
        a = self._field([[2.0, 4.0], [1.0, 0.0]])
        b = self._field(np.zeros((2, 2)))
        fused = detect.fuse_energy(a, b)
        assert np.allclose(fused.energy.values, [[0.5, 1.0], [0.25, 0.0]])

    def test_max_dominance(self):
        rng = np.random.default_rng(10)
        a = self._field(rng.random((5, 5)))
        b = self._field(rng.random((5, 5)))
        fused = detect.fuse_energy(a, b)
        an = a.energy.values / a.energy.values.max()
        bn = b.energy.values / b.energy.values.max()
        assert (fused.energy.values == np.maximum(an, bn)).all()

    def test_kind_mismatch_rejected(self):
        a = self._field(np.ones((2, 2)), "edge")
        b = self._field(np.ones((2, 2)), "line")
        with pytest.raises(ValueError):
            detect.fuse_energy(a, b)

    def test_weak_edge_and_texture_both_fused(self, bank):
        # one scene half has a weak boundary (CFAR-friendly), the other a
        # bright scatterer grid (gradient-friendly); the fused map must
        # respond above half its maximum in both places
        layout = np.zeros((96, 96), np.int32)
        layout[:, 48:] = 1
        layout[20:24, 10:30] = 2
        mats = [synth.SURFACE, synth.SURFACE * synth.db_factor(3.0),
                synth.DIHEDRAL * synth.db_factor(14.0)]
        scene = synth.sample_wishart_scene(layout, mats, 8, seed=12)
        fields = detect.detector_fields(scene.image, bank)
        fused = detect.fuse_energy(fields["cfar_edge"], fields["grad_edge"])
        e = fused.energy.values
        assert e[18:26, 8:32].max() > 0.5
        assert e[40:60, 44:52].max() > 0.5


class TestNms:
    def _field(self, vals, orient=None):
        vals = np.asarray(vals, dtype=float)
        if orient is None:
            orient = np.zeros(vals.shape, np.int16)
        return detect.EnergyField(
            ScalarRaster(vals), orient, np.zeros(vals.shape, np.int16), "edge", 18
        )

    def test_single_impulse_kept(self):
        vals = np.zeros((5, 5))
        vals[2, 2] = 1.0
        kept = detect.nonmax_suppress(self._field(vals))
        assert kept[2, 2] and kept.sum() == 1

    def test_plateau_with_interior_max(self):
        # orientation 0 (horizontal edge): normal is vertical
        vals = np.zeros((5, 5))
        vals[1, 2], vals[2, 2], vals[3, 2] = 0.5, 1.0, 0.5
        kept = detect.nonmax_suppress(self._field(vals))
        assert kept[2, 2] and not kept[1, 2] and not kept[3, 2]

    def test_step_edge_one_pixel_thick(self, edge_scene, edge_hybrid):
        kept = detect.nonmax_suppress(edge_hybrid)
        near = kept[:, 60:69]
        rows_with_thin_edge = 0
        for y in range(near.shape[0]):
            xs = np.nonzero(near[y])[0]
            runs = np.split(xs, np.nonzero(np.diff(xs) > 1)[0] + 1) if len(xs) else []
            if runs and max(len(r) for r in runs) <= 1:
                rows_with_thin_edge += 1
        assert rows_with_thin_edge / near.shape[0] >= 0.95

    def test_idempotent(self, edge_hybrid):
        kept = detect.nonmax_suppress(edge_hybrid)
        masked = detect.EnergyField(
            ScalarRaster(edge_hybrid.energy.values * kept),
            edge_hybrid.orientation,
            edge_hybrid.scale,
            edge_hybrid.kind,
            edge_hybrid.n_orientations,
        )
        again = detect.nonmax_suppress(masked)
        assert (again == kept).all()
