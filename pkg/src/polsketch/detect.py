"""Multi-scale oriented edge and line detection on coherency rasters.

Two detectors run over a shared bank of oriented, anisotropically
Gaussian-weighted windows:

* a CFAR detector that scores the Wishart likelihood-ratio separation
  between the weighted mean coherencies of the window regions, and
* a log-magnitude gradient detector on the 9-real-vectorized matrices,
  which keeps responding inside heterogeneous clutter where the window
  homogeneity assumption breaks down.

Each window has three pixel sets: two mirrored side regions and a central
strip. Edge energy tests side against side; line (ridge) energy takes the
weaker of the two center-versus-side tests so that only a strip flanked by
two genuine transitions scores high. Per-pixel energies are maximized over
all scales and orientations. The two detectors are fused after per-field
max-normalization, and non-maxima suppression along the winning normal
produces the binary edge raster handed to sketch pursuit.

Field functions evaluate every pixel at once through FFT correlation with
mirror padding; the per-pixel entry points recompute windows directly and
double as independent cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rasters import CHANNELS, CoherencyImage, ScalarRaster

DET_FLOOR = 1e-300
GRAD_EPS = 1e-12


@dataclass(frozen=True)
class OrientedWindow:
    """Offsets and normalized Gaussian weights for one (scale, orientation).

    ``side2`` is the point reflection of ``side1`` through the window
    center, which mirrors it across the oriented axis exactly (the weight
    profile is even along the axis), so the two sides always carry equal
    effective look counts.
    """

    scale: float
    orientation_deg: float
    side1: np.ndarray  # (n, 2) int offsets (dx, dy)
    side2: np.ndarray
    center: np.ndarray
    w_side: np.ndarray  # weights, shared by both sides
    w_center: np.ndarray
    eff_side: float  # equivalent independent-sample count, 1 / sum(w^2)
    eff_center: float


@dataclass(frozen=True)
class FilterBank:
    scales: tuple
    n_orientations: int
    windows: tuple  # (n_scales * n_orientations,) OrientedWindow, scale-major

    @property
    def max_reach(self) -> int:
        return int(
            max(
                max(np.abs(w.side1).max(), np.abs(w.center).max(initial=0))
                for w in self.windows
            )
        )

    def window(self, scale_idx: int, orient_idx: int) -> OrientedWindow:
        return self.windows[scale_idx * self.n_orientations + orient_idx]

    def orientation_deg(self, orient_idx: int) -> float:
        return 180.0 * orient_idx / self.n_orientations


def build_filter_bank(scales=(2.0, 3.0, 4.0), n_orientations: int = 18) -> FilterBank:
    """Construct the window bank.

    The along-axis deviation is the scale itself and the across-axis
    deviation is a third of it, both truncated at three deviations, which
    gives elongated windows roughly 6*scale long and 2*scale wide.
    """
    windows = []
    for s in scales:
        for k in range(n_orientations):
            theta = np.deg2rad(180.0 * k / n_orientations)
            windows.append(_build_window(float(s), theta, 180.0 * k / n_orientations))
    return FilterBank(tuple(float(s) for s in scales), int(n_orientations), tuple(windows))


def _build_window(s: float, theta: float, theta_deg: float) -> OrientedWindow:
    sigma_a, sigma_c = s, s / 3.0
    reach = int(np.ceil(3.0 * sigma_a))
    ux, uy = np.cos(theta), np.sin(theta)
    dx, dy = np.meshgrid(np.arange(-reach, reach + 1), np.arange(-reach, reach + 1))
    a = dx * ux + dy * uy
    c = -dx * uy + dy * ux
    inside = (np.abs(a) <= 3.0 * sigma_a + 1e-9) & (np.abs(c) <= 3.0 * sigma_c + 1e-9)
    w = np.exp(-(a**2) / (2 * sigma_a**2) - (c**2) / (2 * sigma_c**2))

    # the center strip grows with the across deviation: small scales act as
    # tight edge detectors while large scales can straddle a line object
    # whole, leaving their flanks fully off the line
    half_width = max(0.5, sigma_c)
    side_mask = inside & (c > half_width)
    center_mask = inside & (np.abs(c) <= half_width)
    if not side_mask.any() or not center_mask.any():
        raise ValueError("degenerate filter")

    side1 = np.stack([dx[side_mask], dy[side_mask]], axis=1).astype(np.int64)
    w_side = w[side_mask]
    order = np.lexsort((side1[:, 0], side1[:, 1]))
    side1, w_side = side1[order], w_side[order]
    w_side = w_side / w_side.sum()

    center = np.stack([dx[center_mask], dy[center_mask]], axis=1).astype(np.int64)
    w_center = w[center_mask]
    order = np.lexsort((center[:, 0], center[:, 1]))
    center, w_center = center[order], w_center[order]
    w_center = w_center / w_center.sum()

    return OrientedWindow(
        scale=s,
        orientation_deg=theta_deg,
        side1=side1,
        side2=-side1,
        center=center,
        w_side=w_side,
        w_center=w_center,
        eff_side=float(1.0 / np.sum(w_side**2)),
        eff_center=float(1.0 / np.sum(w_center**2)),
    )


def effective_looks(image_looks: float, eff_count: float) -> float:
    return max(1.0, round(image_looks * eff_count))


@dataclass(frozen=True)
class EnergyField:
    """Per-pixel detection energy with the winning orientation and scale."""

    energy: ScalarRaster
    orientation: np.ndarray  # per-pixel orientation index
    scale: np.ndarray  # per-pixel scale index
    kind: str  # "edge", "line", or "hybrid"
    n_orientations: int

    def orientation_deg(self, y: int, x: int) -> float:
        return 180.0 * self.orientation[y, x] / self.n_orientations


# ---------------------------------------------------------------------------
# Wishart likelihood-ratio machinery.


def box_rho(n: float, m: float, p: int = CHANNELS) -> float:
    """Box correction factor for the two-sample Wishart likelihood ratio."""
    return 1.0 - (2.0 * p * p - 1.0) / (6.0 * p) * (1.0 / n + 1.0 / m - 1.0 / (n + m))


def _loaded_logdet(z: np.ndarray) -> float:
    sign, ld = np.linalg.slogdet(z)
    if sign > 0 and np.isfinite(ld) and ld > np.log(DET_FLOOR):
        return float(ld)
    load = 1e-10 * max(np.trace(z).real / CHANNELS, DET_FLOOR)
    sign, ld = np.linalg.slogdet(z + load * np.eye(CHANNELS))
    if sign > 0 and np.isfinite(ld):
        return float(ld)
    return float(np.log(DET_FLOOR))


def wishart_log_ratio(zi: np.ndarray, zj: np.ndarray, n: float, m: float, p: int = CHANNELS) -> float:
    """Log likelihood ratio for equality of two Wishart-mean coherencies.

    Equals p(n+m)ln(n+m) - pn ln n - pm ln m + n ln|Zi| + m ln|Zj|
    - (n+m) ln|Zi+Zj|, computed against the midpoint matrix so the result
    is exactly zero for identical inputs with n == m. Always <= 0.
    """
    zm = 0.5 * (zi + zj)
    li = _loaded_logdet(zi)
    lj = _loaded_logdet(zj)
    lm = _loaded_logdet(zm)
    if n == m:
        const = 0.0
    else:
        t = n + m
        const = p * (t * np.log(t) - n * np.log(n) - m * np.log(m) - t * np.log(2.0))
    q = n * (li - lm) + m * (lj - lm) + const
    return min(q, 0.0)


def weighted_mean_coherency(img: CoherencyImage, offsets: np.ndarray, weights: np.ndarray, center) -> np.ndarray:
    """Gaussian-weighted mean matrix over offset pixels, mirror-padded at borders."""
    offsets = np.asarray(offsets)
    if offsets.size == 0:
        raise ValueError("degenerate filter")
    cx, cy = center
    h, w = img.shape
    xs = _reflect_index(cx + offsets[:, 0], w)
    ys = _reflect_index(cy + offsets[:, 1], h)
    gathered = img.data[ys, xs]
    return np.tensordot(np.asarray(weights), gathered, axes=(0, 0))


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    # np.pad(mode="reflect") convention: abc -> cb|abc|ba
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def _pair_energy(z1, z2, n, m) -> float:
    rho = box_rho(n, m)
    return max(0.0, -2.0 * rho * wishart_log_ratio(z1, z2, n, m))


def cfar_edge_energy(img: CoherencyImage, bank: FilterBank, pixel):
    """Best side-versus-side CFAR energy at one pixel.

    Returns (energy, orientation index, scale index).
    """
    best = (0.0, 0, 0)
    for si in range(len(bank.scales)):
        for oi in range(bank.n_orientations):
            win = bank.window(si, oi)
            n = effective_looks(img.looks, win.eff_side)
            z1 = weighted_mean_coherency(img, win.side1, win.w_side, pixel)
            z2 = weighted_mean_coherency(img, win.side2, win.w_side, pixel)
            e = _pair_energy(z1, z2, n, n)
            if e > best[0]:
                best = (e, oi, si)
    return best


def cfar_line_energy(img: CoherencyImage, bank: FilterBank, pixel):
    """Best center-versus-flanks CFAR ridge energy at one pixel.

    The ridge score of one window is the smaller of the two
    center-versus-side energies, so both flanks must differ from the strip.
    Every test within a filter uses one common look count (the side value),
    keeping the ratio exactly zero on statistically flat input.
    Returns (energy, orientation index, scale index).
    """
    best = (0.0, 0, 0)
    for si in range(len(bank.scales)):
        for oi in range(bank.n_orientations):
            win = bank.window(si, oi)
            n = effective_looks(img.looks, win.eff_side)
            zc = weighted_mean_coherency(img, win.center, win.w_center, pixel)
            z1 = weighted_mean_coherency(img, win.side1, win.w_side, pixel)
            z2 = weighted_mean_coherency(img, win.side2, win.w_side, pixel)
            e = min(_pair_energy(zc, z1, n, n), _pair_energy(zc, z2, n, n))
            if e > best[0]:
                best = (e, oi, si)
    return best


def matrix_vector(t: np.ndarray) -> np.ndarray:
    """9-real vectorization: 3 diagonal powers then re/im of the 3 upper off-diagonals."""
    t = np.asarray(t)
    parts = [
        t[..., 0, 0].real,
        t[..., 1, 1].real,
        t[..., 2, 2].real,
        t[..., 0, 1].real,
        t[..., 0, 1].imag,
        t[..., 0, 2].real,
        t[..., 0, 2].imag,
        t[..., 1, 2].real,
        t[..., 1, 2].imag,
    ]
    return np.stack(parts, axis=-1)


def gradient_energy(img: CoherencyImage, bank: FilterBank, pixel):
    """Log-magnitude gradient energies (edge, ridge) at one pixel.

    The raw value is ln(eps + ||V1 - V2||), shifted by -ln(eps) so a
    perfectly flat neighborhood scores exactly 0.
    """
    shift = -np.log(GRAD_EPS)
    best_e, best_r = 0.0, 0.0
    for si in range(len(bank.scales)):
        for oi in range(bank.n_orientations):
            win = bank.window(si, oi)
            v1 = matrix_vector(weighted_mean_coherency(img, win.side1, win.w_side, pixel))
            v2 = matrix_vector(weighted_mean_coherency(img, win.side2, win.w_side, pixel))
            vc = matrix_vector(weighted_mean_coherency(img, win.center, win.w_center, pixel))
            g12 = np.log(GRAD_EPS + np.linalg.norm(v1 - v2)) + shift
            gc1 = np.log(GRAD_EPS + np.linalg.norm(vc - v1)) + shift
            gc2 = np.log(GRAD_EPS + np.linalg.norm(vc - v2)) + shift
            best_e = max(best_e, g12)
            best_r = max(best_r, min(gc1, gc2))
    return best_e, best_r


# ---------------------------------------------------------------------------
# Whole-field computation. One FFT per unique matrix channel per window
# region gives the weighted mean coherency of every pixel at once.


def _hermitian_logdet3(z: np.ndarray) -> np.ndarray:
    """Vectorized log-determinant of Hermitian 3x3 stacks with diagonal loading."""
    a = z[..., 0, 0].real
    b = z[..., 1, 1].real
    c = z[..., 2, 2].real
    d = z[..., 0, 1]
    e = z[..., 0, 2]
    f = z[..., 1, 2]
    det = (
        a * b * c
        - a * np.abs(f) ** 2
        - b * np.abs(e) ** 2
        - c * np.abs(d) ** 2
        + 2.0 * (d * f * e.conj()).real
    )
    bad = ~(det > DET_FLOOR)
    if bad.any():
        load = 1e-10 * np.maximum((a + b + c) / CHANNELS, 1.0)[bad]
        ab, bb, cb = a[bad] + load, b[bad] + load, c[bad] + load
        det_b = (
            ab * bb * cb
            - ab * np.abs(f[bad]) ** 2
            - bb * np.abs(e[bad]) ** 2
            - cb * np.abs(d[bad]) ** 2
            + 2.0 * (d[bad] * f[bad] * e[bad].conj()).real
        )
        det = det.copy()
        det[bad] = np.maximum(det_b, DET_FLOOR)
    return np.log(det)


class _FieldCorrelator:
    """Caches padded-image FFTs and evaluates window-region weighted means."""

    def __init__(self, img: CoherencyImage, pad: int):
        self.h, self.w = img.shape
        self.pad = pad
        padded = np.pad(img.data, ((pad, pad), (pad, pad), (0, 0), (0, 0)), mode="reflect")
        self.ph, self.pw = padded.shape[:2]
        # 6 unique channels of a Hermitian matrix
        self.idx = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
        self.ffts = [np.fft.fft2(padded[:, :, i, j]) for (i, j) in self.idx]

    def region_mean(self, offsets: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """(H, W, 3, 3) weighted mean coherency for every pixel."""
        kernel = np.zeros((self.ph, self.pw))
        kernel[offsets[:, 1] % self.ph, offsets[:, 0] % self.pw] = weights
        kf = np.fft.fft2(kernel).conj()
        out = np.empty((self.h, self.w, CHANNELS, CHANNELS), dtype=np.complex128)
        sl = (slice(self.pad, self.pad + self.h), slice(self.pad, self.pad + self.w))
        for (i, j), f in zip(self.idx, self.ffts):
            plane = np.fft.ifft2(f * kf)[sl]
            out[:, :, i, j] = plane
            if i != j:
                out[:, :, j, i] = plane.conj()
        for k in range(CHANNELS):
            out[:, :, k, k] = out[:, :, k, k].real
        return out


def _pair_energy_field(z1, z2, n, m) -> np.ndarray:
    zm = 0.5 * (z1 + z2)
    l1 = _hermitian_logdet3(z1)
    l2 = _hermitian_logdet3(z2)
    lm = _hermitian_logdet3(zm)
    if n == m:
        const = 0.0
    else:
        t = n + m
        const = CHANNELS * (t * np.log(t) - n * np.log(n) - m * np.log(m) - t * np.log(2.0))
    q = np.minimum(n * (l1 - lm) + m * (l2 - lm) + const, 0.0)
    return np.maximum(0.0, -2.0 * box_rho(n, m) * q)


def detector_fields(img: CoherencyImage, bank: FilterBank) -> dict:
    """Evaluate both detectors at every pixel.

    Returns a dict with EnergyFields under keys "cfar_edge", "cfar_line",
    "grad_edge", and "grad_line".
    """
    h, w = img.shape
    corr = _FieldCorrelator(img, bank.max_reach)
    shift = -np.log(GRAD_EPS)

    fields = {}
    for key in ("cfar_edge", "cfar_line", "grad_edge", "grad_line"):
        fields[key] = (np.zeros((h, w)), np.zeros((h, w), np.int16), np.zeros((h, w), np.int16))

    for si in range(len(bank.scales)):
        for oi in range(bank.n_orientations):
            win = bank.window(si, oi)
            z1 = corr.region_mean(win.side1, win.w_side)
            z2 = corr.region_mean(win.side2, win.w_side)
            zc = corr.region_mean(win.center, win.w_center)
            n_s = effective_looks(img.looks, win.eff_side)

            e_edge = _pair_energy_field(z1, z2, n_s, n_s)
            e_line = np.minimum(
                _pair_energy_field(zc, z1, n_s, n_s), _pair_energy_field(zc, z2, n_s, n_s)
            )
            v1 = matrix_vector(z1)
            v2 = matrix_vector(z2)
            vc = matrix_vector(zc)
            g_edge = np.log(GRAD_EPS + np.linalg.norm(v1 - v2, axis=-1)) + shift
            g_line = np.minimum(
                np.log(GRAD_EPS + np.linalg.norm(vc - v1, axis=-1)) + shift,
                np.log(GRAD_EPS + np.linalg.norm(vc - v2, axis=-1)) + shift,
            )
            for key, e in (
                ("cfar_edge", e_edge),
                ("cfar_line", e_line),
                ("grad_edge", g_edge),
                ("grad_line", g_line),
            ):
                acc, ori, sc = fields[key]
                better = e > acc
                acc[better] = e[better]
                ori[better] = oi
                sc[better] = si

    out = {}
    for key, (acc, ori, sc) in fields.items():
        kind = "edge" if key.endswith("edge") else "line"
        out[key] = EnergyField(ScalarRaster(acc), ori, sc, kind, bank.n_orientations)
    return out


def fuse_energy(cfar: EnergyField, grad: EnergyField) -> EnergyField:
    """Max-combine two fields after normalizing each by its global maximum.

    An all-zero input passes the other field through (normalized). The
    winning orientation and scale follow the larger normalized contributor;
    ties go to the first field.
    """
    if cfar.kind != grad.kind:
        raise ValueError("cannot fuse fields of different kinds")
    if cfar.energy.values.shape != grad.energy.values.shape:
        raise ValueError("cannot fuse fields of different shapes")
    a = cfar.energy.values
    b = grad.energy.values
    an = a / a.max() if a.max() > 0 else np.zeros_like(a)
    bn = b / b.max() if b.max() > 0 else np.zeros_like(b)
    fused = np.maximum(an, bn)
    take_b = bn > an
    ori = np.where(take_b, grad.orientation, cfar.orientation).astype(np.int16)
    sc = np.where(take_b, grad.scale, cfar.scale).astype(np.int16)
    return EnergyField(ScalarRaster(fused), ori, sc, cfar.kind, cfar.n_orientations)


def hybrid_energy(edge: EnergyField, line: EnergyField) -> EnergyField:
    """Pointwise max of the fused edge and fused line fields."""
    a = edge.energy.values
    b = line.energy.values
    take_b = b > a
    ori = np.where(take_b, line.orientation, edge.orientation).astype(np.int16)
    sc = np.where(take_b, line.scale, edge.scale).astype(np.int16)
    return EnergyField(
        ScalarRaster(np.maximum(a, b)), ori, sc, "hybrid", edge.n_orientations
    )


def nonmax_suppress(field: EnergyField) -> np.ndarray:
    """Keep pixels that are strict maxima along the normal to their winning
    orientation. Returns a boolean edge raster at most one pixel wide
    across the normal."""
    e = field.energy.values
    h, w = e.shape
    padded = np.full((h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1] = e
    keep = np.zeros((h, w), dtype=bool)
    for oi in range(field.n_orientations):
        sel = field.orientation == oi
        if not sel.any():
            continue
        normal = np.deg2rad(180.0 * oi / field.n_orientations + 90.0)
        ox = int(np.round(np.cos(normal)))
        oy = int(np.round(np.sin(normal)))
        fwd = padded[1 + oy : 1 + oy + h, 1 + ox : 1 + ox + w]
        back = padded[1 - oy : 1 - oy + h, 1 - ox : 1 - ox + w]
        keep |= sel & (e > fwd) & (e > back) & (e > 0)
    return keep
