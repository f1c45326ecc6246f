"""Synthetic complex-Wishart scene generation.

Every pixel of a scene is the multilook average (1/n) sum_k z z^H of n
complex circular Gaussian draws whose covariance is the pixel's class
matrix, which is exactly the statistical model the detection and merging
stages assume. Each pixel draws from its own counter-based RNG stream keyed
by (seed, x, y), so regeneration is bit-identical and independent of
evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rasters import CHANNELS, CoherencyImage, hermitianize

_MASK32 = (1 << 32) - 1
_MASK64 = (1 << 64) - 1

# Class covariance presets with distinct eigenstructure. Power is spread so
# single-channel dominance maps to well-separated scattering zones.
SURFACE = np.array(
    [
        [1.00, 0.35 + 0.10j, 0.06 - 0.02j],
        [0.35 - 0.10j, 0.30, 0.04 + 0.01j],
        [0.06 + 0.02j, 0.04 - 0.01j, 0.15],
    ],
    dtype=np.complex128,
)

DIHEDRAL = np.array(
    [
        [0.25, 0.10 - 0.05j, 0.02 + 0.01j],
        [0.10 + 0.05j, 1.00, 0.08 + 0.03j],
        [0.02 - 0.01j, 0.08 - 0.03j, 0.20],
    ],
    dtype=np.complex128,
)

VOLUME = np.array(
    [
        [0.45, 0.05 + 0.02j, 0.01 - 0.01j],
        [0.05 - 0.02j, 0.40, 0.03 + 0.02j],
        [0.01 + 0.01j, 0.03 - 0.02j, 0.38],
    ],
    dtype=np.complex128,
)


def db_factor(contrast_db: float) -> float:
    return 10.0 ** (contrast_db / 10.0)


@dataclass(frozen=True)
class SyntheticScene:
    image: CoherencyImage
    truth: np.ndarray
    class_matrices: list
    seed: int

    def __post_init__(self):
        truth = np.asarray(self.truth, dtype=np.int32)
        if truth.shape != self.image.shape:
            raise ValueError("truth raster shape mismatch")
        if truth.min() < 0 or truth.max() >= len(self.class_matrices):
            raise ValueError("truth label without class matrix")
        truth = truth.copy()
        truth.setflags(write=False)
        object.__setattr__(self, "truth", truth)


def _pixel_rng(seed: int, x: int, y: int) -> np.random.Generator:
    key = ((seed & _MASK64) << 64) | ((y & _MASK32) << 32) | (x & _MASK32)
    return np.random.Generator(np.random.Philox(key=key))


def _class_factor(c: np.ndarray) -> np.ndarray | None:
    """Cholesky factor of a class covariance, or None for the zero matrix."""
    c = np.asarray(c, dtype=np.complex128)
    if c.shape != (CHANNELS, CHANNELS):
        raise ValueError("invalid covariance: wrong shape")
    scale = max(np.abs(c).max(), 1.0)
    if np.abs(c - c.conj().T).max() > 1e-9 * scale:
        raise ValueError("invalid covariance: not Hermitian")
    eigs = np.linalg.eigvalsh(hermitianize(c))
    if eigs[0] < -1e-9 * scale:
        raise ValueError("invalid covariance: not positive semidefinite")
    tr = np.trace(c).real
    if tr <= 0:
        return None
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        # Rank-deficient canonical target: tiny diagonal jitter keeps the
        # factorization exact up to 1e-12-scale leakage.
        jitter = 1e-12 * max(1.0, tr / CHANNELS)
        return np.linalg.cholesky(c + jitter * np.eye(CHANNELS))


def sample_wishart_scene(layout: np.ndarray, class_matrices, looks: int, seed: int) -> SyntheticScene:
    """Draw a multilook complex-Wishart scene over a class-id layout raster."""
    layout = np.asarray(layout, dtype=np.int32)
    if layout.ndim != 2:
        raise ValueError("layout must be 2-D")
    if looks < 1:
        raise ValueError("looks must be >= 1")
    mats = [np.asarray(m, dtype=np.complex128) for m in class_matrices]
    if layout.min() < 0 or layout.max() >= len(mats):
        raise ValueError("layout label without class matrix")
    factors = [_class_factor(m) for m in mats]

    h, w = layout.shape
    data = np.zeros((h, w, CHANNELS, CHANNELS), dtype=np.complex128)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for y in range(h):
        row = layout[y]
        for x in range(w):
            factor = factors[row[x]]
            if factor is None:
                continue
            rng = _pixel_rng(seed, x, y)
            z = rng.standard_normal((looks, CHANNELS)) + 1j * rng.standard_normal(
                (looks, CHANNELS)
            )
            v = (inv_sqrt2 * z) @ factor.T
            data[y, x] = (v.T @ v.conj()) / looks
    return SyntheticScene(
        image=CoherencyImage(hermitianize(data), float(looks)),
        truth=layout,
        class_matrices=mats,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Layout builders. Each returns (layout, class_matrices); class 0 is the
# background. Truth ids follow layout ids one-to-one.

def edge_layout(size: int, contrast_db: float = 6.0):
    """Two-class scene split by a vertical boundary at size // 2."""
    layout = np.zeros((size, size), dtype=np.int32)
    layout[:, size // 2 :] = 1
    return layout, [SURFACE, SURFACE * db_factor(contrast_db)]


def line_layout(size: int, contrast_db: float = 8.0, width: int = 3):
    """A bright horizontal line of the given width through the image center."""
    layout = np.zeros((size, size), dtype=np.int32)
    y0 = size // 2 - width // 2
    layout[y0 : y0 + width, :] = 1
    return layout, [VOLUME, SURFACE * db_factor(contrast_db)]


def _stamp_bar_grid(layout: np.ndarray, y0: int, x0: int, y1: int, x1: int,
                    value: int, cell: int = 10, bar: tuple = (4, 6)) -> None:
    """Bright oriented bars on a regular grid, alternating horizontal and
    vertical: the bright-dark texture of built-up areas. Bars are thick
    enough that a flank strip beside their edge stays inside them."""
    bh, bw = bar
    for j, by in enumerate(range(y0 + 1, y1 - max(bar), cell)):
        for i, bx in enumerate(range(x0 + 1, x1 - max(bar), cell)):
            if (i + j) % 2 == 0:
                layout[by : by + bh, bx : bx + bw] = value
            else:
                layout[by : by + bw, bx : bx + bh] = value


def dot_grid_layout(size: int, contrast_db: float = 12.0, cell: int = 12, bar: tuple = (6, 9)):
    """Grid of bright compact scatterers over a darker ground: an urban-like
    texture."""
    layout = np.zeros((size, size), dtype=np.int32)
    _stamp_bar_grid(layout, 0, 0, size, size, 1, cell=cell, bar=bar)
    return layout, [VOLUME, DIHEDRAL * db_factor(contrast_db)]


def mosaic_layout(size: int, n_classes: int = 3, contrast_db: float = 5.0):
    """Vertical strips cycling through structurally distinct class matrices."""
    if n_classes < 2:
        raise ValueError("mosaic needs at least 2 classes")
    layout = np.zeros((size, size), dtype=np.int32)
    strip = max(1, size // n_classes)
    for k in range(n_classes):
        x0 = k * strip
        x1 = size if k == n_classes - 1 else (k + 1) * strip
        layout[:, x0:x1] = k
    base = [SURFACE, DIHEDRAL, VOLUME]
    mats = [base[k % 3] * db_factor(contrast_db) ** (k // 3) for k in range(n_classes)]
    return layout, mats


def composite_layout(size: int = 144, bar_db: float = 12.0, line_db: float = 6.0, cell: int = 12):
    """Urban block plus one long bright line over a flat background.

    The built-up block sits inset from the image border (mirror padding
    would otherwise cancel the outermost scatterer edges), and the line is
    kept short enough that its significance does not stretch the
    line-selection histogram far past the block's scatterer edges. Truth
    ids: 0 background, 1 urban block (scatterers and gaps alike), 2 line.
    Pixel classes: 0 background, 1 urban gap, 2 urban scatterer, 3 line.
    """
    if size < 120:
        raise ValueError("composite scene needs size >= 120")
    inset, q1 = 6, 66
    layout = np.zeros((size, size), dtype=np.int32)
    layout[inset:q1, inset:q1] = 1
    _stamp_bar_grid(layout, inset, inset, q1, q1, 2, cell=cell, bar=(6, 9))
    y0, x0 = 3 * size // 4, size // 2
    layout[y0 : y0 + 4, x0 : x0 + 44] = 3
    mats = [
        SURFACE,
        VOLUME,
        DIHEDRAL * db_factor(bar_db),
        SURFACE * db_factor(line_db),
    ]
    truth = np.zeros_like(layout)
    truth[inset:q1, inset:q1] = 1
    truth[layout == 3] = 2
    return layout, mats, truth


def sweep_layout(size: int = 144, bar_db: float = 12.0):
    """Composite scene for parameter sweeps.

    Three large homogeneous zones meet along two long straight boundaries
    (the straightness rule marks those isolated, so the zones stay
    homogenous and give the hierarchical merge a real under-segmentation
    cost), plus the urban bar block, one bright line, and two small
    three-bar clusters straddling the zone boundaries. The clusters only
    survive segment grouping when the neighbor count is too small, which
    plants the low-K failure mode: their closed region then straddles two
    zones and majority voting flips the minority side.

    Pixel classes: 0/1/2 the zones, 3 urban gap, 4 urban scatterer, 5 line,
    6 cluster bar. Truth ids: 0/1/2 zones, 3 urban, 4 line; cluster bars
    inherit the zone they sit on.
    """
    if size < 132:
        raise ValueError("sweep scene needs size >= 132")
    xb = 2 * size // 3  # vertical zone boundary
    yb = 2 * size // 3  # horizontal zone boundary, left of xb
    layout = np.zeros((size, size), dtype=np.int32)
    layout[:, xb:] = 1
    layout[yb:, :xb] = 2
    zone_truth = layout.copy()
    inset, q1 = 6, 66
    layout[inset:q1, inset:q1] = 3
    _stamp_bar_grid(layout, inset, inset, q1, q1, 4, cell=12, bar=(6, 9))
    y0 = yb + (size - yb) // 2
    layout[y0 : y0 + 4, 14 : 14 + 44] = 5
    for cx, cy in ((xb, 36), (36, yb)):
        for k, (dy, dx) in enumerate(((-12, -6), (2, -3))):
            y, x = cy + dy, cx + dx
            if k % 2 == 0:
                layout[y : y + 6, x : x + 9] = 6
            else:
                layout[y : y + 9, x : x + 6] = 6

    mats = [
        SURFACE,
        DIHEDRAL,
        VOLUME * db_factor(6.0),
        VOLUME,
        DIHEDRAL * db_factor(bar_db),
        SURFACE * db_factor(11.0),
        DIHEDRAL * db_factor(bar_db),
    ]
    truth = zone_truth.copy()
    truth[inset:q1, inset:q1] = 3
    truth[layout == 5] = 4
    return layout, mats, truth
