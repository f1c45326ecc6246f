"""Coherency-matrix rasters, derived power products, multilooking, and file I/O.

The per-pixel statistic everywhere in this package is the 3x3 Hermitian
positive-semidefinite coherency matrix in linear power units, together with
the effective number of looks of the image. All operations are pure: they
return new objects and never mutate their inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHANNELS = 3

HERMITIAN_RTOL = 1e-9
PSD_EIG_TOL = 1e-9

_MAGIC = b"PTCIMG01"

# PolSARpro-style T3 directory layout: one little-endian float32 plane per
# independent matrix element.
_T3_PLANES = (
    "T11.bin",
    "T12_real.bin",
    "T12_imag.bin",
    "T13_real.bin",
    "T13_imag.bin",
    "T22.bin",
    "T23_real.bin",
    "T23_imag.bin",
    "T33.bin",
)


class RasterIOError(IOError):
    """Raised for malformed or truncated raster files."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ScalarRaster:
    """A real-valued 2-D raster. Values must be finite."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError("scalar raster must be 2-D")
        if not np.isfinite(vals).all():
            raise ValueError("scalar raster contains non-finite values")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class CoherencyImage:
    """Raster of 3x3 Hermitian PSD coherency matrices plus an effective look count.

    ``data`` has shape (height, width, 3, 3), complex128, row-major. Every
    matrix must equal its conjugate transpose to within ``HERMITIAN_RTOL``
    relative tolerance, have real non-negative diagonal entries, and be PSD
    to within a small negative eigenvalue tolerance.
    """

    data: np.ndarray
    looks: float

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.complex128)
        if arr.ndim != 4 or arr.shape[2:] != (CHANNELS, CHANNELS):
            raise ValueError("coherency data must have shape (H, W, 3, 3)")
        if self.looks < 1:
            raise ValueError("look count must be >= 1")
        scale = np.maximum(np.abs(arr).max(axis=(2, 3)), 1.0)
        herm_gap = np.abs(arr - arr.conj().swapaxes(2, 3)).max(axis=(2, 3))
        if (herm_gap > HERMITIAN_RTOL * scale).any():
            raise ValueError("matrix is not Hermitian within tolerance")
        diag = np.diagonal(arr, axis1=2, axis2=3)
        if (diag.real < -PSD_EIG_TOL * scale[..., None]).any():
            raise ValueError("negative diagonal entry")
        eigs = np.linalg.eigvalsh(arr)
        if (eigs[..., 0] < -PSD_EIG_TOL * scale).any():
            raise ValueError("matrix is not positive semidefinite within tolerance")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]


def hermitianize(arr: np.ndarray) -> np.ndarray:
    """Replace each matrix by (T + T^H)/2, forcing the diagonal real."""
    out = 0.5 * (arr + arr.conj().swapaxes(-1, -2))
    ii = np.arange(CHANNELS)
    out[..., ii, ii] = out[..., ii, ii].real
    return out


def span(img: CoherencyImage) -> ScalarRaster:
    """Total backscattered power: the matrix trace, per pixel."""
    tr = np.trace(img.data, axis1=2, axis2=3).real
    return ScalarRaster(np.maximum(tr, 0.0))


def pauli_rgb(img: CoherencyImage, clip_percentile: float = 0.99):
    """Log-scaled Pauli power channels normalized to [0, 1].

    Channel mapping is R = T22, G = T33, B = T11. Each channel is
    log-transformed over its positive support, clipped at the requested
    upper percentile, and affinely mapped so the clip point is 1 and the
    channel minimum is 0. Returns (r, g, b) ScalarRasters.
    """
    if not 0.5 < clip_percentile <= 1.0:
        raise ValueError("clip percentile must lie in (0.5, 1.0]")
    t11 = img.data[:, :, 0, 0].real
    t22 = img.data[:, :, 1, 1].real
    t33 = img.data[:, :, 2, 2].real
    return tuple(_log_normalize(c, clip_percentile) for c in (t22, t33, t11))


def _log_normalize(vals: np.ndarray, q: float) -> ScalarRaster:
    out = np.zeros_like(vals, dtype=np.float64)
    pos = vals > 0
    if not pos.any():
        return ScalarRaster(out)
    lv = np.log(vals[pos])
    lo = lv.min()
    hi = np.quantile(lv, q)
    if hi <= lo:
        out[pos] = 1.0
        return ScalarRaster(out)
    out[pos] = np.clip((lv - lo) / (hi - lo), 0.0, 1.0)
    return ScalarRaster(out)


def multilook(img: CoherencyImage, az: int, rg: int) -> CoherencyImage:
    """Average az x rg pixel blocks, multiplying the look count accordingly.

    Trailing rows/columns that do not fill a block are dropped, so the look
    count of every output pixel is exactly ``looks * az * rg``.
    """
    if az < 1 or rg < 1:
        raise ValueError("multilook factors must be >= 1")
    h, w = img.shape
    if az > h or rg > w:
        raise ValueError("block exceeds image")
    nh, nw = h // az, w // rg
    block = img.data[: nh * az, : nw * rg]
    block = block.reshape(nh, az, nw, rg, CHANNELS, CHANNELS)
    mean = block.mean(axis=(1, 3))
    return CoherencyImage(hermitianize(mean), img.looks * az * rg)


# ---------------------------------------------------------------------------
# Container format: little-endian magic + u32 dims + f64 looks + complex128
# pixel data. Chosen so save/load round trips are bit-exact.

def save_image(path, img: CoherencyImage) -> None:
    path = Path(path)
    payload = np.ascontiguousarray(img.data, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IId", img.width, img.height, float(img.looks)))
        fh.write(payload.tobytes())


def load_image(path, format: str = "container", looks: float = 1.0) -> CoherencyImage:
    """Load a coherency image from the container format or a T3 directory.

    Off-diagonal round-off from foreign writers is repaired by Hermitian
    symmetrization before validation. ``looks`` is only used for the T3
    layout, which does not record it.
    """
    if format == "container":
        return _load_container(Path(path))
    if format == "t3":
        return load_t3(Path(path), looks=looks)
    raise ValueError(f"unknown image format: {format!r}")


def _load_container(path: Path) -> CoherencyImage:
    raw = path.read_bytes()
    head = len(_MAGIC) + struct.calcsize("<IId")
    if len(raw) < head or raw[: len(_MAGIC)] != _MAGIC:
        raise RasterIOError(f"{path}: not a coherency container")
    w, h, looks = struct.unpack_from("<IId", raw, len(_MAGIC))
    need = head + w * h * CHANNELS * CHANNELS * 16
    if len(raw) != need:
        raise RasterIOError(f"{path}: truncated or oversized container")
    data = np.frombuffer(raw[head:], dtype="<c16").reshape(h, w, CHANNELS, CHANNELS)
    return CoherencyImage(hermitianize(data.astype(np.complex128)), looks)


def save_t3(dirpath, img: CoherencyImage) -> None:
    """Write the 9-plane T3 directory layout plus a minimal config.txt."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    t = img.data
    planes = {
        "T11.bin": t[:, :, 0, 0].real,
        "T12_real.bin": t[:, :, 0, 1].real,
        "T12_imag.bin": t[:, :, 0, 1].imag,
        "T13_real.bin": t[:, :, 0, 2].real,
        "T13_imag.bin": t[:, :, 0, 2].imag,
        "T22.bin": t[:, :, 1, 1].real,
        "T23_real.bin": t[:, :, 1, 2].real,
        "T23_imag.bin": t[:, :, 1, 2].imag,
        "T33.bin": t[:, :, 2, 2].real,
    }
    for name, plane in planes.items():
        (d / name).write_bytes(np.ascontiguousarray(plane, dtype="<f4").tobytes())
    (d / "config.txt").write_text(
        f"Nrow\n{img.height}\n---------\nNcol\n{img.width}\n"
    )


def load_t3(dirpath, looks: float = 1.0) -> CoherencyImage:
    d = Path(dirpath)
    h, w = _read_t3_config(d / "config.txt")
    vals = []
    for name in _T3_PLANES:
        p = d / name
        if not p.exists():
            raise RasterIOError(f"{p}: missing T3 plane")
        raw = np.frombuffer(p.read_bytes(), dtype="<f4")
        if raw.size != h * w:
            raise RasterIOError(f"{p}: inconsistent planes")
        vals.append(raw.reshape(h, w).astype(np.float64))
    t11, t12r, t12i, t13r, t13i, t22, t23r, t23i, t33 = vals
    data = np.zeros((h, w, CHANNELS, CHANNELS), dtype=np.complex128)
    data[:, :, 0, 0] = t11
    data[:, :, 1, 1] = t22
    data[:, :, 2, 2] = t33
    data[:, :, 0, 1] = t12r + 1j * t12i
    data[:, :, 0, 2] = t13r + 1j * t13i
    data[:, :, 1, 2] = t23r + 1j * t23i
    data[:, :, 1, 0] = data[:, :, 0, 1].conj()
    data[:, :, 2, 0] = data[:, :, 0, 2].conj()
    data[:, :, 2, 1] = data[:, :, 1, 2].conj()
    return CoherencyImage(hermitianize(data), looks)


def _read_t3_config(path: Path) -> tuple[int, int]:
    if not path.exists():
        raise RasterIOError(f"{path}: missing T3 config")
    tokens = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    dims = {}
    for i, tok in enumerate(tokens):
        if tok in ("Nrow", "Ncol") and i + 1 < len(tokens):
            dims[tok] = int(tokens[i + 1])
    if "Nrow" not in dims or "Ncol" not in dims:
        raise RasterIOError(f"{path}: config lacks Nrow/Ncol")
    return dims["Nrow"], dims["Ncol"]


# ---------------------------------------------------------------------------
# Lossless 8/16-bit raster export (binary PGM/PPM).

def write_pgm(path, arr: np.ndarray) -> None:
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError("PGM output must be 2-D")
    if a.max(initial=0) > 255:
        a = a.astype(">u2")
        maxval = 65535
    else:
        a = a.astype(np.uint8)
        maxval = 255
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n{maxval}\n".encode())
        fh.write(a.tobytes())


def read_pgm(path) -> np.ndarray:
    data, maxval, shape = _read_pnm(path, b"P5", 1)
    dtype = ">u2" if maxval > 255 else np.uint8
    return np.frombuffer(data, dtype=dtype).reshape(shape).astype(np.int64)


def write_ppm(path, rgb: np.ndarray) -> None:
    a = np.asarray(rgb)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError("PPM output must have shape (H, W, 3)")
    a = np.clip(a, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{a.shape[1]} {a.shape[0]}\n255\n".encode())
        fh.write(a.tobytes())


def read_ppm(path) -> np.ndarray:
    data, _, shape = _read_pnm(path, b"P6", 3)
    return np.frombuffer(data, dtype=np.uint8).reshape(shape + (3,)).astype(np.int64)


def _read_pnm(path, magic: bytes, depth: int):
    raw = Path(path).read_bytes()
    if not raw.startswith(magic):
        raise RasterIOError(f"{path}: bad PNM magic")
    fields, pos = [], len(magic)
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1
    w, h, maxval = fields
    itemsize = 2 if maxval > 255 else 1
    need = w * h * depth * itemsize
    body = raw[pos : pos + need]
    if len(body) != need:
        raise RasterIOError(f"{path}: truncated PNM body")
    return body, maxval, (h, w)


def to_gray(raster: ScalarRaster, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Map a scalar raster to uint8 [0, 255] with an affine stretch."""
    v = raster.values
    lo = float(v.min()) if lo is None else lo
    hi = float(v.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.clip(np.round(255.0 * (v - lo) / (hi - lo)), 0, 255).astype(np.uint8)


def palette_map(labels: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Apply an (n, 3) uint8 palette to an integer label raster."""
    pal = np.asarray(palette, dtype=np.uint8)
    lab = np.asarray(labels, dtype=np.int64)
    if lab.min(initial=0) < 0 or lab.max(initial=0) >= len(pal):
        raise ValueError("label outside palette range")
    return pal[lab]


def label_palette(n: int, seed: int = 0) -> np.ndarray:
    """Deterministic random palette for label rasters, index 0 is dark."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    pal = rng.integers(40, 256, size=(max(n, 1), 3), dtype=np.int64)
    pal[0] = (20, 20, 20)
    return pal.astype(np.uint8)
