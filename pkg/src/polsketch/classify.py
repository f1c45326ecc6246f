"""Scattering-mechanism classification: eigen decomposition into entropy and
mean scattering angle, zone initialization on the H/alpha plane, iterative
complex-Wishart reassignment, and region-level majority voting against a
segmentation map, plus confusion-matrix evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detect import _hermitian_logdet3
from .rasters import CHANNELS, CoherencyImage
from .segment import SegmentationMap

H_BOUNDS = (0.5, 0.9)
# alpha zone splits (degrees) per entropy band: low, medium, high
ALPHA_BOUNDS = ((42.5, 47.5), (40.0, 50.0), (40.0, 55.0))

MAX_ITER = 10
MIN_CHANGE = 0.001


@dataclass(frozen=True)
class HAlphaField:
    """Per-pixel eigenvalue entropy (log base 3) and mean scattering angle."""

    entropy: np.ndarray  # in [0, 1]
    alpha: np.ndarray  # degrees in [0, 90]


@dataclass(frozen=True)
class ClassMap:
    labels: np.ndarray  # per-pixel class id
    centers: np.ndarray  # (n_classes, 3, 3) mean coherencies

    @property
    def class_count(self) -> int:
        return len(self.centers)


def h_alpha(img: CoherencyImage) -> HAlphaField:
    """Eigen-decompose every matrix into pseudo-probabilities p_i = l_i/sum(l),
    entropy H = -sum p_i log3 p_i, and alpha as the p-weighted mean of
    arccos|e_i[0]|. Zero-power pixels decompose to (0, 0)."""
    vals, vecs = np.linalg.eigh(img.data)
    vals = np.maximum(vals[..., ::-1], 0.0)  # descending, clipped at 0
    vecs = vecs[..., ::-1]
    total = vals.sum(axis=-1)
    ok = total > 0
    p = np.zeros_like(vals)
    p[ok] = vals[ok] / total[ok, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    entropy = -plogp.sum(axis=-1) / np.log(3.0)
    entropy = np.clip(entropy, 0.0, 1.0)
    lead = np.clip(np.abs(vecs[..., 0, :]), 0.0, 1.0)  # |first component| per eigenvector
    alphas = np.degrees(np.arccos(lead))
    alpha = (p * alphas).sum(axis=-1)
    alpha = np.where(ok, np.clip(alpha, 0.0, 90.0), 0.0)
    entropy = np.where(ok, entropy, 0.0)
    return HAlphaField(entropy=entropy, alpha=alpha)


def zone_of(h: float, a: float, zones: int = 8) -> int:
    """Zone id on the H/alpha plane.

    Eight zones by default: the low-entropy high-alpha corner is folded
    into its mid-alpha neighbor. ``zones=9`` keeps it separate.
    """
    h1, h2 = H_BOUNDS
    if h < h1:
        band, (a1, a2) = 0, ALPHA_BOUNDS[0]
    elif h < h2:
        band, (a1, a2) = 1, ALPHA_BOUNDS[1]
    else:
        band, (a1, a2) = 2, ALPHA_BOUNDS[2]
    col = 0 if a < a1 else (1 if a < a2 else 2)
    zone = 3 * band + col
    if zones == 8 and band == 0 and col == 2:
        return 1  # fold into the low-entropy mid-alpha zone
    if zones == 8 and zone > 2:
        return zone - 1
    return zone


def init_zones(field: HAlphaField, zones: int = 8) -> ClassMap:
    """Pixelwise zone lookup; centers are left empty until the first
    Wishart center update."""
    h1, h2 = H_BOUNDS
    band = (field.entropy >= h1).astype(np.int64) + (field.entropy >= h2)
    a1 = np.choose(band, [b[0] for b in ALPHA_BOUNDS])
    a2 = np.choose(band, [b[1] for b in ALPHA_BOUNDS])
    col = (field.alpha >= a1).astype(np.int64) + (field.alpha >= a2)
    zone = 3 * band + col
    if zones == 8:
        zone = np.where((band == 0) & (col == 2), 1, zone)
        zone = np.where(zone > 2, zone - 1, zone)
    n = zones
    centers = np.zeros((n, CHANNELS, CHANNELS), dtype=np.complex128)
    return ClassMap(labels=zone.astype(np.int32), centers=centers)


def class_centers(img: CoherencyImage, labels: np.ndarray, n: int) -> np.ndarray:
    sums = np.zeros((n, CHANNELS, CHANNELS), dtype=np.complex128)
    np.add.at(sums, labels.ravel(), img.data.reshape(-1, CHANNELS, CHANNELS))
    counts = np.bincount(labels.ravel(), minlength=n)
    centers = sums.copy()
    nz = counts > 0
    centers[nz] /= counts[nz, None, None]
    return centers


def wishart_distance(img: CoherencyImage, center: np.ndarray) -> np.ndarray:
    """Per-pixel d(T, V) = ln|V| + tr(V^-1 T); singular centers are
    diagonally loaded."""
    ld = _hermitian_logdet3(center[None, ...])[0]
    v = center
    if not np.isfinite(np.linalg.cond(v)) or np.linalg.cond(v) > 1e12:
        v = v + (1e-10 * max(np.trace(v).real / CHANNELS, 1e-300)) * np.eye(CHANNELS)
    vinv = np.linalg.inv(v)
    tr = np.einsum("ij,hwji->hw", vinv, img.data).real
    return ld + tr


def wishart_iterate(
    img: CoherencyImage,
    init: ClassMap,
    max_iter: int = MAX_ITER,
    min_change: float = MIN_CHANGE,
) -> ClassMap:
    """Alternate center updates and minimum-distance reassignment until the
    changed-pixel fraction drops below ``min_change`` or ``max_iter`` passes.
    Empty classes are dropped with id compaction."""
    labels = init.labels.copy()
    n_pix = labels.size
    uniq, labels_flat = np.unique(labels.ravel(), return_inverse=True)
    labels = labels_flat.reshape(labels.shape).astype(np.int32)
    n = len(uniq)
    if n == 0 or n_pix == 0:
        raise ValueError("degenerate initialization")
    centers = class_centers(img, labels, n)
    for _ in range(max_iter):
        dists = np.stack([wishart_distance(img, centers[m]) for m in range(n)])
        new_labels = np.argmin(dists, axis=0).astype(np.int32)
        changed = int((new_labels != labels).sum())
        labels = new_labels
        uniq, labels_flat = np.unique(labels.ravel(), return_inverse=True)
        labels = labels_flat.reshape(labels.shape).astype(np.int32)
        n = len(uniq)
        centers = class_centers(img, labels, n)
        if changed < min_change * n_pix:
            break
    return ClassMap(labels=labels, centers=centers)


def wishart_objective(img: CoherencyImage, cmap: ClassMap) -> float:
    """Total assignment cost  sum_pixels d(T, V_label)."""
    total = 0.0
    for m in range(cmap.class_count):
        sel = cmap.labels == m
        if not sel.any():
            continue
        total += float(wishart_distance(img, cmap.centers[m])[sel].sum())
    return total


def semantic_vote(cmap: ClassMap, segmap: SegmentationMap) -> ClassMap:
    """Relabel every segmentation region to its modal class (smallest class
    id on ties)."""
    if segmap.region_id.shape != cmap.labels.shape:
        raise ValueError("segmentation shape mismatch")
    n_regions = segmap.n_regions
    n_classes = cmap.class_count
    key = segmap.region_id.ravel().astype(np.int64) * n_classes + cmap.labels.ravel()
    counts = np.bincount(key, minlength=n_regions * n_classes).reshape(
        n_regions, n_classes
    )
    modal = np.argmax(counts, axis=1).astype(np.int32)  # argmax takes smallest on ties
    return ClassMap(labels=modal[segmap.region_id], centers=cmap.centers.copy())


@dataclass(frozen=True)
class ConfusionMatrix:
    """Truth-by-predicted pixel counts after cluster-to-truth mapping."""

    counts: np.ndarray  # (n_truth, n_truth)
    mapping: np.ndarray  # predicted cluster -> truth class
    per_class: np.ndarray  # percent, diagonal / row sum
    average: float  # mean of per-class accuracies, percent
    overall: float  # diagonal mass / total, percent

    def to_csv(self) -> str:
        n = self.counts.shape[0]
        rows = ["truth\\pred," + ",".join(f"class{j}" for j in range(n)) + ",accuracy"]
        totals = self.counts.sum(axis=1)
        for t in range(n):
            pct = [
                100.0 * self.counts[t, j] / totals[t] if totals[t] else 0.0
                for j in range(n)
            ]
            rows.append(
                f"class{t}," + ",".join(f"{p:.2f}" for p in pct) + f",{self.per_class[t]:.2f}"
            )
        rows.append(f"average,,{self.average:.2f}")
        rows.append(f"overall,,{self.overall:.2f}")
        return "\n".join(rows) + "\n"


def evaluate(
    cmap: ClassMap,
    truth: np.ndarray,
    mapping: str = "auto",
    ignore_label: int | None = None,
) -> ConfusionMatrix:
    """Confusion matrix against a truth raster.

    Auto mapping assigns predicted clusters to truth classes greedily by
    maximum overlap (one-to-one first, leftovers to their best class),
    since unsupervised cluster ids carry no meaning. ``mapping="given"``
    treats predicted labels as already being truth ids. Pixels whose truth
    equals ``ignore_label`` are excluded everywhere.
    """
    truth = np.asarray(truth)
    if truth.shape != cmap.labels.shape:
        raise ValueError("truth raster shape mismatch")
    valid = np.ones(truth.shape, dtype=bool)
    if ignore_label is not None:
        valid &= truth != ignore_label
    t = truth[valid].astype(np.int64)
    p = cmap.labels[valid].astype(np.int64)
    n_truth = int(t.max()) + 1 if t.size else 1
    n_pred = max(int(p.max()) + 1 if p.size else 1, 1)

    overlap = np.zeros((n_pred, n_truth), dtype=np.int64)
    np.add.at(overlap, (p, t), 1)

    if mapping == "given":
        cluster_to_truth = np.arange(n_pred) % n_truth
    elif mapping == "auto":
        cluster_to_truth = _greedy_map(overlap)
    else:
        raise ValueError(f"unknown mapping mode: {mapping!r}")

    counts = np.zeros((n_truth, n_truth), dtype=np.int64)
    for c in range(n_pred):
        counts[:, cluster_to_truth[c]] += overlap[c]
    totals = counts.sum(axis=1)
    per_class = np.where(totals > 0, 100.0 * np.diag(counts) / np.maximum(totals, 1), 0.0)
    present = totals > 0
    average = float(per_class[present].mean()) if present.any() else 0.0
    overall = float(100.0 * np.diag(counts).sum() / max(counts.sum(), 1))
    return ConfusionMatrix(
        counts=counts,
        mapping=cluster_to_truth,
        per_class=per_class,
        average=average,
        overall=overall,
    )


def _greedy_map(overlap: np.ndarray) -> np.ndarray:
    n_pred, n_truth = overlap.shape
    mapping = np.full(n_pred, -1, dtype=np.int64)
    work = overlap.astype(np.float64).copy()
    used_pred: set = set()
    used_truth: set = set()
    for _ in range(min(n_pred, n_truth)):
        best = None
        for c in range(n_pred):
            if c in used_pred:
                continue
            for k in range(n_truth):
                if k in used_truth:
                    continue
                key = (-work[c, k], c, k)
                if best is None or key < best:
                    best = key
        if best is None or -best[0] <= 0:
            break
        _, c, k = best
        mapping[c] = k
        used_pred.add(c)
        used_truth.add(k)
    for c in range(n_pred):
        if mapping[c] < 0:
            mapping[c] = int(np.argmax(overlap[c])) if overlap[c].sum() else 0
    return mapping
