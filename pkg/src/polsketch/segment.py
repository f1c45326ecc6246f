"""Subspace-aware semantic segmentation over mean-shift superpixels.

The initial partition comes from joint spatial/log-power mean-shift
filtering. The region map then routes each superpixel into one of three
merging schemes: superpixels inside an aggregated group are majority-vote
merged into a single region per group (superpixels straddling the group
boundary survive and carry the edge), structural blocks are re-split in two
along the maximum-energy cross-section ridge, and homogenous superpixels
are merged hierarchically by the minimum Wishart log-likelihood cost until
a requested region count is reached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detect import EnergyField, _hermitian_logdet3
from .rasters import CHANNELS, CoherencyImage
from .regions import AGGREGATED, HOMOGENOUS, STRUCTURAL, RegionMap
from .sketch import SketchSegment

MS_SPATIAL = 7.0
MS_RANGE = 6.5  # dB in joint log-power space
MS_MIN_REGION = 20
_MS_ITERS = 12
_MODE_JOIN_XY = 1.0  # px; converged same-basin modes coincide to sub-pixel


@dataclass
class SuperpixelPartition:
    """Label raster plus per-region coherency statistics and adjacency.

    Region ids are contiguous from 0; ``sums``/``counts`` are kept exact so
    ``mean(i)`` is always sums/counts of the current pixel assignment.
    ``subspace`` carries the per-region region-map tag.
    """

    region_id: np.ndarray
    counts: np.ndarray
    sums: np.ndarray
    adjacency: set
    subspace: np.ndarray

    @classmethod
    def from_labels(cls, ids: np.ndarray, img: CoherencyImage, subspace=None):
        ids = np.ascontiguousarray(ids, dtype=np.int32)
        n = int(ids.max()) + 1
        counts = np.bincount(ids.ravel(), minlength=n)
        if (counts == 0).any():
            raise ValueError("region ids must be contiguous")
        sums = np.zeros((n, CHANNELS, CHANNELS), dtype=np.complex128)
        np.add.at(sums, ids.ravel(), img.data.reshape(-1, CHANNELS, CHANNELS))
        adj = _adjacency(ids)
        if subspace is None:
            subspace = np.full(n, HOMOGENOUS, dtype=np.int8)
        return cls(ids, counts, sums, adj, np.asarray(subspace, dtype=np.int8))

    @property
    def n_regions(self) -> int:
        return len(self.counts)

    def mean(self, i: int) -> np.ndarray:
        return self.sums[i] / self.counts[i]

    def means(self) -> np.ndarray:
        return self.sums / self.counts[:, None, None]


def _adjacency(ids: np.ndarray) -> set:
    pairs = set()
    a, b = ids[:, :-1], ids[:, 1:]
    for x, y in zip(a[a != b].tolist(), b[a != b].tolist()):
        pairs.add((min(x, y), max(x, y)))
    a, b = ids[:-1, :], ids[1:, :]
    for x, y in zip(a[a != b].tolist(), b[a != b].tolist()):
        pairs.add((min(x, y), max(x, y)))
    return pairs


def pauli_db(img: CoherencyImage) -> np.ndarray:
    """Per-pixel (H, W, 3) Pauli powers in dB with a scene-relative floor."""
    diag = np.stack(
        [img.data[:, :, k, k].real for k in range(CHANNELS)], axis=-1
    )
    mean_power = float(diag.mean())
    floor = max(1e-6 * mean_power, 1e-30)
    return 10.0 * np.log10(np.maximum(diag, floor))


def mean_shift_superpixels(
    img: CoherencyImage,
    h_spatial: float = MS_SPATIAL,
    h_range: float = MS_RANGE,
    min_region: int = MS_MIN_REGION,
) -> SuperpixelPartition:
    """Mean-shift filtering in joint (x, y, log-Pauli) space, mode grouping,
    and absorption of regions below ``min_region`` pixels into their most
    similar neighbor. Deterministic.

    Filtering runs modes (nearly) to convergence so that pixels of one
    basin coincide; grouping then only joins adjacent pixels whose modes
    agree to about a pixel, which keeps smooth boundary ramps from chaining
    distinct classes together and yields moderate over-segmentation.
    """
    feats = pauli_db(img).astype(np.float32)
    h, w = img.shape
    rad = int(np.ceil(h_spatial))
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    px, py = xs.copy(), ys.copy()
    pf = feats.copy()
    hs2 = np.float32(h_spatial * h_spatial)
    hr2 = np.float32(h_range * h_range)

    offsets = [
        (dx, dy)
        for dy in range(-rad, rad + 1)
        for dx in range(-rad, rad + 1)
        if dx * dx + dy * dy <= (rad + 0.5) ** 2
    ]
    for _ in range(_MS_ITERS):
        cx = np.clip(np.round(px).astype(np.int64), 0, w - 1)
        cy = np.clip(np.round(py).astype(np.int64), 0, h - 1)
        acc_x = np.zeros((h, w), np.float32)
        acc_y = np.zeros((h, w), np.float32)
        acc_f = np.zeros((h, w, CHANNELS), np.float32)
        acc_n = np.zeros((h, w), np.float32)
        for dx, dy in offsets:
            nx = cx + dx
            ny = cy + dy
            valid = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
            nxc = np.clip(nx, 0, w - 1)
            nyc = np.clip(ny, 0, h - 1)
            fg = feats[nyc, nxc]
            fd = fg - pf
            sd = (nx - px) ** 2 + (ny - py) ** 2
            sel = valid & (sd <= hs2) & ((fd * fd).sum(axis=-1) <= hr2)
            self32 = sel.astype(np.float32)
            acc_x += self32 * nx
            acc_y += self32 * ny
            acc_f += self32[..., None] * fg
            acc_n += self32
        nz = acc_n > 0
        inv = np.where(nz, 1.0 / np.maximum(acc_n, 1.0), 0.0).astype(np.float32)
        new_x = np.where(nz, acc_x * inv, px)
        new_y = np.where(nz, acc_y * inv, py)
        new_f = np.where(nz[..., None], acc_f * inv[..., None], pf)
        shift = float(np.abs(new_x - px).max() + np.abs(new_y - py).max())
        px, py, pf = new_x, new_y, new_f
        if shift < 0.05:
            break

    ids = _group_modes(px, py, pf, _MODE_JOIN_XY, 0.25 * h_range)
    ids = _absorb_small(ids, min_region, feats)
    return SuperpixelPartition.from_labels(ids, img)


def _group_modes(px, py, pf, h_spatial, h_range) -> np.ndarray:
    h, w = px.shape
    n = h * w
    parent = np.arange(n)

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    hs2, hr2 = h_spatial**2, h_range**2

    def link(sel, ai, bi):
        for a, b in zip(ai[sel].tolist(), bi[sel].tolist()):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

    flat = np.arange(n).reshape(h, w)
    sd = (px[:, :-1] - px[:, 1:]) ** 2 + (py[:, :-1] - py[:, 1:]) ** 2
    fd = ((pf[:, :-1] - pf[:, 1:]) ** 2).sum(axis=-1)
    link((sd <= hs2) & (fd <= hr2), flat[:, :-1], flat[:, 1:])
    sd = (px[:-1, :] - px[1:, :]) ** 2 + (py[:-1, :] - py[1:, :]) ** 2
    fd = ((pf[:-1, :] - pf[1:, :]) ** 2).sum(axis=-1)
    link((sd <= hs2) & (fd <= hr2), flat[:-1, :], flat[1:, :])

    roots = np.array([find(i) for i in range(n)])
    _, ids = np.unique(roots, return_inverse=True)
    return ids.reshape(h, w).astype(np.int32)


def pauli_feature_means(ids: np.ndarray, feats: np.ndarray) -> np.ndarray:
    n = int(ids.max()) + 1
    sums = np.zeros((n, feats.shape[-1]))
    np.add.at(sums, ids.ravel(), feats.reshape(-1, feats.shape[-1]))
    counts = np.bincount(ids.ravel(), minlength=n)
    return sums / counts[:, None]


def _absorb_small(ids: np.ndarray, min_region: int, feats: np.ndarray) -> np.ndarray:
    """Merge every region below ``min_region`` pixels into its most
    feature-similar neighbor, repeating until none remain (or the raster is
    a single region)."""
    ids = ids.copy()
    while True:
        n = int(ids.max()) + 1
        counts = np.bincount(ids.ravel(), minlength=n)
        fmeans = pauli_feature_means(ids, feats)
        neigh: dict = {}
        for a, b in _adjacency(ids):
            neigh.setdefault(a, set()).add(b)
            neigh.setdefault(b, set()).add(a)
        small = [i for i in range(n) if counts[i] < min_region and i in neigh]
        if not small:
            break
        parent = np.arange(n)

        def find(a):
            root = a
            while parent[root] != root:
                root = parent[root]
            while parent[a] != root:
                parent[a], a = root, parent[a]
            return root

        for i in small:
            best = min(
                sorted(neigh[i]),
                key=lambda j: (np.linalg.norm(fmeans[i] - fmeans[j]), j),
            )
            ra, rb = find(i), find(best)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        roots = np.array([find(i) for i in range(n)])
        _, compact = np.unique(roots, return_inverse=True)
        ids = compact[ids].astype(np.int32)
    return ids


# ---------------------------------------------------------------------------
# Region-map routing and the three merging schemes.

def map_region_to_superpixels(part: SuperpixelPartition, rmap: RegionMap) -> np.ndarray:
    """Majority region-map label per superpixel; ties resolve aggregated
    over structural over homogenous. Returns the per-region tag array."""
    if rmap.labels.shape != part.region_id.shape:
        raise ValueError("region map shape mismatch")
    n = part.n_regions
    key = part.region_id.ravel().astype(np.int64) * 3 + rmap.labels.ravel()
    counts = np.bincount(key, minlength=3 * n).reshape(n, 3)
    # argmax over reversed label order prefers the higher precedence on ties
    tags = 2 - np.argmax(counts[:, ::-1], axis=1)
    return tags.astype(np.int8)


def _apply_relabel(part: SuperpixelPartition, relabel: np.ndarray, img: CoherencyImage, retag: dict | None = None) -> SuperpixelPartition:
    """Rebuild a partition after mapping old region ids through ``relabel``.

    ``retag`` optionally overrides the subspace tag of relabel targets
    (keyed by old representative id)."""
    uniq, compact = np.unique(relabel, return_inverse=True)
    new_ids = compact[relabel[part.region_id]].astype(np.int32)
    tags = part.subspace[uniq].copy()
    if retag:
        for old_rep, tag in retag.items():
            tags[int(np.searchsorted(uniq, old_rep))] = tag
    return SuperpixelPartition.from_labels(new_ids, img, tags)


def merge_aggregated(part: SuperpixelPartition, rmap: RegionMap, img: CoherencyImage) -> SuperpixelPartition:
    """Fuse every superpixel whose pixels sit majority inside one aggregated
    group into that group's region; straddling superpixels stay intact."""
    n = part.n_regions
    n_groups = int(rmap.aggregated_id.max()) + 1
    if n_groups == 0:
        return part
    key = part.region_id.ravel().astype(np.int64) * (n_groups + 1) + (
        rmap.aggregated_id.ravel() + 1
    )
    overlap = np.bincount(key, minlength=n * (n_groups + 1)).reshape(n, n_groups + 1)
    frac = overlap[:, 1:] / np.maximum(part.counts[:, None], 1)
    best_group = np.argmax(frac, axis=1)
    absorbed = frac[np.arange(n), best_group] > 0.5
    if not absorbed.any():
        return part

    relabel = np.arange(n)
    group_region: dict = {}
    for i in range(n):
        if absorbed[i]:
            g = int(best_group[i])
            group_region.setdefault(g, i)
            relabel[i] = group_region[g]
    retag = {rep: AGGREGATED for rep in group_region.values()}
    return _apply_relabel(part, relabel, img, retag)


def form_structural_parents(
    part: SuperpixelPartition,
    blocks: list,
    img: CoherencyImage,
):
    """Merge structural-tagged superpixels majority-covered by each oriented
    block into one parent region per block.

    ``blocks`` is a list of (segment, mask) pairs. Returns the new partition
    and a list of (parent_region_id, segment) for the split stage.
    """
    n = part.n_regions
    relabel = np.arange(n)
    owner = np.full(n, -1)
    ids = part.region_id
    for bi, (seg, mask) in enumerate(blocks):
        if not mask.any():
            continue
        inside = np.bincount(ids[mask].ravel(), minlength=n)
        cand = np.nonzero(
            (inside > 0.5 * np.maximum(part.counts, 1))
            & (part.subspace == STRUCTURAL)
            & (owner < 0)
        )[0]
        if cand.size == 0:
            continue
        owner[cand] = bi
        relabel[cand] = cand[0]

    if (owner < 0).all():
        return part, []
    merged = _apply_relabel(part, relabel, img)
    parents = []
    uniq = np.unique(relabel)
    for bi in np.unique(owner[owner >= 0]):
        rep = int(relabel[np.nonzero(owner == bi)[0][0]])
        new_id = int(np.searchsorted(uniq, rep))
        parents.append((new_id, blocks[int(bi)][0]))
    return merged, parents


def split_structural(
    part: SuperpixelPartition,
    parents: list,
    energy: EnergyField,
    img: CoherencyImage,
):
    """Split each structural parent region in two along the located edge.

    The edge is the per-cross-section maximum of the fused energy inside
    the region, median-smoothed along the generating segment; on flat
    energy it falls back to the segment axis. Parents whose geometry cannot
    yield two non-empty children are left intact with a warning.

    Returns (partition, n_splits, warnings).
    """
    ids = part.region_id.copy()
    tags = list(part.subspace)
    e = energy.energy.values
    next_id = part.n_regions
    warnings = []
    n_splits = 0
    for parent_id, seg in parents:
        pyx = np.nonzero(ids == parent_id)
        if len(pyx[0]) < 2 or seg.length == 0:
            warnings.append(f"region {parent_id}: too thin to split")
            continue
        ux = (seg.tail[0] - seg.head[0]) / seg.length
        uy = (seg.tail[1] - seg.head[1]) / seg.length
        cx, cy = seg.center
        along = (pyx[1] - cx) * ux + (pyx[0] - cy) * uy
        across = -(pyx[1] - cx) * uy + (pyx[0] - cy) * ux
        sections = np.round(along).astype(np.int64)
        uniq_t = np.unique(sections)
        ridge = {}
        for t in uniq_t:
            sel = sections == t
            en = e[pyx[0][sel], pyx[1][sel]]
            ac = across[sel]
            # max energy wins; ties prefer the segment axis
            order = np.lexsort((ac, np.abs(ac), -en))
            ridge[t] = ac[order[0]]
        smooth = {}
        for i, t in enumerate(uniq_t):
            lo, hi = max(0, i - 1), min(len(uniq_t), i + 2)
            smooth[t] = float(np.median([ridge[u] for u in uniq_t[lo:hi]]))
        cut = np.array([smooth[t] for t in sections])
        side_b = across >= cut
        if side_b.all() or not side_b.any():
            warnings.append(f"region {parent_id}: degenerate edge, not split")
            continue
        ids[pyx[0][side_b], pyx[1][side_b]] = next_id
        tags.append(STRUCTURAL)
        next_id += 1
        n_splits += 1
    if n_splits == 0:
        return part, 0, warnings
    out = SuperpixelPartition.from_labels(ids, img, np.array(tags, dtype=np.int8))
    return out, n_splits, warnings


# ---------------------------------------------------------------------------
# Hierarchical likelihood merging of the homogenous pool.

def _logdet(z: np.ndarray) -> float:
    return float(_hermitian_logdet3(z[None, ...])[0])


def sc_criterion(mean_i, n_i, mean_j, n_j, looks: float) -> float:
    """Wishart log-likelihood cost of pooling two regions.

    looks * [(n_i+n_j) ln|Zij| - n_i ln|Zi| - n_j ln|Zj|] with Zij the
    pixel-count-weighted pooled mean; non-negative and zero when the means
    coincide."""
    pooled = (n_i * mean_i + n_j * mean_j) / (n_i + n_j)
    sc = looks * (
        (n_i + n_j) * _logdet(pooled) - n_i * _logdet(mean_i) - n_j * _logdet(mean_j)
    )
    return max(0.0, float(sc))


def hierarchical_merge(
    part: SuperpixelPartition,
    n_r: int,
    img: CoherencyImage,
):
    """Merge minimum-cost adjacent homogenous pairs until ``n_r`` homogenous
    regions remain. Ties break on the smallest (id, id) pair; regions in
    other subspaces are never touched.

    Returns (partition, merge_log, warnings) where merge_log records
    (kept_id, removed_id, cost) in execution order against the pre-merge
    partition's ids.
    """
    looks = img.looks
    if n_r < 1:
        raise ValueError("target region count must be >= 1")
    pool = {i for i in range(part.n_regions) if part.subspace[i] == HOMOGENOUS}
    warnings: list = []
    if n_r > len(pool):
        warnings.append("target exceeds homogenous region count; nothing merged")
        return part, [], warnings

    counts = part.counts.astype(float).copy()
    sums = part.sums.copy()
    neigh: dict = {i: set() for i in pool}
    for a, b in part.adjacency:
        if a in pool and b in pool:
            neigh[a].add(b)
            neigh[b].add(a)

    def cost(a: int, b: int) -> float:
        return sc_criterion(sums[a] / counts[a], counts[a], sums[b] / counts[b], counts[b], looks)

    cache = {}
    for a in pool:
        for b in neigh[a]:
            if a < b:
                cache[(a, b)] = cost(a, b)

    relabel = np.arange(part.n_regions)
    merge_log = []
    alive = len(pool)
    while alive > n_r:
        if not cache:
            warnings.append("homogenous pool disconnected; merge stopped early")
            break
        (a, b), sc = min(cache.items(), key=lambda kv: (kv[1], kv[0]))
        merge_log.append((a, b, sc))
        sums[a] += sums[b]
        counts[a] += counts[b]
        relabel[relabel == b] = a
        for c in neigh[b]:
            if c != a:
                neigh[c].discard(b)
                neigh[c].add(a)
                neigh[a].add(c)
        neigh[a].discard(b)
        for c in list(neigh[b]):
            cache.pop((min(b, c), max(b, c)), None)
        del neigh[b]
        for c in neigh[a]:
            cache.pop((min(a, c), max(a, c)), None)
            cache[(min(a, c), max(a, c))] = cost(a, c)
        alive -= 1
    if not merge_log:
        return part, [], warnings
    out = _apply_relabel(part, relabel, img)
    return out, merge_log, warnings


@dataclass(frozen=True)
class SegmentationMap:
    """Final region raster with each region's subspace provenance."""

    region_id: np.ndarray
    subspace: np.ndarray

    @property
    def n_regions(self) -> int:
        return len(self.subspace)


def to_segmentation_map(part: SuperpixelPartition) -> SegmentationMap:
    return SegmentationMap(region_id=part.region_id.copy(), subspace=part.subspace.copy())


def region_stats_csv(part: SuperpixelPartition) -> str:
    """Per-region statistics table: id, subspace, pixel count, mean entries."""
    names = {HOMOGENOUS: "homogenous", STRUCTURAL: "structural", AGGREGATED: "aggregated"}
    rows = ["id,subspace,n,t11,t22,t33,re12,im12,re13,im13,re23,im23"]
    means = part.means()
    for i in range(part.n_regions):
        z = means[i]
        rows.append(
            f"{i},{names[int(part.subspace[i])]},{int(part.counts[i])},"
            f"{z[0, 0].real:.8g},{z[1, 1].real:.8g},{z[2, 2].real:.8g},"
            f"{z[0, 1].real:.8g},{z[0, 1].imag:.8g},"
            f"{z[0, 2].real:.8g},{z[0, 2].imag:.8g},"
            f"{z[1, 2].real:.8g},{z[1, 2].imag:.8g}"
        )
    return "\n".join(rows) + "\n"
