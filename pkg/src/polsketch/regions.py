"""Middle-level semantics: label sketch segments, group them, and emit the
tri-label region map.

Segments are labeled aggregated (AS) or isolated (IS) in five steps:
reconnect broken lines, mark long straight lines IS, compute each remaining
segment's aggregation degree (mean midpoint distance to its K nearest
non-collinear neighbors), split AS/IS at an adaptive histogram quantile,
and demote segments whose close neighbors sit on a single side. AS groups
are the connected components of a symmetrized K-nearest-neighbor graph
thresholded at the mean aggregation degree; each surviving group is closed
morphologically into an aggregated region, every IS segment spawns an
oriented structural block, and everything else is homogenous.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from ._geom import bresenham, disc_element, orientation_delta
from .sketch import (
    AGGREGATED_SEG,
    ISOLATED_SEG,
    SketchLine,
    SketchMap,
    SketchSegment,
)

HOMOGENOUS = 0
STRUCTURAL = 1
AGGREGATED = 2

DAS = "DAS"
SAS = "SAS"
ZAS = "ZAS"

DEFAULT_K = 9
DEFAULT_THETA0 = 30.0
DEFAULT_RATIO = 0.92
DEFAULT_SIDE_FRACTION = 0.8
DEFAULT_WEDGE_DEG = 10.0
DEFAULT_TOP_FRACTION = 0.05


@dataclass
class AggregationStats:
    """Aggregation-degree statistics of the segment pool."""

    k: int
    r: float
    ad: np.ndarray  # per-pool-segment aggregation degree, inf if no neighbor
    bin_width: float
    bin_edges: np.ndarray
    counts: np.ndarray
    delta1: float = 0.0
    delta2: float = 0.0
    warnings: list = field(default_factory=list)


@dataclass(frozen=True)
class SegmentGroup:
    id: int
    members: tuple  # indices into the sketch map's flattened segment list
    region_mask: np.ndarray | None = None


@dataclass(frozen=True)
class RegionMap:
    labels: np.ndarray  # per-pixel {HOMOGENOUS, STRUCTURAL, AGGREGATED}
    aggregated_id: np.ndarray  # per-pixel group id, -1 outside aggregated regions

    def __post_init__(self):
        if self.labels.shape != self.aggregated_id.shape:
            raise ValueError("region map raster shapes differ")
        if ((self.labels == AGGREGATED) != (self.aggregated_id >= 0)).any():
            raise ValueError("aggregated pixels must carry a group id")


# ---------------------------------------------------------------------------
# Step 1: line continuity.

def connect_lines(segments: list) -> list:
    """Maximal tail-to-head chains with gap <= 2 px.

    Junction ambiguities resolve to the candidate with the smallest
    orientation change; each segment joins at most one chain.
    """
    n = len(segments)
    succ = [-1] * n
    has_pred = [False] * n
    for i, si in enumerate(segments):
        best = None
        for j, sj in enumerate(segments):
            if j == i or has_pred[j]:
                continue
            gap = np.hypot(
                sj.head[0] - si.tail[0], sj.head[1] - si.tail[1]
            )
            if gap > 2.0:
                continue
            key = (orientation_delta(si.orientation, sj.orientation), gap, j)
            if best is None or key < best[0]:
                best = (key, j)
        if best is not None:
            succ[i] = best[1]
            has_pred[best[1]] = True

    chains = []
    emitted = [False] * n
    heads = [i for i in range(n) if not has_pred[i]] + list(range(n))
    for i in heads:  # second pass catches successor cycles
        if emitted[i]:
            continue
        chain, cur = [], i
        while cur >= 0 and not emitted[cur]:
            chain.append(cur)
            emitted[cur] = True
            cur = succ[cur]
        chains.append(chain)
    return chains


# ---------------------------------------------------------------------------
# Step 2: long straight lines.

def _chain_is_straight(chain: list, segments: list, theta0: float) -> bool:
    for a, b in zip(chain, chain[1:]):
        sa, sb = segments[a], segments[b]
        if orientation_delta(sa.orientation, sb.orientation) >= theta0:
            return False
        # forward condition: the far endpoints must outrun both lengths,
        # rejecting chains that double back on themselves
        d2 = np.hypot(sb.tail[0] - sa.head[0], sb.tail[1] - sa.head[1])
        if d2 <= max(sa.length, sb.length):
            return False
    return True


def label_long_straight(
    chains: list,
    segments: list,
    theta0: float = DEFAULT_THETA0,
    top_fraction: float = DEFAULT_TOP_FRACTION,
) -> np.ndarray:
    """Boolean mask (per segment) of members of the longest straight chains.

    Straight chains are ranked by total length; the top fraction (at least
    one when any qualify) is labeled isolated.
    """
    qualifying = [c for c in chains if _chain_is_straight(c, segments, theta0)]
    is_mask = np.zeros(len(segments), dtype=bool)
    if not qualifying:
        return is_mask
    lengths = [sum(segments[i].length for i in c) for c in qualifying]
    order = sorted(range(len(qualifying)), key=lambda q: (-lengths[q], qualifying[q]))
    n_top = max(1, int(np.floor(top_fraction * len(qualifying))))
    for q in order[:n_top]:
        for i in qualifying[q]:
            is_mask[i] = True
    return is_mask


# ---------------------------------------------------------------------------
# Steps 3-5: aggregation degree, adaptive split, spatial rank.

def _segment_features(segments: list):
    mids = np.array([s.center for s in segments], dtype=float)
    thetas = np.array([s.orientation for s in segments], dtype=float)
    return mids, thetas


def _eligible_neighbors(segments: list, wedge_deg: float):
    """Per-segment neighbor ordering by distance, excluding the collinear
    wedge: neighbors whose midpoint direction lies within +-wedge of the
    segment's supporting line are ignored (near-parallel structure must not
    count as aggregation). Coincident midpoints always count, at distance 0.

    Returns (dist, order) where order[i] lists eligible neighbor indices of
    i sorted by (distance, midpoint, endpoints) so results are independent
    of input enumeration order.
    """
    n = len(segments)
    mids, thetas = _segment_features(segments)
    diff = mids[None, :, :] - mids[:, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    ang = np.degrees(np.arctan2(diff[..., 1], diff[..., 0]))
    delta = np.abs((ang - thetas[:, None] + 90.0) % 180.0 - 90.0)
    excluded = (delta <= wedge_deg) & (dist > 0)
    np.fill_diagonal(excluded, True)

    keys = [
        (
            *np.round(mids[j], 9),
            segments[j].head,
            segments[j].tail,
        )
        for j in range(n)
    ]
    order = []
    for i in range(n):
        cand = [j for j in range(n) if j != i and not excluded[i, j]]
        cand.sort(key=lambda j: (dist[i, j], keys[j]))
        order.append(cand)
    return dist, order


def aggregation_degree(
    segments: list,
    k: int = DEFAULT_K,
    r: float = DEFAULT_RATIO,
    wedge_deg: float = DEFAULT_WEDGE_DEG,
) -> AggregationStats:
    """Mean midpoint distance to the K nearest eligible neighbors, plus the
    aggregation-degree histogram (bin width max(1, range/64))."""
    n = len(segments)
    if n < 2:
        return AggregationStats(
            k=k, r=r, ad=np.full(n, np.inf), bin_width=1.0,
            bin_edges=np.array([0.0, 1.0]), counts=np.array([0]),
            warnings=["fewer than 2 segments"],
        )
    dist, order = _eligible_neighbors(segments, wedge_deg)
    ad = np.full(n, np.inf)
    for i in range(n):
        near = order[i][:k]
        if near:
            ad[i] = float(np.mean([dist[i, j] for j in near]))
    finite = ad[np.isfinite(ad)]
    if finite.size == 0:
        return AggregationStats(
            k=k, r=r, ad=ad, bin_width=1.0,
            bin_edges=np.array([0.0, 1.0]), counts=np.array([0]),
            warnings=["no eligible neighbors anywhere"],
        )
    lo, hi = float(finite.min()), float(finite.max())
    if hi <= lo:
        return AggregationStats(
            k=k, r=r, ad=ad, bin_width=0.0,
            bin_edges=np.array([lo, lo]), counts=np.array([finite.size]),
        )
    width = max(1.0, (hi - lo) / 64.0)
    nbins = int(np.ceil((hi - lo) / width))
    edges = lo + width * np.arange(nbins + 1)
    edges[-1] = max(edges[-1], hi)
    counts, _ = np.histogram(finite, bins=edges)
    return AggregationStats(
        k=k, r=r, ad=ad, bin_width=width, bin_edges=edges, counts=counts
    )


def select_delta1(stats: AggregationStats, r: float | None = None) -> float:
    """Smallest histogram bin right-edge whose cumulative mass reaches
    r times the total."""
    r = stats.r if r is None else r
    if not 0.0 < r <= 1.0:
        raise ValueError("mass ratio must lie in (0, 1]")
    total = stats.counts.sum()
    if total == 0:
        return 0.0
    if stats.bin_width == 0.0:
        return float(stats.bin_edges[0])
    cum = np.cumsum(stats.counts)
    idx = int(np.searchsorted(cum, r * total))
    idx = min(idx, len(stats.counts) - 1)
    return float(stats.bin_edges[idx + 1])


def select_delta2(stats: AggregationStats) -> float:
    """Mean aggregation degree over the pool.

    Should sit at or above the histogram peak; a warning is recorded when
    it does not (the pool then has a heavy low tail and grouping may
    under-connect).
    """
    finite = stats.ad[np.isfinite(stats.ad)]
    if finite.size == 0:
        return 0.0
    d2 = float(finite.mean())
    if stats.counts.sum() > 0 and stats.bin_width > 0:
        peak = int(np.argmax(stats.counts))
        peak_value = 0.5 * (stats.bin_edges[peak] + stats.bin_edges[peak + 1])
        if d2 < peak_value:
            stats.warnings.append("delta2 below histogram peak")
    return d2


def spatial_rank(
    idx: int,
    segments: list,
    k: int,
    delta1: float,
    side_fraction: float = DEFAULT_SIDE_FRACTION,
    wedge_deg: float = DEFAULT_WEDGE_DEG,
    _cache=None,
) -> str:
    """Classify a segment by where its close neighbors fall.

    Among the K nearest eligible neighbors within delta1: none at all means
    zero-aggregated (ZAS); a side_fraction majority on one side of the
    supporting line means single-side (SAS); otherwise double-side (DAS).
    """
    dist, order = _cache if _cache is not None else _eligible_neighbors(segments, wedge_deg)
    close = [j for j in order[idx][:k] if dist[idx, j] <= delta1]
    if not close:
        return ZAS
    s = segments[idx]
    ux = s.tail[0] - s.head[0]
    uy = s.tail[1] - s.head[1]
    mids, _ = _segment_features(segments)
    pos = neg = 0
    for j in close:
        cross = ux * (mids[j][1] - s.center[1]) - uy * (mids[j][0] - s.center[0])
        if cross > 0:
            pos += 1
        elif cross < 0:
            neg += 1
    if max(pos, neg) >= side_fraction * len(close):
        return SAS
    return DAS


def label_segments(
    sm: SketchMap,
    k: int = DEFAULT_K,
    theta0: float = DEFAULT_THETA0,
    r: float = DEFAULT_RATIO,
    side_fraction: float = DEFAULT_SIDE_FRACTION,
    wedge_deg: float = DEFAULT_WEDGE_DEG,
    top_fraction: float = DEFAULT_TOP_FRACTION,
):
    """Run the five labeling steps over a sketch map.

    Returns (labels, stats, chains) where labels is a per-segment array of
    AS/IS codes aligned with ``sm.segments``.
    """
    segments = sm.segments
    n = len(segments)
    labels = np.array([ISOLATED_SEG] * n, dtype=object)
    chains = connect_lines(segments)
    stats = AggregationStats(
        k=k, r=r, ad=np.full(n, np.inf), bin_width=0.0,
        bin_edges=np.array([0.0, 0.0]), counts=np.array([0]),
    )
    if n == 0:
        return labels, stats, chains

    straight = label_long_straight(chains, segments, theta0, top_fraction)
    pool = [i for i in range(n) if not straight[i]]
    if len(pool) < k + 1:
        stats.warnings.append("degenerate input: fewer than K+1 segments")
        return labels, stats, chains

    pool_segments = [segments[i] for i in pool]
    pstats = aggregation_degree(pool_segments, k=k, r=r, wedge_deg=wedge_deg)
    pstats.delta1 = select_delta1(pstats)
    pstats.delta2 = select_delta2(pstats)
    cache = _eligible_neighbors(pool_segments, wedge_deg)
    for pi, i in enumerate(pool):
        if not np.isfinite(pstats.ad[pi]) or pstats.ad[pi] > pstats.delta1:
            continue
        rank = spatial_rank(
            pi, pool_segments, k, pstats.delta1, side_fraction, wedge_deg, _cache=cache
        )
        if rank == DAS:
            labels[i] = AGGREGATED_SEG
    stats = pstats
    return labels, stats, chains


# ---------------------------------------------------------------------------
# Grouping and region extraction.

def group_segments(segments: list, as_indices: list, delta2: float, k: int = DEFAULT_K):
    """Partition the AS set into connected components of the symmetrized
    K-NN graph thresholded at delta2; components smaller than K dissolve
    and their members are demoted to IS.

    Returns (groups, demoted_indices). Group membership is independent of
    the enumeration order of ``as_indices``.
    """
    as_indices = sorted(as_indices)
    m = len(as_indices)
    if m == 0:
        return [], []
    subset = [segments[i] for i in as_indices]
    mids = np.array([s.center for s in subset], dtype=float)
    diff = mids[None, :, :] - mids[:, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    keys = [(*np.round(mids[j], 9), subset[j].head, subset[j].tail) for j in range(m)]

    knn = []
    for i in range(m):
        cand = sorted((j for j in range(m) if j != i), key=lambda j: (dist[i, j], keys[j]))
        knn.append(set(cand[:k]))

    parent = list(range(m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(m):
        for j in range(i + 1, m):
            if dist[i, j] <= delta2 and (j in knn[i] or i in knn[j]):
                ra, rb = find(i), find(j)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    comps: dict = {}
    for i in range(m):
        comps.setdefault(find(i), []).append(as_indices[i])

    groups, demoted = [], []
    for root in sorted(comps, key=lambda rt: comps[rt][0]):
        members = comps[root]
        if len(members) < k:
            demoted.extend(members)
        else:
            groups.append(SegmentGroup(id=len(groups), members=tuple(members)))
    return groups, demoted


def rasterize_segments(segments: list, indices, shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    h, w = shape
    for i in indices:
        s = segments[i]
        for px, py in bresenham(int(s.head[0]), int(s.head[1]), int(s.tail[0]), int(s.tail[1])):
            if 0 <= px < w and 0 <= py < h:
                mask[py, px] = True
    return mask


def close_regions(group: SegmentGroup, segments: list, delta2: float, shape) -> np.ndarray:
    """Morphological closing of the group's rasterized segments with a disc
    of radius round(delta2); gaps up to twice the radius are filled and the
    result always contains the rasterized segments."""
    raster = rasterize_segments(segments, group.members, shape)
    radius = int(round(delta2))
    if radius <= 0 or not raster.any():
        return raster
    disc = disc_element(radius)
    dilated = ndimage.binary_dilation(raster, structure=disc)
    # border_value=1 keeps the closing extensive at the image boundary
    return ndimage.binary_erosion(dilated, structure=disc, border_value=1)


def block_mask(segment: SketchSegment, width: int, shape) -> np.ndarray:
    """Oriented rectangle of the given width along the segment axis."""
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    length = segment.length
    if length == 0:
        return mask
    cx, cy = segment.center
    ux = (segment.tail[0] - segment.head[0]) / length
    uy = (segment.tail[1] - segment.head[1]) / length
    half_w = (width - 1) / 2.0
    reach = int(np.ceil(length / 2.0 + width))
    x0 = max(0, int(np.floor(cx)) - reach)
    x1 = min(w - 1, int(np.ceil(cx)) + reach)
    y0 = max(0, int(np.floor(cy)) - reach)
    y1 = min(h - 1, int(np.ceil(cy)) + reach)
    if x1 < x0 or y1 < y0:
        return mask
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    dx, dy = xs - cx, ys - cy
    along = dx * ux + dy * uy
    across = -dx * uy + dy * ux
    inside = (np.abs(along) <= length / 2.0 + 1e-9) & (np.abs(across) <= half_w + 1e-9)
    mask[y0 : y1 + 1, x0 : x1 + 1] = inside
    return mask


def structural_blocks(segments: list, indices, width: int, shape) -> np.ndarray:
    """Union of oriented blocks over the given (isolated) segments."""
    if width not in (3, 5):
        raise ValueError("structural block width must be 3 or 5")
    mask = np.zeros(shape, dtype=bool)
    for i in indices:
        mask |= block_mask(segments[i], width, shape)
    return mask


def build_region_map(groups: list, structural_mask: np.ndarray, shape) -> RegionMap:
    """Assemble the tri-label raster; aggregated beats structural at overlaps."""
    labels = np.full(shape, HOMOGENOUS, dtype=np.int8)
    agg_id = np.full(shape, -1, dtype=np.int32)
    labels[structural_mask] = STRUCTURAL
    for g in groups:
        if g.region_mask is None:
            raise ValueError("group has no closed region mask")
        paint = g.region_mask & (agg_id < 0)
        labels[paint] = AGGREGATED
        agg_id[paint] = g.id
    return RegionMap(labels=labels, aggregated_id=agg_id)


@dataclass
class RegionExtraction:
    region_map: RegionMap
    sketch: SketchMap  # relabeled segments
    stats: AggregationStats
    groups: list
    blocks: list  # (segment, mask) per isolated segment, for edge relocation


def extract_region_map(
    sm: SketchMap,
    k: int = DEFAULT_K,
    theta0: float = DEFAULT_THETA0,
    r: float = DEFAULT_RATIO,
    side_fraction: float = DEFAULT_SIDE_FRACTION,
    wedge_deg: float = DEFAULT_WEDGE_DEG,
    structural_width: int = 3,
) -> RegionExtraction:
    """Full middle-level pipeline: label, group, close, emit the region map."""
    segments = sm.segments
    labels, stats, _ = label_segments(
        sm, k=k, theta0=theta0, r=r, side_fraction=side_fraction, wedge_deg=wedge_deg
    )
    as_idx = [i for i in range(len(segments)) if labels[i] == AGGREGATED_SEG]
    groups, demoted = group_segments(segments, as_idx, stats.delta2, k=k)
    for i in demoted:
        labels[i] = ISOLATED_SEG
    groups = [
        replace(g, region_mask=close_regions(g, segments, stats.delta2, sm.shape))
        for g in groups
    ]
    is_idx = [i for i in range(len(segments)) if labels[i] == ISOLATED_SEG]
    blocks = [(segments[i], block_mask(segments[i], structural_width, sm.shape)) for i in is_idx]
    struct_mask = np.zeros(sm.shape, dtype=bool)
    for _, m in blocks:
        struct_mask |= m
    rmap = build_region_map(groups, struct_mask, sm.shape)

    relabeled = []
    pos = 0
    for ln in sm.lines:
        segs = []
        for s in ln.segments:
            segs.append(replace(s, label=str(labels[pos])))
            pos += 1
        relabeled.append(SketchLine(segments=tuple(segs), clg=ln.clg))
    labeled_sm = SketchMap(
        lines=tuple(relabeled), shape=sm.shape, threshold=sm.threshold, status=sm.status
    )
    return RegionExtraction(
        region_map=rmap, sketch=labeled_sm, stats=stats, groups=groups, blocks=blocks
    )
