"""End-to-end batch pipeline: detection, sketch, region map, subspace
segmentation, classification, and artifact emission.

Every stage is pure given (config, input image), and all randomness flows
through the config seed, so a rerun with the same config produces a
byte-identical artifact directory. Disabling the region map degrades the
pipeline to superpixels + Wishart zones + majority vote, the over-
segmentation-only ablation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import classify, detect, rasters, regions, segment, sketch
from .config import PipelineConfig


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineResult:
    config: PipelineConfig
    image: rasters.CoherencyImage
    fields: dict = field(default_factory=dict)
    hybrid: detect.EnergyField | None = None
    edge_mask: np.ndarray | None = None
    sketch_map: sketch.SketchMap | None = None
    extraction: regions.RegionExtraction | None = None
    superpixels: segment.SuperpixelPartition | None = None
    partition: segment.SuperpixelPartition | None = None
    segmap: segment.SegmentationMap | None = None
    merge_log: list = field(default_factory=list)
    classes_wishart: classify.ClassMap | None = None
    classes_final: classify.ClassMap | None = None
    confusion: classify.ConfusionMatrix | None = None
    warnings: list = field(default_factory=list)


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc

        return inner

    return wrap


@_stage("load")
def _load(cfg: PipelineConfig) -> rasters.CoherencyImage:
    return rasters.load_image(cfg.input, format=cfg.input_format)


@_stage("detect")
def _detect(res: PipelineResult) -> None:
    cfg = res.config
    bank = detect.build_filter_bank(cfg.scales, cfg.orientations)
    fields = detect.detector_fields(res.image, bank)
    fused_edge = detect.fuse_energy(fields["cfar_edge"], fields["grad_edge"])
    fused_line = detect.fuse_energy(fields["cfar_line"], fields["grad_line"])
    hybrid = detect.hybrid_energy(fused_edge, fused_line)
    fields["fused_edge"] = fused_edge
    fields["fused_line"] = fused_line
    res.fields = fields
    res.hybrid = hybrid
    res.edge_mask = detect.nonmax_suppress(hybrid)


@_stage("sketch")
def _sketch(res: PipelineResult) -> None:
    cfg = res.config
    lines = sketch.pursue_sketch(res.edge_mask, res.hybrid)
    scored = sketch.score_lines(lines, res.image)
    res.sketch_map = sketch.select_lines(
        scored, res.image.shape, mode=cfg.clg_mode, value=cfg.clg_value
    )
    if res.sketch_map.status != "ok":
        res.warnings.append(f"sketch: {res.sketch_map.status}")


@_stage("regionmap")
def _regionmap(res: PipelineResult) -> None:
    cfg = res.config
    res.extraction = regions.extract_region_map(
        res.sketch_map,
        k=cfg.k_neighbors,
        theta0=cfg.theta0_deg,
        r=cfg.mass_ratio,
        side_fraction=cfg.side_fraction,
        wedge_deg=cfg.wedge_deg,
        structural_width=cfg.structural_width,
    )
    res.warnings.extend(res.extraction.stats.warnings)


@_stage("superpixels")
def _superpixels(res: PipelineResult) -> None:
    cfg = res.config
    res.superpixels = segment.mean_shift_superpixels(
        res.image, cfg.ms_spatial, cfg.ms_range, cfg.ms_min_region
    )


@_stage("segment")
def _segment(res: PipelineResult) -> None:
    cfg = res.config
    part = res.superpixels
    if cfg.use_region_map:
        rmap = res.extraction.region_map
        tags = segment.map_region_to_superpixels(part, rmap)
        part = segment.SuperpixelPartition.from_labels(part.region_id, res.image, tags)
        part = segment.merge_aggregated(part, rmap, res.image)
        part, parents = segment.form_structural_parents(
            part, res.extraction.blocks, res.image
        )
        part, _, split_warnings = segment.split_structural(
            part, parents, res.hybrid, res.image
        )
        res.warnings.extend(split_warnings)
        part, merge_log, merge_warnings = segment.hierarchical_merge(
            part, cfg.n_regions, res.image
        )
        res.merge_log = merge_log
        res.warnings.extend(merge_warnings)
    res.partition = part
    res.segmap = segment.to_segmentation_map(part)


@_stage("classify")
def _classify(res: PipelineResult) -> None:
    cfg = res.config
    ha = classify.h_alpha(res.image)
    zones = classify.init_zones(ha, zones=cfg.class_zones)
    res.classes_wishart = classify.wishart_iterate(
        res.image, zones, cfg.wishart_max_iter, cfg.wishart_min_change
    )
    res.classes_final = classify.semantic_vote(res.classes_wishart, res.segmap)


@_stage("evaluate")
def _evaluate(res: PipelineResult, truth: np.ndarray) -> None:
    cfg = res.config
    ignore = cfg.ignore_label if cfg.ignore_label >= 0 else None
    res.confusion = classify.evaluate(
        res.classes_final, truth, mapping="auto", ignore_label=ignore
    )


def run(cfg: PipelineConfig, image: rasters.CoherencyImage | None = None,
        truth: np.ndarray | None = None, write: bool = True) -> PipelineResult:
    """Execute the pipeline. ``image``/``truth`` may be passed directly to
    bypass file loading (the sweep harness does); otherwise they come from
    the config paths."""
    cfg.validate()
    if image is None:
        image = _load(cfg)
    res = PipelineResult(config=cfg, image=image)
    if cfg.use_region_map:
        _detect(res)
        _sketch(res)
        _regionmap(res)
    _superpixels(res)
    _segment(res)
    _classify(res)
    if truth is None and cfg.truth:
        truth = _load_truth(cfg.truth)
    if truth is not None:
        _evaluate(res, truth)
    if write:
        write_artifacts(res)
    return res


@_stage("load")
def _load_truth(path) -> np.ndarray:
    return rasters.read_pgm(path)


REGION_PALETTE = np.array(
    [[255, 255, 255], [0, 0, 0], [128, 128, 128]], dtype=np.uint8
)  # homogenous white, structural black, aggregated gray


@_stage("write")
def write_artifacts(res: PipelineResult) -> Path:
    cfg = res.config
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())

    sp = rasters.span(res.image)
    rasters.write_pgm(out / "span.pgm", rasters.to_gray(rasters.ScalarRaster(np.log1p(sp.values))))
    r, g, b = rasters.pauli_rgb(res.image)
    rgb = np.stack(
        [np.round(255 * c.values).astype(np.uint8) for c in (r, g, b)], axis=-1
    )
    rasters.write_ppm(out / "pauli.ppm", rgb)

    if res.fields:
        for key in ("cfar_edge", "cfar_line", "grad_edge", "grad_line"):
            f = res.fields[key]
            rasters.write_pgm(out / f"energy_{key}.pgm", rasters.to_gray(f.energy))
        rasters.write_pgm(out / "energy_fused.pgm", rasters.to_gray(res.hybrid.energy))
        rasters.write_pgm(out / "edges.pgm", res.edge_mask.astype(np.uint8) * 255)

    if res.sketch_map is not None and res.extraction is not None:
        labeled = res.extraction.sketch
        (out / "sketch.txt").write_text(sketch.sketch_to_text(labeled))
        base = rasters.to_gray(rasters.ScalarRaster(np.log1p(sp.values)))
        rasters.write_ppm(out / "sketch_overlay.ppm", sketch.render_overlay(base, labeled))
        rmap = res.extraction.region_map
        rasters.write_ppm(out / "region_map.ppm", rasters.palette_map(rmap.labels, REGION_PALETTE))
        rasters.write_pgm(out / "region_groups.pgm", (rmap.aggregated_id + 1).astype(np.int64))
        (out / "diagnostics.txt").write_text(_diagnostics_text(res))

    if res.superpixels is not None:
        pal = rasters.label_palette(res.superpixels.n_regions, seed=cfg.seed)
        rasters.write_ppm(
            out / "superpixels.ppm", rasters.palette_map(res.superpixels.region_id, pal)
        )
    if res.segmap is not None:
        pal = rasters.label_palette(res.segmap.n_regions, seed=cfg.seed + 1)
        rasters.write_ppm(
            out / "segmentation.ppm", rasters.palette_map(res.segmap.region_id, pal)
        )
        (out / "segmentation_stats.csv").write_text(segment.region_stats_csv(res.partition))
    if res.classes_wishart is not None:
        pal = rasters.label_palette(max(res.classes_wishart.class_count, res.classes_final.class_count), seed=cfg.seed + 2)
        rasters.write_ppm(
            out / "classes_wishart.ppm", rasters.palette_map(res.classes_wishart.labels, pal)
        )
        rasters.write_ppm(
            out / "classes_final.ppm", rasters.palette_map(res.classes_final.labels, pal)
        )
    if res.confusion is not None:
        (out / "confusion.csv").write_text(res.confusion.to_csv())
    return out


def _diagnostics_text(res: PipelineResult) -> str:
    ex = res.extraction
    st = ex.stats
    lines = [
        f"sketch_lines = {len(ex.sketch.lines)}",
        f"sketch_segments = {len(ex.sketch.segments)}",
        f"clg_threshold = {res.sketch_map.threshold!r}",
        f"delta1 = {st.delta1!r}",
        f"delta2 = {st.delta2!r}",
        f"groups = {len(ex.groups)}",
        f"adh_bin_width = {st.bin_width!r}",
        "adh_counts = " + ",".join(str(int(c)) for c in st.counts),
    ]
    if res.partition is not None:
        tags = res.partition.subspace
        lines += [
            f"regions_total = {res.partition.n_regions}",
            f"regions_aggregated = {int((tags == regions.AGGREGATED).sum())}",
            f"regions_structural = {int((tags == regions.STRUCTURAL).sum())}",
            f"regions_homogenous = {int((tags == regions.HOMOGENOUS).sum())}",
        ]
    lines += [f"warning = {w}" for w in res.warnings]
    return "\n".join(lines) + "\n"


def sweep(cfg: PipelineConfig, param: str, values, image=None, truth=None):
    """Run the pipeline once per parameter value; returns (value, average
    accuracy) rows. Failed runs are skipped with a None accuracy."""
    if param not in ("K", "N_r"):
        raise ValueError("sweep parameter must be K or N_r")
    if truth is None and not cfg.truth:
        raise ValueError("sweep needs a truth raster")
    rows = []
    for v in values:
        c = replace(cfg)
        if param == "K":
            c.k_neighbors = int(v)
        else:
            c.n_regions = int(v)
        try:
            r = run(c, image=image, truth=truth, write=False)
            rows.append((int(v), r.confusion.average))
        except StageError:
            rows.append((int(v), None))
    return rows


def sweep_csv(rows) -> str:
    out = ["value,average_accuracy"]
    for v, acc in rows:
        out.append(f"{v}," + ("" if acc is None else f"{acc:.4f}"))
    return "\n".join(out) + "\n"
