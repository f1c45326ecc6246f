"""Batch command-line interface.

Subcommands: ``run`` executes the full pipeline from a config file, ``synth``
generates synthetic scenes with truth rasters, ``sweep`` reruns the pipeline
over a parameter grid, ``render`` re-renders saved artifacts, and ``eval``
computes a confusion matrix from saved label maps. Exit codes: 0 success,
2 configuration/usage error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import classify, rasters, synth
from .config import PipelineConfig, load_config
from .pipeline import StageError, run, sweep, sweep_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

_SCENES = {
    "edge": lambda size, db: synth.edge_layout(size, db) + (None,),
    "line": lambda size, db: synth.line_layout(size, db) + (None,),
    "urban": lambda size, db: synth.dot_grid_layout(size, db) + (None,),
    "mosaic": lambda size, db: synth.mosaic_layout(size, contrast_db=db) + (None,),
    "composite": lambda size, db: synth.composite_layout(size, db),
    "sweep": lambda size, db: synth.sweep_layout(size, db),
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polsketch")
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="execute the pipeline from a config file")
    runp.add_argument("--config", required=True)
    runp.add_argument("--input", help="override config input path")
    runp.add_argument("--output-dir", help="override config output directory")
    runp.add_argument("--seed", type=int)
    runp.add_argument("--disable-region-map", action="store_true",
                      help="superpixels + Wishart + vote only")

    synp = sub.add_parser("synth", help="generate a synthetic scene")
    synp.add_argument("--kind", required=True, choices=sorted(_SCENES))
    synp.add_argument("--size", type=int, default=128)
    synp.add_argument("--contrast-db", type=float, default=6.0)
    synp.add_argument("--looks", type=int, default=4)
    synp.add_argument("--seed", type=int, default=0)
    synp.add_argument("--out", required=True, help="output directory")

    swp = sub.add_parser("sweep", help="pipeline accuracy over a parameter grid")
    swp.add_argument("--config", required=True)
    swp.add_argument("--param", required=True, choices=("K", "N_r"))
    swp.add_argument("--start", type=int)
    swp.add_argument("--stop", type=int)
    swp.add_argument("--step", type=int)
    swp.add_argument("--out", required=True, help="output CSV path")

    rnd = sub.add_parser("render", help="re-render a saved artifact")
    rnd.add_argument("--input", required=True)
    rnd.add_argument("--what", required=True, choices=("span", "pauli", "labels"))
    rnd.add_argument("--out", required=True)
    rnd.add_argument("--seed", type=int, default=0, help="palette seed for labels")

    evp = sub.add_parser("eval", help="confusion matrix from saved label maps")
    evp.add_argument("--pred", required=True)
    evp.add_argument("--truth", required=True)
    evp.add_argument("--out", required=True)
    evp.add_argument("--ignore", type=int, default=None)
    return p


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.input:
            cfg.input = args.input
        if args.output_dir:
            cfg.output_dir = args.output_dir
        if args.seed is not None:
            cfg.seed = args.seed
        if args.disable_region_map:
            cfg.use_region_map = False
        cfg.validate()
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        res = run(cfg)
    except StageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_STAGE
    if res.confusion is not None:
        print(f"average accuracy: {res.confusion.average:.2f}%")
    print(f"artifacts in {cfg.output_dir}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    try:
        layout, mats, truth = _SCENES[args.kind](args.size, args.contrast_db)
    except (ValueError, TypeError) as exc:
        print(f"scene error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    scene = synth.sample_wishart_scene(layout, mats, args.looks, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rasters.save_image(out / "scene.t3img", scene.image)
    rasters.write_pgm(out / "layout.pgm", layout.astype(np.int64))
    rasters.write_pgm(
        out / "truth.pgm", (truth if truth is not None else layout).astype(np.int64)
    )
    print(f"scene written to {out}")
    return EXIT_OK


_SWEEP_DEFAULTS = {"K": (3, 21, 2), "N_r": (10, 50, 5)}


def _cmd_sweep(args) -> int:
    try:
        cfg = load_config(args.config)
        start, stop, step = _SWEEP_DEFAULTS[args.param]
        start = args.start if args.start is not None else start
        stop = args.stop if args.stop is not None else stop
        step = args.step if args.step is not None else step
        values = list(range(start, stop + 1, step))
        if not values:
            raise ValueError("empty sweep range")
        if not cfg.truth:
            raise ValueError("sweep requires a truth raster in the config")
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = sweep(cfg, args.param, values)
    Path(args.out).write_text(sweep_csv(rows))
    missing = sum(1 for _, acc in rows if acc is None)
    print(f"{len(rows)} rows written to {args.out}" + (f" ({missing} failed)" if missing else ""))
    return EXIT_OK


def _cmd_render(args) -> int:
    try:
        if args.what in ("span", "pauli"):
            img = rasters.load_image(args.input)
            if args.what == "span":
                sp = rasters.span(img)
                rasters.write_pgm(
                    args.out, rasters.to_gray(rasters.ScalarRaster(np.log1p(sp.values)))
                )
            else:
                r, g, b = rasters.pauli_rgb(img)
                rgb = np.stack(
                    [np.round(255 * c.values).astype(np.uint8) for c in (r, g, b)],
                    axis=-1,
                )
                rasters.write_ppm(args.out, rgb)
        else:
            labels = rasters.read_pgm(args.input)
            pal = rasters.label_palette(int(labels.max()) + 1, seed=args.seed)
            rasters.write_ppm(args.out, rasters.palette_map(labels, pal))
    except (OSError, rasters.RasterIOError, ValueError) as exc:
        print(f"render error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"rendered {args.what} to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    try:
        pred = rasters.read_pgm(args.pred)
        truth = rasters.read_pgm(args.truth)
        cmap = classify.ClassMap(
            labels=pred.astype(np.int32),
            centers=np.zeros((int(pred.max()) + 1, 3, 3), dtype=np.complex128),
        )
        cm = classify.evaluate(cmap, truth, mapping="auto", ignore_label=args.ignore)
    except (OSError, rasters.RasterIOError, ValueError) as exc:
        print(f"eval error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    Path(args.out).write_text(cm.to_csv())
    print(f"average accuracy: {cm.average:.2f}%")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "synth": _cmd_synth,
    "sweep": _cmd_sweep,
    "render": _cmd_render,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
