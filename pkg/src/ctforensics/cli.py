"""Command-line entry point.

Every subcommand reads one YAML config (``--config``) plus dotted overrides
(``--set train.max_epochs=5``) and works inside the workspace directory
(``--workspace`` or ``$CTFORENSICS_WORKSPACE``). Exit status is 0 on success,
2 for configuration errors, 3 for data errors and 4 for model errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import FAKE, __version__
from .config import PipelineConfig, load_config
from .errors import ConfigError, ForensicsError
from .heatmap import export_png, save_heatmap
from .patch_grid import full_grid
from .volume_io import load_scan

log = logging.getLogger("ctforensics")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="YAML configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. train.max_epochs=5 (repeatable)")
    p.add_argument("--workspace", help="workspace root (default: config value or $CTFORENSICS_WORKSPACE)")
    p.add_argument("--seed", type=int, help="master seed; also seeds detector training")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="threads for patch inference and grid search (default: logical cores)")
    p.add_argument("--dry-run", action="store_true", help="validate inputs and report counts without writing")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="ctforensics", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("build-dataset", parents=[common], help="generate synthetic scans, forgeries and manifests")
    sub.add_parser("train-local", parents=[common], help="train the patch detector on the manifest patches")

    p = sub.add_parser("detect", parents=[common], help="heatmap for every slice of a scan")
    p.add_argument("scan", type=Path, help="raw volume (.raw + .meta) or DICOM series folder")
    p.add_argument("--format", choices=("raw_volume", "dicom_series"), default="raw_volume")
    p.add_argument("--out", type=Path, help="output folder (default: <workspace>/heatmaps/<scan_id>)")
    p.add_argument("--png", action="store_true", help="also export grayscale heatmap images")

    sub.add_parser("train-global", parents=[common], help="fit PCA + SVM on heatmaps of the global split")

    p = sub.add_parser("classify", parents=[common], help="per-slice labels and a scan verdict")
    p.add_argument("scan", type=Path)
    p.add_argument("--format", choices=("raw_volume", "dicom_series"), default="raw_volume")
    p.add_argument("--out", type=Path, help="prediction CSV (default: <workspace>/predictions/<scan_id>.csv)")

    p = sub.add_parser("evaluate", parents=[common], help="2D and 3D metrics for prediction CSVs")
    p.add_argument("predictions", type=Path, nargs="+", help="prediction CSV files or folders of them")
    p.add_argument("--ground-truth", type=Path, required=True, help="slice manifest with labels")
    p.add_argument("--tampers", type=Path, help="tamper records (default: tampers.csv beside the ground truth)")
    p.add_argument("--name", default="test", help="test-set name in the report")
    p.add_argument("--out", type=Path, help="report folder (default: <workspace>/reports)")
    return parser


def resolve_config(args) -> PipelineConfig:
    overrides = list(args.overrides)
    if args.workspace:
        overrides.append(f"workspace={args.workspace}")
    cfg = load_config(args.config, overrides)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    if args.workers < 1:
        raise ConfigError("--workers must be positive")
    return replace(cfg, workers=args.workers)


def _guard(paths, force: bool):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise ConfigError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _print(obj):
    print(json.dumps(obj, indent=2, default=str))


def cmd_build_dataset(cfg, args):
    from .pipeline import Workspace, build_dataset_step

    ws = Workspace(cfg.workspace)
    if not args.dry_run:
        _guard([ws.dataset / "slices.csv", ws.dataset / "volumes"], args.force)
    _, summary = build_dataset_step(cfg, ws, dry_run=args.dry_run)
    _print(summary)


def cmd_train_local(cfg, args):
    from .pipeline import Workspace, set_workers, train_local_step

    set_workers(cfg.workers)
    ws = Workspace(cfg.workspace)
    if not args.dry_run:
        _guard([ws.checkpoint], args.force)
    _, summary = train_local_step(cfg, ws, dry_run=args.dry_run)
    _print(summary)


def _scan(args, cfg):
    volume = load_scan(args.scan, args.format)
    if volume.pixels.shape[1:] != (cfg.grid.ct_size, cfg.grid.ct_size):
        raise ConfigError(f"scan slices are {volume.pixels.shape[1]}x{volume.pixels.shape[2]} but "
                          f"grid.ct_size is {cfg.grid.ct_size}")
    return volume


def cmd_detect(cfg, args):
    from .pipeline import Workspace, detect_volume, load_detector, require_file, set_workers

    set_workers(cfg.workers)
    ws = Workspace(cfg.workspace)
    require_file(ws.checkpoint, "detector checkpoint")
    volume = _scan(args, cfg)
    out = args.out or ws.heatmaps / volume.scan_id
    targets = [out / f"slice_{z:04d}.hmap" for z in range(volume.depth)]
    if args.dry_run:
        _print(dict(scan=volume.scan_id, slices=volume.depth, windows_per_slice=len(full_grid(cfg.grid)),
                    heatmap_size=cfg.grid.cells, out=str(out)))
        return
    _guard(targets, args.force)
    heatmaps = detect_volume(load_detector(ws), volume, cfg)
    for z, hm in heatmaps.items():
        save_heatmap(hm, out / f"slice_{z:04d}.hmap")
        if args.png:
            export_png(hm, out / f"slice_{z:04d}.png")
    _print(dict(scan=volume.scan_id, heatmaps=len(heatmaps), heatmap_size=cfg.grid.cells, out=str(out)))


def cmd_train_global(cfg, args):
    from .pipeline import Workspace, require_file, set_workers, train_global_step

    set_workers(cfg.workers)
    ws = Workspace(cfg.workspace)
    require_file(ws.checkpoint, "detector checkpoint")
    if not args.dry_run:
        _guard([ws.bundle], args.force)
    _, summary = train_global_step(cfg, ws, dry_run=args.dry_run)
    _print(summary)


def cmd_classify(cfg, args):
    from . import plotting
    from .pipeline import (Workspace, classify_heatmaps, detect_volume, load_detector, load_global, require_file,
                           set_workers, verdict_of, write_prediction_rows)

    set_workers(cfg.workers)
    ws = Workspace(cfg.workspace)
    require_file(ws.checkpoint, "detector checkpoint")
    require_file(ws.bundle, "global model bundle")
    volume = _scan(args, cfg)
    out = args.out or ws.predictions / f"{volume.scan_id}.csv"
    if args.dry_run:
        _print(dict(scan=volume.scan_id, slices=volume.depth, out=str(out)))
        return
    _guard([out], args.force)
    pca, svm, glcm_spec = load_global(ws)
    if glcm_spec != cfg.glcm:
        raise ConfigError(f"the global model was trained with {glcm_spec}, config has {cfg.glcm}")
    rows = classify_heatmaps(detect_volume(load_detector(ws), volume, cfg), pca, svm, cfg, volume.scan_id)
    verdict = verdict_of(rows, cfg)
    write_prediction_rows(rows, out)
    plotting.scan_profile(rows, out.with_suffix(".png"), verdict)
    flagged = [r["slice_index"] for r in rows if r["label_pred"] == FAKE]
    print(f"scan_verdict {volume.scan_id} {verdict} (flagged slices: {flagged or 'none'})")


def cmd_evaluate(cfg, args):
    from .pipeline import evaluate_predictions, ground_truth_index, read_prediction_rows, write_reports, Workspace
    from .synth_forge import read_csv, read_tampers

    files = []
    for p in args.predictions:
        files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    if not files:
        raise ConfigError("no prediction files given")
    preds = [r for f in files for r in read_prediction_rows(f)]
    truth = ground_truth_index(read_csv(args.ground_truth))
    tampers_path = args.tampers or args.ground_truth.parent / "tampers.csv"
    tampers = read_tampers(tampers_path) if tampers_path.is_file() else {}
    # only ground-truth slices of predicted volumes have to be covered
    predicted = {r["scan_id"] for r in preds}
    truth = {k: v for k, v in truth.items() if k[0] in predicted}
    rows, _, _ = evaluate_predictions(preds, truth, tampers, cfg, args.name)
    out = args.out or Workspace(cfg.workspace).reports
    if args.dry_run:
        print(json.dumps(rows, indent=2))
        return
    _guard([out / "metrics.csv"], args.force)
    written = write_reports(rows, out, out)
    print(written["text"], end="")
    print(f"wrote {written['csv']} and {written['figure']}")


COMMANDS = {
    "build-dataset": cmd_build_dataset,
    "train-local": cmd_train_local,
    "detect": cmd_detect,
    "train-global": cmd_train_global,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except ForensicsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
