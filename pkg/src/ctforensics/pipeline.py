"""Pipeline steps over a workspace directory.

Layout::

    <workspace>/config.yaml
    <workspace>/dataset/{volumes/, slices.csv, patches.csv, tampers.csv}
    <workspace>/detector/{detector.pt, train_log.csv}
    <workspace>/heatmaps/<volume_id>/slice_NNNN.hmap
    <workspace>/global/{model.npz, grid_search.csv, features.npy, features.csv}
    <workspace>/predictions/<volume_id>.csv
    <workspace>/reports/{metrics.csv, summary.txt, localization.csv}
    <workspace>/figures/*.png
"""

from __future__ import annotations

import csv
import logging
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import FAKE, REAL, plotting
from .config import PipelineConfig, dump_config
from .detector import PatchDetector, load_checkpoint, predict_proba, save_checkpoint, train
from .detector.checkpoint import write_log
from .errors import AlignmentError, DataError, ModelError
from .evaluation import (MetricsReport, SlicePrediction, area_verdict, chebyshev,
                         real_area_false_positive, report_row, scan_verdict, slice_metrics, spatially_associated,
                         text_summary, write_metrics_csv)
from .glcm import feature_matrix, save_feature_store
from .global_classifier import ReducedRankWarning, fit_pca, fit_svm, load_bundle, save_bundle, transform_pca, write_report
from .heatmap import Heatmap, assemble_arrays, load_heatmap, peak_cell, save_heatmap
from .patch_grid import GridSpec, extract_patches, full_grid
from .synth_forge import TamperRecord, VolumeStore, build_dataset, read_csv, write_dataset
from .volume_io import ScanVolume, normalize_slice

log = logging.getLogger(__name__)

PRED_FIELDS = ("scan_id", "slice_index", "label_pred", "score", "ground_truth", "tamper_area_id", "peak_gx", "peak_gy")


class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    dataset = property(lambda self: self.root / "dataset")
    checkpoint = property(lambda self: self.root / "detector" / "detector.pt")
    train_log = property(lambda self: self.root / "detector" / "train_log.csv")
    heatmaps = property(lambda self: self.root / "heatmaps")
    bundle = property(lambda self: self.root / "global" / "model.npz")
    search_report = property(lambda self: self.root / "global" / "grid_search.csv")
    features = property(lambda self: self.root / "global" / "features")
    predictions = property(lambda self: self.root / "predictions")
    reports = property(lambda self: self.root / "reports")
    figures = property(lambda self: self.root / "figures")

    def heatmap_path(self, volume_id: str, z: int) -> Path:
        return self.heatmaps / volume_id / f"slice_{z:04d}.hmap"

    def store(self) -> VolumeStore:
        if not (self.dataset / "slices.csv").is_file():
            raise DataError(f"no dataset manifest under {self.dataset}; run build-dataset first")
        return VolumeStore(self.dataset)


def set_workers(workers: int):
    torch.set_num_threads(max(1, int(workers)))


# -- dataset ------------------------------------------------------------------------

def dataset_summary(ds) -> dict:
    by_split = {}
    for r in ds.slices:
        s = by_split.setdefault(r["split"], {"scans": set(), FAKE: 0, REAL: 0, "patches": 0})
        s["scans"].add(r["scan_id"])
        s[r["label"]] += 1
    for p in ds.patches:
        by_split[p["split"]]["patches"] += 1
    return dict(volumes=len(ds.volumes), tampered=len(ds.tampers), slices=len(ds.slices), patches=len(ds.patches),
                splits={k: dict(v, scans=len(v["scans"])) for k, v in sorted(by_split.items())})


def build_dataset_step(cfg: PipelineConfig, ws: Workspace, dry_run=False):
    ds = build_dataset(cfg.dataset, cfg.grid, cfg.sampler, cfg.forge, cfg.seed)
    if not dry_run:
        write_dataset(ds, ws.dataset)
        dump_config(cfg, ws.root / "config.yaml")
    return ds, dataset_summary(ds)


# -- local detector -----------------------------------------------------------------

def materialize_patches(rows, store, cfg: PipelineConfig):
    """(patches (n, S, S) float32, labels) for manifest patch rows, in row order."""
    img = cfg.grid.img_size
    groups: "OrderedDict[tuple, list]" = OrderedDict()
    for i, r in enumerate(rows):
        groups.setdefault((r["volume_id"], int(r["slice_index"])), []).append(i)
    out = np.empty((len(rows), img, img), dtype=np.float32)
    for (vid, z), idx in groups.items():
        image = normalize_slice(store[vid].pixels[z], cfg.normalization)
        centers = np.array([(int(rows[i]["x"]), int(rows[i]["y"])) for i in idx])
        out[idx] = extract_patches(image, centers, img)
    return out, [r["label"] for r in rows]


def train_local_step(cfg: PipelineConfig, ws: Workspace, dry_run=False):
    rows = read_csv(ws.store().root / "patches.csv")
    tr = [r for r in rows if r["split"] == "train"]
    va = [r for r in rows if r["split"] == "val"]
    if not tr or not va:
        raise DataError("the patch manifest needs both train and val rows")
    if dry_run:
        return None, dict(train_patches=len(tr), val_patches=len(va))
    store = ws.store()
    x_tr, y_tr = materialize_patches(tr, store, cfg)
    x_va, y_va = materialize_patches(va, store, cfg)
    result = train(x_tr, y_tr, x_va, y_va, cfg.train, feature_mode=cfg.detector.feature_mode)
    save_checkpoint(result.model, ws.checkpoint)
    write_log(result.log, ws.train_log)
    plotting.training_curves(result.log, ws.figures / "training_curves.png")
    return result, dict(train_patches=len(tr), val_patches=len(va), best_epoch=result.best_epoch,
                        stopped_epoch=result.stopped_epoch, steps=result.steps)


def load_detector(ws: Workspace) -> PatchDetector:
    return load_checkpoint(ws.checkpoint)


def detect_slice(model: PatchDetector, image, cfg: PipelineConfig) -> Heatmap:
    """Heatmap of one normalised slice; every lattice window is classified."""
    pts = full_grid(cfg.grid).points()
    probs = predict_proba(model, extract_patches(image, pts, cfg.grid.img_size), cfg.detector.inference_batch)
    # heatmaps are stored as float32; round here so fresh and cached maps agree
    return assemble_arrays(pts, probs.astype(np.float32).astype(np.float64), cfg.grid)


def detect_volume(model, volume: ScanVolume, cfg: PipelineConfig, slices=None) -> dict:
    if volume.pixels.shape[1:] != (cfg.grid.ct_size, cfg.grid.ct_size):
        raise DataError(f"scan {volume.scan_id} has {volume.pixels.shape[1:]} slices but the grid expects "
                        f"{cfg.grid.ct_size}x{cfg.grid.ct_size}")
    zs = range(volume.depth) if slices is None else slices
    return {int(z): detect_slice(model, normalize_slice(volume.pixels[z], cfg.normalization), cfg) for z in zs}


@dataclass
class HeatmapCache:
    """Heatmaps of dataset slices, computed once and kept under the workspace."""

    ws: Workspace
    model: PatchDetector
    cfg: PipelineConfig
    store: Optional[VolumeStore] = None
    computed: int = field(default=0, init=False)

    def get(self, volume_id: str, z: int) -> Heatmap:
        path = self.ws.heatmap_path(volume_id, z)
        if path.is_file():
            return load_heatmap(path)
        store = self.store or self.ws.store()
        hm = detect_slice(self.model, normalize_slice(store[volume_id].pixels[z], self.cfg.normalization), self.cfg)
        save_heatmap(hm, path)
        self.computed += 1
        return hm

    def volume(self, volume_id: str, slices=None) -> dict:
        store = self.store or self.ws.store()
        zs = range(store[volume_id].depth) if slices is None else slices
        return {int(z): self.get(volume_id, int(z)) for z in zs}


# -- global classifier --------------------------------------------------------------

def train_global_step(cfg: PipelineConfig, ws: Workspace, dry_run=False, split: str = "global"):
    rows = [r for r in read_csv(ws.store().root / "slices.csv") if r["split"] == split]
    labels = [r["label"] for r in rows]
    if len(set(labels)) < 2:
        raise DataError(f"split {split!r} must contain both real and fake slices")
    if dry_run:
        return None, dict(slices=len(rows), fake=labels.count(FAKE), real=labels.count(REAL))
    cache = HeatmapCache(ws, load_detector(ws), cfg, ws.store())
    heatmaps = [cache.get(r["volume_id"], int(r["slice_index"])) for r in rows]
    feats = feature_matrix(heatmaps, cfg.glcm)
    save_feature_store(ws.features, [dict(r, scan_id=r["volume_id"]) for r in rows], feats)
    dims = min(cfg.global_model.pca_dims, feats.shape[1])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ReducedRankWarning)
        pca = fit_pca(feats, dims)
    for w in caught:
        log.warning("%s", w.message)
    svm, report = fit_svm(transform_pca(pca, feats), labels, cfg.search, seed=cfg.seed, workers=cfg.workers)
    save_bundle(ws.bundle, pca, svm, cfg.glcm)
    write_report(report, ws.search_report)
    plotting.grid_search(report, ws.figures / "grid_search.png")
    best = next(r for r in report if r["selected"])
    return (pca, svm, report), dict(slices=len(rows), pca_dims=pca.dims, kernel=best["kernel"], C=best["C"],
                                    gamma=best["gamma"], cv_accuracy=best["cv_accuracy"],
                                    support_vectors=len(svm.dual_coef))


def classify_heatmaps(heatmaps: dict, pca, svm, cfg: PipelineConfig, scan_id: str = "") -> list[dict]:
    """One row per slice: label, SVM decision value and the smoothed heatmap peak cell."""
    zs = sorted(heatmaps)
    if not zs:
        return []
    scores = svm.decision_function(transform_pca(pca, feature_matrix([heatmaps[z] for z in zs], cfg.glcm)))
    rows = []
    for z, s in zip(zs, scores):
        gx, gy = peak_cell(heatmaps[z], cfg.verdict.peak_sigma)
        rows.append(dict(scan_id=scan_id, slice_index=z, label_pred=FAKE if s > 0 else REAL, score=float(s),
                         ground_truth="", tamper_area_id="", peak_gx=gx, peak_gy=gy))
    return rows


def verdict_of(rows, cfg: PipelineConfig) -> str:
    flags = [r["label_pred"] == FAKE for r in sorted(rows, key=lambda r: r["slice_index"])]
    return scan_verdict(flags, cfg.verdict.scan_n, cfg.verdict.scan_m)


def write_prediction_rows(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PRED_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "score": repr(float(r["score"]))})
    return path


def read_prediction_rows(path) -> list[dict]:
    rows = read_csv(path)
    if rows and not {"scan_id", "slice_index", "label_pred"} <= set(rows[0]):
        raise DataError(f"{path} lacks scan_id/slice_index/label_pred columns")
    for r in rows:
        r["slice_index"] = int(r["slice_index"])
        r["score"] = float(r.get("score") or 0.0)
        for k in ("peak_gx", "peak_gy"):
            r[k] = int(r[k]) if r.get(k) not in (None, "") else None
    return rows


def load_global(ws: Workspace):
    return load_bundle(ws.bundle)


# -- evaluation ---------------------------------------------------------------------

def anchor_cell(center, spec: GridSpec) -> tuple[int, int]:
    """Nearest lattice cell to a pixel position."""
    g = [int(np.clip(np.floor((c - spec.half) / spec.stride + 0.5), 0, spec.cells - 1)) for c in center]
    return g[0], g[1]


def ground_truth_index(rows) -> dict:
    """(volume, slice) -> label from a slice manifest; volume is ``volume_id`` when present."""
    out = {}
    for r in rows:
        key = (r.get("volume_id") or r["scan_id"], int(r["slice_index"]))
        if key in out and out[key] != r["label"]:
            raise DataError(f"conflicting ground truth for {key}")
        out[key] = r["label"]
    return out


def evaluate_predictions(pred_rows, truth: dict, tampers: dict, cfg: PipelineConfig, name: str = "test",
                         require_all: bool = True):
    """2D slice metrics over predictions that have ground truth, and 3D area metrics
    over every scan whose predictions cover a full window.

    Returns (report rows, slice report, area report).
    """
    preds, covered = [], set()
    for r in pred_rows:
        key = (r["scan_id"], int(r["slice_index"]))
        gt = truth.get(key) or r.get("ground_truth") or None
        if gt:
            preds.append(SlicePrediction(r["scan_id"], key[1], r["label_pred"], r["score"], gt))
            covered.add(key)
    missing = sorted(set(truth) - covered)
    if require_all and missing:
        raise AlignmentError(f"{len(missing)} ground-truth slices have no prediction, e.g. {missing[0]}")
    if not preds:
        raise AlignmentError("no prediction matches the ground truth")
    slice_report = slice_metrics(preds)

    by_volume: dict = {}
    for r in pred_rows:
        by_volume.setdefault(r["scan_id"], []).append(r)
    spec = cfg.verdict.area
    tp = fp = fn = 0
    for vid, rows in sorted(by_volume.items()):
        rows = sorted(rows, key=lambda r: r["slice_index"])
        if len(rows) < spec.window:
            continue
        zs = [r["slice_index"] for r in rows]
        flags = np.array([r["label_pred"] == FAKE for r in rows])
        rec: Optional[TamperRecord] = tampers.get(vid)
        if rec is not None:
            if rec.slice_index not in zs:
                continue
            peaks = [(r.get("peak_gx"), r.get("peak_gy")) for r in rows]
            if all(p[0] is not None for p in peaks):
                flags = spatially_associated(flags, peaks, anchor_cell(rec.center, cfg.grid), cfg.verdict.peak_radius)
            if area_verdict(flags, zs.index(rec.slice_index), spec) == "true_positive":
                tp += 1
            else:
                fn += 1
        else:
            fp += real_area_false_positive(flags, spec)
    area_report = MetricsReport.for_areas(tp, fp, fn)
    rows = [report_row(name, "2D", slice_report), report_row(name, "3D", area_report)]
    return rows, slice_report, area_report


def write_reports(rows, ws_reports: Path, figures: Path) -> dict:
    csv_path = write_metrics_csv(rows, Path(ws_reports) / "metrics.csv")
    summary = text_summary(rows)
    txt = Path(ws_reports) / "summary.txt"
    txt.write_text(summary)
    fig = plotting.metrics_bars(rows, Path(figures) / "metrics.png")
    return dict(csv=csv_path, summary=txt, figure=fig, text=summary)


# -- end-to-end experiment ----------------------------------------------------------

@dataclass
class ExperimentResult:
    slice_report: MetricsReport
    area_report: MetricsReport
    scan_accuracy: float
    scan_verdicts: dict  # volume_id -> (verdict, truth)
    localization_rate: float
    localization_rows: list
    train_summary: dict
    global_summary: dict
    workspace: Path


def run_experiment(cfg: PipelineConfig, figures: bool = True) -> ExperimentResult:
    """Dataset -> detector -> global classifier -> held-out test split, in ``cfg.workspace``."""
    set_workers(cfg.workers)
    ws = Workspace(cfg.workspace)
    ds, _ = build_dataset_step(cfg, ws)
    _, train_summary = train_local_step(cfg, ws)
    (pca, svm, _), global_summary = train_global_step(cfg, ws)

    cache = HeatmapCache(ws, load_detector(ws), cfg, ws.store())
    test_rows = [r for r in ds.slices if r["split"] == "test"]
    test_scans = sorted({r["scan_id"] for r in test_rows})
    pred_rows, verdicts = [], {}
    for sid in test_scans:
        hms = cache.volume(sid)
        rows = classify_heatmaps(hms, pca, svm, cfg, sid)
        truth = "tampered" if sid in ds.tampers else "benign"
        verdicts[sid] = (verdict_of(rows, cfg), truth)
        pred_rows.extend(rows)
        write_prediction_rows(rows, ws.predictions / f"{sid}.csv")
        if figures and sid in ds.tampers:
            rec = ds.tampers[sid]
            span = range(rec.slice_index - rec.depth_half_extent, rec.slice_index + rec.depth_half_extent + 1)
            plotting.scan_profile(rows, ws.figures / f"scan_{sid}.png", verdicts[sid][0], list(span))
    # pre-tamper copies only contribute their labelled slices
    orig = {}
    for r in test_rows:
        if r["volume_id"] not in test_scans:
            orig.setdefault(r["volume_id"], []).append(int(r["slice_index"]))
    for vid, zs in sorted(orig.items()):
        rows = classify_heatmaps(cache.volume(vid, sorted(zs)), pca, svm, cfg, vid)
        pred_rows.extend(rows)
        write_prediction_rows(rows, ws.predictions / f"{vid}.csv")

    truth = ground_truth_index(test_rows)
    report_rows, slice_report, area_report = evaluate_predictions(pred_rows, truth, ds.tampers, cfg, "test")
    write_reports(report_rows, ws.reports, ws.figures)
    scan_acc = float(np.mean([v == t for v, t in verdicts.values()]))

    # localisation on detected tampered slices
    by_key = {(r["scan_id"], r["slice_index"]): r for r in pred_rows}
    loc = []
    for r in test_rows:
        if r["label"] != FAKE:
            continue
        p = by_key[(r["volume_id"], int(r["slice_index"]))]
        if p["label_pred"] != FAKE:
            continue
        true_cell = anchor_cell((int(r["tamper_x"]), int(r["tamper_y"])), cfg.grid)
        d = chebyshev((p["peak_gx"], p["peak_gy"]), true_cell)
        loc.append(dict(scan_id=r["scan_id"], slice_index=int(r["slice_index"]), peak_gx=p["peak_gx"],
                        peak_gy=p["peak_gy"], true_gx=true_cell[0], true_gy=true_cell[1], distance=d))
    with (ws.reports / "localization.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["scan_id", "slice_index", "peak_gx", "peak_gy", "true_gx", "true_gy",
                                           "distance"])
        w.writeheader()
        w.writerows(loc)
    loc_rate = float(np.mean([d["distance"] <= cfg.verdict.peak_radius for d in loc])) if loc else 0.0

    if figures:
        shown = [r for r in test_rows if r["label"] == FAKE and int(r["slice_index"]) == ds.tampers[r["scan_id"]].slice_index]
        store = ws.store()
        for r in shown[:4]:
            vid, z = r["volume_id"], int(r["slice_index"])
            image = normalize_slice(store[vid].pixels[z], cfg.normalization)
            hm = cache.get(vid, z)
            plotting.heatmap_overlay(image, hm, ws.figures / f"overlay_{vid}_{z:02d}.png",
                                     (int(r["tamper_x"]), int(r["tamper_y"])), peak_cell(hm, cfg.verdict.peak_sigma),
                                     title=f"{vid} slice {z}")

    log.info("slice F1 %s, scan accuracy %.3f, localisation %.3f", slice_report.f1, scan_acc, loc_rate)
    return ExperimentResult(slice_report, area_report, scan_acc, verdicts, loc_rate, loc, train_summary,
                            global_summary, ws.root)


def require_file(path: Path, what: str):
    if not Path(path).is_file():
        raise ModelError(f"missing {what}: {path}")
