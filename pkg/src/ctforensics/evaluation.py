"""Slice-level metrics, the 3-D tampered-area rule and the n-of-m scan verdict."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import FAKE, REAL
from .errors import ConfigError, DataError, InsufficientDataError

TRUE_POSITIVE = "true_positive"
FALSE_NEGATIVE = "false_negative"
TAMPERED = "tampered"
BENIGN = "benign"


@dataclass(frozen=True)
class SlicePrediction:
    scan_id: str
    slice_index: int
    label_pred: str
    score: float = 0.0
    ground_truth: Optional[str] = None
    tamper_area_id: Optional[str] = None

    def __post_init__(self):
        if self.slice_index < 0:
            raise DataError("slice_index must be nonnegative")
        for v in (self.label_pred, self.ground_truth):
            if v not in (REAL, FAKE, None):
                raise DataError(f"unknown label {v!r}")


@dataclass(frozen=True)
class AreaVerdictSpec:
    window: int = 10
    threshold: int = 9

    def __post_init__(self):
        if not 1 <= self.threshold <= self.window:
            raise ConfigError(f"need 1 <= threshold <= window, got {self.threshold} of {self.window}")


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    tn: Optional[int]
    fp: int
    fn: int
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]

    @property
    def total(self) -> int:
        return self.tp + (self.tn or 0) + self.fp + self.fn

    @classmethod
    def from_counts(cls, tp, tn, fp, fn) -> "MetricsReport":
        total = tp + tn + fp + fn
        acc = (tp + tn) / total if total else None
        prec = tp / (tp + fp) if tp + fp else None
        rec = tp / (tp + fn) if tp + fn else None
        f1 = 2 * prec * rec / (prec + rec) if prec is not None and rec is not None and prec + rec else None
        return cls(tp, tn, fp, fn, acc, prec, rec, f1)

    @classmethod
    def for_areas(cls, tp, fp, fn) -> "MetricsReport":
        """Area-level counts have no true negatives, so TN and accuracy are absent."""
        r = cls.from_counts(tp, 0, fp, fn)
        return cls(tp, None, fp, fn, None, r.precision, r.recall, r.f1)


def slice_metrics(preds: Sequence[SlicePrediction]) -> MetricsReport:
    """Confusion counts with fake as the positive class; undefined ratios are None."""
    tp = tn = fp = fn = 0
    for p in preds:
        if p.ground_truth is None:
            raise DataError(f"prediction for {p.scan_id}/{p.slice_index} has no ground truth")
        if p.label_pred == FAKE:
            tp, fp = (tp + 1, fp) if p.ground_truth == FAKE else (tp, fp + 1)
        else:
            fn, tn = (fn + 1, tn) if p.ground_truth == FAKE else (fn, tn + 1)
    return MetricsReport.from_counts(tp, tn, fp, fn)


def _as_bool(flags) -> np.ndarray:
    out = []
    for f in flags:
        if isinstance(f, SlicePrediction):
            out.append(f.label_pred == FAKE)
        elif isinstance(f, str):
            out.append(f in (FAKE, TAMPERED))
        else:
            out.append(bool(f))
    return np.asarray(out, dtype=bool)


def window_counts(flags, m: int) -> np.ndarray:
    """Positives in every length-m window; entry s covers [s, s + m)."""
    f = _as_bool(flags).astype(np.int64)
    c = np.concatenate([[0], np.cumsum(f)])
    return c[m:] - c[:-m]


def area_verdict(flags, central_index: int, spec: AreaVerdictSpec = AreaVerdictSpec()) -> str:
    """True positive iff some window of ``spec.window`` consecutive slices that
    contains the central slice holds at least ``spec.threshold`` positives."""
    f = _as_bool(flags)
    m, k = spec.window, spec.threshold
    if len(f) < m:
        raise InsufficientDataError(f"need at least {m} slices around the tampered area, got {len(f)}")
    if not 0 <= central_index < len(f):
        raise DataError(f"central slice {central_index} outside the {len(f)} given slices")
    counts = window_counts(f, m)
    lo = max(0, central_index - m + 1)
    hi = min(len(counts) - 1, central_index)
    return TRUE_POSITIVE if np.any(counts[lo:hi + 1] >= k) else FALSE_NEGATIVE


def qualifying_spans(flags, spec: AreaVerdictSpec = AreaVerdictSpec()) -> list[tuple[int, int]]:
    """Merged [start, end) index spans flagged by either false-positive clause:
    a run of >= k consecutive positives, or a window of m slices with >= k positives.
    Overlapping spans merge into one area."""
    f = _as_bool(flags)
    m, k = spec.window, spec.threshold
    spans = []
    if len(f) >= m:
        for s in np.flatnonzero(window_counts(f, m) >= k):
            spans.append((int(s), int(s) + m))
    start = None
    for i, v in enumerate(list(f) + [False]):
        if v and start is None:
            start = i
        elif not v and start is not None:
            if i - start >= k:
                spans.append((start, i))
            start = None
    spans.sort()
    merged = []
    for s, e in spans:
        if merged and s < merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return merged


def real_area_false_positive(flags, spec: AreaVerdictSpec = AreaVerdictSpec()) -> int:
    """Number of distinct false-positive areas in an ordered run of real slices."""
    return len(qualifying_spans(flags, spec))


def scan_verdict(flags, n: int = 9, m: int = 10) -> str:
    """'tampered' when any m consecutive slices contain at least n positives."""
    f = _as_bool(flags)
    if not 1 <= n <= m:
        raise ConfigError(f"need 1 <= n <= m, got n={n} m={m}")
    if m > len(f):
        raise ConfigError(f"window m={m} is longer than the scan ({len(f)} slices)")
    return TAMPERED if np.any(window_counts(f, m) >= n) else BENIGN


def spatially_associated(flags, peaks, anchor, radius: int = 2) -> np.ndarray:
    """Keep a positive only when its heatmap peak cell lies within Chebyshev
    distance ``radius`` of ``anchor`` (both in lattice cells)."""
    f = _as_bool(flags)
    peaks = np.asarray(peaks, dtype=np.int64).reshape(-1, 2)
    near = np.abs(peaks - np.asarray(anchor, dtype=np.int64)).max(axis=1) <= radius
    return f & near


def chebyshev(a, b) -> int:
    return int(max(abs(int(a[0]) - int(b[0])), abs(int(a[1]) - int(b[1]))))


# -- reports ------------------------------------------------------------------------

REPORT_FIELDS = ("test_set", "unit", "TP", "TN", "FP", "FN", "accuracy", "precision", "recall", "f1")


def _fmt(v):
    return "-" if v is None else f"{v:.4f}"


def report_row(name: str, unit: str, r: MetricsReport) -> dict:
    return dict(test_set=name, unit=unit, TP=r.tp, TN="-" if r.tn is None else r.tn, FP=r.fp, FN=r.fn, accuracy=_fmt(r.accuracy),
                precision=_fmt(r.precision), recall=_fmt(r.recall), f1=_fmt(r.f1))


def write_metrics_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        w.writerows(rows)
    return path


def text_summary(rows) -> str:
    """Fixed-width table: test set, unit, TP, TN, FP, FN, Accuracy, Precision, Recall, F1."""
    head = f"{'Test set':<14}{'Unit':<6}{'TP':>6}{'TN':>6}{'FP':>6}{'FN':>6}{'Accuracy':>10}{'Precision':>11}{'Recall':>9}{'F1':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['test_set']:<14}{r['unit']:<6}{r['TP']:>6}{r['TN']:>6}{r['FP']:>6}{r['FN']:>6}"
                     f"{r['accuracy']:>10}{r['precision']:>11}{r['recall']:>9}{r['f1']:>9}")
    return "\n".join(lines) + "\n"


def read_predictions(path) -> list[SlicePrediction]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append(SlicePrediction(r["scan_id"], int(r["slice_index"]), r["label_pred"],
                                   float(r.get("score") or 0.0), r.get("ground_truth") or None,
                                   r.get("tamper_area_id") or None))
    return out


def write_predictions(preds, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["scan_id", "slice_index", "label_pred", "score", "ground_truth", "tamper_area_id"]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for p in preds:
            d = asdict(p)
            d["score"] = repr(float(d["score"]))
            w.writerow({k: ("" if d[k] is None else d[k]) for k in fields})
    return path
