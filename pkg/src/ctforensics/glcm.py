"""Gray-level co-occurrence matrices of quantised heatmaps."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .heatmap import Heatmap

# (dx, dy) unit steps, image y axis pointing down
ANGLE_STEPS = {0: (1, 0), 45: (1, -1), 90: (0, 1), 135: (-1, 1)}


@dataclass(frozen=True)
class GlcmSpec:
    gray_levels: int = 100
    distance: int = 1
    angles: tuple = (0, 45, 90, 135)

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(int(a) for a in self.angles))
        if self.gray_levels < 2:
            raise ConfigError("gray_levels must be >= 2")
        if self.distance < 1:
            raise ConfigError("distance must be >= 1")
        bad = [a for a in self.angles if a not in ANGLE_STEPS]
        if bad or not self.angles:
            raise ConfigError(f"angles must be drawn from {sorted(ANGLE_STEPS)}, got {self.angles}")

    @property
    def offsets(self) -> list[tuple[int, int]]:
        return [(ANGLE_STEPS[a][0] * self.distance, ANGLE_STEPS[a][1] * self.distance) for a in self.angles]

    @property
    def length(self) -> int:
        return self.gray_levels * self.gray_levels * len(self.angles)


def quantize(values, gray_levels: int = 100) -> np.ndarray:
    """round-half-up(p * 100), with the top level folded into ``gray_levels - 1``.

    Products are snapped to 1e-9 first so that 0.505 * 100 = 50.49999... rounds to 51.
    """
    p = np.asarray(values.grid if isinstance(values, Heatmap) else values, dtype=np.float64)
    if p.size and (not np.isfinite(p).all() or p.min() < 0 or p.max() > 1):
        raise DomainError("heatmap values must lie in [0, 1]")
    scaled = np.round(p * 100.0, 9)
    q = np.floor(scaled + 0.5).astype(np.int64)
    return np.minimum(q, gray_levels - 1)


def glcm(qmap, offset, g: int = 100) -> np.ndarray:
    """Unnormalised, non-symmetric counts M[q(x, y), q(x + a, y + b)] over in-bounds pairs."""
    q = np.asarray(qmap)
    if q.ndim != 2:
        raise DomainError(f"expected a 2-D level map, got shape {q.shape}")
    if q.size and (q.min() < 0 or q.max() >= g):
        raise DomainError(f"levels must lie in [0, {g})")
    a, b = int(offset[0]), int(offset[1])
    h, w = q.shape
    out = np.zeros((g, g), dtype=np.int64)
    if abs(a) >= w or abs(b) >= h:
        return out
    src = q[max(0, -b):h - max(0, b), max(0, -a):w - max(0, a)]
    dst = q[max(0, b):h + min(0, b), max(0, a):w + min(0, a)]
    np.add.at(out, (src.ravel().astype(np.int64), dst.ravel().astype(np.int64)), 1)
    return out


def pair_count(shape, offset) -> int:
    """Number of in-bounds pixel pairs for ``offset`` on an ``shape`` map."""
    h, w = shape
    a, b = offset
    return max(0, h - abs(b)) * max(0, w - abs(a))


@dataclass(frozen=True)
class GlcmFeature:
    tensor: np.ndarray  # (g, g, n_angles)

    @property
    def vector(self) -> np.ndarray:
        """Flattened in (level1, level2, angle) order, angle varying fastest."""
        return self.tensor.reshape(-1)


def feature_tensor(heatmap, spec: GlcmSpec = GlcmSpec()) -> np.ndarray:
    q = quantize(heatmap, spec.gray_levels)
    return np.stack([glcm(q, off, spec.gray_levels) for off in spec.offsets], axis=-1)


def feature_vector(heatmap, spec: GlcmSpec = GlcmSpec()) -> GlcmFeature:
    return GlcmFeature(feature_tensor(heatmap, spec))


def feature_matrix(heatmaps, spec: GlcmSpec = GlcmSpec()) -> np.ndarray:
    """(n, g * g * n_angles) float matrix for a list of heatmaps."""
    rows = [feature_vector(h, spec).vector for h in heatmaps]
    if not rows:
        return np.zeros((0, spec.length))
    return np.stack(rows).astype(np.float64)


# -- feature store --------------------------------------------------------------

STORE_FIELDS = ("row", "scan_id", "slice_index", "label")


def save_feature_store(path, records, features) -> tuple:
    """``<stem>.npy`` holds the (n, length) count matrix, ``<stem>.csv`` one index row per slice.

    ``records`` are mappings with scan_id, slice_index and label.
    """
    features = np.asarray(features)
    if len(records) != len(features):
        raise DomainError(f"{len(records)} index records for {len(features)} feature rows")
    stem = Path(path).with_suffix("")
    stem.parent.mkdir(parents=True, exist_ok=True)
    npy, index = stem.with_suffix(".npy"), stem.with_suffix(".csv")
    np.save(npy, features.astype(np.int32), allow_pickle=False)
    with index.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=STORE_FIELDS)
        w.writeheader()
        for i, r in enumerate(records):
            w.writerow(dict(row=i, scan_id=r["scan_id"], slice_index=int(r["slice_index"]), label=r["label"]))
    return npy, index


def load_feature_store(path):
    """(records, float64 feature matrix) written by :func:`save_feature_store`."""
    stem = Path(path).with_suffix("")
    matrix = np.load(stem.with_suffix(".npy"), allow_pickle=False)
    with stem.with_suffix(".csv").open(newline="") as fh:
        records = [dict(scan_id=r["scan_id"], slice_index=int(r["slice_index"]), label=r["label"])
                   for r in csv.DictReader(fh)]
    if len(records) != len(matrix):
        raise DomainError(f"feature store {stem} has {len(records)} index rows for {len(matrix)} vectors")
    return records, matrix.astype(np.float64)
