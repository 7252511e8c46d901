"""Sliding-window centres over the disc inscribed in a CT slice, patch cropping,
and the shifted-window sampling used to build training sets.

Coordinates are ``(x, y)`` = (column, row) in pixels, y growing downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import FAKE, REAL
from .errors import ConfigError, GeometryError


@dataclass(frozen=True)
class GridSpec:
    ct_size: int = 512
    img_size: int = 32
    stride: int = 4
    # Reproduce the row formula exactly as printed: right half only, h measured
    # from the top edge and w taken as a half chord.
    literal_rows: bool = False

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.img_size < 2 or self.img_size % 2:
            raise ConfigError(f"img_size must be even and positive, got {self.img_size}")
        if self.img_size > self.ct_size:
            raise ConfigError(f"img_size {self.img_size} exceeds ct_size {self.ct_size}")

    @property
    def half(self) -> int:
        return self.img_size // 2

    @property
    def cells(self) -> int:
        """Side length G of the stride lattice (and of every heatmap)."""
        return (self.ct_size - self.img_size) // self.stride + 1


def row_centers(spec: GridSpec) -> list[int]:
    return [spec.half + i * spec.stride for i in range(spec.cells)]


def row_x_centers(y: int, spec: GridSpec) -> list[int]:
    radius = spec.ct_size / 2
    if spec.literal_rows:
        if y > radius:
            return []
        w = math.floor(math.sqrt(radius ** 2 - y ** 2))
        if w < spec.img_size:
            return []
        jmax = (w - spec.img_size) // (2 * spec.stride)
        return [int(radius + j * spec.stride) for j in range(jmax + 1)]

    h = abs(y - radius)
    if h > radius:
        return []
    w = 2 * math.floor(math.sqrt(radius ** 2 - h ** 2))
    if w < spec.img_size:
        return []
    jmax = (w - spec.img_size) // (2 * spec.stride)
    c = spec.ct_size // 2
    xs = {c + j * spec.stride for j in range(jmax + 1)} | {c - j * spec.stride for j in range(jmax + 1)}
    return sorted(xs)


@dataclass(frozen=True)
class CenterCoords:
    rows: tuple  # ((y, (x0, x1, ...)), ...)

    def points(self) -> np.ndarray:
        """All centres as an (n, 2) int array of (x, y), row-major order."""
        pts = [(x, y) for y, xs in self.rows for x in xs]
        return np.asarray(pts, dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return sum(len(xs) for _, xs in self.rows)


def full_grid(spec: GridSpec) -> CenterCoords:
    rows = []
    for y in row_centers(spec):
        xs = row_x_centers(y, spec)
        if xs:
            rows.append((y, tuple(xs)))
    return CenterCoords(tuple(rows))


@dataclass(frozen=True)
class Patch:
    values: np.ndarray
    center: tuple[int, int]
    label: Optional[str] = None
    source: Optional[tuple[str, int]] = None


def window_fits(center, img_size: int, shape) -> bool:
    x, y = center
    half = img_size // 2
    return 0 <= y - half and y + half <= shape[0] and 0 <= x - half and x + half <= shape[1]


def extract_patch(image, center, img_size: int = 32, label=None, source=None) -> Patch:
    image = np.asarray(image)
    x, y = int(center[0]), int(center[1])
    if not window_fits((x, y), img_size, image.shape):
        raise GeometryError(f"window of size {img_size} at {(x, y)} leaves the {image.shape} frame")
    half = img_size // 2
    values = image[y - half:y + half, x - half:x + half]
    return Patch(values, (x, y), label, source)


def extract_patches(image, centers, img_size: int = 32) -> np.ndarray:
    """Stack of windows for many centres, shape (n, img_size, img_size)."""
    image = np.asarray(image)
    centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
    if len(centers) == 0:
        return np.zeros((0, img_size, img_size), dtype=image.dtype)
    half = img_size // 2
    for c in centers:
        if not window_fits(c, img_size, image.shape):
            raise GeometryError(f"window of size {img_size} at {tuple(c)} leaves the {image.shape} frame")
    windows = np.lib.stride_tricks.sliding_window_view(image, (img_size, img_size))
    return windows[centers[:, 1] - half, centers[:, 0] - half].copy()


# -- training-set sampling ------------------------------------------------------

@dataclass(frozen=True)
class SamplerSpec:
    # boxes are (x_min, y_min, x_max, y_max) offsets, inclusive
    positive_shift_box: tuple = (-2, -2, 2, 2)
    negative_near_box: tuple = (-2, -2, -1, 2)
    negatives_random_per_slice: int = 15
    negative_ratio_n: int = 10

    def __post_init__(self):
        for name in ("positive_shift_box", "negative_near_box"):
            box = tuple(int(v) for v in getattr(self, name))
            if len(box) != 4 or box[2] < box[0] or box[3] < box[1]:
                raise ConfigError(f"{name} must be (x_min, y_min, x_max, y_max) with nonnegative extent, got {box}")
            object.__setattr__(self, name, box)
        if self.negative_ratio_n < 1:
            raise ConfigError("negative_ratio_n must be >= 1")
        if self.negative_ratio_n > len(box_offsets(self.negative_near_box)):
            raise ConfigError("negative_ratio_n exceeds the number of points in negative_near_box")
        if self.negatives_random_per_slice < 0:
            raise ConfigError("negatives_random_per_slice must be >= 0")


def box_offsets(box) -> list[tuple[int, int]]:
    x0, y0, x1, y1 = box
    return [(dx, dy) for dy in range(y0, y1 + 1) for dx in range(x0, x1 + 1)]


def sample_centers(image_shape, tamper_center, fake: bool, sampler: SamplerSpec, spec: GridSpec,
                   rng_seed) -> list[tuple[int, int]]:
    """Centres for one slice; see :func:`sample_training_patches`."""
    if fake:
        if tamper_center is None:
            raise GeometryError("a fake slice needs its tamper centre")
        offsets = box_offsets(sampler.positive_shift_box)
    else:
        offsets = box_offsets(sampler.negative_near_box)[:sampler.negative_ratio_n] if tamper_center is not None else []

    centers = []
    if offsets:
        cx, cy = int(tamper_center[0]), int(tamper_center[1])
        for dx, dy in offsets:
            c = (cx + dx, cy + dy)
            if not window_fits(c, spec.img_size, image_shape):
                raise GeometryError(f"tamper centre {(cx, cy)} too close to the frame edge for offset {(dx, dy)}")
            centers.append(c)
    if fake:
        return centers

    grid = full_grid(spec).points()
    taken = set(centers)
    pool = np.array([i for i, (x, y) in enumerate(grid) if (int(x), int(y)) not in taken], dtype=np.int64)
    k = sampler.negatives_random_per_slice
    if k > len(pool):
        raise GeometryError(f"asked for {k} random negatives, grid offers {len(pool)}")
    rng = np.random.default_rng(rng_seed)
    pick = np.sort(rng.choice(pool, size=k, replace=False)) if k else pool[:0]
    centers.extend((int(grid[i, 0]), int(grid[i, 1])) for i in pick)
    return centers


def sample_training_patches(image, tamper_center, sampler: SamplerSpec, spec: GridSpec, rng_seed,
                            fake: bool = None, source=None) -> list[Patch]:
    """Labelled windows for one slice.

    A fake slice yields one window per offset of ``positive_shift_box`` around the
    tamper centre. A real slice yields ``negative_ratio_n`` windows from
    ``negative_near_box`` around the paired tamper centre (if any) plus
    ``negatives_random_per_slice`` distinct grid centres drawn with ``rng_seed``.
    ``fake`` defaults to "a tamper centre was given".
    """
    if fake is None:
        fake = tamper_center is not None
    image = np.asarray(image)
    centers = sample_centers(image.shape, tamper_center, fake, sampler, spec, rng_seed)
    label = FAKE if fake else REAL
    return [extract_patch(image, c, spec.img_size, label, source) for c in centers]
