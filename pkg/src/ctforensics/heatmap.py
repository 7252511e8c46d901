"""Per-slice heatmaps on the stride lattice of the window grid."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import AlignmentError, DomainError, DuplicationError, GeometryError, LoadError
from .patch_grid import GridSpec

MAGIC = b"HMAP"
_HEADER = struct.Struct("<4sHiiii")  # magic, version, ct_size, img_size, stride, G
VERSION = 1


@dataclass(frozen=True)
class Heatmap:
    grid: np.ndarray  # (G, G), row = y cell, column = x cell
    spec: GridSpec

    def __post_init__(self):
        g = self.spec.cells
        if self.grid.shape != (g, g):
            raise GeometryError(f"heatmap grid must be {g}x{g} for {self.spec}, got {self.grid.shape}")
        if self.grid.size and (self.grid.min() < 0 or self.grid.max() > 1):
            raise DomainError("heatmap probabilities must lie in [0, 1]")

    @property
    def size(self) -> int:
        return self.spec.cells


def cell_of(center, spec: GridSpec) -> tuple[int, int]:
    """(gx, gy) lattice cell of a window centre; the centre must sit on the stride lattice."""
    x, y = int(center[0]), int(center[1])
    gx, rx = divmod(x - spec.half, spec.stride)
    gy, ry = divmod(y - spec.half, spec.stride)
    if rx or ry:
        raise AlignmentError(f"centre {(x, y)} is not on the stride-{spec.stride} lattice")
    if not (0 <= gx < spec.cells and 0 <= gy < spec.cells):
        raise AlignmentError(f"centre {(x, y)} falls outside the {spec.cells}x{spec.cells} lattice")
    return gx, gy


def to_overlay_coords(cell, spec: GridSpec) -> tuple[int, int]:
    gx, gy = int(cell[0]), int(cell[1])
    if not (0 <= gx < spec.cells and 0 <= gy < spec.cells):
        raise GeometryError(f"cell {(gx, gy)} outside the {spec.cells}x{spec.cells} heatmap")
    return spec.half + gx * spec.stride, spec.half + gy * spec.stride


def assemble(results, spec: GridSpec) -> Heatmap:
    """Place each (centre, probability) in its cell; cells never evaluated stay 0."""
    grid = np.zeros((spec.cells, spec.cells), dtype=np.float64)
    seen = set()
    for center, p in results:
        gx, gy = cell_of(center, spec)
        if (gx, gy) in seen:
            raise DuplicationError(f"centre {tuple(center)} reported twice")
        seen.add((gx, gy))
        grid[gy, gx] = p
    return Heatmap(grid, spec)


def assemble_arrays(centers, probs, spec: GridSpec) -> Heatmap:
    """Vectorised :func:`assemble` for (n, 2) centres and n probabilities."""
    centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
    probs = np.asarray(probs, dtype=np.float64)
    offs = centers - spec.half
    if np.any(offs % spec.stride):
        raise AlignmentError(f"centres off the stride-{spec.stride} lattice")
    cells = offs // spec.stride
    if np.any(cells < 0) or np.any(cells >= spec.cells):
        raise AlignmentError("centres outside the lattice")
    flat = cells[:, 1] * spec.cells + cells[:, 0]
    if len(np.unique(flat)) != len(flat):
        raise DuplicationError("duplicate centres")
    grid = np.zeros(spec.cells * spec.cells)
    grid[flat] = probs
    return Heatmap(grid.reshape(spec.cells, spec.cells), spec)


def peak_cell(heatmap: Heatmap, smooth_sigma: float = 2.0) -> tuple[int, int]:
    """(gx, gy) of the heatmap maximum after Gaussian smoothing on the lattice.

    Smoothing turns a saturated plateau of p ~ 1 into a single central peak.
    Pass ``smooth_sigma=0`` for the raw argmax.
    """
    g = heatmap.grid
    if smooth_sigma > 0:
        g = ndimage.gaussian_filter(g, smooth_sigma, mode="constant")
    gy, gx = np.unravel_index(int(np.argmax(g)), g.shape)
    return int(gx), int(gy)


def save_heatmap(heatmap: Heatmap, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    s = heatmap.spec
    header = _HEADER.pack(MAGIC, VERSION, s.ct_size, s.img_size, s.stride, s.cells)
    path.write_bytes(header + heatmap.grid.astype("<f4").tobytes(order="C"))
    return path


def load_heatmap(path) -> Heatmap:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise LoadError("truncated heatmap file", path)
    magic, version, ct, img, stride, g = _HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise LoadError("not a heatmap file", path)
    payload = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if payload.size != g * g:
        raise LoadError(f"heatmap payload has {payload.size} values, header says {g}x{g}", path)
    spec = GridSpec(ct, img, stride)
    return Heatmap(payload.reshape(g, g).astype(np.float64), spec)


def export_png(heatmap: Heatmap, path, upscale: bool = False) -> Path:
    """Grayscale image of the heatmap (0 black, 1 white); optionally upsampled to frame size."""
    import matplotlib.pyplot as plt

    img = heatmap.grid
    if upscale:
        img = np.kron(img, np.ones((heatmap.spec.stride, heatmap.spec.stride)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, img, cmap="gray", vmin=0.0, vmax=1.0)
    return path
