"""Synthetic chest-CT-like volumes and small local forgeries with a known footprint.

The forger stands in for a conditional GAN: it edits a region_size x region_size
patch over 2 * depth_half_extent + 1 slices and leaves a statistical trace there,
either a period-2 checkerboard (the grid artifact of up-sampling layers) or a
low-pass residual (over-smooth generator output).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from . import FAKE, REAL
from .errors import ConfigError, GeometryError
from .patch_grid import GridSpec, SamplerSpec, sample_centers
from .volume_io import DEFAULT_HI, DEFAULT_LO, ScanVolume, load_scan, write_raw

log = logging.getLogger(__name__)

AIR, TISSUE, LUNG, VESSEL, BONE = -1000.0, 40.0, -850.0, 450.0, 700.0

SPLITS = ("train", "val", "global", "test")


@dataclass(frozen=True)
class ForgeSpec:
    region_size: int = 32
    mode: str = "inject_blob"
    blend_sigma: float = 2.0
    noise_signature: str = "checker"
    seed: int = 0
    signature_strength: float = 50.0  # HU amplitude of the trace
    depth_half_extent: int = 4

    def __post_init__(self):
        if not 4 <= self.region_size <= 32:
            raise ConfigError(f"region_size must lie in [4, 32], got {self.region_size}")
        if self.mode not in ("inject_blob", "remove_blob"):
            raise ConfigError(f"unknown forgery mode {self.mode!r}")
        if self.noise_signature not in ("checker", "smoothed"):
            raise ConfigError(f"unknown noise signature {self.noise_signature!r}")
        if self.blend_sigma <= 0 or self.signature_strength < 0:
            raise ConfigError("blend_sigma must be positive and signature_strength nonnegative")
        if not 0 <= self.depth_half_extent <= 4:
            raise ConfigError("depth_half_extent must lie in [0, 4]")


@dataclass(frozen=True)
class TamperRecord:
    scan_id: str
    slice_index: int
    center: tuple[int, int]
    mode: str
    region_size: int
    depth_half_extent: int = 4

    def footprint(self):
        """(z0, z1, y0, y1, x0, x1) half-open bounds of the edited cuboid."""
        half = self.region_size // 2
        cx, cy = self.center
        return (self.slice_index - self.depth_half_extent, self.slice_index + self.depth_half_extent + 1,
                cy - half, cy - half + self.region_size, cx - half, cx - half + self.region_size)


# -- phantom --------------------------------------------------------------------------

def _ellipse(xx, yy, cx, cy, ax, ay):
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def synth_volume(depth: int = 16, size: int = 512, seed: int = 0, scan_id: Optional[str] = None,
                 spacing_mm: float = 1.0, lo: int = DEFAULT_LO, hi: int = DEFAULT_HI,
                 noise_hu: float = 12.0) -> ScanVolume:
    """Thorax disc with two low-density lungs, drifting vessels and a spine."""
    if depth < 10 or size < 64:
        raise ConfigError(f"phantom needs depth >= 10 and size >= 64, got depth={depth} size={size}")
    rng = np.random.default_rng(seed)
    k = size / 512.0
    c = size / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    body_ax, body_ay = size * rng.uniform(0.40, 0.45), size * rng.uniform(0.32, 0.38)
    lung_dx = size * rng.uniform(0.17, 0.20)
    lung_ax, lung_ay = size * rng.uniform(0.11, 0.13), size * rng.uniform(0.18, 0.22)
    lung_cy = c - size * rng.uniform(0.0, 0.03)
    phase = rng.uniform(0, 2 * np.pi)

    vessels = []
    for _ in range(int(rng.integers(8, 15))):
        side = rng.choice([-1.0, 1.0])
        ang, rad = rng.uniform(0, 2 * np.pi), math.sqrt(rng.uniform(0, 0.6))
        vessels.append(dict(x=c + side * lung_dx + rad * lung_ax * math.cos(ang),
                            y=lung_cy + rad * lung_ay * math.sin(ang),
                            vx=rng.normal(0, 0.6 * k), vy=rng.normal(0, 0.6 * k),
                            r=max(1.2, rng.uniform(2.0, 5.0) * k), amp=rng.uniform(0.6, 1.0)))

    texture = ndimage.gaussian_filter(rng.normal(size=(depth, size, size)), (2.0, 6 * k + 1, 6 * k + 1))
    texture /= texture.std() + 1e-12

    out = np.empty((depth, size, size), dtype=np.int16)
    for z in range(depth):
        s = 1.0 + 0.06 * math.sin(2 * np.pi * z / 40.0 + phase)
        img = np.full((size, size), AIR)
        body = _ellipse(xx, yy, c, c, body_ax, body_ay)
        img[body] = TISSUE + 20.0 * texture[z][body]
        for side in (-1.0, 1.0):
            lung = _ellipse(xx, yy, c + side * lung_dx, lung_cy, lung_ax * s, lung_ay * s)
            img[lung] = LUNG + 30.0 * texture[z][lung]
        for v in vessels:
            vx, vy = v["x"] + v["vx"] * z, v["y"] + v["vy"] * z
            img += (VESSEL - LUNG) * v["amp"] * np.exp(-((xx - vx) ** 2 + (yy - vy) ** 2) / (2 * v["r"] ** 2))
        spine = _ellipse(xx, yy, c, c + body_ay * 0.78, size * 0.05, size * 0.045)
        img[spine] = BONE
        img = ndimage.gaussian_filter(img, 1.0)
        img += rng.normal(0.0, noise_hu, size=img.shape)
        out[z] = np.clip(np.rint(img), lo, hi).astype(np.int16)
    return ScanVolume(scan_id or f"phantom-{seed}", out, spacing_mm, (lo, hi))


# -- forgery --------------------------------------------------------------------------

def blend_mask(region_size: int, blend_sigma: float) -> np.ndarray:
    """region_size^2 weights: 1 in a central disc, Gaussian falloff of width blend_sigma."""
    half = region_size / 2.0
    coords = np.arange(region_size) - (region_size // 2)
    d = np.hypot(*np.meshgrid(coords, coords))
    core = max(0.0, half - 2.0 * blend_sigma)
    m = np.exp(-np.maximum(d - core, 0.0) ** 2 / (2 * blend_sigma ** 2))
    return m


def footprint_inside_circle(center, region_size: int, ct_size: int) -> bool:
    half = region_size // 2
    cx, cy = center
    x0, y0 = cx - half, cy - half
    x1, y1 = x0 + region_size, y0 + region_size
    r = ct_size / 2.0
    return all((x - r) ** 2 + (y - r) ** 2 <= r * r for x in (x0, x1) for y in (y0, y1))


def choose_site(volume: ScanVolume, spec: ForgeSpec, rng, margin: int = 0):
    """Random (slice, centre) inside the lungs whose footprint, widened by ``margin``,
    stays inside the inscribed circle."""
    h, w = volume.shape
    d = spec.depth_half_extent
    if volume.depth < 2 * d + 1:
        raise GeometryError(f"volume depth {volume.depth} cannot hold a {2 * d + 1}-slice forgery")
    z = int(rng.integers(d, volume.depth - d))
    img = volume.pixels[z]
    # low-density components not touching the frame border are lungs, not outside air
    labels, _ = ndimage.label(img < -500)
    border = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    lung = (labels > 0) & ~np.isin(labels, border)
    ys, xs = np.nonzero(ndimage.binary_erosion(lung, iterations=2))
    order = rng.permutation(len(xs))
    for i in order:
        c = (int(xs[i]), int(ys[i]))
        if footprint_inside_circle(c, spec.region_size + 2 * margin, min(h, w)):
            return z, c
    raise GeometryError("no forgery site fits inside the inscribed circle")


def apply_forgery(volume: ScanVolume, spec: ForgeSpec = ForgeSpec(), center=None, slice_index=None,
                  margin: int = 0) -> tuple[ScanVolume, TamperRecord]:
    """Edit one small cuboid; every pixel outside it is returned unchanged."""
    rng = np.random.default_rng(spec.seed)
    if center is None or slice_index is None:
        slice_index, center = choose_site(volume, spec, rng, margin)
    center = (int(center[0]), int(center[1]))
    h, w = volume.shape
    if not footprint_inside_circle(center, spec.region_size, min(h, w)):
        raise GeometryError(f"forgery footprint at {center} leaves the inscribed circle")
    rec = TamperRecord(volume.scan_id, int(slice_index), center, spec.mode, spec.region_size,
                       spec.depth_half_extent)
    z0, z1, y0, y1, x0, x1 = rec.footprint()
    if z0 < 0 or z1 > volume.depth:
        raise GeometryError(f"forgery slices [{z0}, {z1}) exceed the volume depth {volume.depth}")

    lo, hi = volume.pixel_value_range
    orig = volume.pixels[z0:z1, y0:y1, x0:x1].astype(np.float64)
    mask = blend_mask(spec.region_size, spec.blend_sigma)
    r = spec.region_size
    coords = np.arange(r) - r // 2
    d2 = coords[None, :] ** 2 + coords[:, None] ** 2
    dz = np.arange(z0, z1) - slice_index

    if spec.mode == "inject_blob":
        sigma = r / 6.0
        zprof = np.exp(-dz ** 2 / (2 * (max(spec.depth_half_extent, 1) / 1.5) ** 2))
        nodule = (VESSEL + 250.0 - LUNG) * np.exp(-d2 / (2 * sigma ** 2))
        content = orig + mask * nodule[None] * zprof[:, None, None]
    else:
        ring = _ring_values(volume.pixels[slice_index], center, r)
        fill = float(np.percentile(ring, 25))
        noise = rng.normal(0.0, 12.0, size=orig.shape)
        content = (1 - mask) * orig + mask * (fill + noise)

    if spec.noise_signature == "checker":
        yy, xx = np.mgrid[y0:y1, x0:x1]
        checker = np.where((xx + yy) % 2 == 0, 1.0, -1.0)
        content = content + spec.signature_strength * mask * checker
    else:
        smooth = ndimage.gaussian_filter(content, (0, 1.2, 1.2))
        content = (1 - mask) * content + mask * smooth

    pixels = volume.pixels.copy()
    pixels[z0:z1, y0:y1, x0:x1] = np.clip(np.rint(content), lo, hi).astype(np.int16)
    return ScanVolume(volume.scan_id, pixels, volume.slice_spacing_mm, volume.pixel_value_range), rec


def _ring_values(img, center, r, width: int = 6):
    cx, cy = center
    h, w = img.shape
    half = r // 2
    ys, xs = np.mgrid[max(0, cy - half - width):min(h, cy + half + width),
                      max(0, cx - half - width):min(w, cx + half + width)]
    cheb = np.maximum(np.abs(xs - cx), np.abs(ys - cy))
    sel = cheb >= half
    return img[ys[sel], xs[sel]].astype(np.float64)


# -- dataset ----------------------------------------------------------------------------

SLICE_FIELDS = ("scan_id", "volume_id", "slice_index", "label", "split", "tamper_x", "tamper_y")
PATCH_FIELDS = ("scan_id", "volume_id", "slice_index", "x", "y", "label", "split")
TAMPER_FIELDS = ("scan_id", "slice_index", "center_x", "center_y", "mode", "region_size", "depth_half_extent")


@dataclass(frozen=True)
class DatasetSpec:
    n_scans: int = 60
    tamper_fraction: float = 0.5
    depth: int = 16
    spacing_mm: float = 1.0
    slices_per_scan: int = 10
    fake_half_window: int = 2  # central slice +- this many are labelled fake
    split_fractions: dict = field(default_factory=lambda: dict(train=0.4, val=0.1, **{"global": 0.2}, test=0.3))
    patch_splits: tuple = ("train", "val")

    def __post_init__(self):
        if self.n_scans < 1:
            raise ConfigError("n_scans must be positive")
        if not 0 <= self.tamper_fraction <= 1:
            raise ConfigError("tamper_fraction must lie in [0, 1]")
        if set(self.split_fractions) != set(SPLITS):
            raise ConfigError(f"split_fractions must name exactly {SPLITS}")
        if any(v < 0 for v in self.split_fractions.values()) or abs(sum(self.split_fractions.values()) - 1) > 1e-9:
            raise ConfigError("split fractions must be nonnegative and sum to 1")
        if self.slices_per_scan != 2 * (2 * self.fake_half_window + 1):
            raise ConfigError("slices_per_scan must equal twice the fake window (fake + paired real slices)")
        if self.slices_per_scan > self.depth:
            raise ConfigError("slices_per_scan exceeds the volume depth")
        object.__setattr__(self, "patch_splits", tuple(self.patch_splits))


@dataclass
class Dataset:
    volumes: dict  # volume_id -> ScanVolume
    tampers: dict  # scan_id -> TamperRecord
    slices: list  # dict rows, SLICE_FIELDS
    patches: list  # dict rows, PATCH_FIELDS
    scan_splits: dict  # scan_id -> split


def original_id(scan_id: str) -> str:
    """Volume id of the pre-tamper copy of a tampered scan."""
    return f"{scan_id}-orig"


def _allocate(n: int, fractions: dict) -> list[str]:
    """Split labels for n items by largest remainder, in SPLITS order."""
    raw = {s: fractions[s] * n for s in SPLITS}
    counts = {s: int(math.floor(v)) for s, v in raw.items()}
    rest = n - sum(counts.values())
    for s in sorted(SPLITS, key=lambda s: (-(raw[s] - counts[s]), SPLITS.index(s)))[:rest]:
        counts[s] += 1
    return [s for s in SPLITS for _ in range(counts[s])]


def _seed_of(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def build_dataset(spec: DatasetSpec = DatasetSpec(), grid: GridSpec = GridSpec(), sampler: SamplerSpec = SamplerSpec(),
                  forge: ForgeSpec = ForgeSpec(), seed: int = 0) -> Dataset:
    """Phantom scans, a tampered fraction of them, slice labels, splits and training patches.

    Each tampered scan contributes its central slice +- ``fake_half_window`` as
    fake and the same slices of its pre-tamper copy as real; each real scan
    contributes ``slices_per_scan`` distinct random slices. Splits are assigned
    per scan, stratified by tampered/real.
    """
    n_t = int(round(spec.n_scans * spec.tamper_fraction))
    root = np.random.SeedSequence(seed)
    order_ss, *scan_ss = root.spawn(spec.n_scans + 1)
    order = np.random.default_rng(order_ss).permutation(spec.n_scans)
    scan_ids = [f"scan{i:03d}" for i in range(spec.n_scans)]
    tampered = {scan_ids[i] for i in order[:n_t]}

    t_list = [s for s in scan_ids if s in tampered]
    r_list = [s for s in scan_ids if s not in tampered]
    splits = {}
    for group in (t_list, r_list):
        for sid, split in zip(group, _allocate(len(group), spec.split_fractions)):
            splits[sid] = split
    for s in SPLITS:
        if spec.split_fractions[s] > 0 and s not in splits.values():
            raise ConfigError(f"{spec.n_scans} scans are too few to populate split {s!r}")

    volumes, tampers, slices, patches = {}, {}, [], []
    # widen the footprint so every shifted training window around the centre stays in frame
    max_shift = max(abs(v) for v in sampler.positive_shift_box + sampler.negative_near_box)
    margin = max(0, max_shift + grid.img_size // 2 - forge.region_size // 2)
    for i, sid in enumerate(scan_ids):
        vol_ss, forge_ss, pick_ss, patch_ss = scan_ss[i].spawn(4)
        vol = synth_volume(spec.depth, grid.ct_size, _seed_of(vol_ss), sid, spec.spacing_mm)
        split = splits[sid]
        rows = []
        if sid in tampered:
            fspec = ForgeSpec(**{**asdict(forge), "seed": _seed_of(forge_ss)})
            fake_vol, rec = apply_forgery(vol, fspec, margin=margin)
            volumes[sid] = fake_vol
            volumes[original_id(sid)] = vol
            tampers[sid] = rec
            k = spec.fake_half_window
            for z in range(rec.slice_index - k, rec.slice_index + k + 1):
                rows.append(dict(scan_id=sid, volume_id=sid, slice_index=z, label=FAKE, split=split,
                                 tamper_x=rec.center[0], tamper_y=rec.center[1]))
                rows.append(dict(scan_id=sid, volume_id=original_id(sid), slice_index=z, label=REAL, split=split,
                                 tamper_x=rec.center[0], tamper_y=rec.center[1]))
        else:
            volumes[sid] = vol
            picks = np.sort(np.random.default_rng(pick_ss).choice(spec.depth, spec.slices_per_scan, replace=False))
            for z in picks:
                rows.append(dict(scan_id=sid, volume_id=sid, slice_index=int(z), label=REAL, split=split,
                                 tamper_x="", tamper_y=""))
        slices.extend(rows)

        if split in spec.patch_splits:
            base = _seed_of(patch_ss)
            for row in rows:
                center = (row["tamper_x"], row["tamper_y"]) if row["tamper_x"] != "" else None
                img_shape = volumes[row["volume_id"]].shape
                cs = sample_centers(img_shape, center, row["label"] == FAKE, sampler, grid,
                                    rng_seed=(base, row["slice_index"], int(row["volume_id"] != sid)))
                for x, y in cs:
                    patches.append(dict(scan_id=sid, volume_id=row["volume_id"], slice_index=row["slice_index"],
                                        x=int(x), y=int(y), label=row["label"], split=split))
    return Dataset(volumes, tampers, slices, patches, splits)


def write_dataset(ds: Dataset, root) -> Path:
    root = Path(root)
    (root / "volumes").mkdir(parents=True, exist_ok=True)
    for vid, vol in ds.volumes.items():
        write_raw(vol, root / "volumes" / f"{vid}.raw")
    _write_csv(root / "slices.csv", SLICE_FIELDS, ds.slices)
    _write_csv(root / "patches.csv", PATCH_FIELDS, ds.patches)
    _write_csv(root / "tampers.csv", TAMPER_FIELDS, [
        dict(scan_id=r.scan_id, slice_index=r.slice_index, center_x=r.center[0], center_y=r.center[1],
             mode=r.mode, region_size=r.region_size, depth_half_extent=r.depth_half_extent)
        for r in ds.tampers.values()])
    return root


def _write_csv(path, fields, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def read_tampers(path) -> dict:
    out = {}
    for r in read_csv(path):
        out[r["scan_id"]] = TamperRecord(r["scan_id"], int(r["slice_index"]), (int(r["center_x"]), int(r["center_y"])),
                                         r["mode"], int(r["region_size"]), int(r["depth_half_extent"]))
    return out


class VolumeStore:
    """Loads raw volumes from a dataset directory on first use."""

    def __init__(self, root):
        self.root = Path(root)
        self._cache = {}

    def __getitem__(self, volume_id: str) -> ScanVolume:
        if volume_id not in self._cache:
            self._cache[volume_id] = load_scan(self.root / "volumes" / f"{volume_id}.raw")
        return self._cache[volume_id]
