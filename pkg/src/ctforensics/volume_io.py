"""Reading CT scans from disk and scaling their intensities for the detector.

Two on-disk formats are understood:

``raw_volume``
    ``<stem>.raw`` holds little-endian int16 pixels (slice-major, row-major
    within a slice); ``<stem>.meta`` is a UTF-8 ``key: value`` sidecar with
    ``scan_id``, ``depth``, ``height``, ``width``, ``spacing_mm``, ``lo``, ``hi``.

``dicom_series``
    a directory with one DICOM file per slice. Requires ``pydicom``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InconsistencyError, LoadError, OrderingError

log = logging.getLogger(__name__)

# ~4096 levels, air at -1024
DEFAULT_LO = -1024
DEFAULT_HI = 3071

META_KEYS = ("scan_id", "depth", "height", "width", "spacing_mm", "lo", "hi")


@dataclass(frozen=True)
class SliceImage:
    pixels: np.ndarray
    slice_index: int

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ScanVolume:
    """Immutable stack of slices, stored as one (depth, height, width) int16 array."""

    scan_id: str
    pixels: np.ndarray
    slice_spacing_mm: float = 1.0
    pixel_value_range: tuple[int, int] = (DEFAULT_LO, DEFAULT_HI)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[0] < 1:
            raise InconsistencyError(f"volume {self.scan_id!r} must be (depth, h, w) with depth >= 1, got {px.shape}")
        if px.dtype != np.int16:
            if not np.issubdtype(px.dtype, np.integer):
                raise InconsistencyError("pixel data must be integers")
            px = px.astype(np.int16)
        if not self.slice_spacing_mm > 0:
            raise InconsistencyError(f"slice spacing must be positive, got {self.slice_spacing_mm}")
        lo, hi = (int(v) for v in self.pixel_value_range)
        if px.size and (px.min() < lo or px.max() > hi):
            raise InconsistencyError(f"pixels of {self.scan_id!r} exceed declared range [{lo}, {hi}]")
        px = px.copy() if px is self.pixels and px.flags.writeable else px
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "pixel_value_range", (lo, hi))

    @property
    def depth(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[2]

    @property
    def slices(self) -> list[SliceImage]:
        return [SliceImage(self.pixels[k], k) for k in range(self.depth)]

    def slice(self, index: int) -> SliceImage:
        return SliceImage(self.pixels[index], index)


@dataclass(frozen=True)
class NormalizationSpec:
    lo: int = DEFAULT_LO
    hi: int = DEFAULT_HI
    mode: str = "linear_unit"

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ConfigError(f"normalization needs hi > lo, got lo={self.lo} hi={self.hi}")
        if self.mode not in ("linear_unit", "linear_signed"):
            raise ConfigError(f"unknown normalization mode {self.mode!r}")


def normalize_slice(pixels, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """Affine map of [lo, hi] onto [0, 1] (or [-1, 1]), clamped outside."""
    if isinstance(pixels, SliceImage):
        pixels = pixels.pixels
    out = (np.asarray(pixels, dtype=np.float64) - spec.lo) / (spec.hi - spec.lo)
    out = np.clip(out, 0.0, 1.0)
    if spec.mode == "linear_signed":
        out = 2.0 * out - 1.0
    return out.astype(np.float32)


def normalize_volume(volume: ScanVolume, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    return normalize_slice(volume.pixels, spec)


# -- raw volume format --------------------------------------------------------

def _raw_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".raw", ".meta"):
        path = path.with_suffix("")
    return path.with_suffix(".raw"), path.with_suffix(".meta")


def write_raw(volume: ScanVolume, path) -> Path:
    """Write ``volume`` as ``<stem>.raw`` + ``<stem>.meta``; returns the .raw path."""
    raw, meta = _raw_paths(path)
    raw.parent.mkdir(parents=True, exist_ok=True)
    raw.write_bytes(volume.pixels.astype("<i2").tobytes(order="C"))
    lo, hi = volume.pixel_value_range
    d, h, w = volume.pixels.shape
    fields = dict(scan_id=volume.scan_id, depth=d, height=h, width=w,
                  spacing_mm=repr(float(volume.slice_spacing_mm)), lo=lo, hi=hi)
    meta.write_text("".join(f"{k}: {v}\n" for k, v in fields.items()), encoding="utf-8")
    return raw


def _read_meta(meta: Path) -> dict:
    if not meta.is_file():
        raise LoadError("missing metadata sidecar", meta)
    out = {}
    for line in meta.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if ":" not in line:
            raise LoadError(f"malformed metadata line {line!r}", meta)
        key, value = line.split(":", 1)
        out[key.strip()] = value.strip()
    missing = [k for k in META_KEYS if k not in out]
    if missing:
        raise LoadError(f"metadata lacks keys {missing}", meta)
    return out


def _load_raw(path) -> ScanVolume:
    raw, meta = _raw_paths(path)
    if not raw.is_file():
        raise LoadError("missing pixel file", raw)
    info = _read_meta(meta)
    try:
        d, h, w = int(info["depth"]), int(info["height"]), int(info["width"])
        spacing = float(info["spacing_mm"])
        lo, hi = int(info["lo"]), int(info["hi"])
    except ValueError as exc:
        raise LoadError(f"bad metadata value ({exc})", meta) from None
    data = np.fromfile(raw, dtype="<i2")
    if data.size != d * h * w:
        raise LoadError(f"pixel file holds {data.size} values, metadata implies {d * h * w}", raw)
    return ScanVolume(info["scan_id"], data.reshape(d, h, w).astype(np.int16), spacing, (lo, hi))


# -- DICOM series ---------------------------------------------------------------

def _slice_position(ds) -> float:
    """Signed distance of the slice along its normal."""
    pos = getattr(ds, "ImagePositionPatient", None)
    if pos is None:
        loc = getattr(ds, "SliceLocation", None)
        if loc is None:
            raise OrderingError(f"slice {getattr(ds, 'filename', '?')} has no position attribute")
        return float(loc)
    orient = getattr(ds, "ImageOrientationPatient", None)
    pos = np.asarray([float(v) for v in pos])
    if orient is None:
        return float(pos[2])
    orient = np.asarray([float(v) for v in orient])
    normal = np.cross(orient[:3], orient[3:])
    return float(pos @ normal)


def _load_dicom(path) -> ScanVolume:
    try:
        import pydicom
    except ImportError as exc:  # pragma: no cover
        raise LoadError("reading DICOM needs the optional 'pydicom' package") from exc

    folder = Path(path)
    if not folder.is_dir():
        raise LoadError("DICOM series path is not a directory", folder)
    files = sorted(p for p in folder.iterdir() if p.is_file() and not p.name.startswith("."))
    if not files:
        raise LoadError("empty DICOM directory", folder)

    entries = []
    for f in files:
        try:
            ds = pydicom.dcmread(f)
            arr = ds.pixel_array
        except Exception as exc:
            raise LoadError(f"cannot read DICOM slice ({exc.__class__.__name__})", f) from None
        slope = float(getattr(ds, "RescaleSlope", 1) or 1)
        intercept = float(getattr(ds, "RescaleIntercept", 0) or 0)
        px = np.rint(arr.astype(np.float64) * slope + intercept)
        entries.append((_slice_position(ds), px, ds, f))

    series = {str(getattr(e[2], "SeriesInstanceUID", "")) for e in entries}
    if len(series) > 1:
        raise InconsistencyError(f"{folder} mixes {len(series)} series")
    shapes = {e[1].shape for e in entries}
    if len(shapes) > 1:
        bad = next(e[3] for e in entries if e[1].shape != entries[0][1].shape)
        raise InconsistencyError(f"mixed slice dimensions {sorted(shapes)}; first mismatch {bad}")

    entries.sort(key=lambda e: e[0])
    positions = np.array([e[0] for e in entries])
    steps = np.diff(positions)
    if np.any(steps <= 0):
        raise OrderingError(f"non-monotone slice positions in {folder}")
    spacing = float(np.median(steps)) if steps.size else float(getattr(entries[0][2], "SliceThickness", 1.0) or 1.0)

    stack = np.stack([e[1] for e in entries])
    if stack.min() < np.iinfo(np.int16).min or stack.max() > np.iinfo(np.int16).max:
        raise LoadError("pixel values overflow int16", folder)
    lo = min(DEFAULT_LO, int(stack.min()))
    hi = max(DEFAULT_HI, int(stack.max()))
    scan_id = str(getattr(entries[0][2], "SeriesInstanceUID", "") or folder.name)
    return ScanVolume(scan_id, stack.astype(np.int16), spacing, (lo, hi))


def load_scan(path, format: str = "raw_volume") -> ScanVolume:
    path = Path(path)
    if format == "raw_volume":
        return _load_raw(path)
    if format == "dicom_series":
        return _load_dicom(path)
    raise ConfigError(f"unknown scan format {format!r}")
