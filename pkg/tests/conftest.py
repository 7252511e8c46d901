import numpy as np
import pytest


def write_dicom_series(folder, volume_hu, spacing=2.5, series_uid="1.2.826.0.1.3680043.8.498.1", shuffle_seed=0,
                       origin_z=-100.0, orientation=(1, 0, 0, 0, 1, 0), reverse_positions=False):
    """Write one file per slice with stored = HU + 1024 and intercept -1024.

    File names are shuffled so that order has to come from the position tags.
    Returns the list of written paths in slice order.
    """
    from pydicom.dataset import FileDataset, FileMetaDataset
    from pydicom.uid import ExplicitVRLittleEndian, generate_uid

    folder.mkdir(parents=True, exist_ok=True)
    d = len(volume_hu)
    names = np.random.default_rng(shuffle_seed).permutation(d)
    paths = []
    for z in range(d):
        meta = FileMetaDataset()
        meta.MediaStorageSOPClassUID = "1.2.840.10008.5.1.4.1.1.2"
        meta.MediaStorageSOPInstanceUID = generate_uid()
        meta.TransferSyntaxUID = ExplicitVRLittleEndian
        path = folder / f"img_{names[z]:03d}.dcm"
        ds = FileDataset(str(path), {}, file_meta=meta, preamble=b"\0" * 128)
        ds.SOPClassUID = meta.MediaStorageSOPClassUID
        ds.SOPInstanceUID = meta.MediaStorageSOPInstanceUID
        ds.SeriesInstanceUID = series_uid
        ds.Modality = "CT"
        zpos = origin_z + (d - 1 - z if reverse_positions else z) * spacing
        ds.ImagePositionPatient = [0.0, 0.0, zpos]
        ds.ImageOrientationPatient = list(orientation)
        ds.SliceThickness = spacing
        img = np.asarray(volume_hu[z], dtype=np.int32) + 1024
        ds.Rows, ds.Columns = img.shape
        ds.SamplesPerPixel = 1
        ds.PhotometricInterpretation = "MONOCHROME2"
        ds.BitsAllocated = 16
        ds.BitsStored = 16
        ds.HighBit = 15
        ds.PixelRepresentation = 0
        ds.RescaleSlope = 1
        ds.RescaleIntercept = -1024
        ds.PixelData = img.astype("<u2").tobytes()
        ds.save_as(path, enforce_file_format=True)
        paths.append(path)
    return paths


@pytest.fixture
def dicom_writer():
    pytest.importorskip("pydicom")
    return write_dicom_series


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -----------------------------------------------------------------

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, dict(title=title, ok=True, ran=False, details=[]))
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["ok"] = False
    if report.skipped:
        entry["ok"] = None
    entry["details"].extend(v for k, v in item.user_properties if k == "detail" and v not in entry["details"])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "SKIP" if e["ok"] is None or not e["ran"] else ("PASS" if e["ok"] else "FAIL")
        line = f"criterion {number}: {status}  {e['title']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
