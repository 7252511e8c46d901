"""Acceptance suite. Each test carries a ``criterion`` mark; a PASS/FAIL line per
criterion is printed in the terminal summary (see conftest.py)."""

import csv
import shutil
import time
from collections import defaultdict

import numpy as np
import pytest
import torch

from ctforensics.config import desk_config
from ctforensics.detector import (ChannelAttention, EarlyStopping, PatchDetector, SpatialAttention, TrainConfig,
                                  architecture_violations, default_layers, learning_rate, load_checkpoint, train)
from ctforensics.detector.layers import ConvBN, ResidualSeparableBlock, RowLinear, Selu, SeparableConv
from ctforensics.detector.training import accuracy, encode_labels
from ctforensics.evaluation import (BENIGN, FALSE_NEGATIVE, TAMPERED, TRUE_POSITIVE, AreaVerdictSpec, area_verdict,
                                    scan_verdict)
from ctforensics.glcm import ANGLE_STEPS, glcm
from ctforensics.global_classifier import GridSearchSpec, fit_pca, fit_svm, inverse_pca, transform_pca
from ctforensics.patch_grid import GridSpec, full_grid, row_centers
from ctforensics.pipeline import run_experiment

from oracles import (any_window_at_least, central_difference, grid_by_enumeration, inside_circle, naive_glcm,
                     window_in_frame)


def detail(request, text):
    request.node.user_properties.append(("detail", text))


# -- 1. grid geometry -------------------------------------------------------------------

@pytest.mark.criterion(1, "grid geometry (512, 32, 4)")
def test_c1_grid_geometry(request):
    t0 = time.perf_counter()
    spec = GridSpec(512, 32, 4)
    rows = row_centers(spec)
    assert len(rows) == 121 and rows[0] == 16 and rows[-1] == 496
    pts = [tuple(map(int, p)) for p in full_grid(spec).points()]
    assert len(pts) == len(set(pts))
    assert all(inside_circle(x, y, 512) and window_in_frame(x, y, 32, 512) for x, y in pts)
    assert set(pts) == grid_by_enumeration(512, 32, 4)
    elapsed = time.perf_counter() - t0
    detail(request, f"{len(pts)} centres, {elapsed:.2f} s")
    assert elapsed < 5.0


# -- 2. GLCM oracle equivalence ---------------------------------------------------------

@pytest.mark.criterion(2, "GLCM equals the naive oracle on 1000 random maps")
def test_c2_glcm_oracle(request):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    offsets = list(ANGLE_STEPS.values())
    for _ in range(1000):
        h, w = rng.integers(1, 17, size=2)
        g = int(rng.integers(2, 101))
        q = rng.integers(0, g, size=(h, w))
        ql = q.tolist()
        for dx, dy in offsets:
            assert np.array_equal(glcm(q, (dx, dy), g), naive_glcm(ql, dx, dy, g))
    elapsed = time.perf_counter() - t0
    detail(request, f"{elapsed:.1f} s including the oracle")
    assert elapsed < 30.0


# -- 3. gradient checks -----------------------------------------------------------------

def _relative_gradient_error(module, x, rng):
    """Max over input and parameters of |analytic - central difference| / max norm."""
    module = module.double()
    x = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    with torch.no_grad():
        weight = torch.tensor(rng.standard_normal(tuple(module(x).shape)))

    def loss():
        return float((module(x) * weight).sum())

    tensors = [x] + [p for p in module.parameters() if p.requires_grad]
    for t in tensors:
        t.grad = None
    (module(x) * weight).sum().backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad.detach().numpy().copy()

        def f(values, t=t):
            with torch.no_grad():
                saved = t.detach().clone()
                t.copy_(torch.from_numpy(values))
                out = loss()
                t.copy_(saved)
            return out

        numeric = central_difference(f, t.detach().numpy().copy(), 1e-6)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, np.linalg.norm(analytic - numeric) / scale)
    return worst


LAYER_CASES = {
    "selu": (lambda: Selu(), (4, 9)),
    "dense": (lambda: RowLinear(6, 4), (3, 6)),
    "conv_bn": (lambda: ConvBN(2, 3, 3, 1, "relu"), (2, 2, 6, 6)),
    "separable_conv": (lambda: SeparableConv(3, 4, 3, "relu"), (2, 3, 6, 6)),
    "residual_block": (lambda: ResidualSeparableBlock(4, 4), (2, 4, 6, 6)),
    "residual_block_down": (lambda: ResidualSeparableBlock(4, 8, downsample=True), (2, 4, 6, 6)),
    "spatial_attention": (lambda: SpatialAttention(7), (2, 3, 6, 6)),
    "channel_attention": (lambda: ChannelAttention(8), (2, 8, 4, 4)),
}


@pytest.mark.criterion(3, "gradient checks, 20 instances per layer type, rel. error <= 1e-4")
@pytest.mark.parametrize("kind", sorted(LAYER_CASES))
def test_c3_gradient_check(request, kind):
    make, shape = LAYER_CASES[kind]
    rng = np.random.default_rng(sorted(LAYER_CASES).index(kind))
    errors = []
    for i in range(20):
        torch.manual_seed(1000 + i)
        module = make()
        module.train(bool(i % 2))  # batch statistics and running statistics
        if i % 2 == 0:
            # give running statistics non-trivial values
            for m in module.modules():
                if isinstance(m, torch.nn.BatchNorm2d):
                    m.running_mean.uniform_(-0.5, 0.5)
                    m.running_var.uniform_(0.5, 2.0)
        x = rng.standard_normal(shape) * 1.5
        errors.append(_relative_gradient_error(module, x, rng))
    detail(request, f"{kind} max {max(errors):.1e}")
    assert len(errors) >= 20 and max(errors) <= 1e-4


# -- 4. architecture invariants ---------------------------------------------------------

@pytest.mark.criterion(4, "architecture invariants and residual identity")
def test_c4_architecture(request):
    layers = default_layers()
    assert architecture_violations(layers) == []

    model = PatchDetector(layers, seed=0).eval()
    shapes = []
    hooks = [m.register_forward_hook(lambda mod, i, o: shapes.append((type(mod).__name__, i[0].shape, o.shape)))
             for m in model.net]
    with torch.no_grad():
        model(torch.zeros(2, 1, 32, 32))
    for h in hooks:
        h.remove()
    kinds = [k for k, _, _ in shapes]
    blocks = [(i, o) for k, i, o in shapes if k == "ResidualSeparableBlock"]
    assert blocks
    for i, o in blocks:
        if o[-1] < i[-1]:
            assert o[1] == 2 * i[1] and o[-1] * 2 == i[-1]
        else:
            assert o[1] == i[1]
    first_down = next(n for n, (k, i, o) in enumerate(shapes)
                      if k == "ResidualSeparableBlock" and o[-1] < i[-1])
    last_block = max(n for n, k in enumerate(kinds) if k == "ResidualSeparableBlock")
    assert kinds.count("SpatialAttention") == 1 and kinds.index("SpatialAttention") < first_down
    assert kinds.count("ChannelAttention") == 1 and kinds.index("ChannelAttention") > last_block

    worst = 0.0
    for c in (16, 32, 64):
        block = ResidualSeparableBlock(c, c).double()
        for m in block.body.modules():
            if isinstance(m, torch.nn.Conv2d):
                torch.nn.init.zeros_(m.weight)
        x = torch.randn(3, c, 8, 8, dtype=torch.float64)
        for mode in (True, False):
            block.train(mode)
            with torch.no_grad():
                worst = max(worst, float(torch.max(torch.abs(block(x) - x))))
    detail(request, f"identity error {worst:.1e}")
    assert worst <= 1e-6


# -- 5. training contract ---------------------------------------------------------------

@pytest.mark.criterion(5, "training contract: lr staircase, early stopping, memorisation")
def test_c5_schedule_and_early_stopping():
    assert learning_rate(600) == 0.000425
    assert learning_rate(1200) == 0.00036125
    stop = EarlyStopping(3)
    decisions = [stop.update(e, s) for e, s in enumerate([0.90, 0.90, 0.89, 0.85], start=1)]
    assert decisions == [False, False, False, True]
    stop = EarlyStopping(3)
    decisions = [stop.update(e, s) for e, s in enumerate([0.5, 0.6, 0.59, 0.58, 0.61, 0.6, 0.6, 0.6], start=1)]
    assert decisions.index(True) == 7 and stop.best_epoch == 5


@pytest.mark.criterion(5, "training contract: lr staircase, early stopping, memorisation")
def test_c5_memorisation(request):
    rng = np.random.default_rng(0)
    x = rng.random((200, 32, 32)).astype(np.float32)
    y = np.array(["fake", "real"] * 100)
    rng.shuffle(y)
    t0 = time.perf_counter()
    # patience 30 so the run is not cut short; selection on the training set itself
    result = train(x, y, x, y, TrainConfig(max_epochs=30, early_stop_patience_epochs=30, seed=0))
    elapsed = time.perf_counter() - t0
    acc = accuracy(result.model, x, encode_labels(y))
    first = next((r["epoch"] for r in result.log if r["train_acc"] >= 0.99), None)
    detail(request, f"accuracy {acc:.3f}, batch accuracy >= 0.99 from epoch {first}, {elapsed:.0f} s")
    assert acc >= 0.99 and first is not None and first <= 30
    assert elapsed < 300


# -- 6. PCA / SVM -----------------------------------------------------------------------

@pytest.mark.criterion(6, "PCA orthonormality and subspace recovery, SVM grid search")
def test_c6_pca_svm(request):
    rng = np.random.default_rng(6)
    wide = rng.random((100, 40000))
    with pytest.warns(Warning):
        model = fit_pca(wide, 256)
    ortho = np.abs(model.components @ model.components.T - np.eye(model.dims)).max()
    assert ortho <= 1e-6

    basis = np.linalg.qr(rng.standard_normal((300, 2)))[0].T
    plane = rng.standard_normal((50, 2)) @ basis * 3 + rng.standard_normal(300)
    pm = fit_pca(plane, 2)
    recon = np.abs(inverse_pca(pm, transform_pca(pm, plane)) - plane).max()
    assert recon <= 1e-8
    assert abs(abs(np.linalg.det(pm.components @ basis.T)) - 1) <= 1e-8

    x = np.vstack([rng.standard_normal((40, 3)) * 0.5, rng.standard_normal((40, 3)) * 0.5 + 4])
    labels = ["real"] * 40 + ["fake"] * 40
    svm, report = fit_svm(x, labels, GridSearchSpec(), seed=0)
    winner = [r for r in report if r["selected"]]
    assert len(winner) == 1 and all(winner[0]["cv_accuracy"] >= r["cv_accuracy"] for r in report)
    train_acc = np.mean(svm.predict(x) == np.where(np.array(labels) == "fake", 1, -1))
    detail(request, f"orthonormality {ortho:.1e}, recovery {recon:.1e}, blob accuracy {train_acc}")
    assert train_acc == 1.0


# -- 7. evaluation rules ----------------------------------------------------------------

@pytest.mark.criterion(7, "area and scan verdicts equal brute-force window enumeration")
def test_c7_evaluation_rules():
    rng = np.random.default_rng(7)
    spec = AreaVerdictSpec(10, 9)
    for _ in range(1000):
        n = int(rng.integers(10, 51))
        flags = (rng.random(n) < rng.uniform(0.5, 1.0)).tolist()
        c = int(rng.integers(0, n))
        want_area = TRUE_POSITIVE if any_window_at_least(flags, 10, 9, must_contain=c) else FALSE_NEGATIVE
        assert area_verdict(flags, c, spec) == want_area
        assert scan_verdict(flags) == (TAMPERED if any_window_at_least(flags, 10, 9) else BENIGN)
    nine = [1, 1, 1, 1, 0, 1, 1, 1, 1, 1]
    eight = [1, 1, 1, 0, 1, 1, 1, 1, 0, 1]
    assert area_verdict(nine, 4) == TRUE_POSITIVE
    assert area_verdict(eight, 4) == FALSE_NEGATIVE
    assert scan_verdict(nine) == TAMPERED and scan_verdict(eight) == BENIGN


# -- 8 and 9. desk-scale experiment -----------------------------------------------------

def _desk_cfg(workspace):
    return desk_config(workspace=str(workspace), train=dict(max_epochs=10), seed=0)


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """Two runs of the full experiment in the same workspace path; the first is moved aside."""
    base = tmp_path_factory.mktemp("desk")
    ws = base / "ws"
    runs = []
    for name in ("first", "second"):
        t0 = time.perf_counter()
        result = run_experiment(_desk_cfg(ws))
        elapsed = time.perf_counter() - t0
        target = base / name
        shutil.move(str(ws), str(target))
        runs.append((result, target, elapsed))
    return runs


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _nearest_cell(v, spec):
    return min(range(spec.cells), key=lambda g: abs(spec.half + g * spec.stride - v))


@pytest.mark.slow
@pytest.mark.criterion(8, "desk experiment: slice F1 >= 0.85, scan accuracy >= 0.9, localisation >= 90%")
def test_c8_desk_experiment(request, desk_runs):
    result, root, elapsed = desk_runs[0]
    spec = GridSpec(128)

    # recompute every figure from the files on disk against the forger's manifest
    slices = _read(root / "dataset" / "slices.csv")
    tampers = {r["scan_id"]: r for r in _read(root / "dataset" / "tampers.csv")}
    preds = {}
    for f in sorted((root / "predictions").glob("*.csv")):
        for r in _read(f):
            preds[(r["scan_id"], int(r["slice_index"]))] = r
    test = [r for r in slices if r["split"] == "test"]
    counts = defaultdict(int)
    hits = []
    for r in test:
        p = preds[(r["volume_id"], int(r["slice_index"]))]
        counts[(r["label"], p["label_pred"])] += 1
        if r["label"] == "fake" and p["label_pred"] == "fake":
            cell = (_nearest_cell(int(r["tamper_x"]), spec), _nearest_cell(int(r["tamper_y"]), spec))
            d = max(abs(int(p["peak_gx"]) - cell[0]), abs(int(p["peak_gy"]) - cell[1]))
            hits.append(d <= 2)
    tp, fp, fn = counts[("fake", "fake")], counts[("real", "fake")], counts[("fake", "real")]
    f1 = 2 * tp / (2 * tp + fp + fn)

    scans = sorted({r["scan_id"] for r in test})
    correct = 0
    for sid in scans:
        labels = [preds[(sid, z)]["label_pred"] == "fake"
                  for z in range(max(z for s, z in preds if s == sid) + 1)]
        correct += any_window_at_least(labels, 10, 9) == (sid in tampers)
    scan_acc = correct / len(scans)
    loc = float(np.mean(hits)) if hits else 0.0

    assert f1 == pytest.approx(result.slice_report.f1, abs=1e-12)
    assert scan_acc == pytest.approx(result.scan_accuracy, abs=1e-12)
    assert loc == pytest.approx(result.localization_rate, abs=1e-12)
    detail(request, f"F1 {f1:.4f}, scan accuracy {scan_acc:.3f} on {len(scans)} scans, "
                    f"localisation {loc:.3f} of {len(hits)} slices, {elapsed / 60:.1f} min")
    assert f1 >= 0.85
    assert scan_acc >= 0.9
    assert loc >= 0.9
    assert elapsed <= 30 * 60
    for name in ("metrics.csv", "summary.txt"):
        assert (root / "reports" / name).is_file()
    assert any((root / "figures").glob("overlay_*.png"))


@pytest.mark.slow
@pytest.mark.criterion(9, "the desk experiment reruns bit-identically")
def test_c9_determinism(request, desk_runs):
    (ra, a, _), (rb, b, _) = desk_runs
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    byte_equal, by_tensor = 0, []
    for rel in files_a:
        da, db = (a / rel).read_bytes(), (b / rel).read_bytes()
        if da == db:
            byte_equal += 1
            continue
        # checkpoints may differ only in container metadata
        assert rel.suffix == ".pt", f"{rel} differs between runs"
        sa, sb = load_checkpoint(a / rel).state_dict(), load_checkpoint(b / rel).state_dict()
        assert sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)
        by_tensor.append(str(rel))
    assert ra.slice_report == rb.slice_report and ra.area_report == rb.area_report
    assert ra.scan_verdicts == rb.scan_verdicts and ra.localization_rows == rb.localization_rows
    detail(request, f"{byte_equal} of {len(files_a)} files byte-identical"
                    + (f", tensors equal in {', '.join(by_tensor)}" if by_tensor else ""))
