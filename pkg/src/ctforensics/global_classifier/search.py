"""Cross-validated grid search over SVM hyperparameters, and the combined
GLCM -> PCA -> SVM slice classifier."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import FAKE, REAL
from ..errors import ConfigError, DataError, ModelError, ShapeError
from ..glcm import GlcmSpec, feature_vector
from .pca import PcaModel, transform_pca
from .svm import SvmModel, fit_svm_fixed, to_signed

log = logging.getLogger(__name__)

BUNDLE_VERSION = "ctforensics-global/1"


@dataclass(frozen=True)
class GridSearchSpec:
    kernels: tuple = ("rbf", "linear")
    C_grid: tuple = (0.1, 1.0, 10.0, 100.0)
    # "1/dims" resolves to 1 / n_features at fit time
    gamma_grid: tuple = (1e-4, 1e-3, 1e-2, 1e-1, "1/dims")
    folds: int = 5
    metric: str = "accuracy"
    tol: float = 1e-3

    def __post_init__(self):
        for name in ("kernels", "C_grid", "gamma_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise ConfigError(f"{name} must not be empty")
        if any(k not in ("rbf", "linear") for k in self.kernels):
            raise ConfigError(f"kernels must be 'rbf' or 'linear', got {self.kernels}")
        if any(float(c) <= 0 for c in self.C_grid):
            raise ConfigError("C values must be positive")
        for g in self.gamma_grid:
            if g != "1/dims" and float(g) <= 0:
                raise ConfigError("gamma values must be positive or '1/dims'")
        if self.folds < 2:
            raise ConfigError("at least two folds are needed")
        if self.metric != "accuracy":
            raise ConfigError("only accuracy is supported as selection metric")

    def points(self, n_features: int) -> list[tuple[str, float, float, str]]:
        """(kernel, C, gamma, gamma_label) in evaluation order; linear ignores gamma."""
        out = []
        for kernel in self.kernels:
            for c in self.C_grid:
                if kernel == "linear":
                    out.append((kernel, float(c), 0.0, "-"))
                    continue
                for g in self.gamma_grid:
                    value = 1.0 / n_features if g == "1/dims" else float(g)
                    out.append((kernel, float(c), value, str(g)))
        return out


def stratified_folds(y, k: int, seed) -> np.ndarray:
    """Fold index per row; each class is shuffled with ``seed`` and dealt round-robin."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    return fold


def _cv_score(x, y, folds, k, point, tol):
    kernel, c, gamma, _ = point
    scores = []
    for f in range(k):
        test = folds == f
        train = ~test
        if len(np.unique(y[train])) < 2:
            scores.append(0.0)
            continue
        model = fit_svm_fixed(x[train], y[train], kernel, c, gamma or 1.0, tol)
        scores.append(float(np.mean(model.predict(x[test]) == y[test])))
    return scores


def fit_svm(x, labels, grid: GridSearchSpec = GridSearchSpec(), seed=0, workers: int = 1):
    """k-fold grid search, then refit of the best point on all rows.

    Returns (model, report) where report has one dict per grid point.
    """
    x = np.asarray(x, dtype=np.float64)
    y = to_signed(labels)
    if len(np.unique(y)) < 2:
        raise DataError("grid search needs both classes")
    if len(y) < 2 * grid.folds:
        raise DataError(f"{len(y)} samples are too few for {grid.folds}-fold cross-validation")
    folds = stratified_folds(y, grid.folds, seed)
    points = grid.points(x.shape[1])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            all_scores = list(pool.map(lambda p: _cv_score(x, y, folds, grid.folds, p, grid.tol), points))
    else:
        all_scores = [_cv_score(x, y, folds, grid.folds, p, grid.tol) for p in points]

    report = []
    for (kernel, c, gamma, label), scores in zip(points, all_scores):
        report.append(dict(kernel=kernel, C=c, gamma=gamma, gamma_label=label,
                           cv_accuracy=float(np.mean(scores)), fold_accuracies=scores, selected=False))
    best = max(range(len(report)), key=lambda i: (report[i]["cv_accuracy"], -i))
    report[best]["selected"] = True
    b = report[best]
    log.info("grid search winner: %s C=%g gamma=%g cv_acc=%.4f", b["kernel"], b["C"], b["gamma"], b["cv_accuracy"])
    model = fit_svm_fixed(x, y, b["kernel"], b["C"], b["gamma"] or 1.0, grid.tol)
    return model, report


def write_report(report, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["kernel", "C", "gamma", "gamma_label", "cv_accuracy", "fold_accuracies", "selected"]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in report:
            out = dict(row)
            out["fold_accuracies"] = ";".join(f"{v:.6f}" for v in row["fold_accuracies"])
            w.writerow(out)
    return path


# -- slice classifier -------------------------------------------------------------

def predict_global(pca: PcaModel, svm: SvmModel, heatmap, glcm_spec: GlcmSpec = GlcmSpec()):
    """('fake' | 'real', signed decision value) for one heatmap."""
    feat = feature_vector(heatmap, glcm_spec).vector
    if feat.shape[0] != pca.n_features:
        raise ShapeError(f"GLCM feature length {feat.shape[0]} does not match the PCA model ({pca.n_features})")
    score = float(svm.decision_function(transform_pca(pca, feat)[None])[0])
    return (FAKE if score > 0 else REAL), score


def save_bundle(path, pca: PcaModel, svm: SvmModel, glcm_spec: GlcmSpec = GlcmSpec()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(version=BUNDLE_VERSION, kernel=svm.kernel, C=svm.C, gamma=svm.gamma, bias=svm.bias,
                iterations=svm.iterations, glcm=asdict(glcm_spec))
    with path.open("wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), pca_mean=pca.mean, pca_components=pca.components,
                 pca_explained_variance=pca.explained_variance, support_vectors=svm.support_vectors,
                 dual_coef=svm.dual_coef)
    return path


def load_bundle(path):
    """(PcaModel, SvmModel, GlcmSpec) from :func:`save_bundle` output."""
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"missing global model bundle: {path}")
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != BUNDLE_VERSION:
            raise ModelError(f"{path} has version {meta.get('version')!r}, expected {BUNDLE_VERSION!r}")
        pca = PcaModel(z["pca_mean"], z["pca_components"], z["pca_explained_variance"])
        svm = SvmModel(meta["kernel"], meta["C"], meta["gamma"], z["support_vectors"], z["dual_coef"],
                       meta["bias"], meta["iterations"])
    glcm_spec = GlcmSpec(**meta["glcm"])
    return pca, svm, glcm_spec
