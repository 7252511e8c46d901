"""PCA + SVM classification of heatmap GLCM features."""

from .pca import PcaModel, ReducedRankWarning, fit_pca, inverse_pca, transform_pca
from .search import (GridSearchSpec, fit_svm, load_bundle, predict_global, save_bundle, stratified_folds,
                     write_report)
from .svm import SvmModel, fit_svm_fixed, kernel_matrix, solve_dual

__all__ = [
    "GridSearchSpec", "PcaModel", "ReducedRankWarning", "SvmModel", "fit_pca", "fit_svm", "fit_svm_fixed",
    "inverse_pca", "kernel_matrix", "load_bundle", "predict_global", "save_bundle", "solve_dual",
    "stratified_folds", "transform_pca", "write_report",
]
