"""Binary C-SVM trained by sequential minimal optimisation.

Working-set selection uses second-order information (the WSS-2 rule of
Fan, Chen and Lin, as in libsvm); the kernel matrix is precomputed, which is
fine for the few thousand slices a global classifier sees.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError, ShapeError

log = logging.getLogger(__name__)

TAU = 1e-12


def kernel_matrix(a, b, kernel: str, gamma: float = 1.0) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if kernel == "linear":
        return a @ b.T
    if kernel == "rbf":
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ConfigError(f"unknown kernel {kernel!r}")


@dataclass(frozen=True)
class SvmModel:
    kernel: str
    C: float
    gamma: float
    support_vectors: np.ndarray  # (s, d)
    dual_coef: np.ndarray  # (s,) = alpha_i * y_i
    bias: float
    iterations: int = 0

    def decision_function(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.support_vectors.size and x.shape[1] != self.support_vectors.shape[1]:
            raise ShapeError(f"expected {self.support_vectors.shape[1]} features, got {x.shape[1]}")
        if not len(self.dual_coef):
            return np.full(len(x), self.bias)
        return kernel_matrix(x, self.support_vectors, self.kernel, self.gamma) @ self.dual_coef + self.bias

    def predict(self, x) -> np.ndarray:
        """+1 where the decision value is positive, else -1."""
        return np.where(self.decision_function(x) > 0, 1, -1)


def solve_dual(K, y, C: float, tol: float = 1e-3, max_iter: int = 1_000_000):
    """Minimise 1/2 a'Qa - e'a subject to 0 <= a <= C, y'a = 0 with Q = yy' * K.

    Returns (alpha, bias, iterations); decisions are sum_i alpha_i y_i K(x_i, x) + bias.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    Q = K * np.outer(y, y)
    qd = np.diag(K).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    for it in range(1, max_iter + 1):
        r = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        r_up = np.where(up, r, -np.inf)
        i = int(np.argmax(r_up))
        m_val = r_up[i]
        r_low = np.where(low, r, np.inf)
        if m_val - r_low.min() < tol:
            break
        b = m_val - r
        cand = low & (b > 0)
        a = qd[i] + qd - 2.0 * K[i]
        a = np.where(a > 0, a, TAU)
        score = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(score))

        t = b[j] / a[j]
        t = min(t, C - alpha[i] if y[i] > 0 else alpha[i])
        t = min(t, alpha[j] if y[j] > 0 else C - alpha[j])
        di, dj = y[i] * t, -y[j] * t
        alpha[i] += di
        alpha[j] += dj
        # snap to the box against round-off
        for k in (i, j):
            if alpha[k] < 1e-12 * C:
                alpha[k] = 0.0
            elif alpha[k] > C * (1 - 1e-12):
                alpha[k] = C
        grad += Q[:, i] * di + Q[:, j] * dj
    else:
        log.warning("SMO stopped at the iteration cap (%d) before reaching tolerance %g", max_iter, tol)

    r = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        bias = float(r[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi = r[up].max() if up.any() else 0.0
        lo = r[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2)
    return alpha, bias, it


def to_signed(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype.kind in "US" or y.dtype == object:
        y = np.where(y == "fake", 1.0, np.where(y == "real", -1.0, np.nan))
        if np.isnan(y).any():
            raise DataError("labels must be 'real' or 'fake'")
        return y
    y = y.astype(np.float64)
    return np.where(y > 0, 1.0, -1.0)


def fit_svm_fixed(x, labels, kernel: str = "rbf", C: float = 1.0, gamma: float = 1.0,
                  tol: float = 1e-3) -> SvmModel:
    x = np.asarray(x, dtype=np.float64)
    y = to_signed(labels)
    if len(np.unique(y)) < 2:
        raise DataError("SVM training needs both classes")
    if C <= 0 or (kernel == "rbf" and gamma <= 0):
        raise ConfigError("C and gamma must be positive")
    K = kernel_matrix(x, x, kernel, gamma)
    alpha, bias, it = solve_dual(K, y, C, tol)
    sv = alpha > 0
    return SvmModel(kernel, float(C), float(gamma), x[sv].copy(), (alpha * y)[sv], bias, it)
