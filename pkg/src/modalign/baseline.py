"""Reference model: l2-regularized logistic regression on standardized
speech features, trained by plain full-batch gradient descent. Exists to
give the speech pipeline a floor to beat, not to be competitive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import as_matrix


@dataclass
class LogisticBaseline:
    w: np.ndarray
    b: float

    def scores(self, x: np.ndarray) -> np.ndarray:
        """P(class 1) via the logistic function."""
        logits = as_matrix(x) @ self.w + self.b
        return 1.0 / (1.0 + np.exp(-logits))


def train_lr_baseline(x: np.ndarray, y: np.ndarray,
                      class_weight_vec: np.ndarray | None = None,
                      lr: float = 0.1, epochs: int = 500,
                      l2: float = 1e-2) -> LogisticBaseline:
    """Weighted logistic regression with an l2 penalty on w (not the bias)."""
    x = as_matrix(x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.size:
        raise ValueError("x and y row mismatch")
    if set(np.unique(y).tolist()) != {0.0, 1.0}:
        raise ValueError("baseline needs both classes present")
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    sw = np.ones_like(y)
    if class_weight_vec is not None:
        sw = np.asarray(class_weight_vec, dtype=np.float64)[y.astype(int)]
    sw_sum = sw.sum()

    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        resid = sw * (p - y)
        grad_w = x.T @ resid / sw_sum + l2 * w
        grad_b = resid.sum() / sw_sum
        w -= lr * grad_w
        b -= lr * grad_b
    return LogisticBaseline(w=w, b=b)
