"""Evaluation metrics: exact ROC AUC, stratified bootstrap confidence
intervals, ROC curves, and a small PCA helper for embedding plots.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


def _validate_binary(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"scores ({scores.size}) and labels ({labels.size}) differ in length")
    if scores.size == 0:
        raise ValueError("empty inputs")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    uniq = set(np.unique(labels).tolist())
    if not uniq <= {0, 1}:
        raise ValueError(f"labels must be 0/1, got {sorted(uniq)}")
    if uniq != {0, 1}:
        raise ValueError("AUC needs at least one positive and one negative")
    return scores, labels.astype(int)


def auc_roc(scores: np.ndarray, labels: np.ndarray) -> float:
    """ROC AUC via the rank-sum identity, ties counted as half.

    With average ranks r_i of the positive scores among all n scores,
    AUC = (sum r_i - n_pos(n_pos+1)/2) / (n_pos * n_neg). Ranks of
    float64 scores are exact, and average ranks are half-integers, so
    this matches pairwise counting bit for bit.
    """
    scores, labels = _validate_binary(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = rankdata(scores, method="average")
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_brute_force(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(n_pos * n_neg) pairwise counting; the oracle for auc_roc."""
    scores, labels = _validate_binary(scores, labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (float(wins) + 0.5 * float(ties)) / (pos.size * neg.size)


def bootstrap_ci(scores: np.ndarray, labels: np.ndarray, resamples: int = 1000,
                 level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap CI for AUC, resampling within each class.

    Each replicate draws n_pos positives and n_neg negatives with
    replacement from their own class, so every replicate has a defined
    AUC. Replicate RNGs come from SeedSequence.spawn, making the result
    independent of evaluation order.
    """
    scores, labels = _validate_binary(scores, labels)
    if resamples < 1:
        raise ValueError("resamples must be positive")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    children = np.random.SeedSequence(seed).spawn(resamples)
    aucs = np.empty(resamples, dtype=np.float64)
    ones = np.ones(pos.size, dtype=int)
    zeros = np.zeros(neg.size, dtype=int)
    resampled_labels = np.concatenate([ones, zeros])
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        sample = np.concatenate([rng.choice(pos, size=pos.size, replace=True),
                                 rng.choice(neg, size=neg.size, replace=True)])
        aucs[i] = auc_roc(sample, resampled_labels)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(aucs, [tail, 100.0 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class MetricReport:
    auc: float
    ci_low: float
    ci_high: float
    n_pos: int
    n_neg: int
    bootstrap_resamples: int
    seed: int

    def __post_init__(self):
        if not (0.0 <= self.ci_low <= self.auc <= self.ci_high <= 1.0):
            raise ValueError(
                f"need 0 <= ci_low <= auc <= ci_high <= 1, got "
                f"({self.ci_low}, {self.auc}, {self.ci_high})")
        if self.n_pos < 1 or self.n_neg < 1:
            raise ValueError("both classes must be present")

    def to_dict(self) -> dict:
        return asdict(self)


def metric_report(scores: np.ndarray, labels: np.ndarray, resamples: int = 1000,
                  level: float = 0.95, seed: int = 0) -> MetricReport:
    scores, labels = _validate_binary(scores, labels)
    auc = auc_roc(scores, labels)
    lo, hi = bootstrap_ci(scores, labels, resamples=resamples, level=level, seed=seed)
    # the point estimate can land outside the percentile interval on tiny
    # samples; widen so the report invariant holds
    lo, hi = min(lo, auc), max(hi, auc)
    return MetricReport(auc=auc, ci_low=lo, ci_high=hi,
                        n_pos=int(labels.sum()), n_neg=int((1 - labels).sum()),
                        bootstrap_resamples=resamples, seed=seed)


def roc_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) arrays sweeping the threshold from +inf down, for plotting."""
    scores, labels = _validate_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    # collapse runs of equal scores to their last index
    keep = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tpr = np.r_[0.0, tp[keep] / tp[-1]]
    fpr = np.r_[0.0, fp[keep] / fp[-1]]
    return fpr, tpr


def pca_2d(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-2 principal components of the rows of x.

    Returns (coords (n, 2), explained variances (2,), components (2, d)).
    Each component's sign is fixed so its largest-|.| entry is positive,
    making the output deterministic across runs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError("pca_2d needs a 2-d array with >= 3 rows and >= 2 columns")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    comps = eigvecs[:, ::-1][:, :2].T.copy()
    explained = eigvals[::-1][:2].copy()
    for i in range(2):
        pivot = np.argmax(np.abs(comps[i]))
        if comps[i, pivot] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T, explained, comps
