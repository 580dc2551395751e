"""Metrics for effect and potential-outcome estimation quality.

Simulated benchmarks score against ground-truth surfaces (RMSE of the effect
and of each outcome function, optionally normalized by the factual training
outcome spread, which keeps exponential-surface runs comparable). Twin-style
data with both outcomes realized is scored on the observed counterfactual
difference: RMSE against the realized difference and rank AUC treating the
difference as a 3-class target under conditional independence of the
potential outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .data import Dataset, PredictionTriple

Array = np.ndarray


def _check_lengths(a: Array, b: Array, what: str) -> tuple[Array, Array]:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if len(a) != len(b):
        raise ValueError(f"{what}: length mismatch ({len(a)} vs {len(b)})")
    if len(a) == 0:
        raise ValueError(f"{what}: empty vectors")
    return a, b


def rmse_cate(tau_hat: Array, tau: Array) -> float:
    """Root mean squared error of the effect estimate on held-out points."""
    tau_hat, tau = _check_lengths(tau_hat, tau, "rmse_cate")
    return float(np.sqrt(np.mean((tau_hat - tau) ** 2)))


def normalized_rmse(raw: float, factual_train_y: Array) -> float:
    """RMSE divided by the sample SD (n-1 denominator) of the observed
    factual training outcomes."""
    y = np.asarray(factual_train_y, dtype=np.float64).reshape(-1)
    if len(y) < 2:
        raise ValueError("need at least two training outcomes to normalize")
    sd = float(np.std(y, ddof=1))
    if sd == 0.0:
        raise ValueError("training outcomes are constant; normalization undefined")
    return float(raw) / sd


def twins_threeclass_probs(mu0: Array, mu1: Array) -> tuple[Array, Array, Array]:
    """P(Y(1)-Y(0) = t) for t in (-1, 0, 1) under conditionally independent
    binary potential outcomes with marginals (mu0, mu1)."""
    mu0 = np.asarray(mu0, dtype=np.float64)
    mu1 = np.asarray(mu1, dtype=np.float64)
    if np.any((mu0 < 0) | (mu0 > 1) | (mu1 < 0) | (mu1 > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    p_minus = mu0 * (1.0 - mu1)
    p_plus = (1.0 - mu0) * mu1
    p_zero = mu0 * mu1 + (1.0 - mu0) * (1.0 - mu1)
    return p_minus, p_zero, p_plus


def rmse_cf_diff(tau_hat: Array, observed_diff: Array) -> float:
    """RMSE of the effect estimate against the realized outcome difference."""
    tau_hat, diff = _check_lengths(tau_hat, observed_diff, "rmse_cf_diff")
    return float(np.sqrt(np.mean((diff - tau_hat) ** 2)))


def auc(scores: Array, labels: Array) -> float:
    """Rank-based AUC with ties averaged (Mann-Whitney)."""
    scores, labels = _check_lengths(scores, labels, "auc")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes present")
    ranks = rankdata(scores)
    rank_sum = float(ranks[positive].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_counterfactual_diff(mu0_hat: Array, mu1_hat: Array, observed_diff: Array) -> float:
    """Macro one-vs-rest AUC over the difference classes (-1, 0, 1).

    Classes absent from the realized differences are skipped. The per-class
    score is the predicted class probability under the 3-class model.
    """
    diff = np.asarray(observed_diff, dtype=np.float64).reshape(-1)
    probs = twins_threeclass_probs(mu0_hat, mu1_hat)
    per_class = []
    for target, p in zip((-1.0, 0.0, 1.0), probs):
        labels = (diff == target).astype(float)
        if labels.min() == labels.max():
            continue
        per_class.append(auc(p, labels))
    if not per_class:
        raise ValueError("observed differences contain a single class")
    return float(np.mean(per_class))


@dataclass
class MetricReport:
    rmse_cate: float
    normalized_rmse_cate: Optional[float] = None
    rmse_mu0: Optional[float] = None
    rmse_mu1: Optional[float] = None
    auc_cf_diff: Optional[float] = None
    rmse_cf_diff: Optional[float] = None
    auc_mu0: Optional[float] = None
    auc_mu1: Optional[float] = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def evaluate_predictions(pred: PredictionTriple, test: Dataset,
                         factual_train_y: Optional[Array] = None) -> MetricReport:
    """Score a prediction triple against a test split with ground truth."""
    if test.tau is None:
        raise ValueError("test split carries no ground-truth effect")
    raw = rmse_cate(pred.tau, test.tau)
    report = MetricReport(rmse_cate=raw)
    if factual_train_y is not None:
        report.normalized_rmse_cate = normalized_rmse(raw, factual_train_y)
    if pred.mu0 is not None and test.mu0 is not None:
        report.rmse_mu0 = rmse_cate(pred.mu0, test.mu0)
    if pred.mu1 is not None and test.mu1 is not None:
        report.rmse_mu1 = rmse_cate(pred.mu1, test.mu1)
    return report


def evaluate_binary_predictions(pred: PredictionTriple, y0: Array, y1: Array) -> MetricReport:
    """Twin-style scoring against realized potential-outcome pairs."""
    y0 = np.asarray(y0, dtype=np.float64).reshape(-1)
    y1 = np.asarray(y1, dtype=np.float64).reshape(-1)
    diff = y1 - y0
    report = MetricReport(rmse_cate=float("nan"))
    report.rmse_cf_diff = rmse_cf_diff(pred.tau, diff)
    if pred.mu0 is not None and pred.mu1 is not None:
        report.auc_cf_diff = auc_counterfactual_diff(pred.mu0, pred.mu1, diff)
        if y0.min() != y0.max():
            report.auc_mu0 = auc(pred.mu0, y0)
        if y1.min() != y1.max():
            report.auc_mu1 = auc(pred.mu1, y1)
    return report
