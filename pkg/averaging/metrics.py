"""
Evaluation metrics and the empirical check of the posterior-weight guarantee.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from .core import LikelihoodTable, SIMPLEX_TOL, mixture_loglik_rows, validate_weight_matrix
from .exceptions import ArgumentError, TaskError

logger = logging.getLogger(__name__)

DEFAULT_BINS = 10
METRIC_COLUMNS = ["repetition", "method", "task", "accuracy", "ece", "rmse", "r2", "mean_test_loglik"]


def _aligned(a, b, what: str) -> Tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise ArgumentError(f"{what}: {a.shape[0]} predictions for {b.shape[0]} labels.")
    if a.shape[0] == 0:
        raise ArgumentError(f"{what}: no rows.")
    return a, b


def accuracy(pred_probs, labels) -> float:
    """Fraction of rows whose argmax class (lowest index on ties) equals the label."""
    probs, labels = _aligned(pred_probs, labels, "accuracy")
    if probs.ndim != 2:
        raise ArgumentError(f"accuracy expects an n x C probability matrix, got shape {probs.shape}.")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def _binary_inputs(p1, labels, bins: int, what: str) -> Tuple[np.ndarray, np.ndarray]:
    p1, labels = _aligned(p1, labels, what)
    p1 = np.asarray(p1, dtype=np.float64)
    if p1.ndim == 2:
        if p1.shape[1] != 2:
            raise TaskError(f"{what} is defined for binary tasks only, got {p1.shape[1]} classes.")
        p1 = p1[:, 1]
    if not np.all(np.isin(labels, (0, 1))):
        raise TaskError(f"{what} is defined for binary labels only.")
    if bins < 1:
        raise ArgumentError(f"{what} needs bins >= 1, got {bins}.")
    return p1, labels.astype(np.int64)


def _bin_index(values: np.ndarray, lower: float, upper: float, bins: int) -> np.ndarray:
    index = np.floor((values - lower) / (upper - lower) * bins).astype(np.int64)
    return np.clip(index, 0, bins - 1)


def _correctness(p1: np.ndarray, labels: np.ndarray) -> np.ndarray:
    hit = ((p1 > 0.5).astype(np.int64) == labels).astype(np.float64)
    return np.where(p1 == 0.5, 0.5, hit)


def ece(pred_probs, labels, bins: int = DEFAULT_BINS) -> float:
    """
    Expected calibration error on confidence max(p, 1 - p), in equal-width bins on [0.5, 1].

    The predicted class is 1 when p > 0.5; a row at exactly 0.5 counts as half correct.
    """
    p1, labels = _binary_inputs(pred_probs, labels, bins, "ECE")
    confidence = np.maximum(p1, 1.0 - p1)
    correct = _correctness(p1, labels)
    frame = pd.DataFrame({"bin": _bin_index(confidence, 0.5, 1.0, bins), "conf": confidence, "correct": correct})
    grouped = frame.groupby("bin").agg(count=("conf", "size"), conf=("conf", "mean"), acc=("correct", "mean"))
    return float(np.sum(grouped["count"] / len(p1) * np.abs(grouped["acc"] - grouped["conf"])))


def rmse_r2(preds, labels) -> Tuple[float, float]:
    preds, labels = _aligned(preds, labels, "rmse_r2")
    preds, labels = preds.astype(np.float64), labels.astype(np.float64)
    if labels.shape[0] < 2:
        raise ArgumentError("rmse_r2 needs at least 2 rows.")
    sse = float(np.sum((labels - preds) ** 2))
    sst = float(np.sum((labels - labels.mean()) ** 2))
    rmse = float(np.sqrt(sse / labels.shape[0]))
    r2 = 0.0 if sst == 0 else 1.0 - sse / sst
    return rmse, r2


def confidence_bin_errors(pred_probs, labels, bins: int = DEFAULT_BINS) -> pd.DataFrame:
    """Misclassification rate and count per equal-width bin of |p - 0.5| on [0, 0.5]."""
    p1, labels = _binary_inputs(pred_probs, labels, bins, "confidence bins")
    margin = np.abs(p1 - 0.5)
    wrong = 1.0 - _correctness(p1, labels)
    index = _bin_index(margin, 0.0, 0.5, bins)
    edges = np.linspace(0.0, 0.5, bins + 1)
    counts = np.bincount(index, minlength=bins)
    errors = np.bincount(index, weights=wrong, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(counts > 0, errors / np.maximum(counts, 1), np.nan)
    return pd.DataFrame({
        "bin_lower": edges[:-1],
        "bin_upper": edges[1:],
        "count": counts,
        "error_rate": rate,
    })


@dataclass
class MetricReport:
    method: str
    task: str
    repetition: int = 0
    accuracy: Optional[float] = None
    ece: Optional[float] = None
    rmse: Optional[float] = None
    r2: Optional[float] = None
    mean_test_loglik: Optional[float] = None
    bin_errors: Optional[pd.DataFrame] = field(default=None, repr=False)

    def __post_init__(self):
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise ArgumentError(f"accuracy must lie in [0, 1], got {self.accuracy}.")
        if self.ece is not None and not 0.0 <= self.ece <= 1.0:
            raise ArgumentError(f"ECE must lie in [0, 1], got {self.ece}.")
        if self.r2 is not None and self.r2 > 1.0 + 1e-12:
            raise ArgumentError(f"R^2 must be <= 1, got {self.r2}.")

    def to_row(self) -> Dict[str, Any]:
        return {column: getattr(self, column) for column in METRIC_COLUMNS}

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["bin_errors"] = None if self.bin_errors is None else self.bin_errors.to_dict(orient="records")
        return payload


# ---------------------------------------------------------------------------
# guarantee check
# ---------------------------------------------------------------------------

@dataclass
class Theorem1Report:
    """
    Pointwise check log sum_j w_j f_j >= log w_k + log f_k for every row and
    model, plus the aggregate inequality for the argmax selector.
    """

    row_violation: np.ndarray
    mixture_loglik: np.ndarray
    selector: np.ndarray
    mean_mixture_loglik: float
    mean_selector_bound: float
    tolerance: float = SIMPLEX_TOL

    @property
    def max_violation(self) -> float:
        return float(self.row_violation.max())

    @property
    def violations(self) -> int:
        return int(np.sum(self.row_violation > self.tolerance))

    @property
    def aggregate_slack(self) -> float:
        return self.mean_mixture_loglik - self.mean_selector_bound

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.aggregate_slack >= -self.tolerance

    def summary(self) -> Dict[str, Any]:
        return {
            "rows": int(self.row_violation.size),
            "max_violation": self.max_violation,
            "violations": self.violations,
            "mean_mixture_loglik": self.mean_mixture_loglik,
            "mean_selector_bound": self.mean_selector_bound,
            "aggregate_slack": self.aggregate_slack,
            "passed": self.passed,
        }


def theorem1_check(weights, table: LikelihoodTable, tolerance: float = SIMPLEX_TOL) -> Theorem1Report:
    weights = validate_weight_matrix(weights, m=table.m)
    if weights.shape[0] != table.n:
        raise ArgumentError(f"Got {weights.shape[0]} weight rows for a {table.n}-row table.")
    mixture = mixture_loglik_rows(weights, table.loglik)
    with np.errstate(divide="ignore"):
        log_weights = np.log(weights)
    # zero-weight terms bound nothing
    bounds = np.where(weights > 0, log_weights + table.loglik, -np.inf)
    violation = np.maximum(bounds.max(axis=1) - mixture, 0.0)

    rows = np.arange(table.n)
    selector = np.argmax(weights, axis=1)
    selector_bound = table.loglik[rows, selector] + log_weights[rows, selector]
    report = Theorem1Report(
        row_violation=violation,
        mixture_loglik=mixture,
        selector=selector,
        mean_mixture_loglik=float(mixture.mean()),
        mean_selector_bound=float(selector_bound.mean()),
        tolerance=tolerance,
    )
    if not report.passed:
        logger.warning(f"Theorem-1 check failed: {report.violations} rows, max violation {report.max_violation:.3e}")
    return report
