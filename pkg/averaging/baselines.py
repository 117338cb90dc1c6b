"""
Comparison methods sharing the likelihood-table interface.

Non-adaptive: best single model, uniform average, accuracy-weighted average,
classical BMA. Adaptive: a mixture-of-experts gate over the frozen base
predictors, and dynamic local accuracy (DLA) weighting by kNN accuracy.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import Dataset, LikelihoodTable, SimplexWeights, Task, nearest_neighbors, softmax, softmax_rows
from .exceptions import ArgumentError
from .posterior import MixtureObjective, PosteriorNet, TrainConfig, TrainingTrace, optimize
from .predictors import BasePredictor

logger = logging.getLogger(__name__)

HARD_TEMPERATURE = 1e-8


class BaselineKind(str, Enum):
    BEST_SINGLE = "best_single"
    UNIFORM = "uniform"
    ACCURACY_WEIGHTED = "accuracy_weighted"
    CLASSICAL_BMA = "classical_bma"
    MOE = "moe"
    DLA = "dla"

    @property
    def adaptive(self) -> bool:
        return self in (BaselineKind.MOE, BaselineKind.DLA)


@dataclass(frozen=True)
class DLAConfig:
    k: int = 50
    temperature: float = 0.8
    smoothing: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ArgumentError(f"DLA k must be >= 1, got {self.k}.")
        if not self.temperature > 0:
            raise ArgumentError(f"DLA temperature must be > 0, got {self.temperature}.")
        if self.smoothing < 0:
            raise ArgumentError(f"DLA smoothing must be >= 0, got {self.smoothing}.")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# non-adaptive weights
# ---------------------------------------------------------------------------

def weights_uniform(m: int) -> SimplexWeights:
    if m < 1:
        raise ArgumentError(f"Uniform weights need m >= 1, got {m}.")
    return SimplexWeights(np.full(m, 1.0 / m))


def one_hot(m: int, k: int) -> SimplexWeights:
    weights = np.zeros(m)
    weights[k] = 1.0
    return SimplexWeights(weights)


def weights_best_single(train_table: LikelihoodTable) -> SimplexWeights:
    """One-hot on the largest total training log-likelihood (ties go to the lowest index)."""
    return one_hot(train_table.m, int(np.argmax(train_table.column_totals())))


def weights_bma(train_table: LikelihoodTable) -> SimplexWeights:
    """softmax of total training log-likelihoods (uniform model prior)."""
    return softmax(train_table.column_totals())


def training_scores(predictors: Sequence[BasePredictor], data: Dataset) -> np.ndarray:
    """Training accuracy per classifier, or training RMSE per regressor."""
    if data.task is Task.CLASSIFICATION:
        return np.array([np.mean(p.predict(data.features) == data.labels) for p in predictors])
    return np.array([
        np.sqrt(np.mean((data.labels - p.training_predictions(data)) ** 2)) for p in predictors
    ])


def weights_accuracy(train_table: LikelihoodTable, data: Dataset,
                     predictors: Sequence[BasePredictor]) -> SimplexWeights:
    """Weights proportional to training accuracy (classification) or 1/(RMSE + 1e-12) (regression)."""
    if len(predictors) != train_table.m:
        raise ArgumentError(f"Got {len(predictors)} predictors for a {train_table.m}-model table.")
    scores = training_scores(predictors, data)
    raw = scores if data.task is Task.CLASSIFICATION else 1.0 / (scores + 1e-12)
    if raw.sum() <= 0:
        logger.warning("Every model has zero training accuracy; falling back to uniform weights")
        return weights_uniform(train_table.m)
    return SimplexWeights(raw / raw.sum())


# ---------------------------------------------------------------------------
# mixture of experts
# ---------------------------------------------------------------------------

def fit_moe(data: Dataset, table: LikelihoodTable, cfg: TrainConfig,
            hidden: Sequence[int] = (64, 32, 16)) -> Tuple[PosteriorNet, TrainingTrace]:
    """Train a gate over frozen experts to maximize mean log sum_j g_j(x_i) f_j(y_i | x_i)."""
    if table.n != data.n:
        raise ArgumentError(f"Table has {table.n} rows, data has {data.n}.")
    gate = PosteriorNet(data.d, table.m, hidden=hidden, seed=cfg.seed)
    trace = optimize(gate, data.features, MixtureObjective(table.loglik), cfg, label="MoE gate")
    return gate, trace


# ---------------------------------------------------------------------------
# dynamic local accuracy
# ---------------------------------------------------------------------------

class DynamicLocalAccuracy:
    """
    Weights from each model's accuracy among the k nearest training points.

    Distances use training-standardized features with zero-variance columns
    dropped. Classification scores are Laplace-smoothed local accuracies,
    regression scores are negative local RMSE; weights are softmax(score / T).
    """

    def __init__(self, train_data: Dataset, local_terms: np.ndarray, config: DLAConfig = DLAConfig()):
        local_terms = np.asarray(local_terms, dtype=np.float64)
        if config.k > train_data.n:
            raise ArgumentError(f"DLA k={config.k} exceeds the {train_data.n} training rows.")
        if local_terms.ndim != 2 or local_terms.shape[0] != train_data.n or local_terms.shape[1] < 1:
            raise ArgumentError(f"Local terms must be n x m with n={train_data.n}, got {local_terms.shape}.")
        self.config = config
        self.task = train_data.task
        self.local_terms = local_terms
        scale = train_data.features.std(axis=0)
        self.keep = scale > 0
        if not np.any(self.keep):
            logger.warning("Every training feature is constant; DLA neighbourhoods fall back to index order")
        self.mean = train_data.features.mean(axis=0)[self.keep]
        self.scale = scale[self.keep]
        self.reference = self._standardize(train_data.features)

    @classmethod
    def from_predictors(cls, train_data: Dataset, predictors: Sequence[BasePredictor],
                        config: DLAConfig = DLAConfig()) -> "DynamicLocalAccuracy":
        """Correctness flags (classification) or squared residuals (regression) on the training rows."""
        if not predictors:
            raise ArgumentError("DLA needs at least one predictor.")
        if train_data.task is Task.CLASSIFICATION:
            terms = [(p.predict(train_data.features) == train_data.labels).astype(np.float64) for p in predictors]
        else:
            terms = [(p.training_predictions(train_data) - train_data.labels) ** 2 for p in predictors]
        return cls(train_data, np.column_stack(terms), config)

    def _standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if not np.any(self.keep):
            return np.zeros((X.shape[0], 1))
        return (X[:, self.keep] - self.mean) / self.scale

    def local_scores(self, X: np.ndarray) -> np.ndarray:
        index, _ = nearest_neighbors(self.reference, self._standardize(X), self.config.k)
        neighbourhood = self.local_terms[index]  # q x k x m
        if self.task is Task.CLASSIFICATION:
            s = self.config.smoothing
            return (neighbourhood.sum(axis=1) + s) / (self.config.k + 2.0 * s)
        return -np.sqrt(neighbourhood.mean(axis=1))

    def weight_matrix(self, X: np.ndarray) -> np.ndarray:
        scores = self.local_scores(X)
        if self.config.temperature <= HARD_TEMPERATURE:
            hard = np.zeros_like(scores)
            hard[np.arange(scores.shape[0]), np.argmax(scores, axis=1)] = 1.0
            return hard
        return softmax_rows(scores / self.config.temperature)

    def weights(self, x) -> SimplexWeights:
        return SimplexWeights(self.weight_matrix(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def weights_dla(train_data: Dataset, train_table: LikelihoodTable, x, k: int, temperature: float,
                smoothing: float, predictors: Optional[Sequence[BasePredictor]] = None) -> SimplexWeights:
    """
    DLA weights at a single query.

    Without ``predictors``, a binary classification row counts as correct when
    the model gives the true label probability above 0.5. Regression needs the
    predictors for residuals.
    """
    config = DLAConfig(k=k, temperature=temperature, smoothing=smoothing)
    if predictors is not None:
        return DynamicLocalAccuracy.from_predictors(train_data, predictors, config).weights(x)
    if train_data.task is not Task.CLASSIFICATION:
        raise ArgumentError("Regression DLA needs the fitted predictors for residuals.")
    correct = (train_table.loglik > np.log(0.5)).astype(np.float64)
    return DynamicLocalAccuracy(train_data, correct, config).weights(x)


def constant_weight_matrix(weights: SimplexWeights, n: int) -> np.ndarray:
    return np.tile(weights.weights, (n, 1))
