"""
Shared value types and numerically stable primitives.

All reals are float64. Probability vectors are validated against a 1e-9
tolerance: drift inside the tolerance is renormalized, anything beyond it is
rejected with ``SimplexError``. Log-probabilities are clamped to ``LOG_FLOOR``
before they are stored so that no table entry is ever -inf.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .exceptions import ArgumentError, SimplexError

logger = logging.getLogger(__name__)

LOG_FLOOR = -30.0
SIMPLEX_TOL = 1e-9


class Task(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def clamp_log(values) -> np.ndarray:
    """Clamp log-probabilities from below at ``LOG_FLOOR``."""
    arr = np.asarray(values, dtype=np.float64)
    return np.maximum(np.nan_to_num(arr, nan=LOG_FLOOR, neginf=LOG_FLOOR), LOG_FLOOR)


def validate_simplex(values, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Return a float64 copy of ``values`` on the simplex, or raise ``SimplexError``."""
    weights = np.array(values, dtype=np.float64).reshape(-1)
    if weights.size == 0:
        raise SimplexError("Simplex weights must have at least one entry.")
    if not np.all(np.isfinite(weights)):
        raise SimplexError(f"Simplex weights must be finite, got {weights.tolist()}.")
    if np.any(weights < -tol):
        raise SimplexError(f"Simplex weights must be nonnegative, got min {weights.min():.3e}.")
    total = weights.sum()
    if abs(total - 1.0) > tol:
        raise SimplexError(f"Simplex weights must sum to 1 (within {tol}), got {total!r}.")
    weights = np.clip(weights, 0.0, None)
    return weights / weights.sum()


@dataclass(frozen=True)
class SimplexWeights:
    """A length-m probability vector (alpha(x), prior masses, posterior outputs)."""

    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(validate_simplex(self.weights)))

    @property
    def m(self) -> int:
        return int(self.weights.size)

    def argmax(self) -> int:
        # np.argmax returns the first maximal index
        return int(np.argmax(self.weights))

    def tolist(self) -> list[float]:
        return self.weights.tolist()

    def __len__(self) -> int:
        return self.m

    def __getitem__(self, j: int) -> float:
        return float(self.weights[j])


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus labels; region tags are carried for analysis only."""

    features: np.ndarray
    labels: np.ndarray
    task: Task
    regions: Optional[np.ndarray] = None
    feature_names: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise ArgumentError(f"Features must be an n x d matrix with n, d >= 1, got shape {features.shape}.")
        task = Task(self.task)
        n = features.shape[0]

        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] != n:
            raise ArgumentError(f"Expected {n} labels, got shape {labels.shape}.")
        if task is Task.CLASSIFICATION:
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise ArgumentError("Classification labels must be integer class indices.")
            labels = labels.astype(np.int64)
            if labels.min() < 0:
                raise ArgumentError("Classification labels must be nonnegative class indices.")
        else:
            labels = labels.astype(np.float64)
            if not np.all(np.isfinite(labels)):
                raise ArgumentError("Regression labels must be finite.")

        regions = None
        if self.regions is not None:
            regions = np.array(self.regions, dtype=np.int64)
            if regions.shape != (n,):
                raise ArgumentError(f"Region tags must have length {n}, got shape {regions.shape}.")
            regions = _frozen(regions)

        feature_names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(features.shape[1]))
        if len(feature_names) != features.shape[1]:
            raise ArgumentError("feature_names must name every feature column.")

        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "task", task)
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "feature_names", feature_names)
        object.__setattr__(self, "class_names", tuple(self.class_names))

        if task is Task.CLASSIFICATION and self.class_names and int(labels.max()) >= len(self.class_names):
            raise ArgumentError("Classification labels exceed the declared class names.")

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        if self.task is not Task.CLASSIFICATION:
            return 0
        return max(len(self.class_names), int(self.labels.max()) + 1, 2)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            features=self.features[index],
            labels=self.labels[index],
            task=self.task,
            regions=None if self.regions is None else self.regions[index],
            feature_names=self.feature_names,
            class_names=self.class_names,
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(
            features=features,
            labels=self.labels,
            task=self.task,
            regions=self.regions,
            feature_names=self.feature_names,
            class_names=self.class_names,
        )


@dataclass(frozen=True)
class LikelihoodTable:
    """Per-example, per-model log f_j(y_i | x_i), floored at ``LOG_FLOOR``."""

    loglik: np.ndarray
    model_names: tuple[str, ...]
    task: Optional[Task] = None

    def __post_init__(self):
        loglik = np.array(self.loglik, dtype=np.float64)
        if loglik.ndim != 2 or loglik.shape[0] < 1 or loglik.shape[1] < 1:
            raise ArgumentError(f"Log-likelihood table must be n x m, got shape {loglik.shape}.")
        if not np.all(np.isfinite(loglik)):
            raise ArgumentError("Log-likelihood table entries must be finite.")
        names = tuple(self.model_names)
        if len(names) != loglik.shape[1]:
            raise ArgumentError(f"Expected {loglik.shape[1]} model names, got {len(names)}.")
        task = None if self.task is None else Task(self.task)
        if task is Task.CLASSIFICATION and np.any(loglik > SIMPLEX_TOL):
            raise ArgumentError("Classification log-probabilities must not exceed 0.")
        object.__setattr__(self, "loglik", _frozen(loglik))
        object.__setattr__(self, "model_names", names)
        object.__setattr__(self, "task", task)

    @property
    def n(self) -> int:
        return int(self.loglik.shape[0])

    @property
    def m(self) -> int:
        return int(self.loglik.shape[1])

    def column_totals(self) -> np.ndarray:
        return self.loglik.sum(axis=0)


@dataclass(frozen=True)
class MixturePrediction:
    """Ensemble predictive distribution sum_j alpha_j(x) f_j(y | x), row by row."""

    weights: np.ndarray
    mixture_loglik: np.ndarray
    model_names: tuple[str, ...] = ()
    class_probs: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.weights.shape[0])

    def row_weights(self, i: int) -> SimplexWeights:
        return SimplexWeights(self.weights[i])

    def predicted_labels(self) -> np.ndarray:
        if self.class_probs is None:
            raise ArgumentError("Predicted labels are only defined for classification mixtures.")
        return np.argmax(self.class_probs, axis=1)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def log_sum_exp(values: Sequence[float]) -> float:
    """log(sum(exp(v))) with max subtraction."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ArgumentError("log_sum_exp needs at least one value.")
    if np.any(np.isnan(arr)):
        raise ArgumentError("log_sum_exp got NaN input.")
    if not np.any(np.isfinite(arr)):
        raise ArgumentError("log_sum_exp needs at least one finite value.")
    if arr.size == 1:
        return float(arr[0])
    return float(logsumexp(arr))


def softmax(energies: Sequence[float]) -> SimplexWeights:
    """exp(e_j - lse(e)) as validated simplex weights."""
    arr = np.asarray(energies, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ArgumentError("softmax needs at least one energy.")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"softmax needs finite energies, got {arr.tolist()}.")
    return SimplexWeights(np.exp(arr - log_sum_exp(arr)))


def softmax_rows(energies: np.ndarray) -> np.ndarray:
    """Row-wise softmax of an n x m matrix."""
    arr = np.asarray(energies, dtype=np.float64)
    if arr.ndim != 2:
        raise ArgumentError(f"softmax_rows expects a matrix, got shape {arr.shape}.")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError("softmax_rows needs finite energies.")
    return np.exp(arr - logsumexp(arr, axis=1, keepdims=True))


def mixture_loglik(weights: SimplexWeights, row_logliks: Sequence[float]) -> float:
    """log sum_j w_j exp(l_j); zero-weight components are skipped."""
    if not isinstance(weights, SimplexWeights):
        weights = SimplexWeights(weights)
    logliks = np.asarray(row_logliks, dtype=np.float64).reshape(-1)
    if logliks.size != weights.m:
        raise ArgumentError(f"Got {weights.m} weights but {logliks.size} log-likelihoods.")
    active = weights.weights > 0
    return log_sum_exp(np.log(weights.weights[active]) + logliks[active])


def mixture_loglik_rows(weights: np.ndarray, loglik: np.ndarray) -> np.ndarray:
    """Vectorized ``mixture_loglik`` over the rows of two n x m matrices."""
    weights = np.asarray(weights, dtype=np.float64)
    loglik = np.asarray(loglik, dtype=np.float64)
    if weights.shape != loglik.shape:
        raise ArgumentError(f"Weight matrix {weights.shape} does not match table {loglik.shape}.")
    with np.errstate(divide="ignore"):
        terms = np.where(weights > 0, np.log(weights) + loglik, -np.inf)
    return logsumexp(terms, axis=1)


def validate_weight_matrix(weights, m: Optional[int] = None) -> np.ndarray:
    """Validate every row of an n x m weight matrix as simplex weights."""
    matrix = np.array(weights, dtype=np.float64)
    if matrix.ndim != 2:
        raise ArgumentError(f"Weight matrix must be 2-D, got shape {matrix.shape}.")
    if m is not None and matrix.shape[1] != m:
        raise ArgumentError(f"Weight matrix has {matrix.shape[1]} columns, expected {m}.")
    for i, row in enumerate(matrix):
        try:
            matrix[i] = validate_simplex(row)
        except SimplexError as exc:
            raise SimplexError(f"Row {i}: {exc}") from exc
    return matrix


def mixture_prediction(
    weights: np.ndarray,
    table: LikelihoodTable,
    component_probs: Optional[np.ndarray] = None,
    component_means: Optional[np.ndarray] = None,
) -> MixturePrediction:
    """
    Combine per-model outputs with per-row weights.

    ``component_probs`` is n x m x C (classification); ``component_means`` is
    n x m (regression). The mixture log-likelihood always comes from the table.
    """
    weights = validate_weight_matrix(weights, m=table.m)
    if weights.shape[0] != table.n:
        raise ArgumentError(f"Weight matrix has {weights.shape[0]} rows, table has {table.n}.")

    class_probs = None
    mean = None
    if component_probs is not None:
        component_probs = np.asarray(component_probs, dtype=np.float64)
        if component_probs.shape[:2] != weights.shape:
            raise ArgumentError("Component class probabilities must be n x m x C.")
        class_probs = np.einsum("nm,nmc->nc", weights, component_probs)
        class_probs = class_probs / class_probs.sum(axis=1, keepdims=True)
    if component_means is not None:
        component_means = np.asarray(component_means, dtype=np.float64)
        if component_means.shape != weights.shape:
            raise ArgumentError("Component means must be n x m.")
        mean = np.einsum("nm,nm->n", weights, component_means)

    return MixturePrediction(
        weights=_frozen(weights),
        mixture_loglik=_frozen(mixture_loglik_rows(weights, table.loglik)),
        model_names=table.model_names,
        class_probs=class_probs,
        mean=mean,
    )


def nearest_neighbors(reference: np.ndarray, queries: np.ndarray, k: int, exclude_self: bool = False,
                      chunk_size: int = 1024):
    """
    Indices and Euclidean distances of the ``k`` nearest reference rows per query.

    Ties are broken by the lower reference index. With ``exclude_self`` the
    queries must be the reference rows themselves and row i never counts
    itself as a neighbour.
    """
    reference = np.asarray(reference, dtype=np.float64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if reference.ndim != 2 or queries.shape[1] != reference.shape[1]:
        raise ArgumentError(f"Query width {queries.shape[1]} does not match reference {reference.shape}.")
    available = reference.shape[0] - (1 if exclude_self else 0)
    if not 1 <= k <= available:
        raise ArgumentError(f"k must be in [1, {available}], got {k}.")

    index = np.empty((queries.shape[0], k), dtype=np.int64)
    distance = np.empty((queries.shape[0], k), dtype=np.float64)
    for start in range(0, queries.shape[0], chunk_size):
        block = cdist(queries[start:start + chunk_size], reference)
        if exclude_self:
            rows = np.arange(block.shape[0])
            block[rows, start + rows] = np.inf
        order = np.argsort(block, axis=1, kind="stable")[:, :k]
        index[start:start + chunk_size] = order
        distance[start:start + chunk_size] = np.take_along_axis(block, order, axis=1)
    return index, distance
