"""
Desk-scale base predictors and the log-likelihood table they feed.

Classifiers: polynomial logistic regression, LDA, soft-circle.
Regressors: ridge, distance-weighted kNN.

Every predictor can be written to and read back from a versioned JSON
document, so fitting and evaluation can run as separate command invocations.
"""

from __future__ import annotations

import inspect
import json
import logging
from abc import ABC, abstractmethod
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit, logsumexp
from scipy.stats import norm
from sklearn.preprocessing import PolynomialFeatures

from .core import Dataset, LikelihoodTable, Task, clamp_log, nearest_neighbors
from .exceptions import ArgumentError, DataFormatError, FitError, TaskError

logger = logging.getLogger(__name__)

PREDICTORS_FORMAT = "iabma.predictors"
PREDICTORS_VERSION = 1

GRAD_TOL = 1e-6
MAX_ITER = 500
SIGMA_FLOOR = 1e-3
LDA_JITTER = 1e-6
KNN_EPS = 1e-12


class PredictorKind(str, Enum):
    POLY_LOGREG = "poly_logreg"
    LDA = "lda"
    SOFT_CIRCLE = "soft_circle"
    RIDGE = "ridge"
    KNN_REG = "knn_reg"


class BasePredictor(ABC):
    """A fixed candidate model f_j producing a predictive distribution over y."""

    kind: PredictorKind
    task: Task

    def __init__(self, name: Optional[str] = None):
        self.name = name or self.kind.value
        self.fitted = False
        self.fit_warnings: List[str] = []

    def _check_fitted(self):
        if not self.fitted:
            raise ArgumentError(f"Predictor {self.name} is not fitted.")

    def _check_task(self, data: Dataset):
        if data.task is not self.task:
            raise TaskError(f"{self.name} is a {self.task.value} model, got {data.task.value} data.")

    @abstractmethod
    def log_density(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """log f(y_i | x_i), clamped at the core floor."""

    def training_log_density(self, data: Dataset) -> np.ndarray:
        return self.log_density(data.features, data.labels)

    @abstractmethod
    def get_params(self) -> Dict[str, Any]:
        """JSON-serializable fitted parameters."""

    @classmethod
    @abstractmethod
    def from_params(cls, name: str, params: Dict[str, Any]) -> "BasePredictor":
        """Rebuild a fitted predictor from ``get_params`` output."""

    def to_dict(self) -> Dict[str, Any]:
        self._check_fitted()
        return {
            "kind": self.kind.value,
            "name": self.name,
            "task": self.task.value,
            "params": self.get_params(),
            "sigma": getattr(self, "sigma", None),
        }

    def __repr__(self):
        return f"{self.__class__.__name__}(name={self.name!r})"


class BaseClassifier(BasePredictor):
    task = Task.CLASSIFICATION
    num_classes = 2

    @abstractmethod
    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """n x C class probabilities."""

    def log_proba(self, X: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return clamp_log(np.log(self.predict_proba(X)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def log_density(self, X, y) -> np.ndarray:
        logp = self.log_proba(X)
        y = np.asarray(y, dtype=np.int64)
        if y.size and (y.min() < 0 or y.max() >= logp.shape[1]):
            raise ArgumentError(f"Labels outside 0..{logp.shape[1] - 1} for {self.name}.")
        return clamp_log(logp[np.arange(len(y)), y])


class BaseRegressor(BasePredictor):
    task = Task.REGRESSION

    def __init__(self, name: Optional[str] = None):
        super().__init__(name)
        self.sigma: Optional[float] = None

    @abstractmethod
    def predict(self, X: np.ndarray) -> np.ndarray:
        """Point predictions y_hat(x)."""

    def training_predictions(self, data: Dataset) -> np.ndarray:
        return self.predict(data.features)

    def _set_sigma(self, data: Dataset):
        residuals = data.labels - self.training_predictions(data)
        rmse = float(np.sqrt(np.mean(residuals ** 2)))
        self.sigma = max(rmse, SIGMA_FLOOR)

    def _normal_logpdf(self, y, y_hat) -> np.ndarray:
        return clamp_log(norm.logpdf(np.asarray(y, dtype=np.float64), loc=y_hat, scale=self.sigma))

    def log_density(self, X, y) -> np.ndarray:
        self._check_fitted()
        return self._normal_logpdf(y, self.predict(X))

    def training_log_density(self, data: Dataset) -> np.ndarray:
        self._check_fitted()
        return self._normal_logpdf(data.labels, self.training_predictions(data))


def _check_finite_features(X: np.ndarray):
    if np.any(np.isnan(X)):
        raise ArgumentError("Features contain NaN.")


def _binary_labels(data: Dataset, who: str) -> np.ndarray:
    if data.task is not Task.CLASSIFICATION:
        raise TaskError(f"{who} needs classification data, got {data.task.value}.")
    if data.num_classes != 2:
        raise TaskError(f"{who} needs binary labels, got {data.num_classes} classes.")
    return data.labels.astype(np.float64)


# ---------------------------------------------------------------------------
# polynomial logistic regression
# ---------------------------------------------------------------------------

class PolyLogisticRegression(BaseClassifier):
    """
    Logistic regression on all monomials of degree 1..``degree``.

    The expansion has no bias column; the linear model keeps an unpenalized
    intercept. Expanded features are standardized with training statistics
    and the coefficients carry a tiny ridge penalty (``l2``) so separable
    data still yields a finite optimum. Fitting is damped Newton (IRLS),
    stopping at gradient norm ``GRAD_TOL`` or ``MAX_ITER`` iterations.
    """

    kind = PredictorKind.POLY_LOGREG

    def __init__(self, degree: int = 2, l2: float = 1e-6, name: Optional[str] = None):
        if degree not in (1, 2, 3):
            raise ArgumentError(f"Polynomial degree must be 1, 2 or 3, got {degree}.")
        super().__init__(name or f"poly_logreg_d{degree}")
        self.degree = degree
        self.l2 = l2
        self.input_dim: Optional[int] = None
        self.feature_mean: Optional[np.ndarray] = None
        self.feature_scale: Optional[np.ndarray] = None
        self.coef: Optional[np.ndarray] = None
        self.intercept: float = 0.0
        self.n_iter = 0
        self.converged = False

    @classmethod
    def from_coefficients(cls, coef: Sequence[float], intercept: float = 0.0, degree: int = 1,
                          input_dim: int = 1, name: Optional[str] = None) -> "PolyLogisticRegression":
        """A logistic model with given coefficients on the raw expansion (no standardization)."""
        model = cls(degree=degree, name=name)
        model.input_dim = input_dim
        model.coef = np.asarray(coef, dtype=np.float64)
        width = model._expander().n_output_features_
        if model.coef.shape != (width,):
            raise ArgumentError(f"Expected {width} coefficients, got {model.coef.shape}.")
        model.feature_mean = np.zeros(width)
        model.feature_scale = np.ones(width)
        model.intercept = float(intercept)
        model.fitted = True
        model.converged = True
        return model

    def _expander(self) -> PolynomialFeatures:
        expander = PolynomialFeatures(degree=self.degree, include_bias=False)
        expander.fit(np.zeros((1, self.input_dim)))
        return expander

    def _design(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.input_dim:
            raise ArgumentError(f"{self.name} expects {self.input_dim} features, got {X.shape[1]}.")
        expanded = self._expander().transform(X)
        return (expanded - self.feature_mean) / self.feature_scale

    def _logits(self, X: np.ndarray) -> np.ndarray:
        self._check_fitted()
        return self._design(X) @ self.coef + self.intercept

    def fit(self, data: Dataset) -> "PolyLogisticRegression":
        y = _binary_labels(data, self.name)
        _check_finite_features(data.features)
        self.input_dim = data.d
        expanded = self._expander().transform(data.features)
        if data.n <= expanded.shape[1]:
            raise ArgumentError(
                f"{self.name} needs more rows than expanded features ({data.n} <= {expanded.shape[1]})."
            )
        self.feature_mean = expanded.mean(axis=0)
        scale = expanded.std(axis=0)
        self.feature_scale = np.where(scale > 0, scale, 1.0)
        A = np.hstack([np.ones((data.n, 1)), (expanded - self.feature_mean) / self.feature_scale])

        penalty = np.full(A.shape[1], self.l2)
        penalty[0] = 0.0

        def objective(w):
            a = A @ w
            return float(np.mean(y * log_expit(a) + (1 - y) * log_expit(-a)) - 0.5 * np.sum(penalty * w * w))

        w = np.zeros(A.shape[1])
        value = objective(w)
        self.converged = False
        for iteration in range(1, MAX_ITER + 1):
            p = expit(A @ w)
            grad = A.T @ (y - p) / data.n - penalty * w
            if np.linalg.norm(grad) <= GRAD_TOL:
                self.converged = True
                self.n_iter = iteration - 1
                break
            hessian = (A.T * (p * (1 - p))) @ A / data.n + np.diag(penalty) + 1e-10 * np.eye(A.shape[1])
            try:
                step = np.linalg.solve(hessian, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hessian, grad, rcond=None)[0]
            t = 1.0
            while t > 1e-10:
                candidate = w + t * step
                candidate_value = objective(candidate)
                if candidate_value >= value:
                    break
                t *= 0.5
            else:
                self.n_iter = iteration
                break
            w, value = candidate, candidate_value
            self.n_iter = iteration

        if not self.converged:
            message = f"{self.name}: no convergence after {self.n_iter} iterations, returning best iterate"
            self.fit_warnings.append(message)
            logger.warning(message)

        self.intercept = float(w[0])
        self.coef = w[1:]
        self.fitted = True
        logger.info(f"Fitted {self.name} in {self.n_iter} iterations (converged={self.converged})")
        return self

    def predict_proba(self, X) -> np.ndarray:
        p1 = expit(self._logits(X))
        return np.column_stack([1.0 - p1, p1])

    def log_proba(self, X) -> np.ndarray:
        a = self._logits(X)
        return clamp_log(np.column_stack([log_expit(-a), log_expit(a)]))

    def get_params(self):
        return {
            "degree": self.degree,
            "l2": self.l2,
            "input_dim": self.input_dim,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
        }

    @classmethod
    def from_params(cls, name, params):
        model = cls(degree=params["degree"], l2=params["l2"], name=name)
        model.input_dim = params["input_dim"]
        model.feature_mean = np.asarray(params["feature_mean"], dtype=np.float64)
        model.feature_scale = np.asarray(params["feature_scale"], dtype=np.float64)
        model.coef = np.asarray(params["coef"], dtype=np.float64)
        model.intercept = float(params["intercept"])
        model.fitted = True
        return model


# ---------------------------------------------------------------------------
# linear discriminant analysis
# ---------------------------------------------------------------------------

class LinearDiscriminant(BaseClassifier):
    """Gaussian class conditionals with a shared covariance and empirical priors."""

    kind = PredictorKind.LDA

    def __init__(self, name: Optional[str] = None):
        super().__init__(name)
        self.coef: Optional[np.ndarray] = None
        self.intercept: Optional[np.ndarray] = None

    def fit(self, data: Dataset) -> "LinearDiscriminant":
        _binary_labels(data, self.name)
        _check_finite_features(data.features)
        X, y = data.features, data.labels
        counts = np.bincount(y, minlength=2)
        if np.any(counts < 2):
            raise FitError(f"{self.name} needs at least 2 samples per class, got counts {counts.tolist()}.")

        means = np.vstack([X[y == c].mean(axis=0) for c in range(2)])
        centered = X - means[y]
        covariance = centered.T @ centered / (data.n - 2)
        precision = self._invert(covariance, data.d)

        priors = counts / data.n
        self.coef = means @ precision
        self.intercept = np.log(priors) - 0.5 * np.einsum("cd,cd->c", self.coef, means)
        self.fitted = True
        logger.info(f"Fitted {self.name} with class priors {priors.round(4).tolist()}")
        return self

    def _invert(self, covariance: np.ndarray, d: int) -> np.ndarray:
        try:
            np.linalg.cholesky(covariance)
            if np.linalg.cond(covariance) < 1e12:
                return np.linalg.inv(covariance)
        except np.linalg.LinAlgError:
            pass
        message = f"{self.name}: pooled covariance is singular, adding {LDA_JITTER}*I"
        self.fit_warnings.append(message)
        logger.warning(message)
        jittered = covariance + LDA_JITTER * np.eye(d)
        try:
            np.linalg.cholesky(jittered)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"{self.name}: pooled covariance is singular after jitter.") from exc
        return np.linalg.inv(jittered)

    def _scores(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.coef.shape[1]:
            raise ArgumentError(f"{self.name} expects {self.coef.shape[1]} features, got {X.shape[1]}.")
        return X @ self.coef.T + self.intercept

    def log_proba(self, X) -> np.ndarray:
        scores = self._scores(X)
        return clamp_log(scores - logsumexp(scores, axis=1, keepdims=True))

    def predict_proba(self, X) -> np.ndarray:
        scores = self._scores(X)
        return np.exp(scores - logsumexp(scores, axis=1, keepdims=True))

    def get_params(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept.tolist()}

    @classmethod
    def from_params(cls, name, params):
        model = cls(name=name)
        model.coef = np.asarray(params["coef"], dtype=np.float64)
        model.intercept = np.asarray(params["intercept"], dtype=np.float64)
        model.fitted = True
        return model


# ---------------------------------------------------------------------------
# soft circle
# ---------------------------------------------------------------------------

def _soft_circle_margin(X, center, radius, gamma) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != 2:
        raise ArgumentError(f"Soft-circle inputs must be 2-D, got {X.shape[1]} features.")
    if gamma <= 0:
        raise ArgumentError(f"Soft-circle gamma must be positive, got {gamma}.")
    distance = np.linalg.norm(X - np.asarray(center, dtype=np.float64), axis=1)
    return gamma * (radius - distance)


def eval_soft_circle(x, center, radius: float, gamma: float) -> float:
    """sigma(gamma * (R - ||x - c||)) for a single 2-D input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2,):
        raise ArgumentError(f"Soft-circle input must be a 2-vector, got shape {x.shape}.")
    return float(expit(_soft_circle_margin(x, center, radius, gamma))[0])


class SoftCircle(BaseClassifier):
    """Fixed-parameter classifier: positive inside a soft disc around ``center``."""

    kind = PredictorKind.SOFT_CIRCLE

    def __init__(self, center=(0.8, 0.0), radius: float = 1.0, gamma: float = 5.0, name: Optional[str] = None):
        if gamma <= 0:
            raise ArgumentError(f"Soft-circle gamma must be positive, got {gamma}.")
        super().__init__(name or f"soft_circle_g{gamma:g}")
        self.center = np.asarray(center, dtype=np.float64)
        if self.center.shape != (2,):
            raise ArgumentError("Soft-circle center must be a 2-vector.")
        self.radius = float(radius)
        self.gamma = float(gamma)
        self.fitted = True

    def fit(self, data: Dataset) -> "SoftCircle":
        _binary_labels(data, self.name)
        return self

    def predict_proba(self, X) -> np.ndarray:
        p1 = expit(_soft_circle_margin(X, self.center, self.radius, self.gamma))
        return np.column_stack([1.0 - p1, p1])

    def log_proba(self, X) -> np.ndarray:
        a = _soft_circle_margin(X, self.center, self.radius, self.gamma)
        return clamp_log(np.column_stack([log_expit(-a), log_expit(a)]))

    def get_params(self):
        return {"center": self.center.tolist(), "radius": self.radius, "gamma": self.gamma}

    @classmethod
    def from_params(cls, name, params):
        return cls(center=params["center"], radius=params["radius"], gamma=params["gamma"], name=name)


# ---------------------------------------------------------------------------
# regressors
# ---------------------------------------------------------------------------

class RidgeRegressor(BaseRegressor):
    """Penalized least squares with an unpenalized intercept; Normal(y_hat, sigma^2) density."""

    kind = PredictorKind.RIDGE

    def __init__(self, alpha: float = 0.05, name: Optional[str] = None):
        if alpha < 0:
            raise ArgumentError(f"Ridge alpha must be >= 0, got {alpha}.")
        super().__init__(name or f"ridge_a{alpha:g}")
        self.alpha = float(alpha)
        self.coef: Optional[np.ndarray] = None
        self.intercept = 0.0

    def fit(self, data: Dataset) -> "RidgeRegressor":
        self._check_task(data)
        _check_finite_features(data.features)
        X, y = data.features, data.labels
        x_mean, y_mean = X.mean(axis=0), y.mean()
        Xc, yc = X - x_mean, y - y_mean
        gram = Xc.T @ Xc + self.alpha * np.eye(data.d)
        try:
            self.coef = np.linalg.solve(gram, Xc.T @ yc)
        except np.linalg.LinAlgError:
            self.coef = np.linalg.lstsq(gram, Xc.T @ yc, rcond=None)[0]
        self.intercept = float(y_mean - x_mean @ self.coef)
        self.fitted = True
        self._set_sigma(data)
        logger.info(f"Fitted {self.name}: sigma={self.sigma:.4g}")
        return self

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        _check_finite_features(X)
        return X @ self.coef + self.intercept

    def get_params(self):
        return {"alpha": self.alpha, "coef": self.coef.tolist(), "intercept": self.intercept}

    @classmethod
    def from_params(cls, name, params):
        model = cls(alpha=params["alpha"], name=name)
        model.coef = np.asarray(params["coef"], dtype=np.float64)
        model.intercept = float(params["intercept"])
        model.fitted = True
        return model


class KNNRegressor(BaseRegressor):
    """
    Inverse-distance-weighted mean of the k nearest training labels.

    Predictions on the training set itself leave the query row out of its own
    neighbourhood; sigma and the training log-likelihoods use those
    leave-one-out predictions.
    """

    kind = PredictorKind.KNN_REG

    def __init__(self, k: int = 3, name: Optional[str] = None):
        super().__init__(name or f"knn_reg_k{k}")
        if k < 1:
            raise ArgumentError(f"k must be >= 1, got {k}.")
        self.k = int(k)
        self.train_features: Optional[np.ndarray] = None
        self.train_labels: Optional[np.ndarray] = None

    def fit(self, data: Dataset) -> "KNNRegressor":
        self._check_task(data)
        _check_finite_features(data.features)
        if self.k > data.n:
            raise ArgumentError(f"k={self.k} exceeds the {data.n} training rows.")
        self.train_features = np.array(data.features)
        self.train_labels = np.array(data.labels)
        self.fitted = True
        self._set_sigma(data)
        logger.info(f"Fitted {self.name}: sigma={self.sigma:.4g}")
        return self

    def _weighted_mean(self, index: np.ndarray, distance: np.ndarray) -> np.ndarray:
        weights = 1.0 / (distance + KNN_EPS)
        return np.sum(weights * self.train_labels[index], axis=1) / weights.sum(axis=1)

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        _check_finite_features(X)
        index, distance = nearest_neighbors(self.train_features, X, self.k)
        return self._weighted_mean(index, distance)

    def training_predictions(self, data: Dataset) -> np.ndarray:
        n = self.train_features.shape[0]
        if n < 2 or data.n != n or not np.array_equal(data.features, self.train_features):
            return self.predict(data.features)
        k = min(self.k, n - 1)
        index, distance = nearest_neighbors(self.train_features, self.train_features, k, exclude_self=True)
        return self._weighted_mean(index, distance)

    def get_params(self):
        return {
            "k": self.k,
            "train_features": self.train_features.tolist(),
            "train_labels": self.train_labels.tolist(),
        }

    @classmethod
    def from_params(cls, name, params):
        model = cls(k=params["k"], name=name)
        model.train_features = np.asarray(params["train_features"], dtype=np.float64)
        model.train_labels = np.asarray(params["train_labels"], dtype=np.float64)
        model.fitted = True
        return model


PREDICTOR_CLASSES = {
    PredictorKind.POLY_LOGREG: PolyLogisticRegression,
    PredictorKind.LDA: LinearDiscriminant,
    PredictorKind.SOFT_CIRCLE: SoftCircle,
    PredictorKind.RIDGE: RidgeRegressor,
    PredictorKind.KNN_REG: KNNRegressor,
}


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------

def fit_poly_logreg(data: Dataset, degree: int) -> PolyLogisticRegression:
    return PolyLogisticRegression(degree=degree).fit(data)


def fit_lda(data: Dataset) -> LinearDiscriminant:
    return LinearDiscriminant().fit(data)


def fit_ridge(data: Dataset, alpha: float) -> RidgeRegressor:
    return RidgeRegressor(alpha=alpha).fit(data)


def fit_knn_reg(data: Dataset, k: int) -> KNNRegressor:
    return KNNRegressor(k=k).fit(data)


def build_predictor(spec: Dict[str, Any]) -> BasePredictor:
    """Instantiate (unfitted) a predictor from a roster entry such as ``{"kind": "ridge", "alpha": 0.05}``."""
    params = dict(spec)
    try:
        kind = PredictorKind(params.pop("kind"))
    except (KeyError, ValueError) as exc:
        raise ArgumentError(f"Unknown predictor spec {spec!r}.") from exc
    cls = PREDICTOR_CLASSES[kind]
    accepted = set(inspect.signature(cls.__init__).parameters) - {"self"}
    unknown = sorted(set(params) - accepted)
    if unknown:
        raise ArgumentError(f"{kind.value} does not take {unknown}; expected a subset of {sorted(accepted)}.")
    return cls(**params)


def fit_roster(specs: Iterable[Dict[str, Any]], data: Dataset) -> List[BasePredictor]:
    predictors = [build_predictor(spec).fit(data) for spec in specs]
    names = [p.name for p in predictors]
    if len(set(names)) != len(names):
        raise ArgumentError(f"Predictor names must be unique, got {names}.")
    return predictors


def default_roster(task: Task, offset: float = 1.0) -> List[Dict[str, Any]]:
    """Simulation roster for classification, desk-scale roster for regression."""
    if Task(task) is Task.CLASSIFICATION:
        center = [0.8 * offset, 0.0]
        return [
            {"kind": "poly_logreg", "degree": 2},
            {"kind": "poly_logreg", "degree": 3},
            {"kind": "lda"},
            {"kind": "soft_circle", "center": center, "radius": 1.0, "gamma": 5.0},
            {"kind": "soft_circle", "center": center, "radius": 1.0, "gamma": 4.0},
        ]
    return [
        {"kind": "ridge", "alpha": 0.05},
        {"kind": "knn_reg", "k": 3},
        {"kind": "knn_reg", "k": 10},
    ]


def loglik_table(predictors: Sequence[BasePredictor], data: Dataset, training: bool = False) -> LikelihoodTable:
    """
    Entry (i, j) = log f_j(y_i | x_i), clamped at the core floor.

    With ``training=True`` instance-based predictors use leave-one-out
    predictions for their own training rows.
    """
    if not predictors:
        raise ArgumentError("loglik_table needs at least one predictor.")
    columns = []
    for predictor in predictors:
        if predictor.task is not data.task:
            raise ArgumentError(f"{predictor.name} is a {predictor.task.value} model, data is {data.task.value}.")
        predictor._check_fitted()
        if training:
            columns.append(predictor.training_log_density(data))
        else:
            columns.append(predictor.log_density(data.features, data.labels))
    return LikelihoodTable(
        loglik=np.column_stack(columns),
        model_names=tuple(p.name for p in predictors),
        task=data.task,
    )


def component_outputs(predictors: Sequence[BasePredictor], data: Dataset) -> np.ndarray:
    """n x m x C class probabilities (classification) or n x m means (regression)."""
    if data.task is Task.CLASSIFICATION:
        return np.stack([p.predict_proba(data.features) for p in predictors], axis=1)
    return np.column_stack([p.predict(data.features) for p in predictors])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def predictor_from_dict(payload: Dict[str, Any]) -> BasePredictor:
    try:
        kind = PredictorKind(payload["kind"])
        model = PREDICTOR_CLASSES[kind].from_params(payload["name"], payload["params"])
    except (KeyError, ValueError, TypeError) as exc:
        raise DataFormatError(f"Malformed predictor entry: {exc}") from exc
    if payload.get("sigma") is not None:
        model.sigma = float(payload["sigma"])
    return model


def dump_predictors(predictors: Sequence[BasePredictor], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "format": PREDICTORS_FORMAT,
        "version": PREDICTORS_VERSION,
        "predictors": [p.to_dict() for p in predictors],
    }
    path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    return path


def load_predictors(path) -> List[BasePredictor]:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"Cannot read predictors document {path}: {exc}") from exc
    if document.get("format") != PREDICTORS_FORMAT or document.get("version") != PREDICTORS_VERSION:
        raise DataFormatError(
            f"Unsupported predictors document: format={document.get('format')!r} version={document.get('version')!r}"
        )
    return [predictor_from_dict(entry) for entry in document["predictors"]]
