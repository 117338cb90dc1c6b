"""
Input-adaptive energy prior p(J=j | x_1..x_n, x).

The energy of model j is the sum of per-point energies over the training
covariates plus the energy at the query. The mean scale divides that sum by
the number of points in it. Discrete tasks sum the clamped log-probabilities
over every class; continuous tasks average the unit-variance Normal
log-density over a Monte-Carlo sample of outcomes that is drawn once and
shared by every point and model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit, log_expit
from scipy.stats import norm

from .core import Dataset, SimplexWeights, Task, softmax, softmax_rows
from .exceptions import ArgumentError, TaskError
from .predictors import BaseClassifier, BasePredictor, BaseRegressor

logger = logging.getLogger(__name__)

DEFAULT_MC_SAMPLES = 64
TOTALS_RTOL = 1e-9


class EnergyMode(str, Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


class PriorScale(str, Enum):
    SUM = "sum"
    MEAN = "mean"


def _as_row(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(1, -1)


def point_energy_discrete(predictor: BasePredictor, x, num_classes: int = 2) -> float:
    """sum_y log p(y | x, f_j) over all classes, each term clamped."""
    if not isinstance(predictor, BaseClassifier):
        raise TaskError(f"{predictor.name} is not a classifier; discrete energy is undefined.")
    if num_classes < 2:
        raise ArgumentError(f"num_classes must be >= 2, got {num_classes}.")
    logp = predictor.log_proba(_as_row(x))[0]
    if logp.size != num_classes:
        raise ArgumentError(f"{predictor.name} has {logp.size} classes, expected {num_classes}.")
    return float(logp.sum())


def point_energy_continuous(predictor: BasePredictor, x, samples: Sequence[float]) -> float:
    """(1/K) sum_k log N(y_k; y_hat(x), 1)."""
    if not isinstance(predictor, BaseRegressor):
        raise TaskError(f"{predictor.name} is not a regressor; continuous energy is undefined.")
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        raise ArgumentError("Continuous energy needs at least one outcome sample.")
    y_hat = float(predictor.predict(_as_row(x))[0])
    return float(np.mean(norm.logpdf(samples, loc=y_hat, scale=1.0)))


def energy_matrix(predictors: Sequence[BasePredictor], X: np.ndarray, mode: EnergyMode,
                  samples: Optional[np.ndarray] = None, num_classes: int = 2) -> np.ndarray:
    """Per-point energies for every row of X and every predictor (n x m)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    columns = []
    for predictor in predictors:
        if mode is EnergyMode.DISCRETE:
            if not isinstance(predictor, BaseClassifier):
                raise TaskError(f"{predictor.name} is not a classifier; discrete energy is undefined.")
            logp = predictor.log_proba(X)
            if logp.shape[1] != num_classes:
                raise ArgumentError(f"{predictor.name} has {logp.shape[1]} classes, expected {num_classes}.")
            columns.append(logp.sum(axis=1))
        else:
            if not isinstance(predictor, BaseRegressor):
                raise TaskError(f"{predictor.name} is not a regressor; continuous energy is undefined.")
            y_hat = predictor.predict(X)
            columns.append(norm.logpdf(samples[None, :], loc=y_hat[:, None], scale=1.0).mean(axis=1))
    return np.column_stack(columns)


def draw_mc_samples(y_min: float, y_max: float, num_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> np.ndarray:
    """Uniform outcome samples on [y_min, y_max] from a seeded PCG64 stream."""
    if num_samples < 1:
        raise ArgumentError(f"Monte-Carlo sample count must be >= 1, got {num_samples}.")
    if not y_min < y_max:
        raise ArgumentError(f"Integration range needs y_min < y_max, got [{y_min}, {y_max}].")
    return np.random.default_rng(seed).uniform(y_min, y_max, size=num_samples)


def default_integration_range(labels: np.ndarray) -> Tuple[float, float]:
    """[min - std, max + std] of the training labels."""
    labels = np.asarray(labels, dtype=np.float64)
    spread = float(labels.std()) or 1.0
    return float(labels.min()) - spread, float(labels.max()) + spread


@dataclass(frozen=True)
class EnergyCache:
    energies: np.ndarray
    totals: np.ndarray
    mode: EnergyMode
    model_names: Tuple[str, ...] = ()
    num_classes: int = 2
    samples: Optional[np.ndarray] = None
    y_min: Optional[float] = None
    y_max: Optional[float] = None
    seed: Optional[int] = None
    scale: PriorScale = PriorScale.SUM
    predictors: Tuple[BasePredictor, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        energies = np.array(self.energies, dtype=np.float64)
        totals = np.array(self.totals, dtype=np.float64)
        if energies.ndim != 2 or totals.shape != (energies.shape[1],):
            raise ArgumentError(f"Energies {energies.shape} and totals {totals.shape} do not align.")
        if not np.allclose(totals, energies.sum(axis=0), rtol=TOTALS_RTOL, atol=0.0):
            raise ArgumentError("Energy totals must equal the column sums of the per-point energies.")
        mode = EnergyMode(self.mode)
        if mode is EnergyMode.CONTINUOUS:
            if self.samples is None or len(self.samples) < 1:
                raise ArgumentError("Continuous energy cache needs at least one outcome sample.")
            if not self.y_min < self.y_max:
                raise ArgumentError(f"Integration range needs y_min < y_max, got [{self.y_min}, {self.y_max}].")
            samples = np.array(self.samples, dtype=np.float64)
            samples.setflags(write=False)
            object.__setattr__(self, "samples", samples)
        energies.setflags(write=False)
        totals.setflags(write=False)
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "totals", totals)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "scale", PriorScale(self.scale))
        object.__setattr__(self, "model_names", tuple(self.model_names))
        object.__setattr__(self, "predictors", tuple(self.predictors))

    def exponent(self, energies: np.ndarray, points: int) -> np.ndarray:
        """Prior logits for energies summed over ``points`` covariates."""
        return energies / points if self.scale is PriorScale.MEAN else energies

    @property
    def n(self) -> int:
        return int(self.energies.shape[0])

    @property
    def m(self) -> int:
        return int(self.energies.shape[1])

    def query_energies(self, X: np.ndarray) -> np.ndarray:
        """Per-point energies of new inputs, using the cache's predictors and shared samples."""
        if not self.predictors:
            raise ArgumentError("This energy cache was built without predictors.")
        return energy_matrix(self.predictors, X, self.mode, samples=self.samples, num_classes=self.num_classes)


def build_energy_cache(predictors: Sequence[BasePredictor], train: Dataset,
                       num_samples: int = DEFAULT_MC_SAMPLES,
                       y_range: Optional[Tuple[float, float]] = None,
                       seed: int = 0,
                       scale: PriorScale = PriorScale.SUM) -> EnergyCache:
    """Evaluate every predictor's energy at every training covariate."""
    if not predictors:
        raise ArgumentError("The energy prior needs at least one predictor.")
    names = tuple(p.name for p in predictors)
    if train.task is Task.CLASSIFICATION:
        energies = energy_matrix(predictors, train.features, EnergyMode.DISCRETE, num_classes=train.num_classes)
        cache = EnergyCache(
            energies=energies,
            totals=energies.sum(axis=0),
            mode=EnergyMode.DISCRETE,
            model_names=names,
            num_classes=train.num_classes,
            scale=PriorScale(scale),
            predictors=tuple(predictors),
        )
    else:
        y_min, y_max = y_range or default_integration_range(train.labels)
        samples = draw_mc_samples(y_min, y_max, num_samples, seed)
        energies = energy_matrix(predictors, train.features, EnergyMode.CONTINUOUS, samples=samples)
        cache = EnergyCache(
            energies=energies,
            totals=energies.sum(axis=0),
            mode=EnergyMode.CONTINUOUS,
            model_names=names,
            num_classes=0,
            samples=samples,
            y_min=y_min,
            y_max=y_max,
            seed=seed,
            scale=PriorScale(scale),
            predictors=tuple(predictors),
        )
    logger.info(
        f"Built {cache.mode.value} {cache.scale.value}-scale energy cache over {cache.n} points for {cache.m} models"
    )
    return cache


def _check_width(cache: EnergyCache, width: int):
    if width != cache.m:
        raise ArgumentError(f"Expected {cache.m} query energies, got {width}.")


def adaptive_prior(cache: EnergyCache, query_energies: Sequence[float]) -> SimplexWeights:
    """softmax_j(totals_j + query_energy_j), over n + 1 points for the mean scale."""
    query_energies = np.asarray(query_energies, dtype=np.float64).reshape(-1)
    _check_width(cache, query_energies.size)
    return softmax(cache.exponent(cache.totals + query_energies, cache.n + 1))


def adaptive_prior_rows(cache: EnergyCache, query_energies: np.ndarray) -> np.ndarray:
    query_energies = np.atleast_2d(np.asarray(query_energies, dtype=np.float64))
    _check_width(cache, query_energies.shape[1])
    return softmax_rows(cache.exponent(cache.totals[None, :] + query_energies, cache.n + 1))


def _check_index(cache: EnergyCache, i: int):
    if not 0 <= i < cache.n:
        raise ArgumentError(f"Training index {i} outside [0, {cache.n}).")


def loo_prior(cache: EnergyCache, i: int) -> SimplexWeights:
    """
    Leave-one-out prior at training point i.

    Dropping point i from the training term and adding it back as the query
    cancel, so this is softmax(totals) for every i.
    """
    _check_index(cache, i)
    return softmax(cache.exponent(cache.totals, cache.n))


def loo_prior_recomputed(cache: EnergyCache, i: int) -> SimplexWeights:
    """``loo_prior`` without the cancellation: re-sum the n-1 remaining points, then add the query."""
    _check_index(cache, i)
    remaining = np.delete(cache.energies, i, axis=0).sum(axis=0)
    return softmax(cache.exponent(remaining + cache.energies[i], cache.n))


def loo_priors(cache: EnergyCache) -> np.ndarray:
    """n x m matrix of training-row priors."""
    return np.tile(softmax(cache.exponent(cache.totals, cache.n)).weights, (cache.n, 1))


# ---------------------------------------------------------------------------
# two-model Bernoulli example
# ---------------------------------------------------------------------------

def bernoulli_energy(beta, x):
    """log sigma(beta x) + log(1 - sigma(beta x))."""
    z = np.multiply(beta, x)
    return log_expit(z) + log_expit(-z)


def bernoulli_demo(beta1: float, beta2: float, baseline_logodds: float, x_grid: Sequence[float]) -> pd.DataFrame:
    """p(J=1 | ., x) for two logistic models sigma(beta1 x), sigma(beta2 x) over a grid of x."""
    x = np.asarray(x_grid, dtype=np.float64).reshape(-1)
    params = np.array([beta1, beta2, baseline_logodds], dtype=np.float64)
    if not np.all(np.isfinite(params)) or not np.all(np.isfinite(x)):
        raise ArgumentError("Bernoulli demo parameters and grid must be finite.")
    logodds = baseline_logodds + bernoulli_energy(beta1, x) - bernoulli_energy(beta2, x)
    return pd.DataFrame({"x": x, "p_j1": expit(logodds)})


def x_grid(x_min: float, x_max: float, steps: int) -> np.ndarray:
    if steps < 2 or not x_min < x_max:
        raise ArgumentError(f"Grid needs x_min < x_max and steps >= 2, got [{x_min}, {x_max}] x {steps}.")
    return np.linspace(x_min, x_max, steps)
