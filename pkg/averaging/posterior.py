"""
Amortized variational posterior q_theta(J=j; x).

A small ReLU network maps an input to simplex weights over the candidate
models. It is trained by minibatch Adam on the mean ELBO

    sum_j q_j l_j - lambda_kl * sum_j q_j log(q_j / p_j)

with the per-row log-likelihoods l and priors p precomputed. Gradients are
analytic (backprop through softmax, affine layers and rectifiers); the same
optimizer loop also trains the mixture-of-experts gate in ``baselines``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import log_softmax, logsumexp, softmax as softmax_axis, xlogy

from .core import Dataset, LikelihoodTable, SimplexWeights, validate_weight_matrix
from .exceptions import ArgumentError, DataFormatError, TrainingError

logger = logging.getLogger(__name__)

HIDDEN_LAYERS = (64, 32, 16)
PRIOR_FLOOR = 1e-300
NET_FORMAT = "iabma.posterior_net"
NET_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    lambda_kl: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ArgumentError(f"learning_rate must be > 0, got {self.learning_rate}.")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}.")
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}.")
        if self.lambda_kl < 0:
            raise ArgumentError(f"lambda_kl must be >= 0, got {self.lambda_kl}.")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ArgumentError("Adam moments need 0 <= beta < 1 and epsilon > 0.")

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "TrainConfig":
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    logits: np.ndarray


class PosteriorNet:
    """Feed-forward gate d -> 64 -> 32 -> 16 -> m with ReLU hidden layers and softmax output."""

    def __init__(self, input_dim: int, num_models: int, hidden: Sequence[int] = HIDDEN_LAYERS,
                 seed: int = 0, zero_output: bool = True):
        if input_dim < 1 or num_models < 1:
            raise ArgumentError(f"Network needs input_dim >= 1 and num_models >= 1, got {input_dim}, {num_models}.")
        self.layer_sizes = (int(input_dim), *(int(h) for h in hidden), int(num_models))
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        last = len(self.layer_sizes) - 2
        for layer, (fan_in, fan_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            if layer == last and zero_output:
                self.weights.append(np.zeros((fan_in, fan_out)))
                self.biases.append(np.zeros(fan_out))
                continue
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_models(self) -> int:
        return self.layer_sizes[-1]

    @staticmethod
    def count_parameters(layer_sizes: Sequence[int]) -> int:
        return int(sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:])))

    @property
    def parameter_count(self) -> int:
        return self.count_parameters(self.layer_sizes)

    def parameters(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.parameter_count:
            raise ArgumentError(f"Expected {self.parameter_count} parameters, got {flat.size}.")
        offset = 0
        for param in self.parameters():
            param[...] = flat[offset:offset + param.size].reshape(param.shape)
            offset += param.size

    def _check_inputs(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise ArgumentError(f"Network expects {self.input_dim} features, got {X.shape[1]}.")
        return X

    def forward_cache(self, X) -> ForwardCache:
        activation = self._check_inputs(X)
        inputs, pre_activations = [], []
        last = len(self.weights) - 1
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(activation)
            z = activation @ W + b
            if layer == last:
                return ForwardCache(inputs=inputs, pre_activations=pre_activations, logits=z)
            pre_activations.append(z)
            activation = np.maximum(z, 0.0)

    def logits(self, X) -> np.ndarray:
        return self.forward_cache(X).logits

    def forward_batch(self, X) -> np.ndarray:
        return softmax_axis(self.logits(X), axis=1)

    def forward(self, x) -> SimplexWeights:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ArgumentError(f"forward takes one feature vector, got shape {x.shape}.")
        return SimplexWeights(self.forward_batch(x)[0])

    def backward(self, cache: ForwardCache, grad_logits: np.ndarray) -> List[np.ndarray]:
        """Gradients (same order as ``parameters``) given d objective / d logits."""
        grads: List[np.ndarray] = []
        delta = grad_logits
        for layer in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(cache.inputs[layer].T @ delta)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (cache.pre_activations[layer - 1] > 0)
        grads.reverse()
        return grads

    def to_dict(self, config: Optional[TrainConfig] = None) -> Dict[str, Any]:
        return {
            "format": NET_FORMAT,
            "version": NET_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "seed": self.seed,
            "config": config.to_dict() if config else {},
        }

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "PosteriorNet":
        if document.get("format") != NET_FORMAT or document.get("version") != NET_VERSION:
            raise DataFormatError(
                f"Unsupported network document: format={document.get('format')!r} version={document.get('version')!r}"
            )
        sizes = document["layer_sizes"]
        net = cls(sizes[0], sizes[-1], hidden=sizes[1:-1], seed=document.get("seed", 0))
        for layer, (W, b) in enumerate(zip(document["weights"], document["biases"])):
            W, b = np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)
            if W.shape != net.weights[layer].shape or b.shape != net.biases[layer].shape:
                raise DataFormatError(f"Layer {layer} parameters do not match layer_sizes {sizes}.")
            net.weights[layer], net.biases[layer] = W, b
        return net


def save_posterior_net(net: PosteriorNet, path, config: Optional[TrainConfig] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(net.to_dict(config)), encoding="utf-8")
    return path


def load_posterior_net(path) -> PosteriorNet:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"Cannot read network document {path}: {exc}") from exc
    return PosteriorNet.from_dict(document)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

@dataclass
class ObjectiveTerms:
    value: np.ndarray
    grad_logits: np.ndarray
    kl: np.ndarray
    loglik: np.ndarray


def elbo(q, row_logliks: Sequence[float], prior, lambda_kl: float) -> float:
    """sum_j q_j l_j - lambda_kl * KL(q || prior); 0 log 0 = 0, prior floored at 1e-300."""
    q = q if isinstance(q, SimplexWeights) else SimplexWeights(q)
    prior = prior if isinstance(prior, SimplexWeights) else SimplexWeights(prior)
    logliks = np.asarray(row_logliks, dtype=np.float64).reshape(-1)
    if not (q.m == prior.m == logliks.size):
        raise ArgumentError(f"elbo needs equal lengths, got q={q.m}, prior={prior.m}, logliks={logliks.size}.")
    if lambda_kl < 0:
        raise ArgumentError(f"lambda_kl must be >= 0, got {lambda_kl}.")
    return float(q.weights @ logliks - lambda_kl * kl_divergence(q, prior))


def kl_divergence(q, prior) -> float:
    q = q if isinstance(q, SimplexWeights) else SimplexWeights(q)
    prior = prior if isinstance(prior, SimplexWeights) else SimplexWeights(prior)
    p = np.maximum(prior.weights, PRIOR_FLOOR)
    return float(np.sum(xlogy(q.weights, q.weights) - xlogy(q.weights, p)))


class ElboObjective:
    """Row-wise ELBO on logits z, with q = softmax(z)."""

    name = "elbo"

    def __init__(self, loglik: np.ndarray, priors: np.ndarray, lambda_kl: float):
        self.loglik = np.asarray(loglik, dtype=np.float64)
        self.log_prior = np.log(np.maximum(np.asarray(priors, dtype=np.float64), PRIOR_FLOOR))
        self.lambda_kl = float(lambda_kl)

    def __call__(self, logits: np.ndarray, index: np.ndarray) -> ObjectiveTerms:
        log_q = log_softmax(logits, axis=1)
        q = np.exp(log_q)
        loglik = self.loglik[index]
        log_ratio = log_q - self.log_prior[index]
        expected = np.sum(q * loglik, axis=1)
        kl = np.sum(q * log_ratio, axis=1)
        # d/dq_j of the row ELBO; the +1 from d(q log q) cancels under the softmax Jacobian
        g = loglik - self.lambda_kl * log_ratio
        grad = q * (g - np.sum(q * g, axis=1, keepdims=True))
        return ObjectiveTerms(value=expected - self.lambda_kl * kl, grad_logits=grad, kl=kl, loglik=expected)


class MixtureObjective:
    """Row-wise induced log-likelihood log sum_j g_j(x) exp(l_j) of a gate with frozen experts."""

    name = "mixture_loglik"

    def __init__(self, loglik: np.ndarray):
        self.loglik = np.asarray(loglik, dtype=np.float64)

    def __call__(self, logits: np.ndarray, index: np.ndarray) -> ObjectiveTerms:
        log_g = log_softmax(logits, axis=1)
        joint = log_g + self.loglik[index]
        value = logsumexp(joint, axis=1)
        responsibility = np.exp(joint - value[:, None])
        grad = responsibility - np.exp(log_g)
        return ObjectiveTerms(value=value, grad_logits=grad, kl=np.zeros_like(value), loglik=value)


Objective = Callable[[np.ndarray, np.ndarray], ObjectiveTerms]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam ascent on a list of parameter arrays, updated in place."""

    def __init__(self, params: Sequence[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.moments = [np.zeros_like(p) for p in params]
        self.velocities = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
        self.t += 1
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        correction1 = 1.0 - b1 ** self.t
        correction2 = 1.0 - b2 ** self.t
        for param, grad, m, v in zip(params, grads, self.moments, self.velocities):
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            param += self.cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.cfg.epsilon)


@dataclass
class TrainingTrace:
    epochs: List[int] = field(default_factory=list)
    mean_elbo: List[float] = field(default_factory=list)
    mean_kl: List[float] = field(default_factory=list)
    mean_loglik: List[float] = field(default_factory=list)

    def append(self, epoch: int, terms: ObjectiveTerms):
        self.epochs.append(epoch)
        self.mean_elbo.append(float(np.mean(terms.value)))
        self.mean_kl.append(float(np.mean(terms.kl)))
        self.mean_loglik.append(float(np.mean(terms.loglik)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "epoch": self.epochs,
            "mean_elbo": self.mean_elbo,
            "mean_kl": self.mean_kl,
            "mean_loglik": self.mean_loglik,
        })


def optimize(net: PosteriorNet, X: np.ndarray, objective: Objective, cfg: TrainConfig,
             label: str = "posterior") -> TrainingTrace:
    """
    Minibatch Adam ascent of the mean objective over the rows of X.

    Rows are reshuffled every epoch from a generator seeded with ``cfg.seed``.
    The trace holds full-data means evaluated after each epoch.
    """
    X = net._check_inputs(X)
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(net.parameters(), cfg)
    trace = TrainingTrace()
    all_rows = np.arange(n)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for batch, start in enumerate(range(0, n, cfg.batch_size)):
            index = order[start:start + cfg.batch_size]
            cache = net.forward_cache(X[index])
            terms = objective(cache.logits, index)
            if not (np.all(np.isfinite(terms.value)) and np.all(np.isfinite(terms.grad_logits))):
                raise TrainingError(f"{label}: non-finite objective at epoch {epoch}, batch {batch}.")
            grads = net.backward(cache, terms.grad_logits / len(index))
            optimizer.step(net.parameters(), grads)

        terms = objective(net.logits(X), all_rows)
        if not np.all(np.isfinite(terms.value)):
            raise TrainingError(f"{label}: non-finite objective after epoch {epoch}.")
        trace.append(epoch, terms)
        logger.debug(f"{label} epoch {epoch}: mean objective {trace.mean_elbo[-1]:.6f}")

    logger.info(f"Trained {label} for {cfg.epochs} epochs: final mean objective {trace.mean_elbo[-1]:.6f}")
    return trace


def _aligned_priors(priors, n: int, m: int) -> np.ndarray:
    if len(priors) and isinstance(priors[0], SimplexWeights):
        priors = np.vstack([p.weights for p in priors])
    priors = validate_weight_matrix(priors, m=m)
    if priors.shape[0] != n:
        raise ArgumentError(f"Got {priors.shape[0]} prior rows for {n} data rows.")
    return priors


def train(net: PosteriorNet, data: Dataset, table: LikelihoodTable, priors, cfg: TrainConfig
          ) -> Tuple[PosteriorNet, TrainingTrace]:
    """Fit ``net`` in place by maximizing the mean ELBO; returns the net and its per-epoch trace."""
    if table.n != data.n:
        raise ArgumentError(f"Table has {table.n} rows, data has {data.n}.")
    if table.m != net.num_models:
        raise ArgumentError(f"Table has {table.m} models, network outputs {net.num_models}.")
    priors = _aligned_priors(priors, data.n, table.m)
    objective = ElboObjective(table.loglik, priors, cfg.lambda_kl)
    trace = optimize(net, data.features, objective, cfg, label="IA-BMA posterior")
    return net, trace


def assign_weights(net: PosteriorNet, x) -> SimplexWeights:
    return net.forward(x)


def assign_weight_matrix(net: PosteriorNet, X) -> np.ndarray:
    return validate_weight_matrix(net.forward_batch(X), m=net.num_models)


def grad_check(net: PosteriorNet, X: np.ndarray, objective: Objective, step: float = 1e-5,
               coordinates: Optional[Sequence[int]] = None) -> float:
    """
    Max relative error between the analytic gradient of the mean objective and
    central finite differences, over the given flat parameter coordinates
    (all of them by default).
    """
    X = net._check_inputs(X)
    index = np.arange(X.shape[0])
    cache = net.forward_cache(X)
    terms = objective(cache.logits, index)
    analytic = np.concatenate([g.ravel() for g in net.backward(cache, terms.grad_logits / X.shape[0])])

    coordinates = range(net.parameter_count) if coordinates is None else list(coordinates)
    base = net.get_flat()
    worst = 0.0
    try:
        for c in coordinates:
            shifted = base.copy()
            shifted[c] = base[c] + step
            net.set_flat(shifted)
            upper = float(np.mean(objective(net.logits(X), index).value))
            shifted[c] = base[c] - step
            net.set_flat(shifted)
            lower = float(np.mean(objective(net.logits(X), index).value))
            numeric = (upper - lower) / (2.0 * step)
            denominator = max(abs(analytic[c]), abs(numeric), 1e-6)
            worst = max(worst, abs(analytic[c] - numeric) / denominator)
    finally:
        net.set_flat(base)
    return worst
