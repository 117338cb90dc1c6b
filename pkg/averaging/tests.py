"""
Tests for the averaging core: primitives, base predictors, the energy prior,
the amortized posterior, the comparison methods, metrics and data handling.

Test Categories:
1. Core primitives - log-sum-exp, softmax, mixtures, value types
2. Predictors - fitting, likelihood tables, serialization
3. Prior - point energies, caches, leave-one-out, Bernoulli example
4. Posterior - network, ELBO, training, gradient checks
5. Baselines - constant weights, MoE gate, DLA
6. Metrics - accuracy, ECE, RMSE/R^2, confidence bins, guarantee check
7. Data - simulation, CSV ingestion, splits
"""

import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.special import expit

from .baselines import (
    DLAConfig,
    DynamicLocalAccuracy,
    fit_moe,
    weights_accuracy,
    weights_best_single,
    weights_bma,
    weights_dla,
    weights_uniform,
)
from .core import (
    Dataset,
    LikelihoodTable,
    SimplexWeights,
    Task,
    log_sum_exp,
    mixture_loglik,
    mixture_prediction,
    nearest_neighbors,
    softmax,
    validate_simplex,
)
from .data import (
    CsvSchema,
    SimulationConfig,
    Standardizer,
    label_circular,
    label_linear,
    load_csv,
    simulate_two_region,
    split,
    write_csv,
)
from .exceptions import ArgumentError, DataFormatError, FitError, SchemaError, SimplexError, TaskError
from .metrics import accuracy, confidence_bin_errors, ece, rmse_r2, theorem1_check
from .posterior import (
    ElboObjective,
    MixtureObjective,
    PosteriorNet,
    TrainConfig,
    assign_weight_matrix,
    assign_weights,
    elbo,
    grad_check,
    kl_divergence,
    train,
)
from .predictors import (
    PolyLogisticRegression,
    RidgeRegressor,
    SoftCircle,
    build_predictor,
    default_roster,
    dump_predictors,
    eval_soft_circle,
    fit_knn_reg,
    fit_lda,
    fit_poly_logreg,
    fit_ridge,
    fit_roster,
    load_predictors,
    loglik_table,
)
from .prior import (
    EnergyCache,
    EnergyMode,
    PriorScale,
    adaptive_prior,
    bernoulli_demo,
    bernoulli_energy,
    build_energy_cache,
    draw_mc_samples,
    loo_prior,
    loo_prior_recomputed,
    loo_priors,
    point_energy_continuous,
    point_energy_discrete,
)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def logistic(beta, intercept=0.0, name=None):
    return PolyLogisticRegression.from_coefficients([beta], intercept=intercept, name=name)


def constant_regressor(value, sigma=1.0, name="constant"):
    model = RidgeRegressor.from_params(name, {"alpha": 0.0, "coef": [0.0], "intercept": value})
    model.sigma = sigma
    return model


def regression_data(features, labels):
    return Dataset(features=np.asarray(features, dtype=float), labels=labels, task=Task.REGRESSION)


def classification_data(features, labels):
    return Dataset(features=np.asarray(features, dtype=float), labels=labels, task=Task.CLASSIFICATION)


def bernoulli_p1(beta1, beta2=1.0, baseline=math.log(5), x=1.0):
    """Closed-form P(J=1 | x) for two logistic experts, written out independently."""
    def energy(beta):
        z = beta * x
        return -math.log1p(math.exp(-z)) - math.log1p(math.exp(z))
    return 1.0 / (1.0 + math.exp(-(baseline + energy(beta1) - energy(beta2))))


class SimulatedRosterMixin:
    """Fits the default classification roster once on a reduced simulation."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.train_data, cls.test_data = simulate_two_region(SimulationConfig(n_train=300, n_test=100, seed=3))
        cls.predictors = fit_roster(default_roster(Task.CLASSIFICATION, offset=1.0), cls.train_data)
        cls.train_table = loglik_table(cls.predictors, cls.train_data, training=True)
        cls.test_table = loglik_table(cls.predictors, cls.test_data)


# ============================================================================
# CORE PRIMITIVES
# ============================================================================

class LogSumExpTestCase(SimpleTestCase):
    """log_sum_exp and softmax stability"""

    def test_symmetric_pair(self):
        self.assertAlmostEqual(log_sum_exp([0.0, 0.0]), math.log(2), places=12)

    def test_single_value_is_exact(self):
        for x in (-745.0, -3.25, 0.0, 17.5, 1e300):
            self.assertEqual(log_sum_exp([x]), x)

    def test_no_overflow(self):
        self.assertAlmostEqual(log_sum_exp([1000.0, 1000.0]), 1000.0 + math.log(2), places=9)

    def test_empty_input_rejected(self):
        with self.assertRaises(ArgumentError):
            log_sum_exp([])

    def test_bounded_below_by_max(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            values = rng.normal(0, 50, size=rng.integers(1, 8))
            self.assertGreaterEqual(log_sum_exp(values), values.max())

    def test_softmax_examples(self):
        np.testing.assert_allclose(softmax([0, 0, 0]).weights, [1 / 3] * 3, atol=1e-15)
        np.testing.assert_allclose(softmax([math.log(5), 0]).weights, [5 / 6, 1 / 6], atol=1e-12)

    def test_softmax_extreme_gap(self):
        weights = softmax([-1000.0, 0.0]).weights
        self.assertFalse(np.any(np.isnan(weights)))
        self.assertLess(weights[0], 1e-300)
        self.assertEqual(weights[1], 1.0)

    def test_softmax_rejects_nan(self):
        with self.assertRaises(ArgumentError):
            softmax([0.0, float("nan")])

    def test_softmax_shift_invariance(self):
        """Requirement: adding a constant to every energy leaves the weights unchanged"""
        rng = np.random.default_rng(1)
        for _ in range(50):
            energies = rng.normal(0, 5, size=4)
            shift = rng.normal(0, 100)
            np.testing.assert_allclose(softmax(energies).weights, softmax(energies + shift).weights, atol=1e-12)


class MixtureTestCase(SimpleTestCase):
    """mixture_loglik and the pointwise single-term bound"""

    def test_one_hot_selects_component(self):
        self.assertEqual(mixture_loglik(SimplexWeights([1.0, 0.0]), [-0.5, -99.0]), -0.5)

    def test_arithmetic_mean_of_probabilities(self):
        value = mixture_loglik(SimplexWeights([0.5, 0.5]), [math.log(0.2), math.log(0.6)])
        self.assertAlmostEqual(value, math.log(0.4), places=12)

    def test_constant_mixture(self):
        value = mixture_loglik(SimplexWeights([1 / 3, 1 / 3, 1 / 3]), [-1.7, -1.7, -1.7])
        self.assertAlmostEqual(value, -1.7, places=12)

    def test_dimension_mismatch(self):
        with self.assertRaises(ArgumentError):
            mixture_loglik(SimplexWeights([0.5, 0.5]), [-1.0, -2.0, -3.0])

    def test_pointwise_bound_holds(self):
        """log sum_j w_j exp(l_j) >= log w_k + l_k for every k"""
        rng = np.random.default_rng(2)
        for _ in range(500):
            m = rng.integers(1, 6)
            weights = SimplexWeights(rng.dirichlet(np.ones(m)))
            logliks = rng.uniform(-30, 0, size=m)
            value = mixture_loglik(weights, logliks)
            for k in range(m):
                self.assertGreaterEqual(value, math.log(weights[k]) + logliks[k] - 1e-12)

    def test_mixture_prediction_rows_are_distributions(self):
        rng = np.random.default_rng(3)
        weights = rng.dirichlet(np.ones(3), size=5)
        probs = rng.dirichlet(np.ones(2), size=(5, 3))
        labels = rng.integers(0, 2, size=5)
        table = LikelihoodTable(np.log(probs[np.arange(5), :, labels]), ("a", "b", "c"))
        prediction = mixture_prediction(weights, table, component_probs=probs)
        np.testing.assert_allclose(prediction.class_probs.sum(axis=1), 1.0, atol=1e-12)
        expected = np.log(np.einsum("nm,nm->n", weights, probs[np.arange(5), :, labels]))
        np.testing.assert_allclose(prediction.mixture_loglik, expected, atol=1e-12)


class ValueTypesTestCase(SimpleTestCase):
    """Validation of SimplexWeights, Dataset and LikelihoodTable"""

    def test_simplex_drift_within_tolerance_renormalized(self):
        weights = validate_simplex([0.5, 0.5 + 5e-10])
        self.assertAlmostEqual(weights.sum(), 1.0, places=15)

    def test_simplex_beyond_tolerance_rejected(self):
        with self.assertRaises(SimplexError):
            SimplexWeights([0.75, 0.75])
        with self.assertRaises(SimplexError):
            SimplexWeights([1.2, -0.2])
        with self.assertRaises(SimplexError):
            SimplexWeights([])

    def test_simplex_argmax_ties_lowest(self):
        self.assertEqual(SimplexWeights([0.4, 0.4, 0.2]).argmax(), 0)

    def test_dataset_validation(self):
        with self.assertRaises(ArgumentError):
            classification_data([[0.0], [1.0]], [0])
        with self.assertRaises(ArgumentError):
            classification_data([[0.0], [1.0]], [0.5, 1])
        with self.assertRaises(ArgumentError):
            Dataset(features=[[0.0], [1.0]], labels=[0, 1], task=Task.CLASSIFICATION, regions=[0])

    def test_dataset_is_immutable(self):
        data = classification_data([[0.0], [1.0]], [0, 1])
        with self.assertRaises(ValueError):
            data.features[0, 0] = 5.0

    def test_table_rejects_positive_class_logprob(self):
        with self.assertRaises(ArgumentError):
            LikelihoodTable([[0.1, -1.0]], ("a", "b"), task=Task.CLASSIFICATION)
        with self.assertRaises(ArgumentError):
            LikelihoodTable([[-np.inf, -1.0]], ("a", "b"))

    def test_nearest_neighbors_ties_lowest_index(self):
        index, distance = nearest_neighbors(np.array([[0.0], [1.0], [-1.0]]), np.array([[0.0]]), 2)
        np.testing.assert_array_equal(index, [[0, 1]])
        np.testing.assert_array_equal(distance, [[0.0, 1.0]])

    def test_nearest_neighbors_excludes_self(self):
        reference = np.array([[0.0], [0.1], [5.0]])
        index, _ = nearest_neighbors(reference, reference, 1, exclude_self=True)
        np.testing.assert_array_equal(index.ravel(), [1, 0, 1])


# ============================================================================
# PREDICTORS
# ============================================================================

class PolyLogisticTestCase(SimpleTestCase):
    """Polynomial logistic regression"""

    def test_symmetric_boundary(self):
        x = np.concatenate([-np.linspace(0.01, 1, 100), np.linspace(0.01, 1, 100)])
        data = classification_data(x.reshape(-1, 1), (x > 0).astype(int))
        model = fit_poly_logreg(data, degree=1)
        p = model.predict_proba(np.array([[0.0]]))[0, 1]
        self.assertGreaterEqual(p, 0.4)
        self.assertLessEqual(p, 0.6)

    def test_degree_two_at_least_as_accurate_as_linear(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(300, 2))
        X = X[np.abs(X.sum(axis=1)) > 0.2]
        labels = (X.sum(axis=1) > 0).astype(int)
        data = classification_data(X, labels)
        linear = fit_poly_logreg(data, degree=1)
        quadratic = fit_poly_logreg(data, degree=2)
        acc_linear = np.mean(linear.predict(X) == labels)
        acc_quadratic = np.mean(quadratic.predict(X) == labels)
        self.assertGreaterEqual(acc_quadratic, acc_linear)

    def test_constant_labels(self):
        X = np.linspace(-2, 2, 50).reshape(-1, 1)
        model = fit_poly_logreg(classification_data(X, np.ones(50, dtype=int)), degree=2)
        self.assertTrue(np.all(model.predict_proba(X)[:, 1] >= 0.99))

    def test_invalid_degree_and_task(self):
        with self.assertRaises(ArgumentError):
            PolyLogisticRegression(degree=4)
        with self.assertRaises(TaskError):
            fit_poly_logreg(regression_data([[0.0], [1.0], [2.0]], [0.0, 1.0, 2.0]), degree=1)
        with self.assertRaises(TaskError):
            fit_poly_logreg(classification_data([[0.0], [1.0], [2.0], [3.0]], [0, 1, 2, 0]), degree=1)

    def test_too_few_rows(self):
        with self.assertRaises(ArgumentError):
            fit_poly_logreg(classification_data([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]], [0, 1, 1]), degree=3)

    def test_rows_are_distributions(self):
        model = logistic(2.5, intercept=-0.3)
        probs = model.predict_proba(np.linspace(-50, 50, 101).reshape(-1, 1))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        self.assertTrue(np.all(probs >= 0))


class LinearDiscriminantTestCase(SimpleTestCase):
    """LDA with pooled covariance"""

    def test_midpoint_boundary(self):
        rng = np.random.default_rng(5)
        X = np.concatenate([rng.normal(-1, 1, 5000), rng.normal(1, 1, 5000)]).reshape(-1, 1)
        labels = np.repeat([0, 1], 5000)
        model = fit_lda(classification_data(X, labels))
        probs = model.predict_proba(np.array([[-0.05], [0.05]]))[:, 1]
        self.assertLess(probs[0], 0.5)
        self.assertGreater(probs[1], 0.5)

    def test_single_class_is_fit_error(self):
        with self.assertRaises(FitError):
            fit_lda(classification_data(np.arange(10.0).reshape(-1, 1), np.zeros(10, dtype=int)))

    def test_equal_means_give_priors(self):
        rng = np.random.default_rng(6)
        X = rng.normal(0, 1, size=(10000, 1))
        labels = np.concatenate([np.zeros(7000, dtype=int), np.ones(3000, dtype=int)])
        model = fit_lda(classification_data(X, labels))
        probs = model.predict_proba(np.linspace(-2, 2, 21).reshape(-1, 1))[:, 1]
        np.testing.assert_allclose(probs, 0.3, atol=0.05)

    def test_linear_boundary_direction(self):
        """Moving along the boundary direction never changes the predicted class"""
        rng = np.random.default_rng(7)
        X = np.vstack([rng.normal([-1, 0], 0.5, (200, 2)), rng.normal([1, 1], 0.5, (200, 2))])
        labels = np.repeat([0, 1], 200)
        model = fit_lda(classification_data(X, labels))
        w = model.coef[1] - model.coef[0]
        along = np.array([-w[1], w[0]])
        for point in ([-1.5, 0.0], [1.5, 1.0]):
            start = np.array([point])
            moved = start + 10.0 * along
            self.assertEqual(model.predict(start)[0], model.predict(moved)[0])

    def test_singular_covariance_jitter(self):
        X = np.column_stack([np.r_[np.zeros(5), np.ones(5)] + np.linspace(0, 0.1, 10), np.zeros(10)])
        model = fit_lda(classification_data(X, np.repeat([0, 1], 5)))
        self.assertTrue(model.fit_warnings)
        np.testing.assert_allclose(model.predict_proba(X).sum(axis=1), 1.0, atol=1e-12)


class SoftCircleTestCase(SimpleTestCase):
    """Fixed-parameter soft-circle classifier"""

    def test_center(self):
        self.assertAlmostEqual(eval_soft_circle([0.8, 0.0], [0.8, 0.0], 1.0, 5.0), 0.993307, places=6)

    def test_on_the_circle(self):
        self.assertEqual(eval_soft_circle([1.0, 0.0], [0.0, 0.0], 1.0, 5.0), 0.5)

    def test_far_away(self):
        self.assertLess(eval_soft_circle([1e3, 1e3], [0.8, 0.0], 1.0, 5.0), 1e-12)

    def test_requires_two_dimensions(self):
        with self.assertRaises(ArgumentError):
            eval_soft_circle([1.0, 2.0, 3.0], [0.0, 0.0], 1.0, 5.0)
        with self.assertRaises(ArgumentError):
            SoftCircle().predict_proba(np.zeros((3, 3)))

    def test_strictly_decreasing_in_distance(self):
        model = SoftCircle(center=(0.0, 0.0), radius=1.0, gamma=5.0)
        X = np.column_stack([np.linspace(0, 4, 40), np.zeros(40)])
        p1 = model.predict_proba(X)[:, 1]
        self.assertTrue(np.all(np.diff(p1) < 0))


class RegressorTestCase(SimpleTestCase):
    """Ridge and kNN regressors"""

    def test_ridge_interpolates_exact_linear_data(self):
        x = np.linspace(-3, 3, 20)
        model = fit_ridge(regression_data(x.reshape(-1, 1), 2 * x), alpha=0.0)
        self.assertAlmostEqual(model.coef[0], 2.0, delta=1e-8)
        self.assertEqual(model.sigma, 1e-3)

    def test_ridge_large_penalty_predicts_mean(self):
        x = np.linspace(0, 4, 5)
        y = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
        model = fit_ridge(regression_data(x.reshape(-1, 1), y), alpha=1e12)
        self.assertLess(abs(model.coef[0]), 1e-9)
        np.testing.assert_allclose(model.predict(x.reshape(-1, 1)), y.mean(), atol=1e-8)

    def test_ridge_matches_normal_equations(self):
        X = np.array([[0.0, 1.0], [1.0, 0.5], [2.0, -1.0], [3.0, 0.0], [4.0, 2.0]])
        y = np.array([1.0, 2.5, 2.0, 4.5, 7.0])
        model = fit_ridge(regression_data(X, y), alpha=1.0)
        design = np.column_stack([np.ones(5), X])
        penalty = np.diag([0.0, 1.0, 1.0])
        oracle = np.linalg.solve(design.T @ design + penalty, design.T @ y)
        self.assertAlmostEqual(model.intercept, oracle[0], delta=1e-10)
        np.testing.assert_allclose(model.coef, oracle[1:], atol=1e-10)

    def test_ridge_rejects_nan_features(self):
        with self.assertRaises(ArgumentError):
            fit_ridge(regression_data([[0.0], [np.nan], [1.0]], [0.0, 1.0, 2.0]), alpha=0.1)

    def test_knn_exact_match(self):
        X = np.array([[0.0], [1.0], [3.0]])
        model = fit_knn_reg(regression_data(X, [5.0, -2.0, 7.5]), k=1)
        self.assertEqual(model.predict(np.array([[1.0]]))[0], -2.0)

    def test_knn_equidistant_mean(self):
        model = fit_knn_reg(regression_data([[-1.0], [1.0]], [2.0, 6.0]), k=2)
        self.assertAlmostEqual(model.predict(np.array([[0.0]]))[0], 4.0, places=12)

    def test_knn_matches_brute_force(self):
        X = np.array([[0.0, 0.0], [1.0, 0.2], [2.0, 2.0], [-1.0, 0.5], [0.3, -1.2], [3.0, -0.7]])
        y = np.array([1.0, 2.0, 3.0, -1.0, 0.5, 4.0])
        model = fit_knn_reg(regression_data(X, y), k=3)
        queries = np.array([[0.5, 0.5], [2.5, 0.0], [-2.0, -2.0]])
        for query, predicted in zip(queries, model.predict(queries)):
            distances = [math.dist(query, row) for row in X]
            nearest = sorted(range(len(X)), key=lambda i: distances[i])[:3]
            weights = [1.0 / (distances[i] + 1e-12) for i in nearest]
            expected = sum(w * y[i] for w, i in zip(weights, nearest)) / sum(weights)
            self.assertAlmostEqual(predicted, expected, places=12)

    def test_knn_k_too_large(self):
        with self.assertRaises(ArgumentError):
            fit_knn_reg(regression_data([[0.0], [1.0]], [0.0, 1.0]), k=3)

    def test_knn_training_predictions_leave_one_out(self):
        X = np.array([[0.0], [1.0], [2.0], [10.0]])
        data = regression_data(X, [0.0, 1.0, 2.0, 3.0])
        model = fit_knn_reg(data, k=1)
        np.testing.assert_allclose(model.training_predictions(data), [1.0, 0.0, 1.0, 2.0])
        self.assertGreater(model.sigma, 1e-3)


class LikelihoodTableTestCase(SimpleTestCase):
    """loglik_table and predictor serialization"""

    def setUp(self):
        self.x = np.array([[-1.0], [-0.5], [0.5], [1.0]])
        self.data = classification_data(self.x, [0, 0, 1, 1])

    def test_perfect_classifier(self):
        table = loglik_table([logistic(50.0, name="sharp")], self.data)
        self.assertTrue(np.all(table.loglik >= math.log(0.99)))

    def test_uniform_classifier(self):
        table = loglik_table([logistic(0.0, name="coin")], self.data)
        np.testing.assert_allclose(table.loglik, math.log(0.5), atol=1e-12)

    def test_regression_density_at_mode(self):
        x = np.linspace(-1, 1, 5).reshape(-1, 1)
        model = RidgeRegressor.from_params("exact", {"alpha": 0.0, "coef": [2.0], "intercept": 0.0})
        model.sigma = 1.0
        table = loglik_table([model], regression_data(x, 2 * x.ravel()))
        np.testing.assert_allclose(table.loglik, -HALF_LOG_2PI, atol=1e-12)

    def test_task_mismatch(self):
        with self.assertRaises(ArgumentError):
            loglik_table([constant_regressor(0.0)], self.data)

    def test_clamped_at_floor(self):
        table = loglik_table([logistic(-500.0, name="wrong")], self.data)
        self.assertTrue(np.all(table.loglik >= -30.0))
        self.assertEqual(table.loglik.min(), -30.0)

    def test_predictors_document_roundtrip(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(80, 2))
        data = classification_data(X, (X[:, 0] > 0).astype(int))
        predictors = fit_roster([{"kind": "poly_logreg", "degree": 2}, {"kind": "lda"}, {"kind": "soft_circle"}], data)
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_predictors(predictors, Path(tmp) / "predictors.json")
            restored = load_predictors(path)
        self.assertEqual([p.name for p in restored], [p.name for p in predictors])
        np.testing.assert_allclose(loglik_table(restored, data).loglik, loglik_table(predictors, data).loglik)

    def test_roster_entry_with_unknown_key(self):
        """Requirement: a misspelt roster setting is an argument error, not a TypeError"""
        with self.assertRaises(ArgumentError):
            build_predictor({"kind": "ridge", "lambda": 0.1})
        with self.assertRaises(ArgumentError):
            build_predictor({"kind": "knn_reg", "neighbours": 3})
        self.assertEqual(build_predictor({"kind": "ridge", "alpha": 0.1, "name": "r"}).name, "r")

    def test_unknown_document_format(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.json"
            path.write_text('{"format": "something-else", "version": 1, "predictors": []}')
            with self.assertRaises(DataFormatError):
                load_predictors(path)


# ============================================================================
# PRIOR
# ============================================================================

class PointEnergyTestCase(SimpleTestCase):
    """Discrete and Monte-Carlo point energies"""

    def test_uniform_binary(self):
        self.assertAlmostEqual(point_energy_discrete(logistic(0.0), [0.3]), 2 * math.log(0.5), places=12)

    def test_logistic_closed_form(self):
        self.assertAlmostEqual(point_energy_discrete(logistic(1.0), [1.0]), -1.626524, delta=1e-6)
        self.assertAlmostEqual(point_energy_discrete(logistic(3.0), [1.0]), -3.097174, delta=1e-6)

    def test_discrete_exactness(self):
        for beta in (-4.0, -0.5, 0.0, 1.0, 7.0):
            for x in (-2.0, 0.0, 0.3, 1.5):
                self.assertAlmostEqual(
                    point_energy_discrete(logistic(beta), [x]), bernoulli_energy(beta, x), delta=1e-12
                )

    def test_discrete_requires_classifier(self):
        with self.assertRaises(TaskError):
            point_energy_discrete(constant_regressor(0.0), [0.0])

    def test_continuous_at_mode(self):
        value = point_energy_continuous(constant_regressor(2.0), [0.0], [2.0, 2.0, 2.0])
        self.assertAlmostEqual(value, -HALF_LOG_2PI, places=12)

    def test_continuous_two_samples(self):
        value = point_energy_continuous(constant_regressor(2.0), [0.0], [1.0, 3.0])
        self.assertAlmostEqual(value, -HALF_LOG_2PI - 0.5, places=12)

    def test_continuous_errors(self):
        with self.assertRaises(ArgumentError):
            point_energy_continuous(constant_regressor(2.0), [0.0], [])
        with self.assertRaises(TaskError):
            point_energy_continuous(logistic(1.0), [0.0], [1.0])

    def test_continuous_variance_shrinks_with_samples(self):
        model = constant_regressor(0.5)

        def spread(k, seed):
            estimates = [point_energy_continuous(model, [0.0], draw_mc_samples(-1.0, 3.0, k, seed + s))
                         for s in range(2000)]
            return np.var(estimates)

        self.assertLessEqual(spread(256, 10_000), 0.3 * spread(64, 0))

    def test_continuous_estimator_unbiased(self):
        model, a, b, y_hat = constant_regressor(0.5), -1.0, 3.0, 0.5
        estimates = [point_energy_continuous(model, [0.0], draw_mc_samples(a, b, 32, s)) for s in range(2000)]
        mean_square = ((b - y_hat) ** 3 - (a - y_hat) ** 3) / (3 * (b - a))
        self.assertAlmostEqual(np.mean(estimates), -HALF_LOG_2PI - mean_square / 2, delta=0.02)


class AdaptivePriorTestCase(SimpleTestCase):
    """adaptive_prior, leave-one-out priors and energy caches"""

    def bernoulli_cache(self):
        return EnergyCache(energies=[[math.log(5), 0.0]], totals=[math.log(5), 0.0], mode=EnergyMode.DISCRETE)

    def test_symmetric_models(self):
        cache = EnergyCache(energies=[[-1.0, -1.0]], totals=[-1.0, -1.0], mode=EnergyMode.DISCRETE)
        np.testing.assert_allclose(adaptive_prior(cache, [-2.0, -2.0]).weights, [0.5, 0.5])

    def test_bernoulli_golden_values(self):
        cache = self.bernoulli_cache()
        mild = adaptive_prior(cache, [bernoulli_energy(3.0, 1.0), bernoulli_energy(1.0, 1.0)])
        strong = adaptive_prior(cache, [bernoulli_energy(9.0, 1.0), bernoulli_energy(1.0, 1.0)])
        self.assertAlmostEqual(mild[0], bernoulli_p1(3.0), places=12)
        self.assertAlmostEqual(strong[0], bernoulli_p1(9.0), places=12)
        self.assertAlmostEqual(mild[0], 0.5346, places=4)
        self.assertAlmostEqual(strong[0], 0.003128, places=6)

    def test_dimension_mismatch(self):
        with self.assertRaises(ArgumentError):
            adaptive_prior(self.bernoulli_cache(), [0.0, 0.0, 0.0])

    def test_monotone_in_query_energy(self):
        cache = EnergyCache(energies=[[-1.0, -2.0, -1.5]], totals=[-1.0, -2.0, -1.5], mode=EnergyMode.DISCRETE)
        base = adaptive_prior(cache, [0.0, 0.0, 0.0]).weights
        raised = adaptive_prior(cache, [0.0, 0.5, 0.0]).weights
        self.assertGreater(raised[1], base[1])
        self.assertLess(raised[0], base[0])
        self.assertLess(raised[2], base[2])

    def test_cache_totals_must_match(self):
        with self.assertRaises(ArgumentError):
            EnergyCache(energies=[[-1.0, -2.0]], totals=[-1.0, -2.5], mode=EnergyMode.DISCRETE)

    def test_loo_shortcut_matches_recomputation(self):
        """Requirement: subtracting a point's own energy equals refitting the prior without it"""
        rng = np.random.default_rng(9)
        energies = rng.normal(-1.4, 0.3, size=(100, 3))
        cache = EnergyCache(energies=energies, totals=energies.sum(axis=0), mode=EnergyMode.DISCRETE)
        for i in range(cache.n):
            np.testing.assert_allclose(
                loo_prior(cache, i).weights, loo_prior_recomputed(cache, i).weights, rtol=0, atol=1e-12
            )

    def test_loo_single_model_and_uniform(self):
        single = EnergyCache(energies=[[-1.0], [-2.0]], totals=[-3.0], mode=EnergyMode.DISCRETE)
        self.assertEqual(loo_prior(single, 1).tolist(), [1.0])
        flat = EnergyCache(energies=[[-1.0, -2.0], [-2.0, -1.0]], totals=[-3.0, -3.0], mode=EnergyMode.DISCRETE)
        np.testing.assert_allclose(loo_priors(flat), 0.5)

    def test_loo_index_out_of_range(self):
        with self.assertRaises(ArgumentError):
            loo_prior(self.bernoulli_cache(), 1)

    def test_summed_prior_saturates_with_n(self):
        energies = np.tile([-1.0, -2.0], (1000, 1))
        cache = EnergyCache(energies=energies, totals=energies.sum(axis=0), mode=EnergyMode.DISCRETE)
        self.assertEqual(loo_prior(cache, 0)[0], 1.0)
        self.assertLess(loo_prior(cache, 0)[1], 1e-300)

    def test_mean_scale_does_not_grow_with_n(self):
        """Requirement: the mean-scale prior depends on the average energy, not on the training set size"""
        expected = softmax(np.array([-1.0, -2.0])).weights
        for n in (1, 10, 1000):
            energies = np.tile([-1.0, -2.0], (n, 1))
            cache = EnergyCache(energies=energies, totals=energies.sum(axis=0), mode=EnergyMode.DISCRETE,
                                scale=PriorScale.MEAN)
            np.testing.assert_allclose(loo_priors(cache), np.tile(expected, (n, 1)), atol=1e-12)
            np.testing.assert_allclose(adaptive_prior(cache, [-1.0, -2.0]).weights, expected, atol=1e-12)

    def test_mean_scale_divides_by_point_count(self):
        energies = np.array([[-1.0, -3.0], [-2.0, -0.5]])
        cache = EnergyCache(energies=energies, totals=energies.sum(axis=0), mode=EnergyMode.DISCRETE,
                            scale="mean")
        query = np.array([-0.2, -1.1])
        np.testing.assert_allclose(
            adaptive_prior(cache, query).weights, softmax((energies.sum(axis=0) + query) / 3).weights, atol=1e-12
        )
        np.testing.assert_allclose(loo_prior(cache, 1).weights, softmax(energies.sum(axis=0) / 2).weights,
                                   atol=1e-12)

    def test_mean_scale_loo_shortcut_matches_recomputation(self):
        rng = np.random.default_rng(19)
        energies = rng.normal(-1.4, 0.3, size=(100, 3))
        cache = EnergyCache(energies=energies, totals=energies.sum(axis=0), mode=EnergyMode.DISCRETE,
                            scale=PriorScale.MEAN)
        for i in range(cache.n):
            np.testing.assert_allclose(
                loo_prior(cache, i).weights, loo_prior_recomputed(cache, i).weights, rtol=0, atol=1e-12
            )

    def test_discrete_cache_from_predictors(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(40, 1))
        data = classification_data(X, (X[:, 0] > 0).astype(int))
        predictors = [logistic(1.0, name="b1"), logistic(3.0, name="b3")]
        cache = build_energy_cache(predictors, data)
        self.assertEqual(cache.mode, EnergyMode.DISCRETE)
        np.testing.assert_allclose(cache.energies[:, 1], bernoulli_energy(3.0, X[:, 0]), atol=1e-12)
        np.testing.assert_allclose(cache.query_energies(X), cache.energies)

    def test_continuous_cache_shares_samples(self):
        x = np.linspace(0, 1, 10).reshape(-1, 1)
        data = regression_data(x, 3 * x.ravel())
        cache = build_energy_cache([fit_ridge(data, 0.05), fit_knn_reg(data, 3)], data, num_samples=16, seed=4)
        self.assertEqual(cache.samples.shape, (16,))
        self.assertLess(cache.y_min, cache.y_max)
        repeat = build_energy_cache(cache.predictors, data, num_samples=16, seed=4)
        np.testing.assert_array_equal(cache.energies, repeat.energies)


class BernoulliDemoTestCase(SimpleTestCase):
    """Two-model Bernoulli log-odds sweep"""

    def test_origin_gives_baseline(self):
        frame = bernoulli_demo(3.0, 1.0, math.log(5), [0.0])
        self.assertAlmostEqual(frame["p_j1"].iloc[0], 5 / 6, places=12)

    def test_identical_models_constant(self):
        frame = bernoulli_demo(2.0, 2.0, 0.7, np.linspace(-3, 3, 13))
        np.testing.assert_allclose(frame["p_j1"], expit(0.7), atol=1e-15)

    def test_golden_sequence(self):
        # mild preference for the first model, then a flip, then a strong preference for the second
        expected = {3.0: 0.5346, 5.0: 0.1446, 9.0: 0.0031}
        for beta1, value in expected.items():
            p1 = bernoulli_demo(beta1, 1.0, math.log(5), [1.0])["p_j1"].iloc[0]
            self.assertAlmostEqual(p1, bernoulli_p1(beta1), places=12)
            self.assertAlmostEqual(p1, value, places=4)

    def test_columns(self):
        self.assertEqual(list(bernoulli_demo(1.0, 2.0, 0.0, [0.0, 1.0]).columns), ["x", "p_j1"])


# ============================================================================
# POSTERIOR
# ============================================================================

class PosteriorNetTestCase(SimpleTestCase):
    """Network forward pass and serialization"""

    def test_zero_output_layer_is_uniform(self):
        net = PosteriorNet(2, 4, seed=0)
        for x in ([0.0, 0.0], [3.0, -7.0], [1e3, 2e3]):
            np.testing.assert_allclose(net.forward(np.array(x)).weights, 0.25, atol=1e-15)

    def test_outputs_sum_to_one(self):
        net = PosteriorNet(3, 5, seed=1, zero_output=False)
        X = np.random.default_rng(11).normal(0, 3, size=(50, 3))
        np.testing.assert_allclose(net.forward_batch(X).sum(axis=1), 1.0, atol=1e-9)

    def test_determinism(self):
        x = np.array([0.3, -1.2])
        first = PosteriorNet(2, 3, seed=42, zero_output=False).forward(x).weights
        second = PosteriorNet(2, 3, seed=42, zero_output=False).forward(x).weights
        np.testing.assert_array_equal(first, second)

    def test_parameter_count(self):
        net = PosteriorNet(2, 5)
        expected = (2 * 64 + 64) + (64 * 32 + 32) + (32 * 16 + 16) + (16 * 5 + 5)
        self.assertEqual(net.parameter_count, expected)
        self.assertEqual(net.get_flat().size, expected)

    def test_dimension_mismatch(self):
        with self.assertRaises(ArgumentError):
            PosteriorNet(2, 3).forward(np.zeros(3))

    def test_large_inputs_stay_finite(self):
        net = PosteriorNet(2, 3, seed=5, zero_output=False)
        weights = net.forward_batch(np.array([[1e6, -1e6], [-1e6, 1e6], [1e6, 1e6]]))
        self.assertTrue(np.all(np.isfinite(weights)))
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-9)

    def test_document_roundtrip(self):
        net = PosteriorNet(2, 3, seed=6, zero_output=False)
        restored = PosteriorNet.from_dict(net.to_dict(TrainConfig()))
        X = np.random.default_rng(12).normal(size=(10, 2))
        np.testing.assert_array_equal(restored.forward_batch(X), net.forward_batch(X))


class ElboTestCase(SimpleTestCase):
    """ELBO values, KL nonnegativity and concavity"""

    def test_q_equals_prior(self):
        q = SimplexWeights([0.2, 0.5, 0.3])
        ell = [-1.0, -0.4, -2.0]
        self.assertAlmostEqual(elbo(q, ell, q, 0.7), float(np.dot(q.weights, ell)), places=12)

    def test_one_hot(self):
        prior = SimplexWeights([0.25, 0.5, 0.25])
        value = elbo(SimplexWeights([0.0, 0.0, 1.0]), [-1.0, -2.0, -0.3], prior, 0.05)
        self.assertAlmostEqual(value, -0.3 - 0.05 * math.log(1 / 0.25), places=12)

    def test_zero_lambda_optimum_is_one_hot(self):
        rng = np.random.default_rng(13)
        ell = np.array([-1.2, -0.3, -0.9])
        prior = SimplexWeights([0.6, 0.1, 0.3])
        optimum = elbo(SimplexWeights([0.0, 1.0, 0.0]), ell, prior, 0.0)
        self.assertAlmostEqual(optimum, ell.max(), places=12)
        for _ in range(200):
            self.assertLessEqual(elbo(rng.dirichlet(np.ones(3)), ell, prior, 0.0), optimum + 1e-12)

    def test_dimension_mismatch(self):
        with self.assertRaises(ArgumentError):
            elbo(SimplexWeights([0.5, 0.5]), [-1.0], SimplexWeights([0.5, 0.5]), 0.1)

    def test_kl_nonnegative_and_elbo_concave(self):
        rng = np.random.default_rng(14)
        for _ in range(10_000):
            m = int(rng.integers(2, 6))
            q_a, q_b, prior = rng.dirichlet(np.ones(m), size=3)
            ell = rng.uniform(-10, 0, size=m)
            lam = rng.uniform(0, 2)
            self.assertGreaterEqual(kl_divergence(q_a, prior), -1e-12)
            midpoint = elbo((q_a + q_b) / 2, ell, prior, lam)
            ends = (elbo(q_a, ell, prior, lam) + elbo(q_b, ell, prior, lam)) / 2
            self.assertGreaterEqual(midpoint, ends - 1e-12)


class TrainingTestCase(SimulatedRosterMixin, SimpleTestCase):
    """ELBO training, weight assignment and gradient checks"""

    def line_data(self, n=1000, seed=15):
        x = np.random.default_rng(seed).normal(size=(n, 1))
        return classification_data(x, np.zeros(n, dtype=int))

    def test_single_model(self):
        data = self.line_data(n=100)
        table = LikelihoodTable(np.full((100, 1), -0.7), ("only",))
        net, _ = train(PosteriorNet(1, 1), data, table, np.ones((100, 1)), TrainConfig(epochs=2))
        np.testing.assert_array_equal(assign_weight_matrix(net, data.features), 1.0)

    def test_dominant_model_wins(self):
        data = self.line_data()
        table = LikelihoodTable(np.tile([-0.5, -1.5], (1000, 1)), ("good", "bad"))
        cfg = TrainConfig(learning_rate=1e-2, epochs=10, lambda_kl=0.05)
        net, trace = train(PosteriorNet(1, 2), data, table, np.full((1000, 2), 0.5), cfg)
        self.assertGreater(assign_weight_matrix(net, data.features)[:, 0].mean(), 0.9)
        self.assertEqual(trace.to_frame().columns.tolist(), ["epoch", "mean_elbo", "mean_kl", "mean_loglik"])

    def test_huge_kl_weight_keeps_uniform(self):
        data = self.line_data()
        table = LikelihoodTable(np.tile([-0.5, -1.5], (1000, 1)), ("good", "bad"))
        net, _ = train(PosteriorNet(1, 2), data, table, np.full((1000, 2), 0.5), TrainConfig(lambda_kl=1e6))
        np.testing.assert_allclose(assign_weight_matrix(net, data.features), 0.5, atol=0.01)

    def test_zero_lambda_learns_per_row_argmax(self):
        rng = np.random.default_rng(16)
        x = rng.uniform(-2, 2, size=200)
        ell = np.column_stack([x, -x]) - 3.0
        data = classification_data(x.reshape(-1, 1), np.zeros(200, dtype=int))
        table = LikelihoodTable(ell, ("left", "right"))
        cfg = TrainConfig(learning_rate=1e-2, batch_size=8, epochs=50, lambda_kl=0.0)
        net, _ = train(PosteriorNet(1, 2), data, table, np.full((200, 2), 0.5), cfg)
        weights = assign_weight_matrix(net, data.features)
        wide = np.abs(ell[:, 0] - ell[:, 1]) > 1.0
        chosen = weights[np.arange(200), np.argmax(ell, axis=1)]
        self.assertTrue(np.all(chosen[wide] >= 0.99))

    def test_misaligned_inputs(self):
        data = self.line_data(n=10)
        table = LikelihoodTable(np.full((9, 2), -1.0), ("a", "b"))
        with self.assertRaises(ArgumentError):
            train(PosteriorNet(1, 2), data, table, np.full((9, 2), 0.5), TrainConfig())

    def test_training_improves_simulation_elbo(self):
        cache = build_energy_cache(self.predictors, self.train_data)
        net, trace = train(PosteriorNet(2, len(self.predictors)), self.train_data, self.train_table,
                           loo_priors(cache), TrainConfig())
        self.assertGreaterEqual(trace.mean_elbo[-1], trace.mean_elbo[0] - 1e-6)
        self.assertEqual(len(trace.epochs), 10)

    def test_assigned_weights_satisfy_guarantee(self):
        cache = build_energy_cache(self.predictors, self.train_data)
        net, _ = train(PosteriorNet(2, len(self.predictors)), self.train_data, self.train_table,
                       loo_priors(cache), TrainConfig(epochs=2))
        x = self.test_data.features[0]
        np.testing.assert_array_equal(assign_weights(net, x).weights, net.forward(x).weights)
        report = theorem1_check(assign_weight_matrix(net, self.test_data.features), self.test_table)
        self.assertEqual(report.violations, 0)

    def test_permuted_models_give_permuted_weights(self):
        rng = np.random.default_rng(17)
        X = rng.normal(size=(120, 2))
        ell = rng.uniform(-3, 0, size=(120, 3))
        priors = rng.dirichlet(np.ones(3), size=120)
        perm = np.array([2, 0, 1])
        data = classification_data(X, np.zeros(120, dtype=int))
        cfg = TrainConfig(epochs=3, lambda_kl=0.1)

        net = PosteriorNet(2, 3, seed=8, zero_output=False)
        permuted = PosteriorNet(2, 3, seed=8, zero_output=False)
        permuted.weights[-1] = net.weights[-1][:, perm].copy()
        permuted.biases[-1] = net.biases[-1][perm].copy()

        train(net, data, LikelihoodTable(ell, ("a", "b", "c")), priors, cfg)
        train(permuted, data, LikelihoodTable(ell[:, perm], ("c", "a", "b")), priors[:, perm], cfg)
        np.testing.assert_allclose(permuted.forward_batch(X), net.forward_batch(X)[:, perm], atol=1e-6)

    def small_instance(self, lambda_kl=0.3):
        rng = np.random.default_rng(18)
        net = PosteriorNet(3, 4, hidden=(6, 5, 4), seed=2, zero_output=False)
        X = rng.normal(size=(6, 3))
        ell = rng.uniform(-1, 0, size=(6, 4))
        priors = rng.dirichlet(np.ones(4), size=6)
        return net, X, ell, priors

    def test_elbo_gradient(self):
        net, X, ell, priors = self.small_instance()
        self.assertLessEqual(net.parameter_count, 1000)
        self.assertLess(grad_check(net, X, ElboObjective(ell, priors, 0.3)), 1e-4)

    def test_expected_loglik_gradient(self):
        net, X, ell, priors = self.small_instance()
        self.assertLess(grad_check(net, X, ElboObjective(ell, priors, 0.0)), 1e-4)

    def test_empty_perturbation(self):
        net, X, ell, priors = self.small_instance()
        before = net.get_flat()
        self.assertEqual(grad_check(net, X, ElboObjective(ell, priors, 0.3), coordinates=[]), 0.0)
        np.testing.assert_array_equal(net.get_flat(), before)

    def test_invalid_train_config(self):
        for kwargs in ({"learning_rate": 0.0}, {"batch_size": 0}, {"epochs": 0}, {"lambda_kl": -1.0}):
            with self.assertRaises(ArgumentError):
                TrainConfig(**kwargs)


# ============================================================================
# BASELINES
# ============================================================================

class ConstantBaselineTestCase(SimpleTestCase):
    """Uniform, best-single, accuracy-weighted and classical BMA weights"""

    def test_uniform(self):
        self.assertEqual(weights_uniform(4).tolist(), [0.25] * 4)
        self.assertEqual(weights_uniform(1).tolist(), [1.0])
        with self.assertRaises(ArgumentError):
            weights_uniform(0)

    def test_uniform_over_identical_models(self):
        self.assertAlmostEqual(mixture_loglik(weights_uniform(3), [-0.8] * 3), -0.8, places=12)

    def test_best_single(self):
        dominant = LikelihoodTable([[-0.1, -0.5], [-0.2, -0.4]], ("a", "b"))
        self.assertEqual(weights_best_single(dominant).tolist(), [1.0, 0.0])
        tied = LikelihoodTable([[-0.3, -0.3]], ("a", "b"))
        self.assertEqual(weights_best_single(tied).argmax(), 0)

    def test_best_single_matches_column_sums(self):
        rng = np.random.default_rng(19)
        loglik = rng.uniform(-5, 0, size=(30, 3))
        totals = [sum(loglik[i, j] for i in range(30)) for j in range(3)]
        chosen = weights_best_single(LikelihoodTable(loglik, ("a", "b", "c")))
        self.assertEqual(chosen.argmax(), int(np.argmax(totals)))

    def test_accuracy_ratio(self):
        x = np.arange(1.0, 11.0).reshape(-1, 1)
        labels = np.array([0, 1, 1, 1, 1, 1, 1, 1, 1, 1])
        data = classification_data(x, labels)
        predictors = [logistic(1.0, name="always"), logistic(1.0, intercept=-5.5, name="late")]
        weights = weights_accuracy(loglik_table(predictors, data), data, predictors)
        np.testing.assert_allclose(weights.weights, [0.6, 0.4], atol=1e-12)

    def test_accuracy_equal_is_uniform(self):
        data = classification_data([[1.0], [2.0]], [1, 1])
        predictors = [logistic(1.0, name="a"), logistic(2.0, name="b")]
        weights = weights_accuracy(loglik_table(predictors, data), data, predictors)
        np.testing.assert_allclose(weights.weights, [0.5, 0.5])

    def test_accuracy_regression_exact_model_dominates(self):
        x = np.linspace(-2, 2, 30)
        data = regression_data(x.reshape(-1, 1), 2 * x)
        predictors = [fit_ridge(data, 0.0), fit_ridge(data, 1e6)]
        weights = weights_accuracy(loglik_table(predictors, data), data, predictors)
        self.assertGreater(weights[0], 1 - 1e-6)

    def test_bma(self):
        gap = LikelihoodTable([[math.log(3), 0.0]], ("a", "b"))
        np.testing.assert_allclose(weights_bma(gap).weights, [0.75, 0.25], atol=1e-12)
        same = LikelihoodTable([[-1.0, -1.0], [-2.0, -2.0]], ("a", "b"))
        np.testing.assert_allclose(weights_bma(same).weights, [0.5, 0.5])

    def test_bma_large_gap(self):
        weights = weights_bma(LikelihoodTable([[0.0, -50.0]], ("a", "b"))).weights
        self.assertFalse(np.any(np.isnan(weights)))
        self.assertLess(weights[1], 1e-20)

    def test_bma_agrees_with_best_single(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            table = LikelihoodTable(rng.uniform(-3, 0, size=(10, 4)), ("a", "b", "c", "d"))
            self.assertEqual(weights_bma(table).argmax(), weights_best_single(table).argmax())


class AdaptiveBaselineTestCase(SimulatedRosterMixin, SimpleTestCase):
    """Mixture-of-experts gate and dynamic local accuracy"""

    def test_moe_single_expert(self):
        data = classification_data(np.linspace(-1, 1, 64).reshape(-1, 1), np.zeros(64, dtype=int))
        table = LikelihoodTable(np.full((64, 1), -0.4), ("only",))
        gate, trace = fit_moe(data, table, TrainConfig(epochs=2))
        np.testing.assert_array_equal(gate.forward_batch(data.features), 1.0)
        self.assertAlmostEqual(trace.mean_elbo[-1], -0.4, places=12)

    def test_moe_prefers_better_expert(self):
        x = np.random.default_rng(21).normal(size=(500, 1))
        data = classification_data(x, np.zeros(500, dtype=int))
        table = LikelihoodTable(np.tile([-0.3, -1.3], (500, 1)), ("good", "bad"))
        gate, _ = fit_moe(data, table, TrainConfig(learning_rate=1e-2, epochs=5))
        self.assertGreater(gate.forward_batch(x)[:, 0].mean(), 0.5)

    def test_moe_gradient(self):
        rng = np.random.default_rng(22)
        net = PosteriorNet(2, 3, hidden=(5, 4, 3), seed=3, zero_output=False)
        X = rng.normal(size=(5, 2))
        ell = rng.uniform(-2, 0, size=(5, 3))
        self.assertLess(grad_check(net, X, MixtureObjective(ell)), 1e-4)

    def test_dla_equal_accuracy_uniform(self):
        data = classification_data(np.arange(10.0).reshape(-1, 1), np.ones(10, dtype=int))
        predictors = [logistic(1.0, name="a"), logistic(2.0, name="b")]
        table = loglik_table(predictors, data)
        weights = weights_dla(data, table, [3.0], k=4, temperature=0.8, smoothing=1.0, predictors=predictors)
        np.testing.assert_allclose(weights.weights, [0.5, 0.5])

    def test_dla_cold_temperature_is_one_hot(self):
        x = np.arange(10.0).reshape(-1, 1)
        data = classification_data(x, (x[:, 0] >= 5).astype(int))
        predictors = [logistic(1.0, name="always"), logistic(1.0, intercept=-4.5, name="threshold")]
        weights = weights_dla(data, loglik_table(predictors, data), [1.0], k=3, temperature=1e-9,
                              smoothing=1.0, predictors=predictors)
        self.assertEqual(weights.tolist(), [0.0, 1.0])
        tied = weights_dla(data, loglik_table(predictors, data), [8.0], k=3, temperature=1e-9,
                           smoothing=1.0, predictors=predictors)
        self.assertEqual(tied.tolist(), [1.0, 0.0])

    def test_dla_matches_brute_force(self):
        rng = np.random.default_rng(23)
        X = rng.normal(size=(20, 2)) * [1.0, 3.0]
        data = classification_data(X, (X[:, 0] + 0.3 * X[:, 1] > 0).astype(int))
        predictors = [fit_lda(data), SoftCircle(center=(0.0, 0.0))]
        table = loglik_table(predictors, data)
        query = np.array([0.2, -0.5])

        mean, std = X.mean(axis=0), X.std(axis=0)
        scaled = (X - mean) / std
        target = (query - mean) / std
        order = sorted(range(20), key=lambda i: math.dist(scaled[i], target))[:5]
        scores = []
        for model in predictors:
            correct = sum(int(model.predict(X[i:i + 1])[0] == data.labels[i]) for i in order)
            scores.append((correct + 1.0) / (5 + 2.0))
        expected = softmax(np.array(scores) / 0.8).weights

        weights = weights_dla(data, table, query, k=5, temperature=0.8, smoothing=1.0, predictors=predictors)
        np.testing.assert_allclose(weights.weights, expected, atol=1e-12)

    def test_dla_k_too_large(self):
        data = classification_data(np.arange(4.0).reshape(-1, 1), [0, 1, 0, 1])
        with self.assertRaises(ArgumentError):
            DynamicLocalAccuracy(data, np.ones((4, 2)), DLAConfig(k=5))

    def test_dla_shift_invariant(self):
        """Requirement: DLA weights do not move when every local score shifts by a constant"""
        data = classification_data(np.arange(6.0).reshape(-1, 1), [0, 1, 0, 1, 1, 0])
        terms = np.array([[1, 0], [1, 1], [0, 1], [1, 0], [0, 0], [1, 1]], dtype=float)
        dla = DynamicLocalAccuracy(data, terms, DLAConfig(k=3))
        scores = dla.local_scores(np.array([[2.2]]))
        np.testing.assert_allclose(softmax(scores[0] / 0.8).weights, softmax(scores[0] / 0.8 + 4.0).weights)

    def test_adaptive_weights_vary_with_input(self):
        dla = DynamicLocalAccuracy.from_predictors(self.train_data, self.predictors, DLAConfig(k=20))
        dla_weights = dla.weight_matrix(self.test_data.features)
        gate, _ = fit_moe(self.train_data, self.train_table, TrainConfig(epochs=2))
        gate_weights = gate.forward_batch(self.test_data.features)
        for weights in (dla_weights, gate_weights):
            self.assertGreater(np.abs(weights - weights[0]).max(), 1e-6)
        bma = weights_bma(self.train_table)
        self.assertEqual(bma.m, len(self.predictors))


# ============================================================================
# METRICS
# ============================================================================

class MetricsTestCase(SimpleTestCase):
    """Accuracy, ECE, RMSE/R^2 and confidence bins"""

    def test_accuracy_extremes(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8]])
        self.assertEqual(accuracy(probs, [0, 1]), 1.0)
        self.assertEqual(accuracy(probs, [1, 0]), 0.0)

    def test_accuracy_hand_count(self):
        p1 = np.array([0.9, 0.4, 0.6, 0.1, 0.5, 0.7, 0.3, 0.8, 0.2, 0.55])
        labels = np.array([1, 0, 0, 0, 1, 1, 1, 1, 0, 0])
        # argmax: 1 0 1 0 0(tie) 1 0 1 0 1 -> correct rows 0,1,3,5,7,8
        self.assertAlmostEqual(accuracy(np.column_stack([1 - p1, p1]), labels), 0.6)

    def test_accuracy_mismatch(self):
        with self.assertRaises(ArgumentError):
            accuracy(np.array([[0.5, 0.5]]), [0, 1])

    def test_ece_examples(self):
        balanced = np.array([0, 1] * 50)
        self.assertLessEqual(ece(np.full(100, 0.5), balanced), 1 / 100)
        seventy = np.array([1] * 7 + [0] * 3)
        self.assertAlmostEqual(ece(np.ones(10), seventy), 0.3, places=12)
        self.assertEqual(ece(np.array([1.0, 0.0, 1.0]), np.array([1, 0, 1])), 0.0)

    def test_ece_relabel_invariant(self):
        rng = np.random.default_rng(24)
        p1 = rng.uniform(0.01, 0.99, size=200)
        labels = rng.integers(0, 2, size=200)
        self.assertAlmostEqual(ece(p1, labels), ece(1 - p1, 1 - labels), places=12)

    def test_ece_tie_counts_half_correct(self):
        """Requirement: a probability of exactly 0.5 is scored the same under either labelling"""
        p1 = np.array([0.5, 0.52])
        labels = np.array([1, 1])
        # one bin: mean confidence 0.51, accuracy (0.5 + 1) / 2
        self.assertAlmostEqual(ece(p1, labels), 0.24, places=12)
        self.assertAlmostEqual(ece(1 - p1, 1 - labels), 0.24, places=12)
        self.assertEqual(ece(np.full(4, 0.5), np.array([0, 0, 1, 1])), 0.0)

    def test_ece_rejects_multiclass(self):
        with self.assertRaises(TaskError):
            ece(np.array([0.2, 0.7]), np.array([0, 2]))

    def test_rmse_r2(self):
        y = np.array([1.0, 2.0, 4.0, 3.0, 5.0])
        self.assertEqual(rmse_r2(y, y), (0.0, 1.0))
        self.assertAlmostEqual(rmse_r2(np.full(5, y.mean()), y)[1], 0.0, places=12)
        preds = np.array([1.5, 2.0, 3.0, 3.5, 4.0])
        sse = sum((a - b) ** 2 for a, b in zip(y, preds))
        sst = sum((a - y.mean()) ** 2 for a in y)
        rmse, r2 = rmse_r2(preds, y)
        self.assertAlmostEqual(rmse, math.sqrt(sse / 5), places=12)
        self.assertAlmostEqual(r2, 1 - sse / sst, places=12)

    def test_rmse_constant_shift(self):
        y = np.array([0.5, -1.0, 2.0, 7.0])
        self.assertAlmostEqual(rmse_r2(y + 0.75, y)[0], 0.75, places=12)

    def test_rmse_needs_two_rows(self):
        with self.assertRaises(ArgumentError):
            rmse_r2([1.0], [1.0])

    def test_confidence_bins(self):
        top = confidence_bin_errors(np.array([0.0, 1.0, 1.0]), np.array([0, 1, 0]))
        self.assertEqual(top["count"].tolist(), [0] * 9 + [3])
        self.assertAlmostEqual(top["error_rate"].iloc[-1], 1 / 3)
        bottom = confidence_bin_errors(np.full(4, 0.5), np.array([0, 1, 0, 1]))
        self.assertEqual(bottom["count"].tolist(), [4] + [0] * 9)
        self.assertEqual(bottom["error_rate"].iloc[0], 0.5)

    def test_confidence_bins_manual(self):
        p1 = np.array([0.53, 0.97, 0.26, 0.77])
        labels = np.array([0, 1, 0, 1])
        table = confidence_bin_errors(p1, labels, bins=5)
        # margins 0.03 0.47 0.24 0.27 -> bins 0, 4, 2, 2
        self.assertEqual(table["count"].tolist(), [1, 0, 2, 0, 1])
        self.assertEqual(table["error_rate"].iloc[0], 1.0)
        self.assertEqual(table["error_rate"].iloc[2], 0.0)


class TheoremCheckTestCase(SimpleTestCase):
    """Pointwise and aggregate guarantee check"""

    def test_one_hot_rows_are_tight(self):
        table = LikelihoodTable([[-0.2, -3.0], [-1.0, -0.1]], ("a", "b"))
        report = theorem1_check(np.array([[1.0, 0.0], [0.0, 1.0]]), table)
        self.assertEqual(report.max_violation, 0.0)
        self.assertAlmostEqual(report.aggregate_slack, 0.0, places=12)

    def test_uniform_two_models(self):
        ell = np.array([math.log(0.3), math.log(0.8)])
        report = theorem1_check(np.array([[0.5, 0.5]]), LikelihoodTable([ell], ("a", "b")))
        mixture = report.mixture_loglik[0]
        for k in range(2):
            self.assertGreaterEqual(mixture - (-math.log(2) + ell[k]), 0.0)
        self.assertTrue(report.passed)

    def test_random_instances_never_violate(self):
        rng = np.random.default_rng(25)
        weights = rng.dirichlet(np.ones(4), size=100)
        table = LikelihoodTable(rng.uniform(-30, 0, size=(100, 4)), ("a", "b", "c", "d"))
        report = theorem1_check(weights, table)
        self.assertEqual(report.violations, 0)
        self.assertGreaterEqual(report.aggregate_slack, 0.0)

    def test_corrupted_weights(self):
        table = LikelihoodTable([[-1.0, -2.0]], ("a", "b"))
        with self.assertRaises(SimplexError):
            theorem1_check(np.array([[1.0, 0.5]]), table)

    def test_row_mismatch(self):
        table = LikelihoodTable([[-1.0, -2.0]], ("a", "b"))
        with self.assertRaises(ArgumentError):
            theorem1_check(np.array([[0.5, 0.5], [0.5, 0.5]]), table)


# ============================================================================
# DATA
# ============================================================================

class SimulationTestCase(SimpleTestCase):
    """Two-region simulation"""

    def test_boundary_rules(self):
        self.assertEqual(label_linear(np.array([[-0.5, -0.5]]), 1.0)[0], 0)
        self.assertEqual(label_circular(np.array([[1.0, 0.0]]), 1.0)[0], 1)

    def test_labels_recomputable_from_features(self):
        train, test = simulate_two_region(SimulationConfig(seed=1))
        for data in (train, test):
            linear = data.regions == 0
            np.testing.assert_array_equal(data.labels[linear], label_linear(data.features[linear], 1.0))
            np.testing.assert_array_equal(data.labels[~linear], label_circular(data.features[~linear], 1.0))

    def test_default_sizes_and_odd_split(self):
        train, test = simulate_two_region(SimulationConfig())
        self.assertEqual((train.n, test.n, train.d), (1000, 500, 2))
        odd, _ = simulate_two_region(SimulationConfig(n_train=7, n_test=3))
        self.assertEqual(np.bincount(odd.regions).tolist(), [3, 4])

    def test_circular_label_rate(self):
        train, _ = simulate_two_region(SimulationConfig(n_train=4000, seed=0))
        circular = train.labels[train.regions == 1]
        sigma = math.sqrt(0.25 / circular.size)
        self.assertLess(abs(circular.mean() - 0.5), 3 * sigma)

    def test_seeded_replay_and_independent_streams(self):
        first = simulate_two_region(SimulationConfig(seed=7))
        second = simulate_two_region(SimulationConfig(seed=7))
        np.testing.assert_array_equal(first[0].features, second[0].features)
        np.testing.assert_array_equal(first[1].features, second[1].features)
        self.assertFalse(np.array_equal(first[0].features[:500], first[1].features))

    def test_invalid_config(self):
        with self.assertRaises(ArgumentError):
            SimulationConfig(n_train=1)
        with self.assertRaises(ArgumentError):
            SimulationConfig(offset=0.0)


class CsvTestCase(SimpleTestCase):
    """CSV ingestion"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        return path

    def test_well_formed(self):
        path = self.write("ok.csv", "a,b,label\n1.5,2,yes\n0.25,-1,no\n3,4e-1,yes\n")
        data = load_csv(path, CsvSchema(label_col="label", task=Task.CLASSIFICATION))
        self.assertEqual((data.n, data.d), (3, 2))
        self.assertEqual(data.labels.tolist(), [0, 1, 0])
        self.assertEqual(data.class_names, ("yes", "no"))

    def test_bad_cell_names_row(self):
        path = self.write("bad.csv", "a,label\n1.0,2.0\n1;5,3.0\n")
        with self.assertRaisesRegex(DataFormatError, "Row 3"):
            load_csv(path, CsvSchema(label_col="label", task=Task.REGRESSION))

    def test_non_finite_cell_names_row_and_column(self):
        for cell in ("nan", "inf", "-Infinity"):
            path = self.write("nonfinite.csv", f"a,b,label\n1.0,2.0,0.5\n3.0,{cell},1.5\n")
            with self.assertRaisesRegex(DataFormatError, "Row 3, column 'b'"):
                load_csv(path, CsvSchema(label_col="label", task=Task.REGRESSION))
        path = self.write("nanlabel.csv", "a,label\n1.0,nan\n2.0,1.0\n")
        with self.assertRaisesRegex(DataFormatError, "Row 2, column 'label'"):
            load_csv(path, CsvSchema(label_col="label", task=Task.REGRESSION))

    def test_missing_column(self):
        path = self.write("cols.csv", "a,b\n1,2\n")
        with self.assertRaises(SchemaError):
            load_csv(path, CsvSchema(label_col="target", task=Task.REGRESSION))

    def test_empty_file(self):
        with self.assertRaises(DataFormatError):
            load_csv(self.write("empty.csv", ""), CsvSchema())

    def test_roundtrip_features(self):
        train, _ = simulate_two_region(SimulationConfig(n_train=50, n_test=2, seed=2))
        path = write_csv(train, self.dir / "sim.csv")
        restored = load_csv(path, CsvSchema(label_col="label", task=Task.CLASSIFICATION,
                                            feature_cols=("x1", "x2"), region_col="region"))
        np.testing.assert_array_equal(restored.features, train.features)
        np.testing.assert_array_equal(restored.regions, train.regions)


class SplitTestCase(SimpleTestCase):
    """Stratified splitting and standardization"""

    def balanced(self, n=1000):
        X = np.random.default_rng(26).normal(size=(n, 2))
        return classification_data(X, np.arange(n) % 2)

    def test_stratified_proportions_and_size(self):
        result = split(self.balanced(), test_fraction=0.2, stratify=True, seed=0)
        self.assertEqual(result.test.n, 200)
        self.assertLessEqual(abs(result.test.labels.mean() - result.train.labels.mean()), 1 / 200)

    def test_deterministic(self):
        first = split(self.balanced(), seed=5)
        second = split(self.balanced(), seed=5)
        np.testing.assert_array_equal(first.test_index, second.test_index)

    def test_disjoint_cover(self):
        result = split(self.balanced(n=101), test_fraction=0.3, seed=1)
        self.assertEqual(np.intersect1d(result.train_index, result.test_index).size, 0)
        np.testing.assert_array_equal(np.union1d(result.train_index, result.test_index), np.arange(101))

    def test_regression_quantile_strata(self):
        y = np.random.default_rng(27).exponential(size=300)
        data = regression_data(np.arange(300.0).reshape(-1, 1), y)
        result = split(data, test_fraction=0.2, stratify=True, bins=12, seed=2)
        self.assertEqual(result.test.n, 60)

    def test_small_class_falls_back(self):
        data = classification_data(np.arange(20.0).reshape(-1, 1), [0] * 19 + [1])
        result = split(data, test_fraction=0.25, seed=3)
        self.assertTrue(any("unstratified" in note for note in result.notes))

    def test_balance_downsamples_majority(self):
        data = classification_data(np.arange(100.0).reshape(-1, 1), [0] * 80 + [1] * 20)
        result = split(data, test_fraction=0.2, seed=4, balance=True)
        counts = np.bincount(result.train.labels)
        self.assertEqual(counts[0], counts[1])

    def test_invalid_fraction(self):
        with self.assertRaises(ArgumentError):
            split(self.balanced(), test_fraction=1.0)

    def test_standardizer(self):
        X = np.column_stack([np.linspace(0, 10, 11), np.full(11, 3.0)])
        scaler = Standardizer()
        train = scaler.fit_transform(regression_data(X, np.zeros(11)))
        np.testing.assert_allclose(train.features[:, 0].mean(), 0.0, atol=1e-12)
        np.testing.assert_allclose(train.features[:, 0].std(), 1.0, atol=1e-12)
        np.testing.assert_array_equal(train.features[:, 1], 0.0)
