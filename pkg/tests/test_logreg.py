"""
Tests for logistic head training
"""

import numpy as np
import pytest

from engine.groupeval import default_universe, evaluate_accuracy
from engine.logreg import (
    average_heads,
    fit_l1_averaged,
    fit_l1_logreg,
    fit_sgd_early_stop,
    logistic_loss_grad,
    soft_threshold,
)
from models.dataset import Dataset, ModelWeights
from models.errors import ValidationError
from models.schemas import Optimizer, RetrainConfig


@pytest.fixture
def separable():
    """Two well-separated classes along the first coordinate"""
    rng = np.random.default_rng(0)
    n = 200
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    X = np.column_stack([2.0 * y + 0.3 * rng.standard_normal(n), rng.standard_normal((n, 2))])
    a = np.where(rng.random(n) < 0.7, y, -y)
    return Dataset(X=X, y=y, a=a)


def test_sgd_fits_separable_data(separable):
    """Training worst-group accuracy reaches 1"""
    universe = default_universe(separable)
    cfg = RetrainConfig(learning_rate=0.5, epochs=30, patience=30, seed=1)
    head, history = fit_sgd_early_stop(separable, separable, cfg, universe, [-1, 1])
    assert evaluate_accuracy(head, separable, universe).worst_value == 1.0
    assert history.best_value == 1.0


def test_early_stopping_keeps_the_best_epoch(planted_pool):
    """Returned epoch is the first to reach the maximum, and patience is honoured"""
    universe = default_universe(planted_pool)
    cfg = RetrainConfig(learning_rate=0.05, epochs=40, patience=3, seed=2)
    head, history = fit_sgd_early_stop(planted_pool, planted_pool, cfg, universe, [0, 1])
    assert history.best_value == max(history.val_worst)
    assert history.val_worst.index(history.best_value) == history.best_epoch - 1
    assert evaluate_accuracy(head, planted_pool, universe).worst_value == history.best_value
    if history.epochs_run < cfg.epochs:
        assert history.epochs_run - history.best_epoch == cfg.patience


def test_sgd_is_seeded(planted_pool):
    """Same seed, same head"""
    universe = default_universe(planted_pool)
    cfg = RetrainConfig(learning_rate=0.05, epochs=5, patience=5, seed=3)
    a, _ = fit_sgd_early_stop(planted_pool, planted_pool, cfg, universe, [0, 1])
    b, _ = fit_sgd_early_stop(planted_pool, planted_pool, cfg, universe, [0, 1])
    np.testing.assert_array_equal(a.w, b.w)
    assert a.b == b.b


def test_one_full_subset_equals_single_fit(planted_pool):
    """subset_repeats=1 with fraction 1 is exactly one l1 fit"""
    cfg = RetrainConfig(
        optimizer=Optimizer.L1_LOGREG_AVERAGED, l1_strength=0.01,
        subset_repeats=1, subset_fraction=1.0, seed=4,
    )
    averaged = fit_l1_averaged(planted_pool, cfg, [0, 1])
    single = fit_l1_logreg(planted_pool, 0.01, [0, 1])
    np.testing.assert_array_equal(averaged.w, single.w)
    assert averaged.b == single.b


def test_averaging_ignores_order():
    """Permuting the fits leaves the mean bit-identical"""
    rng = np.random.default_rng(5)
    fits = [ModelWeights(w=rng.standard_normal(6), b=float(rng.standard_normal())) for _ in range(7)]
    forward = average_heads(fits)
    backward = average_heads(fits[::-1])
    np.testing.assert_array_equal(forward.w, backward.w)
    assert forward.b == backward.b


def test_strong_penalty_zeroes_weights(planted_pool):
    """l1 above the largest gradient coordinate keeps w at zero"""
    head = fit_l1_logreg(planted_pool, 50.0, [0, 1])
    assert np.all(head.w == 0.0)
    assert head.classes == (0, 1)


def test_l1_fit_beats_chance(planted_pool):
    """A light penalty recovers the core direction"""
    head = fit_l1_logreg(planted_pool, 1e-3, [0, 1])
    assert head.w[0] > 0
    assert evaluate_accuracy(head, planted_pool).average > 0.8


def test_one_vs_rest_heads():
    """Three classes give one row of weights per class"""
    rng = np.random.default_rng(6)
    y = np.repeat([0, 1, 2], 30)
    X = np.eye(3)[y] * 3 + 0.2 * rng.standard_normal((90, 3))
    data = Dataset(X=X, y=y, a=np.zeros(90))
    head = fit_l1_logreg(data, 1e-4, [0, 1, 2])
    assert head.w.shape == (3, 3)
    assert head.multiclass
    np.testing.assert_array_equal(np.argmax(head.scores(X), axis=1), y)


def test_unknown_training_labels_rejected(planted_pool):
    """Every training label must be a declared class"""
    with pytest.raises(ValidationError):
        fit_l1_logreg(planted_pool, 0.01, [0, 2])


def test_soft_threshold():
    """Shrinks towards zero by t and clips"""
    out = soft_threshold(np.array([[3.0, -0.5, 1.0, -2.0]]), 1.0)
    np.testing.assert_array_equal(out, [[2.0, 0.0, 0.0, -1.0]])


def test_loss_gradient_matches_finite_differences():
    """Analytic gradient within 1e-6 of central differences"""
    rng = np.random.default_rng(7)
    X = rng.standard_normal((40, 3))
    T = (rng.random((40, 1)) < 0.5).astype(float)
    sw = rng.uniform(0.5, 2.0, 40)
    W = rng.standard_normal((1, 3))
    b = np.array([0.2])
    _, gW, gb = logistic_loss_grad(W, b, X, T, sw)
    h = 1e-6
    for j in range(3):
        E = np.zeros_like(W)
        E[0, j] = h
        up, _, _ = logistic_loss_grad(W + E, b, X, T, sw)
        down, _, _ = logistic_loss_grad(W - E, b, X, T, sw)
        assert gW[0, j] == pytest.approx((up - down) / (2 * h), abs=1e-6)
    up, _, _ = logistic_loss_grad(W, b + h, X, T, sw)
    down, _, _ = logistic_loss_grad(W, b - h, X, T, sw)
    assert gb[0] == pytest.approx((up - down) / (2 * h), abs=1e-6)
