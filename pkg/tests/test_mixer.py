"""
Tests for Dispel mixing
"""

import numpy as np
import pytest
from scipy.stats import chisquare

from engine.mixer import build_class_pools, draw_partners, mix, mix_rate
from engine.synthdata import sample_balanced, sample_dataset
from models.dataset import Dataset
from models.errors import ValidationError
from models.schemas import MixConfig


def _bal(labels):
    labels = np.asarray(labels)
    X = np.arange(len(labels) * 3, dtype=np.float64).reshape(len(labels), 3)
    return Dataset(X=X, y=labels, a=labels)


def test_class_pools_group_rows():
    """Labels [1, 1, -1] give pools {1: [0, 1], -1: [2]}"""
    pools = build_class_pools(_bal([1, 1, -1]))
    assert {k: list(v) for k, v in pools.items()} == {-1: [2], 1: [0, 1]}


def test_class_pools_declare_missing_labels():
    """Labels only known to D_FT get empty pools"""
    pools = build_class_pools(_bal([1, 1]), class_labels=[-1, 1])
    assert len(pools[-1]) == 0
    assert list(pools[1]) == [0, 1]


def test_class_pools_accept_array_labels():
    """np.unique output works as the declared label set"""
    pools = build_class_pools(_bal([1, 1]), class_labels=np.array([-1, 1]))
    assert sorted(pools) == [-1, 1]
    assert len(pools[-1]) == 0


def test_two_class_mix_keeps_labels(small_spec):
    """Mixing a two-label D_FT with every partner drawn from its own class"""
    d_ft = sample_dataset(small_spec, 50, seed=4)
    d_bal = sample_balanced(small_spec, 8, seed=5)
    out, trace = mix(d_ft, d_bal, MixConfig(alpha=1.0, s=0.5, seed=6))
    np.testing.assert_array_equal(out.y, d_ft.y)
    np.testing.assert_array_equal(d_bal.y[trace.partner], d_ft.y)
    assert not trace.cross_class.any()


def test_empty_balanced_set_rejected():
    """Nothing to mix with"""
    with pytest.raises(ValidationError):
        build_class_pools(Dataset(X=np.zeros((0, 3)), y=[], a=[]))


def test_alpha_zero_is_identity(small_spec):
    """No Bernoulli successes: features bit-identical, nothing mixed"""
    d_ft = sample_dataset(small_spec, 200, seed=1)
    d_bal = sample_balanced(small_spec, 8, seed=2)
    out, trace = mix(d_ft, d_bal, MixConfig(alpha=0.0, s=0.7, seed=3))
    assert out.X.tobytes() == d_ft.X.tobytes()
    assert not trace.mixed.any()
    assert np.all(trace.partner == -1)


def test_zero_weight_keeps_features_but_records_partners(small_spec):
    """alpha=1, s=0: every row mixed with a partner, features unchanged"""
    d_ft = sample_dataset(small_spec, 200, seed=1)
    d_bal = sample_balanced(small_spec, 8, seed=2)
    out, trace = mix(d_ft, d_bal, MixConfig(alpha=1.0, s=0.0, seed=3))
    np.testing.assert_array_equal(out.X, d_ft.X)
    assert trace.mixed.all()
    assert np.all(trace.partner >= 0)


def test_full_weight_replaces_with_same_label_partner(small_spec):
    """alpha=1, s=1: each row equals a D_bal row of its own label"""
    d_ft = sample_dataset(small_spec, 100, seed=1)
    d_bal = sample_balanced(small_spec, 8, seed=2)
    out, trace = mix(d_ft, d_bal, MixConfig(alpha=1.0, s=1.0, seed=3))
    np.testing.assert_array_equal(out.X, d_bal.X[trace.partner])
    np.testing.assert_array_equal(d_bal.y[trace.partner], d_ft.y)
    assert not trace.cross_class.any()


def test_labels_and_groups_preserved(small_spec):
    """Output keeps row order, labels and attributes of D_FT"""
    d_ft = sample_dataset(small_spec, 100, seed=1)
    d_bal = sample_balanced(small_spec, 8, seed=2)
    out, _ = mix(d_ft, d_bal, MixConfig(alpha=0.5, s=0.5, seed=4))
    np.testing.assert_array_equal(out.y, d_ft.y)
    np.testing.assert_array_equal(out.a, d_ft.a)
    assert out.n == d_ft.n


def test_mixed_rows_are_convex_combinations(small_spec):
    """Every output lies between its source row and its partner"""
    d_ft = sample_dataset(small_spec, 300, seed=1)
    d_bal = sample_balanced(small_spec, 8, seed=2)
    out, trace = mix(d_ft, d_bal, MixConfig(alpha=0.6, s=0.3, seed=5))
    rows = np.flatnonzero(trace.mixed)
    partner = d_bal.X[trace.partner[rows]]
    src = d_ft.X[rows]
    lo = np.minimum(src, partner) - 1e-12
    hi = np.maximum(src, partner) + 1e-12
    assert np.all((out.X[rows] >= lo) & (out.X[rows] <= hi))
    np.testing.assert_allclose(out.X[rows], 0.7 * src + 0.3 * partner)


def test_cross_class_branch_when_pool_is_empty():
    """D_bal with only class 1: class -1 rows take partners from all of D_bal"""
    d_ft = Dataset(X=np.zeros((50, 3)), y=np.where(np.arange(50) % 2 == 0, 1, -1), a=np.zeros(50))
    d_bal = Dataset(X=np.ones((4, 3)), y=np.ones(4), a=np.ones(4))
    out, trace = mix(d_ft, d_bal, MixConfig(alpha=1.0, s=0.25, seed=1))
    np.testing.assert_array_equal(trace.cross_class, d_ft.y == -1)
    np.testing.assert_allclose(out.X, 0.25)
    np.testing.assert_array_equal(out.y, d_ft.y)


def test_dimension_mismatch_rejected(small_spec):
    """D_FT and D_bal must share a dimension"""
    d_ft = sample_dataset(small_spec, 10, seed=1)
    with pytest.raises(ValidationError, match="dimension"):
        mix(d_ft, _bal([1, -1]), MixConfig(alpha=1.0, s=0.5, seed=0))


def test_partners_do_not_depend_on_s(small_spec):
    """One seed gives the same partners along an s-sweep"""
    d_ft = sample_dataset(small_spec, 100, seed=1)
    d_bal = sample_balanced(small_spec, 8, seed=2)
    a = draw_partners(d_ft, d_bal, MixConfig(alpha=0.5, s=0.1, seed=9))
    b = draw_partners(d_ft, d_bal, MixConfig(alpha=0.5, s=0.9, seed=9))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_mix_rate_concentrates():
    """Mixed fraction within alpha +- 4 sqrt(alpha(1-alpha)/n) on 99 of 100 seeds"""
    n, alpha = 10_000, 0.3
    d_ft = Dataset(X=np.zeros((n, 3)), y=np.ones(n), a=np.ones(n))
    d_bal = _bal([1, 1])
    band = 4 * np.sqrt(alpha * (1 - alpha) / n)
    hits = 0
    for seed in range(100):
        _, trace = mix(d_ft, d_bal, MixConfig(alpha=alpha, s=0.5, seed=seed))
        hits += abs(mix_rate(trace) - alpha) <= band
    assert hits >= 99


def test_partner_selection_is_uniform():
    """Chi-square on 10^4 partner draws does not reject uniformity at 0.001"""
    n = 10_000
    d_ft = Dataset(X=np.zeros((n, 3)), y=np.ones(n), a=np.ones(n))
    d_bal = _bal([1] * 10 + [-1] * 3)
    _, trace = mix(d_ft, d_bal, MixConfig(alpha=1.0, s=0.5, seed=17))
    counts = np.bincount(trace.partner, minlength=d_bal.n)[:10]
    assert counts.sum() == n
    assert chisquare(counts).pvalue > 0.001
