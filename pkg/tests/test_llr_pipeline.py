"""
Tests for split construction, retraining and sweeps
"""

import numpy as np
import pandas as pd
import pytest

from core.llr_pipeline import (
    build_balanced_split,
    build_ft_split,
    head_classes,
    heatmap,
    mix_and_retrain,
    prepare_splits,
    resolve_l,
    retrain_head,
    retrain_head_with_history,
    select_l1_strength,
    split_validation,
    sweep,
)
from engine.groupeval import default_universe
from models.errors import ValidationError
from models.schemas import ClassBalance, Optimizer, RetrainConfig, SplitPlan, SplitSource, SweepGrid

FAST = RetrainConfig(learning_rate=0.05, epochs=5, patience=5, seed=9)


def test_split_halves_partition_each_group(planted_pool):
    """Disjoint halves, ceil/floor per group, reproducible"""
    first, second = split_validation(planted_pool, seed=1)
    assert first.n + second.n == planted_pool.n
    for g, idx in planted_pool.group_index.items():
        assert len(first.group_index[g]) == (len(idx) + 1) // 2
        assert len(second.group_index.get(g, ())) == len(idx) // 2
    again, _ = split_validation(planted_pool, seed=1)
    np.testing.assert_array_equal(again.X, first.X)
    rows = {tuple(r) for r in first.X} & {tuple(r) for r in second.X}
    assert not rows


def test_upsampling_balances_classes(planted_pool):
    """Every class ends at the size of the largest"""
    out = build_ft_split(planted_pool, SplitPlan(seed=2))
    counts = out.class_counts()
    assert len(set(counts.values())) == 1
    assert max(counts.values()) == max(planted_pool.class_counts().values())


def test_as_is_returns_input(planted_pool):
    """No balancing, no copy"""
    assert build_ft_split(planted_pool, SplitPlan(class_balance=ClassBalance.AS_IS)) is planted_pool


def test_group_quota(planted_pool):
    """Quota draws exactly the requested rows per group"""
    plan = SplitPlan(class_balance=ClassBalance.QUOTA, group_quota={(0, 0): 5, (1, 1): 7})
    out = build_ft_split(planted_pool, plan)
    assert out.group_counts() == {(0, 0): 5, (1, 1): 7}


def test_quota_needs_counts():
    """Quota mode without counts is invalid"""
    with pytest.raises(Exception):
        SplitPlan(class_balance=ClassBalance.QUOTA)


def test_balanced_split_sizes(planted_pool):
    """l per group; l=max takes the smallest group size"""
    out = build_balanced_split(planted_pool, 3, seed=4)
    assert set(out.group_counts().values()) == {3}
    smallest = min(planted_pool.group_counts().values())
    assert resolve_l(planted_pool, "max") == smallest
    assert set(build_balanced_split(planted_pool, "max", seed=4).group_counts().values()) == {smallest}


def test_balanced_split_rejects_large_l(planted_pool):
    """l above a group's size cannot be drawn without replacement"""
    with pytest.raises(ValidationError):
        build_balanced_split(planted_pool, planted_pool.n, seed=0)


def test_balanced_split_group_subset(planted_pool):
    """Missing-group mode draws only from the listed groups"""
    out = build_balanced_split(planted_pool, 4, seed=0, groups=[(1, 1)])
    assert out.group_counts() == {(1, 1): 4}


def test_prepare_splits_sources(planted_pool):
    """D_bal from the first half, selection on the second; training source needs train"""
    d_ft, d_bal, held_out = prepare_splits(planted_pool, SplitPlan(l_per_group=2, seed=5))
    first, second = split_validation(planted_pool, 5)
    assert held_out.n == second.n
    assert set(d_bal.group_counts().values()) == {2}
    assert d_ft.n >= first.n
    with pytest.raises(ValidationError):
        prepare_splits(planted_pool, SplitPlan(source=SplitSource.TRAINING, l_per_group=2))


def test_head_classes_include_universe_labels(planted_pool):
    """Labels declared by the universe are heads even if absent from training"""
    data = planted_pool.drop_groups([(0, 0), (1, 0)])
    assert head_classes(data, default_universe(planted_pool)) == [0, 1]


def test_retrain_dispatches_on_optimizer(planted_pool):
    """SGD returns a history, averaged l1 does not"""
    universe = default_universe(planted_pool)
    _, history = retrain_head_with_history(planted_pool, planted_pool, FAST, universe)
    assert history is not None
    cfg = RetrainConfig(optimizer=Optimizer.L1_LOGREG_AVERAGED, l1_strength=0.01, subset_repeats=2, seed=1)
    head, history = retrain_head_with_history(planted_pool, planted_pool, cfg, universe)
    assert history is None
    assert head.dim == planted_pool.dim


def test_sweep_without_mixing_is_flat(planted_pool):
    """alpha=0 cells are identical; ties pick the smallest s"""
    universe = default_universe(planted_pool)
    d_ft, d_bal, val = prepare_splits(planted_pool, SplitPlan(l_per_group=5, seed=6))
    grid = SweepGrid(alphas=[0.0], s_values=[0.5, 0.1, 0.9])
    result = sweep(d_ft, d_bal, val, grid, FAST, universe)
    assert result.table["wg_acc"].nunique() == 1
    assert result.best_s == 0.1
    assert result.best_alpha == 0.0
    assert list(result.table.columns) == ["alpha", "s", "wg_acc"]


def test_sweep_picks_the_maximum(planted_pool):
    """Best cell carries the largest worst-group accuracy in the table"""
    universe = default_universe(planted_pool)
    d_ft, d_bal, val = prepare_splits(planted_pool, SplitPlan(l_per_group=5, seed=7))
    result = sweep(d_ft, d_bal, val, SweepGrid(alphas=[1.0, 0.5], s_values=[0.2, 0.8]), FAST, universe)
    assert len(result.table) == 4
    assert result.best_value == result.table["wg_acc"].max()


def test_single_source_heads_are_grid_cells(planted_pool):
    """s=0 retrains on D_FT as-is; (1, 1) is the head the sweep scores for that cell"""
    universe = default_universe(planted_pool)
    d_ft, d_bal, val = prepare_splits(planted_pool, SplitPlan(l_per_group=5, seed=8))
    classes = head_classes(d_ft, universe)

    ft_head = mix_and_retrain(d_ft, d_bal, val, 1.0, 0.0, FAST, universe, classes)
    direct = retrain_head(d_ft, val, FAST, universe, classes)
    np.testing.assert_array_equal(ft_head.w, direct.w)
    assert ft_head.b == direct.b

    bal_head = mix_and_retrain(d_ft, d_bal, val, 1.0, 1.0, FAST, universe, classes)
    result = sweep(d_ft, d_bal, val, SweepGrid(alphas=[1.0], s_values=[1.0]), FAST, universe)
    np.testing.assert_array_equal(result.best_weights.w, bal_head.w)
    assert result.best_weights.b == bal_head.b


def test_heatmap_layout():
    """alpha rows, s columns, first-appearance order"""
    table = pd.DataFrame({
        "alpha": [1.0, 1.0, 0.2, 0.2],
        "s": [0.9, 0.1, 0.9, 0.1],
        "wg_acc": [0.5, 0.6, 0.7, 0.8],
    })
    out = heatmap(table)
    assert list(out.index) == [1.0, 0.2]
    assert list(out.columns) == [0.9, 0.1]
    assert out.loc[0.2, 0.1] == 0.8


def test_l1_strength_selection(planted_pool):
    """One table row per candidate; the chosen strength is among them"""
    universe = default_universe(planted_pool)
    grid = (1.0, 0.1, 0.01)
    strength, head, table = select_l1_strength(planted_pool, planted_pool, universe, grid)
    assert len(table) == 3
    assert strength in set(table["l1"])
    best = table.loc[table["l1"] == strength, "wg_acc"].iloc[0]
    assert best == table["wg_acc"].max()
