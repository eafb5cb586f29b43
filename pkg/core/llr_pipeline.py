"""
Dispel Last-Layer Retraining
Orchestration of split construction, mixing, head retraining and sweeps
over embedding datasets
"""

import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from engine.groupeval import evaluate_accuracy
from engine.logreg import FitHistory, fit_l1_averaged, fit_l1_logreg, fit_sgd_early_stop
from engine.mixer import mix
from models.dataset import Dataset, GroupId, ModelWeights
from models.errors import ValidationError
from models.schemas import (
    L1_INVERSE_GRID,
    ClassBalance,
    Decision,
    GroupUniverse,
    MixConfig,
    Optimizer,
    RetrainConfig,
    SplitPlan,
    SplitSource,
    SweepGrid,
)
from services.storage import load_dataset
from utils.logger import get_logger
from utils.rng import derive_seed
from utils.workers import map_ordered

logger = get_logger("llr_pipeline")


def _rng(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *labels)))


# ==================== LOADING AND SPLITS ====================

def load_embeddings(path: str, fmt: Optional[str] = None) -> Dataset:
    """Embedding file in the dataset CSV or DSPL binary layout"""
    data = load_dataset(path, fmt)
    if data.n == 0:
        raise ValidationError(f"embedding file {path} has no rows")
    logger.info("embeddings_loaded", extra={"path": str(path), "n": data.n, "d": data.dim, "groups": len(data.groups)})
    return data


def split_validation(data: Dataset, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Seeded half split, stratified by group.

    Each group's rows are shuffled; the first ceil(size/2) go to the first
    half. Both halves keep the original row order.
    """
    first: List[np.ndarray] = []
    second: List[np.ndarray] = []
    for g, idx in data.group_index.items():
        perm = _rng(seed, "split", g[0], g[1]).permutation(idx)
        cut = (len(idx) + 1) // 2
        first.append(perm[:cut])
        second.append(perm[cut:])
    a = np.sort(np.concatenate(first)) if first else np.zeros(0, dtype=np.int64)
    b = np.sort(np.concatenate(second)) if second else np.zeros(0, dtype=np.int64)
    return data.subset(a), data.subset(b)


def _draw(rng: np.random.Generator, pool: np.ndarray, count: int) -> np.ndarray:
    """count rows from pool, with replacement only when the pool is too small"""
    if count <= len(pool):
        return np.sort(rng.choice(pool, size=count, replace=False))
    return rng.choice(pool, size=count, replace=True)


def build_ft_split(data: Dataset, plan: SplitPlan) -> Dataset:
    """
    Class-balance the fine-tuning rows.

    upsample_minor_class duplicates uniformly drawn rows of every smaller
    class until all classes match the largest; quota samples each class (or
    group) to its count; as_is returns the input.
    """
    if data.n == 0:
        raise ValidationError("cannot build a fine-tuning split from an empty dataset")
    if plan.class_balance == ClassBalance.AS_IS:
        return data

    parts: List[np.ndarray] = []
    if plan.class_balance == ClassBalance.UPSAMPLE_MINOR_CLASS:
        counts = data.class_counts()
        target = max(counts.values())
        parts.append(np.arange(data.n))
        for c, count in counts.items():
            if count < target:
                pool = np.flatnonzero(data.y == c)
                parts.append(_rng(plan.seed, "upsample", c).choice(pool, size=target - count, replace=True))
    elif plan.group_quota:
        for g, count in plan.group_quota.items():
            g = tuple(g)
            if g not in data.group_index:
                raise ValidationError(f"quota references group {g}, which has no rows")
            parts.append(_draw(_rng(plan.seed, "quota", g[0], g[1]), data.group_index[g], count))
    else:
        for c, count in plan.class_quota.items():
            pool = np.flatnonzero(data.y == c)
            if len(pool) == 0:
                raise ValidationError(f"quota references class {c}, which has no rows")
            parts.append(_draw(_rng(plan.seed, "quota", c), pool, count))

    out = data.subset(np.concatenate(parts))
    logger.info(
        "ft_split_built",
        extra={"mode": plan.class_balance.value, "rows_in": data.n, "rows_out": out.n},
    )
    return out


def resolve_l(data: Dataset, l: Union[int, str], groups: Optional[Sequence[GroupId]] = None) -> int:
    groups = list(groups) if groups is not None else data.groups
    if l == "max":
        sizes = [len(data.group_index.get(tuple(g), ())) for g in groups]
        if not sizes or min(sizes) == 0:
            raise ValidationError("l=max needs every requested group to have rows")
        return min(sizes)
    return int(l)


def build_balanced_split(
    data: Dataset,
    l: Union[int, str],
    seed: int,
    groups: Optional[Sequence[GroupId]] = None,
) -> Dataset:
    """
    Exactly l rows per group, without replacement.

    `groups` restricts sampling to the available groups (missing-group
    mode); by default every group present in data is used.
    """
    groups = [tuple(g) for g in groups] if groups is not None else data.groups
    if not groups:
        raise ValidationError("no groups to draw a balanced split from")
    l = resolve_l(data, l, groups)
    if l < 1:
        raise ValidationError(f"l must be >= 1, got {l}")
    parts = []
    for g in groups:
        idx = data.group_index.get(g)
        size = 0 if idx is None else len(idx)
        if l > size:
            raise ValidationError(f"l={l} exceeds the {size} rows of group {g}")
        parts.append(np.sort(_rng(seed, "balanced", g[0], g[1]).choice(idx, size=l, replace=False)))
    return data.subset(np.concatenate(parts))


def prepare_splits(
    val_pool: Dataset,
    plan: SplitPlan,
    train: Optional[Dataset] = None,
    bal_groups: Optional[Sequence[GroupId]] = None,
) -> Tuple[Dataset, Dataset, Dataset]:
    """
    (D_FT, D_bal, selection set) from a validation pool.

    D_bal always comes from the first validation half and model selection
    uses the second; D_FT comes from the same half, or from `train` when
    plan.source is training.
    """
    half, held_out = split_validation(val_pool, plan.seed)
    if plan.source == SplitSource.TRAINING:
        if train is None:
            raise ValidationError("training-source split needs a training dataset")
        d_ft = build_ft_split(train, plan)
    else:
        d_ft = build_ft_split(half, plan)
    d_bal = build_balanced_split(half, plan.l_per_group, plan.seed, groups=bal_groups)
    return d_ft, d_bal, held_out


# ==================== RETRAINING ====================

def head_classes(train: Dataset, universe: GroupUniverse) -> List[int]:
    """Labels seen in training plus those the evaluation universe declares"""
    return sorted(set(train.classes) | {int(g[1]) for g in universe.groups})


def retrain_head(
    d_mixed: Dataset,
    val: Dataset,
    cfg: RetrainConfig,
    universe: GroupUniverse,
    classes: Optional[Sequence[int]] = None,
) -> ModelWeights:
    weights, _ = retrain_head_with_history(d_mixed, val, cfg, universe, classes)
    return weights


def retrain_head_with_history(
    d_mixed: Dataset,
    val: Dataset,
    cfg: RetrainConfig,
    universe: GroupUniverse,
    classes: Optional[Sequence[int]] = None,
) -> Tuple[ModelWeights, Optional[FitHistory]]:
    classes = list(classes) if classes is not None else head_classes(d_mixed, universe)
    if cfg.optimizer == Optimizer.SGD_EARLY_STOP:
        return fit_sgd_early_stop(d_mixed, val, cfg, universe, classes)
    return fit_l1_averaged(d_mixed, cfg, classes), None


def decision_for(weights: ModelWeights) -> Decision:
    return Decision.ARGMAX if weights.multiclass else Decision.SIGN


def select_l1_strength(
    train: Dataset,
    val: Dataset,
    universe: GroupUniverse,
    grid: Sequence[float] = L1_INVERSE_GRID,
    class_weights: Optional[Dict[int, float]] = None,
) -> Tuple[float, ModelWeights, pd.DataFrame]:
    """
    Try l1_strength = 1 / (C n) for each inverse strength C and keep the best
    worst-group validation accuracy (earlier C wins ties).
    """
    classes = head_classes(train, universe)
    rows = []
    best = None
    for C in grid:
        strength = 1.0 / (C * train.n)
        head = fit_l1_logreg(train, strength, classes, class_weights)
        worst = evaluate_accuracy(head, val, universe, decision_for(head)).worst_value
        rows.append({"C": C, "l1": strength, "wg_acc": worst})
        if best is None or worst > best[0]:
            best = (worst, strength, head)
    return best[1], best[2], pd.DataFrame(rows)


# ==================== SWEEPS ====================

def mix_and_retrain(
    d_ft: Dataset,
    d_bal: Dataset,
    val: Dataset,
    alpha: float,
    s: float,
    cfg: RetrainConfig,
    universe: GroupUniverse,
    classes: Optional[Sequence[int]] = None,
) -> ModelWeights:
    """
    One sweep cell. s = 0 reproduces D_FT and (alpha, s) = (1, 1) trains on
    D_bal rows alone, so both single-source heads are cells of the grid.
    """
    mixed, _ = mix(d_ft, d_bal, MixConfig(alpha=alpha, s=s, seed=derive_seed(cfg.seed, "mix", alpha, s)))
    return retrain_head(mixed, val, cfg, universe, classes)


@dataclass
class SweepResult:
    table: pd.DataFrame
    best_weights: ModelWeights
    best_alpha: float
    best_s: float
    best_value: float


def sweep(
    d_ft: Dataset,
    d_bal: Dataset,
    val: Dataset,
    grid: SweepGrid,
    cfg: RetrainConfig,
    universe: GroupUniverse,
) -> SweepResult:
    """
    Mix, retrain and score every (alpha, s) cell.

    Cells run on the worker pool, each with its own derived mixing seed.
    The best cell maximises worst-group validation accuracy; ties go to the
    smaller s, then the smaller alpha.
    """
    if not grid.alphas or not grid.s_values:
        raise ValidationError("sweep grid is empty")
    start = time.perf_counter()
    classes = head_classes(d_ft, universe)
    cells = [(alpha, s) for alpha in grid.alphas for s in grid.s_values]

    def run_cell(cell):
        head = mix_and_retrain(d_ft, d_bal, val, cell[0], cell[1], cfg, universe, classes)
        worst = evaluate_accuracy(head, val, universe, decision_for(head)).worst_value
        return worst, head

    results = map_ordered(run_cell, cells)
    table = pd.DataFrame(
        [{"alpha": a, "s": s, "wg_acc": r[0]} for (a, s), r in zip(cells, results)]
    )
    order = sorted(range(len(cells)), key=lambda i: (-results[i][0], cells[i][1], cells[i][0]))
    i = order[0]
    logger.info(
        "sweep_complete",
        extra={
            "cells": len(cells),
            "best_alpha": cells[i][0],
            "best_s": cells[i][1],
            "best_wg_acc": results[i][0],
            "duration_s": round(time.perf_counter() - start, 2),
        },
    )
    return SweepResult(
        table=table,
        best_weights=results[i][1],
        best_alpha=cells[i][0],
        best_s=cells[i][1],
        best_value=results[i][0],
    )


def heatmap(table: pd.DataFrame) -> pd.DataFrame:
    """alpha rows x s columns, in first-appearance order"""
    out = table.pivot(index="alpha", columns="s", values="wg_acc")
    out = out.reindex(index=pd.unique(table["alpha"]), columns=pd.unique(table["s"]))
    out.index.name = "alpha"
    out.columns.name = "s"
    return out
