"""
Dispel Group Evaluation
Per-group, worst-group and average accuracy / squared error
"""

import math
from typing import Dict, List, Mapping, Optional

import numpy as np

from models.dataset import Dataset, GroupId, ModelWeights
from models.errors import EmptyGroupError, ValidationError
from models.schemas import Decision, GroupReport, GroupStat, GroupUniverse, Metric, build


def default_universe(data: Dataset, restriction: Optional[List[GroupId]] = None) -> GroupUniverse:
    """Groups present in data, plus any restriction group (empty ones fail at evaluation)"""
    groups = list(data.groups)
    for g in restriction or ():
        if tuple(g) not in groups:
            groups.append(tuple(g))
    return build(GroupUniverse, groups=groups, restriction=restriction)


def predict_labels(
    weights: ModelWeights,
    X: np.ndarray,
    decision: Decision = Decision.SIGN,
    threshold: float = 0.0,
) -> np.ndarray:
    """
    Class predictions from scores.

    Binary heads predict classes[1] when the score is >= the threshold
    (0 for sign, so exact ties go to the positive class). One-vs-rest heads
    need the argmax decision; argmax on a binary head behaves like sign.
    """
    scores = weights.scores(np.asarray(X))
    classes = np.asarray(weights.classes, dtype=np.int64)
    if weights.multiclass:
        if decision != Decision.ARGMAX:
            raise ValidationError("one-vs-rest heads need the argmax decision")
        return classes[np.argmax(scores, axis=1)]
    t = threshold if decision == Decision.THRESHOLD else 0.0
    return np.where(scores >= t, classes[1], classes[0])


def _check_rows(data: Dataset, universe: GroupUniverse):
    if data.n == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    unknown = [g for g in data.groups if g not in universe.groups]
    if unknown:
        raise ValidationError(f"rows belong to groups outside the universe: {unknown}")


def _report(per_row: np.ndarray, data: Dataset, universe: GroupUniverse, metric: Metric) -> GroupReport:
    _check_rows(data, universe)
    per_group: Dict[GroupId, GroupStat] = {}
    for g in universe.groups:
        idx = data.group_index.get(g)
        if idx is None or len(idx) == 0:
            if g in universe.reduction_groups:
                raise EmptyGroupError(g)
            continue
        if metric == Metric.ACCURACY:
            value = int(per_row[idx].sum()) / len(idx)
        else:
            value = math.fsum(per_row[idx]) / len(idx)
        per_group[g] = GroupStat(count=len(idx), value=value)

    reduction = universe.reduction_groups
    pick = min if metric == Metric.ACCURACY else max
    worst = pick(reduction, key=lambda g: per_group[g].value)
    if metric == Metric.ACCURACY:
        average = int(per_row.sum()) / data.n
    else:
        average = math.fsum(per_row) / data.n
    return GroupReport(
        metric=metric,
        per_group=per_group,
        worst_group=worst,
        worst_value=per_group[worst].value,
        average=average,
        reduction=reduction,
    )


def evaluate_accuracy(
    weights: ModelWeights,
    data: Dataset,
    universe: Optional[GroupUniverse] = None,
    decision: Decision = Decision.SIGN,
    threshold: float = 0.0,
) -> GroupReport:
    """Accuracy per group; worst = lowest over the restriction"""
    universe = universe or default_universe(data)
    correct = predict_labels(weights, data.X, decision, threshold) == data.y
    return _report(correct, data, universe, Metric.ACCURACY)


def evaluate_mse(
    weights: ModelWeights,
    data: Dataset,
    universe: Optional[GroupUniverse] = None,
) -> GroupReport:
    """Mean squared error per group; worst = highest over the restriction"""
    universe = universe or default_universe(data)
    if weights.multiclass:
        raise ValidationError("squared error needs a single-output head")
    r = weights.scores(data.X) - data.y.astype(np.float64)
    return _report(r * r, data, universe, Metric.MSE)


def coarsen(report: GroupReport, mapping: Mapping[GroupId, GroupId]) -> GroupReport:
    """
    Merge groups of a report. Groups not in mapping keep their id; a merged
    group joins the reduction when any of its parts was in it.
    """
    counts: Dict[GroupId, int] = {}
    totals: Dict[GroupId, float] = {}
    for g, st in report.per_group.items():
        key = tuple(mapping.get(g, g))
        mass = st.count * st.value
        if report.metric == Metric.ACCURACY:
            mass = round(mass)
        counts[key] = counts.get(key, 0) + st.count
        totals[key] = totals.get(key, 0) + mass

    per_group = {g: GroupStat(count=counts[g], value=totals[g] / counts[g]) for g in counts}
    reduction: List[GroupId] = []
    for g in report.reduction:
        key = tuple(mapping.get(g, g))
        if key not in reduction:
            reduction.append(key)
    pick = min if report.metric == Metric.ACCURACY else max
    worst = pick(reduction, key=lambda g: per_group[g].value)
    return GroupReport(
        metric=report.metric,
        per_group=per_group,
        worst_group=worst,
        worst_value=per_group[worst].value,
        average=report.average,
        reduction=reduction,
    )
