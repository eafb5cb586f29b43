"""
Dispel Mixer
Convex mixing of fine-tuning rows with group-balanced partners
"""

from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from models.dataset import Dataset, MixTrace
from models.errors import ValidationError
from models.schemas import MixConfig
from utils.logger import get_logger
from utils.rng import CounterStream

logger = get_logger("mixer")

BLOCK_BERNOULLI = 0
BLOCK_PARTNER = 1


def build_class_pools(
    d_bal: Dataset,
    class_labels: Optional[Iterable[int]] = None,
) -> Dict[int, np.ndarray]:
    """
    Row indices of d_bal per label.

    Labels listed in class_labels but absent from d_bal get empty pools.
    """
    if d_bal.n == 0:
        raise ValidationError("balanced dataset is empty; nothing to mix with")
    pools = {int(c): np.flatnonzero(d_bal.y == c) for c in np.unique(d_bal.y)}
    for c in (class_labels if class_labels is not None else ()):
        pools.setdefault(int(c), np.zeros(0, dtype=np.int64))
    return dict(sorted(pools.items()))


def draw_partners(
    d_ft: Dataset,
    d_bal: Dataset,
    cfg: MixConfig,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-row Bernoulli(alpha) flags and partner indices into d_bal.

    Draws depend only on (seed, row), never on s, so one seed gives the same
    partners along an s-sweep.
    """
    n = d_ft.n
    stream = CounterStream(cfg.seed, "mix")
    mixed = stream.uniforms(BLOCK_BERNOULLI, 0, n, 1)[:, 0] < cfg.alpha

    pools = build_class_pools(d_bal, class_labels=np.unique(d_ft.y))
    sizes = np.array([len(pools[int(c)]) for c in d_ft.y], dtype=np.int64)
    cross = sizes == 0
    bounds = np.where(cross, d_bal.n, sizes)
    slot = stream.integers(BLOCK_PARTNER, 0, n, bounds)

    partner = np.empty(n, dtype=np.int64)
    for c, pool in pools.items():
        rows = np.flatnonzero((d_ft.y == c) & ~cross)
        if len(rows):
            partner[rows] = pool[slot[rows]]
    partner[cross] = slot[cross]

    partner = np.where(mixed, partner, -1)
    return mixed, partner, cross & mixed


def mix(d_ft: Dataset, d_bal: Dataset, cfg: MixConfig) -> Tuple[Dataset, MixTrace]:
    """
    Mix each row of d_ft with probability alpha.

    A mixed row becomes (1 - s) x + s x', x' drawn uniformly with replacement
    from the same class in d_bal, or from all of d_bal when that class is
    missing there. Labels and (a, y) metadata are those of the d_ft row.
    """
    if d_ft.dim != d_bal.dim:
        raise ValidationError(
            f"dimension mismatch: fine-tuning data has {d_ft.dim}, balanced data has {d_bal.dim}"
        )
    if d_ft.n == 0:
        raise ValidationError("fine-tuning dataset is empty")
    mixed, partner, cross = draw_partners(d_ft, d_bal, cfg)

    X = np.array(d_ft.X, copy=True)
    rows = np.flatnonzero(mixed)
    if len(rows):
        X[rows] = (1.0 - cfg.s) * d_ft.X[rows] + cfg.s * d_bal.X[partner[rows]]

    trace = MixTrace(mixed=mixed, partner=partner, cross_class=cross)
    logger.info(
        "mix_complete",
        extra={
            "rows": d_ft.n,
            "alpha": cfg.alpha,
            "s": cfg.s,
            "mix_rate": round(trace.mix_rate, 6),
            "cross_class_rows": int(cross.sum()),
        },
    )
    return Dataset(X=X, y=d_ft.y, a=d_ft.a), trace


def mix_rate(trace: MixTrace) -> float:
    return trace.mix_rate
