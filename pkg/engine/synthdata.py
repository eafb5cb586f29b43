"""
Dispel Synthetic Data
Gaussian core/spurious/noise family, balanced and single-group variants,
and the planted embedding benchmark
"""

from typing import Optional, Tuple

import numpy as np

from config import settings
from models.dataset import Dataset
from models.errors import ValidationError
from models.schemas import DistSpec, PlantedSpec, SpuriousMode
from utils.logger import get_logger
from utils.rng import CounterStream

logger = get_logger("synthdata")

# Counter blocks: each consumer of randomness gets its own
BLOCK_LABELS = 0
BLOCK_SIGNAL = 1
BLOCK_TAIL = 2


def _check_count(n: int, what: str = "n"):
    if n < 1:
        raise ValidationError(f"empty dataset requested ({what}={n}); need at least one row")


def _fill_features(
    stream: CounterStream,
    spec: DistSpec,
    y: np.ndarray,
    a: np.ndarray,
    dtype,
) -> np.ndarray:
    """x1 ~ N(y, s1^2), x2 ~ N(a, s2^2), tail ~ N(0, s_xi^2 / (d - 2)) per coordinate"""
    n = len(y)
    X = np.empty((n, spec.d), dtype=dtype)
    tail = spec.d - 2
    step = settings.GRAM_BLOCK_ROWS
    for start in range(0, n, step):
        stop = min(n, start + step)
        z = stream.normals(BLOCK_SIGNAL, start, stop, 2)
        X[start:stop, 0] = y[start:stop] + spec.sigma1 * z[:, 0]
        X[start:stop, 1] = a[start:stop] + spec.sigma2 * z[:, 1]
        X[start:stop, 2:] = spec.tail_std * stream.normals(BLOCK_TAIL, start, stop, tail)
    return X


def sample_dataset(spec: DistSpec, n: int, seed: int, dtype=np.float64) -> Dataset:
    """
    Draw n i.i.d. rows from the family described by spec.

    Labels are uniform on {+1, -1}; the attribute equals the label with
    probability mu (always 0 when the spurious coordinate is absent).
    Identical (spec, n, seed) give bit-identical output.
    """
    _check_count(n)
    stream = CounterStream(seed, "dataset")
    u = stream.uniforms(BLOCK_LABELS, 0, n, 2)
    y = np.where(u[:, 0] < 0.5, 1, -1).astype(np.int64)
    if spec.spurious_mode == SpuriousMode.ABSENT:
        a = np.zeros(n, dtype=np.int64)
    else:
        a = np.where(u[:, 1] < spec.mu, y, -y)
    X = _fill_features(stream, spec, y, a, dtype)
    logger.debug("sample_dataset", extra={"n": n, "d": spec.d, "mu": spec.mu, "seed": seed})
    return Dataset(X=X, y=y, a=a)


def sample_balanced(spec: DistSpec, m: int, seed: int, dtype=np.float64) -> Dataset:
    """m rows with exactly m / #groups per group, groups assigned round-robin"""
    groups = spec.groups
    if m < 1 or m % len(groups) != 0:
        raise ValidationError(
            f"balanced sample size m={m} must be a positive multiple of the "
            f"{len(groups)} groups"
        )
    stream = CounterStream(seed, "balanced")
    order = np.arange(m) % len(groups)
    a = np.array([groups[i][0] for i in order], dtype=np.int64)
    y = np.array([groups[i][1] for i in order], dtype=np.int64)
    X = _fill_features(stream, spec, y, a, dtype)
    return Dataset(X=X, y=y, a=a)


def sample_single_group(spec: DistSpec, y: int, a: int, m: int, seed: int, dtype=np.float64) -> Dataset:
    _check_count(m, "m")
    if y not in (1, -1):
        raise ValidationError(f"label must be +1 or -1, got {y}")
    allowed = (0,) if spec.spurious_mode == SpuriousMode.ABSENT else (1, -1)
    if a not in allowed:
        raise ValidationError(
            f"attribute {a} is not valid when the spurious coordinate is {spec.spurious_mode.value}"
        )
    stream = CounterStream(seed, f"single_group:{a}|{y}")
    ys = np.full(m, y, dtype=np.int64)
    as_ = np.full(m, a, dtype=np.int64)
    X = _fill_features(stream, spec, ys, as_, dtype)
    return Dataset(X=X, y=ys, a=as_)


def statistical_identity_check(data: Dataset, spec: DistSpec) -> Tuple[float, float]:
    """
    Finite-sample version of E[x y] = [1, 2p - 1, 0, ...].

    Returns (deviation, bound) with deviation the sup-norm distance of the
    empirical moment from its limit and bound = 5 max(1, s1, s_xi / sqrt(d-2)) / sqrt(n).
    """
    y = data.y.astype(np.float64)
    moment = data.X.T.astype(np.float64) @ y / data.n
    target = np.zeros(data.dim)
    target[0] = 1.0
    if spec.spurious_mode == SpuriousMode.PRESENT:
        target[1] = 2.0 * spec.mu - 1.0
    deviation = float(np.max(np.abs(moment - target)))
    bound = 5.0 * max(1.0, spec.sigma1, spec.tail_std) / np.sqrt(data.n)
    return deviation, bound


# ==================== PLANTED BENCHMARK ====================

def sample_planted_benchmark(
    spec: PlantedSpec,
    n: int,
    seed: int,
    mu: Optional[float] = None,
    drop_group: Optional[Tuple[int, int]] = None,
) -> Dataset:
    """
    Embedding-like rows with labels and attributes in {0, 1}.

    Coordinate 0 carries the label (+/- core_scale), coordinate 1 the
    attribute (+/- spu_scale), the rest is isotropic noise with per-coordinate
    std sigma_noise. `mu` overrides P(a = y); rows of `drop_group` (a, y) are
    rejected and redrawn from later counters until n rows are kept.
    """
    _check_count(n)
    mu = spec.mu if mu is None else mu
    if not 0.0 <= mu <= 1.0:
        raise ValidationError(f"mu={mu} outside [0, 1]")
    stream = CounterStream(seed, f"planted:{mu!r}")

    # Oversample then keep the first n admissible rows
    pool = n if drop_group is None else 2 * n + 64
    while True:
        u = stream.uniforms(BLOCK_LABELS, 0, pool, 2)
        y = (u[:, 0] < 0.5).astype(np.int64)
        a = np.where(u[:, 1] < mu, y, 1 - y)
        keep = np.ones(pool, dtype=bool)
        if drop_group is not None:
            keep = ~((a == drop_group[0]) & (y == drop_group[1]))
        if keep.sum() >= n or drop_group is None:
            break
        if pool > 64 * n:
            raise ValidationError(f"dropping group {drop_group} leaves too few rows at mu={mu}")
        pool *= 2
    rows = np.flatnonzero(keep)[:n]
    y, a = y[rows], a[rows]

    X = np.empty((n, spec.dim), dtype=np.float64)
    step = settings.GRAM_BLOCK_ROWS
    for start in range(0, n, step):
        stop = min(n, start + step)
        src = rows[start:stop]
        lo, hi = int(src[0]), int(src[-1]) + 1
        z = stream.normals(BLOCK_TAIL, lo, hi, spec.dim)[src - lo]
        X[start:stop] = spec.sigma_noise * z
        X[start:stop, 0] = spec.core_scale * (2 * y[start:stop] - 1) + spec.sigma_core * z[:, 0]
        X[start:stop, 1] = spec.spu_scale * (2 * a[start:stop] - 1) + spec.sigma_spu * z[:, 1]
    return Dataset(X=X, y=y, a=a)
