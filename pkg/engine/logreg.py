"""
Dispel Logistic Heads
Binary / one-vs-rest logistic regression: minibatch SGD with worst-group
early stopping, and proximal l1 fits averaged over random subsets
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from config import settings
from engine.groupeval import evaluate_accuracy
from models.dataset import Dataset, ModelWeights
from models.errors import DivergenceError, ValidationError
from models.schemas import Decision, GroupUniverse, RetrainConfig
from utils.logger import get_logger
from utils.rng import derive_seed

logger = get_logger("logreg")


# ==================== OBJECTIVE ====================

def _targets(y: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    """(n, heads) 0/1 targets; one head for two classes, one per class otherwise"""
    classes = list(classes)
    if len(classes) == 2:
        return (y == classes[1]).astype(np.float64)[:, None]
    return (y[:, None] == np.asarray(classes)[None, :]).astype(np.float64)


def _sample_weights(y: np.ndarray, class_weights: Optional[dict]) -> np.ndarray:
    if not class_weights:
        return np.ones(len(y))
    return np.array([class_weights.get(int(c), 1.0) for c in y], dtype=np.float64)


def logistic_loss_grad(
    W: np.ndarray,
    b: np.ndarray,
    X: np.ndarray,
    T: np.ndarray,
    sw: np.ndarray,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Weighted mean cross-entropy summed over heads, with its gradient"""
    Z = X @ W.T + b
    total = sw.sum()
    loss = float((sw[:, None] * (np.logaddexp(0.0, Z) - T * Z)).sum() / total)
    R = sw[:, None] * (expit(Z) - T) / total
    return loss, R.T @ X, R.sum(axis=0)


def soft_threshold(W: np.ndarray, t: float) -> np.ndarray:
    return np.sign(W) * np.maximum(np.abs(W) - t, 0.0)


def _head(W: np.ndarray, b: np.ndarray, classes: Sequence[int]) -> ModelWeights:
    if len(classes) == 2:
        return ModelWeights(w=W[0], b=float(b[0]), classes=tuple(classes))
    return ModelWeights(w=W, b=b, classes=tuple(classes))


def _check(train: Dataset, classes: Sequence[int]):
    if train.n == 0:
        raise ValidationError("cannot train a head on an empty dataset")
    if len(classes) < 2:
        raise ValidationError(f"need at least two classes, got {list(classes)}")
    unknown = set(train.classes) - set(classes)
    if unknown:
        raise ValidationError(f"training labels {sorted(unknown)} are not among classes {list(classes)}")


# ==================== SGD WITH EARLY STOPPING ====================

@dataclass
class FitHistory:
    """Per-epoch training loss and worst-group validation accuracy"""
    train_loss: List[float] = field(default_factory=list)
    val_worst: List[float] = field(default_factory=list)
    best_epoch: int = 0
    best_value: float = -1.0

    @property
    def epochs_run(self) -> int:
        return len(self.val_worst)


def fit_sgd_early_stop(
    train: Dataset,
    val: Dataset,
    cfg: RetrainConfig,
    universe: GroupUniverse,
    classes: Sequence[int],
) -> Tuple[ModelWeights, FitHistory]:
    """
    Minibatch SGD on the logistic loss from zero weights.

    After every epoch the head is scored on val by worst-group accuracy; the
    best epoch's weights are returned (earliest on ties) and training stops
    after `patience` epochs without improvement. An l1_strength > 0 adds a
    soft-threshold step after each update.
    """
    _check(train, classes)
    X = np.asarray(train.X, dtype=np.float64)
    T = _targets(train.y, classes)
    sw = _sample_weights(train.y, cfg.class_weights)
    heads = T.shape[1]
    W = np.zeros((heads, train.dim))
    b = np.zeros(heads)
    batch = cfg.batch_size or settings.SGD_BATCH_SIZE
    rng = np.random.Generator(np.random.Philox(key=derive_seed(cfg.seed, "sgd")))
    decision = Decision.SIGN if heads == 1 else Decision.ARGMAX

    history = FitHistory()
    best = _head(W, b, classes)
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train.n)
        for start in range(0, train.n, batch):
            rows = order[start:start + batch]
            _, gW, gb = logistic_loss_grad(W, b, X[rows], T[rows], sw[rows])
            W = W - cfg.learning_rate * gW
            b = b - cfg.learning_rate * gb
            if cfg.l1_strength > 0:
                W = soft_threshold(W, cfg.learning_rate * cfg.l1_strength)

        loss, _, _ = logistic_loss_grad(W, b, X, T, sw)
        if not np.isfinite(loss) or not np.all(np.isfinite(W)):
            logger.warning("sgd_diverged", extra={"epoch": epoch, "loss": loss})
            raise DivergenceError(epoch, loss)
        current = _head(W, b, classes)
        worst = evaluate_accuracy(current, val, universe, decision).worst_value
        history.train_loss.append(loss)
        history.val_worst.append(worst)

        if worst > history.best_value:
            history.best_value = worst
            history.best_epoch = epoch
            best = current
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    logger.debug(
        "sgd_early_stop_complete",
        extra={
            "epochs_run": history.epochs_run,
            "best_epoch": history.best_epoch,
            "best_val_worst": history.best_value,
        },
    )
    return best, history


# ==================== PROXIMAL L1 ====================

def _lipschitz(X: np.ndarray, sw: np.ndarray) -> float:
    """Upper bound on the logistic Hessian: ||diag(sw) [X 1]||^2 / (4 sum(sw))"""
    Xa = np.hstack([X, np.ones((X.shape[0], 1))]) * np.sqrt(sw)[:, None]
    v = np.ones(Xa.shape[1]) / np.sqrt(Xa.shape[1])
    top = 0.0
    for _ in range(settings.POWER_ITERATIONS):
        hv = Xa.T @ (Xa @ v)
        top = float(np.linalg.norm(hv))
        if top == 0.0:
            break
        v = hv / top
    return max(top, 1e-12) / (4.0 * sw.sum())


def fit_l1_logreg(
    train: Dataset,
    l1_strength: float,
    classes: Sequence[int],
    class_weights: Optional[dict] = None,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> ModelWeights:
    """
    l1-penalised logistic regression by accelerated proximal gradient.

    Minimises mean cross-entropy + l1_strength * ||w||_1 (bias unpenalised)
    with step STEP_SAFETY / L; stops when a step moves the parameters by
    less than tol relative to their norm, or after max_iter iterations.
    """
    _check(train, classes)
    max_iter = max_iter or settings.LOGREG_MAX_ITER
    tol = settings.LOGREG_TOL if tol is None else tol
    X = np.asarray(train.X, dtype=np.float64)
    T = _targets(train.y, classes)
    sw = _sample_weights(train.y, class_weights)
    step = settings.STEP_SAFETY / _lipschitz(X, sw)

    heads = T.shape[1]
    W = np.zeros((heads, train.dim))
    b = np.zeros(heads)
    VW, vb = W.copy(), b.copy()
    momentum = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        loss, gW, gb = logistic_loss_grad(VW, vb, X, T, sw)
        if not np.isfinite(loss):
            raise DivergenceError(it, loss)
        W_next = soft_threshold(VW - step * gW, step * l1_strength)
        b_next = vb - step * gb
        nxt = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum ** 2))
        VW = W_next + ((momentum - 1.0) / nxt) * (W_next - W)
        vb = b_next + ((momentum - 1.0) / nxt) * (b_next - b)
        moved = np.sqrt(np.sum((W_next - W) ** 2) + np.sum((b_next - b) ** 2))
        size = np.sqrt(np.sum(W ** 2) + np.sum(b ** 2))
        W, b, momentum = W_next, b_next, nxt
        if moved <= tol * max(1.0, size):
            break
    logger.debug("l1_logreg_complete", extra={"iterations": it, "l1": l1_strength, "rows": train.n})
    return _head(W, b, classes)


def fit_l1_averaged(train: Dataset, cfg: RetrainConfig, classes: Sequence[int]) -> ModelWeights:
    """
    Mean of subset_repeats l1 fits, each on a random subset_fraction of rows.

    The mean is taken over sorted per-coordinate values, so it does not
    depend on the order in which subsets were drawn.
    """
    size = max(1, int(round(cfg.subset_fraction * train.n)))
    fits = []
    for k in range(cfg.subset_repeats):
        if size >= train.n:
            rows = np.arange(train.n)
        else:
            rng = np.random.Generator(np.random.Philox(key=derive_seed(cfg.seed, "subset", k)))
            rows = np.sort(rng.choice(train.n, size=size, replace=False))
        sub = train.subset(rows)
        present = set(sub.classes)
        if not present <= set(classes):
            raise ValidationError(f"subset labels {sorted(present)} outside classes {list(classes)}")
        fits.append(fit_l1_logreg(sub, cfg.l1_strength, classes, cfg.class_weights))
    return average_heads(fits)


def average_heads(fits: Sequence[ModelWeights]) -> ModelWeights:
    if len(fits) == 1:
        return fits[0]
    W = np.sort(np.stack([f.w for f in fits]), axis=0).mean(axis=0)
    b = np.sort(np.stack([np.atleast_1d(f.b) for f in fits]), axis=0).mean(axis=0)
    if W.ndim == 1:
        return ModelWeights(w=W, b=float(b[0]), classes=fits[0].classes)
    return ModelWeights(w=W, b=b, classes=fits[0].classes)
