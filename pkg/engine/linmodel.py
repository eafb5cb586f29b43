"""
Dispel Linear Models
Closed-form ridge, full-batch gradient descent and weight diagnostics
"""

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from config import settings
from models.dataset import Dataset, ModelWeights, SpanDecomposition
from models.errors import DivergenceError, FactorizationError, NumericalError, ValidationError
from models.schemas import GdConfig, RidgeConfig
from utils.logger import get_logger

logger = get_logger("linmodel")


# ==================== HELPERS ====================

def _check_fit_input(data: Dataset):
    if data.n == 0:
        raise ValidationError("cannot fit on an empty dataset")
    if not np.all(np.isfinite(data.X)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(data.X), axis=1))[0])
        raise ValidationError(f"features contain NaN or Inf (first at row {bad})")


def _targets(data: Dataset) -> np.ndarray:
    return data.y.astype(np.float64)


def gram_and_moment(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(X^T X / n, X^T y / n) accumulated in float64 over row blocks"""
    n, d = X.shape
    G = np.zeros((d, d))
    m = np.zeros(d)
    step = settings.GRAM_BLOCK_ROWS
    for start in range(0, n, step):
        block = np.asarray(X[start:start + step], dtype=np.float64)
        G += block.T @ block
        m += block.T @ y[start:start + step]
    return G / n, m / n


def _solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cholesky solve; rejects factors whose pivots fall below the relative floor"""
    scale = float(np.max(np.abs(np.diag(A)))) or 1.0
    try:
        factor = cho_factor(A, lower=True, check_finite=False)
    except LinAlgError:
        smallest = float(np.linalg.eigvalsh(A)[0])
        raise FactorizationError(smallest)
    pivots = np.diag(factor[0]) ** 2
    smallest = float(pivots.min())
    if smallest <= settings.RIDGE_PIVOT_FLOOR * scale:
        raise FactorizationError(smallest)
    return cho_solve(factor, b, check_finite=False)


def _finite_or_raise(w: np.ndarray, what: str):
    if not np.all(np.isfinite(w)):
        raise NumericalError(f"{what} produced non-finite weights")


# ==================== RIDGE ====================

def ridge_fit(data: Dataset, cfg: RidgeConfig) -> ModelWeights:
    """
    Minimise mean squared error + lam * ||w||^2 (no bias).

    Solves ((1/n) X^T X + lam I) w = (1/n) X^T y with a Cholesky factorization.
    """
    _check_fit_input(data)
    G, m = gram_and_moment(data.X, _targets(data))
    G[np.diag_indices_from(G)] += cfg.lam
    w = _solve_spd(G, m)
    _finite_or_raise(w, "ridge_fit")
    logger.debug("ridge_fit_complete", extra={"n": data.n, "d": data.dim, "lambda": cfg.lam})
    return ModelWeights(w=w, b=None)


def ridge_gradient(weights: ModelWeights, data: Dataset, lam: float) -> np.ndarray:
    """Gradient of the ridge objective, used to certify optimality"""
    X = np.asarray(data.X, dtype=np.float64)
    r = X @ weights.w - _targets(data)
    return 2.0 * X.T @ r / data.n + 2.0 * lam * weights.w


def mixed_gram_path(
    d_ft: Dataset,
    d_bal: Dataset,
    partners: np.ndarray,
    s_values: Sequence[float],
    lam: float,
) -> List[ModelWeights]:
    """
    Ridge weights on the fully mixed data (alpha = 1) for every s at once.

    With P the matrix of partner rows, the mixed Gram is
    (1-s)^2 X^T X + s(1-s)(X^T P + P^T X) + s^2 P^T P, and the moment is
    (1-s) X^T y + s P^T y, so each s costs one d x d solve.
    """
    _check_fit_input(d_ft)
    partners = np.asarray(partners, dtype=np.int64)
    if len(partners) != d_ft.n or (partners < 0).any() or (partners >= d_bal.n).any():
        raise ValidationError("partners must give one valid balanced-row index per fine-tuning row")
    n = d_ft.n
    y = _targets(d_ft)
    XtX, Xty = gram_and_moment(d_ft.X, y)

    B = np.asarray(d_bal.X, dtype=np.float64)
    assign = sparse.csr_matrix(
        (np.ones(n), (partners, np.arange(n))), shape=(d_bal.n, n)
    )
    Z = np.asarray(assign @ np.asarray(d_ft.X, dtype=np.float64))
    counts = np.asarray(assign.sum(axis=1)).reshape(-1)
    XtP = Z.T @ B / n
    PtP = (B.T * counts) @ B / n
    Pty = B.T @ (assign @ y) / n

    cross = XtP + XtP.T
    out = []
    for s in s_values:
        G = (1 - s) ** 2 * XtX + s * (1 - s) * cross + s ** 2 * PtP
        G[np.diag_indices_from(G)] += lam
        w = _solve_spd(G, (1 - s) * Xty + s * Pty)
        _finite_or_raise(w, "mixed_gram_path")
        out.append(ModelWeights(w=w, b=None))
    return out


# ==================== GRADIENT DESCENT ====================

def predict(weights: ModelWeights, X: np.ndarray) -> np.ndarray:
    return weights.scores(np.asarray(X))


def mse_loss(weights: ModelWeights, data: Dataset, weight_decay: float = 0.0) -> float:
    r = predict(weights, data.X) - _targets(data)
    return float(np.mean(r * r) + weight_decay * np.dot(weights.w, weights.w))


def gradient(
    weights: ModelWeights, data: Dataset, weight_decay: float = 0.0
) -> Tuple[np.ndarray, Optional[float]]:
    """(d/dw, d/db) of the mean squared error plus weight_decay * ||w||^2"""
    r = predict(weights, data.X) - _targets(data)
    gw = 2.0 * (data.X.T @ r) / data.n + 2.0 * weight_decay * weights.w
    gb = 2.0 * float(r.sum()) / data.n if weights.has_bias else None
    return gw, gb


def lipschitz_step(data: Dataset, with_bias: bool, weight_decay: float = 0.0) -> float:
    """STEP_SAFETY * 2 / L, L = largest Hessian eigenvalue by power iteration"""
    X = np.asarray(data.X, dtype=np.float64)
    n = data.n

    def hess(v):
        w, b = v[:X.shape[1]], (v[-1] if with_bias else 0.0)
        r = X @ w + b
        out = X.T @ r / n
        return np.append(out, r.sum() / n) if with_bias else out

    v = np.ones(X.shape[1] + int(with_bias))
    v /= np.linalg.norm(v)
    top = 0.0
    for _ in range(settings.POWER_ITERATIONS):
        hv = hess(v)
        top = float(np.linalg.norm(hv))
        if top == 0.0:
            break
        v = hv / top
    L = 2.0 * top + 2.0 * weight_decay
    if L == 0.0:
        raise NumericalError("Hessian is zero; no step size can be derived")
    return settings.STEP_SAFETY * 2.0 / L


@dataclass
class Trajectory:
    """Weights sampled every record_every epochs (epoch 0 included)"""
    epochs: List[int] = field(default_factory=list)
    weights: List[ModelWeights] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    step_size: float = 0.0
    stopped_at: int = 0
    grad_norm: float = float("inf")

    def record(self, epoch: int, weights: ModelWeights, loss: float):
        self.epochs.append(epoch)
        self.weights.append(weights)
        self.losses.append(loss)

    def __len__(self) -> int:
        return len(self.weights)

    def __getitem__(self, i) -> ModelWeights:
        return self.weights[i]

    def __iter__(self) -> Iterator[ModelWeights]:
        return iter(self.weights)


def gd_finetune(data: Dataset, cfg: GdConfig) -> Tuple[ModelWeights, Trajectory]:
    """
    Full-batch gradient descent on the MSE from cfg.init.

    The bias is trained iff init carries one; weight decay never touches it.
    Stops after cfg.epochs or once the gradient norm is <= cfg.tol, and
    raises DivergenceError when the loss exceeds divergence_factor times its
    starting value.
    """
    _check_fit_input(data)
    init = cfg.init
    if init.dim != data.dim:
        raise ValidationError(f"dimension mismatch: init has {init.dim}, data has {data.dim}")

    step = cfg.step_size
    if step is None:
        step = lipschitz_step(data, init.has_bias, cfg.weight_decay)
    factor = cfg.divergence_factor or settings.DIVERGENCE_FACTOR

    w = np.array(init.w, dtype=np.float64)
    b = float(init.b) if init.has_bias else None
    current = init
    start_loss = mse_loss(current, data, cfg.weight_decay)
    limit = factor * max(start_loss, np.finfo(float).tiny)

    traj = Trajectory(step_size=step)
    traj.record(0, current, start_loss)

    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        gw, gb = gradient(current, data, cfg.weight_decay)
        gnorm = float(np.sqrt(gw @ gw + (gb * gb if gb is not None else 0.0)))
        traj.grad_norm = gnorm
        if gnorm <= cfg.tol:
            epoch -= 1
            break
        w = w - step * gw
        if b is not None:
            b = b - step * gb
        current = ModelWeights(w=w, b=b)
        loss = mse_loss(current, data, cfg.weight_decay)
        if not np.isfinite(loss) or loss > limit:
            logger.warning("gd_diverged", extra={"epoch": epoch, "loss": loss, "step": step})
            raise DivergenceError(epoch, loss)
        if epoch % cfg.record_every == 0:
            traj.record(epoch, current, loss)

    if traj.epochs[-1] != epoch:
        traj.record(epoch, current, mse_loss(current, data, cfg.weight_decay))
    traj.stopped_at = epoch
    if epoch == cfg.epochs:
        gw, gb = gradient(current, data, cfg.weight_decay)
        traj.grad_norm = float(np.sqrt(gw @ gw + (gb * gb if gb is not None else 0.0)))

    logger.debug(
        "gd_finetune_complete",
        extra={"epochs": epoch, "step": step, "grad_norm": traj.grad_norm, "loss": traj.losses[-1]},
    )
    return current, traj


# ==================== DIAGNOSTICS ====================

def alignment(weights: ModelWeights, coordinate: int) -> float:
    """w . e_k for the 1-based coordinate k (k=2 is the spurious coordinate)"""
    if not 1 <= coordinate <= weights.dim:
        raise ValidationError(f"coordinate {coordinate} outside 1..{weights.dim}")
    return float(weights.w[coordinate - 1])


def decompose(weights: ModelWeights) -> SpanDecomposition:
    if weights.dim < 3:
        raise ValidationError(f"decomposition needs d >= 3, got {weights.dim}")
    w = weights.w
    return SpanDecomposition(
        core_spur=(float(w[0]), float(w[1])),
        noise_norm=float(np.linalg.norm(w[2:])),
        full_norm=float(np.linalg.norm(w)),
    )


def decision_slope(weights: ModelWeights) -> float:
    """Slope -w2/w1 of the boundary in the (spurious, core) plane; 0 ignores the attribute"""
    w1, w2 = float(weights.w[0]), float(weights.w[1])
    if w1 == 0.0:
        return float("inf") if w2 != 0.0 else 0.0
    return -w2 / w1
