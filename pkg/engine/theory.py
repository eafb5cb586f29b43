"""
Dispel Theory
Asymptotic worst-group loss of ridge on mixed data, and its Monte Carlo check
"""

from typing import Dict, Sequence, Tuple, Union

import numpy as np

from config import settings
from engine.linmodel import mixed_gram_path
from engine.mixer import draw_partners
from engine.synthdata import sample_balanced, sample_dataset
from models.dataset import ModelWeights
from models.errors import SingularityError, ValidationError
from models.schemas import DistSpec, MixConfig, PsiValues, TheoryParams, TheoryVariant
from utils.logger import get_logger
from utils.rng import derive_seed
from utils.workers import map_ordered

logger = get_logger("theory")

VariantLike = Union[TheoryVariant, str, None]


def _variant(variant: VariantLike) -> TheoryVariant:
    if variant is None:
        return TheoryVariant(settings.DEFAULT_VARIANT)
    if isinstance(variant, TheoryVariant):
        return variant
    return TheoryVariant.from_flag(variant)


# ==================== CLOSED FORM ====================

def psi(params: TheoryParams) -> PsiValues:
    p, s, r, s1, lam = params.p, params.s, params.r, params.sigma1, params.lam
    c = 2.0 * p - 1.0
    t = (1.0 - s) ** 2
    q = lam / (s * s * r + lam)
    psi1 = t * (1 + s1 ** 2) + 2 * s * (1 - s) * q + s * s * q * (1 + s1 ** 2) - t * (1 - q) + lam
    psi2 = t * c + s * (1 - s) * q * c - t * (1 - q) * c
    psi3 = t + s * s * q - t * (1 - q) * c * c + lam
    return PsiValues(q=q, psi1=psi1, psi2=psi2, psi3=psi3)


def _check_delta(v: PsiValues) -> float:
    delta = v.delta
    scale = max(abs(v.psi1 * v.psi3), v.psi2 ** 2)
    if delta == 0.0 or abs(delta) <= 1e-14 * scale:
        raise SingularityError((v.psi1, v.psi2, v.psi3))
    return delta


def asymptotic_weights(params: TheoryParams) -> Tuple[float, float]:
    """Limit of (w1, w2) for ridge on fully mixed data"""
    v = psi(params)
    delta = _check_delta(v)
    c = (1.0 - params.s) * (2.0 * params.p - 1.0)
    k = v.q / delta
    return k * (v.psi3 - v.psi2 * c), k * (v.psi1 * c - v.psi2)


def wg_loss_from_psi(v: PsiValues, params: TheoryParams, variant: VariantLike = None) -> float:
    variant = _variant(variant)
    delta = _check_delta(v)
    c = (1.0 - params.s) * (2.0 * params.p - 1.0)
    k = v.q / delta
    c1 = v.psi3 - v.psi2 * c
    first = (k * (v.psi3 + v.psi2 - (v.psi1 + v.psi2) * c) - 1.0) ** 2
    if variant == TheoryVariant.AS_PRINTED:
        second = params.sigma1 ** 2 * c1 ** 2
    else:
        second = params.sigma1 ** 2 * (k * c1) ** 2
    return float(first + second)


def eval_wg_loss(params: TheoryParams, variant: VariantLike = None) -> float:
    """Closed-form minority-group test MSE at alpha = 1"""
    return wg_loss_from_psi(psi(params), params, variant)


def wg_loss_curve(
    p: float,
    s_grid: Sequence[float],
    sigma1: float,
    r: float,
    lam: float,
    variant: VariantLike = None,
) -> np.ndarray:
    return np.array([
        eval_wg_loss(TheoryParams(p=p, s=s, r=r, sigma1=sigma1, lam=lam), variant)
        for s in s_grid
    ])


def optimal_s(
    p: float,
    s_grid: Sequence[float],
    sigma1: float,
    r: float,
    lam: float,
    variant: VariantLike = None,
) -> Tuple[float, float]:
    """(argmin, min) of the closed form over the grid; first minimiser wins ties"""
    curve = wg_loss_curve(p, s_grid, sigma1, r, lam, variant)
    i = int(np.argmin(curve))
    return float(s_grid[i]), float(curve[i])


# ==================== SIMULATION ====================

def minority_population_loss(weights: ModelWeights, sigma1: float, sigma_xi: float, d: int) -> float:
    """
    Exact test MSE on a != y rows: (w1 - w2 - 1)^2 + s1^2 w1^2 + s_xi^2/(d-2) * sum_{j>=3} w_j^2.
    """
    w = weights.w
    b = float(weights.b) if weights.has_bias else 0.0
    # minority groups hold both labels equally often, so the y*b cross term cancels
    bias_term = b * b
    tail = sigma_xi ** 2 / (d - 2) * float(np.dot(w[2:], w[2:]))
    return float((w[0] - w[1] - 1.0) ** 2 + sigma1 ** 2 * w[0] ** 2 + tail + bias_term)


def _simulation_spec(p: float, sigma1: float, r: float, m: int, d: int) -> DistSpec:
    return DistSpec(mu=p, sigma1=sigma1, sigma2=0.0, sigma_xi=float(np.sqrt(r * m)), d=d)


def _one_run(args) -> np.ndarray:
    p, s_values, sigma1, r, lam, n, d, m, run_seed = args
    spec = _simulation_spec(p, sigma1, r, m, d)
    d_ft = sample_dataset(spec, n, run_seed, dtype=np.float32)
    d_bal = sample_balanced(spec, m, derive_seed(run_seed, "balanced"), dtype=np.float32)
    _, partners, _ = draw_partners(d_ft, d_bal, MixConfig(alpha=1.0, s=0.0, seed=derive_seed(run_seed, "mix")))
    path = mixed_gram_path(d_ft, d_bal, partners, s_values, lam)
    return np.array([minority_population_loss(w, sigma1, spec.sigma_xi, d) for w in path])


def simulate_curve(
    p: float,
    s_values: Sequence[float],
    sigma1: float,
    lam: float,
    n: int,
    d: int,
    m: int,
    runs: int,
    seed: int,
    r: float = 4.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Monte Carlo worst-group loss along an s-grid.

    Every run draws D_FT ~ P(p) with s_xi^2 = r m and a stratified D_bal of
    size m, mixes with alpha = 1 and fits ridge at each s. Runs share nothing
    but derived seeds; partners are common across s within a run.
    """
    if not n >= d >= m >= 4:
        raise ValidationError(f"need n >= d >= m >= 4, got n={n}, d={d}, m={m}")
    if runs < 1:
        raise ValidationError(f"runs must be >= 1, got {runs}")
    s_values = [float(s) for s in s_values]
    jobs = [
        (p, s_values, sigma1, r, lam, n, d, m, derive_seed(seed, "run", k))
        for k in range(runs)
    ]
    losses = np.stack(map_ordered(_one_run, jobs))
    mean = losses.mean(axis=0)
    if runs > 1:
        stderr = losses.std(axis=0, ddof=1) / np.sqrt(runs)
    else:
        stderr = np.zeros(len(s_values))
    logger.info(
        "simulate_curve_complete",
        extra={"p": p, "points": len(s_values), "runs": runs, "n": n, "d": d, "m": m},
    )
    return mean, stderr


def simulate_wg_loss(
    p: float,
    s: float,
    sigma1: float,
    lam: float,
    n: int,
    d: int,
    m: int,
    runs: int,
    seed: int,
    r: float = 4.0,
) -> Tuple[float, float]:
    mean, stderr = simulate_curve(p, [s], sigma1, lam, n, d, m, runs, seed, r=r)
    return float(mean[0]), float(stderr[0])


# ==================== ADJUDICATION ====================

def variant_deviation(
    sim: Sequence[Tuple[float, float, float]],
    sigma1: float,
    r: float,
    lam: float,
    variant: VariantLike,
) -> Tuple[float, bool]:
    """
    Largest |theory - sim| over (p, s, sim_mean) rows, and whether every row
    is within max(0.05, 10% of sim_mean).
    """
    worst = 0.0
    ok = True
    for p, s, mean in sim:
        theory = eval_wg_loss(TheoryParams(p=p, s=s, r=r, sigma1=sigma1, lam=lam), variant)
        gap = abs(theory - mean)
        worst = max(worst, gap)
        ok = ok and gap <= max(0.05, 0.10 * abs(mean))
    return worst, ok


def adjudicate_variant(
    sim: Sequence[Tuple[float, float, float]],
    sigma1: float,
    r: float,
    lam: float,
) -> Tuple[TheoryVariant, Dict[str, float]]:
    """Pick the closed-form variant that tracks the simulation more closely"""
    errors = {}
    within = {}
    for variant in TheoryVariant:
        errors[variant.value], within[variant.value] = variant_deviation(sim, sigma1, r, lam, variant)
    chosen = min(TheoryVariant, key=lambda v: errors[v.value])
    logger.info(
        "variant_adjudicated",
        extra={
            "chosen": chosen.value,
            "default": settings.DEFAULT_VARIANT,
            "max_gap_as_printed": errors[TheoryVariant.AS_PRINTED.value],
            "max_gap_derivation_consistent": errors[TheoryVariant.DERIVATION_CONSISTENT.value],
            "within_tolerance": within[chosen.value],
            "points": len(sim),
        },
    )
    if chosen.value != settings.DEFAULT_VARIANT:
        logger.warning("variant_differs_from_default", extra={"chosen": chosen.value})
    return chosen, errors
