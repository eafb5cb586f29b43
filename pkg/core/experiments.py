"""
Dispel Experiments
Theory-versus-simulation sweep, weight decomposition, alignment dynamics
and the planted embedding benchmark
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.llr_pipeline import (
    build_balanced_split,
    build_ft_split,
    decision_for,
    head_classes,
    mix_and_retrain,
    retrain_head,
    split_validation,
    sweep,
)
from engine.groupeval import evaluate_accuracy
from engine.linmodel import alignment, decision_slope, decompose, gd_finetune, mixed_gram_path
from engine.mixer import draw_partners, mix
from engine.synthdata import sample_balanced, sample_dataset, sample_planted_benchmark, sample_single_group
from engine.theory import eval_wg_loss, simulate_curve
from models.dataset import Dataset, ModelWeights
from models.errors import ValidationError
from models.schemas import (
    ClassBalance,
    DistSpec,
    GdConfig,
    GroupUniverse,
    MixConfig,
    PlantedSpec,
    RetrainConfig,
    SplitPlan,
    SpuriousMode,
    SweepGrid,
    TheoryParams,
    TheoryVariant,
)
from utils.logger import get_logger
from utils.rng import derive_seed

logger = get_logger("experiments")


# ==================== SCALE PRESETS ====================

SCALES: Dict[str, Dict[str, int]] = {
    "desk": {"n": 24000, "d": 1600, "m": 64, "runs": 20},
    "paper": {"n": 120000, "d": 8000, "m": 128, "runs": 20},
}


def s_grid(start: float, stop: float, step: float) -> List[float]:
    """Inclusive grid, rounded to kill accumulation error"""
    count = int(round((stop - start) / step)) + 1
    return [round(start + k * step, 10) for k in range(count)]


# ==================== THEORY AGAINST SIMULATION ====================

def theory_table(
    p_values: Sequence[float],
    s_values: Sequence[float],
    sigma1: float,
    r: float,
    lam: float,
    variant: Optional[TheoryVariant] = None,
) -> pd.DataFrame:
    rows = [
        {"p": p, "s": s, "loss": eval_wg_loss(TheoryParams(p=p, s=s, r=r, sigma1=sigma1, lam=lam), variant)}
        for p in p_values
        for s in s_values
    ]
    return pd.DataFrame(rows, columns=["p", "s", "loss"])


def iter_figure1(
    p_values: Sequence[float],
    s_values: Sequence[float],
    sigma1: float,
    r: float,
    lam: float,
    n: int,
    d: int,
    m: int,
    runs: int,
    seed: int,
    variant: Optional[TheoryVariant] = None,
) -> Iterator[pd.DataFrame]:
    """
    One combined chunk per p with columns p, s, theory, sim_mean, sim_stderr,
    so callers can flush partial results between values of p.
    """
    for p in p_values:
        mean, stderr = simulate_curve(p, s_values, sigma1, lam, n, d, m, runs, derive_seed(seed, "p", p), r=r)
        theory = theory_table([p], s_values, sigma1, r, lam, variant)["loss"].to_numpy()
        yield pd.DataFrame({
            "p": p,
            "s": list(s_values),
            "theory": theory,
            "sim_mean": mean,
            "sim_stderr": stderr,
        })


# ==================== WEIGHT DECOMPOSITION ====================

FIGURE2_COLUMNS = [
    "s", "core1", "core2", "noise_norm", "full_norm",
    "core1_normalized", "core2_normalized", "noise_norm_normalized", "decision_slope",
]


def figure2(
    s_values: Sequence[float],
    p: float,
    sigma1: float,
    r: float,
    lam: float,
    n: int,
    d: int,
    m: int,
    seed: int,
) -> pd.DataFrame:
    """Span decomposition of the ridge weights along s for one seeded draw"""
    spec = DistSpec(mu=p, sigma1=sigma1, sigma2=0.0, sigma_xi=float(np.sqrt(r * m)), d=d)
    d_ft = sample_dataset(spec, n, seed, dtype=np.float32)
    d_bal = sample_balanced(spec, m, derive_seed(seed, "balanced"), dtype=np.float32)
    _, partners, _ = draw_partners(d_ft, d_bal, MixConfig(alpha=1.0, s=0.0, seed=derive_seed(seed, "mix")))
    rows = []
    for s, w in zip(s_values, mixed_gram_path(d_ft, d_bal, partners, s_values, lam)):
        dec = decompose(w)
        c1, c2, nn = dec.normalised
        rows.append([s, dec.core_spur[0], dec.core_spur[1], dec.noise_norm, dec.full_norm, c1, c2, nn, decision_slope(w)])
    return pd.DataFrame(rows, columns=FIGURE2_COLUMNS)


# ==================== ALIGNMENT DYNAMICS ====================

@dataclass
class AlignmentRun:
    table: pd.DataFrame
    unmixed: ModelWeights
    mixed: ModelWeights
    unmixed_grad_norm: float
    mixed_grad_norm: float
    summary: Dict[str, float] = field(default_factory=dict)


def _project(data: Dataset, d: int) -> Dataset:
    return data if data.dim == d else data.with_features(np.ascontiguousarray(data.X[:, :d]))


def scenario2(
    w0: Sequence[float],
    b0: Optional[float] = 0.0,
    epochs: int = 20000,
    alpha: float = 1.0,
    s: float = 0.3,
    n: int = 10000,
    m: int = 256,
    sigma1: float = 0.5,
    bal_sigma2: float = 1.0,
    d: int = 2,
    seed: int = 0,
    weight_decay: float = 0.0,
    tol: float = 1e-9,
    record_every: int = 1,
    step_size: Optional[float] = None,
) -> AlignmentRun:
    """
    GD from the same w0 on attribute-free fine-tuning data, unmixed and mixed
    with a single-group (a=1, y=1) balanced set. Both arms run the same
    GdConfig, so s=0 or alpha=0 reproduce the unmixed arm exactly.

    bal_sigma2 is the spread of the balanced rows' spurious feature. With
    bal_sigma2 > 0 the mixed spurious coordinate s(1 + bal_sigma2 * eps) is
    independent of (x1, y), so the unique least-squares fit puts zero weight
    on it up to sampling error of order m^-1/2 + n^-1/2. With bal_sigma2 = 0
    every mixed row has x2 = s, the coordinate is collinear with the bias and
    plain GD keeps w2 - s*b fixed; the summary reports that combination.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    if len(w0) != d:
        raise ValidationError(f"w0 has {len(w0)} entries, expected d={d}")
    gen_d = max(3, d)
    ft_spec = DistSpec(mu=0.5, sigma1=sigma1, sigma2=0.0, sigma_xi=0.0, d=gen_d, spurious_mode=SpuriousMode.ABSENT)
    bal_spec = DistSpec(mu=1.0, sigma1=sigma1, sigma2=bal_sigma2, sigma_xi=0.0, d=gen_d)
    d_ft = _project(sample_dataset(ft_spec, n, seed), d)
    d_bal = _project(sample_single_group(bal_spec, 1, 1, m, derive_seed(seed, "balanced")), d)
    d_mixed, _ = mix(d_ft, d_bal, MixConfig(alpha=alpha, s=s, seed=derive_seed(seed, "mix")))

    cfg = GdConfig(
        init=ModelWeights(w=w0, b=b0), epochs=epochs, record_every=record_every,
        tol=tol, weight_decay=weight_decay, step_size=step_size,
    )
    unmixed, traj_u = gd_finetune(d_ft, cfg)
    mixed, traj_m = gd_finetune(d_mixed, cfg)

    epochs_all = sorted(set(traj_u.epochs) | set(traj_m.epochs))
    table = pd.DataFrame({
        "epoch": epochs_all,
        "unmixed_w2": _held(traj_u, epochs_all),
        "mixed_w2": _held(traj_m, epochs_all),
    })

    summary = {
        "unmixed_final_w2": alignment(unmixed, 2),
        "mixed_final_w2": alignment(mixed, 2),
        "unmixed_grad_norm": traj_u.grad_norm,
        "mixed_grad_norm": traj_m.grad_norm,
        "mixed_epochs": traj_m.stopped_at,
    }
    if mixed.has_bias:
        summary["mixed_w2_minus_s_b_start"] = float(w0[1] - s * (b0 or 0.0))
        summary["mixed_w2_minus_s_b_end"] = float(alignment(mixed, 2) - s * mixed.b)
    logger.info("scenario2_complete", extra=summary)
    return AlignmentRun(table, unmixed, mixed, traj_u.grad_norm, traj_m.grad_norm, summary)


def _held(traj, epochs: Sequence[int]) -> List[float]:
    """w2 at each epoch, holding the last recorded value after an early stop"""
    values = []
    k = 0
    for e in epochs:
        while k + 1 < len(traj.epochs) and traj.epochs[k + 1] <= e:
            k += 1
        values.append(alignment(traj.weights[k], 2))
    return values


# ==================== PLANTED BENCHMARK ====================

PLANTED_GRID = SweepGrid(
    alphas=[1.0, 0.8, 0.6, 0.4, 0.2],
    s_values=[0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0],
)


@dataclass
class BenchmarkSizes:
    val_pool: int = 16000
    test: int = 8000
    l: int = 10
    missing_bal_rows: int = 100


@dataclass
class PlantedSplits:
    d_ft: Dataset
    d_bal: Dataset
    selection: Dataset
    test: Dataset


def planted_universe() -> GroupUniverse:
    return GroupUniverse(groups=[(0, 0), (0, 1), (1, 0), (1, 1)])


def planted_splits(
    spec: PlantedSpec,
    seed: int,
    sizes: BenchmarkSizes = BenchmarkSizes(),
    missing_group: bool = False,
) -> PlantedSplits:
    """
    The validation pool is split by group into a training half (D_FT and
    D_bal) and a selection half. In missing-group mode the (a=1, y=0) group
    is removed from D_FT and D_bal holds rows of group (1, 1) only. The
    test set is drawn at mu = 1/2.
    """
    pool = sample_planted_benchmark(spec, sizes.val_pool, derive_seed(seed, "pool"))
    test = sample_planted_benchmark(spec, sizes.test, derive_seed(seed, "test"), mu=0.5)

    half, selection = split_validation(pool, derive_seed(seed, "split"))
    plan = SplitPlan(class_balance=ClassBalance.UPSAMPLE_MINOR_CLASS, seed=derive_seed(seed, "plan"))
    if missing_group:
        d_ft = build_ft_split(half.drop_groups([(1, 0)]), plan)
        extra = sample_planted_benchmark(spec, 8 * sizes.missing_bal_rows, derive_seed(seed, "bal"), mu=1.0)
        d_bal = build_balanced_split(extra, sizes.missing_bal_rows, plan.seed, groups=[(1, 1)])
    else:
        d_ft = build_ft_split(half, plan)
        d_bal = build_balanced_split(half, sizes.l, plan.seed)
    return PlantedSplits(d_ft=d_ft, d_bal=d_bal, selection=selection, test=test)


def _arm_score(head: ModelWeights, test: Dataset, universe: GroupUniverse) -> Tuple[float, float]:
    report = evaluate_accuracy(head, test, universe, decision_for(head))
    return report.worst_value, report.average


def run_arms(
    spec: PlantedSpec,
    seed: int,
    cfg: RetrainConfig,
    grid: SweepGrid = PLANTED_GRID,
    sizes: BenchmarkSizes = BenchmarkSizes(),
    missing_group: bool = False,
) -> Dict[str, Tuple[float, float]]:
    """
    D_FT-only, D_bal-only and swept-Dispel heads under identical seeds.

    The single-source arms are the (alpha, s) = (1, 0) and (1, 1) mixing
    cells, trained with the same row count, budget and seeds as every
    sweep cell. Scores are (worst-group, average) test accuracy.
    """
    universe = planted_universe()
    cfg = cfg.model_copy(update={"seed": derive_seed(seed, "retrain")})
    splits = planted_splits(spec, seed, sizes, missing_group)
    d_ft, d_bal, selection, test = splits.d_ft, splits.d_bal, splits.selection, splits.test

    classes = head_classes(d_ft, universe)

    def arm(s: float) -> Tuple[float, float]:
        head = mix_and_retrain(d_ft, d_bal, selection, 1.0, s, cfg, universe, classes)
        return _arm_score(head, test, universe)

    arms = {"ft_only": arm(0.0), "bal_only": arm(1.0)}
    result = sweep(d_ft, d_bal, selection, grid, cfg, universe)
    arms["dispel"] = _arm_score(result.best_weights, test, universe)
    logger.info(
        "planted_arms_complete",
        extra={
            "seed": seed,
            "missing_group": missing_group,
            "best_alpha": result.best_alpha,
            "best_s": result.best_s,
            **{f"{k}_worst": v[0] for k, v in arms.items()},
        },
    )
    return arms


def arms_table(
    spec: PlantedSpec,
    seeds: Sequence[int],
    cfg: RetrainConfig,
    grid: SweepGrid = PLANTED_GRID,
    sizes: BenchmarkSizes = BenchmarkSizes(),
    missing_group: bool = False,
) -> pd.DataFrame:
    rows = []
    for seed in seeds:
        for arm, (worst, avg) in run_arms(spec, seed, cfg, grid, sizes, missing_group).items():
            rows.append({"arm": arm, "seed": seed, "worst": worst, "avg": avg})
    return pd.DataFrame(rows, columns=["arm", "seed", "worst", "avg"])


def tune_planted_noise(
    spec: PlantedSpec,
    cfg: RetrainConfig,
    candidates: Sequence[float] = (0.25, 0.5, 1.0, 2.0),
    seed: int = 0,
    target: Tuple[float, float] = (0.40, 0.70),
    sizes: BenchmarkSizes = BenchmarkSizes(),
) -> PlantedSpec:
    """
    First noise level whose D_FT-only worst-group test accuracy falls in
    target; falls back to the closest one.
    """
    universe = planted_universe()
    cfg = cfg.model_copy(update={"seed": derive_seed(seed, "retrain")})
    best, best_gap = spec, float("inf")
    for sigma in candidates:
        trial = spec.model_copy(update={"sigma_noise": sigma})
        splits = planted_splits(trial, seed, sizes)
        head = retrain_head(splits.d_ft, splits.selection, cfg, universe, head_classes(splits.d_ft, universe))
        worst, _ = _arm_score(head, splits.test, universe)
        logger.info("planted_noise_trial", extra={"sigma_noise": sigma, "ft_only_worst": worst})
        if target[0] <= worst <= target[1]:
            return trial
        gap = min(abs(worst - target[0]), abs(worst - target[1]))
        if gap < best_gap:
            best, best_gap = trial, gap
    return best
