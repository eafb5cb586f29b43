"""
Dispel Pipeline Commands
retrain, sweep and the planted benchmark over embedding files
"""

import numpy as np

from cli.common import common_flags, float_list, from_flags, group_list, out_path, recorder
from config import settings
from core.experiments import BenchmarkSizes, PLANTED_GRID, arms_table, tune_planted_noise
from core.llr_pipeline import (
    decision_for,
    heatmap,
    load_embeddings,
    prepare_splits,
    retrain_head,
    select_l1_strength,
    sweep,
)
from engine.groupeval import default_universe, evaluate_accuracy
from engine.mixer import mix
from models.errors import UsageError
from models.schemas import (
    L1_INVERSE_GRID,
    ClassBalance,
    MixConfig,
    Optimizer,
    PlantedSpec,
    RetrainConfig,
    SplitPlan,
    SplitSource,
    SweepGrid,
)
from services.storage import save_report, save_table, save_weights
from utils.logger import get_logger
from utils.rng import derive_seed

logger = get_logger("cli.pipeline")


def _retrain_flags(p):
    p.add_argument("--optimizer", choices=["sgd", "l1avg"] + [o.value for o in Optimizer], default="sgd")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--l1", type=float, default=0.0)
    p.add_argument("--l1-grid", action="store_true", help="pick --l1 from the inverse-strength grid")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--repeats", type=int, default=settings.DEFAULT_SUBSET_REPEATS)
    p.add_argument("--subset-fraction", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--class-weights", type=float_list, default=None, help="weights for the sorted classes")
    p.add_argument("--restrict", type=group_list, default=None)


def _source_flags(p):
    p.add_argument("--ft", default=None)
    p.add_argument("--bal", default=None)
    p.add_argument("--val", default=None)
    p.add_argument("--pool", default=None, help="validation pool split into D_FT/D_bal and selection halves")
    p.add_argument("--train", default=None, help="training embeddings for --source training")
    p.add_argument("--source", choices=[s.value for s in SplitSource], default=SplitSource.VALIDATION_HALF.value)
    p.add_argument("--class-balance", choices=[c.value for c in ClassBalance],
                   default=ClassBalance.UPSAMPLE_MINOR_CLASS.value)
    p.add_argument("--l", default="max", help="rows per group in D_bal, or max")
    p.add_argument("--bal-groups", type=group_list, default=None)


def register(subparsers):
    common = common_flags()

    p = subparsers.add_parser("retrain", parents=[common], help="mix once and retrain a logistic head")
    _source_flags(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--s", type=float, required=True)
    _retrain_flags(p)
    p.add_argument("--out", default="weights.csv")
    p.add_argument("--report", default="report.csv")
    p.set_defaults(handler=cmd_retrain)

    p = subparsers.add_parser("sweep", parents=[common], help="retrain over an (alpha, s) grid")
    _source_flags(p)
    p.add_argument("--alphas", type=float_list, default=None)
    p.add_argument("--s-values", type=float_list, default=None)
    p.add_argument("--preset", default=None, help="named grid, e.g. civilcomments or waterbirds_l10")
    _retrain_flags(p)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--best-weights", default="best_weights.csv")
    p.add_argument("--heatmap", default=None)
    p.set_defaults(handler=cmd_sweep)

    p = subparsers.add_parser("benchmark", parents=[common], help="D_FT-only, D_bal-only and Dispel arms")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--missing-group", action="store_true")
    p.add_argument("--sigma-noise", type=float, default=None)
    p.add_argument("--tune-noise", action="store_true")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--mu", type=float, default=0.95)
    p.add_argument("--pool-size", type=int, default=BenchmarkSizes.val_pool)
    p.add_argument("--test-size", type=int, default=BenchmarkSizes.test)
    p.add_argument("--l", type=int, default=BenchmarkSizes.l)
    _retrain_flags(p)
    p.add_argument("--out", default="arms.csv")
    p.set_defaults(handler=cmd_benchmark)


# ==================== CONFIG FROM FLAGS ====================

def _retrain_config(args, classes=None) -> RetrainConfig:
    class_weights = None
    if args.class_weights is not None:
        if classes is None or len(args.class_weights) != len(classes):
            raise UsageError(f"--class-weights needs one value per class {list(classes or [])}")
        class_weights = dict(zip(classes, args.class_weights))
    return from_flags(
        RetrainConfig,
        optimizer=Optimizer.from_flag(args.optimizer),
        learning_rate=args.lr,
        l1_strength=args.l1,
        epochs=args.epochs,
        patience=args.patience,
        subset_repeats=args.repeats,
        subset_fraction=args.subset_fraction,
        batch_size=args.batch_size,
        class_weights=class_weights,
        seed=derive_seed(args.seed, "retrain"),
    )


def _l_value(text: str):
    if text == "max":
        return "max"
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"--l must be an integer or max, got {text!r}")


def _load_splits(args):
    """(D_FT, D_bal, selection set) from explicit files or a validation pool"""
    if args.pool:
        if any((args.ft, args.bal, args.val)):
            raise UsageError("--pool cannot be combined with --ft/--bal/--val")
        plan = from_flags(
            SplitPlan,
            source=args.source,
            class_balance=args.class_balance,
            l_per_group=_l_value(args.l),
            seed=derive_seed(args.seed, "split"),
        )
        train = load_embeddings(args.train) if args.train else None
        return prepare_splits(load_embeddings(args.pool), plan, train=train, bal_groups=args.bal_groups)
    if not (args.ft and args.bal and args.val):
        raise UsageError("pass --ft, --bal and --val, or --pool")
    return load_embeddings(args.ft), load_embeddings(args.bal), load_embeddings(args.val)


def _universe(args, d_ft, val):
    universe = default_universe(val, args.restrict)
    missing = [g for g in d_ft.groups if g not in universe.groups]
    if missing:
        universe = universe.model_copy(update={"groups": universe.groups + missing})
    return universe


def _l1_strength(args, cfg, train, val, universe) -> RetrainConfig:
    if not args.l1_grid:
        return cfg
    if cfg.optimizer != Optimizer.L1_LOGREG_AVERAGED:
        raise UsageError("--l1-grid applies to --optimizer l1avg")
    strength, _, table = select_l1_strength(train, val, universe, L1_INVERSE_GRID, cfg.class_weights)
    logger.info("l1_strength_selected", extra={"l1": strength, "candidates": len(table)})
    return cfg.model_copy(update={"l1_strength": strength})


# ==================== COMMANDS ====================

def cmd_retrain(args) -> int:
    d_ft, d_bal, val = _load_splits(args)
    universe = _universe(args, d_ft, val)
    mix_cfg = from_flags(MixConfig, alpha=args.alpha, s=args.s, seed=derive_seed(args.seed, "mix"))
    mixed, _ = mix(d_ft, d_bal, mix_cfg)
    cfg = _retrain_config(args, sorted(set(mixed.classes) | set(val.classes)))
    cfg = _l1_strength(args, cfg, mixed, val, universe)

    head = retrain_head(mixed, val, cfg, universe)
    report = evaluate_accuracy(head, val, universe, decision_for(head))

    rec = recorder(args)
    weights_path = out_path(args, args.out)
    report_path = out_path(args, args.report)
    save_weights(head, weights_path)
    save_report(report, report_path)
    rec.add(weights_path)
    rec.add(report_path)
    rec.write(weights_path)
    logger.info("retrain_complete", extra={"worst_value": report.worst_value, "average": report.average})
    return 0


def cmd_sweep(args) -> int:
    if args.preset:
        if args.alphas or args.s_values:
            raise UsageError("--preset cannot be combined with --alphas/--s-values")
        try:
            grid = SweepGrid.preset(args.preset)
        except ValueError as e:
            raise UsageError(str(e)) from e
    else:
        if not args.alphas or not args.s_values:
            raise UsageError("sweep needs --alphas and --s-values, or --preset")
        grid = from_flags(SweepGrid, alphas=args.alphas, s_values=args.s_values)

    d_ft, d_bal, val = _load_splits(args)
    universe = _universe(args, d_ft, val)
    cfg = _retrain_config(args, sorted(set(d_ft.classes) | set(val.classes)))
    cfg = _l1_strength(args, cfg, d_ft, val, universe)
    result = sweep(d_ft, d_bal, val, grid, cfg, universe)

    rec = recorder(args)
    table_path = out_path(args, args.out)
    best_path = out_path(args, args.best_weights)
    save_table(result.table, table_path)
    save_weights(result.best_weights, best_path)
    rec.add(table_path)
    rec.add(best_path)
    if args.heatmap:
        heat_path = out_path(args, args.heatmap)
        save_table(heatmap(result.table).reset_index(), heat_path)
        rec.add(heat_path)
    rec.write(table_path)
    return 0


def cmd_benchmark(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    spec = from_flags(PlantedSpec, dim=args.dim, mu=args.mu)
    if args.sigma_noise is not None:
        spec = from_flags(PlantedSpec, **{**spec.model_dump(), "sigma_noise": args.sigma_noise})
    cfg = _retrain_config(args, [0, 1])
    sizes = BenchmarkSizes(val_pool=args.pool_size, test=args.test_size, l=args.l)
    if args.tune_noise:
        spec = tune_planted_noise(spec, cfg, seed=args.seed, sizes=sizes)

    seeds = [derive_seed(args.seed, "benchmark", k) for k in range(args.seeds)]
    table = arms_table(spec, seeds, cfg, PLANTED_GRID, sizes, missing_group=args.missing_group)

    medians = table.groupby("arm", sort=False)["worst"].median()
    logger.info(
        "benchmark_complete",
        extra={
            "sigma_noise": spec.sigma_noise,
            "missing_group": args.missing_group,
            **{f"median_worst_{arm}": float(np.round(v, 6)) for arm, v in medians.items()},
        },
    )

    rec = recorder(args)
    path = out_path(args, args.out)
    save_table(table, path)
    rec.add(path)
    rec.write(path)
    return 0
