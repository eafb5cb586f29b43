"""
Dispel Model Commands
ridge: closed-form fit; eval: per-group report of a weights file
"""

from dataclasses import replace
from typing import Optional, Tuple

from cli.common import class_pair, common_flags, from_flags, group_list, out_path, recorder
from engine.groupeval import default_universe, evaluate_accuracy, evaluate_mse
from engine.linmodel import ridge_fit
from models.errors import UsageError
from models.schemas import Decision, Metric, RidgeConfig
from services.storage import load_dataset, load_weights, save_report, save_weights
from utils.logger import get_logger

logger = get_logger("cli.models")


def register(subparsers):
    common = common_flags()

    p = subparsers.add_parser("ridge", parents=[common], help="closed-form ridge regression")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", default="weights.csv")
    p.set_defaults(handler=cmd_ridge)

    p = subparsers.add_parser("eval", parents=[common], help="per-group and worst-group metrics")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--restrict", type=group_list, default=None)
    p.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.ACCURACY.value)
    p.add_argument("--decision", choices=[d.value for d in Decision], default=Decision.SIGN.value)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--classes", type=class_pair, default=None, help="NEG,POS labels of a binary head")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(handler=cmd_eval)


def cmd_ridge(args) -> int:
    cfg = from_flags(RidgeConfig, **{"lambda": args.lam})
    data = load_dataset(args.data)
    weights = ridge_fit(data, cfg)

    rec = recorder(args)
    path = out_path(args, args.out)
    save_weights(weights, path)
    rec.add(path)
    rec.write(path)
    return 0


def binary_classes(data, given: Optional[Tuple[int, int]] = None) -> Tuple[int, int]:
    """
    Label pair for a binary weights file, which stores no classes. Explicit
    --classes wins; otherwise the data's two labels, or the one {-1, 1} /
    {0, 1} coding a single label belongs to. One-vs-rest files carry their
    own classes.
    """
    if given is not None:
        return tuple(given)
    seen = set(data.classes)
    if len(seen) == 2:
        return tuple(sorted(seen))
    codings = [c for c in ((-1, 1), (0, 1)) if seen <= set(c)]
    if len(codings) != 1:
        raise UsageError(f"cannot tell the head's labels from classes {sorted(seen)}; pass --classes NEG,POS")
    return codings[0]


def cmd_eval(args) -> int:
    data = load_dataset(args.data)
    weights = load_weights(args.weights)
    universe = default_universe(data, args.restrict)

    metric = Metric(args.metric)
    if metric == Metric.MSE:
        if args.decision != Decision.SIGN.value:
            raise UsageError("--decision only applies to --metric acc")
        report = evaluate_mse(weights, data, universe)
    else:
        if not weights.multiclass:
            weights = replace(weights, classes=binary_classes(data, args.classes))
        report = evaluate_accuracy(weights, data, universe, Decision(args.decision), args.threshold)

    rec = recorder(args)
    path = out_path(args, args.out)
    save_report(report, path)
    rec.add(path)
    rec.write(path)
    logger.info(
        "eval_complete",
        extra={"metric": metric.value, "worst_group": list(report.worst_group), "worst_value": report.worst_value},
    )
    return 0
