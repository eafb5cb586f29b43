"""
Dispel Experiment Commands
theory, simulate, figure1, figure2 and scenario2 tables
"""

import pandas as pd

from cli.common import add_scale, common_flags, float_list, from_flags, grid, out_path, recorder, resolve_scale
from core.experiments import figure2, iter_figure1, scenario2, theory_table
from engine.theory import adjudicate_variant, optimal_s, simulate_curve
from models.errors import UsageError
from models.schemas import TheoryParams, TheoryVariant
from services.storage import save_table
from utils.logger import get_logger
from utils.rng import derive_seed

logger = get_logger("cli.experiments")

DEFAULT_S_GRID = "0:1:0.1"


def _theory_flags(p, default_p: str):
    p.add_argument("--p", type=float_list, default=float_list(default_p))
    p.add_argument("--s-grid", type=grid, default=grid(DEFAULT_S_GRID))
    p.add_argument("--sigma1", type=float, default=0.5)
    p.add_argument("--r", type=float, default=4.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.25)


def _variant(args):
    if args.variant is None:
        return None
    try:
        return TheoryVariant.from_flag(args.variant)
    except ValueError as e:
        raise UsageError(f"unknown variant {args.variant!r}; use printed or derived") from e


def register(subparsers):
    common = common_flags()
    variants = ["printed", "derived"] + [v.value for v in TheoryVariant]

    p = subparsers.add_parser("theory", parents=[common], help="closed-form worst-group loss over a grid")
    _theory_flags(p, "0.7,0.8,0.9,0.95")
    p.add_argument("--variant", choices=variants, default=None)
    p.add_argument("--out", default="theory.csv")
    p.set_defaults(handler=cmd_theory)

    p = subparsers.add_parser("simulate", parents=[common], help="Monte Carlo worst-group loss over a grid")
    _theory_flags(p, "0.7,0.8,0.9,0.95")
    add_scale(p)
    p.add_argument("--out", default="sim.csv")
    p.set_defaults(handler=cmd_simulate)

    p = subparsers.add_parser("figure1", parents=[common], help="theory against simulation, one p at a time")
    _theory_flags(p, "0.7,0.8,0.9,0.95")
    add_scale(p)
    p.add_argument("--variant", choices=variants, default=None)
    p.set_defaults(handler=cmd_figure1)

    p = subparsers.add_parser("figure2", parents=[common], help="span decomposition of ridge weights along s")
    p.add_argument("--s-values", type=float_list, default=float_list("0,0.4,1"))
    p.add_argument("--p", type=float, default=0.9)
    p.add_argument("--sigma1", type=float, default=0.5)
    p.add_argument("--r", type=float, default=4.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.25)
    add_scale(p)
    p.add_argument("--out", default="figure2.csv")
    p.set_defaults(handler=cmd_figure2)

    p = subparsers.add_parser("scenario2", parents=[common], help="GD alignment with and without mixing")
    p.add_argument("--w0", type=float_list, default=float_list("1,1"))
    p.add_argument("--b0", type=float, default=0.0)
    p.add_argument("--no-bias", action="store_true")
    p.add_argument("--epochs", type=int, default=20000)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--s", type=float, default=0.3)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--m", type=int, default=256)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--sigma1", type=float, default=0.5)
    p.add_argument("--bal-sigma2", type=float, default=1.0, help="spurious-feature spread of the balanced rows")
    p.add_argument("--weight-decay", type=float, default=0.0, help="applied to both arms")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--out", default="alignment.csv")
    p.set_defaults(handler=cmd_scenario2)


def _check_grid(args):
    for p in args.p:
        from_flags(TheoryParams, p=p, s=0.0, r=args.r, sigma1=args.sigma1, **{"lambda": args.lam})
    if any(not 0.0 <= s <= 1.0 for s in args.s_grid):
        raise UsageError("--s-grid values must lie in [0, 1]")


def cmd_theory(args) -> int:
    _check_grid(args)
    variant = _variant(args)
    table = theory_table(args.p, args.s_grid, args.sigma1, args.r, args.lam, variant)
    for p in args.p:
        s_star, loss = optimal_s(p, args.s_grid, args.sigma1, args.r, args.lam, variant)
        logger.info("optimal_s", extra={"p": p, "s": s_star, "loss": loss})

    rec = recorder(args)
    path = out_path(args, args.out)
    save_table(table, path)
    rec.add(path)
    rec.write(path)
    return 0


def cmd_simulate(args) -> int:
    _check_grid(args)
    scale = resolve_scale(args)
    frames = []
    for p in args.p:
        mean, stderr = simulate_curve(
            p, args.s_grid, args.sigma1, args.lam, scale["n"], scale["d"], scale["m"],
            scale["runs"], derive_seed(args.seed, "p", p), r=args.r,
        )
        frames.append(pd.DataFrame({"p": p, "s": args.s_grid, "mean": mean, "stderr": stderr, "runs": scale["runs"]}))

    rec = recorder(args)
    path = out_path(args, args.out)
    save_table(pd.concat(frames, ignore_index=True), path)
    rec.add(path)
    rec.write(path)
    return 0


def cmd_figure1(args) -> int:
    """
    Writes theory.csv, sim.csv and fig1.csv after every p; an interrupt
    leaves the finished values of p on disk under a partial manifest.
    """
    _check_grid(args)
    scale = resolve_scale(args)
    variant = _variant(args)
    rec = recorder(args)
    paths = {name: out_path(args, f"{name}.csv") for name in ("theory", "sim", "fig1")}
    for path in paths.values():
        rec.add(path)

    chunks = []

    def flush():
        fig = pd.concat(chunks, ignore_index=True)
        save_table(fig[["p", "s", "theory"]].rename(columns={"theory": "loss"}), paths["theory"])
        sim = fig[["p", "s", "sim_mean", "sim_stderr"]].rename(columns={"sim_mean": "mean", "sim_stderr": "stderr"})
        sim["runs"] = scale["runs"]
        save_table(sim, paths["sim"])
        save_table(fig, paths["fig1"])

    try:
        for chunk in iter_figure1(
            args.p, args.s_grid, args.sigma1, args.r, args.lam,
            scale["n"], scale["d"], scale["m"], scale["runs"], args.seed, variant,
        ):
            chunks.append(chunk)
            flush()
    except KeyboardInterrupt:
        if chunks:
            rec.write(paths["fig1"], partial=True)
        logger.warning("figure1_interrupted", extra={"completed_p": [float(c["p"].iloc[0]) for c in chunks]})
        raise

    fig = pd.concat(chunks, ignore_index=True)
    adjudicate_variant(
        list(zip(fig["p"], fig["s"], fig["sim_mean"])), args.sigma1, args.r, args.lam,
    )
    rec.write(paths["fig1"])
    return 0


def cmd_figure2(args) -> int:
    scale = resolve_scale(args)
    if any(not 0.0 <= s <= 1.0 for s in args.s_values):
        raise UsageError("--s-values must lie in [0, 1]")
    if scale["d"] < 3:
        raise UsageError("figure2 needs --d >= 3")
    table = figure2(args.s_values, args.p, args.sigma1, args.r, args.lam, scale["n"], scale["d"], scale["m"], args.seed)

    rec = recorder(args)
    path = out_path(args, args.out)
    save_table(table, path)
    rec.add(path)
    rec.write(path)
    return 0


def cmd_scenario2(args) -> int:
    if len(args.w0) != args.d:
        raise UsageError(f"--w0 has {len(args.w0)} entries, --d is {args.d}")
    if not (0.0 <= args.alpha <= 1.0 and 0.0 <= args.s <= 1.0):
        raise UsageError("--alpha and --s must lie in [0, 1]")
    run = scenario2(
        args.w0,
        b0=None if args.no_bias else args.b0,
        epochs=args.epochs,
        alpha=args.alpha,
        s=args.s,
        n=args.n,
        m=args.m,
        sigma1=args.sigma1,
        bal_sigma2=args.bal_sigma2,
        d=args.d,
        seed=args.seed,
        weight_decay=args.weight_decay,
        tol=args.tol,
        record_every=args.record_every,
        step_size=args.step_size,
    )

    rec = recorder(args)
    path = out_path(args, args.out)
    save_table(run.table, path)
    rec.add(path)
    rec.write(path)
    return 0
