"""
Dispel Data Commands
gen: synthetic datasets; mix: Dispel mixing of two dataset files
"""

import numpy as np

from cli.common import add_scale, common_flags, dataset_format, from_flags, out_path, recorder
from core.experiments import SCALES
from engine.mixer import mix
from engine.synthdata import sample_balanced, sample_dataset, sample_planted_benchmark, sample_single_group
from models.dataset import parse_group
from models.errors import UsageError
from models.schemas import DistSpec, MixConfig, PlantedSpec, SpuriousMode
from services.storage import load_dataset, save_dataset, save_trace
from utils.logger import get_logger

logger = get_logger("cli.data")


def register(subparsers):
    common = common_flags()

    p = subparsers.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--kind", choices=["iid", "balanced", "single", "planted"], default="iid")
    p.add_argument("--mu", type=float, default=None, help="P(a = y); defaults to 0.9 (0.95 planted)")
    p.add_argument("--sigma1", type=float, default=0.5)
    p.add_argument("--sigma2", type=float, default=0.0)
    p.add_argument("--sigma-xi", type=float, default=None, help="defaults to sqrt(r m)")
    p.add_argument("--r", type=float, default=4.0)
    p.add_argument("--spurious", choices=[m.value for m in SpuriousMode], default=SpuriousMode.PRESENT.value)
    p.add_argument("--group", default="1|1", help="a|y of the single-group kind")
    p.add_argument("--sigma-core", type=float, default=0.75)
    p.add_argument("--sigma-spu", type=float, default=0.1)
    p.add_argument("--sigma-noise", type=float, default=0.5)
    add_scale(p, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_gen)

    p = subparsers.add_parser("mix", parents=[common], help="mix D_FT rows with D_bal partners")
    p.add_argument("--ft", required=True)
    p.add_argument("--bal", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None)
    p.set_defaults(handler=cmd_mix)


def _sizes(args):
    """n, d, m with the scale preset as fallback"""
    preset = SCALES[args.scale] if args.scale else {}
    n = args.n if args.n is not None else preset.get("n", 1000)
    d = args.d if args.d is not None else preset.get("d", 16)
    m = args.m if args.m is not None else preset.get("m", 64)
    return n, d, m


def cmd_gen(args) -> int:
    n, d, m = _sizes(args)
    if n < 1:
        raise UsageError(f"--n must be >= 1, got {n}")
    suffix = ".bin" if args.format == "bin" else ".csv"
    path = out_path(args, args.out or f"data{suffix}")

    if args.kind == "planted":
        spec = from_flags(
            PlantedSpec,
            dim=d,
            mu=0.95 if args.mu is None else args.mu,
            sigma_core=args.sigma_core,
            sigma_spu=args.sigma_spu,
            sigma_noise=args.sigma_noise,
        )
        data = sample_planted_benchmark(spec, n, args.seed)
    else:
        sigma_xi = args.sigma_xi if args.sigma_xi is not None else float(np.sqrt(args.r * m))
        spec = from_flags(
            DistSpec,
            mu=0.9 if args.mu is None else args.mu,
            sigma1=args.sigma1,
            sigma2=args.sigma2,
            sigma_xi=sigma_xi,
            d=d,
            spurious_mode=args.spurious,
        )
        if args.kind == "balanced":
            data = sample_balanced(spec, n, args.seed)
        elif args.kind == "single":
            a, y = parse_group(args.group)
            data = sample_single_group(spec, y, a, n, args.seed)
        else:
            data = sample_dataset(spec, n, args.seed)

    rec = recorder(args)
    save_dataset(data, path, dataset_format(args, path))
    rec.add(path)
    rec.write(path)
    logger.info("gen_complete", extra={"kind": args.kind, "n": data.n, "d": data.dim, "path": str(path)})
    return 0


def cmd_mix(args) -> int:
    cfg = from_flags(MixConfig, alpha=args.alpha, s=args.s, seed=args.seed)
    d_ft = load_dataset(args.ft)
    d_bal = load_dataset(args.bal)
    mixed, trace = mix(d_ft, d_bal, cfg)

    rec = recorder(args)
    path = out_path(args, args.out)
    save_dataset(mixed, path, dataset_format(args, path))
    rec.add(path)
    if args.trace:
        trace_path = out_path(args, args.trace)
        save_trace(trace, trace_path)
        rec.add(trace_path)
    rec.write(path)
    return 0
