"""
Dispel CLI Helpers
Shared flags, argument parsers, output paths and manifest plumbing
"""

import argparse
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type

from core.experiments import SCALES, s_grid
from models.dataset import GroupId, parse_group
from models.errors import UsageError, ValidationError
from models.schemas import M, build
from services.manifest import ManifestRecorder
from services.storage import infer_format

# Argparse destinations that are plumbing, not run parameters
_INTERNAL = {"handler", "command"}


# ==================== FLAG TYPES ====================

def float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def grid(text: str) -> List[float]:
    """start:stop:step, inclusive"""
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"empty grid {text!r}")
    return s_grid(start, stop, step)


def group_list(text: str) -> List[GroupId]:
    try:
        return [parse_group(g) for g in text.split(",") if g.strip()]
    except (ValueError, ValidationError):
        raise argparse.ArgumentTypeError(f"expected groups like 1|-1,-1|1, got {text!r}")


def class_pair(text: str) -> Tuple[int, int]:
    """NEG,POS labels of a binary head"""
    try:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two integer labels like 0,1, got {text!r}")
    if len(values) != 2 or values[0] == values[1]:
        raise argparse.ArgumentTypeError(f"expected two distinct labels NEG,POS, got {text!r}")
    return values


def seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {value}")
    return value


def common_flags() -> argparse.ArgumentParser:
    """Global flags accepted by every subcommand"""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--seed", type=seed, default=0, help="base seed (u64)")
    parser.add_argument("--out-dir", default=".", help="directory for relative output paths")
    parser.add_argument("--format", choices=["csv", "bin"], default=None, help="dataset file format")
    return parser


def add_scale(parser: argparse.ArgumentParser, default: Optional[str] = "desk"):
    parser.add_argument("--scale", choices=sorted(SCALES), default=default)
    parser.add_argument("--n", type=int, default=None)
    parser.add_argument("--d", type=int, default=None)
    parser.add_argument("--m", type=int, default=None)
    parser.add_argument("--runs", type=int, default=None)


def resolve_scale(args) -> Dict[str, int]:
    """Scale preset with explicit --n/--d/--m/--runs taking precedence"""
    base = dict(SCALES[args.scale]) if args.scale else {}
    for key in ("n", "d", "m", "runs"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    missing = [k for k in ("n", "d", "m", "runs") if k not in base]
    if missing:
        raise UsageError(f"missing {', '.join('--' + k for k in missing)} (or pass --scale)")
    return base


# ==================== MODELS FROM FLAGS ====================

def from_flags(model: Type[M], **values: Any) -> M:
    """Build a config model from flag values; bad values are usage errors"""
    try:
        return build(model, **values)
    except ValidationError as e:
        raise UsageError(str(e)) from e


# ==================== OUTPUTS ====================

def out_path(args, name: str) -> Path:
    path = Path(name)
    if not path.is_absolute():
        path = Path(args.out_dir) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def dataset_format(args, path: Path) -> str:
    return infer_format(path, args.format)


def recorder(args) -> ManifestRecorder:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in _INTERNAL}
    return ManifestRecorder(args.command, params, args.seed)
