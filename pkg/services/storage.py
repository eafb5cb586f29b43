"""
Dispel Storage Service
Dataset, weights, report, trace and table files (CSV and DSPL binary)
"""

from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from models.dataset import Dataset, MixTrace, ModelWeights, format_group
from models.errors import FormatError, ValidationError
from models.schemas import GroupReport
from utils.logger import get_logger

logger = get_logger("storage")

PathLike = Union[str, Path]

MAGIC = b"DSPL"
VERSION = 1
HEADER = np.dtype([("magic", "S4"), ("version", "<u4"), ("n", "<u8"), ("d", "<u8")])
META = np.dtype([("y", "i1"), ("a", "i1")])


def infer_format(path: PathLike, fmt: Optional[str] = None) -> str:
    if fmt:
        if fmt not in ("csv", "bin"):
            raise ValidationError(f"unknown dataset format {fmt!r}; use csv or bin")
        return fmt
    return "bin" if str(path).endswith((".bin", ".dspl")) else "csv"


def write_csv(df: pd.DataFrame, path: PathLike):
    """Locale-free CSV: '.' decimals, LF endings, UTF-8, shortest round-trip floats"""
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


# ==================== DATASETS ====================

def save_dataset(data: Dataset, path: PathLike, fmt: Optional[str] = None):
    fmt = infer_format(path, fmt)
    if fmt == "bin":
        _save_bin(data, path)
    else:
        _save_csv(data, path)
    logger.debug("dataset_saved", extra={"path": str(path), "format": fmt, "n": data.n, "d": data.dim})


def load_dataset(path: PathLike, fmt: Optional[str] = None) -> Dataset:
    fmt = infer_format(path, fmt)
    if not Path(path).exists():
        raise ValidationError(f"dataset file not found: {path}")
    data = _load_bin(path) if fmt == "bin" else _load_csv(path)
    logger.debug("dataset_loaded", extra={"path": str(path), "format": fmt, "n": data.n, "d": data.dim})
    return data


def _save_csv(data: Dataset, path: PathLike):
    df = pd.DataFrame(
        np.asarray(data.X, dtype=np.float64),
        columns=[f"x{j}" for j in range(data.dim)],
    )
    df.insert(0, "g", [format_group((int(a), int(y))) for a, y in zip(data.a, data.y)])
    df.insert(0, "a", data.a)
    df.insert(0, "y", data.y)
    write_csv(df, path)


def _check_row_widths(path: PathLike):
    """Every data line must carry as many fields as the header"""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise FormatError(f"empty CSV file {path}", row=0)
    widths = np.array([line.count(",") + 1 for line in lines])
    off = np.flatnonzero(widths[1:] != widths[0])
    if len(off):
        i = int(off[0]) + 1
        raise FormatError(f"row has {widths[i] - 3} features, expected {widths[0] - 3}", row=i)


def _load_csv(path: PathLike) -> Dataset:
    _check_row_widths(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.ParserError as e:
        raise FormatError(f"malformed CSV in {path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise FormatError(f"empty CSV file {path}", row=0) from e

    cols = list(df.columns)
    d = len(cols) - 3
    if cols[:3] != ["y", "a", "g"] or d < 1 or cols[3:] != [f"x{j}" for j in range(d)]:
        raise FormatError(f"malformed header in {path}: expected y,a,g,x0..x{{d-1}}", row=0)

    feats = df[cols[3:]]
    short = (feats == "").any(axis=1).to_numpy()
    if short.any():
        i = int(np.flatnonzero(short)[0])
        have = int((feats.iloc[i] != "").sum())
        raise FormatError(f"row has {have} features, expected {d}", row=i + 1)

    # float() on the written repr is exact; pandas' fast converter is not
    try:
        X = feats.to_numpy().astype(np.float64)
    except ValueError:
        coerced = feats.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
        literal_nan = feats.apply(lambda c: c.str.lower().isin(["nan"])).any(axis=1).to_numpy()
        bad = np.isnan(coerced).any(axis=1) & ~literal_nan
        row = int(np.flatnonzero(bad)[0]) + 1 if bad.any() else None
        raise FormatError("unparsable feature value", row=row)

    try:
        y = df["y"].astype(np.int64).to_numpy()
        a = df["a"].astype(np.int64).to_numpy()
    except ValueError as e:
        raise FormatError(f"labels and attributes must be integers: {e}") from e
    expected = [format_group((int(ai), int(yi))) for ai, yi in zip(a, y)]
    mismatch = df["g"].to_numpy() != np.array(expected, dtype=object)
    if mismatch.any():
        i = int(np.flatnonzero(mismatch)[0])
        raise FormatError(f"unknown group encoding {df['g'].iloc[i]!r}, expected {expected[i]!r}", row=i + 1)
    return Dataset(X=X, y=y, a=a)


def _save_bin(data: Dataset, path: PathLike):
    header = np.zeros(1, dtype=HEADER)
    header[0] = (MAGIC, VERSION, data.n, data.dim)
    meta = np.zeros(data.n, dtype=META)
    meta["y"] = data.y
    meta["a"] = data.a
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(data.X, dtype="<f4").tobytes())
        f.write(meta.tobytes())


def _load_bin(path: PathLike) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.itemsize:
        raise FormatError("truncated header", byte_offset=len(raw))
    header = np.frombuffer(raw, dtype=HEADER, count=1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise FormatError(f"bad magic {bytes(header['magic'])!r}, expected {MAGIC!r}", byte_offset=0)
    if int(header["version"]) != VERSION:
        raise FormatError(f"unsupported version {int(header['version'])}", byte_offset=4)
    n, d = int(header["n"]), int(header["d"])
    body = HEADER.itemsize + 4 * n * d
    expected = body + META.itemsize * n
    if len(raw) != expected:
        raise FormatError(
            f"file is {len(raw)} bytes, header promises {expected} (n={n}, d={d})",
            byte_offset=min(len(raw), expected),
        )
    X = np.frombuffer(raw, dtype="<f4", count=n * d, offset=HEADER.itemsize).reshape(n, d).astype(np.float32)
    meta = np.frombuffer(raw, dtype=META, count=n, offset=body)
    return Dataset(X=X, y=meta["y"].astype(np.int64), a=meta["a"].astype(np.int64))


# ==================== WEIGHTS ====================

def save_weights(weights: ModelWeights, path: PathLike):
    """Header w0..w{d-1},b; one-vs-rest heads add a leading class column"""
    cols = [f"w{j}" for j in range(weights.dim)]
    if weights.multiclass:
        df = pd.DataFrame(weights.w, columns=cols)
        df["b"] = weights.b if weights.has_bias else np.nan
        df.insert(0, "class", list(weights.classes))
    else:
        df = pd.DataFrame([weights.w], columns=cols)
        df["b"] = weights.b if weights.has_bias else np.nan
    write_csv(df, path)


def load_weights(path: PathLike, classes=(-1, 1)) -> ModelWeights:
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"malformed weights file {path}: {e}") from e
    cols = [c for c in df.columns if c.startswith("w")]
    if not cols or "b" not in df.columns or cols != [f"w{j}" for j in range(len(cols))]:
        raise FormatError(f"weights header must be w0..w{{d-1}},b in {path}", row=0)
    W = df[cols].to_numpy(dtype=np.float64)
    b = df["b"].to_numpy(dtype=np.float64)
    if "class" in df.columns:
        return ModelWeights(w=W, b=b, classes=tuple(int(c) for c in df["class"]))
    if len(df) != 1:
        raise FormatError(f"expected one weight row, found {len(df)}", row=len(df))
    bias = None if np.isnan(b[0]) else float(b[0])
    return ModelWeights(w=W[0], b=bias, classes=tuple(classes))


# ==================== REPORTS AND TABLES ====================

def report_frame(report: GroupReport) -> pd.DataFrame:
    return pd.DataFrame(report.rows(), columns=["group", "count", "value"])


def save_report(report: GroupReport, path: PathLike):
    write_csv(report_frame(report), path)


def save_trace(trace: MixTrace, path: PathLike):
    df = pd.DataFrame({
        "row": np.arange(len(trace)),
        "mixed": trace.mixed.astype(int),
        "partner": pd.array(np.where(trace.mixed, trace.partner, 0), dtype="Int64"),
        "cross_class": trace.cross_class.astype(int),
    })
    df.loc[~trace.mixed, "partner"] = pd.NA
    write_csv(df, path)


def save_table(df: pd.DataFrame, path: PathLike):
    write_csv(df, path)
