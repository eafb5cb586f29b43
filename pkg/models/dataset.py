"""
Dispel Data Containers
Immutable datasets, linear weights, mix traces and span decompositions
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from models.errors import ValidationError

# (attribute, label)
GroupId = Tuple[int, int]


def format_group(g: GroupId) -> str:
    return f"{g[0]}|{g[1]}"


def parse_group(text: str) -> GroupId:
    try:
        a, y = text.split("|")
        return int(a), int(y)
    except ValueError as e:
        raise ValidationError(f"group id {text!r} is not of the form 'a|y'") from e


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Rows of (x, y, a) stored column-wise.

    Features:
    - Read-only arrays; derived datasets are new objects
    - Group index built once, groups sorted by (a, y)
    - Labels are integers: +/-1 for the synthetic family, class ids otherwise
    """
    X: np.ndarray
    y: np.ndarray
    a: np.ndarray
    group_index: Dict[GroupId, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        X = np.asarray(self.X)
        if X.ndim != 2:
            raise ValidationError(f"features must be a 2-D array, got shape {X.shape}")
        if not np.issubdtype(X.dtype, np.floating):
            X = X.astype(np.float64)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        a = np.asarray(self.a, dtype=np.int64).reshape(-1)
        if not (len(y) == len(a) == X.shape[0]):
            raise ValidationError(
                f"row count mismatch: X has {X.shape[0]}, y has {len(y)}, a has {len(a)}"
            )
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "group_index", self._index())

    def _index(self) -> Dict[GroupId, np.ndarray]:
        if self.n == 0:
            return {}
        pairs = np.stack([self.a, self.y], axis=1)
        keys, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(inverse, kind="stable")
        bounds = np.cumsum(np.bincount(inverse, minlength=len(keys)))[:-1]
        return {
            (int(k[0]), int(k[1])): _frozen(idx)
            for k, idx in zip(keys, np.split(order, bounds))
        }

    # ==================== SHAPE ====================

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def dim(self) -> int:
        return int(self.X.shape[1])

    def __len__(self) -> int:
        return self.n

    @property
    def groups(self) -> List[GroupId]:
        return list(self.group_index)

    @property
    def classes(self) -> List[int]:
        return sorted(int(c) for c in np.unique(self.y))

    def group_counts(self) -> Dict[GroupId, int]:
        return {g: len(idx) for g, idx in self.group_index.items()}

    def class_counts(self) -> Dict[int, int]:
        values, counts = np.unique(self.y, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    # ==================== DERIVED DATASETS ====================

    def subset(self, rows: Union[np.ndarray, Sequence[int]]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(X=self.X[rows], y=self.y[rows], a=self.a[rows])

    def with_features(self, X: np.ndarray) -> "Dataset":
        return Dataset(X=X, y=self.y, a=self.a)

    def drop_groups(self, groups: Sequence[GroupId]) -> "Dataset":
        keep = np.ones(self.n, dtype=bool)
        for g in groups:
            if g in self.group_index:
                keep[self.group_index[g]] = False
        return self.subset(np.flatnonzero(keep))

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise ValidationError("nothing to concatenate")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise ValidationError(f"dimension mismatch across datasets: {sorted(dims)}")
        return Dataset(
            X=np.concatenate([p.X for p in parts]),
            y=np.concatenate([p.y for p in parts]),
            a=np.concatenate([p.a for p in parts]),
        )


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """
    Linear head. A 1-D `w` is a binary head whose positive side is
    classes[1]; a 2-D `w` holds one-vs-rest rows, one per class.
    """
    w: np.ndarray
    b: Optional[Union[float, np.ndarray]] = None
    classes: Tuple[int, ...] = (-1, 1)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim not in (1, 2):
            raise ValidationError(f"weights must be 1-D or 2-D, got shape {w.shape}")
        object.__setattr__(self, "w", _frozen(w.copy()))
        if self.b is not None:
            b = np.asarray(self.b, dtype=np.float64)
            object.__setattr__(self, "b", float(b) if b.ndim == 0 else _frozen(b.copy()))
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))

    @classmethod
    def zeros(cls, dim: int, bias: bool = True) -> "ModelWeights":
        return cls(w=np.zeros(dim), b=0.0 if bias else None)

    @property
    def dim(self) -> int:
        return int(self.w.shape[-1])

    @property
    def has_bias(self) -> bool:
        return self.b is not None

    @property
    def multiclass(self) -> bool:
        return self.w.ndim == 2

    def as_vector(self) -> np.ndarray:
        """Flat [w, b] for binary heads"""
        if self.has_bias:
            return np.append(self.w, self.b)
        return self.w.copy()

    @classmethod
    def from_vector(cls, v: np.ndarray, bias: bool, classes: Tuple[int, ...] = (-1, 1)) -> "ModelWeights":
        v = np.asarray(v, dtype=np.float64)
        if bias:
            return cls(w=v[:-1], b=float(v[-1]), classes=classes)
        return cls(w=v, b=None, classes=classes)

    def scores(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.dim:
            raise ValidationError(f"dimension mismatch: data has {X.shape[1]}, weights have {self.dim}")
        out = X @ self.w.T
        if self.b is not None:
            out = out + self.b
        return out

    def is_finite(self) -> bool:
        ok = bool(np.all(np.isfinite(self.w)))
        if self.b is not None:
            ok = ok and bool(np.all(np.isfinite(self.b)))
        return ok


@dataclass(frozen=True, eq=False)
class MixTrace:
    """Per-row record of a mix: whether mixed, partner row, cross-class fallback"""
    mixed: np.ndarray
    partner: np.ndarray    # -1 where unmixed
    cross_class: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mixed", _frozen(np.asarray(self.mixed, dtype=bool)))
        object.__setattr__(self, "partner", _frozen(np.asarray(self.partner, dtype=np.int64)))
        object.__setattr__(self, "cross_class", _frozen(np.asarray(self.cross_class, dtype=bool)))

    def __len__(self) -> int:
        return len(self.mixed)

    @property
    def mix_rate(self) -> float:
        return float(self.mixed.mean()) if len(self.mixed) else 0.0


@dataclass(frozen=True)
class SpanDecomposition:
    """
    Split of w into its part inside span{e1, e2} and the orthogonal rest.
    Normalised fields divide by ||w|| (zero when w is zero).
    """
    core_spur: Tuple[float, float]
    noise_norm: float
    full_norm: float

    @property
    def core_norm(self) -> float:
        return float(np.hypot(*self.core_spur))

    @property
    def normalised(self) -> Tuple[float, float, float]:
        if self.full_norm == 0.0:
            return (0.0, 0.0, 0.0)
        return (
            self.core_spur[0] / self.full_norm,
            self.core_spur[1] / self.full_norm,
            self.noise_norm / self.full_norm,
        )
