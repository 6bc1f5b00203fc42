"""Domain types shared by every module, plus CSV ingestion and export.

Input CSV schema (header required)::

    w,y[,propensity][,event_time,event_observed][,x1..xd][,priority.<name>...][,gamma]

Any other numeric column is carried along untouched in ``EvalDataset.extras``.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import SchemaError

__all__ = [
    "EvalDataset",
    "PriorityRanking",
    "ScoreVector",
    "RateEstimate",
    "SCORE_FAMILIES",
    "validate_dataset",
    "rank_by_priority",
    "ranking_from_values",
    "read_csv",
    "read_columns",
    "parse_columns",
    "write_csv",
    "dataset_to_columns",
]

SCORE_FAMILIES = ("ipw", "aipw_rct", "aipw_obs", "aipw_survival", "supplied")

_FEATURE_RE = re.compile(r"^x(\d+)$")
_PRIORITY_PREFIX = "priority."
_RESERVED = ("w", "y", "propensity", "event_time", "event_observed", "gamma")


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EvalDataset:
    """Per-unit evaluation records.

    Arrays are read-only once constructed; build instances through
    :func:`validate_dataset` so that the invariants are checked.
    """

    treatment: np.ndarray
    outcome: np.ndarray
    propensity: np.ndarray | None = None
    event_time: np.ndarray | None = None
    event_observed: np.ndarray | None = None
    features: np.ndarray | None = None
    priorities: Mapping[str, np.ndarray] = field(default_factory=dict)
    gamma: np.ndarray | None = None
    extras: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.treatment.shape[0])

    @property
    def has_survival(self) -> bool:
        return self.event_time is not None

    def priority(self, name: str) -> np.ndarray:
        try:
            return self.priorities[name]
        except KeyError:
            known = ", ".join(sorted(self.priorities)) or "none"
            raise SchemaError(f"unknown priority column {name!r} (available: {known})") from None

    def subset(self, idx) -> "EvalDataset":
        """Rows ``idx`` as a new dataset (used for train/test splits)."""
        idx = np.asarray(idx)
        return validate_dataset({k: np.asarray(v)[idx] for k, v in dataset_to_columns(self).items()})

    def with_columns(self, priorities=None, gamma=None, extras=None) -> "EvalDataset":
        """Copy with extra priority columns, a score column or pass-through columns."""
        cols = dataset_to_columns(self)
        for name, values in (priorities or {}).items():
            cols[_PRIORITY_PREFIX + name] = values
        if gamma is not None:
            cols["gamma"] = gamma
        for name, values in (extras or {}).items():
            cols[name] = values
        return validate_dataset(cols)


@dataclass(frozen=True)
class PriorityRanking:
    """Descending-priority ordering of units.

    ``order[j]`` is the unit index at (0-based) rank ``j``. ``tie_groups``
    holds 1-based inclusive rank intervals ``(k + 1, k')`` whose units share
    one priority value; only groups of size >= 2 are listed.
    """

    order: np.ndarray
    sorted_priority: np.ndarray
    tie_groups: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return int(self.order.shape[0])

    @property
    def group_ids(self) -> np.ndarray:
        """Group label per rank position; tied ranks share a label."""
        p = self.sorted_priority
        return np.concatenate(([0], np.cumsum(p[1:] != p[:-1])))


@dataclass(frozen=True)
class ScoreVector:
    """Per-unit doubly robust scores with their provenance."""

    values: np.ndarray
    family: str = "supplied"
    fold_assignment: np.ndarray | None = None
    endpoint: tuple[str, float] | None = None
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 1:
            raise SchemaError("scores must be one-dimensional")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0]) + 1
            raise SchemaError(f"non-finite score at row {bad}")
        if self.family not in SCORE_FAMILIES:
            raise SchemaError(f"unknown score family {self.family!r}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class RateEstimate:
    """Point estimate with half-sample bootstrap inference."""

    weight: str
    point: float
    std_error: float
    ci_low: float
    ci_high: float
    p_value: float
    replicates: int
    seed: int
    n: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "weight": self.weight,
            "point": float(self.point),
            "std_error": float(self.std_error),
            "ci_low": float(self.ci_low),
            "ci_high": float(self.ci_high),
            "p_value": float(self.p_value),
            "replicates": int(self.replicates),
            "seed": int(self.seed),
            "n": int(self.n),
            "degenerate": bool(self.degenerate),
        }


def _column(raw, name, n_expected=None) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(f"column {name!r} is not numeric") from None
    if arr.ndim != 1:
        raise SchemaError(f"column {name!r} must be one-dimensional")
    if n_expected is not None and arr.shape[0] != n_expected:
        raise SchemaError(
            f"column length mismatch: {name!r} has {arr.shape[0]} rows, expected {n_expected}"
        )
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise SchemaError(f"non-finite value in column {name!r} at row {bad[0] + 1}")
    return arr


def _binary(arr, name, label) -> np.ndarray:
    bad = np.flatnonzero((arr != 0) & (arr != 1))
    if bad.size:
        raise SchemaError(f"{label} not in {{0,1}} at row {bad[0] + 1}")
    return arr.astype(np.int64)


def validate_dataset(raw_columns: Mapping[str, Sequence[float]]) -> EvalDataset:
    """Check a named column map and build an :class:`EvalDataset`.

    Raises :class:`SchemaError` naming the offending column (and row, where
    the problem is row-specific).
    """
    if "w" not in raw_columns or "y" not in raw_columns:
        raise SchemaError("columns 'w' and 'y' are required")
    w = _column(raw_columns["w"], "w")
    n = w.shape[0]
    if n == 0:
        raise SchemaError("dataset has no rows")
    w = _binary(w, "w", "treatment")
    y = _column(raw_columns["y"], "y", n)

    propensity = None
    if "propensity" in raw_columns:
        propensity = _column(raw_columns["propensity"], "propensity", n)
        bad = np.flatnonzero((propensity <= 0) | (propensity >= 1))
        if bad.size:
            raise SchemaError(f"propensity outside (0,1) at row {bad[0] + 1}")

    has_t = "event_time" in raw_columns
    has_d = "event_observed" in raw_columns
    if has_t != has_d:
        missing = "event_observed" if has_t else "event_time"
        raise SchemaError(f"missing paired censoring column {missing!r}")
    event_time = event_observed = None
    if has_t:
        event_time = _column(raw_columns["event_time"], "event_time", n)
        bad = np.flatnonzero(event_time < 0)
        if bad.size:
            raise SchemaError(f"negative event_time at row {bad[0] + 1}")
        event_observed = _binary(
            _column(raw_columns["event_observed"], "event_observed", n), "event_observed", "event_observed"
        )

    feat_idx = {}
    priorities = {}
    extras = {}
    for name in raw_columns:
        m = _FEATURE_RE.match(name)
        if m:
            feat_idx[int(m.group(1))] = name
        elif name.startswith(_PRIORITY_PREFIX):
            pname = name[len(_PRIORITY_PREFIX):]
            if not pname:
                raise SchemaError("priority column needs a name: 'priority.<name>'")
            priorities[pname] = _frozen(_column(raw_columns[name], name, n))
        elif name not in _RESERVED:
            extras[name] = _frozen(_column(raw_columns[name], name, n))

    features = None
    if feat_idx:
        d = max(feat_idx)
        if sorted(feat_idx) != list(range(1, d + 1)):
            raise SchemaError(f"feature columns must be x1..x{d} without gaps")
        features = np.column_stack([_column(raw_columns[f"x{k}"], f"x{k}", n) for k in range(1, d + 1)])

    gamma = _column(raw_columns["gamma"], "gamma", n) if "gamma" in raw_columns else None

    return EvalDataset(
        treatment=_frozen(w, np.int64),
        outcome=_frozen(y),
        propensity=None if propensity is None else _frozen(propensity),
        event_time=None if event_time is None else _frozen(event_time),
        event_observed=None if event_observed is None else _frozen(event_observed, np.int64),
        features=None if features is None else _frozen(features),
        priorities=priorities,
        gamma=None if gamma is None else _frozen(gamma),
        extras=extras,
    )


def ranking_from_values(values: np.ndarray) -> PriorityRanking:
    """Rank units by decreasing ``values``; ties keep original index order."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(-values, kind="stable")
    sp = values[order]
    groups = []
    start = 0
    for j in range(1, len(sp) + 1):
        if j == len(sp) or sp[j] != sp[start]:
            if j - start > 1:
                groups.append((start + 1, j))
            start = j
    return PriorityRanking(order=_frozen(order, np.int64), sorted_priority=_frozen(sp), tie_groups=tuple(groups))


def rank_by_priority(d: EvalDataset, priority_name: str) -> PriorityRanking:
    """Ranking induced by the priority column ``priority_name`` (exact-equality ties)."""
    return ranking_from_values(d.priority(priority_name))


def dataset_to_columns(d: EvalDataset) -> dict[str, np.ndarray]:
    """Inverse of :func:`validate_dataset`, in canonical column order."""
    cols: dict[str, np.ndarray] = {"w": d.treatment, "y": d.outcome}
    if d.propensity is not None:
        cols["propensity"] = d.propensity
    if d.event_time is not None:
        cols["event_time"] = d.event_time
        cols["event_observed"] = d.event_observed
    if d.features is not None:
        for k in range(d.features.shape[1]):
            cols[f"x{k + 1}"] = d.features[:, k]
    for name, values in d.priorities.items():
        cols[_PRIORITY_PREFIX + name] = values
    if d.gamma is not None:
        cols["gamma"] = d.gamma
    cols.update(d.extras)
    return cols


_INT_COLUMNS = ("w", "event_observed")


def _fmt(v: float) -> str:
    # repr gives the shortest string that parses back to the same double
    return repr(float(v))


def write_csv(d: EvalDataset | Mapping[str, np.ndarray], path=None) -> str:
    """Serialize a dataset (or a plain column map) to CSV text.

    Writes to ``path`` when given; always returns the text.
    """
    cols = dataset_to_columns(d) if isinstance(d, EvalDataset) else dict(d)
    names = list(cols)
    n = len(next(iter(cols.values())))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    render = [
        (lambda v: str(int(v))) if name in _INT_COLUMNS else _fmt
        for name in names
    ]
    arrays = [np.asarray(cols[name]) for name in names]
    for i in range(n):
        writer.writerow([r(a[i]) for r, a in zip(render, arrays)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def parse_columns(text: str) -> dict[str, list[float]]:
    """Parse CSV text into a raw column map (no validation)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty CSV: header required") from None
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header")
    cols: dict[str, list[float]] = {h: [] for h in header}
    for rowno, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise SchemaError(f"row {rowno} has {len(row)} fields, header has {len(header)}")
        for h, cell in zip(header, row):
            try:
                value = float(cell)
            except ValueError:
                raise SchemaError(f"non-numeric value {cell!r} in column {h!r} at row {rowno}") from None
            if not math.isfinite(value):
                raise SchemaError(f"non-finite value in column {h!r} at row {rowno}")
            cols[h].append(value)
    return cols


def read_columns(path) -> dict[str, list[float]]:
    return parse_columns(Path(path).read_text(encoding="utf-8"))


def read_csv(path) -> EvalDataset:
    """Read and validate a dataset CSV file."""
    return validate_dataset(read_columns(path))
