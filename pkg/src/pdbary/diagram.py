"""Persistence diagram value types, the pointwise metric layer and file I/O.

Diagrams are stored as flat numpy arrays (births, deaths, embedded critical
point locations) for efficiency; :class:`DiagramPoint` offers a per-point
view for the metric-level operations.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "PairType",
    "DiagramPoint",
    "PersistenceDiagram",
    "MetricParams",
    "pointwise_distance",
    "diagonal_projection",
    "lifted_distance",
    "augment",
    "threshold_by_persistence",
    "read_diagram",
    "write_diagram",
    "read_manifest",
    "write_manifest",
    "DiagramFormatError",
]

_FLOAT_FMT = "%.17g"


class DiagramFormatError(ValueError):
    """Raised when a diagram file does not satisfy the format contract."""


class PairType(str, Enum):
    """Critical pair type of a diagram: minima or maxima features."""

    MIN_SADDLE = "minSaddle"
    SADDLE_MAX = "saddleMax"


@dataclass(frozen=True)
class DiagramPoint:
    """A single birth/death pair with embedded critical point locations."""

    birth: float
    death: float
    critical_index_low: int = 0
    critical_index_high: int = 1
    birth_location: tuple[float, float, float] = (0.0, 0.0, 0.0)
    death_location: tuple[float, float, float] = (0.0, 0.0, 0.0)
    is_diagonal: bool = False

    def __post_init__(self) -> None:
        if self.death < self.birth:
            raise ValueError(
                f"death ({self.death}) smaller than birth ({self.birth})"
            )
        if self.critical_index_high != self.critical_index_low + 1:
            raise ValueError("critical indices must be consecutive")
        if self.is_diagonal and self.death != self.birth:
            raise ValueError("diagonal point must satisfy death == birth")

    @property
    def persistence(self) -> float:
        return self.death - self.birth

    def on_diagonal(self) -> bool:
        return self.is_diagonal or self.death == self.birth


@dataclass(frozen=True)
class MetricParams:
    """Parameters of the (optionally geometrically lifted) pointwise metric.

    ``alpha`` blends the birth/death metric with the Euclidean distance
    between embedded critical point locations; ``lambda_min``/``lambda_max``
    pick the location representative for minimum/maximum pairs.
    """

    q: float = 2.0
    alpha: float = 0.0
    lambda_min: float = 0.0
    lambda_max: float = 1.0

    def __post_init__(self) -> None:
        if self.q <= 0:
            raise ValueError("q must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    def lam(self, pair_type: PairType) -> float:
        if pair_type is PairType.MIN_SADDLE:
            return self.lambda_min
        return self.lambda_max


class PersistenceDiagram:
    """An ordered multiset of persistence pairs of one fixed critical type."""

    __slots__ = (
        "births",
        "deaths",
        "crit_low",
        "crit_high",
        "birth_locs",
        "death_locs",
        "is_diag",
        "pair_type",
        "label",
    )

    def __init__(
        self,
        births: np.ndarray,
        deaths: np.ndarray,
        pair_type: PairType = PairType.SADDLE_MAX,
        *,
        crit_low: np.ndarray | None = None,
        crit_high: np.ndarray | None = None,
        birth_locs: np.ndarray | None = None,
        death_locs: np.ndarray | None = None,
        is_diag: np.ndarray | None = None,
        label: str = "",
        validate: bool = True,
    ) -> None:
        n = len(births)
        self.births = np.asarray(births, dtype=np.float64).reshape(n)
        self.deaths = np.asarray(deaths, dtype=np.float64).reshape(n)
        self.pair_type = PairType(pair_type)
        default_low = 0 if self.pair_type is PairType.MIN_SADDLE else 1
        if crit_low is None:
            crit_low = np.full(n, default_low, dtype=np.int64)
        if crit_high is None:
            crit_high = np.asarray(crit_low, dtype=np.int64) + 1
        self.crit_low = np.asarray(crit_low, dtype=np.int64).reshape(n)
        self.crit_high = np.asarray(crit_high, dtype=np.int64).reshape(n)
        if birth_locs is None:
            birth_locs = np.zeros((n, 3))
        if death_locs is None:
            death_locs = np.zeros((n, 3))
        self.birth_locs = np.asarray(birth_locs, dtype=np.float64).reshape(n, 3)
        self.death_locs = np.asarray(death_locs, dtype=np.float64).reshape(n, 3)
        if is_diag is None:
            is_diag = np.zeros(n, dtype=bool)
        self.is_diag = np.asarray(is_diag, dtype=bool).reshape(n)
        self.label = label
        if validate:
            self._validate()

    def _validate(self) -> None:
        if np.any(self.deaths < self.births):
            raise ValueError("diagram contains a point with death < birth")
        if np.any(self.crit_high != self.crit_low + 1):
            raise ValueError("critical indices must be consecutive")
        if np.any(self.is_diag & (self.deaths != self.births)):
            raise ValueError("diagonal point must satisfy death == birth")
        regular = ~self.is_diag
        if np.any(regular):
            low = self.crit_low[regular]
            if np.any(low != low[0]):
                raise ValueError("all regular points must share a critical type")

    # -- constructors ------------------------------------------------------

    @classmethod
    def empty(
        cls, pair_type: PairType = PairType.SADDLE_MAX, label: str = ""
    ) -> "PersistenceDiagram":
        return cls(np.empty(0), np.empty(0), pair_type, label=label)

    @classmethod
    def from_points(
        cls,
        points: Iterable[DiagramPoint],
        pair_type: PairType = PairType.SADDLE_MAX,
        label: str = "",
    ) -> "PersistenceDiagram":
        pts = list(points)
        return cls(
            np.array([p.birth for p in pts]),
            np.array([p.death for p in pts]),
            pair_type,
            crit_low=np.array([p.critical_index_low for p in pts], dtype=np.int64),
            crit_high=np.array([p.critical_index_high for p in pts], dtype=np.int64),
            birth_locs=np.array([p.birth_location for p in pts]).reshape(-1, 3),
            death_locs=np.array([p.death_location for p in pts]).reshape(-1, 3),
            is_diag=np.array([p.is_diagonal for p in pts], dtype=bool),
            label=label,
        )

    @classmethod
    def from_pairs(
        cls,
        pairs: Sequence[tuple[float, float]],
        pair_type: PairType = PairType.SADDLE_MAX,
        label: str = "",
    ) -> "PersistenceDiagram":
        """Build a diagram from bare (birth, death) tuples."""
        arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], pair_type, label=label)

    # -- accessors ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self.births)

    def __iter__(self) -> Iterator[DiagramPoint]:
        return iter(self.points)

    def __getitem__(self, i: int) -> DiagramPoint:
        return DiagramPoint(
            birth=float(self.births[i]),
            death=float(self.deaths[i]),
            critical_index_low=int(self.crit_low[i]),
            critical_index_high=int(self.crit_high[i]),
            birth_location=tuple(self.birth_locs[i]),
            death_location=tuple(self.death_locs[i]),
            is_diagonal=bool(self.is_diag[i]),
        )

    @property
    def points(self) -> list[DiagramPoint]:
        return [self[i] for i in range(len(self))]

    @property
    def persistence(self) -> np.ndarray:
        return self.deaths - self.births

    def max_persistence(self) -> float:
        return float(self.persistence.max()) if len(self) else 0.0

    def locations(self, params: MetricParams) -> np.ndarray:
        """Per-point lifted location: the lambda blend of birth/death sites."""
        lam = params.lam(self.pair_type)
        return lam * self.death_locs + (1.0 - lam) * self.birth_locs

    def copy(self, label: str | None = None) -> "PersistenceDiagram":
        return PersistenceDiagram(
            self.births.copy(),
            self.deaths.copy(),
            self.pair_type,
            crit_low=self.crit_low.copy(),
            crit_high=self.crit_high.copy(),
            birth_locs=self.birth_locs.copy(),
            death_locs=self.death_locs.copy(),
            is_diag=self.is_diag.copy(),
            label=self.label if label is None else label,
            validate=False,
        )

    def structurally_equal(self, other: "PersistenceDiagram") -> bool:
        return (
            self.pair_type == other.pair_type
            and len(self) == len(other)
            and np.array_equal(self.births, other.births)
            and np.array_equal(self.deaths, other.deaths)
            and np.array_equal(self.crit_low, other.crit_low)
            and np.array_equal(self.birth_locs, other.birth_locs)
            and np.array_equal(self.death_locs, other.death_locs)
            and np.array_equal(self.is_diag, other.is_diag)
        )

    def __repr__(self) -> str:
        return (
            f"PersistenceDiagram({len(self)} points, {self.pair_type.value}"
            f"{', ' + self.label if self.label else ''})"
        )


# -- metric layer ----------------------------------------------------------


def pointwise_distance(a: DiagramPoint, b: DiagramPoint, q: float = 2.0) -> float:
    """Lq distance in the birth/death plane; zero between two diagonal points."""
    if q <= 0:
        raise ValueError("q must be positive")
    if a.on_diagonal() and b.on_diagonal():
        return 0.0
    dx = abs(b.birth - a.birth)
    dy = abs(b.death - a.death)
    return float((dx**q + dy**q) ** (1.0 / q))


def diagonal_projection(a: DiagramPoint) -> DiagramPoint:
    """Project a point onto the diagonal, keeping indices and locations."""
    mid = (a.birth + a.death) / 2.0
    return DiagramPoint(
        birth=mid,
        death=mid,
        critical_index_low=a.critical_index_low,
        critical_index_high=a.critical_index_high,
        birth_location=a.birth_location,
        death_location=a.death_location,
        is_diagonal=True,
    )


def lifted_distance(a: DiagramPoint, b: DiagramPoint, params: MetricParams) -> float:
    """Blend of the q=2 pointwise metric and the critical point distance."""
    d2 = pointwise_distance(a, b, 2.0)
    if params.alpha == 0.0:
        return d2
    if a.on_diagonal() and b.on_diagonal():
        return 0.0
    lam_a = params.lambda_min if a.critical_index_low == 0 else params.lambda_max
    lam_b = params.lambda_min if b.critical_index_low == 0 else params.lambda_max
    pa = np.asarray(a.death_location) * lam_a + np.asarray(a.birth_location) * (1 - lam_a)
    pb = np.asarray(b.death_location) * lam_b + np.asarray(b.birth_location) * (1 - lam_b)
    geo2 = float(np.sum((pa - pb) ** 2))
    return float(np.sqrt((1.0 - params.alpha) * d2 * d2 + params.alpha * geo2))


def _projection_arrays(D: PersistenceDiagram) -> PersistenceDiagram:
    mid = (D.births + D.deaths) / 2.0
    return PersistenceDiagram(
        mid,
        mid,
        D.pair_type,
        crit_low=D.crit_low.copy(),
        crit_high=D.crit_high.copy(),
        birth_locs=D.birth_locs.copy(),
        death_locs=D.death_locs.copy(),
        is_diag=np.ones(len(D), dtype=bool),
        label=D.label,
        validate=False,
    )


def _concat(D: PersistenceDiagram, E: PersistenceDiagram) -> PersistenceDiagram:
    return PersistenceDiagram(
        np.concatenate([D.births, E.births]),
        np.concatenate([D.deaths, E.deaths]),
        D.pair_type,
        crit_low=np.concatenate([D.crit_low, E.crit_low]),
        crit_high=np.concatenate([D.crit_high, E.crit_high]),
        birth_locs=np.concatenate([D.birth_locs, E.birth_locs]),
        death_locs=np.concatenate([D.death_locs, E.death_locs]),
        is_diag=np.concatenate([D.is_diag, E.is_diag]),
        label=D.label,
        validate=False,
    )


def augment(
    Df: PersistenceDiagram, Dg: PersistenceDiagram
) -> tuple[PersistenceDiagram, PersistenceDiagram]:
    """Balance two diagrams by injecting each other's diagonal projections."""
    if Df.pair_type != Dg.pair_type:
        raise ValueError("cannot augment diagrams of different pair types")
    return _concat(Df, _projection_arrays(Dg)), _concat(Dg, _projection_arrays(Df))


def threshold_by_persistence(D: PersistenceDiagram, rho: float) -> PersistenceDiagram:
    """Keep the points with persistence strictly above ``rho``."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    keep = D.persistence > rho
    return PersistenceDiagram(
        D.births[keep],
        D.deaths[keep],
        D.pair_type,
        crit_low=D.crit_low[keep],
        crit_high=D.crit_high[keep],
        birth_locs=D.birth_locs[keep],
        death_locs=D.death_locs[keep],
        is_diag=D.is_diag[keep],
        label=D.label,
        validate=False,
    )


# -- file I/O --------------------------------------------------------------

_HEADER = ["birth", "death", "bx", "by", "bz", "dx", "dy", "dz", "pairType"]


def write_diagram(D: PersistenceDiagram, path: str | os.PathLike) -> None:
    """Write a diagram as CSV; diagonal ghosts are never serialized."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_HEADER)
        for i in range(len(D)):
            if D.is_diag[i]:
                continue
            row = [
                _FLOAT_FMT % D.births[i],
                _FLOAT_FMT % D.deaths[i],
                *(_FLOAT_FMT % v for v in D.birth_locs[i]),
                *(_FLOAT_FMT % v for v in D.death_locs[i]),
                D.pair_type.value,
            ]
            w.writerow(row)


def read_diagram(path: str | os.PathLike, label: str = "") -> PersistenceDiagram:
    """Read a diagram CSV; malformed rows are rejected with a line number."""
    births, deaths, blocs, dlocs = [], [], [], []
    pair_type: PairType | None = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DiagramFormatError(f"{path}: empty file (missing header)")
        if [h.strip() for h in header] != _HEADER:
            raise DiagramFormatError(f"{path}: line 1: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 9:
                raise DiagramFormatError(
                    f"{path}: line {lineno}: expected 9 fields, got {len(row)}"
                )
            try:
                vals = [float(v) for v in row[:8]]
            except ValueError as exc:
                raise DiagramFormatError(f"{path}: line {lineno}: {exc}") from None
            try:
                pt = PairType(row[8].strip())
            except ValueError:
                raise DiagramFormatError(
                    f"{path}: line {lineno}: unknown pair type {row[8]!r}"
                ) from None
            if vals[1] < vals[0]:
                raise DiagramFormatError(
                    f"{path}: line {lineno}: death < birth ({vals[1]} < {vals[0]})"
                )
            if pair_type is None:
                pair_type = pt
            elif pt != pair_type:
                raise DiagramFormatError(
                    f"{path}: line {lineno}: mixed pair types in one diagram"
                )
            births.append(vals[0])
            deaths.append(vals[1])
            blocs.append(vals[2:5])
            dlocs.append(vals[5:8])
    if pair_type is None:
        pair_type = PairType.SADDLE_MAX
    return PersistenceDiagram(
        np.array(births),
        np.array(deaths),
        pair_type,
        birth_locs=np.array(blocs).reshape(-1, 3),
        death_locs=np.array(dlocs).reshape(-1, 3),
        label=label or os.path.splitext(os.path.basename(os.fspath(path)))[0],
    )


def write_manifest(
    path: str | os.PathLike, entries: Sequence[tuple[str, str]]
) -> None:
    """Write an ensemble manifest: a JSON list of (label, diagram path)."""
    payload = {"members": [{"label": lab, "path": p} for lab, p in entries]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_manifest(path: str | os.PathLike) -> list[PersistenceDiagram]:
    """Load every diagram listed in a manifest (paths relative to it)."""
    with open(path) as fh:
        payload = json.load(fh)
    base = os.path.dirname(os.path.abspath(os.fspath(path)))
    members = []
    for entry in payload["members"]:
        p = entry["path"]
        if not os.path.isabs(p):
            p = os.path.join(base, p)
        members.append(read_diagram(p, label=entry.get("label", "")))
    return members
