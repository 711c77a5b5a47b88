"""Uniform Cartesian grids and the field / set / track containers built on them."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SIGN_TOL = 1e-12


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Node lattice ``origin + i * spacing`` with ``counts[k]`` nodes per axis.

    Each node owns a cell of width ``spacing``, so ``extent = counts * spacing``.
    """

    origin: tuple[float, ...]
    spacing: float
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))
        if len(self.origin) != len(self.counts):
            raise ValueError("origin and counts must have the same length")
        if self.dim not in (2, 3):
            raise ValueError(f"only 2-D and 3-D grids are supported, got dim={self.dim}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if min(self.counts) < 8:
            raise ValueError(f"every axis needs at least 8 nodes, got {self.counts}")

    @classmethod
    def box(cls, lower, upper, spacing: float) -> "Grid":
        """Grid whose first node sits at ``lower`` and whose last node reaches ``upper``."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        counts = np.rint((upper - lower) / spacing).astype(int) + 1
        return cls(tuple(lower), float(spacing), tuple(counts))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple(n * self.spacing for n in self.counts)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(self.counts) - 1) * self.spacing

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extent))

    @property
    def sentinel(self) -> float:
        """Finite stand-in for the distance to the empty set."""
        return 10.0 * self.diameter + 1.0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    def axes(self) -> list[np.ndarray]:
        return [o + self.spacing * np.arange(n) for o, n in zip(self.origin, self.counts)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``counts + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def index_to_point(self, index) -> np.ndarray:
        return np.asarray(self.origin) + self.spacing * np.asarray(index, dtype=float)

    def nearest_index(self, point) -> tuple[int, ...]:
        idx = np.rint((np.asarray(point, dtype=float) - np.asarray(self.origin)) / self.spacing)
        idx = np.clip(idx.astype(int), 0, np.asarray(self.counts) - 1)
        return tuple(int(i) for i in idx)

    def margin_mask(self, width: float) -> np.ndarray:
        """Nodes closer than ``width`` to a box face."""
        layers = int(np.ceil(width / self.spacing - 1e-9))
        out = np.zeros(self.counts, dtype=bool)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[ax] = slice(0, layers)
            out[tuple(sl)] = True
            sl[ax] = slice(self.counts[ax] - layers, None)
            out[tuple(sl)] = True
        return out

    def check_same(self, other: "Grid") -> None:
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != self.grid.counts:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.counts}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)

    def with_values(self, values, time: float | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.time if time is None else time)

    def sublevel(self) -> "ClosedSetMask":
        return ClosedSetMask.from_field(self, Representation.SUBLEVEL)

    def zero_set(self) -> "ClosedSetMask":
        return ClosedSetMask.from_field(self, Representation.ZERO_SET)

    @classmethod
    def from_function(cls, grid: Grid, fn, time: float = 0.0) -> "ScalarField":
        return cls(grid, fn(grid.coords()), time)


@dataclass(frozen=True, eq=False)
class DistanceField(ScalarField):
    """Distance values plus a flag marking the distance-to-empty-set convention."""

    empty: bool = False


class Representation(enum.Enum):
    SUBLEVEL = "sublevel"  # Z = {u <= 0}
    ZERO_SET = "zero_set"  # Z = {u = 0}


def sign_change_nodes(values: np.ndarray) -> np.ndarray:
    """Nodes with a face neighbour of strictly opposite sign."""
    pos = values > SIGN_TOL
    neg = values < -SIGN_TOL
    out = np.zeros(values.shape, dtype=bool)
    for ax in range(values.ndim):
        a = [slice(None)] * values.ndim
        b = [slice(None)] * values.ndim
        a[ax] = slice(0, -1)
        b[ax] = slice(1, None)
        a, b = tuple(a), tuple(b)
        cross = (pos[a] & neg[b]) | (neg[a] & pos[b])
        out[a] |= cross
        out[b] |= cross
    return out


@dataclass(frozen=True, eq=False)
class ClosedSetMask:
    grid: Grid
    inside: np.ndarray
    representation: Representation = Representation.SUBLEVEL

    def __post_init__(self):
        arr = np.array(self.inside, dtype=bool, copy=True)
        if arr.shape != self.grid.counts:
            raise ValueError("mask shape does not match grid")
        arr.flags.writeable = False
        object.__setattr__(self, "inside", arr)

    @classmethod
    def from_field(cls, u: ScalarField, representation: Representation,
                   band: float | None = None) -> "ClosedSetMask":
        vals = u.values
        if representation is Representation.SUBLEVEL:
            inside = vals <= SIGN_TOL
        else:
            band = u.grid.spacing if band is None else band
            inside = (np.abs(vals) <= band) | sign_change_nodes(vals)
        return cls(u.grid, inside, representation)

    @classmethod
    def empty(cls, grid: Grid, representation=Representation.SUBLEVEL) -> "ClosedSetMask":
        return cls(grid, np.zeros(grid.counts, dtype=bool), representation)

    @property
    def is_empty(self) -> bool:
        return not self.inside.any()

    def count(self) -> int:
        return int(self.inside.sum())

    def points(self) -> np.ndarray:
        idx = np.argwhere(self.inside)
        return np.asarray(self.grid.origin) + self.grid.spacing * idx

    def __or__(self, other: "ClosedSetMask") -> "ClosedSetMask":
        self.grid.check_same(other.grid)
        return ClosedSetMask(self.grid, self.inside | other.inside, self.representation)

    def __and__(self, other: "ClosedSetMask") -> "ClosedSetMask":
        self.grid.check_same(other.grid)
        return ClosedSetMask(self.grid, self.inside & other.inside, self.representation)

    def __invert__(self) -> "ClosedSetMask":
        return ClosedSetMask(self.grid, ~self.inside, self.representation)


@dataclass(eq=False)
class SpacetimeTrack:
    """Time-ordered level-set samples ``(t, u_t)`` encoding the sets ``Z(t)``."""

    samples: list[tuple[float, ScalarField]]
    representation: Representation = Representation.SUBLEVEL
    time_step: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.samples:
            raise ValueError("a track needs at least one sample")
        times = np.array([t for t, _ in self.samples])
        if np.any(np.diff(times) <= 0):
            raise ValueError("track times must be strictly increasing")
        g = self.samples[0][1].grid
        for _, u in self.samples:
            g.check_same(u.grid)

    @property
    def grid(self) -> Grid:
        return self.samples[0][1].grid

    @property
    def start_time(self) -> float:
        return self.samples[0][0]

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])

    @property
    def fields(self) -> list[ScalarField]:
        return [u for _, u in self.samples]

    def __len__(self) -> int:
        return len(self.samples)

    def mask(self, i: int, representation: Representation | None = None) -> ClosedSetMask:
        rep = self.representation if representation is None else representation
        return ClosedSetMask.from_field(self.samples[i][1], rep)

    def masks(self, representation: Representation | None = None) -> list[ClosedSetMask]:
        return [self.mask(i, representation) for i in range(len(self))]

    def index_at(self, t: float) -> int:
        """Index of the last sample with time <= t (within 1e-12)."""
        times = self.times
        i = int(np.searchsorted(times, t + 1e-12, side="right")) - 1
        if i < 0:
            raise ValueError(f"time {t} precedes the track start {times[0]}")
        return i

    def field_at(self, t: float) -> ScalarField:
        return self.samples[self.index_at(t)][1]

    def final(self) -> ScalarField:
        return self.samples[-1][1]


@dataclass(frozen=True, eq=False)
class SpacetimeMask:
    """Per-time node masks on a shared grid and time lattice."""

    grid: Grid
    times: np.ndarray
    inside: np.ndarray  # shape (len(times),) + grid.counts

    def slice(self, i: int) -> ClosedSetMask:
        return ClosedSetMask(self.grid, self.inside[i], Representation.SUBLEVEL)

    def contains(self, point, t: float) -> bool:
        i = int(np.argmin(np.abs(self.times - t)))
        return bool(self.inside[i][self.grid.nearest_index(point)])


# --- field dump format -------------------------------------------------------
# <name>.bin  : little-endian float64, row-major node order
# <name>.meta : one line "dim=.. counts=.. origin=.. spacing=.. time=.."


def _meta_line(grid: Grid, time: float) -> str:
    def fmt(seq):
        return ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in seq)

    return (f"dim={grid.dim} counts={fmt(grid.counts)} origin={fmt(grid.origin)} "
            f"spacing={grid.spacing!r} time={float(time)!r}\n")


def write_field(path, u: ScalarField | ClosedSetMask, time: float | None = None) -> Path:
    """Dump a field (or a mask as 0/1 values); returns the ``.bin`` path."""
    path = Path(path)
    if path.suffix != ".bin":
        path = path.with_suffix(".bin")
    if isinstance(u, ClosedSetMask):
        values, t = u.inside.astype("<f8"), 0.0 if time is None else time
    else:
        values, t = np.asarray(u.values, dtype="<f8"), u.time if time is None else time
    path.write_bytes(np.ascontiguousarray(values).tobytes(order="C"))
    path.with_suffix(".meta").write_text(_meta_line(u.grid, t))
    return path


def read_field(path) -> ScalarField:
    path = Path(path).with_suffix(".bin")
    meta = dict(kv.split("=", 1) for kv in path.with_suffix(".meta").read_text().split())
    counts = tuple(int(v) for v in meta["counts"].split(","))
    origin = tuple(float(v) for v in meta["origin"].split(","))
    grid = Grid(origin, float(meta["spacing"]), counts)
    if int(meta["dim"]) != grid.dim:
        raise ValueError("metadata dim disagrees with counts")
    values = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(counts)
    return ScalarField(grid, values, float(meta["time"]))
