"""
State-space regions and grid covering.

Every region answers three questions about points and axis-aligned cells:

  contains(x)            exact membership
  may_intersect(lo, hi)  False only if the cell provably misses the region
  within(lo, hi)         True only if the cell provably lies inside it

Both cell tests are exact for boxes, balls and axis-aligned ellipsoids.
Set operations combine them conservatively, which is what makes
region_grid cover a region soundly.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Tuple

import numpy as np

from app.config import Settings, get_settings
from app.core.errors import ResourceLimitError, ValidationError

logger = logging.getLogger(__name__)

Vector = Tuple[float, ...]


def _vector(values, name: str) -> Vector:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ValidationError("expected a finite vector", field=name)
    return tuple(float(v) for v in arr)


class Region:
    """Base class; subclasses are frozen dataclasses so structural equality holds"""

    kind = 'region'

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def contains(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounding_box(self) -> 'Box':
        raise NotImplementedError

    def may_intersect(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _within(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def within(self, lo: np.ndarray, hi: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Cell containment test; tol > 0 shrinks the cell first"""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if tol > 0.0:
            mid = 0.5 * (lo + hi)
            lo, hi = np.minimum(lo + tol, mid), np.maximum(hi - tol, mid)
        return self._within(lo, hi)

    def is_empty(self) -> bool:
        return False

    def corner_points(self) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, count: int, max_rounds: int = 200) -> np.ndarray:
        """Rejection-sample up to `count` members from the bounding box"""
        if count <= 0 or self.is_empty():
            return np.empty((0, self.dim))
        box = self.bounding_box()
        lo, hi = box.lo, box.hi
        found: List[np.ndarray] = []
        total = 0
        for _ in range(max_rounds):
            batch = lo + rng.random((max(2 * count, 64), self.dim)) * (hi - lo)
            batch = batch[self.contains(batch)]
            found.append(batch)
            total += len(batch)
            if total >= count:
                break
        points = np.concatenate(found, axis=0)[:count]
        if len(points) < count:
            logger.debug(f"Rejection sampling of {self.kind} returned {len(points)} of {count} points")
        return points

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Box(Region):
    lower: Vector
    upper: Vector

    kind = 'box'

    def __post_init__(self):
        lower, upper = _vector(self.lower, 'box.lower'), _vector(self.upper, 'box.upper')
        if len(lower) != len(upper):
            raise ValidationError("lower and upper differ in length", field='box')
        if any(a > b for a, b in zip(lower, upper)):
            raise ValidationError("lower exceeds upper", field='box')
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def bounding_box(self):
        return self

    def may_intersect(self, lo, hi):
        return np.all((np.asarray(lo) <= self.hi) & (np.asarray(hi) >= self.lo), axis=-1)

    def _within(self, lo, hi):
        return np.all((lo >= self.lo) & (hi <= self.hi), axis=-1)

    def corner_points(self):
        grids = np.meshgrid(*[np.unique([a, b]) for a, b in zip(self.lower, self.upper)], indexing='ij')
        return np.stack([g.ravel() for g in grids], axis=-1)

    def hull(self, other: 'Box') -> 'Box':
        return Box(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def to_dict(self):
        return {'kind': self.kind, 'lower': list(self.lower), 'upper': list(self.upper)}


@dataclass(frozen=True)
class Ball(Region):
    center: Vector
    radius: float

    kind = 'ball'

    def __post_init__(self):
        object.__setattr__(self, 'center', _vector(self.center, 'ball.center'))
        if not self.radius > 0:
            raise ValidationError("radius must be positive", field='ball.radius')
        object.__setattr__(self, 'radius', float(self.radius))

    @property
    def dim(self):
        return len(self.center)

    def contains(self, x):
        d = np.asarray(x, dtype=float) - np.array(self.center)
        return np.sum(d * d, axis=-1) <= self.radius ** 2

    def bounding_box(self):
        c = np.array(self.center)
        return Box(c - self.radius, c + self.radius)

    def may_intersect(self, lo, hi):
        c = np.array(self.center)
        nearest = np.clip(c, lo, hi)
        return np.sum((nearest - c) ** 2, axis=-1) <= self.radius ** 2

    def _within(self, lo, hi):
        c = np.array(self.center)
        far = np.maximum(np.abs(lo - c), np.abs(hi - c))
        return np.sum(far ** 2, axis=-1) <= self.radius ** 2

    def corner_points(self):
        c = np.array(self.center)
        offsets = self.radius * np.eye(self.dim)
        return np.concatenate([c + offsets, c - offsets], axis=0)

    def to_dict(self):
        return {'kind': self.kind, 'center': list(self.center), 'radius': self.radius}


@dataclass(frozen=True)
class Ellipsoid(Region):
    """Axis-aligned quadratic sublevel set: sum_i w_i (x_i - c_i)^2 <= level"""
    center: Vector
    weights: Vector
    level: float = 1.0

    kind = 'ellipsoid'

    def __post_init__(self):
        center = _vector(self.center, 'ellipsoid.center')
        weights = _vector(self.weights, 'ellipsoid.weights')
        if len(center) != len(weights) or any(w <= 0 for w in weights):
            raise ValidationError("weights must be positive, one per coordinate", field='ellipsoid.weights')
        if not self.level > 0:
            raise ValidationError("level must be positive", field='ellipsoid.level')
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'level', float(self.level))

    @property
    def dim(self):
        return len(self.center)

    def _form(self, d):
        return np.sum(np.array(self.weights) * d * d, axis=-1)

    def contains(self, x):
        return self._form(np.asarray(x, dtype=float) - np.array(self.center)) <= self.level

    def bounding_box(self):
        c = np.array(self.center)
        semi = np.sqrt(self.level / np.array(self.weights))
        return Box(c - semi, c + semi)

    def may_intersect(self, lo, hi):
        c = np.array(self.center)
        return self._form(np.clip(c, lo, hi) - c) <= self.level

    def _within(self, lo, hi):
        c = np.array(self.center)
        return self._form(np.maximum(np.abs(lo - c), np.abs(hi - c))) <= self.level

    def corner_points(self):
        c = np.array(self.center)
        offsets = np.diag(np.sqrt(self.level / np.array(self.weights)))
        return np.concatenate([c + offsets, c - offsets], axis=0)

    def to_dict(self):
        return {'kind': self.kind, 'center': list(self.center), 'weights': list(self.weights), 'level': self.level}


@dataclass(frozen=True)
class Union(Region):
    parts: Tuple[Region, ...]

    kind = 'union'

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts or len({p.dim for p in parts}) != 1:
            raise ValidationError("union needs at least one part, all of one dimension", field='union.parts')
        object.__setattr__(self, 'parts', parts)

    @property
    def dim(self):
        return self.parts[0].dim

    def contains(self, x):
        return np.any([p.contains(x) for p in self.parts], axis=0)

    def bounding_box(self):
        box = self.parts[0].bounding_box()
        for p in self.parts[1:]:
            box = box.hull(p.bounding_box())
        return box

    def may_intersect(self, lo, hi):
        return np.any([p.may_intersect(lo, hi) for p in self.parts], axis=0)

    def _within(self, lo, hi):
        # a cell split across parts is reported as not within
        return np.any([p._within(lo, hi) for p in self.parts], axis=0)

    def is_empty(self):
        return all(p.is_empty() for p in self.parts)

    def corner_points(self):
        return np.concatenate([p.corner_points() for p in self.parts], axis=0)

    def to_dict(self):
        return {'kind': self.kind, 'parts': [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class Intersection(Region):
    parts: Tuple[Region, ...]

    kind = 'intersection'

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts or len({p.dim for p in parts}) != 1:
            raise ValidationError("intersection needs at least one part, all of one dimension", field='intersection.parts')
        object.__setattr__(self, 'parts', parts)

    @property
    def dim(self):
        return self.parts[0].dim

    def contains(self, x):
        return np.all([p.contains(x) for p in self.parts], axis=0)

    def bounding_box(self):
        boxes = [p.bounding_box() for p in self.parts]
        lo = np.max([b.lo for b in boxes], axis=0)
        hi = np.min([b.hi for b in boxes], axis=0)
        return Box(lo, np.maximum(lo, hi))

    def may_intersect(self, lo, hi):
        return np.all([p.may_intersect(lo, hi) for p in self.parts], axis=0)

    def _within(self, lo, hi):
        return np.all([p._within(lo, hi) for p in self.parts], axis=0)

    def is_empty(self):
        boxes = [p.bounding_box() for p in self.parts]
        return any(p.is_empty() for p in self.parts) or bool(
            np.any(np.max([b.lo for b in boxes], axis=0) > np.min([b.hi for b in boxes], axis=0)))

    def corner_points(self):
        pts = np.concatenate([p.corner_points() for p in self.parts], axis=0)
        return pts[self.contains(pts)]

    def to_dict(self):
        return {'kind': self.kind, 'parts': [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class Difference(Region):
    base: Region
    removed: Region

    kind = 'difference'

    def __post_init__(self):
        if self.base.dim != self.removed.dim:
            raise ValidationError("operands differ in dimension", field=self.kind)

    @property
    def dim(self):
        return self.base.dim

    def contains(self, x):
        return self.base.contains(x) & ~self.removed.contains(x)

    def bounding_box(self):
        return self.base.bounding_box()

    def may_intersect(self, lo, hi):
        return self.base.may_intersect(lo, hi) & ~self.removed._within(np.asarray(lo, float), np.asarray(hi, float))

    def _within(self, lo, hi):
        return self.base._within(lo, hi) & ~self.removed.may_intersect(lo, hi)

    def is_empty(self):
        return self.base == self.removed or self.base.is_empty()

    def corner_points(self):
        pts = np.concatenate([self.base.corner_points(), self.removed.corner_points()], axis=0)
        return pts[self.contains(pts)]

    def to_dict(self):
        return {'kind': self.kind, 'base': self.base.to_dict(), 'removed': self.removed.to_dict()}


@dataclass(frozen=True)
class Complement(Difference):
    """Complement of a region taken within an enclosing box"""

    kind = 'complement'

    def __post_init__(self):
        super().__post_init__()
        if not isinstance(self.base, Box):
            raise ValidationError("complement is taken within a box", field='complement.box')

    def to_dict(self):
        return {'kind': self.kind, 'box': self.base.to_dict(), 'region': self.removed.to_dict()}


def region_from_dict(data: Dict[str, Any], field: str = 'region') -> Region:
    if not isinstance(data, dict):
        raise ValidationError("expected an object", field=field)
    kind = str(data.get('kind', '')).lower()
    try:
        if kind == 'box':
            return Box(data['lower'], data['upper'])
        if kind == 'ball':
            return Ball(data['center'], data['radius'])
        if kind == 'ellipsoid':
            return Ellipsoid(data['center'], data['weights'], data.get('level', 1.0))
        if kind in ('union', 'intersection'):
            parts = tuple(region_from_dict(p, f"{field}.parts[{i}]") for i, p in enumerate(data['parts']))
            return Union(parts) if kind == 'union' else Intersection(parts)
        if kind == 'difference':
            return Difference(region_from_dict(data['base'], f"{field}.base"),
                              region_from_dict(data['removed'], f"{field}.removed"))
        if kind == 'complement':
            return Complement(region_from_dict(data['box'], f"{field}.box"),
                              region_from_dict(data['region'], f"{field}.region"))
    except KeyError as e:
        raise ValidationError(f"missing key {e.args[0]!r}", field=field)
    except TypeError as e:
        raise ValidationError(f"malformed {kind}: {e}", field=field)
    raise ValidationError(f"unknown region kind {data.get('kind')!r}", field=f"{field}.kind")


@dataclass(frozen=True)
class CellGrid:
    """Axis-aligned cells as parallel arrays of centers and per-axis half widths"""
    centers: np.ndarray
    half_widths: np.ndarray

    def __len__(self):
        return self.centers.shape[0]

    @property
    def radii(self) -> np.ndarray:
        """Infinity-norm radius of each cell"""
        return self.half_widths.max(axis=-1) if len(self) else np.empty(0)

    @property
    def lower(self) -> np.ndarray:
        return self.centers - self.half_widths

    @property
    def upper(self) -> np.ndarray:
        return self.centers + self.half_widths

    def __iter__(self) -> Iterator[Tuple[np.ndarray, float]]:
        for center, radius in zip(self.centers, self.radii):
            yield center, float(radius)

    def take(self, mask_or_index) -> 'CellGrid':
        return CellGrid(self.centers[mask_or_index], self.half_widths[mask_or_index])

    @classmethod
    def empty(cls, dim: int) -> 'CellGrid':
        return cls(np.empty((0, dim)), np.empty((0, dim)))

    @classmethod
    def concat(cls, grids: List['CellGrid'], dim: int) -> 'CellGrid':
        grids = [g for g in grids if len(g)]
        if not grids:
            return cls.empty(dim)
        return cls(np.concatenate([g.centers for g in grids]), np.concatenate([g.half_widths for g in grids]))


def _axis_edges(lo: float, hi: float, count: int) -> np.ndarray:
    k = np.arange(count + 1)
    return np.clip(lo + (hi - lo) * k / count, lo, hi)


def _filter(region: Region, lo: np.ndarray, hi: np.ndarray, tol: float) -> np.ndarray:
    keep = region.may_intersect(lo, hi)
    if tol > 0.0 and isinstance(region, Difference):
        # cells that sit inside the removed set up to rounding are dropped too
        keep &= ~region.removed.within(lo, hi, tol)
    return keep


def region_grid(region: Region, r: float, tol: float = None, max_cells: int = None,
                chunk: int = 1_000_000, settings: Settings = None) -> CellGrid:
    """
    Cover `region` with axis-aligned cells of side at most r.

    Each axis of the bounding box is split into ceil(width / r) equal cells,
    so every cell has infinity-norm radius <= r / 2. Cells that provably miss
    the region are discarded. `tol` defaults to settings.snap_tolerance * r.
    """
    if not r > 0:
        raise ValueError(f"cell size must be positive, got {r}")
    if region.is_empty():
        return CellGrid.empty(region.dim)
    tol = (settings or get_settings()).snap_tolerance * r if tol is None else tol
    box = region.bounding_box()
    widths = box.hi - box.lo
    counts = np.maximum(1, np.ceil(widths / r - 1e-12).astype(np.int64))
    total = int(np.prod(counts))
    if max_cells is not None and total > max_cells:
        raise ResourceLimitError(f"grid of {total} cells at r={r} exceeds the cap", requested=total, limit=max_cells)

    edges = [_axis_edges(a, b, int(c)) for a, b, c in zip(box.lo, box.hi, counts)]
    grids = []
    for start in range(0, total, chunk):
        idx = np.stack(np.unravel_index(np.arange(start, min(start + chunk, total)), tuple(counts)), axis=-1)
        lo = np.stack([edges[i][idx[:, i]] for i in range(region.dim)], axis=-1)
        hi = np.stack([edges[i][idx[:, i] + 1] for i in range(region.dim)], axis=-1)
        keep = _filter(region, lo, hi, tol)
        grids.append(CellGrid(0.5 * (lo[keep] + hi[keep]), 0.5 * (hi[keep] - lo[keep])))
    grid = CellGrid.concat(grids, region.dim)
    logger.debug(f"region_grid({region.kind}, r={r}): {len(grid)} of {total} cells kept")
    return grid


def split_cells(grid: CellGrid, r: float, region: Region = None, max_cells: int = None) -> CellGrid:
    """Subdivide every cell into equal sub-cells of side at most r"""
    if not len(grid):
        return grid
    counts = np.maximum(1, np.ceil(2.0 * grid.half_widths / r - 1e-12).astype(np.int64))
    per_cell = np.prod(counts, axis=-1)
    total = int(per_cell.sum())
    if max_cells is not None and total > max_cells:
        raise ResourceLimitError(f"refinement to {total} cells at r={r} exceeds the cap", requested=total, limit=max_cells)
    centers, halves = [], []
    for c, h, n in zip(grid.centers, grid.half_widths, counts):
        lo = c - h
        axes = [_axis_edges(lo[i], lo[i] + 2 * h[i], int(n[i])) for i in range(len(c))]
        mids = np.meshgrid(*[0.5 * (e[:-1] + e[1:]) for e in axes], indexing='ij')
        sub_h = np.array([(e[1] - e[0]) / 2.0 for e in axes])
        sub_c = np.stack([m.ravel() for m in mids], axis=-1)
        centers.append(sub_c)
        halves.append(np.broadcast_to(sub_h, sub_c.shape))
    out = CellGrid(np.concatenate(centers), np.concatenate(halves).copy())
    if region is not None:
        out = out.take(region.may_intersect(out.lower, out.upper))
    return out
