"""Grid-anchored rasters and exact point-set algebra on the shared pixel grid.

Every image in a job lives on one integer grid.  A :class:`PointSet` stores a
dense boolean mask over its tight bounding box, so set algebra reduces to
aligning two masks on a common box and combining them elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np
from scipy import ndimage


class GlobalCoord(NamedTuple):
    row: int
    col: int


class Box(NamedTuple):
    """Half-open rectangle ``[row0, row1) x [col0, col1)`` on the global grid."""

    row0: int
    col0: int
    row1: int
    col1: int

    @property
    def shape(self) -> tuple[int, int]:
        return (max(self.row1 - self.row0, 0), max(self.col1 - self.col0, 0))

    @property
    def empty(self) -> bool:
        return self.row1 <= self.row0 or self.col1 <= self.col0

    def union(self, other: "Box") -> "Box":
        if self.empty:
            return other
        if other.empty:
            return self
        return Box(min(self.row0, other.row0), min(self.col0, other.col0),
                   max(self.row1, other.row1), max(self.col1, other.col1))

    def intersection(self, other: "Box") -> "Box":
        box = Box(max(self.row0, other.row0), max(self.col0, other.col0),
                  min(self.row1, other.row1), min(self.col1, other.col1))
        return box if not box.empty else EMPTY_BOX

    def pad(self, n: int) -> "Box":
        return Box(self.row0 - n, self.col0 - n, self.row1 + n, self.col1 + n)


EMPTY_BOX = Box(0, 0, 0, 0)


def _slices(inner: Box, outer: Box) -> tuple[slice, slice]:
    """Index of ``inner`` inside an array laid out over ``outer``."""
    return (slice(inner.row0 - outer.row0, inner.row1 - outer.row0),
            slice(inner.col0 - outer.col0, inner.col1 - outer.col0))


class PointSet:
    """An immutable finite set of pixels on the global grid.

    ``PointSet(origin, mask)`` takes the global coordinate of ``mask[0, 0]``;
    the stored mask is always trimmed to the tight bounding box of its members.
    """

    __slots__ = ("_origin", "_mask", "_count")

    def __init__(self, origin: tuple[int, int] = (0, 0), mask: np.ndarray | None = None):
        if mask is None:
            mask = np.zeros((0, 0), dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
        rows = np.flatnonzero(mask.any(axis=1))
        if rows.size == 0:
            self._origin = GlobalCoord(0, 0)
            self._mask = np.zeros((0, 0), dtype=bool)
            self._count = 0
        else:
            cols = np.flatnonzero(mask.any(axis=0))
            r0, r1 = int(rows[0]), int(rows[-1]) + 1
            c0, c1 = int(cols[0]), int(cols[-1]) + 1
            trimmed = mask[r0:r1, c0:c1].copy()
            self._origin = GlobalCoord(int(origin[0]) + r0, int(origin[1]) + c0)
            self._mask = trimmed
            self._count = int(np.count_nonzero(trimmed))
        self._mask.flags.writeable = False

    # -- construction -------------------------------------------------------

    @classmethod
    def empty(cls) -> "PointSet":
        return cls()

    @classmethod
    def rect(cls, row: int, col: int, height: int, width: int) -> "PointSet":
        return cls((row, col), np.ones((max(height, 0), max(width, 0)), dtype=bool))

    @classmethod
    def from_points(cls, points) -> "PointSet":
        pts = np.asarray(list(points), dtype=np.int64).reshape(-1, 2)
        if pts.size == 0:
            return cls()
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        mask = np.zeros((hi - lo + 1), dtype=bool)
        mask[pts[:, 0] - lo[0], pts[:, 1] - lo[1]] = True
        return cls((int(lo[0]), int(lo[1])), mask)

    # -- inspection ---------------------------------------------------------

    @property
    def origin(self) -> GlobalCoord:
        return self._origin

    @property
    def mask(self) -> np.ndarray:
        """Read-only membership grid over :attr:`bounds`."""
        return self._mask

    @property
    def bounds(self) -> Box:
        if self._count == 0:
            return EMPTY_BOX
        h, w = self._mask.shape
        return Box(self._origin.row, self._origin.col,
                   self._origin.row + h, self._origin.col + w)

    @property
    def cardinality(self) -> int:
        return self._count

    def __len__(self) -> int:
        return self._count

    def __bool__(self) -> bool:
        return self._count > 0

    def __contains__(self, p) -> bool:
        r, c = p
        b = self.bounds
        if not (b.row0 <= r < b.row1 and b.col0 <= c < b.col1):
            return False
        return bool(self._mask[r - b.row0, c - b.col0])

    def points(self) -> np.ndarray:
        """Members as an ``(n, 2)`` array of global ``(row, col)`` in row-major order."""
        rr, cc = np.nonzero(self._mask)
        return np.stack([rr + self._origin.row, cc + self._origin.col], axis=1)

    def __iter__(self) -> Iterator[GlobalCoord]:
        for r, c in self.points():
            yield GlobalCoord(int(r), int(c))

    def aligned(self, box: Box) -> np.ndarray:
        """Membership as a fresh boolean array laid out over ``box``."""
        out = np.zeros(box.shape, dtype=bool)
        if self._count == 0 or box.empty:
            return out
        common = self.bounds.intersection(box)
        if not common.empty:
            out[_slices(common, box)] = self._mask[_slices(common, self.bounds)]
        return out

    def issubset(self, other: "PointSet") -> bool:
        return len(difference(self, other)) == 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointSet):
            return NotImplemented
        return (self._count == other._count and self.bounds == other.bounds
                and np.array_equal(self._mask, other._mask))

    def __hash__(self) -> int:
        return hash((self.bounds, self._count, self._mask.tobytes()))

    def __repr__(self) -> str:
        return f"PointSet(bounds={tuple(self.bounds)}, cardinality={self._count})"

    def __and__(self, other: "PointSet") -> "PointSet":
        return intersect(self, other)

    def __or__(self, other: "PointSet") -> "PointSet":
        return union(self, other)

    def __sub__(self, other: "PointSet") -> "PointSet":
        return difference(self, other)


# -- set algebra -------------------------------------------------------------


def intersect(a: PointSet, b: PointSet) -> PointSet:
    box = a.bounds.intersection(b.bounds)
    if box.empty:
        return PointSet()
    return PointSet(box[:2], a.aligned(box) & b.aligned(box))


def union(a: PointSet, b: PointSet) -> PointSet:
    box = a.bounds.union(b.bounds)
    if box.empty:
        return PointSet()
    return PointSet(box[:2], a.aligned(box) | b.aligned(box))


def difference(a: PointSet, b: PointSet) -> PointSet:
    if not a or a.bounds.intersection(b.bounds).empty:
        return a
    box = a.bounds
    return PointSet(box[:2], a.mask & ~b.aligned(box))


def _interior_mask(mask: np.ndarray) -> np.ndarray:
    # Off-set neighbours count as missing, so the zero padding does the work.
    p = np.pad(mask, 1)
    return (mask & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:])


def interior(s: PointSet) -> PointSet:
    """Pixels of ``s`` whose four 4-connected neighbours all belong to ``s``."""
    if not s:
        return s
    return PointSet(s.origin, _interior_mask(s.mask))


def boundary(s: PointSet) -> PointSet:
    """``s`` minus its interior."""
    if not s:
        return s
    return PointSet(s.origin, s.mask & ~_interior_mask(s.mask))


def _l1_distance(seeds: np.ndarray) -> np.ndarray:
    """Exact Manhattan distance from every cell to the nearest True cell of ``seeds``."""
    return ndimage.distance_transform_cdt(~seeds, metric="taxicab")


def dilate(s: PointSet, d: int) -> PointSet:
    """Union of closed Manhattan balls of radius ``d`` around every member (unclipped)."""
    if d < 0:
        raise ValueError(f"dilation radius must be non-negative, got {d}")
    if d == 0 or not s:
        return s
    box = s.bounds.pad(d)
    dist = _l1_distance(s.aligned(box))
    return PointSet(box[:2], dist <= d)


def within_distance(s: PointSet, seeds: PointSet, d: int | None) -> PointSet:
    """``s ∩ dilate(seeds, d)`` without materialising the dilation.

    ``d=None`` means an unbounded radius: every member of ``s`` is kept as long
    as ``seeds`` is nonempty.
    """
    if not s or not seeds:
        return PointSet()
    if d is None:
        return s
    if d < 0:
        raise ValueError(f"dilation radius must be non-negative, got {d}")
    # A shortest 4-path between two cells never leaves their bounding box, so
    # the chamfer distance over the union box equals the true L1 distance.
    box = s.bounds.union(seeds.bounds)
    dist = _l1_distance(seeds.aligned(box))
    keep = s.aligned(box) & (dist <= d)
    return PointSet(box[:2], keep)


# -- rasters -----------------------------------------------------------------


class RegionError(ValueError):
    """A read or write touched pixels that carry no data."""


@dataclass(frozen=True, eq=False)
class Raster:
    """Multi-band grid of integer gray levels anchored at ``offset``.

    ``samples`` has shape ``(bands, height, width)``.  Samples outside
    ``valid`` are meaningless and never read.
    """

    offset: GlobalCoord
    samples: np.ndarray
    valid: PointSet

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim == 2:
            samples = samples[np.newaxis]
        if samples.ndim != 3 or samples.shape[0] < 1:
            raise ValueError(f"samples must be (bands, height, width), got {samples.shape}")
        if samples.shape[1] < 1 or samples.shape[2] < 1:
            raise ValueError("raster must be at least 1x1")
        if not np.issubdtype(samples.dtype, np.integer):
            raise TypeError(f"samples must hold integer gray levels, got {samples.dtype}")
        object.__setattr__(self, "offset", GlobalCoord(int(self.offset[0]), int(self.offset[1])))
        object.__setattr__(self, "samples", samples)
        if self.valid and not self.valid.issubset(PointSet.rect(*self.box[:2], *samples.shape[1:])):
            raise ValueError("valid mask extends outside the raster rectangle")

    @classmethod
    def from_array(cls, samples, offset=(0, 0), valid: np.ndarray | PointSet | None = None) -> "Raster":
        """Build a raster; ``valid`` may be a mask aligned with ``samples`` (default: all valid)."""
        samples = np.asarray(samples)
        if samples.ndim == 2:
            samples = samples[np.newaxis]
        h, w = samples.shape[1:]
        if valid is None:
            valid = PointSet.rect(offset[0], offset[1], h, w)
        elif not isinstance(valid, PointSet):
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != (h, w):
                raise ValueError(f"valid mask shape {valid.shape} != raster shape {(h, w)}")
            valid = PointSet(offset, valid)
        return cls(GlobalCoord(*offset), samples, valid)

    @property
    def bands(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]

    @property
    def box(self) -> Box:
        r, c = self.offset
        return Box(r, c, r + self.height, c + self.width)

    def valid_mask(self) -> np.ndarray:
        return self.valid.aligned(self.box)

    def read(self, band: int, p) -> int:
        """Return the stored sample at global ``p``; reading nodata is an error."""
        if not 0 <= band < self.bands:
            raise IndexError(f"band {band} out of range for {self.bands}-band raster")
        if p not in self.valid:
            raise RegionError(f"read of pixel {tuple(p)} outside the valid region")
        return int(self.samples[band, p[0] - self.offset.row, p[1] - self.offset.col])

    def values(self, band: int, region: PointSet) -> np.ndarray:
        """Samples of one band at the members of ``region``, in row-major member order."""
        if not region.issubset(self.valid):
            raise RegionError("region is not contained in the valid data of the raster")
        if not region:
            return np.zeros(0, dtype=self.samples.dtype)
        pts = region.points()
        return self.samples[band, pts[:, 0] - self.offset.row, pts[:, 1] - self.offset.col]

    def window(self, band: int, box: Box, fill=0) -> np.ndarray:
        """One band laid out over an arbitrary ``box``; cells without data get ``fill``."""
        out = np.full(box.shape, fill, dtype=self.samples.dtype)
        common = self.box.intersection(box)
        if not common.empty:
            out[_slices(common, box)] = self.samples[band][_slices(common, self.box)]
        return out
