"""Overlap-area histogram matching.

Gray levels are integers in ``[i_min, i_max]``.  Histograms are tallied over
an explicit region (normally the overlap of original and reference), turned
into cumulative tables, and matched level by level into a lookup table that is
then applied to the whole original image.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .raster import PointSet, Raster, RegionError

DEFAULT_LEVELS = (0, 255)


@dataclass(frozen=True)
class QuantizationSpec:
    """Affine map from a source value range onto integer gray levels."""

    j_min: float = 0.0
    j_max: float = 255.0
    i_min: int = 0
    i_max: int = 255

    def __post_init__(self):
        if not self.i_min < self.i_max:
            raise ValueError(f"need i_min < i_max, got [{self.i_min}, {self.i_max}]")
        if not self.j_min < self.j_max:
            raise ValueError(f"need j_min < j_max, got [{self.j_min}, {self.j_max}]")
        if int(self.i_min) != self.i_min or int(self.i_max) != self.i_max:
            raise ValueError("gray range bounds must be integers")

    @property
    def levels(self) -> tuple[int, int]:
        return (int(self.i_min), int(self.i_max))


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def quantize(values, spec: QuantizationSpec) -> np.ndarray:
    """Clamp to ``[j_min, j_max]``, map affinely onto the gray range and round half up."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot quantize non-finite samples")
    clipped = np.clip(values, spec.j_min, spec.j_max)
    scaled = (clipped - spec.j_min) * (spec.i_max - spec.i_min) / (spec.j_max - spec.j_min)
    out = round_half_up(scaled) + spec.i_min
    return np.clip(out, spec.i_min, spec.i_max).astype(np.int64)


@dataclass(frozen=True)
class Histogram:
    counts: np.ndarray  # counts[k] = N_(i_min + k)
    i_min: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def i_max(self) -> int:
        return self.i_min + len(self.counts) - 1

    def density(self) -> np.ndarray:
        total = self.total
        if total == 0:
            raise EmptyHistogramError("empty histogram has no density")
        return self.counts / total

    def distinct_levels(self) -> int:
        return int(np.count_nonzero(self.counts))


class EmptyHistogramError(ValueError):
    pass


@dataclass(frozen=True)
class CdfTable:
    """Cumulative counts with their total; ``cp`` gives the probabilities.

    Keeping the integer numerators lets :func:`match_lut` compare
    probabilities from histograms of different sizes exactly.
    """

    cumulative: np.ndarray
    total: int
    i_min: int = 0

    @property
    def cp(self) -> np.ndarray:
        return self.cumulative / self.total


@dataclass(frozen=True)
class LutMapping:
    lut: np.ndarray  # lut[k] = gray level assigned to input level i_min + k
    i_min: int = 0

    def __call__(self, levels) -> np.ndarray:
        return self.lut[np.asarray(levels) - self.i_min]

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.lut, np.arange(len(self.lut)) + self.i_min))

    @classmethod
    def identity(cls, levels=DEFAULT_LEVELS) -> "LutMapping":
        return cls(np.arange(levels[0], levels[1] + 1, dtype=np.int64), levels[0])


def histogram(r: Raster, band: int, region: PointSet, levels=DEFAULT_LEVELS) -> Histogram:
    """Tally one band of ``r`` over ``region`` (which must carry data)."""
    lo, hi = levels
    values = r.values(band, region).astype(np.int64)
    if values.size and (values.min() < lo or values.max() > hi):
        raise ValueError(f"samples outside gray range [{lo}, {hi}]")
    counts = np.bincount(values - lo, minlength=hi - lo + 1)
    return Histogram(counts.astype(np.int64), lo)


def cdf(h: Histogram) -> CdfTable:
    total = h.total
    if total == 0:
        raise EmptyHistogramError("empty histogram: apply the skip rule before matching")
    return CdfTable(np.cumsum(h.counts, dtype=np.int64), total, h.i_min)


def _present(table: CdfTable) -> np.ndarray:
    """Offsets of the levels with a nonzero count."""
    return np.flatnonzero(np.diff(table.cumulative, prepend=0) > 0)


def match_lut(cp_o: CdfTable, cp_r: CdfTable) -> LutMapping:
    """Gray-level transfer from the original's overlap CDF onto the reference's.

    Each level present in the original is sent to the reference level whose
    cumulative probability is closest, searching only levels the reference
    actually contains; ties go to the smaller level.  Probabilities are
    compared as cross-multiplied integer counts, so ties are exact.

    Levels absent from the original overlap are interpolated linearly between
    their present neighbours and, beyond the overlap's range, keep their
    distance to the nearest matched end.  The table is finally swept to be
    non-decreasing.
    """
    if len(cp_o.cumulative) != len(cp_r.cumulative) or cp_o.i_min != cp_r.i_min:
        raise ValueError("CDF tables cover different gray ranges")
    n_levels = len(cp_o.cumulative)
    src = _present(cp_o)
    ref = _present(cp_r)
    # cp_o[k] = a_k / N_o and cp_r[i] = b_i / N_r; compare a_k N_r with b_i N_o.
    target = cp_o.cumulative[src] * cp_r.total
    cand = cp_r.cumulative[ref] * cp_o.total  # strictly increasing
    upper = np.minimum(np.searchsorted(cand, target, side="left"), len(cand) - 1)
    lower = np.maximum(upper - 1, 0)
    use_lower = (upper > 0) & (np.abs(cand[lower] - target) <= np.abs(cand[upper] - target))
    matched = ref[np.where(use_lower, lower, upper)].astype(np.float64)

    levels = np.arange(n_levels, dtype=np.float64)
    lut = np.interp(levels, src, matched)
    below = levels < src[0]
    above = levels > src[-1]
    lut[below] = matched[0] - (src[0] - levels[below])
    lut[above] = matched[-1] + (levels[above] - src[-1])
    lut = np.clip(round_half_up(lut), 0, n_levels - 1).astype(np.int64)
    lut = np.maximum.accumulate(lut) + cp_r.i_min
    return LutMapping(lut, cp_r.i_min)


def apply_lut(r: Raster, band: int, lut: LutMapping) -> Raster:
    """Remap every valid sample of one band; geometry and validity are untouched."""
    valid = r.valid_mask()
    plane = r.samples[band]
    values = plane[valid].astype(np.int64)
    if values.size and (values.min() < lut.i_min or values.max() >= lut.i_min + len(lut.lut)):
        raise RegionError("raster holds gray levels the LUT does not cover")
    samples = r.samples.copy()
    samples[band][valid] = lut(values)
    return Raster(r.offset, samples, r.valid)


class Decision(enum.Enum):
    PROCEED = "proceed"
    SKIP = "skip"


@dataclass(frozen=True)
class SkipRule:
    min_overlap_pixels: int = 1000
    min_distinct_levels: int = 16


def skip_reason(overlap: PointSet, h_o: Histogram | None, h_r: Histogram | None,
                cfg: SkipRule = SkipRule()) -> str | None:
    """Why matching over this overlap would be unreliable, or None if it is fine."""
    if len(overlap) < cfg.min_overlap_pixels:
        return f"overlap of {len(overlap)} px below {cfg.min_overlap_pixels}"
    for name, h in (("original", h_o), ("reference", h_r)):
        n = h.distinct_levels() if h is not None else 0
        if n < cfg.min_distinct_levels:
            return f"{name} overlap has {n} distinct levels, below {cfg.min_distinct_levels}"
    return None


def overlap_sufficiency(overlap: PointSet, h_o: Histogram, h_r: Histogram,
                        cfg: SkipRule = SkipRule()) -> Decision:
    return Decision.SKIP if skip_reason(overlap, h_o, h_r, cfg) else Decision.PROCEED


def match_to_reference(original: Raster, reference: Raster, overlap: PointSet,
                       levels=DEFAULT_LEVELS, cfg: SkipRule = SkipRule()):
    """Per-band overlap matching of ``original`` onto ``reference``.

    Returns ``(raster, luts, reason)``.  When any band fails the sufficiency
    test the original comes back unchanged with ``luts=None`` and the reason.
    """
    if len(overlap) < cfg.min_overlap_pixels:
        return original, None, skip_reason(overlap, None, None, cfg)
    pairs = []
    for band in range(original.bands):
        h_o = histogram(original, band, overlap, levels)
        h_r = histogram(reference, band, overlap, levels)
        reason = skip_reason(overlap, h_o, h_r, cfg)
        if reason:
            return original, None, f"band {band}: {reason}"
        pairs.append((h_o, h_r))
    luts = [match_lut(cdf(h_o), cdf(h_r)) for h_o, h_r in pairs]
    matched = original
    for band, lut in enumerate(luts):
        matched = apply_lut(matched, band, lut)
    return matched, luts, None


def ks_distance(h_a: Histogram, h_b: Histogram) -> float:
    """Largest gap between the two cumulative probability curves."""
    return float(np.max(np.abs(cdf(h_a).cp - cdf(h_b).cp)))
