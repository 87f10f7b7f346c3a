"""Iterative mosaicking: match, edit, merge, repeat."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .histmatch import DEFAULT_LEVELS, SkipRule, match_to_reference
from .poisson import ContainedError, SolverConfig, SolverError, seamless_target
from .raster import PointSet, Raster, intersect

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MosaicConfig:
    d: int | None = 150
    levels: tuple[int, int] = DEFAULT_LEVELS
    skip: SkipRule = SkipRule()
    solver: SolverConfig = SolverConfig()
    histmatch: bool = True
    poisson: bool = True

    def __post_init__(self):
        if self.d is not None and self.d < 0:
            raise ValueError(f"d must be non-negative or None, got {self.d}")


@dataclass
class MergeRecord:
    image: str
    status: str = "merged"             # merged | dropped | failed
    overlap_pixels: int = 0
    histmatch: str = "disabled"        # applied | skipped | disabled
    skip_reason: str | None = None
    d: int | None = None               # band radius used; None = unrestricted
    target_pixels: int = 0
    omega_size: int = 0
    unknowns: int = 0
    iterations: int = 0
    residual: float = 0.0
    added_pixels: int = 0
    error: str | None = None
    timings: dict = field(default_factory=dict)

    def to_dict(self, timings: bool = False) -> dict:
        out = asdict(self)
        if not timings:
            out.pop("timings")
        return out


@dataclass
class MosaicJob:
    reference: tuple[str, Raster]
    candidates: list[tuple[str, Raster]]
    config: MosaicConfig = MosaicConfig()


@dataclass
class MosaicResult:
    raster: Raster
    provenance: Raster          # 1-band label raster, 0 where no data
    labels: dict[str, int]      # image id -> provenance label
    records: list[MergeRecord]
    unreachable: list[str]

    @property
    def order(self) -> list[str]:
        return [r.image for r in self.records if r.status == "merged"]

    @property
    def failed(self) -> list[str]:
        return [r.image for r in self.records if r.status == "failed"]

    def log_lines(self, timings: bool = False) -> list[str]:
        lines = [json.dumps(r.to_dict(timings), sort_keys=True) for r in self.records]
        lines += [json.dumps({"image": name, "status": "unreachable"}, sort_keys=True)
                  for name in self.unreachable]
        return lines


def select_next(reference_region: PointSet, candidates) -> str | None:
    """Id of the candidate overlapping the reference most (first wins ties), or None."""
    best, best_n = None, 0
    for name, region in candidates:
        n = len(intersect(reference_region, region))
        if n > best_n:
            best, best_n = name, n
    return best


def merge(reference: Raster, target: Raster) -> Raster:
    """Union of both rasters; the reference wins wherever both carry data."""
    if reference.bands != target.bands:
        raise ValueError("band count mismatch in merge")
    box = reference.box.union(target.box)
    dtype = np.promote_types(reference.samples.dtype, target.samples.dtype)
    samples = np.zeros((reference.bands, *box.shape), dtype=dtype)
    for src in (target, reference):
        mask = src.valid.aligned(box)
        for b in range(src.bands):
            samples[b][mask] = src.window(b, box)[mask]
    valid = reference.valid | target.valid
    return Raster(box[:2], samples, valid)


def normalize_and_stitch(reference: Raster, original: Raster, config: MosaicConfig = MosaicConfig(),
                         name: str = "original") -> tuple[Raster, MergeRecord]:
    """Match ``original`` to ``reference``, remove the seam and merge.

    Solver failures are reported in the record; the reference then comes back
    unchanged.
    """
    rec = MergeRecord(image=name)
    t0 = time.perf_counter()
    overlap = intersect(original.valid, reference.valid)
    rec.overlap_pixels = len(overlap)
    d = config.d
    matched = original
    if config.histmatch:
        matched, luts, reason = match_to_reference(original, reference, overlap,
                                                   config.levels, config.skip)
        rec.histmatch = "skipped" if luts is None else "applied"
        rec.skip_reason = reason
    if rec.histmatch != "applied":
        d = None  # no global correction happened: let the edit cover the whole target
    t1 = time.perf_counter()
    rec.timings["histmatch"] = t1 - t0

    if config.poisson:
        try:
            edit = seamless_target(matched, reference, d, config.solver, config.levels)
        except ContainedError as exc:
            rec.status, rec.error = "dropped", str(exc)
            rec.timings["poisson"] = time.perf_counter() - t1
            return reference, rec
        except SolverError as exc:
            rec.status, rec.error = "failed", str(exc)
            rec.residual = exc.residual
            rec.iterations = exc.iterations
            rec.timings["poisson"] = time.perf_counter() - t1
            logger.error("image %s: %s", name, exc)
            return reference, rec
        rec.d = d
        rec.target_pixels = len(edit.plan.s_t)
        rec.omega_size = len(edit.plan.omega)
        rec.unknowns = edit.system_size
        rec.iterations = edit.iterations
        rec.residual = edit.residual
        stitched = edit.raster
    else:
        stitched = matched
    t2 = time.perf_counter()
    rec.timings["poisson"] = t2 - t1

    merged = merge(reference, stitched)
    rec.added_pixels = len(merged.valid) - len(reference.valid)
    if rec.added_pixels == 0:
        rec.status = "dropped"
    rec.timings["merge"] = time.perf_counter() - t2
    return merged, rec


def _paint(prov: np.ndarray, prov_box, region: PointSet, label: int, new_box):
    out = np.zeros(new_box.shape, dtype=np.int32)
    if prov.size:
        r0, c0 = prov_box.row0 - new_box.row0, prov_box.col0 - new_box.col0
        out[r0:r0 + prov.shape[0], c0:c0 + prov.shape[1]] = prov
    out[region.aligned(new_box)] = label
    return out


def run(job: MosaicJob) -> MosaicResult:
    """Absorb candidates into the reference, largest overlap first, until none intersects."""
    ref_name, mosaic = job.reference
    labels = {ref_name: 1}
    for i, (name, _) in enumerate(job.candidates):
        if name in labels:
            raise ValueError(f"duplicate image id {name!r}")
        labels[name] = i + 2
    prov_box = mosaic.box
    prov = _paint(np.zeros((0, 0), np.int32), prov_box, mosaic.valid, 1, prov_box)

    remaining = list(job.candidates)
    records: list[MergeRecord] = []
    while remaining:
        pick = select_next(mosaic.valid, [(n, r.valid) for n, r in remaining])
        if pick is None:
            break
        pos = next(i for i, (n, _) in enumerate(remaining) if n == pick)
        _, original = remaining.pop(pos)
        merged, rec = normalize_and_stitch(mosaic, original, job.config, pick)
        records.append(rec)
        logger.info("%s: %s (overlap %d px, %d unknowns)", pick, rec.status,
                    rec.overlap_pixels, rec.unknowns)
        if merged is not mosaic:
            added = merged.valid - mosaic.valid
            prov = _paint(prov, prov_box, added, labels[pick], merged.box)
            prov_box = merged.box
            mosaic = merged
    unreachable = [n for n, _ in remaining]
    for name in unreachable:
        logger.warning("%s never intersects the mosaic", name)
    prov_raster = Raster(prov_box[:2], prov[np.newaxis], mosaic.valid)
    return MosaicResult(mosaic, prov_raster, labels, records, unreachable)
