"""Seamless mosaicking of co-registered rasters.

Overlap-area histogram matching evens out radiometry, Poisson editing of the
band around each seam removes the remaining step, and images are merged into
a growing reference one at a time.
"""

from .histmatch import (CdfTable, Histogram, LutMapping, QuantizationSpec, SkipRule,
                        apply_lut, cdf, histogram, match_lut, overlap_sufficiency, quantize)
from .mosaic import MergeRecord, MosaicConfig, MosaicJob, MosaicResult, merge, normalize_and_stitch, run, select_next
from .poisson import (RegionPlan, SolverConfig, assemble_system, assemble_target, blend,
                      build_regions, restrict_regions, seamless_target, solve)
from .raster import (GlobalCoord, PointSet, Raster, boundary, difference, dilate, interior,
                     intersect, union)

__version__ = "0.1.0"
