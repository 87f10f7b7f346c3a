"""Image bundles: a TIFF pixel file plus a JSON sidecar placing it on the grid.

Sidecar keys::

    pixels       pixel file name, relative to the sidecar
    offset_row   global row of the top-left sample
    offset_col   global column of the top-left sample
    bands, width, height
    j_min, j_max value range mapped onto the gray range at load time
    nodata       optional sentinel; a pixel is nodata when every band equals it
    mask         optional mask file (nonzero = valid); takes precedence over nodata

Pixel files hold 8- or 16-bit unsigned samples, 1-4 bands, pixel-interleaved.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import tifffile

from .histmatch import DEFAULT_LEVELS, QuantizationSpec, quantize
from .raster import PointSet, Raster


class BundleError(ValueError):
    pass


def sidecar_path(path) -> Path:
    path = Path(path)
    return path if path.suffix == ".json" else path.with_suffix(".json")


def _atomic_write(path: Path, write) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_tiff(path: Path, array: np.ndarray) -> None:
    """Write ``(bands, h, w)`` samples as a pixel-interleaved TIFF."""
    if array.shape[0] == 1:
        data, planar = array[0], None
    else:
        data, planar = np.moveaxis(array, 0, -1), "contig"
    _atomic_write(path, lambda tmp: tifffile.imwrite(
        tmp, np.ascontiguousarray(data), photometric="minisblack", planarconfig=planar))


def gray_dtype(levels) -> np.dtype:
    lo, hi = levels
    if lo >= 0 and hi <= 255:
        return np.dtype(np.uint8)
    if lo >= 0 and hi <= 65535:
        return np.dtype(np.uint16)
    raise BundleError(f"gray range {levels} does not fit an 8- or 16-bit pixel file")


def load(path, levels=DEFAULT_LEVELS) -> Raster:
    """Read a bundle and quantise its samples onto ``levels``."""
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except (OSError, ValueError) as exc:
        raise BundleError(f"{side}: unreadable sidecar ({exc})") from exc
    try:
        pixels = side.parent / meta["pixels"]
        bands, width, height = int(meta["bands"]), int(meta["width"]), int(meta["height"])
        offset = (int(meta["offset_row"]), int(meta["offset_col"]))
        j_range = (float(meta["j_min"]), float(meta["j_max"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"{side}: missing or invalid sidecar field ({exc})") from exc
    if not 1 <= bands <= 4:
        raise BundleError(f"{side}: {bands} bands, expected 1-4")
    try:
        data = tifffile.imread(pixels)
    except Exception as exc:  # tifffile raises a variety of types on bad files
        raise BundleError(f"{pixels}: unreadable pixel file ({exc})") from exc
    data = data[np.newaxis] if data.ndim == 2 else np.moveaxis(data, -1, 0)
    if data.shape != (bands, height, width):
        raise BundleError(f"{pixels}: pixel shape {data.shape} does not match "
                          f"sidecar {(bands, height, width)}")
    if data.dtype.kind == "f" and not np.all(np.isfinite(data)):
        raise BundleError(f"{pixels}: non-finite samples")

    if meta.get("mask"):
        mask_file = side.parent / meta["mask"]
        try:
            valid = tifffile.imread(mask_file) != 0
        except Exception as exc:
            raise BundleError(f"{mask_file}: unreadable mask ({exc})") from exc
        if valid.shape != (height, width):
            raise BundleError(f"{mask_file}: mask shape {valid.shape} != {(height, width)}")
    elif meta.get("nodata") is not None:
        valid = ~np.all(data == meta["nodata"], axis=0)
    else:
        valid = np.ones((height, width), dtype=bool)

    spec = QuantizationSpec(j_range[0], j_range[1], *levels)
    samples = quantize(data, spec).astype(gray_dtype(levels))
    samples[:, ~valid] = levels[0]
    return Raster(offset, samples, PointSet(offset, valid))


def save(raster: Raster, path, levels=DEFAULT_LEVELS, nodata: int | None = None) -> Path:
    """Write ``raster`` as a bundle; returns the sidecar path.

    Invalid pixels are filled with ``nodata`` (default: the bottom of the gray
    range) and an explicit mask is written so the round trip is exact.
    """
    side = sidecar_path(path)
    side.parent.mkdir(parents=True, exist_ok=True)
    dtype = gray_dtype(levels)
    fill = levels[0] if nodata is None else nodata
    valid = raster.valid_mask()
    samples = raster.samples.astype(dtype)
    samples[:, ~valid] = fill
    stem = side.with_suffix("").name
    pix_name, mask_name = f"{stem}.tif", f"{stem}.mask.tif"
    try:
        _write_tiff(side.parent / pix_name, samples)
        _write_tiff(side.parent / mask_name, (valid * 255).astype(np.uint8)[np.newaxis])
        meta = {
            "pixels": pix_name,
            "mask": mask_name,
            "nodata": int(fill),
            "offset_row": raster.offset.row,
            "offset_col": raster.offset.col,
            "bands": raster.bands,
            "width": raster.width,
            "height": raster.height,
            "j_min": levels[0],
            "j_max": levels[1],
        }
        text = json.dumps(meta, indent=2, sort_keys=True) + "\n"
        _atomic_write(side, lambda tmp: Path(tmp).write_text(text))
    except OSError as exc:
        raise BundleError(f"{side}: cannot write bundle ({exc})") from exc
    return side


def same_raster(a: Raster, b: Raster) -> bool:
    """Equal placement, validity and samples on every valid pixel."""
    if a.offset != b.offset or a.samples.shape != b.samples.shape or a.valid != b.valid:
        return False
    mask = a.valid_mask()
    return bool(np.array_equal(a.samples[:, mask], b.samples[:, mask]))
