"""Synthetic scenes and seam-quality metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .histmatch import QuantizationSpec, quantize
from .mosaic import MosaicConfig, MosaicJob, MosaicResult, run
from .raster import PointSet, Raster, intersect, union

ARMS = ("direct", "histmatch", "histmatch+poisson")


@dataclass(frozen=True)
class TileSpec:
    row: int
    col: int
    height: int
    width: int
    gain: float = 1.0
    bias: float = 0.0
    gamma: float = 1.0
    holes: tuple = ()          # (row, col, height, width) rectangles of nodata, scene coords
    name: str | None = None
    disjoint: bool = False     # intentionally isolated from the other tiles

    def region(self) -> PointSet:
        s = PointSet.rect(self.row, self.col, self.height, self.width)
        for hole in self.holes:
            s = s - PointSet.rect(*hole)
        return s


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    tiles: tuple[TileSpec, ...]
    bands: int = 3
    levels: tuple[int, int] = (0, 255)
    truth: tuple[dict, ...] = ({"type": "constant", "value": 128.0},)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        tiles = []
        for i, t in enumerate(data["tiles"]):
            t = dict(t)
            t["holes"] = tuple(tuple(h) for h in t.get("holes", ()))
            t.setdefault("name", f"tile_{i:02d}")
            tiles.append(TileSpec(**t))
        return cls(height=int(data["height"]), width=int(data["width"]), tiles=tuple(tiles),
                   bands=int(data.get("bands", 3)), levels=tuple(data.get("levels", (0, 255))),
                   truth=tuple(data.get("truth", cls.truth)))

    @classmethod
    def load(cls, path) -> "SceneSpec":
        try:
            data = json.loads(Path(path).read_text())
            return cls.from_dict(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed scene spec {path}: {exc}") from exc

    def to_dict(self) -> dict:
        return {"height": self.height, "width": self.width, "bands": self.bands,
                "levels": list(self.levels), "truth": [dict(c) for c in self.truth],
                "tiles": [asdict(t) for t in self.tiles]}

    def names(self) -> list[str]:
        return [t.name or f"tile_{i:02d}" for i, t in enumerate(self.tiles)]

    def validate(self) -> None:
        if not self.tiles:
            raise ValueError("scene has no tiles")
        if self.bands < 1:
            raise ValueError("scene needs at least one band")
        regions = [t.region() for t in self.tiles]
        for name, reg in zip(self.names(), regions):
            if not reg:
                raise ValueError(f"tile {name} is empty")
        linked = [i for i, t in enumerate(self.tiles) if not t.disjoint]
        for i in linked:
            others = PointSet()
            for j in linked:
                if j != i:
                    others = union(others, regions[j])
            if len(linked) > 1 and not intersect(regions[i], others):
                raise ValueError(f"tile {self.names()[i]} intersects no other tile")
        # Connectivity of the overlap graph, grown from the first linked tile.
        if linked:
            reached = {linked[0]}
            frontier = [linked[0]]
            while frontier:
                i = frontier.pop()
                for j in linked:
                    if j not in reached and intersect(regions[i], regions[j]):
                        reached.add(j)
                        frontier.append(j)
            if len(reached) != len(linked):
                raise ValueError("tiles do not form a connected union")


def truth(spec: SceneSpec, seed: int) -> np.ndarray:
    """Real-valued ground truth of shape ``(bands, height, width)`` in gray units."""
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((spec.bands, h, w))
    for b in range(spec.bands):
        for comp in spec.truth:
            kind = comp["type"]
            if kind == "constant":
                out[b] += comp["value"]
            elif kind == "gradient":
                angle = np.deg2rad(comp.get("angle_deg", rng.uniform(0, 360)))
                proj = (rr - h / 2) * np.sin(angle) + (cc - w / 2) * np.cos(angle)
                span = abs(h * np.sin(angle)) + abs(w * np.cos(angle))
                out[b] += comp["amplitude"] * proj / span
            elif kind == "blobs":
                lo_s, hi_s = comp.get("sigma", (20.0, 60.0))
                lo_a, hi_a = comp.get("amplitude", (-40.0, 40.0))
                for _ in range(int(comp.get("count", 10))):
                    r0, c0 = rng.uniform(0, h), rng.uniform(0, w)
                    s = rng.uniform(lo_s, hi_s)
                    a = rng.uniform(lo_a, hi_a)
                    out[b] += a * np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * s * s))
            elif kind == "checkerboard":
                cell = int(comp.get("cell", 32))
                board = ((rr // cell + cc // cell) % 2) * 2 - 1
                out[b] += comp["amplitude"] * board / 2
            else:
                raise ValueError(f"unknown truth component {kind!r}")
    return np.clip(out, *spec.levels)


def distort(gt: np.ndarray, tile: TileSpec, levels=(0, 255)) -> np.ndarray:
    """``gain * gt**gamma + bias`` on the unit-normalised gray scale, then quantised."""
    lo, hi = levels
    span = hi - lo
    u = np.clip((gt - lo) / span, 0.0, 1.0)
    values = lo + tile.gain * span * u ** tile.gamma + tile.bias
    return quantize(values, QuantizationSpec(lo, hi, lo, hi))


def generate(spec: SceneSpec, seed: int) -> list[Raster]:
    spec.validate()
    gt = truth(spec, seed)
    tiles = []
    for t in spec.tiles:
        region = t.region()
        box = PointSet.rect(t.row, t.col, t.height, t.width).bounds
        # Tiles may hang over the scene edge; the truth is clamped there.
        rs = np.clip(np.arange(box.row0, box.row1), 0, spec.height - 1)
        cs = np.clip(np.arange(box.col0, box.col1), 0, spec.width - 1)
        window = gt[:, rs[:, None], cs[None, :]]
        samples = distort(window, t, spec.levels)
        dtype = np.uint8 if spec.levels[1] <= 255 and spec.levels[0] >= 0 else np.int32
        tiles.append(Raster(box[:2], samples.astype(dtype), region))
    return tiles


# -- metrics -----------------------------------------------------------------


@dataclass(frozen=True)
class SeamStats:
    pairs: int
    max: float
    mean: float
    rms: float

    @classmethod
    def of(cls, diffs: np.ndarray) -> "SeamStats":
        diffs = np.abs(np.asarray(diffs, dtype=np.float64))
        if diffs.size == 0:
            return cls(0, 0.0, 0.0, 0.0)
        return cls(int(diffs.size), float(diffs.max()), float(diffs.mean()),
                   float(np.sqrt(np.mean(diffs ** 2))))


@dataclass(frozen=True)
class SeamReport:
    per_band: tuple[SeamStats, ...]
    overall: SeamStats
    by_pair: dict = field(default_factory=dict)  # (label_a, label_b) -> SeamStats over all bands


def seam_pairs(provenance: np.ndarray, valid: np.ndarray):
    """Index pairs of 4-neighbours that both carry data but come from different images."""
    out = []
    for axis in (0, 1):
        a = [slice(None), slice(None)]
        b = [slice(None), slice(None)]
        a[axis] = slice(None, -1)
        b[axis] = slice(1, None)
        a, b = tuple(a), tuple(b)
        straddle = valid[a] & valid[b] & (provenance[a] != provenance[b])
        rr, cc = np.nonzero(straddle)
        step = (1, 0) if axis == 0 else (0, 1)
        out.append((rr, cc, rr + step[0], cc + step[1]))
    return tuple(np.concatenate(parts) for parts in zip(*out))


def seam_energy(mosaic: Raster, provenance: Raster | np.ndarray) -> SeamReport:
    """Absolute differences across every provenance-straddling 4-neighbour pair."""
    prov = provenance.window(0, mosaic.box) if isinstance(provenance, Raster) else np.asarray(provenance)
    valid = mosaic.valid_mask()
    r1, c1, r2, c2 = seam_pairs(prov, valid)
    diffs = [mosaic.samples[b, r1, c1].astype(np.float64) - mosaic.samples[b, r2, c2]
             for b in range(mosaic.bands)]
    per_band = tuple(SeamStats.of(d) for d in diffs)
    overall = SeamStats.of(np.concatenate(diffs) if diffs else np.zeros(0))
    la, lb = prov[r1, c1], prov[r2, c2]
    lo, hi = np.minimum(la, lb), np.maximum(la, lb)
    by_pair = {}
    for key in sorted(set(zip(lo.tolist(), hi.tolist()))):
        sel = (lo == key[0]) & (hi == key[1])
        by_pair[key] = SeamStats.of(np.concatenate([d[sel] for d in diffs]))
    return SeamReport(per_band, overall, by_pair)


def overlap_mean_difference(a: Raster, b: Raster) -> np.ndarray:
    """Per-band mean of ``a - b`` over the pixels both rasters cover."""
    overlap = intersect(a.valid, b.valid)
    return np.array([a.values(k, overlap).astype(np.float64).mean()
                     - b.values(k, overlap).astype(np.float64).mean() for k in range(a.bands)])


def arm_config(arm: str, base: MosaicConfig = MosaicConfig()) -> MosaicConfig:
    if arm == "direct":
        return replace(base, histmatch=False, poisson=False)
    if arm == "histmatch":
        return replace(base, histmatch=True, poisson=False)
    if arm == "histmatch+poisson":
        return replace(base, histmatch=True, poisson=True)
    raise ValueError(f"unknown arm {arm!r}")


def compare_arms(tiles: list[Raster], names: list[str] | None = None,
                 base: MosaicConfig = MosaicConfig()) -> dict[str, tuple[MosaicResult, SeamReport]]:
    """Mosaic the same tiles with each method variant; the first tile is the reference."""
    names = names or [f"tile_{i:02d}" for i in range(len(tiles))]
    out = {}
    for arm in ARMS:
        job = MosaicJob((names[0], tiles[0]), list(zip(names[1:], tiles[1:])), arm_config(arm, base))
        result = run(job)
        out[arm] = (result, seam_energy(result.raster, result.provenance))
    return out


def two_tile_scene(size: int = 512, overlap: float = 0.3, bias: float = 40.0,
                   bands: int = 3, gap_rows: int = 0) -> SceneSpec:
    """Two side-by-side tiles overlapping by a fraction of their width; tile 2 is biased."""
    ov = int(round(size * overlap))
    return SceneSpec(
        height=size + gap_rows, width=2 * size - ov, bands=bands,
        truth=SMOOTH_TRUTH,
        tiles=(TileSpec(0, 0, size, size, name="tile_00"),
               TileSpec(gap_rows, size - ov, size, size, bias=bias, name="tile_01")))


def grid_scene(n: int = 3, size: int = 512, overlap: float = 0.2, bands: int = 3,
               seed: int = 0) -> SceneSpec:
    """``n x n`` tiles with mutual overlaps and mixed gain/bias/gamma distortions."""
    rng = np.random.default_rng(seed)
    step = int(round(size * (1 - overlap)))
    tiles = []
    for i in range(n):
        for j in range(n):
            first = i == 0 and j == 0
            tiles.append(TileSpec(
                i * step, j * step, size, size,
                gain=1.0 if first else float(np.round(rng.uniform(0.85, 1.15), 3)),
                bias=0.0 if first else float(np.round(rng.uniform(-25, 25), 1)),
                gamma=1.0 if first else float(np.round(rng.uniform(0.85, 1.2), 3)),
                name=f"tile_{i}{j}"))
    extent = step * (n - 1) + size
    return SceneSpec(height=extent, width=extent, bands=bands, truth=SMOOTH_TRUTH, tiles=tuple(tiles))


# Low-frequency content: natural gradients stay well below one gray level per pixel.
SMOOTH_TRUTH = (
    {"type": "constant", "value": 115.0},
    {"type": "gradient", "amplitude": 50.0},
    {"type": "blobs", "count": 24, "sigma": [40.0, 110.0], "amplitude": [-45.0, 45.0]},
)
