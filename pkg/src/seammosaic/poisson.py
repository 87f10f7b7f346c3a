"""Poisson editing of the seam band between an original image and the reference.

The target region is the original's footprint minus the reference interior.
Reference values are pasted onto the seam (the reference boundary pixels the
original covers), and a discrete Poisson equation re-solves the pixels near the
seam so their gradients follow the original image while their values meet the
pasted seam continuously.

Dirichlet nodes are the pixels of the solve domain that touch existing data
outside it.  Domain pixels on the outer edge of the data hull have no such
neighbour and keep a reduced stencil, which acts as a zero-flux closure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import spsolve_triangular

from .histmatch import DEFAULT_LEVELS, round_half_up
from .raster import (Box, PointSet, Raster, RegionError, boundary, difference,
                     interior, intersect, union, within_distance)

logger = logging.getLogger(__name__)

# (row step, col step) for the four 4-connected neighbours.
NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class ContainedError(ValueError):
    """The original adds no pixels: it sits inside the reference interior."""


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class RegionPlan:
    s_t: PointSet             # target region, original minus reference interior
    s_s: PointSet             # source region (interior of s_t, possibly restricted)
    seam: PointSet            # s_t ∩ ∂(reference): pixels that take reference values
    omega: PointSet           # solve domain
    omega_boundary: PointSet  # Dirichlet nodes of omega
    hull: PointSet            # every pixel carrying data (original ∪ reference)
    d: int | None = None      # band radius used by restrict_regions, None if unrestricted


def dirichlet_nodes(omega: PointSet, hull: PointSet) -> PointSet:
    """Pixels of ``omega`` with at least one 4-neighbour in ``hull - omega``."""
    if not omega:
        return omega
    box = omega.bounds.pad(1)
    om = omega.aligned(box)
    outside = hull.aligned(box) & ~om
    touch = np.zeros_like(om)
    touch[1:-1, 1:-1] = (outside[:-2, 1:-1] | outside[2:, 1:-1]
                         | outside[1:-1, :-2] | outside[1:-1, 2:])
    return PointSet(box[:2], om & touch)


def build_regions(s_o: PointSet, s_r: PointSet) -> RegionPlan:
    s_t = difference(s_o, interior(s_r))
    if not s_t:
        raise ContainedError("original fully contained in reference interior")
    seam = intersect(s_t, boundary(s_r))
    hull = union(s_o, s_r)
    return RegionPlan(s_t=s_t, s_s=interior(s_t), seam=seam, omega=s_t,
                      omega_boundary=dirichlet_nodes(s_t, hull), hull=hull)


def restrict_regions(plan: RegionPlan, d: int | None) -> RegionPlan:
    """Shrink the solve domain to the band of Manhattan radius ``d + 1`` around the seam.

    ``d=None`` stands for the maximum radius: the domain stays the whole target
    region (used when histogram matching was skipped).
    """
    if d is not None and d < 0:
        raise ValueError(f"d must be non-negative, got {d}")
    if not plan.seam:
        empty = PointSet()
        return replace(plan, s_s=empty, omega=empty, omega_boundary=empty, d=d)
    if d is None:
        return replace(plan, d=None)
    s_s = within_distance(plan.s_s, plan.seam, d)
    omega = within_distance(plan.s_t, plan.seam, d + 1)
    return replace(plan, s_s=s_s, omega=omega,
                   omega_boundary=dirichlet_nodes(omega, plan.hull), d=d)


@dataclass(frozen=True, eq=False)
class TargetImage:
    """Original values over ``s_t`` with reference values pasted on the seam."""

    raster: Raster
    from_reference: PointSet

    def provenance(self) -> np.ndarray:
        """``True`` where the pixel value came from the reference (over the raster box)."""
        return self.from_reference.aligned(self.raster.box)


def assemble_target(i_o: Raster, i_r: Raster, plan: RegionPlan) -> TargetImage:
    if i_o.bands != i_r.bands:
        raise ValueError(f"band count mismatch: original {i_o.bands}, reference {i_r.bands}")
    if not plan.s_t.issubset(i_o.valid):
        raise RegionError("target region reaches outside the original's data")
    if not plan.seam.issubset(i_r.valid):
        raise RegionError("seam pixels without reference data (registration bug)")
    box = plan.s_t.bounds
    dtype = np.promote_types(i_o.samples.dtype, i_r.samples.dtype)
    samples = np.stack([i_o.window(b, box) for b in range(i_o.bands)]).astype(dtype)
    if plan.seam:
        seam = plan.seam.aligned(box)
        for b in range(i_o.bands):
            samples[b][seam] = i_r.window(b, box)[seam]
    return TargetImage(Raster(box[:2], samples, plan.s_t), plan.seam)


@dataclass(frozen=True, eq=False)
class GuidanceField:
    """Differences ``v_pq = g(p) - g(q)`` of a source image over pairs inside ``support``.

    Pairs with an endpoint outside ``support`` carry zero guidance.
    """

    source: Raster
    support: PointSet

    def pair(self, band: int, p, q) -> float:
        if abs(p[0] - q[0]) + abs(p[1] - q[1]) != 1:
            raise ValueError(f"{tuple(p)} and {tuple(q)} are not 4-neighbours")
        if p not in self.support or q not in self.support:
            return 0.0
        return float(self.source.read(band, p)) - float(self.source.read(band, q))

    def planes(self, box: Box) -> tuple[np.ndarray, np.ndarray]:
        """Source values and support mask laid out over ``box`` (all bands)."""
        support = self.support.aligned(box)
        g = np.stack([self.source.window(b, box) for b in range(self.source.bands)])
        return g.astype(np.float64), support


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Shared Laplacian over the unknowns plus one right-hand side per band."""

    unknowns: PointSet
    box: Box                 # layout of ``index``
    index: np.ndarray        # equation number per box cell, -1 off the unknowns
    matrix: sp.csr_matrix
    rhs: np.ndarray          # (n, bands)
    initial: np.ndarray      # (n, bands) warm start taken from the target
    labels: np.ndarray       # connected-component label per equation (1-based)
    dropped: PointSet = field(default_factory=PointSet)  # components with no Dirichlet data

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def assemble_system(target: TargetImage, plan: RegionPlan,
                    guidance: GuidanceField | None = None) -> SparseSystem:
    """Discretise the Poisson equation over ``plan.omega``.

    One equation per unknown ``p`` (an omega pixel that is not a Dirichlet node)::

        |N_p| f_p - sum_{q in N_p, unknown} f_q
            = sum_{q in N_p, Dirichlet} f*(q) + sum_{q in N_p} v_pq

    where ``N_p`` are the 4-neighbours of ``p`` inside omega and ``f*`` are the
    target values.  ``guidance=None`` means ``v = 0``.
    """
    bands = target.raster.bands
    if not plan.omega:
        return _empty_system(bands)
    box = plan.omega.bounds.pad(1)
    om = plan.omega.aligned(box)
    dirichlet = plan.omega_boundary.aligned(box) & om
    unknown = om & ~dirichlet

    # Components without any Dirichlet neighbour would give a singular block.
    labels, n_labels = ndimage.label(unknown)
    anchored = np.zeros(n_labels + 1, dtype=bool)
    for dr, dc in NEIGHBOURS:
        nb = np.roll(dirichlet, (-dr, -dc), axis=(0, 1))
        anchored[np.unique(labels[unknown & nb])] = True
    anchored[0] = False
    keep = anchored[labels]
    dropped = PointSet(box[:2], unknown & ~keep)
    if dropped:
        logger.warning("leaving %d unanchored pixels unchanged", len(dropped))
    unknown &= keep
    labels = np.where(unknown, labels, 0)

    n = int(np.count_nonzero(unknown))
    if n == 0:
        return replace(_empty_system(bands), dropped=dropped)
    index = np.full(box.shape, -1, dtype=np.int64)
    index[unknown] = np.arange(n)

    f_star = np.stack([target.raster.window(b, box) for b in range(bands)]).astype(np.float64)
    if guidance is not None:
        g, support = guidance.planes(box)
    diag = np.zeros(n, dtype=np.float64)
    rhs = np.zeros((n, bands), dtype=np.float64)
    rows, cols = [], []
    for dr, dc in NEIGHBOURS:
        # omega sits strictly inside the padded box, so rolling never wraps data in.
        nb_om = np.roll(om, (-dr, -dc), axis=(0, 1))
        nb_dir = np.roll(dirichlet, (-dr, -dc), axis=(0, 1))
        nb_idx = np.roll(index, (-dr, -dc), axis=(0, 1))
        here = unknown & nb_om
        diag += here[unknown]
        link = unknown & (nb_idx >= 0)
        rows.append(index[link])
        cols.append(nb_idx[link])
        fixed = (unknown & nb_dir)[unknown]
        for b in range(bands):
            rhs[:, b] += np.where(fixed, np.roll(f_star[b], (-dr, -dc), axis=(0, 1))[unknown], 0.0)
        if guidance is not None:
            pair = (support & np.roll(support, (-dr, -dc), axis=(0, 1)) & here)[unknown]
            for b in range(bands):
                v = (g[b] - np.roll(g[b], (-dr, -dc), axis=(0, 1)))[unknown]
                rhs[:, b] += np.where(pair, v, 0.0)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    off = sp.csr_matrix((np.full(rows.size, -1.0), (rows, cols)), shape=(n, n))
    matrix = (sp.diags(diag) + off).tocsr()
    matrix.sort_indices()
    initial = np.stack([f_star[b][unknown] for b in range(bands)], axis=1)
    return SparseSystem(PointSet(box[:2], unknown), box, index, matrix, rhs, initial,
                        labels[unknown].astype(np.int64), dropped)


def _empty_system(bands: int) -> SparseSystem:
    return SparseSystem(PointSet(), Box(0, 0, 0, 0), np.zeros((0, 0), dtype=np.int64),
                        sp.csr_matrix((0, 0)), np.zeros((0, bands)), np.zeros((0, bands)),
                        np.zeros(0, dtype=np.int64))


# -- solvers -----------------------------------------------------------------

METHODS = ("conjugate_gradient", "gauss_seidel", "multigrid")


@dataclass(frozen=True)
class SolverConfig:
    rel_tolerance: float = 1e-8
    max_iterations: int = 10_000
    method: str = "conjugate_gradient"

    def __post_init__(self):
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; choose from {METHODS}")


@dataclass(frozen=True)
class Solution:
    values: np.ndarray   # (n, bands), real valued
    iterations: int      # worst component
    residual: float      # worst relative residual ||b - Ax|| / ||b||


def _relative_residual(a, x, b) -> float:
    bnorm = np.linalg.norm(b)
    rnorm = np.linalg.norm(b - a @ x)
    return float(rnorm / bnorm) if bnorm > 0 else float(rnorm)


def pcg(a: sp.csr_matrix, b: np.ndarray, x0: np.ndarray | None = None,
        tol: float = 1e-8, max_iterations: int = 10_000):
    """Jacobi-preconditioned conjugate gradients for one right-hand side.

    Stops once ``||b - Ax|| <= tol * ||b||``.  Returns
    ``(x, iterations, relative_residual)``.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    inv_diag = 1.0 / a.diagonal()
    goal = tol * np.linalg.norm(b)
    r = b - a @ x
    z = r * inv_diag
    p = z.copy()
    rz = r @ z
    it = 0
    while np.linalg.norm(r) > goal and it < max_iterations:
        it += 1
        ap = a @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        np.multiply(r, inv_diag, out=z)
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    return x, it, float(_relative_residual(a, x, b))


def gauss_seidel(a: sp.csr_matrix, b: np.ndarray, x0: np.ndarray | None = None,
                 tol: float = 1e-8, max_iterations: int = 10_000):
    """Symmetric Gauss-Seidel sweeps until ``||b - Ax|| <= tol * ||b||``."""
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    lower = sp.tril(a, format="csr")
    upper = sp.triu(a, format="csr")
    res = _relative_residual(a, x, b)
    it = 0
    while res > tol and it < max_iterations:
        it += 1
        x += spsolve_triangular(lower, b - a @ x, lower=True)
        x += spsolve_triangular(upper, b - a @ x, lower=False)
        res = _relative_residual(a, x, b)
    return x, it, res


def multigrid(a: sp.csr_matrix, b: np.ndarray, x0: np.ndarray | None = None,
              tol: float = 1e-8, max_iterations: int = 10_000):
    """Smoothed-aggregation AMG (pyamg) as a CG preconditioner."""
    try:
        import pyamg
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("the multigrid method needs the optional 'pyamg' package") from exc
    b = np.asarray(b, dtype=np.float64)
    ml = pyamg.smoothed_aggregation_solver(a.tocsr(), symmetry="symmetric")
    residuals: list[float] = []
    x = ml.solve(b, x0=x0, tol=tol, maxiter=max_iterations, accel="cg", residuals=residuals)
    return x, max(len(residuals) - 1, 0), _relative_residual(a, x, b)


_BACKENDS = {"conjugate_gradient": pcg, "gauss_seidel": gauss_seidel, "multigrid": multigrid}


def solve(system: SparseSystem, cfg: SolverConfig = SolverConfig()) -> Solution:
    """Solve each band and each connected component of the system independently."""
    n, bands = system.rhs.shape
    if n == 0:
        return Solution(np.zeros((0, bands)), 0, 0.0)
    backend = _BACKENDS[cfg.method]
    x = np.empty((n, bands))
    worst_it, worst_res = 0, 0.0
    order = np.argsort(system.labels, kind="stable")
    starts = np.flatnonzero(np.r_[True, np.diff(system.labels[order]) != 0])
    groups = np.split(order, starts[1:])
    for idx in groups:
        a = system.matrix if len(groups) == 1 else system.matrix[idx][:, idx]
        for band in range(bands):
            xc, it, res = backend(a, system.rhs[idx, band], system.initial[idx, band],
                                  cfg.rel_tolerance, cfg.max_iterations)
            if res > cfg.rel_tolerance:
                raise SolverError(f"{cfg.method} did not converge on a {len(idx)}-unknown block",
                                  res, it)
            x[idx, band] = xc
            worst_it, worst_res = max(worst_it, it), max(worst_res, res)
    return Solution(x, worst_it, worst_res)


def blend(target: TargetImage, solution: Solution | np.ndarray, system: SparseSystem,
          plan: RegionPlan, levels=DEFAULT_LEVELS) -> Raster:
    """Write the rounded, clamped solution back into the target raster."""
    values = solution.values if isinstance(solution, Solution) else np.asarray(solution)
    base = target.raster
    samples = base.samples.copy()
    if system.size:
        pts = system.unknowns.points()
        rr = pts[:, 0] - base.offset.row
        cc = pts[:, 1] - base.offset.col
        # Unknowns come out of assemble_system in row-major order, like points().
        q = np.clip(round_half_up(values), levels[0], levels[1]).astype(samples.dtype)
        for b in range(base.bands):
            samples[b, rr, cc] = q[:, b]
    return Raster(base.offset, samples, plan.s_t)


@dataclass(frozen=True, eq=False)
class EditResult:
    raster: Raster
    plan: RegionPlan
    system_size: int
    iterations: int
    residual: float


def seamless_target(original: Raster, reference: Raster, d: int | None,
                    solver: SolverConfig = SolverConfig(), levels=DEFAULT_LEVELS) -> EditResult:
    """Full Poisson stage: regions, target, restriction, assembly, solve, blend."""
    plan = build_regions(original.valid, reference.valid)
    target = assemble_target(original, reference, plan)
    plan = restrict_regions(plan, d)
    guidance = GuidanceField(original, plan.omega)
    system = assemble_system(target, plan, guidance)
    solution = solve(system, solver)
    out = blend(target, solution, system, plan, levels)
    return EditResult(out, plan, system.size, solution.iterations, solution.residual)
