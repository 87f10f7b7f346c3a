"""Glue between the set-based oracles and the production types."""

import numpy as np

from seammosaic.poisson import GuidanceField, RegionPlan, TargetImage
from seammosaic.raster import PointSet, Raster

import oracles


def pointset(points):
    return PointSet.from_points(sorted(points))


def problem(rng, omega, hull, bands=1, guided=True):
    """Random target/source values over ``omega`` plus the matching production objects.

    Returns ``(plan, target, guidance, f_star, g)`` where ``f_star`` and ``g``
    are per-band dicts of pixel values for the dense oracle.
    """
    om = pointset(omega)
    box = om.bounds
    shape = (bands, *box.shape)
    f = rng.integers(0, 256, size=shape).astype(np.int32)
    g = rng.integers(0, 256, size=shape).astype(np.int32)
    target = TargetImage(Raster(box[:2], f, om), PointSet())
    guidance = GuidanceField(Raster(box[:2], g, om), om) if guided else None
    plan = RegionPlan(s_t=om, s_s=PointSet(), seam=PointSet(), omega=om,
                      omega_boundary=pointset(oracles.dirichlet_of(omega, hull)),
                      hull=pointset(hull))

    def at(arr, b):
        return {(r, c): float(arr[b, r - box.row0, c - box.col0]) for r, c in omega}

    f_star = [at(f, b) for b in range(bands)]
    g_vals = [at(g, b) for b in range(bands)] if guided else [None] * bands
    return plan, target, guidance, f_star, g_vals
