import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seammosaic.harness import generate, seam_energy, two_tile_scene
from seammosaic.mosaic import MosaicConfig, MosaicJob, run
from seammosaic.poisson import (ContainedError, GuidanceField, RegionPlan, Solution, SolverConfig,
                                SolverError, TargetImage, assemble_system, assemble_target, blend,
                                build_regions, dirichlet_nodes, restrict_regions,
                                seamless_target, solve)
from seammosaic.raster import PointSet, Raster, RegionError

import oracles
from helpers import pointset, problem
from oracles import as_set, block


def const_raster(value, row, col, h, w, bands=1):
    return Raster.from_array(np.full((bands, h, w), value, np.int32), offset=(row, col))


# -- build_regions -------------------------------------------------------------


def test_regions_for_strip_overlap():
    s_r = PointSet.rect(0, 0, 8, 8)
    s_o = PointSet.rect(5, 0, 8, 8)  # 3x8 overlap on a 13x8 grid
    plan = build_regions(s_o, s_r)
    r, o = block(0, 0, 8, 8), block(5, 0, 8, 8)
    s_t = o - oracles.interior(r)
    assert as_set(plan.s_t) == s_t and len(s_t) == 52
    seam = s_t & oracles.boundary(r)
    assert as_set(plan.seam) == seam and len(seam) == 12
    assert as_set(plan.s_s) == oracles.interior(s_t)
    assert plan.omega == plan.s_t


def test_regions_for_reference_hole():
    plan = build_regions(PointSet.rect(0, 0, 10, 10), PointSet.rect(3, 3, 4, 4))
    assert as_set(plan.seam) == oracles.boundary(block(3, 3, 4, 4))
    assert len(plan.s_t) == 96


def test_contained_original_is_an_error():
    with pytest.raises(ContainedError):
        build_regions(PointSet.rect(2, 2, 3, 3), PointSet.rect(0, 0, 10, 10))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_region_invariants(seed):
    rng = np.random.default_rng(seed)
    o, r = oracles.random_set(rng, 12, 0.7), oracles.random_set(rng, 12, 0.7)
    try:
        plan = build_regions(pointset(o), pointset(r))
    except ContainedError:
        assert not (o - oracles.interior(r))
        return
    s_t = o - oracles.interior(r)
    assert as_set(plan.s_t) == s_t
    assert as_set(plan.seam) == s_t & oracles.boundary(r)
    assert as_set(plan.s_s) == oracles.interior(s_t)
    for d in (0, 2, None):
        sub = restrict_regions(plan, d)
        assert sub.omega.issubset(sub.s_t)
        assert not (as_set(sub.omega_boundary) & oracles.interior(as_set(sub.omega)))
        assert as_set(sub.omega_boundary) == oracles.dirichlet_of(as_set(sub.omega), o | r)


# -- restrict_regions ----------------------------------------------------------


@pytest.fixture
def straight_seam_plan():
    # The reference spans the full width, so the seam is the single row 9, 10 px long.
    plan = build_regions(PointSet.rect(5, 0, 15, 10), PointSet.rect(0, -5, 10, 20))
    assert as_set(plan.seam) == block(9, 0, 1, 10)
    return plan


def test_restrict_band_matches_brute_force(straight_seam_plan):
    plan = straight_seam_plan
    seam, s_t, s_s = as_set(plan.seam), as_set(plan.s_t), as_set(plan.s_s)
    sub = restrict_regions(plan, 3)
    assert as_set(sub.s_s) == s_s & oracles.dilate(seam, 3)
    assert as_set(sub.omega) == s_t & oracles.dilate(seam, 4)
    assert sub.d == 3


def test_restrict_degenerate_radii(straight_seam_plan):
    plan = straight_seam_plan
    assert not restrict_regions(plan, 0).s_s
    wide = restrict_regions(plan, 40)
    assert wide.omega == plan.s_t and wide.s_s == plan.s_s
    assert restrict_regions(plan, None).omega == plan.s_t
    with pytest.raises(ValueError):
        restrict_regions(plan, -1)


def test_restrict_without_seam_empties_domain():
    plan = build_regions(PointSet.rect(5, 0, 5, 5), PointSet.rect(0, 0, 5, 5))
    assert not plan.seam
    assert not restrict_regions(plan, 3).omega
    assert not restrict_regions(plan, None).omega


# -- assemble_target -----------------------------------------------------------


def test_target_constant_images():
    i_o = const_raster(10, 5, 0, 15, 20)
    i_r = const_raster(50, 0, -5, 10, 30)
    plan = build_regions(i_o.valid, i_r.valid)
    assert len(plan.seam) == 20
    t = assemble_target(i_o, i_r, plan)
    vals = t.raster.values(0, plan.s_t)
    assert (vals == 50).sum() == 20 and (vals == 10).sum() == len(plan.s_t) - 20
    assert t.from_reference == plan.seam


def test_target_without_seam_is_original():
    i_o = const_raster(10, 5, 0, 5, 5)
    plan = build_regions(i_o.valid, PointSet.rect(0, 0, 5, 5))
    t = assemble_target(i_o, const_raster(50, 0, 0, 5, 5), plan)
    assert np.all(t.raster.values(0, plan.s_t) == 10)


def test_target_checkerboard_reference():
    rr, cc = np.mgrid[0:10, 0:30]
    board = Raster.from_array(((rr + cc) % 2 * 200)[None].astype(np.int32), offset=(0, -5))
    i_o = Raster.from_array(np.arange(300, dtype=np.int32).reshape(1, 15, 20), offset=(5, 0))
    plan = build_regions(i_o.valid, board.valid)
    t = assemble_target(i_o, board, plan)
    for r, c in as_set(plan.s_t):
        expected = board.read(0, (r, c)) if (r, c) in plan.seam else i_o.read(0, (r, c))
        assert t.raster.read(0, (r, c)) == expected


def test_target_requires_data():
    i_o = const_raster(10, 5, 0, 15, 20)
    i_r = const_raster(50, 0, -5, 10, 30)
    plan = build_regions(i_o.valid, i_r.valid)
    holed = Raster(i_r.offset, i_r.samples, i_r.valid - PointSet.rect(9, 3, 1, 1))
    with pytest.raises(RegionError):
        assemble_target(i_o, holed, plan)
    with pytest.raises(ValueError):
        assemble_target(const_raster(1, 5, 0, 15, 20, bands=3), i_r, plan)


# -- guidance and assembly -----------------------------------------------------


def _block_plan(omega_pts, hull_pts):
    return RegionPlan(s_t=pointset(omega_pts), s_s=PointSet(), seam=PointSet(),
                      omega=pointset(omega_pts),
                      omega_boundary=pointset(oracles.dirichlet_of(omega_pts, hull_pts)),
                      hull=pointset(hull_pts))


def _target(values, row=0, col=0):
    r = Raster.from_array(np.asarray(values, dtype=np.int32), offset=(row, col))
    return TargetImage(r, PointSet())


def test_guidance_antisymmetric():
    src = Raster.from_array(np.arange(16, dtype=np.int32).reshape(1, 4, 4) ** 2)
    v = GuidanceField(src, src.valid - PointSet.rect(3, 3, 1, 1))
    for p, q in [((0, 0), (0, 1)), ((1, 2), (2, 2)), ((3, 2), (3, 3))]:
        assert v.pair(0, p, q) == -v.pair(0, q, p)
    assert v.pair(0, (3, 2), (3, 3)) == 0.0
    with pytest.raises(ValueError):
        v.pair(0, (0, 0), (1, 1))


def test_assembly_single_unknown():
    om = block(0, 0, 3, 3)
    hull = oracles.dilate(om, 1)
    values = np.full((1, 3, 3), 7)
    values[0, 1, 1] = 0
    system = assemble_system(_target(values), _block_plan(om, hull))
    assert system.size == 1
    assert system.matrix.toarray().tolist() == [[4.0]]
    assert system.rhs[0, 0] == 28.0
    sol = solve(system)
    assert abs(sol.values[0, 0] - 7.0) < 1e-12


def test_assembly_ramp_guidance():
    om = block(0, 0, 4, 4)
    hull = oracles.dilate(om, 1)
    ramp = np.tile(np.arange(4), (4, 1))[None]
    # Dirichlet ring set to 0: a linear ramp has zero discrete divergence.
    zero_ring = np.where(np.isin(np.arange(16).reshape(4, 4), [5, 6, 9, 10]), 5, 0)[None]
    src = Raster.from_array(ramp.astype(np.int32))
    system = assemble_system(_target(zero_ring), _block_plan(om, hull), GuidanceField(src, src.valid))
    assert system.size == 4
    assert np.allclose(system.rhs[:, 0], 0.0)
    assert np.allclose(solve(system).values[:, 0], 0.0, atol=1e-9)
    # With the ramp itself on the ring the solve reproduces the ramp.
    system = assemble_system(_target(ramp), _block_plan(om, hull), GuidanceField(src, src.valid))
    assert np.allclose(solve(system).values[:, 0], [1, 2, 1, 2], atol=1e-9)


def test_assembly_quadratic_source_matches_dense():
    om = block(0, 0, 4, 4)
    hull = oracles.dilate(om, 1)
    rr, cc = np.mgrid[0:4, 0:4]
    g = (rr ** 2 + cc)[None].astype(np.int32)
    src = Raster.from_array(g)
    system = assemble_system(_target(np.zeros((1, 4, 4))), _block_plan(om, hull),
                             GuidanceField(src, src.valid))
    f_star = {p: 0.0 for p in om}
    gv = {(r, c): float(g[0, r, c]) for r, c in om}
    unknowns, a, b, x = oracles.dense_poisson(om, oracles.dirichlet_of(om, hull), f_star, gv)
    assert np.allclose(system.rhs[:, 0], b)
    assert np.allclose(system.rhs[:, 0], -2.0)  # minus the Laplacian of row**2
    assert np.allclose(solve(system).values[:, 0], x, atol=1e-9)


def test_reduced_stencil_on_hull_edge():
    om = block(0, 0, 3, 3)
    hull = om | block(3, 0, 1, 3) | block(0, -1, 3, 1) | block(0, 3, 3, 1)  # no data above
    plan = _block_plan(om, hull)
    assert as_set(plan.omega_boundary) == om - {(0, 1), (1, 1)}
    system = assemble_system(_target(np.zeros((1, 3, 3))), plan)
    assert system.unknowns.points().tolist() == [[0, 1], [1, 1]]
    assert system.matrix.diagonal().tolist() == [3.0, 4.0]


def test_unanchored_component_is_dropped():
    om = block(0, 0, 3, 3) | block(0, 10, 2, 2)
    hull = om | oracles.dilate(block(0, 0, 3, 3), 1)  # second block has no outside data
    system = assemble_system(_target(np.zeros((1, 3, 12))), _block_plan(om, hull))
    assert system.size == 1
    assert as_set(system.dropped) == block(0, 10, 2, 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dirichlet_nodes_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    omega, hull = oracles.random_domain(rng)
    assert as_set(dirichlet_nodes(pointset(omega), pointset(hull))) == oracles.dirichlet_of(omega, hull)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_system_is_symmetric_and_matches_dense(seed):
    rng = np.random.default_rng(seed)
    omega, hull = oracles.random_domain(rng)
    plan, target, guidance, f_star, g = problem(rng, omega, hull, bands=2)
    system = assemble_system(target, plan, guidance)
    a = system.matrix.toarray()
    assert np.array_equal(a, a.T)
    for band in range(2):
        unknowns, a_ref, b_ref, _ = oracles.dense_poisson(
            omega, oracles.dirichlet_of(omega, hull), f_star[band], g[band])
        assert system.unknowns.points().tolist() == [list(p) for p in unknowns]
        assert np.array_equal(a, a_ref)
        assert np.allclose(system.rhs[:, band], b_ref)


# -- solve ---------------------------------------------------------------------


def test_empty_system_solves_to_nothing():
    plan = build_regions(PointSet.rect(5, 0, 5, 5), PointSet.rect(0, 0, 5, 5))
    plan = restrict_regions(plan, 2)
    system = assemble_system(_target(np.zeros((2, 5, 5)), 5, 0), plan)
    sol = solve(system)
    assert sol.values.shape == (0, 2) and sol.iterations == 0


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="lu")
    with pytest.raises(ValueError):
        SolverConfig(rel_tolerance=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)


@pytest.mark.parametrize("method", ["conjugate_gradient", "gauss_seidel", "multigrid"])
def test_backends_match_dense(method):
    if method == "multigrid":
        pytest.importorskip("pyamg")
    rng = np.random.default_rng(11)
    for _ in range(5):
        omega, hull = oracles.random_domain(rng)
        plan, target, guidance, f_star, g = problem(rng, omega, hull)
        system = assemble_system(target, plan, guidance)
        sol = solve(system, SolverConfig(1e-12, 10_000, method))
        _, _, _, x = oracles.dense_poisson(omega, oracles.dirichlet_of(omega, hull), f_star[0], g[0])
        assert np.max(np.abs(sol.values[:, 0] - x)) <= 1e-6


def test_non_convergence_raises():
    rng = np.random.default_rng(3)
    omega = block(0, 0, 12, 12)
    hull = oracles.dilate(omega, 1)
    plan, target, guidance, _, _ = problem(rng, omega, hull)
    system = assemble_system(target, plan, guidance)
    with pytest.raises(SolverError) as info:
        solve(system, SolverConfig(1e-12, 2))
    assert info.value.iterations == 2 and info.value.residual > 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    omega, hull = oracles.random_domain(rng)
    plan, target, _, f_star, _ = problem(rng, omega, hull, guided=False)
    system = assemble_system(target, plan)
    if not system.size:
        return
    dvals = [f_star[0][p] for p in as_set(plan.omega_boundary)]
    x = solve(system).values[:, 0]
    assert x.min() >= min(dvals) - 1e-6 and x.max() <= max(dvals) + 1e-6


# -- blend and the full stage --------------------------------------------------


def test_blend_rounds_half_up_and_clamps():
    om = block(0, 0, 3, 3)
    plan = _block_plan(om, oracles.dilate(om, 1))
    target = _target(np.full((1, 3, 3), 100))
    system = assemble_system(target, plan)
    for value, expected in [(12.6, 13), (12.5, 13), (12.49, 12), (-4.0, 0), (300.2, 255)]:
        out = blend(target, np.array([[value]]), system, plan)
        assert out.read(0, (1, 1)) == expected
        assert out.read(0, (0, 0)) == 100


def test_blend_fixed_point():
    rng = np.random.default_rng(5)
    omega, hull = oracles.random_domain(rng)
    plan, target, _, _, _ = problem(rng, omega, hull)
    system = assemble_system(target, plan)
    out = blend(target, Solution(system.initial, 0, 0.0), system, plan)
    assert np.array_equal(out.values(0, plan.s_t), target.raster.values(0, plan.s_t))


def test_identity_transplant():
    # Reference agrees with the original wherever they overlap: nothing should change.
    rng = np.random.default_rng(2)
    scene = rng.integers(0, 256, size=(2, 40, 60)).astype(np.uint8)
    ref = Raster.from_array(scene[:, :, :35])
    orig = Raster.from_array(scene[:, 5:, 20:], offset=(5, 20))
    for d in (3, None):
        edit = seamless_target(orig, ref, d)
        assert edit.system_size > 0
        for b in range(2):
            assert np.array_equal(edit.raster.values(b, edit.plan.s_t), orig.values(b, edit.plan.s_t))


def test_edit_is_local_to_omega():
    rng = np.random.default_rng(4)
    ref = Raster.from_array(rng.integers(0, 256, size=(1, 40, 40)).astype(np.uint8))
    orig = Raster.from_array(rng.integers(0, 256, size=(1, 40, 40)).astype(np.uint8), offset=(0, 20))
    edit = seamless_target(orig, ref, 4)
    outside = edit.plan.s_t - edit.plan.omega
    assert outside
    assert np.array_equal(edit.raster.values(0, outside), orig.values(0, outside))
    assert edit.raster.valid == edit.plan.s_t


def test_biased_pair_step_is_small_at_every_seam_pixel():
    tiles = generate(two_tile_scene(size=128, bias=40, bands=1), seed=3)
    result = run(MosaicJob(("a", tiles[0]), [("b", tiles[1])], MosaicConfig(histmatch=False)))
    report = seam_energy(result.raster, result.provenance)
    assert report.overall.pairs > 0
    assert report.overall.max <= 2
