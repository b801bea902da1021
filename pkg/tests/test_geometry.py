import warnings

import numpy as np
import pytest

from sdecert.errors import DimensionMismatch, SpecValidationWarning
from sdecert.geometry import (Box, Interval, ReachAvoidSpec, Region,
                              beta_from_p, region_contains, region_intersects)


def gbm2d_spec() -> ReachAvoidSpec:
    dom = Box([-100, -100], [100, 100])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SpecValidationWarning)
        return ReachAvoidSpec(
            domain=Region.box(dom),
            init=Region.box(Box([45, -55], [55, -45])),
            goal=Region.box(Box([-25, -25], [25, 25])),
            safe=Region.difference(dom, [Box([-100, -100], [-80, 100])]),
            p_ra=0.95)


class TestInterval:
    def test_invalid(self):
        with pytest.raises(ValueError):
            Interval(1.0, 0.0)

    def test_degenerate_point(self):
        iv = Interval(2.0, 2.0)
        assert iv.width == 0.0 and iv.contains(2.0)


class TestBox:
    def test_volume(self):
        b = Box([0, 0], [2, 3])
        assert b.volume() == 6.0
        assert Box([1, 1], [1, 5]).volume() == 0.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            Box([0, 1], [1, 0])

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Box([0, 0], [1, 1]).contains([0.5])


class TestRegionContains:
    def test_pendulum_init_contains_equilibrium(self):
        init = Region.box(Box([3 * np.pi / 4, -1], [5 * np.pi / 4, 1]))
        assert region_contains(init, [np.pi, 0.0])

    def test_center_of_member_box(self):
        r = Region.union([Box([0, 0], [1, 1]), Box([2, 0], [3, 1])])
        for b in r.parts:
            assert region_contains(r, b.center)

    def test_point_in_subtracted_box(self):
        r = Region.difference(Box([0, 0], [1, 1]), [Box([0.4, 0.4], [0.6, 0.6])])
        assert not region_contains(r, [0.5, 0.5])
        # the subtraction removes only the interior: its boundary stays in
        assert region_contains(r, [0.4, 0.5])


class TestRegionIntersects:
    def test_overlapping_boxes(self):
        r = Region.box(Box([0, 0], [1, 1]))
        assert region_intersects(r, Box([0.9, 0], [2, 1]))

    def test_disjoint_boxes(self):
        r = Region.box(Box([0, 0], [1, 1]))
        assert not region_intersects(r, Box([2, 2], [3, 3]))

    def test_box_buried_in_subtraction(self):
        r = Region.difference(Box([0, 0], [4, 4]), [Box([1, 1], [2, 2])])
        b = Box([1.2, 1.2], [1.8, 1.8])
        # oracle: exhaustive corner/edge/interior sample containment
        grid = np.linspace(0, 1, 21)
        pts = np.stack(np.meshgrid(grid, grid), axis=-1).reshape(-1, 2)
        pts = b.lo + pts * (b.hi - b.lo)
        assert not r.contains(pts).any()
        assert not region_intersects(r, b)

    def test_soundness_fuzz(self):
        rng = np.random.default_rng(0)
        regions = [
            Region.box(Box([0, 0], [1, 1])),
            Region.union([Box([0, 0], [1, 1]), Box([2, 2], [3, 3])]),
            Region.difference(Box([0, 0], [4, 4]), [Box([1, 1], [2, 2])]),
            gbm2d_spec().unsafe,
            gbm2d_spec().gen_region,
        ]
        for r in regions:
            bb = r.bounding_box()
            span = bb.hi - bb.lo
            for _ in range(40):
                lo = bb.lo - 0.1 * span + rng.random(r.dim) * 1.1 * span
                hi = lo + rng.random(r.dim) * 0.4 * span
                b = Box(lo, hi)
                pts = b.sample(rng, 10_000)
                if r.contains(pts).any():
                    assert region_intersects(r, b)


class TestBetaFromP:
    def test_values(self):
        assert beta_from_p(0.95) == pytest.approx(20.0)
        assert beta_from_p(0.5) == pytest.approx(2.0)
        assert beta_from_p(0.99991) == pytest.approx(11111.1, rel=1e-4)

    def test_range_errors(self):
        for p in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                beta_from_p(p)

    def test_properties(self):
        rng = np.random.default_rng(1)
        ps = rng.uniform(1e-6, 1 - 1e-6, size=200)
        betas = np.array([beta_from_p(p) for p in ps])
        assert np.all(betas >= 1.0)
        assert np.allclose(1.0 - 1.0 / betas, ps, rtol=0, atol=1e-12)
        order = np.argsort(ps)
        assert np.all(np.diff(betas[order]) > 0)


class TestReachAvoidSpec:
    def test_unsafe_excludes_safe_interior(self):
        spec = gbm2d_spec()
        rng = np.random.default_rng(2)
        pts = spec.domain_box.sample(rng, 40_000)
        interior = spec.safe._interior_mask(pts)
        assert interior.sum() > 10_000
        assert not spec.unsafe.contains(pts[interior]).any()

    def test_unsafe_covers_obstacle_and_frame(self):
        spec = gbm2d_spec()
        assert region_contains(spec.unsafe, [-90.0, 0.0])     # obstacle slab
        assert region_contains(spec.unsafe, [-80.0, 0.0])     # its boundary
        assert region_contains(spec.unsafe, [100.0, 3.0])     # domain frame
        assert not region_contains(spec.unsafe, [50.0, -50.0])

    def test_gen_region_excludes_goal_and_obstacle_interiors(self):
        spec = gbm2d_spec()
        assert not region_contains(spec.gen_region, [0.0, 0.0])
        assert not region_contains(spec.gen_region, [-90.0, 0.0])
        assert region_contains(spec.gen_region, [50.0, 50.0])
        assert region_contains(spec.gen_region, [100.0, 3.0])  # frame

    def test_beta_exact(self):
        spec = gbm2d_spec()
        assert spec.beta == 1.0 / (1.0 - spec.p_ra)

    def test_interiority_warning(self):
        dom = Box([0, 0], [10, 10])
        with pytest.warns(SpecValidationWarning):
            ReachAvoidSpec(
                domain=Region.box(dom),
                init=Region.box(Box([0, 0], [2, 2])),     # touches the frame
                goal=Region.box(Box([4, 4], [6, 6])),
                safe=Region.box(Box([1, 1], [9, 9])),
                p_ra=0.9)

    def test_p_range_rejected(self):
        dom = Box([0, 0], [10, 10])
        with pytest.raises(Exception):
            ReachAvoidSpec(domain=Region.box(dom),
                           init=Region.box(Box([2, 2], [3, 3])),
                           goal=Region.box(Box([4, 4], [6, 6])),
                           safe=Region.box(Box([1, 1], [9, 9])),
                           p_ra=1.2)
