import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iwgfem.geometry import (
    INTERFACE,
    OMEGA1,
    OMEGA2,
    CircleInterface,
    DegenerateTriangle,
    MultipleCrossings,
    QuadratureRule,
    classify_element,
    compute_cut,
    edge_split_parameters,
    polygon_area,
    polygon_rule,
    quadrature_on_edge,
    quadrature_on_subregion,
    subregion_polygon,
    triangle_rule,
    triangulate_polygon,
)

CIRCLE = CircleInterface()  # x^2 + y^2 = 1/3


def polygon_monomial_integral(vertices, a, b):
    """Independent oracle: integral of x^a y^b over a polygon via Green's theorem.

    Uses the contour integral of x^(a+1)/(a+1) * y^b dy along each edge with a
    1D Gauss rule, sharing no code with the area quadrature under test.
    """
    v = np.asarray(vertices, float)
    n = (a + b + 3) // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (x + 1.0)
    total = 0.0
    for p, q in zip(v, np.roll(v, -1, axis=0)):
        xs = p[0] + t * (q[0] - p[0])
        ys = p[1] + t * (q[1] - p[1])
        dy = q[1] - p[1]
        total += 0.5 * dy * float(w @ (xs ** (a + 1) / (a + 1) * ys**b))
    return total


class TestClassifyElement:
    def test_all_outside(self):
        tri = [(0.8, 0.8), (0.9, 0.8), (0.8, 0.9)]
        assert classify_element(tri, CIRCLE) == OMEGA2

    def test_all_inside(self):
        tri = [(0.0, 0.0), (0.1, 0.0), (0.0, 0.1)]
        assert classify_element(tri, CIRCLE) == OMEGA1

    def test_straddling(self):
        # phi(0.5, 0) = -1/12 < 0 while phi(0.7, 0) = 0.49 - 1/3 > 0.
        tri = [(0.5, 0.0), (0.7, 0.0), (0.5, 0.2)]
        assert classify_element(tri, CIRCLE) == INTERFACE

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateTriangle):
            classify_element([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], CIRCLE)

    def test_vertex_touch_snaps_to_other_side(self):
        r = CIRCLE.radius
        tri = [(r, 0.0), (r + 0.2, 0.0), (r, 0.2)]
        assert classify_element(tri, CIRCLE) == OMEGA2
        # All vertices in the closed disk, so the whole triangle is inside.
        tri_in = [(r, 0.0), (r - 0.2, 0.05), (r - 0.2, -0.05)]
        assert classify_element(tri_in, CIRCLE) == OMEGA1

    def test_edge_dip_is_interface(self):
        # Both endpoints outside, but the circle dips through the edge interior.
        r = CIRCLE.radius
        tri = [(-0.4, r - 0.01), (0.4, r - 0.01), (0.0, 1.0)]
        assert classify_element(tri, CIRCLE) == INTERFACE


class TestComputeCut:
    def test_analytic_root_on_bottom_edge(self):
        tri = [(0.5, 0.0), (0.7, 0.0), (0.5, 0.2)]
        cut = compute_cut(tri, CIRCLE)
        pts = sorted([tuple(cut.point_d), tuple(cut.point_e)])
        # Root of x^2 = 1/3 on the bottom edge.
        x_root = math.sqrt(1.0 / 3.0)
        on_bottom = min(pts, key=lambda p: abs(p[1]))
        assert abs(on_bottom[0] - x_root) < 1e-13
        assert abs(on_bottom[1]) < 1e-13

    def test_cut_is_coefficient_independent(self):
        # The cut depends only on geometry; nothing about A enters compute_cut,
        # whose signature takes no coefficients at all.
        tri = [(0.5, 0.0), (0.7, 0.0), (0.5, 0.2)]
        c1 = compute_cut(tri, CIRCLE)
        c2 = compute_cut(tri, CIRCLE)
        np.testing.assert_array_equal(c1.point_d, c2.point_d)
        np.testing.assert_array_equal(c1.poly1, c2.poly1)

    def test_polygon_areas_partition_triangle(self):
        tri = np.array([(0.5, 0.0), (0.7, 0.0), (0.5, 0.2)])
        cut = compute_cut(tri, CIRCLE)
        area = polygon_area(tri)
        a1 = polygon_area(cut.poly1)
        a2 = polygon_area(cut.poly2)
        assert a1 > 0.0 and a2 > 0.0
        assert abs(a1 + a2 - area) < 1e-12 * area

    def test_normal_orientation(self):
        tri = [(0.5, 0.0), (0.7, 0.0), (0.5, 0.2)]
        cut = compute_cut(tri, CIRCLE)
        mid = 0.5 * (cut.point_d + cut.point_e)
        assert float(cut.normal @ CIRCLE.gradient(mid[0], mid[1])) > 0.0

    def test_double_edge_crossing_raises(self):
        r = CIRCLE.radius
        tri = [(-0.4, r - 0.01), (0.4, r - 0.01), (0.0, 1.0)]
        with pytest.raises(MultipleCrossings):
            compute_cut(tri, CIRCLE)

    def test_classification_consistency(self):
        # Interface iff compute_cut succeeds, over a grid of shifted triangles.
        rng = np.random.default_rng(7)
        base = np.array([(0.0, 0.0), (0.25, 0.0), (0.0, 0.25)])
        for _ in range(200):
            shift = rng.uniform(-0.8, 0.8, size=2)
            tri = base + shift
            cls = classify_element(tri, CIRCLE)
            if cls == INTERFACE:
                cut = compute_cut(tri, CIRCLE)
                assert cut.chord_length > 0.0
            else:
                assert cls in (OMEGA1, OMEGA2)


class TestSubregionQuadrature:
    def setup_method(self):
        self.tri = np.array([(0.5, 0.0), (0.7, 0.0), (0.5, 0.2)])
        self.cut = compute_cut(self.tri, CIRCLE)

    def test_measure_matches_polygon_at_depth0(self):
        for side in (OMEGA1, OMEGA2):
            rule = quadrature_on_subregion(self.cut, side, degree=2, depth=0)
            poly = self.cut.poly1 if side == OMEGA1 else self.cut.poly2
            assert abs(rule.measure - polygon_area(poly)) < 1e-14

    @pytest.mark.parametrize("depth", [0, 2, 4, 6])
    def test_partition_of_measure(self, depth):
        r1 = quadrature_on_subregion(self.cut, OMEGA1, 2, depth)
        r2 = quadrature_on_subregion(self.cut, OMEGA2, 2, depth)
        area = polygon_area(self.tri)
        assert abs(r1.measure + r2.measure - area) < 1e-12 * area

    @pytest.mark.parametrize("depth", [0, 3, 6])
    def test_union_integrates_like_uncut_triangle(self, depth):
        degree = 4
        r1 = quadrature_on_subregion(self.cut, OMEGA1, degree, depth)
        r2 = quadrature_on_subregion(self.cut, OMEGA2, degree, depth)
        ref = triangle_rule(self.tri, degree)
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                f = lambda x, y: x**a * y**b
                got = r1.integrate(f) + r2.integrate(f)
                want = ref.integrate(f)
                assert abs(got - want) < 1e-10 * max(abs(want), 1e-12)

    def test_polynomial_exactness_against_green_oracle(self):
        degree = 5
        for side, depth in [(OMEGA1, 0), (OMEGA2, 0), (OMEGA1, 4), (OMEGA2, 4)]:
            rule = quadrature_on_subregion(self.cut, side, degree, depth)
            poly = subregion_polygon(self.cut, side, depth)
            for a in range(degree + 1):
                for b in range(degree + 1 - a):
                    want = polygon_monomial_integral(poly, a, b)
                    got = rule.integrate(lambda x, y: x**a * y**b)
                    assert abs(got - want) < 1e-12 * max(abs(want), 1e-10)

    def test_all_weights_positive(self):
        for side in (OMEGA1, OMEGA2):
            rule = quadrature_on_subregion(self.cut, side, 3, depth=6)
            assert np.all(rule.weights > 0.0)

    def test_depth_convergence_of_sliver(self):
        # Chord-halving: each extra level reduces the missing sliver area by
        # about 4x, so depth 4 vs depth 8 differ by < (1/4)^4 of the sliver.
        sliver = abs(
            quadrature_on_subregion(self.cut, OMEGA1, 1, depth=8).measure
            - quadrature_on_subregion(self.cut, OMEGA1, 1, depth=0).measure
        )
        d4 = quadrature_on_subregion(self.cut, OMEGA1, 1, depth=4).measure
        d8 = quadrature_on_subregion(self.cut, OMEGA1, 1, depth=8).measure
        assert abs(d8 - d4) < sliver * (1.0 / 4.0) ** 4


class TestEdgeQuadrature:
    def test_linear_moment(self):
        rule = quadrature_on_edge((0.0, 0.0), (1.0, 0.0), degree=1)
        assert abs(rule.integrate(lambda x, y: x) - 0.5) < 1e-15

    def test_split_at_circle_root(self):
        rule = quadrature_on_edge((0.5, 0.0), (0.7, 0.0), degree=3, interface=CIRCLE)
        ts = edge_split_parameters((0.5, 0.0), (0.7, 0.0), CIRCLE)
        assert len(ts) == 1
        x_root = 0.5 + ts[0] * 0.2
        assert abs(x_root - math.sqrt(1.0 / 3.0)) < 1e-13
        # Sub-rule lengths sum to the full edge length.
        assert abs(rule.measure - 0.2) < 1e-14
        # Piecewise-polynomial exactness: integrate |side| indicator times x.
        inside = rule.points[:, 0] < x_root
        got = float(rule.weights[inside] @ rule.points[inside, 0])
        want = 0.5 * (x_root**2 - 0.25)
        assert abs(got - want) < 1e-14

    def test_odd_symmetry(self):
        rule = quadrature_on_edge((-1.0, 0.0), (1.0, 0.0), degree=3)
        assert abs(rule.integrate(lambda x, y: x**3)) < 1e-15

    @settings(deadline=None, max_examples=30)
    @given(
        st.integers(min_value=1, max_value=9),
        st.floats(min_value=-2, max_value=2),
        st.floats(min_value=-2, max_value=2),
        st.floats(min_value=0.1, max_value=3),
    )
    def test_exactness_random_segments(self, degree, x0, y0, length):
        p0 = (x0, y0)
        p1 = (x0 + length, y0 + 0.5 * length)
        rule = quadrature_on_edge(p0, p1, degree)
        ell = math.hypot(length, 0.5 * length)
        # Oracle: closed-form arc-length moment of the parameter.
        for m in range(degree + 1):
            f = lambda x, y, m=m: ((x - x0) / length) ** m
            assert abs(rule.integrate(f) - ell / (m + 1)) < 1e-12 * ell


class TestPolygonTriangulation:
    def test_convex(self):
        poly = np.array([(0, 0), (2, 0), (2, 1), (0, 1)], float)
        tris = triangulate_polygon(poly)
        assert sum(abs(polygon_area(poly[list(t)])) for t in tris) == pytest.approx(2.0)

    def test_concave(self):
        poly = np.array([(0, 0), (4, 0), (4, 3), (2, 0.5), (0, 3)], float)
        tris = triangulate_polygon(poly)
        total = sum(abs(polygon_area(poly[list(t)])) for t in tris)
        assert total == pytest.approx(abs(polygon_area(poly)))

    def test_rule_on_concave_polygon(self):
        poly = np.array([(0, 0), (4, 0), (4, 3), (2, 0.5), (0, 3)], float)
        rule = polygon_rule(poly, degree=3)
        for a, b in [(0, 0), (1, 0), (2, 1), (0, 3)]:
            want = polygon_monomial_integral(poly, a, b)
            got = rule.integrate(lambda x, y: x**a * y**b)
            assert abs(got - want) < 1e-12 * max(1.0, abs(want))


class TestTriangleRule:
    @pytest.mark.parametrize("degree", [1, 2, 4, 8, 10])
    def test_reference_exactness(self, degree):
        rule = triangle_rule([(0, 0), (1, 0), (0, 1)], degree)
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                want = (
                    math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                )
                got = rule.integrate(lambda x, y: x**a * y**b)
                assert abs(got - want) < 1e-13 * max(want, 1e-10)

    def test_weights_sum_to_measure(self):
        rule = triangle_rule([(1, 1), (3, 1), (1, 4)], 5)
        assert abs(rule.measure - 3.0) < 1e-12 * 3.0
