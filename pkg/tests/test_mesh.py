import math

import numpy as np
import pytest

from iwgfem.geometry import INTERFACE, OMEGA1, OMEGA2, CircleInterface
from iwgfem.mesh import (
    EDGE_BOUNDARY,
    EDGE_COUPLING,
    EDGE_INTERIOR_NON_WG,
    EDGE_WG_INTERIOR,
    MeshPartition,
    build_mesh,
    dump_mesh,
    edge_sets,
)

CIRCLE = CircleInterface()


class TestBuildMesh:
    def test_level1_counts(self):
        mesh = build_mesh(1, CIRCLE)
        assert mesh.n_cells == 4
        assert mesh.n_triangles == 32
        assert mesh.n_vertices == 25

    def test_counting_formulas(self):
        for level in (1, 2, 3):
            mesh = build_mesh(level, CIRCLE)
            n = 2 ** (level + 1)
            assert mesh.n_triangles == 2 * n * n
            assert mesh.n_vertices == (n + 1) ** 2
            assert mesh.n_edges == 3 * n * n + 2 * n

    def test_h_halves_per_level(self):
        h = [build_mesh(level, CIRCLE).h for level in (1, 2, 3)]
        assert h[0] / h[1] == pytest.approx(2.0)
        assert h[1] / h[2] == pytest.approx(2.0)

    def test_euler_characteristic(self):
        for level in (1, 2):
            mesh = build_mesh(level, CIRCLE)
            assert mesh.n_vertices - mesh.n_edges + mesh.n_triangles == 1

    def test_triangles_counterclockwise(self):
        mesh = build_mesh(1, CIRCLE)
        for t in range(mesh.n_triangles):
            v = mesh.triangle_coords(t)
            cross = (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[1, 1] - v[0, 1]) * (
                v[2, 0] - v[0, 0]
            )
            assert cross > 0.0

    def test_conforming(self):
        mesh = build_mesh(2, CIRCLE)
        counts = np.sum(mesh.edge_tris >= 0, axis=1)
        boundary = mesh.boundary_edges()
        interior = np.setdiff1d(np.arange(mesh.n_edges), boundary)
        assert np.all(counts[boundary] == 1)
        assert np.all(counts[interior] == 2)

    def test_determinism(self):
        m1 = build_mesh(2, CIRCLE)
        m2 = build_mesh(2, CIRCLE)
        np.testing.assert_array_equal(m1.vertices, m2.vertices)
        np.testing.assert_array_equal(m1.triangles, m2.triangles)
        np.testing.assert_array_equal(m1.element_class, m2.element_class)
        np.testing.assert_array_equal(m1.edge_class, m2.edge_class)

    @pytest.mark.parametrize("level", [1, 2, 3])
    def test_interface_band(self, level):
        mesh = build_mesh(level, CIRCLE)
        cut_ids = mesh.interface_elements()
        assert len(cut_ids) >= 4
        r = CIRCLE.radius
        for t in cut_ids:
            center = mesh.triangle_coords(t).mean(axis=0)
            dist = abs(np.linalg.norm(center) - r)
            assert dist <= mesh.h * math.sqrt(2.0)
        # The band is edge-connected: every interface element shares an edge
        # with another interface element.
        cut_set = set(int(t) for t in cut_ids)
        for t in cut_ids:
            neighbors = set()
            for e in mesh.tri_edges[t]:
                for nb in mesh.edge_tris[e]:
                    if nb >= 0 and nb != t:
                        neighbors.add(int(nb))
            assert neighbors & cut_set

    def test_classification_matches_bruteforce(self):
        from iwgfem.geometry import classify_element

        mesh = build_mesh(2, CIRCLE)
        for t in range(mesh.n_triangles):
            assert mesh.element_class[t] == classify_element(mesh.triangle_coords(t), CIRCLE)

    def test_cuts_exactly_on_interface_elements(self):
        mesh = build_mesh(2, CIRCLE)
        assert set(mesh.cuts) == set(int(t) for t in mesh.interface_elements())

    def test_n_override(self):
        mesh = build_mesh(1, CIRCLE, n_override=6)
        assert mesh.n_cells == 6
        assert mesh.n_triangles == 72

    def test_no_interface(self):
        mesh = build_mesh(1, None)
        assert np.all(mesh.element_class == OMEGA2)
        assert len(mesh.cuts) == 0


class TestEdgeSets:
    def test_empty_without_interface(self):
        mesh = build_mesh(1, None)
        eh, ehi, boundary = edge_sets(mesh)
        assert len(eh) == 0
        assert len(ehi) == 0
        assert len(boundary) == 4 * mesh.n_cells

    def test_coupling_edges_have_mixed_neighbors(self):
        mesh = build_mesh(2, CIRCLE)
        _, ehi, _ = edge_sets(mesh)
        for e in ehi:
            t0, t1 = mesh.edge_tris[e]
            classes = {int(mesh.element_class[t0]), int(mesh.element_class[t1])}
            assert INTERFACE in classes
            assert classes != {INTERFACE}

    def test_against_bruteforce_double_loop(self):
        mesh = build_mesh(2, CIRCLE)
        eh, ehi, _ = edge_sets(mesh)
        # Independent oracle: loop over (edge, adjacent element classes).
        eh_brute, ehi_brute = set(), set()
        for e in range(mesh.n_edges):
            classes = [
                int(mesh.element_class[t]) for t in mesh.edge_tris[e] if t >= 0
            ]
            if INTERFACE in classes:
                eh_brute.add(e)
                if any(c != INTERFACE for c in classes):
                    ehi_brute.add(e)
        assert set(int(e) for e in eh) == eh_brute
        assert set(int(e) for e in ehi) == ehi_brute

    def test_subset_relation(self):
        mesh = build_mesh(3, CIRCLE)
        eh, ehi, boundary = edge_sets(mesh)
        assert set(int(e) for e in ehi) <= set(int(e) for e in eh)
        assert not (set(int(e) for e in ehi) & set(int(e) for e in boundary))


def test_dump_mesh(tmp_path):
    mesh = build_mesh(1, CIRCLE)
    path = tmp_path / "mesh.txt"
    dump_mesh(mesh, path)
    lines = path.read_text().splitlines()
    assert len([l for l in lines if l.startswith("node ")]) == mesh.n_vertices
    assert len([l for l in lines if l.startswith("element ")]) == mesh.n_triangles
    assert len([l for l in lines if l.startswith("edge ")]) == mesh.n_edges
