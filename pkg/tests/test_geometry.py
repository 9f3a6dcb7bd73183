"""Wireframe extraction, point sampling, and mesh file formats."""

import math

import numpy as np
import pytest

from helpers import make_cube
from lodloc.errors import ParseError, ValidationError
from lodloc.geometry import (
    Mesh,
    WireframePoints,
    extract_wireframe,
    face_normal,
    load_obj,
    load_wireframe,
    sample_points,
    save_obj,
    save_wireframe,
    subsample_points,
)


def gable_mesh(normal_angle_deg: float) -> Mesh:
    """Two rectangles meeting at a ridge; their normals differ by the given angle."""
    a = math.radians(normal_angle_deg)
    # Left face horizontal (+z normal), right face rotated about the ridge (y axis).
    drop = math.tan(a)
    verts = np.array([
        [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 1.0, 0.0],
        [1.0, 0.0, -drop], [1.0, 1.0, -drop],
    ])
    faces = [np.array([0, 1, 2, 3]), np.array([1, 4, 5, 2])]
    return Mesh(vertices=verts, faces=faces)


class TestFaceNormal:
    def test_ccw_square(self):
        m = Mesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float),
                 faces=[np.arange(4)])
        np.testing.assert_allclose(face_normal(m.faces[0], m), [0, 0, 1], atol=1e-15)

    def test_cw_square_flips(self):
        m = Mesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float),
                 faces=[np.array([3, 2, 1, 0])])
        np.testing.assert_allclose(face_normal(m.faces[0], m), [0, 0, -1], atol=1e-15)

    def test_triangle_cross_product(self):
        # (1,0,0) x (0,0,1) = (0,-1,0)
        m = Mesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [0, 0, 1]], float),
                 faces=[np.arange(3)])
        np.testing.assert_allclose(face_normal(m.faces[0], m), [0, -1, 0], atol=1e-15)

    def test_degenerate_face(self):
        m = Mesh(vertices=np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float),
                 faces=[np.arange(3)])
        with pytest.raises(ValidationError, match="degenerate face"):
            face_normal(m.faces[0], m)


class TestExtractWireframe:
    def test_cube_has_12_edges(self):
        edges = extract_wireframe(make_cube(), mu_degrees=10.0)
        assert len(edges) == 12

    def test_coplanar_shared_edge_discarded(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
        m = Mesh(vertices=verts, faces=[np.array([0, 1, 2]), np.array([0, 2, 3])])
        edges = extract_wireframe(m, mu_degrees=10.0)
        assert len(edges) == 4
        lengths = sorted(e.length for e in edges)
        assert all(abs(l - 1.0) < 1e-12 for l in lengths)

    @pytest.mark.parametrize("angle,ridge_kept", [(9.0, False), (11.0, True)])
    def test_gable_ridge_threshold(self, angle, ridge_kept):
        edges = extract_wireframe(gable_mesh(angle), mu_degrees=10.0)
        ridge = {(0.0, 0.0, 0.0), (0.0, 1.0, 0.0)}
        found = any({tuple(e.a), tuple(e.b)} == ridge for e in edges)
        assert found == ridge_kept
        assert len(edges) == 6 + int(ridge_kept)

    def test_dihedral_angles_exceed_mu(self):
        mu = 10.0
        for e in extract_wireframe(make_cube(), mu):
            if len(e.normals) == 2:
                d = np.clip(e.normals[0] @ e.normals[1], -1, 1)
                assert math.degrees(math.acos(d)) > mu

    def test_vertex_permutation_invariance(self):
        cube = make_cube()
        perm = np.random.default_rng(3).permutation(len(cube.vertices))
        inv = np.argsort(perm)
        shuffled = Mesh(vertices=cube.vertices[perm],
                        faces=[inv[f] for f in cube.faces][::-1])
        def edge_set(edges):
            return {tuple(sorted((tuple(np.round(e.a, 9)), tuple(np.round(e.b, 9)))))
                    for e in edges}
        assert edge_set(extract_wireframe(cube)) == edge_set(extract_wireframe(shuffled))

    def test_duplicate_vertices_welded(self):
        # Same cube but every face carries its own copies of the corners.
        cube = make_cube()
        verts = []
        faces = []
        for f in cube.faces:
            base = len(verts)
            verts.extend(cube.vertices[f])
            faces.append(np.arange(base, base + len(f)))
        exploded = Mesh(vertices=np.array(verts), faces=faces)
        assert len(extract_wireframe(exploded)) == 12

    def test_mu_out_of_range(self):
        with pytest.raises(ValidationError):
            extract_wireframe(make_cube(), mu_degrees=0.0)
        with pytest.raises(ValidationError):
            extract_wireframe(make_cube(), mu_degrees=180.0)

    def test_mu_zero_superset_via_tiny_mu(self):
        # Near-zero mu keeps every non-coplanar shared edge.
        coarse = extract_wireframe(make_cube(), 10.0)
        fine = extract_wireframe(make_cube(), 1e-9)
        assert len(fine) >= len(coarse)


class TestSamplePoints:
    def test_exact_division(self):
        edges = extract_wireframe(make_cube(size=3.0), 10.0)
        one = sample_points(edges[:1], delta=1.0)
        assert len(one) == 4
        gaps = np.linalg.norm(np.diff(one.points, axis=0), axis=1)
        np.testing.assert_allclose(gaps, 1.0, atol=1e-12)

    def test_ceil_rule(self):
        from lodloc.geometry import WireframeEdge
        e = WireframeEdge(a=[0, 0, 0], b=[2.5, 0, 0])
        pts = sample_points([e], delta=1.0)
        assert len(pts) == 4
        gaps = np.linalg.norm(np.diff(pts.points, axis=0), axis=1)
        np.testing.assert_allclose(gaps, 2.5 / 3.0, atol=1e-12)

    def test_cube_point_count(self):
        edges = extract_wireframe(make_cube(), 10.0)
        pts = sample_points(edges, delta=1.0)
        assert len(pts) == 24  # 12 unit edges, 2 points each

    def test_empty_edges(self):
        assert len(sample_points([], delta=1.0)) == 0

    def test_max_gap_bounded(self):
        rng = np.random.default_rng(5)
        from lodloc.geometry import WireframeEdge
        edges = [WireframeEdge(a=rng.normal(size=3) * 10, b=rng.normal(size=3) * 10)
                 for _ in range(25)]
        delta = 0.7
        pts = sample_points(edges, delta=delta)
        for ei in range(len(edges)):
            own = pts.points[pts.source_edge == ei]
            gaps = np.linalg.norm(np.diff(own, axis=0), axis=1)
            assert np.all(gaps <= delta + 1e-9)

    def test_points_lie_on_edges(self):
        edges = extract_wireframe(make_cube(size=2.0), 10.0)
        pts = sample_points(edges, delta=0.6)
        for p, ei in zip(pts.points, pts.source_edge):
            a, b = edges[ei].a, edges[ei].b
            d = b - a
            t = np.clip((p - a) @ d / (d @ d), 0, 1)
            assert np.linalg.norm(a + t * d - p) <= 1e-9

    def test_delta_validation(self):
        with pytest.raises(ValidationError):
            sample_points([], delta=0.0)


class TestSubsamplePoints:
    def _points(self, n):
        rng = np.random.default_rng(0)
        return WireframePoints(points=rng.normal(size=(n, 3)),
                               source_edge=np.zeros(n, dtype=np.int64))

    def test_under_limit_unchanged(self):
        pts = self._points(10)
        out = subsample_points(pts, limit=20, seed=0)
        np.testing.assert_array_equal(out.points, pts.points)

    def test_deterministic_per_seed(self):
        pts = self._points(5000)
        a = subsample_points(pts, limit=2000, seed=11)
        b = subsample_points(pts, limit=2000, seed=11)
        assert len(a) == 2000
        np.testing.assert_array_equal(a.points, b.points)

    def test_seeds_differ(self):
        pts = self._points(5000)
        a = subsample_points(pts, limit=2000, seed=1)
        b = subsample_points(pts, limit=2000, seed=2)
        assert not np.array_equal(a.points, b.points)

    def test_limit_validation(self):
        with pytest.raises(ValidationError):
            subsample_points(self._points(5), limit=0)


class TestMeshIO:
    def test_obj_roundtrip(self, tmp_path):
        cube = make_cube(center=(3.0, -2.0, 5.0), size=2.0)
        path = tmp_path / "cube.obj"
        save_obj(path, cube)
        back = load_obj(path)
        np.testing.assert_allclose(back.vertices, cube.vertices, atol=1e-9)
        assert len(back.faces) == len(cube.faces)

    def test_obj_slash_indices_and_ignored_lines(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text(
            "# comment\nvn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\n"
            "usemtl stone\nf 1/1/1 2/2/1 3/3/1\n")
        mesh = load_obj(path)
        assert len(mesh.vertices) == 3
        np.testing.assert_array_equal(mesh.faces[0], [0, 1, 2])

    def test_obj_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="nope.obj"):
            load_obj(tmp_path / "nope.obj")

    def test_obj_bad_face_index(self, tmp_path):
        path = tmp_path / "bad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
        mesh_or_err = pytest.raises(ValidationError, load_obj, path)
        assert "out of range" in str(mesh_or_err.value)

    def test_wireframe_roundtrip(self, tmp_path):
        edges = extract_wireframe(make_cube(size=2.5), 10.0)
        path = tmp_path / "wf.lwf"
        save_wireframe(path, edges)
        header = path.read_text().splitlines()[0]
        assert header == f"LODWF 1 {len(edges)}"
        back = load_wireframe(path)
        assert len(back) == len(edges)
        np.testing.assert_allclose(back[0].a, edges[0].a, atol=0)

    def test_wireframe_count_mismatch(self, tmp_path):
        path = tmp_path / "wf.lwf"
        path.write_text("LODWF 1 2\ne 0 0 0 1 0 0\n")
        with pytest.raises(ParseError, match="2 edges"):
            load_wireframe(path)

    def test_wireframe_bad_header(self, tmp_path):
        path = tmp_path / "wf.lwf"
        path.write_text("WF 1 0\n")
        with pytest.raises(ParseError, match="header"):
            load_wireframe(path)
