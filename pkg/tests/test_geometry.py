import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tresca_inverse.geometry import (GAMMA, GAMMA0, Disc, Flower, Mesh, MeshError, annulus,
                                     flower_domain, generate_mesh, measure_h, omega_indicator,
                                     read_mesh, unique_edges, write_mesh)


@pytest.fixture(scope="module")
def annulus_meshes():
    spec = annulus(0.5, 1.0)
    return spec, generate_mesh(spec, 0.2, seed=0), generate_mesh(spec, 0.1, seed=0)


@pytest.fixture(scope="module")
def flower_mesh():
    spec = flower_domain()
    return spec, generate_mesh(spec, 0.05, seed=3)


def split_uniformly(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle into four via edge midpoints."""
    edges = unique_edges(mesh.triangles)
    index = {tuple(e): mesh.n_vertices + i for i, e in enumerate(edges)}
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    tris = []
    for a, b, c in mesh.triangles:
        ab, bc, ca = (index[tuple(sorted(e))] for e in ((a, b), (b, c), (c, a)))
        tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    be, bm = [], []
    for (i, j), m in zip(mesh.boundary_edges, mesh.boundary_markers):
        k = index[tuple(sorted((i, j)))]
        be += [(i, k), (k, j)]
        bm += [m, m]
    return Mesh(np.vstack([mesh.vertices, mids]), np.array(tris), np.array(be), np.array(bm))


def check_mesh_invariants(spec, mesh):
    assert np.all(mesh.signed_areas() > 0)
    # every boundary edge belongs to exactly one triangle, interior edges to two
    e = np.sort(np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]],
                                mesh.triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    assert counts.max() == 2
    boundary = {tuple(x) for x in uniq[counts == 1]}
    assert boundary == {tuple(sorted(x)) for x in mesh.boundary_edges}
    for marker, curve in ((GAMMA, spec.inner), (GAMMA0, spec.outer)):
        v = mesh.vertices[np.unique(mesh.edges(marker))]
        rad = np.hypot(v[:, 0], v[:, 1])
        assert np.all(np.abs(rad - curve.r(np.arctan2(v[:, 1], v[:, 0]))) <= 1e-12)


def polygon_area(spec, mesh):
    def loop_area(marker):
        e = mesh.edges(marker)
        p, q = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
        return abs(0.5 * np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))
    return loop_area(GAMMA0) - loop_area(GAMMA)


def test_annulus_boundary_projection(annulus_meshes):
    spec, coarse, _ = annulus_meshes
    rad = np.hypot(*coarse.vertices.T)
    assert rad.min() >= 0.5 - 1e-12 and rad.max() <= 1.0 + 1e-12
    v = coarse.vertices[np.unique(coarse.edges(GAMMA))]
    assert np.all(np.abs(np.hypot(*v.T) - 0.5) <= 1e-12)
    check_mesh_invariants(spec, coarse)


def test_refinement_is_monotone(annulus_meshes):
    _, coarse, fine = annulus_meshes
    assert fine.h_max < coarse.h_max
    assert fine.n_vertices > coarse.n_vertices


@pytest.mark.parametrize("target", [0.2, 0.1, 0.05, 0.025])
def test_h_and_quality_bounds(target):
    spec = annulus(0.5, 1.0)
    mesh = generate_mesh(spec, target, seed=1)
    lengths = mesh.edge_lengths()
    assert mesh.h_max <= 1.5 * target
    assert lengths.max() / lengths.min() <= 10.0
    assert mesh.area() == pytest.approx(polygon_area(spec, mesh), rel=1e-10)


def test_flower_mesh_invariants(flower_mesh):
    spec, mesh = flower_mesh
    check_mesh_invariants(spec, mesh)
    assert mesh.area() == pytest.approx(polygon_area(spec, mesh), rel=1e-10)
    assert mesh.area() == pytest.approx(spec.area(), rel=1e-2)


def test_flower_omega_fraction():
    spec = flower_domain()
    assert 0.25 <= spec.omega_area() / spec.area() <= 0.33


@pytest.mark.parametrize("target", [0.1, 0.05, 0.025])
def test_halving_target_shrinks_h(target):
    spec = flower_domain()
    ratio = generate_mesh(spec, target, 0).h_max / generate_mesh(spec, target / 2, 0).h_max
    assert 1.6 <= ratio <= 2.4


def test_measure_h_single_triangle():
    mesh = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [0, 0, 0])
    assert measure_h(mesh) == pytest.approx(math.sqrt(2), abs=1e-15)


def test_measure_h_halves_under_uniform_refinement(annulus_meshes):
    _, coarse, _ = annulus_meshes
    fine = split_uniformly(coarse)
    assert measure_h(fine) == pytest.approx(measure_h(coarse) / 2, rel=0.05)


def test_deterministic():
    spec = flower_domain()
    a, b = generate_mesh(spec, 0.06, seed=7), generate_mesh(spec, 0.06, seed=7)
    c = generate_mesh(spec, 0.06, seed=8)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles)
    assert a.n_vertices != c.n_vertices or not np.array_equal(a.vertices, c.vertices)


def test_rejects_bad_input():
    spec = annulus(0.5, 1.0)
    with pytest.raises(MeshError):
        generate_mesh(spec, 0.3)
    with pytest.raises(MeshError):
        generate_mesh(spec, 0.0)
    with pytest.raises(MeshError):
        annulus(1.0, 0.5)
    with pytest.raises(MeshError):
        Flower(0.2, 0.3, 5)
    with pytest.raises(MeshError):
        annulus(0.5, 1.0, [Disc((0.75, 0.0), 0.3)])


def test_omega_indicator_examples():
    spec = flower_domain()
    assert omega_indicator(spec, (0.8, 0.0)) is True
    assert omega_indicator(spec, (0.8, 0.25)) is False
    assert omega_indicator(spec, (-0.8, 0.1)) is True
    assert omega_indicator(spec, (0.3, 0.0)) is False
    pts = np.array([[0.8, 0.0], [0.8, 0.25], [0.0, 0.5]])
    assert omega_indicator(spec, pts).tolist() == [True, False, False]


@settings(max_examples=100, deadline=None)
@given(r=st.floats(0.0, 0.2499), phi=st.floats(0, 2 * math.pi))
def test_points_inside_axis_disc(r, phi):
    spec = flower_domain()
    p = (0.8 + r * math.cos(phi), r * math.sin(phi))
    assert omega_indicator(spec, p)


def test_mesh_io_round_trip(tmp_path, flower_mesh):
    _, mesh = flower_mesh
    path = tmp_path / "m.txt"
    write_mesh(mesh, path)
    back = read_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.boundary_edges, mesh.boundary_edges)
    assert np.array_equal(back.boundary_markers, mesh.boundary_markers)
    assert path.read_text().startswith("MESH2D v1\nV ")


def test_read_mesh_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("NOT A MESH\n")
    with pytest.raises(MeshError):
        read_mesh(p)


def test_mesh_arrays_are_read_only(flower_mesh):
    _, mesh = flower_mesh
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 1.0
