import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multimorph import geometry as geo
from multimorph import power
from multimorph.errors import MeshTaggingError
from multimorph.mesh import extract_fe_mesh, weld

SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
L_DOMAIN = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], float)


def edge_use(mesh):
    """How many triangles use each undirected edge."""
    count = {}
    for t in mesh.triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    return count


def test_single_square_cell_is_a_fan():
    d = power.build_power_diagram([[0.5, 0.5]], [0.0], SQUARE)
    mesh = extract_fe_mesh(d, require=())
    assert mesh.n_vertices == 5
    assert len(mesh.triangles) == 4
    assert mesh.triangle_areas().sum() == pytest.approx(1.0)


def test_shared_vertices_are_welded():
    d = power.build_power_diagram([[0.25, 0.5], [0.75, 0.5]], [0, 0], SQUARE)
    mesh = extract_fe_mesh(d, require=())
    # 4 square corners + 2 bisector end points + 2 sites; the bisector ends appear once
    assert mesh.n_vertices == 8
    assert np.sum(np.isclose(mesh.vertices[:, 0], 0.5) & np.isclose(mesh.vertices[:, 1], 0.0)) == 1
    assert np.sum(np.isclose(mesh.vertices[:, 0], 0.5) & np.isclose(mesh.vertices[:, 1], 1.0)) == 1


def test_boundary_tags_and_named_points():
    d = power.solve_centroidal_vcpd(SQUARE, np.full(6, 1 / 6), seed=2).diagram
    mesh = extract_fe_mesh(d, fixed=[[[0, 0], [0, 1]]], actuated=[[[1, 0], [1, 1]]],
                           points={"a": [1.0, 1.0]})
    assert np.allclose(mesh.vertices[mesh.tags["fixed"], 0], 0.0)
    assert np.allclose(mesh.vertices[mesh.tags["actuated"], 0], 1.0)
    assert len(mesh.tags["fixed"]) >= 2
    np.testing.assert_allclose(mesh.vertices[mesh.points["a"]], [1, 1])
    assert mesh.snap["a"] == 0.0


def test_missing_boundary_vertex_raises():
    d = power.build_power_diagram([[0.5, 0.5]], [0.0], SQUARE)
    with pytest.raises(MeshTaggingError):
        extract_fe_mesh(d, fixed=[[[2, 2], [3, 3]]])


def test_weld_picks_lowest_index():
    pts = np.array([[0, 0], [1, 0], [1e-12, 0], [1, 1e-13]])
    np.testing.assert_array_equal(weld(pts, 1e-9), [0, 1, 0, 1])


def test_non_convex_domain_mesh_is_conforming():
    vt = np.full(10, 0.3)
    d = power.solve_centroidal_vcpd(L_DOMAIN, vt, seed=1).diagram
    mesh = extract_fe_mesh(d, require=())
    assert mesh.triangle_areas().min() > 0
    assert mesh.triangle_areas().sum() == pytest.approx(3.0, rel=1e-9)
    boundary = [e for e, c in edge_use(mesh).items() if c == 1]
    length = sum(np.linalg.norm(mesh.vertices[a] - mesh.vertices[b]) for a, b in boundary)
    assert length == pytest.approx(8.0, rel=1e-9)  # perimeter of the L: no hanging nodes


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 25), st.integers(0, 10_000))
def test_mesh_covers_domain(n, seed):
    rng = np.random.default_rng(seed)
    sites = power.random_sites(L_DOMAIN, n, rng)
    d = power.build_power_diagram(sites, rng.uniform(-0.01, 0.01, n), L_DOMAIN)
    mesh = extract_fe_mesh(d, require=())
    areas = mesh.triangle_areas()
    assert areas.sum() == pytest.approx(geo.polygon_area(L_DOMAIN), rel=1e-9)
    per_cell = np.bincount(mesh.tri_cell, areas, minlength=n)
    np.testing.assert_allclose(per_cell, d.areas, atol=1e-9)
    assert all(c <= 2 for c in edge_use(mesh).values())
