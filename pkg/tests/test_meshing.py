import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import Delaunay

from openbook.geometry import build_periodic_flat_book, two_spheres
from openbook.meshing import (
    CrossSectionMesh,
    FatteningTooLarge,
    MeshResolutionError,
    UnsupportedGeometry,
    build_cross_section,
    extrude_periodic,
    fattened_mesh,
    mesh_surface,
    stadium_union_area,
)


def union_area_mc(s, eps, n=10**7, seed=0):
    """Point-membership estimate of the cross-section area."""
    rng = np.random.default_rng(seed)
    d = s.directions()
    R = float(s.lengths.max()) + eps
    hits = 0
    for start in range(0, n, 10**6):
        p = rng.uniform(-R, R, size=(min(10**6, n - start), 2))
        t = np.clip(p @ d.T, 0.0, s.lengths)
        dist2 = (p[:, None, 0] - t * d[:, 0]) ** 2 + (p[:, None, 1] - t * d[:, 1]) ** 2
        hits += int(np.any(dist2 <= eps * eps, axis=1).sum())
    return hits / n * (2 * R) ** 2


# -- surface ----------------------------------------------------------------


def test_surface_area_three_pages(book3):
    m = mesh_surface(book3, 0.1)
    assert m.triangle_areas().sum() == pytest.approx(3.0, rel=1e-13)
    assert np.all(m.triangle_areas() > 0)
    assert m.min_angle_deg() >= 20.0


def test_single_page_grid():
    m = mesh_surface(build_periodic_flat_book(1), 0.25)
    assert m.triangle_areas().sum() == pytest.approx(1.0, rel=1e-13)
    assert len(m.binding_vertex_ids) == m.ny + 1
    assert np.allclose(m.vertices[m.binding_vertex_ids, :2], 0.0)


def test_binding_vertices_shared_by_all_pages(book3):
    m = mesh_surface(book3, 0.1)
    bset = set(m.binding_vertex_ids.tolist())
    for k in range(3):
        used = set(np.unique(m.triangles[m.page_tag == k]).tolist())
        assert bset <= used
    # no other vertex sits on the binding line
    on_axis = np.flatnonzero(np.linalg.norm(m.vertices[:, :2], axis=1) < 1e-12)
    assert set(on_axis.tolist()) == bset


def test_periodic_pairs_match_rows(book3):
    m = mesh_surface(book3, 0.125)
    top, bottom = m.periodic_pairs.T
    assert np.allclose(m.vertices[top, 2], 1.0)
    assert np.allclose(m.vertices[bottom, 2], 0.0)
    assert np.allclose(m.vertices[top, :2], m.vertices[bottom, :2])
    dof = m.dof_map()
    assert np.array_equal(dof[top], dof[bottom])
    assert dof.max() + 1 == m.n_vertices - len(top)


def test_surface_resolution_guard(book3):
    with pytest.raises(MeshResolutionError):
        mesh_surface(book3, 0.3)
    with pytest.raises(UnsupportedGeometry):
        mesh_surface(two_spheres(1, 1, 1.2), 0.1)


# -- cross-section ----------------------------------------------------------


@pytest.mark.parametrize("E,exact", [(2, 0.4 + math.pi * 0.01), (1, 0.2 + math.pi * 0.01)])
def test_stadium_area(E, exact):
    s = build_periodic_flat_book(E)
    assert stadium_union_area(s, 0.1) == pytest.approx(exact, rel=1e-14)
    prev = None
    for tol in (1e-2, 1e-3, 1e-4):
        cs = build_cross_section(s, 0.1, 0.05, arc_tol=tol)
        err = abs(cs.area - exact)
        assert cs.area == pytest.approx(cs.pslg_area, rel=1e-12)
        assert cs.area <= exact  # inscribed arcs
        if prev is not None:
            assert err < prev
        prev = err
        # chord deficit is at most sagitta times total arc length
        assert err <= tol * 2 * math.pi * 0.1


def test_stadium_area_matches_sampling():
    s = build_periodic_flat_book(2)
    assert union_area_mc(s, 0.1, n=2 * 10**6) == pytest.approx(0.4 + math.pi * 0.01, rel=0.01)


def test_four_page_union_area_matches_sampling():
    s = build_periodic_flat_book(4)
    cs = build_cross_section(s, 0.05, 0.05)
    assert cs.area == pytest.approx(union_area_mc(s, 0.05), rel=0.01)


def test_cross_section_regions_and_boundary(book3):
    cs = build_cross_section(book3, 0.1, 0.05)
    assert cs.region_names[0] == "junction"
    assert set(cs.region_names[1:]) == {f"strip_{k}" for k in range(3)} | {f"cap_{k}" for k in range(3)}
    assert np.all(cs.triangle_areas() > 0)
    for name in cs.region_names:
        assert np.any(cs.region == cs.region_names.index(name))
    # a single closed boundary loop: every boundary vertex has degree two
    _, deg = np.unique(cs.boundary_edges, return_counts=True)
    assert np.all(deg == 2)
    r = np.linalg.norm(cs.vertices[np.unique(cs.boundary_edges)], axis=1)
    assert r.min() >= 0.1 - 1e-9
    assert r.max() <= 1.1 + 1e-9


def test_junction_is_finer(book3):
    cs = build_cross_section(book3, 0.1, 0.05)
    areas = cs.triangle_areas()
    junction = cs.region == 0
    assert areas[junction].mean() < areas[~junction].mean()


def test_fattening_guard(book3):
    with pytest.raises(FatteningTooLarge):
        build_cross_section(book3, 0.3, 0.05)
    with pytest.raises(ValueError):
        build_cross_section(book3, 0.1, 0.05, arc_tol=0.05)


# -- extrusion --------------------------------------------------------------


def synthetic_cross_section(book3):
    # 38 hull points and 62 interior points: 2*100 - 2 - 38 = 160 triangles
    rng = np.random.default_rng(3)
    t = np.linspace(0, 2 * math.pi, 38, endpoint=False)
    hull = np.column_stack([np.cos(t), np.sin(t)])
    r = 0.9 * np.sqrt(rng.uniform(size=62))
    phi = rng.uniform(0, 2 * math.pi, 62)
    pts = np.vstack([hull, np.column_stack([r * np.cos(phi), r * np.sin(phi)])])
    T = Delaunay(pts).simplices.astype(np.int64)
    return CrossSectionMesh(pts, T, np.zeros(len(T), dtype=np.int64), ("junction",), np.empty((0, 2)), 0.01, 0.1, 0.1, 0.1, book3)


def test_extrusion_counts(book3):
    cs = synthetic_cross_section(book3)
    assert (len(cs.vertices), len(cs.triangles)) == (100, 160)
    tm = extrude_periodic(cs, 1.0, 8)
    assert tm.n_vertices == 800
    assert len(tm.tets) == 3840
    assert np.all(tm.volumes() > 0)


def test_extrusion_positive_and_measure(book3):
    cs = build_cross_section(book3, 0.1, 0.05)
    tm = extrude_periodic(cs, 1.0, 16)
    vol = tm.volumes()
    assert np.all(vol > 0)
    assert vol.sum() == pytest.approx(cs.area * 1.0, rel=1e-12)


def test_periodic_shift_is_cyclic(book3):
    tm = fattened_mesh(book3, 0.1, 0.1)
    idx = np.arange(tm.n_vertices)
    cur = idx.copy()
    for step in range(1, tm.n_z):
        cur = tm.shift[cur]
        assert not np.any(cur == idx)
    assert np.array_equal(tm.shift[cur], idx)


def test_extruded_mesh_is_closed_and_conforming(book3):
    tm = fattened_mesh(book3, 0.1, 0.1)
    faces = tm.boundary_faces()
    # periodic: only lateral faces, each made of two cross-section boundary vertices
    nv = len(tm.cross_section.vertices)
    bverts = np.unique(tm.cross_section.boundary_edges)
    assert np.all(np.isin(faces % nv, bverts))
    assert len(faces) == 2 * len(tm.cross_section.boundary_edges) * tm.n_z


def test_extrusion_layer_guard(book3):
    with pytest.raises(MeshResolutionError):
        extrude_periodic(build_cross_section(book3, 0.1, 0.1), 1.0, 3)


@given(E=st.integers(1, 5), eps=st.floats(0.03, 0.2), h=st.floats(0.06, 0.2))
def test_extrusion_preserves_measure(E, eps, h):
    s = build_periodic_flat_book(E)
    tm = fattened_mesh(s, eps, h)
    vol = tm.volumes()
    assert np.all(vol > 0)
    assert vol.sum() == pytest.approx(tm.cross_section.area * s.binding_length, rel=1e-12)
