"""Surface and fattened-domain meshes for periodic flat books.

Surface: structured right-triangle grid per page, binding row shared by all
pages, extra top row identified with the bottom row (period ``L``).

Fattened domain: the cross-section of ``M_eps`` normal to the binding is the
union of the eps-neighbourhoods of the page segments. Its boundary is traced
explicitly (offset lines, junction disk arc, end caps), cut into junction /
strip / cap regions, triangulated with ``triangle`` and extruded into a
periodic stack of prisms, each split into three tetrahedra.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import triangle as tr

from .geometry import GeometryError, OpenBookStructure


class MeshResolutionError(ValueError):
    pass


class FatteningTooLarge(GeometryError):
    pass


class MeshTopologyError(RuntimeError):
    pass


class UnsupportedGeometry(GeometryError):
    pass


# ---------------------------------------------------------------------------
# surface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceMesh:
    vertices: np.ndarray  # (n, 3)
    triangles: np.ndarray  # (t, 3)
    page_tag: np.ndarray  # (t,)
    binding_vertex_ids: np.ndarray  # (ny + 1,) ordered along the binding
    periodic_pairs: np.ndarray  # (p, 2): top-row vertex -> bottom-row vertex
    h: float
    # page-local coordinates: page index (-1 on the binding), distance x from
    # the binding, coordinate z along it
    vertex_page: np.ndarray
    vertex_x: np.ndarray
    vertex_z: np.ndarray
    ny: int
    nx: np.ndarray  # per page
    structure: OpenBookStructure

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def min_angle_deg(self) -> float:
        p = self.vertices[self.triangles]
        return float(np.degrees(_min_angles(p)).min())

    def dof_map(self) -> np.ndarray:
        """vertex -> DOF after periodic identification (bottom rows keep their order)."""
        rep = np.arange(self.n_vertices)
        rep[self.periodic_pairs[:, 0]] = self.periodic_pairs[:, 1]
        keep = np.ones(self.n_vertices, dtype=bool)
        keep[self.periodic_pairs[:, 0]] = False
        new = np.cumsum(keep) - 1
        return new[rep]

    def page_vertex_index(self, k: int, i: int, j: int) -> int:
        """Global vertex id of grid node ``(i, j)`` on page ``k`` (``i = 0`` is the binding)."""
        if i == 0:
            return int(self.binding_vertex_ids[j])
        offset = (self.ny + 1) * (1 + int(np.sum(self.nx[:k])))
        return offset + (i - 1) * (self.ny + 1) + j


def _min_angles(p: np.ndarray) -> np.ndarray:
    angs = []
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        u = p[:, b] - p[:, a]
        v = p[:, c] - p[:, a]
        cosang = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angs.append(np.arccos(np.clip(cosang, -1, 1)))
    return np.min(angs, axis=0)


def _require_flat(s: OpenBookStructure) -> None:
    if not s.flat or len(s.bindings) != 1:
        raise UnsupportedGeometry("meshing supports single-binding flat books only")


def mesh_surface(s: OpenBookStructure, h: float) -> SurfaceMesh:
    _require_flat(s)
    L = s.binding_length
    if not 0 < h <= min(float(s.lengths.min()), L) / 4 + 1e-12:
        raise MeshResolutionError(f"h={h} must lie in (0, min(ell, L)/4]")
    ny = int(math.ceil(L / h - 1e-9))
    nx = np.array([int(math.ceil(p.length / h - 1e-9)) for p in s.pages])
    z = np.linspace(0.0, L, ny + 1)

    verts = [np.column_stack([np.zeros(ny + 1), np.zeros(ny + 1), z])]
    vpage = [np.full(ny + 1, -1)]
    vx = [np.zeros(ny + 1)]
    vz = [z]
    d = s.directions()
    for k, p in enumerate(s.pages):
        x = np.linspace(0.0, p.length, nx[k] + 1)[1:]
        X, Z = np.meshgrid(x, z, indexing="ij")  # row-major in (i, j)
        X, Z = X.ravel(), Z.ravel()
        verts.append(np.column_stack([X * d[k, 0], X * d[k, 1], Z]))
        vpage.append(np.full(X.size, k))
        vx.append(X)
        vz.append(Z)
    vertices = np.vstack(verts)

    tris, tags = [], []
    offset = ny + 1
    for k in range(s.n_pages):
        idx = np.empty((nx[k] + 1, ny + 1), dtype=np.int64)
        idx[0] = np.arange(ny + 1)
        idx[1:] = offset + np.arange(nx[k] * (ny + 1)).reshape(nx[k], ny + 1)
        offset += nx[k] * (ny + 1)
        v00 = idx[:-1, :-1].ravel()
        v10 = idx[1:, :-1].ravel()
        v11 = idx[1:, 1:].ravel()
        v01 = idx[:-1, 1:].ravel()
        tris.append(np.column_stack([v00, v10, v11]))
        tris.append(np.column_stack([v00, v11, v01]))
        tags.append(np.full(2 * v00.size, k))
    triangles = np.vstack(tris)

    vpage_a = np.concatenate(vpage)
    vz_a = np.concatenate(vz)
    top = np.flatnonzero(np.isclose(vz_a, L))
    bottom = top - ny  # same column, row 0
    return SurfaceMesh(
        vertices=vertices,
        triangles=triangles,
        page_tag=np.concatenate(tags),
        binding_vertex_ids=np.arange(ny + 1),
        periodic_pairs=np.column_stack([top, bottom]),
        h=h,
        vertex_page=vpage_a,
        vertex_x=np.concatenate(vx),
        vertex_z=vz_a,
        ny=ny,
        nx=nx,
        structure=s,
    )


# ---------------------------------------------------------------------------
# cross-section
# ---------------------------------------------------------------------------

JUNCTION = "junction"


@dataclass(frozen=True)
class CrossSectionMesh:
    vertices: np.ndarray  # (n, 2)
    triangles: np.ndarray  # (t, 3)
    region: np.ndarray  # (t,) index into region_names
    region_names: tuple[str, ...]
    boundary_edges: np.ndarray  # (b, 2)
    arc_tol: float
    eps: float
    h: float
    junction_radius: float
    structure: OpenBookStructure
    pslg_area: float = field(default=0.0)

    @property
    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        u = p[:, 1] - p[:, 0]
        v = p[:, 2] - p[:, 0]
        return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])


def _arc_points(center, radius, a0, a1, arc_tol, max_len):
    """Points on a ccw arc from angle a0 to a1, sagitta <= arc_tol, chord <= max_len."""
    sweep = a1 - a0
    if sweep <= 1e-14:
        return np.array([center + radius * np.array([math.cos(a0), math.sin(a0)])])
    dphi = 2 * math.acos(max(1.0 - arc_tol / radius, -1.0))
    dphi = min(dphi, 2 * math.asin(min(1.0, max_len / (2 * radius))))
    n = max(1, int(math.ceil(sweep / dphi - 1e-12)))
    t = a0 + sweep * np.arange(n + 1) / n
    return center + radius * np.column_stack([np.cos(t), np.sin(t)])


def _line_points(p, q, max_len):
    n = max(1, int(math.ceil(np.linalg.norm(q - p) / max_len - 1e-12)))
    t = np.arange(n + 1)[:, None] / n
    return p + t * (q - p)


class _PSLG:
    def __init__(self):
        self.pts: list[np.ndarray] = []
        self.keys: dict[tuple, int] = {}
        self.segs: list[tuple[int, int]] = []

    def add(self, p) -> int:
        key = (round(float(p[0]), 11), round(float(p[1]), 11))
        if key not in self.keys:
            self.keys[key] = len(self.pts)
            self.pts.append(np.asarray(p, dtype=float))
        return self.keys[key]

    def polyline(self, pts) -> list[int]:
        ids = [self.add(p) for p in pts]
        for a, b in zip(ids, ids[1:]):
            if a != b:
                self.segs.append((min(a, b), max(a, b)))
        return ids


def build_cross_section(
    s: OpenBookStructure, eps: float, h: float, arc_tol: float | None = None
) -> CrossSectionMesh:
    _require_flat(s)
    if not 0 < eps < s.epsilon0:
        raise FatteningTooLarge(f"eps={eps} must lie in (0, epsilon0={s.epsilon0})")
    if arc_tol is None:
        arc_tol = eps / 100
    if not 0 < arc_tol <= eps / 10 + 1e-15:
        raise GeometryError("arc_tol must lie in (0, eps/10]")
    if h <= 0:
        raise MeshResolutionError("h must be positive")

    E = s.n_pages
    order = np.argsort(s.angles)
    ang = s.angles[order]
    ell = s.lengths[order]
    d = np.column_stack([np.cos(ang), np.sin(ang)])
    n = np.column_stack([-d[:, 1], d[:, 0]])  # left normal
    a = s.junction_radius(eps)
    if a >= ell.min():
        raise GeometryError("junction collar exceeds page length")
    hj = h / 2

    g = _PSLG()
    area_poly = []  # outer boundary loop for the exact polygon area

    # junction: for each page k (ccw), left line of k inward, corner/arc, right line of k+1 outward
    loop = []
    for k in range(E):
        k1 = (k + 1) % E
        gap = (ang[k1] - ang[k]) % (2 * math.pi) if E > 1 else 2 * math.pi
        start = a * d[k] + eps * n[k]
        end = a * d[k1] - eps * n[k1]
        if gap < math.pi - 1e-12:
            r = eps / math.sin(gap / 2)
            mid = ang[k] + gap / 2
            corner = r * np.array([math.cos(mid), math.sin(mid)])
            pts = np.vstack([_line_points(start, corner, hj), _line_points(corner, end, hj)[1:]])
        else:
            p0 = eps * n[k]
            p1 = -eps * n[k1]
            arc = _arc_points(np.zeros(2), eps, ang[k] + math.pi / 2, ang[k] + gap - math.pi / 2, arc_tol, hj)
            pts = np.vstack([_line_points(start, p0, hj), arc[1:], _line_points(p1, end, hj)[1:]])
        g.polyline(pts)
        loop.append(pts[:-1])
        # cut across page k1 at x = a (junction / strip interface)
        g.polyline(_line_points(end, a * d[k1] + eps * n[k1], hj))
        # strip k1 side lines and cap
        strip_r = _line_points(end, ell[k1] * d[k1] - eps * n[k1], h)
        g.polyline(strip_r)
        loop.append(strip_r[:-1])
        cap = _arc_points(ell[k1] * d[k1], eps, ang[k1] - math.pi / 2, ang[k1] + math.pi / 2, arc_tol, h)
        g.polyline(cap)
        loop.append(cap)
        g.polyline(_line_points(ell[k1] * d[k1] - eps * n[k1], ell[k1] * d[k1] + eps * n[k1], h))
        strip_l = _line_points(ell[k1] * d[k1] + eps * n[k1], a * d[k1] + eps * n[k1], h)
        g.polyline(strip_l)
        loop.append(strip_l[1:-1])
    poly = np.vstack(loop)
    pslg_area = 0.5 * abs(np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1]))

    # regions: attribute ids 1..; junction first, then strips, then caps (sorted page order)
    big = math.sqrt(3) / 4 * h * h
    small = math.sqrt(3) / 4 * hj * hj
    names = [JUNCTION]
    regions = [[0.0, 0.0, 1, small]]
    for k in range(E):
        c = 0.5 * (a + ell[k]) * d[k]
        regions.append([c[0], c[1], len(names) + 1, big])
        names.append(f"strip_{int(order[k])}")
    for k in range(E):
        c = (ell[k] + 0.5 * eps) * d[k]
        regions.append([c[0], c[1], len(names) + 1, big])
        names.append(f"cap_{int(order[k])}")

    pslg = {
        "vertices": np.array(g.pts),
        "segments": np.array(sorted(set(g.segs))),
        "regions": np.array(regions),
    }
    out = tr.triangulate(pslg, "pq30AaQ")
    if "triangles" not in out or len(out["triangles"]) == 0:
        raise GeometryError("cross-section triangulation failed")
    V = out["vertices"]
    T = out["triangles"].astype(np.int64)
    reg = out["triangle_attributes"][:, 0].astype(np.int64) - 1
    if np.any(reg < 0):
        raise GeometryError("unassigned region in cross-section triangulation")

    # drop unreferenced vertices (triangle keeps all input points)
    used = np.unique(T)
    remap = -np.ones(len(V), dtype=np.int64)
    remap[used] = np.arange(used.size)
    V = V[used]
    T = remap[T]
    p = V[T]
    sgn = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = sgn < 0
    T[flip] = T[flip][:, [0, 2, 1]]
    return CrossSectionMesh(
        vertices=V,
        triangles=T,
        region=reg,
        region_names=tuple(names),
        boundary_edges=_boundary_edges(T),
        arc_tol=arc_tol,
        eps=eps,
        h=h,
        junction_radius=a,
        structure=s,
        pslg_area=float(pslg_area),
    )


def _boundary_edges(T: np.ndarray) -> np.ndarray:
    e = np.vstack([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    es = np.sort(e, axis=1)
    _, inv, cnt = np.unique(es, axis=0, return_inverse=True, return_counts=True)
    return e[cnt[inv.ravel()] == 1]


def stadium_union_area(s: OpenBookStructure, eps: float) -> float:
    """Exact area of the cross-section for E <= 2 collinear/single pages (stadium)."""
    if s.n_pages == 1:
        return 2 * eps * s.pages[0].length + math.pi * eps**2
    if s.n_pages == 2 and abs(abs(s.angles[1] - s.angles[0]) - math.pi) < 1e-12:
        return 2 * eps * float(s.lengths.sum()) + math.pi * eps**2
    raise ValueError("closed form only for a single page or two collinear pages")


# ---------------------------------------------------------------------------
# extrusion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TetMesh:
    vertices: np.ndarray  # (n_cs * n_z, 3), z in [0, L)
    tets: np.ndarray  # (t, 4)
    tet_top: np.ndarray  # (t, 4) bool: vertex sits on the upper face of its prism
    tet_layer: np.ndarray  # (t,)
    tet_prism: np.ndarray  # (t,) cross-section triangle index
    region: np.ndarray  # (t,)
    n_z: int
    L: float
    shift: np.ndarray  # vertex -> same vertex one layer up (periodic)
    cross_section: CrossSectionMesh

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def dz(self) -> float:
        return self.L / self.n_z

    def element_coords(self) -> np.ndarray:
        """Unwrapped tet coordinates (t, 4, 3); the top prism layer reaches z = L."""
        nv = len(self.cross_section.vertices)
        xy = self.cross_section.vertices[self.tets % nv]
        z = (self.tet_layer[:, None] + self.tet_top) * self.dz
        return np.concatenate([xy, z[..., None]], axis=2)

    def volumes(self) -> np.ndarray:
        p = self.element_coords()
        return np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6

    def boundary_faces(self) -> np.ndarray:
        f = np.vstack([self.tets[:, [1, 2, 3]], self.tets[:, [0, 3, 2]], self.tets[:, [0, 1, 3]], self.tets[:, [0, 2, 1]]])
        fs = np.sort(f, axis=1)
        _, inv, cnt = np.unique(fs, axis=0, return_inverse=True, return_counts=True)
        return f[cnt[inv.ravel()] == 1]


def extrude_periodic(cs: CrossSectionMesh, L: float, n_z: int) -> TetMesh:
    if n_z < 4:
        raise MeshResolutionError("n_z must be >= 4")
    nv = len(cs.vertices)
    nt = len(cs.triangles)
    tri = np.sort(cs.triangles, axis=1)  # v0 < v1 < v2 fixes every quad diagonal
    v0, v1, v2 = tri.T
    # local prism vertices: a_i bottom, b_i top; diagonal of each quad face runs
    # from the bottom of the lower index to the top of the higher index
    local = [
        [(v0, 0), (v1, 0), (v2, 0), (v2, 1)],
        [(v0, 0), (v1, 0), (v1, 1), (v2, 1)],
        [(v0, 0), (v0, 1), (v1, 1), (v2, 1)],
    ]
    layers = np.arange(n_z)
    tets, tops, lay, prism = [], [], [], []
    for j in layers:
        for pat in local:
            ids = np.column_stack([v + ((j + t) % n_z) * nv for v, t in pat])
            tets.append(ids)
            tops.append(np.tile([t for _, t in pat], (nt, 1)).astype(bool))
            lay.append(np.full(nt, j))
            prism.append(np.arange(nt))
    # order: layer-major, then split pattern, then triangle
    tets = np.vstack(tets)
    tops = np.vstack(tops)
    lay = np.concatenate(lay)
    prism = np.concatenate(prism)
    xy = np.tile(cs.vertices, (n_z, 1))
    zc = np.repeat(np.arange(n_z) * (L / n_z), nv)
    vertices = np.column_stack([xy, zc])
    shift = (np.arange(nv * n_z) + nv) % (nv * n_z)
    mesh = TetMesh(vertices, tets, tops, lay, prism, cs.region[prism], n_z, L, shift, cs)
    vol = mesh.volumes()
    neg = vol < 0
    if neg.any():
        tets[neg] = tets[neg][:, [0, 2, 1, 3]]
        tops[neg] = tops[neg][:, [0, 2, 1, 3]]
        vol = mesh.volumes()
    if np.any(vol <= 0):
        raise MeshTopologyError("degenerate tetrahedron after prism split")
    return mesh


def fattened_mesh(s: OpenBookStructure, eps: float, h: float, n_z: int | None = None, arc_tol=None) -> TetMesh:
    """Cross-section plus extrusion with the default layer rule ``n_z = ceil(L/h)``."""
    cs = build_cross_section(s, eps, h, arc_tol)
    if n_z is None:
        n_z = max(4, int(math.ceil(s.binding_length / h - 1e-9)))
    return extrude_periodic(cs, s.binding_length, n_z)
