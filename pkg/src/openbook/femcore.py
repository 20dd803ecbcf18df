"""P1 finite element forms on the book surface and on the fattened domain.

Both forms are assembled with consistent mass matrices and no essential
conditions: free page edges and the boundary of the fattened domain are
natural (Neumann), and the Kirchhoff balance at the binding is left to emerge
from the variational form. ``kirchhoff_residual`` measures how well it does.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .meshing import SurfaceMesh, TetMesh


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class AssembledForms:
    K: sparse.csr_matrix
    M: sparse.csr_matrix
    dof_map: np.ndarray  # vertex -> DOF

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def to_dofs(self, values: np.ndarray) -> np.ndarray:
        """Restrict vertex values to DOFs (last vertex wins on identified ones)."""
        out = np.zeros(self.n)
        out[self.dof_map] = values
        return out

    def to_vertices(self, u: np.ndarray) -> np.ndarray:
        return u[self.dof_map]

    def energy(self, u) -> float:
        return float(u @ (self.K @ u))

    def mass(self, u) -> float:
        return float(u @ (self.M @ u))


def triangle_p1(p: np.ndarray):
    """Element stiffness and mass of P1 triangles embedded in R^3.

    ``p`` has shape (t, 3, 3). Returns (Ke, Me, area), Ke/Me of shape (t, 3, 3).
    """
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    area = 0.5 * np.linalg.norm(np.cross(e[:, 2], -e[:, 1]), axis=1)
    if np.any(area <= 1e-14 * np.max(area, initial=1.0)):
        raise AssemblyError("degenerate triangle")
    Ke = np.einsum("tid,tjd->tij", e, e) / (4 * area[:, None, None])
    Me = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12)[:, None, None]
    return Ke, Me, area


def tet_p1(p: np.ndarray):
    """Element stiffness and mass of P1 tetrahedra; ``p`` has shape (t, 4, 3)."""
    D = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)  # (t, 3, 3)
    det = np.linalg.det(D)
    if np.any(det <= 0):
        raise AssemblyError("inverted or degenerate tetrahedron")
    vol = det / 6
    # gradients of barycentric coordinates: rows of inv(D) give grads of lambda_1..3
    G = np.linalg.inv(D)  # (t, 3, 3): G[:, :, i] is grad lambda_{i+1}
    grads = np.concatenate([-G.sum(axis=2, keepdims=True), G], axis=2).transpose(0, 2, 1)
    Ke = np.einsum("tid,tjd->tij", grads, grads) * vol[:, None, None]
    Me = (np.ones((4, 4)) + np.eye(4))[None] * (vol / 20)[:, None, None]
    return Ke, Me, vol


def _scatter(cells_dof: np.ndarray, Ke: np.ndarray, Me: np.ndarray, n: int):
    k = cells_dof.shape[1]
    rows = np.repeat(cells_dof, k, axis=1).ravel()
    cols = np.tile(cells_dof, (1, k)).ravel()
    K = sparse.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M = sparse.coo_matrix((Me.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    # exact symmetry (coo summation order can differ between (i,j) and (j,i))
    K = ((K + K.T) * 0.5).tocsr()
    M = ((M + M.T) * 0.5).tocsr()
    K.sum_duplicates()
    M.sum_duplicates()
    return K, M


def assemble_surface(mesh: SurfaceMesh) -> AssembledForms:
    dof = mesh.dof_map()
    Ke, Me, _ = triangle_p1(mesh.vertices[mesh.triangles])
    K, M = _scatter(dof[mesh.triangles], Ke, Me, int(dof.max()) + 1)
    return AssembledForms(K, M, dof)


def assemble_volume(mesh: TetMesh) -> AssembledForms:
    Ke, Me, _ = tet_p1(mesh.element_coords())
    dof = np.arange(mesh.n_vertices)
    K, M = _scatter(mesh.tets, Ke, Me, mesh.n_vertices)
    return AssembledForms(K, M, dof)


@dataclass(frozen=True)
class KirchhoffResidual:
    vertex_ids: np.ndarray  # binding vertices (bottom row representatives)
    residual: np.ndarray  # sum over pages of conormal derivatives at each vertex
    page_flux: np.ndarray  # (n_binding, E) per-page conormal derivatives
    norm: float  # L2 norm along the binding
    page_norm: float = 0.0  # largest single-page flux, same norm; sets the scale

    def relative(self) -> float:
        return self.norm / self.page_norm if self.page_norm > 0 else 0.0


def _binding_edges(mesh: SurfaceMesh):
    """Binding edges and, per page, the triangle that owns each one."""
    on_b = np.zeros(mesh.n_vertices, dtype=bool)
    on_b[mesh.binding_vertex_ids] = True
    T = mesh.triangles
    nb = on_b[T].sum(axis=1)
    sel = np.flatnonzero(nb >= 2)
    edges, tri, third = [], [], []
    for t in sel:
        v = T[t]
        mask = on_b[v]
        a, b = np.sort(v[mask])[:2]
        edges.append((a, b))
        tri.append(t)
        third.append(v[~mask][0])
    return np.array(edges), np.array(tri), np.array(third)


def kirchhoff_residual(mesh: SurfaceMesh, u: np.ndarray, lam: float | None = None) -> KirchhoffResidual:
    """Binding flux balance of a discrete function.

    ``u`` holds DOF values of an eigenfunction candidate. ``lam`` is accepted
    so the call mirrors ``weak_page_flux``; gradient recovery does not use it. On
    each page the conormal derivative at the binding is taken from the P1
    gradient of the triangle owning the binding edge; per binding edge the
    pages' fluxes are summed, then averaged onto the edge end points.
    """
    uv = u[mesh.dof_map()]
    edges, tri, third = _binding_edges(mesh)
    X = mesh.vertices
    pa, pb, pc = X[edges[:, 0]], X[edges[:, 1]], X[third]
    t = pb - pa
    t /= np.linalg.norm(t, axis=1)[:, None]
    w = pc - pa
    nu = -(w - np.sum(w * t, axis=1)[:, None] * t)  # outward conormal, in-plane
    nu /= np.linalg.norm(nu, axis=1)[:, None]
    # P1 gradient on each owning triangle
    p = X[mesh.triangles[tri]]
    Ke_e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area2 = np.linalg.norm(nrm, axis=1)
    nhat = nrm / area2[:, None]
    # grad lambda_i = (n x e_i) / (2A)
    gl = np.cross(nhat[:, None, :], Ke_e) / area2[:, None, None]
    grad = np.einsum("ti,tid->td", uv[mesh.triangles[tri]], gl)
    flux = np.sum(grad * nu, axis=1)

    pages = mesh.page_tag[tri]
    E = mesh.structure.n_pages
    bid = mesh.binding_vertex_ids
    pos = np.full(mesh.n_vertices, -1)
    pos[bid] = np.arange(bid.size)
    e0, e1 = pos[edges[:, 0]], pos[edges[:, 1]]
    ne = bid.size - 1  # binding edges per page
    edge_key = np.minimum(e0, e1)
    edge_flux = np.zeros((ne, E))
    edge_flux[edge_key, pages] = flux
    edge_len = np.linalg.norm(X[bid[1:]] - X[bid[:-1]], axis=1)
    balance = edge_flux.sum(axis=1)
    norm = float(np.sqrt(np.sum(balance**2 * edge_len)))
    page_norm = float(np.sqrt(np.sum(edge_flux**2 * edge_len[:, None], axis=0)).max())
    # vertex values on the periodic binding: mean of the two adjacent edges
    vflux = 0.5 * (edge_flux + np.roll(edge_flux, 1, axis=0))
    return KirchhoffResidual(bid[:-1], vflux.sum(axis=1), vflux, norm, page_norm)


def weak_page_flux(mesh: SurfaceMesh, u: np.ndarray, lam: float) -> np.ndarray:
    """Per-page fluxes recovered from the page-restricted weak residual.

    Returns (n_binding_rows, E). Their sum over pages equals ``(K - lam M) u``
    at the binding DOFs, so for an exact discrete eigenpair it vanishes to
    solver precision.
    """
    dof = mesh.dof_map()
    E = mesh.structure.n_pages
    bdofs = dof[mesh.binding_vertex_ids[:-1]]
    out = np.zeros((bdofs.size, E))
    Ke, Me, _ = triangle_p1(mesh.vertices[mesh.triangles])
    n = int(dof.max()) + 1
    for k in range(E):
        sel = mesh.page_tag == k
        Kk, Mk = _scatter(dof[mesh.triangles[sel]], Ke[sel], Me[sel], n)
        out[:, k] = ((Kk - lam * Mk) @ u)[bdofs]
    return out
