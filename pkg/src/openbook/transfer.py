"""Averaging (volume -> surface) and extension (surface -> volume) maps.

Both maps are assembled as sparse interpolation matrices acting on DOF
vectors. Away from the binding, ``J`` averages over the normal fibre of
length ``2 eps`` (4-point Gauss) and ``Kx`` extends by the value at the
nearest page point. Within the junction collar of radius ``R_j`` both switch
to binding data (disk average / binding value) with a linear blend over
``[R_j, 2 R_j]``. Constants are reproduced exactly by both.

Volume norms are rescaled by ``|M| / |M_eps|`` so that surface and volume
measures agree on constants; defect quantities are reported in that scaling.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.spatial import cKDTree

from .eigensolve import CutoffOnEigenvalue, EigenResult, spectral_subspace
from .femcore import AssembledForms
from .geometry import GeometryError
from .meshing import SurfaceMesh, TetMesh

GAUSS_T, GAUSS_W = np.polynomial.legendre.leggauss(4)


class VolumeLocator:
    """P1 evaluation weights at arbitrary points of an extruded tet mesh."""

    def __init__(self, mesh: TetMesh):
        self.mesh = mesh
        cs = mesh.cross_section
        self.cs = cs
        self.tri_pts = cs.vertices[cs.triangles]
        self.tree = cKDTree(self.tri_pts.mean(axis=1))
        self.coords = mesh.element_coords()
        self.nt = len(cs.triangles)

    def _locate2d(self, p: np.ndarray, k: int = 16) -> np.ndarray:
        k = min(k, self.nt)
        _, cand = self.tree.query(p, k=k)
        cand = cand.reshape(len(p), k)
        a, b, c = (self.tri_pts[cand, i] for i in range(3))
        v0, v1, v2 = b - a, c - a, p[:, None, :] - a
        det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
        l1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
        l2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
        score = np.minimum(np.minimum(1 - l1 - l2, l1), l2)
        best = np.argmax(score, axis=1)
        if np.any(score[np.arange(len(p)), best] < -1e-6):
            raise GeometryError("point outside the fattened cross-section")
        return cand[np.arange(len(p)), best]

    def weights(self, p2: np.ndarray, z: np.ndarray):
        """Vertex ids (q, 4) and weights (q, 4) of the P1 interpolant at (p2, z)."""
        tri = self._locate2d(p2)
        m = self.mesh
        zz = np.mod(z, m.L)
        layer = np.minimum((zz / m.dz).astype(np.int64), m.n_z - 1)
        zloc = zz  # unwrapped within the layer's prism
        q = np.column_stack([p2, zloc])
        best_ids = np.empty((len(p2), 4), dtype=np.int64)
        best_w = np.empty((len(p2), 4))
        best_score = np.full(len(p2), -np.inf)
        for pat in range(3):
            t = layer * 3 * self.nt + pat * self.nt + tri
            P = self.coords[t]
            D = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0], P[:, 3] - P[:, 0]], axis=2)
            lam = np.linalg.solve(D, (q - P[:, 0])[..., None])[..., 0]
            w = np.column_stack([1 - lam.sum(axis=1), lam])
            score = w.min(axis=1)
            better = score > best_score
            best_score[better] = score[better]
            best_w[better] = w[better]
            best_ids[better] = m.tets[t[better]]
        best_w = np.clip(best_w, 0.0, None)
        best_w /= best_w.sum(axis=1, keepdims=True)
        return best_ids, best_w


def surface_weights(mesh: SurfaceMesh, page: np.ndarray, x: np.ndarray, z: np.ndarray):
    """Vertex ids (q, 3) and weights (q, 3) of the surface P1 interpolant.

    Points are given in page-local coordinates; ``x = 0`` is the binding.
    """
    s = mesh.structure
    ell = s.lengths[page]
    nx = mesh.nx[page]
    dx = ell / nx
    dzs = s.binding_length / mesh.ny
    fx = np.clip(x / dx, 0.0, nx)
    i = np.minimum(np.floor(fx).astype(np.int64), nx - 1)
    xi = fx - i
    zz = np.mod(z, s.binding_length) / dzs
    j = np.minimum(np.floor(zz).astype(np.int64), mesh.ny - 1)
    eta = zz - j

    offset = (mesh.ny + 1) * (1 + np.concatenate([[0], np.cumsum(mesh.nx)])[page])

    def vid(ii, jj):
        return np.where(ii == 0, jj, offset + (ii - 1) * (mesh.ny + 1) + jj)

    v00, v10 = vid(i, j), vid(i + 1, j)
    v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
    lower = xi >= eta
    ids = np.where(lower[:, None], np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01]))
    w = np.where(
        lower[:, None],
        np.column_stack([1 - xi, xi - eta, eta]),
        np.column_stack([1 - eta, xi, eta - xi]),
    )
    return ids, np.clip(w, 0.0, None)


def _rows_to_matrix(ids, w, n_rows, n_cols, dof_in):
    rows = np.repeat(np.arange(n_rows), ids.shape[1])
    A = sparse.coo_matrix((w.ravel(), (rows, dof_in[ids.ravel()])), shape=(n_rows, n_cols)).tocsr()
    A.sum_duplicates()
    return A


@dataclass(frozen=True)
class TransferMaps:
    J: sparse.csr_matrix  # surface DOFs x volume DOFs
    Kx: sparse.csr_matrix  # volume DOFs x surface DOFs
    collar_radius: float
    blend_width: float
    eps: float


def _blend(r, R):
    return np.clip((r - R) / R, 0.0, 1.0)


def build_transfer(surface: SurfaceMesh, volume: TetMesh, eps: float, n_disk_r: int = 4, n_disk_theta: int = 16) -> TransferMaps:
    s = surface.structure
    if volume.cross_section.structure != s or abs(volume.cross_section.eps - eps) > 1e-14:
        raise GeometryError("surface and volume meshes come from different structures or eps")
    R = s.junction_radius(eps)
    loc = VolumeLocator(volume)
    d = s.directions()
    nrm = np.column_stack([-d[:, 1], d[:, 0]])

    # --- averaging J: one row per surface DOF (representative vertex) ---
    sdof = surface.dof_map()
    n2 = int(sdof.max()) + 1
    _, rep = np.unique(sdof, return_index=True)  # lowest vertex id per DOF
    page = surface.vertex_page[rep]
    x = surface.vertex_x[rep]
    z = surface.vertex_z[rep]
    wgt = _blend(x, R)

    q = len(GAUSS_T)
    on_page = page >= 0
    pk = np.where(on_page, page, 0)
    fib_p = (x[:, None, None] * d[pk][:, None, :]) + (eps * GAUSS_T)[None, :, None] * nrm[pk][:, None, :]
    fib_ids, fib_w = loc.weights(fib_p.reshape(-1, 2), np.repeat(z, q))
    fib_w = fib_w.reshape(n2, q, 4) * (GAUSS_W / 2)[None, :, None]
    fib_ids = fib_ids.reshape(n2, q, 4)

    # polar rule on the disk of radius eps around the binding
    rt, rw = np.polynomial.legendre.leggauss(n_disk_r)
    r = 0.5 * eps * (rt + 1)
    th = 2 * math.pi * (np.arange(n_disk_theta) + 0.5) / n_disk_theta
    rr, tt = np.meshgrid(r, th, indexing="ij")
    dw = (np.outer(rw * r, np.ones(n_disk_theta))).ravel()
    dw /= dw.sum()
    disk_xy = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])
    nd = len(dw)
    uz, zinv = np.unique(z, return_inverse=True)
    disk_ids, disk_w = loc.weights(np.tile(disk_xy, (len(uz), 1)), np.repeat(uz, nd))
    disk_ids = disk_ids.reshape(len(uz), nd, 4)
    disk_w = disk_w.reshape(len(uz), nd, 4) * dw[None, :, None]

    ids = np.concatenate([fib_ids.reshape(n2, -1), disk_ids[zinv].reshape(n2, -1)], axis=1)
    w = np.concatenate(
        [fib_w.reshape(n2, -1) * wgt[:, None], disk_w[zinv].reshape(n2, -1) * (1 - wgt)[:, None]], axis=1
    )
    J = _rows_to_matrix(ids, w, n2, volume.n_vertices, np.arange(volume.n_vertices))

    # --- extension Kx: one row per volume vertex ---
    V = volume.vertices
    p2 = V[:, :2]
    ell = s.lengths
    t = np.clip(p2 @ d.T, 0.0, ell)
    dist2 = (p2[:, None, 0] - t * d[None, :, 0]) ** 2 + (p2[:, None, 1] - t * d[None, :, 1]) ** 2
    kstar = np.argmin(dist2, axis=1)
    xstar = t[np.arange(len(V)), kstar]
    rad = np.linalg.norm(p2, axis=1)
    wv = _blend(rad, R)
    pid, pw = surface_weights(surface, kstar, xstar, V[:, 2])
    bid, bw = surface_weights(surface, np.zeros(len(V), dtype=np.int64), np.zeros(len(V)), V[:, 2])
    ids = np.concatenate([pid, bid], axis=1)
    w = np.concatenate([pw * wv[:, None], bw * (1 - wv)[:, None]], axis=1)
    Kx = _rows_to_matrix(ids, w, volume.n_vertices, n2, sdof)
    return TransferMaps(J, Kx, R, R, eps)


# ---------------------------------------------------------------------------
# defect measurement
# ---------------------------------------------------------------------------


@dataclass
class TransferDefectReport:
    eps: float
    Lambda: float
    dim3: int
    dim2: int
    dJ_iso: float
    dJ_en: float
    dK_iso: float
    dK_en: float
    mass_scale: float
    # per-eigenvector Rayleigh-ratio checks: (lam, lhs, rhs)
    rr_J: list = field(default_factory=list)
    rr_K: list = field(default_factory=list)
    sandwich: bool | None = None  # filled in by the harness once eigenvalue gaps are known

    def combined_J(self, lam: float) -> float:
        return _combined(self.dJ_iso, self.dJ_en, lam)

    def combined_K(self, lam: float) -> float:
        return _combined(self.dK_iso, self.dK_en, lam)

    @property
    def rayleigh_ok(self) -> bool:
        return all(l <= r for _, l, r in self.rr_J + self.rr_K)

    def row(self) -> list:
        return [self.eps, self.Lambda, self.dim3, self.dJ_iso, self.dJ_en, self.dK_iso, self.dK_en]


def _combined(d_iso, d_en, lam):
    den = 1.0 - d_iso * (1.0 + lam)
    if den <= 0:
        return math.inf
    return (1.0 + d_en) / den - 1.0


def defects_csv(reports: list[TransferDefectReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps", "Lambda", "dim", "dJ_iso", "dJ_en", "dK_iso", "dK_en"])
    for r in reports:
        w.writerow([f"{r.eps:.6g}", f"{r.Lambda:.6g}", r.dim3] + [f"{v:.10e}" for v in r.row()[3:]])
    return buf.getvalue()


def _with_exact_constants(W: np.ndarray, M) -> np.ndarray:
    """Same span as W (which contains the constants), with the constant direction exact."""
    one = np.ones(W.shape[0])
    c = one / math.sqrt(float(one @ (M @ one)))
    rest = W[:, 1:] - np.outer(c, c @ (M @ W[:, 1:]))
    if rest.shape[1]:
        G = rest.T @ (M @ rest)
        w, V = np.linalg.eigh(0.5 * (G + G.T))
        rest = rest @ (V / np.sqrt(w))
    return np.column_stack([c, rest])


def _max_abs_ratio(A, B) -> float:
    if A.shape[0] == 0:
        return 0.0
    w = sla.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)
    return float(np.max(np.abs(w)))


def _max_energy_ratio(A, B, rel=1e-10) -> float:
    """max of u'Au / u'Bu over range(B) (B PSD with the constants in its kernel)."""
    if A.shape[0] <= 1:
        return 0.0
    # the first basis vector is the exact constant; B and A vanish on it
    A, B = A[1:, 1:], B[1:, 1:]
    w = sla.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)
    return float(w.max())


def measure_defects(
    forms2d: AssembledForms,
    forms3d: AssembledForms,
    maps: TransferMaps,
    Lambda: float,
    eig3d: EigenResult,
    eig2d: EigenResult,
) -> TransferDefectReport:
    """Worst-case defects of J and Kx over the spectral subspaces below Lambda.

    Each quantity is the extreme generalized eigenvalue of a small projected
    pencil, so it is the maximum over the unit ball of the subspace.
    """
    sub3 = spectral_subspace(eig3d, Lambda)
    sub2 = spectral_subspace(eig2d, Lambda)
    K2, M2 = forms2d.K, forms2d.M
    one2 = np.ones(forms2d.n)
    one3 = np.ones(forms3d.n)
    rho = float(one2 @ (M2 @ one2)) / float(one3 @ (forms3d.M @ one3))
    K3, M3 = rho * forms3d.K, rho * forms3d.M

    W3 = _with_exact_constants(sub3.basis, M3)
    JW = maps.J @ W3
    gm3 = W3.T @ (M3 @ W3)
    gk3 = W3.T @ (K3 @ W3)
    gm2J = JW.T @ (M2 @ JW)
    gk2J = JW.T @ (K2 @ JW)
    dJ_iso = _max_abs_ratio(gm3 - gm2J, gk3 + gm3)
    dJ_en = max(0.0, _max_energy_ratio(gk2J - gk3, gk3))

    W2 = _with_exact_constants(sub2.basis, M2)
    KW = maps.Kx @ W2
    gm2 = W2.T @ (M2 @ W2)
    gk2 = W2.T @ (K2 @ W2)
    gm3K = KW.T @ (M3 @ KW)
    gk3K = KW.T @ (K3 @ KW)
    dK_iso = _max_abs_ratio(gm2 - gm3K, gk2 + gm2)
    dK_en = max(0.0, _max_energy_ratio(gk3K - gk2, gk2))

    rep = TransferDefectReport(maps.eps, Lambda, sub3.dim, sub2.dim, dJ_iso, dJ_en, dK_iso, dK_en, rho)
    for i in range(sub3.dim):
        u = sub3.basis[:, i]
        Ju = maps.J @ u
        r_eps = float(u @ (K3 @ u)) / float(u @ (M3 @ u))
        lhs = float(Ju @ (K2 @ Ju)) / float(Ju @ (M2 @ Ju))
        rep.rr_J.append((r_eps, lhs, (1 + rep.combined_J(r_eps)) * r_eps + 1e-9 * (1 + r_eps)))
    for i in range(sub2.dim):
        u = sub2.basis[:, i]
        Ku = maps.Kx @ u
        r0 = float(u @ (K2 @ u)) / float(u @ (M2 @ u))
        lhs = float(Ku @ (K3 @ Ku)) / float(Ku @ (M3 @ Ku))
        rep.rr_K.append((r0, lhs, (1 + rep.combined_K(r0)) * r0 + 1e-9 * (1 + r0)))
    return rep


__all__ = [
    "CutoffOnEigenvalue",
    "TransferDefectReport",
    "TransferMaps",
    "VolumeLocator",
    "build_transfer",
    "defects_csv",
    "measure_defects",
    "surface_weights",
]
