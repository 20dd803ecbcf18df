"""File exports: legacy VTK meshes, Matrix Market matrices."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.io

from .meshing import SurfaceMesh, TetMesh

VTK_TRIANGLE = 5
VTK_TETRA = 10


def _write_vtk(path, points, cells, cell_type, cell_data: dict, point_data: dict, title: str):
    path = Path(path)
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(points)} double",
    ]
    lines += [" ".join(f"{c:.16g}" for c in p) for p in points]
    k = cells.shape[1]
    lines.append(f"CELLS {len(cells)} {len(cells) * (k + 1)}")
    lines += [f"{k} " + " ".join(str(int(i)) for i in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(cell_type)] * len(cells)
    if cell_data:
        lines.append(f"CELL_DATA {len(cells)}")
        for name, vals in cell_data.items():
            lines += [f"SCALARS {name} int 1", "LOOKUP_TABLE default"]
            lines += [str(int(v)) for v in vals]
    if point_data:
        lines.append(f"POINT_DATA {len(points)}")
        for name, vals in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.16g}" for v in vals]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_vtk_surface(path, mesh: SurfaceMesh, point_data: dict | None = None):
    """Point data, if given, is per vertex (expand DOF vectors with ``u[mesh.dof_map()]``)."""
    return _write_vtk(
        path, mesh.vertices, mesh.triangles, VTK_TRIANGLE, {"page_tag": mesh.page_tag}, point_data or {}, "open book surface"
    )


def write_vtk_tets(path, mesh: TetMesh, point_data: dict | None = None):
    """The periodic stack is written unwrapped: the bottom layer is repeated at z = L."""
    nv = len(mesh.cross_section.vertices)
    top = np.column_stack([mesh.cross_section.vertices, np.full(nv, mesh.L)])
    points = np.vstack([mesh.vertices, top])
    cells = mesh.tets.copy()
    wrap = mesh.tet_top & (mesh.tet_layer[:, None] == mesh.n_z - 1)
    cells[wrap] = cells[wrap] % nv + mesh.n_vertices
    pdata = {}
    for name, vals in (point_data or {}).items():
        vals = np.asarray(vals)
        pdata[name] = np.concatenate([vals, vals[:nv]])
    return _write_vtk(path, points, cells, VTK_TETRA, {"region": mesh.region}, pdata, "fattened open book")


def write_matrix_market(path, A, comment: str = ""):
    scipy.io.mmwrite(str(path), A.tocoo(), comment=comment, symmetry="symmetric")
    return Path(path)
