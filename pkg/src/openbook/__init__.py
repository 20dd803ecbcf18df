"""Spectral convergence of fattened periodic open books toward their surface limit."""
from .geometry import OpenBookStructure, build_periodic_flat_book, compute_epsilon0, validate_structure
from .meshing import build_cross_section, extrude_periodic, fattened_mesh, mesh_surface
from .femcore import assemble_surface, assemble_volume, kirchhoff_residual
from .eigensolve import dense_reference, smallest_eigenpairs, spectral_subspace
from .spectra_oracle import book_limit_spectrum, star_graph_spectrum
from .transfer import build_transfer, measure_defects

__all__ = [
    "OpenBookStructure",
    "build_periodic_flat_book",
    "compute_epsilon0",
    "validate_structure",
    "build_cross_section",
    "extrude_periodic",
    "fattened_mesh",
    "mesh_surface",
    "assemble_surface",
    "assemble_volume",
    "kirchhoff_residual",
    "dense_reference",
    "smallest_eigenpairs",
    "spectral_subspace",
    "book_limit_spectrum",
    "star_graph_spectrum",
    "build_transfer",
    "measure_defects",
]
