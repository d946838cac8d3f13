"""
Boundary meshes and spatial predicates
"""
from lamg.geometry.boundary_mesh import BoundaryMesh
from lamg.geometry.shapes import boundary_from_spec, make_box, make_cube, make_icosphere, make_slab, make_torus
from lamg.geometry.surface_io import load_boundary_mesh

__all__ = ["BoundaryMesh", "boundary_from_spec", "make_box", "make_cube", "make_icosphere", "make_slab", "make_torus", "load_boundary_mesh"]
