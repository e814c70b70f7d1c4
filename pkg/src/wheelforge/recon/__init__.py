"""Depth-map to watertight mesh reconstruction."""
from .mesh import TriMesh, box_mesh, icosphere, read_stl, write_stl
from .points import PointCloud, VoxelGrid, fuse_to_grid, rim_reference_points, spoke_to_points
from .surface import decimate, laplacian_smooth, marching_cubes, postprocess
from .wheel import ReconConfig, extrude_spokes, reconstruct_wheel

__all__ = [
    "TriMesh", "box_mesh", "icosphere", "read_stl", "write_stl",
    "PointCloud", "VoxelGrid", "fuse_to_grid", "rim_reference_points", "spoke_to_points",
    "decimate", "laplacian_smooth", "marching_cubes", "postprocess",
    "ReconConfig", "extrude_spokes", "reconstruct_wheel",
]
