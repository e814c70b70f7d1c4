"""Full-wheel reconstruction: spoke depth columns plus the template rim, fused and meshed."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..depthsynth import DepthMap
from ..errors import NotWatertight
from ..geometry import RimTemplate
from .mesh import TriMesh
from .points import PointCloud, fuse_to_grid, rim_reference_points, spoke_to_points
from .surface import marching_cubes, postprocess


@dataclass(frozen=True)
class ReconConfig:
    voxel_size: float = 3.0
    iso: float = 0.5
    blur_sigma: float = 0.5
    smooth_iters: int = 10
    smooth_step: float = 0.5
    target_triangles: int = 50_000

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if not 0 < self.iso < 1:
            raise ValueError("iso must lie in (0, 1)")
        if self.smooth_iters < 0 or self.target_triangles < 4:
            raise ValueError("invalid smoothing or decimation settings")


def extrude_spokes(surface: PointCloud, template: RimTemplate, step: float) -> PointCloud:
    """Thicken the frontal surface into solid columns sampled every ``step`` mm.

    Hub pixels run from the hub face back to the mounting face; spoke pixels are
    ``template.spoke_thickness`` deep.
    """
    p = surface.points
    r = np.hypot(p[:, 0], p[:, 1])
    z0 = p[:, 2]
    z1 = np.where(r <= template.disc_radius, np.maximum(template.mount_depth, z0),
                  z0 + template.spoke_thickness)
    n = np.floor((z1 - z0) / step).astype(np.int64) + 2
    idx = np.repeat(np.arange(len(p)), n)
    k = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    # last sample of each column lands exactly on its back face
    z = np.minimum(z0[idx] + k * step, z1[idx])
    return PointCloud(np.column_stack([p[idx, 0], p[idx, 1], z]), "spoke")


def _drop_masked(cloud: PointCloud, d: DepthMap) -> PointCloud:
    """Remove points that project onto invalid pixels (bolt holes stay open)."""
    p = cloud.points
    col = np.floor(p[:, 0] / d.mm_per_pixel + d.width / 2).astype(np.int64)
    row = np.floor(d.height / 2 - p[:, 1] / d.mm_per_pixel).astype(np.int64)
    inside = (col >= 0) & (col < d.width) & (row >= 0) & (row < d.height)
    keep = np.zeros(len(p), dtype=bool)
    keep[inside] = d.valid_mask[row[inside], col[inside]]
    return PointCloud(p[keep], cloud.source_tag)


def reconstruct_wheel(d: DepthMap, template: RimTemplate | None = None,
                      cfg: ReconConfig | None = None) -> TriMesh:
    """Watertight wheel mesh in template coordinates (mm, z along the axis).

    Raises :class:`NotWatertight` if the cleaned surface still has open edges.
    """
    template = template or RimTemplate()
    cfg = cfg or ReconConfig()
    h = cfg.voxel_size
    spokes = extrude_spokes(spoke_to_points(d, template=template), template, 0.5 * h)
    angular = int(np.ceil(2 * np.pi * template.outer_radius / (0.5 * h)))
    axial = int(np.ceil(template.rim_width / (0.5 * h))) + 1
    rim = [_drop_masked(c, d) if c.source_tag == "disc" else c
           for c in rim_reference_points(template, angular, axial)]

    grid = fuse_to_grid([spokes, *rim], h, fill_closed=True, blur_sigma=cfg.blur_sigma)
    mesh = marching_cubes(grid, cfg.iso)
    mesh = postprocess(mesh, cfg.smooth_iters, cfg.target_triangles, cfg.smooth_step)
    if not mesh.watertight:
        raise NotWatertight(f"reconstructed mesh has {mesh.boundary_edges} boundary and "
                            f"{mesh.nonmanifold_edges} non-manifold edges")
    return mesh.transformed(translation=-grid.translation)
