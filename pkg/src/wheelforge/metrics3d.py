"""Depth-error, volumetric IoU and Chamfer metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .depthsynth import DepthMap
from .errors import DimensionMismatch, EmptyMesh, EmptyVolume, NonPositiveGroundTruth, NoOverlap, NotWatertight
from .recon.mesh import TriMesh
from .voxelize import grid_for_bounds, voxelize


@dataclass(frozen=True)
class DepthErrorReport:
    rmse: float
    absrel: float
    delta_125: float
    valid_pixels: int


@dataclass(frozen=True)
class MeshSimilarityReport:
    iou: float
    chamfer: float
    voxel_size: float
    samples_per_mesh: int


def depth_errors(pred: DepthMap, gt: DepthMap) -> DepthErrorReport:
    """RMSE, AbsRel and the delta < 1.25 ratio over pixels valid in both maps."""
    if pred.values.shape != gt.values.shape:
        raise DimensionMismatch(f"shapes {pred.values.shape} and {gt.values.shape} differ")
    both = pred.valid_mask & gt.valid_mask
    m = int(both.sum())
    if m == 0:
        raise NoOverlap("no pixel is valid in both maps")
    p, g = pred.values[both], gt.values[both]
    if np.any(g <= 0):
        raise NonPositiveGroundTruth("ground-truth depth must be positive on valid pixels")
    diff = p - g
    rmse = float(np.sqrt(np.mean(diff**2)))
    absrel = float(np.mean(np.abs(diff) / g))
    # non-positive predictions never fall inside the threshold
    safe = np.where(p > 0, p, 1.0)
    ratio = np.where(p > 0, np.maximum(safe / g, g / safe), np.inf)
    delta = float(np.mean(ratio < 1.25))
    return DepthErrorReport(rmse, absrel, delta, m)


def shared_grid(a: TriMesh, b: TriMesh, voxel_size: float, pad: int = 1):
    lo = np.minimum(a.bounds()[0], b.bounds()[0])
    hi = np.maximum(a.bounds()[1], b.bounds()[1])
    return grid_for_bounds(lo, hi, voxel_size, pad)


def mesh_iou(pred: TriMesh, gt: TriMesh, voxel_size: float = 2.0) -> float:
    """Voxel IoU of two closed meshes on one grid covering both."""
    for name, m in (("pred", pred), ("gt", gt)):
        if not m.watertight:
            raise NotWatertight(f"{name} mesh is not watertight")
    origin, dims = shared_grid(pred, gt, voxel_size)
    va = voxelize(pred, origin, voxel_size, dims)
    vb = voxelize(gt, origin, voxel_size, dims)
    union = int(np.count_nonzero(va | vb))
    if union == 0:
        raise EmptyVolume("neither mesh occupies a voxel at this resolution")
    return int(np.count_nonzero(va & vb)) / union


def sample_surface(mesh: TriMesh, n_points: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the surface, ``(n_points, 3)``."""
    areas = mesh.triangle_areas()
    total = areas.sum()
    if mesh.n_triangles == 0 or total <= 0:
        raise EmptyMesh("mesh has no surface area")
    tri = rng.choice(mesh.n_triangles, size=n_points, p=areas / total)
    u, v = rng.random(n_points), rng.random(n_points)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, i]] for i in range(3))
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def chamfer_points(p: np.ndarray, q: np.ndarray) -> float:
    """Symmetric mean of squared nearest-neighbour distances (exact search)."""
    dpq, _ = cKDTree(q).query(p, k=1)
    dqp, _ = cKDTree(p).query(q, k=1)
    return float(np.mean(dpq**2) + np.mean(dqp**2))


def chamfer(pred: TriMesh, gt: TriMesh, n_points: int = 10_000, seed: int = 0) -> float:
    """Chamfer distance in squared mesh units.

    Both meshes are sampled with generators seeded identically, so the value is
    symmetric in its arguments.
    """
    if n_points < 100:
        raise ValueError("n_points must be at least 100")
    p = sample_surface(pred, n_points, np.random.default_rng(seed))
    q = sample_surface(gt, n_points, np.random.default_rng(seed))
    return chamfer_points(p, q)


def compare_meshes(pred: TriMesh, gt: TriMesh, voxel_size: float = 2.0,
                   n_points: int = 10_000, seed: int = 0) -> MeshSimilarityReport:
    return MeshSimilarityReport(mesh_iou(pred, gt, voxel_size), chamfer(pred, gt, n_points, seed),
                                voxel_size, n_points)
