"""Isosurface extraction and mesh clean-up."""
from __future__ import annotations

import logging

import fast_simplification
import numpy as np
import scipy.sparse as sp
from skimage import measure

from ..errors import DegenerateMesh, EmptyMesh, NoSurface
from .mesh import TriMesh
from .points import VoxelGrid

log = logging.getLogger(__name__)

MIN_TRIANGLE_AREA = 1e-6  # mm^2
MAX_VOLUME_CHANGE = 0.05


def marching_cubes(grid: VoxelGrid, iso: float = 0.5) -> TriMesh:
    """Triangulate the ``iso`` level set; vertices in the grid's coordinate frame.

    The region with values above ``iso`` is the solid; triangles face outward.
    """
    f = grid.field
    if not (f.min() < iso < f.max()):
        raise NoSurface(f"field range [{f.min():.3g}, {f.max():.3g}] does not straddle {iso}")
    h = grid.voxel_size
    verts, faces, _, _ = measure.marching_cubes(
        f, level=iso, spacing=(h, h, h), method="lewiner", allow_degenerate=False)
    verts = verts + np.asarray(grid.origin) + 0.5 * h
    mesh = TriMesh(verts, faces)
    if mesh.signed_volume() < 0:
        mesh = mesh.flipped()
    return mesh


def largest_component(mesh: TriMesh) -> TriMesh:
    labels = mesh.components()
    counts = np.bincount(labels)
    if len(counts) == 1:
        return mesh
    areas = np.bincount(labels, weights=mesh.triangle_areas())
    return mesh.submesh(labels == int(np.argmax(areas)))


def laplacian_smooth(mesh: TriMesh, iterations: int = 10, step: float = 0.5) -> TriMesh:
    """Uniform (umbrella) Laplacian smoothing."""
    if iterations <= 0:
        return mesh
    t = mesh.triangles
    n = len(mesh.vertices)
    i = np.concatenate([t[:, 0], t[:, 1], t[:, 2], t[:, 1], t[:, 2], t[:, 0]])
    j = np.concatenate([t[:, 1], t[:, 2], t[:, 0], t[:, 0], t[:, 1], t[:, 2]])
    A = sp.csr_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    A.data[:] = 1.0  # duplicate edges collapse to weight 1
    deg = np.asarray(A.sum(axis=1)).ravel()
    deg[deg == 0] = 1.0
    W = sp.diags(1.0 / deg) @ A
    v = mesh.vertices.copy()
    for _ in range(iterations):
        v = v + step * (W @ v - v)
    return TriMesh(v, t)


def remove_degenerate(mesh: TriMesh, min_area: float = MIN_TRIANGLE_AREA) -> TriMesh:
    keep = mesh.triangle_areas() >= min_area
    t = mesh.triangles
    keep &= (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 2] != t[:, 0])
    return mesh if keep.all() else mesh.submesh(keep)


def _simplify(mesh: TriMesh, target: int) -> TriMesh:
    v, f = fast_simplification.simplify(
        mesh.vertices, mesh.triangles.astype(np.int32), target_count=int(target))
    return TriMesh(v, f)


def decimate(mesh: TriMesh, target_triangles: int) -> TriMesh:
    """Quadric edge-collapse decimation down to at most ``target_triangles``.

    The collapse pass does not check the link condition and can occasionally
    pinch a closed surface into a non-manifold edge. For closed input, gentler
    multi-pass schedules are tried until one keeps the surface closed.
    """
    if mesh.n_triangles <= target_triangles:
        return mesh
    t = int(target_triangles)
    schedules = [[t], [2 * t, t], [4 * t, 2 * t, t], [8 * t, 4 * t, 2 * t, t]]
    closed = mesh.watertight
    out = mesh
    for schedule in schedules:
        out = mesh
        for target in schedule:
            if out.n_triangles > target:
                out = _simplify(out, target)
        # the collapse queue can stop a few faces short of the target
        if out.n_triangles > t:
            out = _simplify(out, int(0.98 * t))
        out = out.compact()
        if not closed or out.watertight:
            return out
        log.debug("decimation schedule %s left a non-manifold surface", schedule)
    return out


def postprocess(mesh: TriMesh, smooth_iters: int = 10, target_triangles: int = 50_000,
                smooth_step: float = 0.5) -> TriMesh:
    """Keep the largest component, smooth, decimate and drop degenerate faces.

    Raises :class:`DegenerateMesh` when a watertight input stops being watertight
    or when smoothing plus decimation changes the enclosed volume by more than 5%.
    """
    if mesh.n_triangles == 0:
        raise EmptyMesh("mesh has no triangles")
    was_watertight = mesh.watertight
    out = largest_component(mesh)
    v0 = out.signed_volume()
    out = laplacian_smooth(out, smooth_iters, smooth_step)
    out = decimate(out, target_triangles)
    out = remove_degenerate(out)
    if was_watertight and not out.watertight:
        raise DegenerateMesh(f"post-processing left {out.boundary_edges} boundary and "
                             f"{out.nonmanifold_edges} non-manifold edges")
    if out.signed_volume() < 0:
        out = out.flipped()
    if was_watertight and v0 != 0:
        change = abs(abs(out.signed_volume()) - abs(v0)) / abs(v0)
        if change > MAX_VOLUME_CHANGE:
            raise DegenerateMesh(f"volume changed by {100 * change:.1f}%")
    return out
