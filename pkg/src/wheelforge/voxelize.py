"""Solid voxelization of closed triangle meshes by parity ray casting.

Rays run along +z through every (x, y) voxel-centre column; a voxel is inside when
an odd number of surface crossings lies below its centre.
"""
from __future__ import annotations

import logging

import numpy as np

from .recon.mesh import TriMesh

log = logging.getLogger(__name__)

# fixed sub-voxel ray offsets keep rays off mesh edges lying on grid-aligned lines
_RAY_JITTER = (1.2345671e-7, 7.6543213e-8)


def grid_for_bounds(lo, hi, voxel_size: float, pad: int = 0):
    """Origin and dims of a grid whose voxels cover ``[lo, hi]``."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    dims = np.maximum(1, np.ceil((hi - lo) / voxel_size - 1e-9).astype(int)) + 2 * pad
    origin = lo - pad * voxel_size
    return origin, tuple(int(d) for d in dims)


def voxelize(mesh: TriMesh, origin, voxel_size: float, dims) -> np.ndarray:
    """Boolean occupancy ``(nx, ny, nz)``; voxel ``(i, j, k)`` is centred at
    ``origin + (i + 0.5, j + 0.5, k + 0.5) * voxel_size``."""
    nx, ny, nz = (int(d) for d in dims)
    ox, oy, oz = (float(o) for o in origin)
    h = float(voxel_size)
    jx, jy = _RAY_JITTER[0] * h, _RAY_JITTER[1] * h
    occ = np.zeros((nx, ny, nz), dtype=bool)
    if mesh.n_triangles == 0:
        return occ

    tri = mesh.vertices[mesh.triangles]
    ax, ay, az = tri[:, 0, 0], tri[:, 0, 1], tri[:, 0, 2]
    bx, by, bz = tri[:, 1, 0], tri[:, 1, 1], tri[:, 1, 2]
    cx, cy, cz = tri[:, 2, 0], tri[:, 2, 1], tri[:, 2, 2]
    det = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    keep = det != 0.0  # triangles parallel to the rays are never crossed

    def col_range(lo_c, hi_c, o, jit, n):
        first = np.ceil((lo_c - o - jit) / h - 0.5).astype(np.int64)
        last = np.floor((hi_c - o - jit) / h - 0.5).astype(np.int64)
        return np.maximum(first, 0), np.minimum(last, n - 1)

    i0, i1 = col_range(np.minimum(np.minimum(ax, bx), cx), np.maximum(np.maximum(ax, bx), cx), ox, jx, nx)
    j0, j1 = col_range(np.minimum(np.minimum(ay, by), cy), np.maximum(np.maximum(ay, by), cy), oy, jy, ny)
    ni = np.where(keep, np.maximum(i1 - i0 + 1, 0), 0)
    nj = np.where(keep, np.maximum(j1 - j0 + 1, 0), 0)
    count = ni * nj
    if count.sum() == 0:
        return occ

    t_idx = np.repeat(np.arange(len(tri)), count)
    local = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
    ii = i0[t_idx] + local // nj[t_idx]
    jj = j0[t_idx] + local % nj[t_idx]
    px = ox + (ii + 0.5) * h + jx
    py = oy + (jj + 0.5) * h + jy

    # barycentric coordinates of the ray foot in the projected triangle
    d = det[t_idx]
    w1 = ((px - ax[t_idx]) * (cy[t_idx] - ay[t_idx]) - (py - ay[t_idx]) * (cx[t_idx] - ax[t_idx])) / d
    w2 = ((bx[t_idx] - ax[t_idx]) * (py - ay[t_idx]) - (by[t_idx] - ay[t_idx]) * (px - ax[t_idx])) / d
    w0 = 1.0 - w1 - w2
    hit = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    z = w0 * az[t_idx] + w1 * bz[t_idx] + w2 * cz[t_idx]
    ii, jj, z = ii[hit], jj[hit], z[hit]

    col = ii * ny + jj
    k_first = np.clip(np.floor((z - oz) / h - 0.5).astype(np.int64) + 1, 0, nz)
    crossings = np.zeros((nx * ny, nz + 1), dtype=np.int32)
    np.add.at(crossings, (col, k_first), 1)
    totals = crossings.sum(axis=1)
    odd = totals % 2 == 1
    if odd.any():
        log.debug("voxelize: %d columns with odd crossing counts ignored", int(odd.sum()))
        crossings[odd] = 0
    inside = (np.cumsum(crossings[:, :nz], axis=1) % 2).astype(bool)
    return inside.reshape(nx, ny, nz)
