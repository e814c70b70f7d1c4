"""Indexed triangle meshes: topology checks, volume, components and binary STL."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

_STL_RECORD = np.dtype([
    ("normal", "<f4", (3,)),
    ("vertices", "<f4", (3, 3)),
    ("attr", "<u2"),
])


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite vertex coordinates")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _edges(self) -> tuple[np.ndarray, np.ndarray]:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0, return_counts=True)

    @property
    def n_edges(self) -> int:
        return len(self._edges[0])

    @property
    def boundary_edges(self) -> int:
        return int(np.sum(self._edges[1] == 1))

    @property
    def nonmanifold_edges(self) -> int:
        return int(np.sum(self._edges[1] > 2))

    @property
    def watertight(self) -> bool:
        """Every edge is shared by exactly two triangles."""
        return self.n_triangles > 0 and bool(np.all(self._edges[1] == 2))

    @property
    def euler_characteristic(self) -> int:
        n_used = len(np.unique(self.triangles))
        return int(n_used - self.n_edges + self.n_triangles)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def signed_volume(self) -> float:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def components(self) -> np.ndarray:
        """Component label per triangle (triangles sharing a vertex are linked)."""
        n_t = self.n_triangles
        rows = np.repeat(np.arange(n_t), 3)
        adj = sp.csr_matrix((np.ones(3 * n_t), (rows, self.triangles.ravel())),
                            shape=(n_t, len(self.vertices)))
        # bipartite triangle-vertex graph; labels of the triangle half
        graph = sp.bmat([[None, adj], [adj.T, None]], format="csr")
        _, labels = connected_components(graph, directed=False)
        return labels[:n_t]

    def submesh(self, triangle_mask) -> "TriMesh":
        tris = self.triangles[np.asarray(triangle_mask)]
        used, inverse = np.unique(tris, return_inverse=True)
        return TriMesh(self.vertices[used], inverse.reshape(-1, 3))

    def compact(self) -> "TriMesh":
        """Drop unreferenced vertices."""
        return self.submesh(np.ones(self.n_triangles, dtype=bool))

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles[:, ::-1])

    def transformed(self, rotation=None, translation=None, scale: float = 1.0) -> "TriMesh":
        v = self.vertices * scale
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + np.asarray(translation)
        return TriMesh(v, self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def write_stl(path, mesh: TriMesh, header: bytes = b"wheelforge binary STL") -> Path:
    """Little-endian binary STL: 80-byte header, uint32 count, 50 bytes per facet."""
    path = Path(path)
    tri = mesh.vertices[mesh.triangles]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)
    rec = np.zeros(len(tri), dtype=_STL_RECORD)
    rec["normal"] = n
    rec["vertices"] = tri
    with open(path, "wb") as fh:
        fh.write(header[:80].ljust(80, b"\0"))
        fh.write(np.uint32(len(tri)).astype("<u4").tobytes())
        fh.write(rec.tobytes())
    return path


def read_stl(path) -> TriMesh:
    """Read a binary STL, merging bit-identical vertices."""
    data = Path(path).read_bytes()
    count = int(np.frombuffer(data, dtype="<u4", count=1, offset=80)[0])
    if len(data) != 84 + 50 * count:
        raise ValueError(f"{path}: size does not match {count} facets")
    rec = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    pts = rec["vertices"].reshape(-1, 3).astype(float)
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    return TriMesh(uniq, inverse.reshape(-1, 3))


def box_mesh(lo, hi) -> TriMesh:
    """Outward-oriented axis-aligned box, 12 triangles."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    corners = np.array([[(hi if (k >> a) & 1 else lo)[a] for a in range(3)] for k in range(8)])
    faces = [
        (0, 2, 3, 1), (4, 5, 7, 6),  # z-, z+
        (0, 1, 5, 4), (2, 6, 7, 3),  # y-, y+
        (0, 4, 6, 2), (1, 3, 7, 5),  # x-, x+
    ]
    tris = []
    for a, b, c, d in faces:
        tris += [(a, b, c), (a, c, d)]
    return TriMesh(corners, np.array(tris))


def icosphere(radius: float = 1.0, subdivisions: int = 3, centre=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5**0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    for _ in range(subdivisions):
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        edges, inv = np.unique(e, axis=0, return_inverse=True)
        mids = len(v) + inv.reshape(3, -1).T  # midpoint ids of edges 01, 12, 20
        v = np.vstack([v, 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])])
        a, b, c = f.T
        m01, m12, m20 = mids.T
        f = np.concatenate([
            np.stack([a, m01, m20], 1), np.stack([b, m12, m01], 1),
            np.stack([c, m20, m12], 1), np.stack([m01, m12, m20], 1),
        ])
    v = v / np.linalg.norm(v, axis=1, keepdims=True) * radius + np.asarray(centre)
    return TriMesh(v, f)
