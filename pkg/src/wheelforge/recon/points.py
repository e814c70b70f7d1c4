"""Point clouds from depth maps and the rim template, and their fusion onto a grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..depthsynth import DepthMap
from ..errors import EmptyMask
from ..geometry import RimTemplate

TAGS = ("spoke", "rim_outer", "rim_inner", "disc")


@dataclass
class PointCloud:
    points: np.ndarray
    source_tag: str

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.source_tag not in TAGS:
            raise ValueError(f"unknown source tag {self.source_tag!r}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite point coordinates")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class VoxelGrid:
    field: np.ndarray
    voxel_size: float
    origin: np.ndarray
    translation: np.ndarray  # added to the input points before gridding

    def __post_init__(self):
        if self.field.ndim != 3 or min(self.field.shape) < 2:
            raise ValueError("grid needs at least 2 voxels per axis")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.field.shape

    def centres(self) -> np.ndarray:
        """World (translated-frame) coordinates of every voxel centre, ``(*dims, 3)``."""
        axes = [self.origin[a] + (np.arange(n) + 0.5) * self.voxel_size for a, n in enumerate(self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def spoke_to_points(d: DepthMap, max_radius_mm: float | None = None,
                    template: RimTemplate | None = None) -> PointCloud:
    """Back-project valid pixels inside the wheel face to ``(x, y, depth)`` in mm.

    Pixels beyond ``max_radius_mm`` (default: the template's inner barrel radius)
    belong to the rim, which is rebuilt from the template instead.
    """
    if not d.valid_mask.any():
        raise EmptyMask("depth map has no valid pixels")
    if max_radius_mm is None:
        max_radius_mm = (template or RimTemplate()).face_radius
    rows, cols = np.nonzero(d.valid_mask)
    s = d.mm_per_pixel
    x = (cols + 0.5 - d.width / 2) * s
    y = (d.height / 2 - rows - 0.5) * s
    keep = np.hypot(x, y) <= max_radius_mm
    if not keep.any():
        raise EmptyMask("no valid pixels inside the wheel face")
    return PointCloud(np.stack([x[keep], y[keep], d.values[rows[keep], cols[keep]]], axis=1), "spoke")


def rim_profile(template: RimTemplate) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Closed (r, z) cross-section of the rim as tagged polyline segments."""
    R, Ri, Ro = template.rim_radius, template.face_radius, template.outer_radius
    zf, zb, ft = template.rim_front_depth, template.rim_back_depth, template.flange_thickness
    P = lambda r, z: np.array([r, z], dtype=float)  # noqa: E731
    return [
        ("rim_outer", P(Ri, zf), P(Ro, zf)),           # front face
        ("rim_outer", P(Ro, zf), P(Ro, zf + ft)),      # front flange rim
        ("rim_outer", P(Ro, zf + ft), P(R, zf + ft)),  # front flange back
        ("rim_outer", P(R, zf + ft), P(R, zb - ft)),   # outer barrel
        ("rim_outer", P(R, zb - ft), P(Ro, zb - ft)),
        ("rim_outer", P(Ro, zb - ft), P(Ro, zb)),
        ("rim_outer", P(Ro, zb), P(Ri, zb)),           # back face
        ("rim_inner", P(Ri, zb), P(Ri, zf)),           # inner barrel
    ]


def rim_reference_points(template: RimTemplate, angular_samples: int, axial_samples: int,
                         ) -> list[PointCloud]:
    """Surface-of-revolution samples of the rim and the centre-disc rear face.

    ``axial_samples`` points span the barrel length; other profile segments are
    sampled at the same spacing. Returns clouds tagged ``rim_outer``, ``rim_inner``
    and ``disc``.
    """
    if angular_samples < 4 or axial_samples < 2:
        raise ValueError("need angular_samples >= 4 and axial_samples >= 2")
    angles = 2 * np.pi * np.arange(angular_samples) / angular_samples
    cos, sin = np.cos(angles), np.sin(angles)
    step = template.rim_width / (axial_samples - 1)
    by_tag: dict[str, list[np.ndarray]] = {"rim_outer": [], "rim_inner": [], "disc": []}
    for tag, p0, p1 in rim_profile(template):
        n = max(2, int(np.ceil(np.linalg.norm(p1 - p0) / step)) + 1)
        t = np.linspace(0.0, 1.0, n)
        rz = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
        r, z = rz[:, 0:1], rz[:, 1:2]
        ring = np.stack([r * cos[None, :], r * sin[None, :], np.broadcast_to(z, (n, angular_samples))], axis=-1)
        by_tag[tag].append(ring.reshape(-1, 3))

    radial = np.arange(template.bore_radius, template.disc_radius + 1e-9, step)
    if radial[-1] < template.disc_radius:
        radial = np.append(radial, template.disc_radius)
    disc = np.stack([
        radial[:, None] * cos[None, :], radial[:, None] * sin[None, :],
        np.full((len(radial), angular_samples), template.mount_depth),
    ], axis=-1)
    by_tag["disc"].append(disc.reshape(-1, 3))
    return [PointCloud(np.concatenate(v), tag) for tag, v in by_tag.items()]


def fuse_to_grid(clouds, voxel_size: float, fill_closed: bool = False,
                 blur_sigma: float = 0.5, pad: int = 3) -> VoxelGrid:
    """Splat all points into a voxel grid centred on their combined centroid.

    Each point marks its voxel; with ``fill_closed`` the cavities enclosed by the
    marked voxels are filled (closed surfaces become solids). The occupancy is
    smoothed with a Gaussian of ``blur_sigma`` voxels, giving values in [0, 1].
    """
    pts = np.concatenate([c.points for c in clouds]) if clouds else np.empty((0, 3))
    if len(pts) == 0:
        raise ValueError("combined point cloud is empty")
    h = float(voxel_size)
    translation = -pts.mean(axis=0)
    local = pts + translation
    # odd dims with the centroid at the centre of the middle voxel
    half_cells = np.ceil(np.abs(local).max(axis=0) / h - 0.5).astype(int) + pad
    dims = 2 * half_cells + 1
    origin = -(half_cells + 0.5) * h
    idx = np.floor((local - origin) / h).astype(np.int64)
    idx = np.clip(idx, 0, dims - 1)
    occ = np.zeros(tuple(dims), dtype=bool)
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    if fill_closed:
        occ = ndimage.binary_fill_holes(occ)
    field = occ.astype(float)
    if blur_sigma > 0:
        field = np.clip(ndimage.gaussian_filter(field, blur_sigma, mode="constant"), 0.0, 1.0)
    return VoxelGrid(field, h, origin.astype(float), translation)
