"""Parametric wheel template and the image frame shared by raster, depth and mesh stages.

All lengths are millimetres. Depth is measured along the wheel axis away from the
camera, with zero at the hub face (the nearest surface).
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

DEFAULT_RASTER = 512


@dataclass(frozen=True)
class RimTemplate:
    rim_diameter: float = 482.6
    rim_width: float = 216.0
    offset: float = 45.0
    pcd: float = 114.3
    hub_bore: float = 66.0
    disc_diameter: float = 156.2
    n_bolts: int = 5
    bolt_hole_diameter: float = 15.0
    rim_thickness: float = 12.0
    flange_height: float = 6.0
    flange_thickness: float = 10.0
    spoke_rim_depth: float = 30.0
    spoke_thickness: float = 24.0
    frame_margin: float = 10.0

    def __post_init__(self):
        dims = asdict(self)
        for name, value in dims.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not self.hub_bore < self.disc_diameter < self.rim_diameter:
            raise ValueError("need hub_bore < disc_diameter < rim_diameter")
        if not self.hub_bore < self.pcd < self.disc_diameter:
            raise ValueError("pcd must lie between hub_bore and disc_diameter")
        if self.pcd / 2 - self.bolt_hole_diameter / 2 <= self.hub_bore / 2:
            raise ValueError("bolt holes overlap the hub bore")
        if self.face_radius <= self.disc_radius:
            raise ValueError("rim_thickness leaves no spoke annulus")

    # radii of the frontal layout
    @property
    def bore_radius(self) -> float:
        return self.hub_bore / 2

    @property
    def disc_radius(self) -> float:
        return self.disc_diameter / 2

    @property
    def rim_radius(self) -> float:
        return self.rim_diameter / 2

    @property
    def face_radius(self) -> float:
        """Inner barrel radius; the spoke design annulus ends here."""
        return self.rim_radius - self.rim_thickness

    @property
    def outer_radius(self) -> float:
        return self.rim_radius + self.flange_height

    # axial layout
    @property
    def rim_front_depth(self) -> float:
        return self.spoke_rim_depth

    @property
    def rim_back_depth(self) -> float:
        return self.spoke_rim_depth + self.rim_width

    @property
    def mount_depth(self) -> float:
        """Hub mounting face: ``offset`` outboard of the rim centre plane."""
        return self.rim_front_depth + self.rim_width / 2 - self.offset

    def spoke_depth(self, radius_mm) -> np.ndarray:
        """Linear profile from the hub face (depth 0) to the rim front."""
        r = np.asarray(radius_mm, dtype=float)
        t = (r - self.disc_radius) / (self.face_radius - self.disc_radius)
        return np.clip(t, 0.0, 1.0) * self.spoke_rim_depth

    def mm_per_pixel(self, raster_size: int = DEFAULT_RASTER) -> float:
        return 2.0 * (self.outer_radius + self.frame_margin) / raster_size

    def bolt_centres(self, phase: float = 0.0) -> np.ndarray:
        angles = phase + 2 * np.pi * np.arange(self.n_bolts) / self.n_bolts
        r = self.pcd / 2
        return np.stack([r * np.cos(angles), r * np.sin(angles)], axis=1)


def pixel_coordinates(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-centre offsets from the image centre, in pixels, x right and y up.

    Values are exact half-integers, so quarter-turn rotations map centres onto
    centres without rounding.
    """
    c = np.arange(size) + 0.5 - size / 2
    x = np.broadcast_to(c[None, :], (size, size))
    y = np.broadcast_to(-c[:, None], (size, size))
    return x, y
