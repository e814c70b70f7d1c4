"""Frontal depth maps synthesized from wheel masks, plus centroid statistics.

Stands in for the image rendering and learned depth prediction stages: the depth of
every solid pixel follows from its radius and the rim template.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyList, EmptyMask
from .geometry import RimTemplate, pixel_coordinates


@dataclass
class DepthMap:
    values: np.ndarray  # mm, 0 on invalid pixels
    valid_mask: np.ndarray
    mm_per_pixel: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.values.shape != self.valid_mask.shape or self.values.ndim != 2:
            raise ValueError("values and valid_mask must be equal-shaped 2-D arrays")
        if not np.all(np.isfinite(self.values[self.valid_mask])):
            raise ValueError("non-finite depth on a valid pixel")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def synthesize_depth(mask_raster, template: RimTemplate | None = None,
                     bolt_phase: float = 0.0) -> DepthMap:
    """Depth of the frontal wheel surface for a square mask (nonzero = solid).

    Hub pixels sit at the hub face (depth 0), spoke pixels follow
    ``template.spoke_depth(r)``, and the rim ring shows the front flange. Bolt holes,
    the hub bore and void pixels are invalid.
    """
    mask = np.asarray(mask_raster)
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise ValueError("mask raster must be square")
    solid = mask > 127 if mask.dtype == np.uint8 else mask.astype(bool)
    if not solid.any():
        raise EmptyMask("mask has no solid pixels")
    template = template or RimTemplate()
    size = mask.shape[0]
    s = template.mm_per_pixel(size)
    px, py = pixel_coordinates(size)
    x_mm, y_mm = px * s, py * s
    r = np.hypot(x_mm, y_mm)

    depth = np.where(r <= template.disc_radius, 0.0, template.spoke_depth(r))
    depth = np.where(r >= template.face_radius, template.rim_front_depth, depth)

    valid = solid & (r >= template.bore_radius) & (r <= template.outer_radius)
    holes = np.zeros_like(valid)
    for cx, cy in template.bolt_centres(bolt_phase):
        holes |= np.hypot(x_mm - cx, y_mm - cy) < template.bolt_hole_diameter / 2
    valid &= ~holes
    if not valid.any():
        raise EmptyMask("no valid pixels after removing holes")
    return DepthMap(np.where(valid, depth, 0.0), valid, s)


def depth_centroid(d: DepthMap) -> tuple[float, float]:
    """Mean (column, row) of valid pixels."""
    rows, cols = np.nonzero(d.valid_mask)
    if rows.size == 0:
        raise EmptyMask("depth map has no valid pixels")
    return float(cols.mean()), float(rows.mean())


def centroid_statistics(maps) -> tuple[tuple[float, float], tuple[float, float]]:
    """Mean and population standard deviation of the per-map centroids."""
    maps = list(maps)
    if not maps:
        raise EmptyList("no depth maps given")
    c = np.array([depth_centroid(d) for d in maps])
    mean, std = c.mean(axis=0), c.std(axis=0)
    return (float(mean[0]), float(mean[1])), (float(std[0]), float(std[1]))


def write_depth_png(path, d: DepthMap) -> Path:
    """16-bit PNG (0 = invalid, valid depths scaled to 1..65535) plus a sidecar.

    The sidecar ``<name>.txt`` holds ``min_mm``, ``max_mm`` and ``mm_per_pixel``.
    """
    path = Path(path)
    v = d.values[d.valid_mask]
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    img = np.zeros(d.values.shape, dtype=np.uint16)
    img[d.valid_mask] = (1 + np.rint((v - lo) / span * 65534)).astype(np.uint16)
    Image.fromarray(img).save(path)
    sidecar = path.with_suffix(".txt")
    sidecar.write_text(f"min_mm={lo!r}\nmax_mm={hi!r}\nmm_per_pixel={d.mm_per_pixel!r}\n")
    return path


def read_depth_png(path) -> DepthMap:
    path = Path(path)
    meta = {}
    for line in path.with_suffix(".txt").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = float(v)
    img = np.asarray(Image.open(path)).astype(np.int64)
    valid = img > 0
    span = meta["max_mm"] - meta["min_mm"]
    span = span if span > 0 else 1.0
    values = np.where(valid, meta["min_mm"] + (img - 1) / 65534 * span, 0.0)
    return DepthMap(values, valid, meta["mm_per_pixel"])


def write_mask_png(path, raster) -> Path:
    path = Path(path)
    Image.fromarray(np.asarray(raster, dtype=np.uint8), mode="L").save(path)
    return path


def read_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"))
