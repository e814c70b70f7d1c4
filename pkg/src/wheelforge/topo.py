"""Compliance-plus-similarity topology optimization of one wheel segment.

The segment is an annular sector mapped onto the regular grid of
:mod:`wheelforge.fem2d`: the grid x axis runs along the angle, y along the radius
(hub at ``ey = 0``, rim at ``ey = ny - 1``). Replicating the segment ``n_seg``
times around the axis gives the full wheel.
"""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import fem2d
from .errors import BisectionFailure, DimensionMismatch, EmptyGrid, InvalidLoadCase, WheelforgeError
from .geometry import DEFAULT_RASTER, RimTemplate, pixel_coordinates

log = logging.getLogger(__name__)

VOLUME_TOL = 1e-4


@dataclass(frozen=True)
class TopoParams:
    lambda_sim: float = 0.0
    volume_fraction: float = 0.5
    normal_shear_ratio: float = 1.0
    n_seg: int = 5
    filter_radius: float = 1.5
    max_iters: int = 200
    move_limit: float = 0.2
    change_tol: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.volume_fraction < 1.0:
            raise ValueError("volume_fraction must lie in (0, 1)")
        if self.lambda_sim < 0:
            raise ValueError("lambda_sim must be >= 0")
        if self.n_seg not in (4, 5, 6):
            raise ValueError("n_seg must be 4, 5 or 6")
        if self.filter_radius < 1.0:
            raise ValueError("filter_radius must be >= 1")
        if self.max_iters < 1 or not 0.0 < self.move_limit <= 1.0:
            raise ValueError("invalid max_iters or move_limit")


@dataclass(frozen=True)
class ReferenceDesign:
    densities: np.ndarray
    source_id: str


@dataclass
class ConvergenceTrace:
    objective: list[float] = field(default_factory=list)
    compliance: list[float] = field(default_factory=list)
    change: list[float] = field(default_factory=list)
    volume: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.change)


@dataclass
class DensityField:
    segment: np.ndarray
    nx: int
    ny: int
    n_seg: int
    params: TopoParams | None = None
    source_id: str = ""

    def grid(self) -> np.ndarray:
        """Densities as an ``(nx, ny)`` array (angular, radial)."""
        return self.segment.reshape(self.nx, self.ny)

    def wheel_raster(self, raster_size: int = DEFAULT_RASTER,
                     template: RimTemplate | None = None, phase: float = 0.0) -> np.ndarray:
        return replicate_segment(self.grid(), self.n_seg, raster_size, template, phase)


def build_filter(nx: int, ny: int, radius: float) -> tuple[sp.csr_matrix, np.ndarray]:
    """Cone-weight neighbourhood matrix ``H`` and its row sums."""
    reach = int(np.ceil(radius)) - 1
    rows, cols, vals = [], [], []
    ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ex, ey = ex.ravel(), ey.ravel()
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            w = radius - np.hypot(dx, dy)
            if w <= 0:
                continue
            jx, jy = ex + dx, ey + dy
            ok = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
            rows.append((ex * ny + ey)[ok])
            cols.append((jx * ny + jy)[ok])
            vals.append(np.full(ok.sum(), w))
    n = nx * ny
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return H, np.asarray(H.sum(axis=1)).ravel()


def filter_sensitivities(H, Hs, x, dc) -> np.ndarray:
    return (H @ (x * dc)) / Hs / np.maximum(1e-3, x)


def similarity_subgradient(x, x_r, lambda_sim: float) -> np.ndarray:
    """Subgradient of ``lambda * ||x_r - x||_1`` with ``sign(0) = 0``."""
    x, x_r = np.asarray(x, dtype=float), np.asarray(x_r, dtype=float)
    if x.shape != x_r.shape:
        raise DimensionMismatch("x and x_r differ in shape")
    return lambda_sim * np.sign(x - x_r)


def _branch(a, denom, lo, hi):
    # minimiser of a / y + denom * y on [lo, hi]; unbounded below when denom <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(denom > 0, np.sqrt(a / np.where(denom > 0, denom, 1.0)), np.inf)
    return np.clip(y, lo, hi)


def _oc_candidate(anchor, delta, a, dv, lo, hi, x_r, lam):
    # multiplier = anchor + delta; kinks sit at anchor = +-lam, so keeping delta
    # separate preserves precision when the multiplier is close to a kink
    base = dv * anchor
    upper = _branch(a, dv * delta + (base - lam), lo, hi)
    if x_r is None or lam == 0.0:
        return upper
    lower = _branch(a, dv * delta + (base + lam), lo, hi)
    # the L1 kink at x_r is a valid resting point between the one-sided optima
    return np.clip(x_r, lower, upper)


def oc_update(x, sensitivities, volume_sensitivities, params: TopoParams,
              reference=None, lambda_sim: float | None = None) -> np.ndarray:
    """Optimality-criteria step with move limits and an exact volume multiplier.

    ``sensitivities`` are the (filtered) compliance derivatives. The similarity
    term is handled through its one-sided slopes ``+-lambda`` around ``reference``
    rather than a single subgradient, so iterates can settle exactly on the
    reference instead of chattering across it. The multiplier may be negative
    (the volume constraint is an equality) and is bisected until the weighted
    mean density is within ``1e-7`` of the target.
    """
    x = np.asarray(x, dtype=float)
    dc = np.asarray(sensitivities, dtype=float)
    dv = np.asarray(volume_sensitivities, dtype=float)
    if not (x.shape == dc.shape == dv.shape):
        raise DimensionMismatch("x, sensitivities and volume_sensitivities differ in shape")
    if dv.min() <= 0:
        raise ValueError("volume sensitivities must be positive")
    x_r = None if reference is None else np.asarray(reference, dtype=float)
    if x_r is not None and x_r.shape != x.shape:
        raise DimensionMismatch("reference differs in shape from x")
    lam = params.lambda_sim if lambda_sim is None else float(lambda_sim)
    if x_r is None:
        lam = 0.0
    target = params.volume_fraction
    a = np.maximum(0.0, -dc) * x**2
    lo = np.maximum(0.0, x - params.move_limit)
    hi = np.minimum(1.0, x + params.move_limit)
    wsum = dv.sum()
    kink = lam / dv.mean()

    def candidate(anchor, delta):
        return _oc_candidate(anchor, delta, a, dv, lo, hi, x_r, lam)

    def volume(anchor, delta):
        return float(dv @ candidate(anchor, delta)) / wsum

    # volume is nonincreasing in the multiplier; locate the piece holding the root
    breaks = sorted({-kink, 0.0, kink})
    vols = [volume(b, 0.0) for b in breaks]
    if target > vols[0] + VOLUME_TOL:
        raise BisectionFailure(f"volume target {target} above reachable {vols[0]:.6f}")
    if target >= vols[0]:
        # left of the first kink every element already sits at its upper bound
        anchor, d_lo, d_hi = breaks[0], 0.0, 0.0
    elif target >= vols[-1]:
        k = next(i for i in range(len(breaks) - 1) if vols[i + 1] <= target)
        left, right = breaks[k], breaks[k + 1]
        if left < 0.0:
            anchor, d_lo, d_hi = left, 0.0, right - left
        else:
            anchor, d_lo, d_hi = right, left - right, 0.0
    else:
        anchor, d_lo = breaks[-1], 0.0
        d_hi = max(1.0, float(np.max(a / dv)))
        for _ in range(400):
            if volume(anchor, d_hi) <= target:
                break
            d_hi *= 2.0
        else:
            raise BisectionFailure(f"volume target {target} below reachable range")
    for _ in range(300):
        if d_hi - d_lo <= 1e-15 * max(1.0, abs(d_lo), abs(d_hi)):
            break
        delta = 0.5 * (d_lo + d_hi)
        v = volume(anchor, delta)
        if abs(v - target) <= 1e-9:
            d_lo = d_hi = delta
            break
        if v > target:
            d_lo = delta
        else:
            d_hi = delta
    x_lo, x_hi = candidate(anchor, d_lo), candidate(anchor, d_hi)
    v_lo, v_hi = float(dv @ x_lo) / wsum, float(dv @ x_hi) / wsum
    # elements with zero sensitivity jump between bounds at a kink; any mix of
    # the two bracketing layouts is optimal there, so blend to hit the target
    t = 0.0 if v_lo == v_hi else np.clip((target - v_hi) / (v_lo - v_hi), 0.0, 1.0)
    x_next = x_hi + t * (x_lo - x_hi)
    err = abs(float(dv @ x_next) / wsum - target)
    if err > VOLUME_TOL:
        raise BisectionFailure(f"best multiplier leaves volume error {err:.2e}")
    return x_next


def optimize_segment(params: TopoParams, reference: ReferenceDesign,
                     model: fem2d.GridModel2D, loads: fem2d.LoadCase2D
                     ) -> tuple[DensityField, ConvergenceTrace]:
    x_r = np.asarray(reference.densities, dtype=float).ravel()
    if x_r.size != model.n_elements:
        raise DimensionMismatch(f"reference has {x_r.size} entries, model {model.n_elements}")
    if not any(v != 0.0 for v in loads.nodal_forces.values()):
        raise InvalidLoadCase("zero external force")
    lam = params.lambda_sim
    H, Hs = build_filter(model.nx, model.ny, params.filter_radius)
    dv = np.ones(model.n_elements)
    x = np.full(model.n_elements, params.volume_fraction)
    trace = ConvergenceTrace()

    def evaluate(x):
        U = fem2d.assemble_and_solve(model, x, loads)
        ce = fem2d.element_compliances(model, x, U)
        c = float(np.sum(model.stiffness_scale(x) * ce))
        dc = -model.stiffness_scale_derivative(x) * ce
        return c, dc

    for it in range(params.max_iters):
        c, dc = evaluate(x)
        trace.compliance.append(c)
        trace.objective.append(c + lam * float(np.abs(x_r - x).sum()))
        trace.volume.append(float(x.mean()))
        dc = filter_sensitivities(H, Hs, x, dc)
        x_new = oc_update(x, dc, dv, params, reference=x_r)
        change = float(np.abs(x_new - x).max())
        trace.change.append(change)
        x = x_new
        if change < params.change_tol:
            trace.converged = True
            break
    c, _ = evaluate(x)
    trace.compliance.append(c)
    trace.objective.append(c + lam * float(np.abs(x_r - x).sum()))
    trace.volume.append(float(x.mean()))
    if not trace.converged:
        log.info("segment %s hit max_iters=%d (change %.3g)", reference.source_id,
                 params.max_iters, trace.change[-1])
    design = DensityField(x, model.nx, model.ny, params.n_seg, params, reference.source_id)
    return design, trace


def polar_raster(segment: np.ndarray, n_seg: int) -> np.ndarray:
    """Full wheel in polar index space, ``(n_radial, n_seg * n_angular)``."""
    seg = np.asarray(segment)
    return np.tile(seg.T, (1, n_seg))


def _angular_fraction(x, y, n_seg, phase):
    """Position inside the segment as a fraction in [0, 1)."""
    seg_angle = 2 * np.pi / n_seg
    if n_seg == 4:
        # fold into the first quadrant with exact quarter turns
        q1 = (x <= 0) & (y > 0)
        q2 = (x < 0) & (y <= 0)
        q3 = (x >= 0) & (y < 0)
        fx = np.where(q1, y, np.where(q2, -x, np.where(q3, -y, x)))
        fy = np.where(q1, -x, np.where(q2, -y, np.where(q3, x, y)))
        x, y = fx, fy
    theta = np.mod(np.arctan2(y, x) - phase, seg_angle)
    return np.minimum(theta / seg_angle, np.nextafter(1.0, 0.0))


def replicate_segment(segment, n_seg: int, raster_size: int = DEFAULT_RASTER,
                      template: RimTemplate | None = None, phase: float = 0.0,
                      threshold: float | None = 0.5) -> np.ndarray:
    """Rasterize the wheel built from ``n_seg`` copies of ``segment``.

    ``segment`` is an ``(n_angular, n_radial)`` density array. Returns a uint8
    image (0 void, 255 solid) with the rim ring and hub forced solid and the hub
    bore void. With ``threshold=None`` the spoke annulus keeps gray levels.
    """
    if n_seg not in (4, 5, 6):
        raise ValueError("n_seg must be 4, 5 or 6")
    if raster_size < 128:
        raise ValueError("raster_size must be >= 128")
    seg = np.asarray(segment, dtype=float)
    if seg.ndim != 2:
        raise DimensionMismatch("segment must be a 2-D (angular, radial) array")
    template = template or RimTemplate()
    n_ang, n_rad = seg.shape
    s = template.mm_per_pixel(raster_size)
    px, py = pixel_coordinates(raster_size)
    r = np.hypot(px, py) * s

    u = _angular_fraction(px, py, n_seg, phase)
    ex = np.minimum((u * n_ang).astype(np.int64), n_ang - 1)
    t = (r - template.disc_radius) / (template.face_radius - template.disc_radius)
    ey = np.clip((t * n_rad).astype(np.int64), 0, n_rad - 1)
    dens = seg[ex, ey]
    spokes = (dens >= threshold) * 255.0 if threshold is not None else np.rint(255.0 * dens)

    out = np.zeros((raster_size, raster_size))
    annulus = (r > template.disc_radius) & (r < template.face_radius)
    out[annulus] = spokes[annulus]
    out[(r >= template.bore_radius) & (r <= template.disc_radius)] = 255.0
    out[(r >= template.face_radius) & (r <= template.outer_radius)] = 255.0
    return out.astype(np.uint8)


def reference_designs(nx: int, ny: int, count: int, seed: int = 0) -> list[tuple[ReferenceDesign, int]]:
    """Procedural spoke layouts standing in for market reference wheels.

    Returns ``(design, n_seg)`` pairs; each segment holds one or two spokes that
    may twist, taper or split into a Y.
    """
    rng = np.random.default_rng(seed)
    u = (np.arange(nx) + 0.5) / nx
    v = (np.arange(ny) + 0.5) / ny
    U, V = np.meshgrid(u, v, indexing="ij")
    out = []
    for k in range(count):
        n_sub = int(rng.integers(1, 3))
        width = rng.uniform(0.12, 0.3) / n_sub
        twist = rng.uniform(-0.35, 0.35)
        taper = rng.uniform(-0.6, 0.6)
        split_at = rng.uniform(0.35, 0.8) if rng.random() < 0.4 else None
        spread = rng.uniform(0.05, 0.15)
        w = width * (1.0 + taper * (V - 0.5))
        x = np.zeros_like(U)
        for s in range(n_sub):
            centre = (s + 0.5) / n_sub + twist * V
            arms = [centre] if split_at is None else [
                np.where(V > split_at, centre - spread * (V - split_at) / (1 - split_at), centre),
                np.where(V > split_at, centre + spread * (V - split_at) / (1 - split_at), centre),
            ]
            for c in arms:
                d = np.abs(np.mod(U - c + 0.5, 1.0) - 0.5)
                x = np.maximum(x, (d <= w / 2).astype(float))
        n_seg = (4, 5, 6)[k % 3]
        out.append((ReferenceDesign(x.ravel(), f"ref{k:03d}"), n_seg))
    return out


def param_grid(lambdas, volume_fractions, normal_shear_ratios=(1.0,), n_segs=(5,),
               **common) -> list[TopoParams]:
    lists = [list(lambdas), list(volume_fractions), list(normal_shear_ratios), list(n_segs)]
    if any(len(l) == 0 for l in lists):
        raise EmptyGrid("every parameter list must be nonempty")
    return [TopoParams(lambda_sim=l, volume_fraction=f, normal_shear_ratio=r, n_seg=n, **common)
            for l, f, r, n in itertools.product(*lists)]


@dataclass
class SweepItem:
    reference_id: str
    params: TopoParams
    design: DensityField | None = None
    trace: ConvergenceTrace | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.design is not None


def _run_item(args) -> SweepItem:
    params, reference, model = args
    try:
        loads = fem2d.segment_load(model, params.normal_shear_ratio)
        design, trace = optimize_segment(params, reference, model, loads)
        return SweepItem(reference.source_id, params, design, trace)
    except WheelforgeError as exc:
        return SweepItem(reference.source_id, params, error=f"{type(exc).__name__}: {exc}")


def sweep_designs(grid: list[TopoParams], references: list[ReferenceDesign],
                  model: fem2d.GridModel2D, workers: int = 1) -> list[SweepItem]:
    """Optimize every reference under every parameter set, references outermost."""
    if not grid:
        raise EmptyGrid("empty parameter grid")
    if not references:
        raise EmptyGrid("no reference designs")
    jobs = [(p, ref, model) for ref in references for p in grid]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_item, jobs))
    return [_run_item(j) for j in jobs]
