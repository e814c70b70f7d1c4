"""Free-free modal analysis of voxelized wheels and the normalized performance score.

Meshes are in millimetres and material constants in SI; element matrices are built
in metres so frequencies come out in Hz and mass in kg.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.linalg import eigh
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, splu

from .errors import DegenerateRangeWarning, Disconnected, EigenNonConvergence, NotWatertight
from .recon.mesh import TriMesh
from .voxelize import grid_for_bounds, voxelize

log = logging.getLogger(__name__)

MM = 1e-3
DEFAULT_SHIFT = (2 * np.pi * 10.0) ** 2
# components smaller than this volume fraction are dropped as reconstruction debris
DEBRIS_FRACTION = 0.01


@dataclass(frozen=True)
class Material:
    density: float = 2680.0
    youngs_modulus: float = 72e9
    poisson_ratio: float = 0.33
    yield_strength: float = 175e6
    ultimate_strength: float = 250e6

    def __post_init__(self):
        for name in ("density", "youngs_modulus", "yield_strength", "ultimate_strength"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in (0, 0.5)")


@dataclass
class HexModel:
    """Voxel hexahedra on a regular grid; ``occupancy[i, j, k]`` marks elements."""
    occupancy: np.ndarray
    origin: np.ndarray  # mm
    elem_size: float  # mm

    @property
    def n_elements(self) -> int:
        return int(self.occupancy.sum())

    def connectivity(self) -> tuple[np.ndarray, np.ndarray]:
        """Element-to-node table ``(n_e, 8)`` and node coordinates in mm.

        Local node order: the bottom face (k) counter-clockwise from the lowest
        corner, then the top face (k+1) in the same order.
        """
        nx, ny, nz = self.occupancy.shape
        ei, ej, ek = np.nonzero(self.occupancy)
        corners = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                            (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)])
        gi = ei[:, None] + corners[:, 0]
        gj = ej[:, None] + corners[:, 1]
        gk = ek[:, None] + corners[:, 2]
        flat = (gi * (ny + 1) + gj) * (nz + 1) + gk
        used, enodes = np.unique(flat, return_inverse=True)
        enodes = enodes.reshape(-1, 8)
        k = used % (nz + 1)
        j = (used // (nz + 1)) % (ny + 1)
        i = used // ((nz + 1) * (ny + 1))
        coords = np.asarray(self.origin) + self.elem_size * np.column_stack([i, j, k])
        return enodes, coords.astype(float)


@dataclass
class ModalResult:
    mass: float  # kg
    frequencies: np.ndarray  # Hz, ascending, rigid modes included
    rigid_mode_count: int
    converged: bool = True

    @property
    def mode7_hz(self) -> float:
        return float(self.frequencies[6])

    @property
    def mode11_hz(self) -> float:
        return float(self.frequencies[10])


@dataclass(frozen=True)
class PerformanceScore:
    norm_mode7: float
    norm_mode11: float
    norm_mass: float
    overall: float
    degenerate: bool = False


def voxel_hex_mesh(mesh: TriMesh, elem_size: float) -> HexModel:
    """Fill the interior of a closed mesh with cubes of edge ``elem_size`` (mm).

    Face-connected pieces below 1% of the total volume are dropped; larger
    secondary pieces raise :class:`Disconnected`.
    """
    if not mesh.watertight:
        raise NotWatertight(f"mesh has {mesh.boundary_edges} boundary edges")
    lo, hi = mesh.bounds()
    origin, dims = grid_for_bounds(lo, hi, elem_size)
    occ = voxelize(mesh, origin, elem_size, dims)
    labels, n = ndimage.label(occ)
    if n == 0:
        raise Disconnected("no element centre lies inside the mesh")
    if n > 1:
        sizes = np.bincount(labels.ravel())[1:]
        main = int(np.argmax(sizes)) + 1
        rest = sizes.sum() - sizes[main - 1]
        if rest > DEBRIS_FRACTION * sizes.sum():
            raise Disconnected(f"{n} face-connected components; {rest} elements outside the largest")
        log.debug("dropping %d debris elements in %d pieces", rest, n - 1)
        occ = labels == main
    return HexModel(occ, np.asarray(origin, dtype=float), float(elem_size))


def _gauss_points():
    g = 1.0 / np.sqrt(3.0)
    pts = np.array([(a, b, c) for a in (-g, g) for b in (-g, g) for c in (-g, g)])
    return pts  # unit weights


def _elasticity(E: float, nu: float) -> np.ndarray:
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def _strain_matrix(grads: np.ndarray) -> np.ndarray:
    """6 x 3n strain-displacement matrix from shape-function gradients ``(n, 3)``.

    Strain order: xx, yy, zz, xy, yz, zx (engineering shears).
    """
    n = len(grads)
    B = np.zeros((6, 3 * n))
    gx, gy, gz = grads.T
    B[0, 0::3] = gx
    B[1, 1::3] = gy
    B[2, 2::3] = gz
    B[3, 0::3], B[3, 1::3] = gy, gx
    B[4, 1::3], B[4, 2::3] = gz, gy
    B[5, 0::3], B[5, 2::3] = gz, gx
    return B


_SIGNS = np.array([(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
                   (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)], dtype=float)


@lru_cache(maxsize=32)
def hex8_matrices(a: float, E: float, nu: float, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Stiffness (with condensed incompatible modes) and consistent mass of a cube.

    ``a`` is the edge length. Three bubble modes per direction remove the shear
    locking of the trilinear brick in bending.
    """
    D = _elasticity(E, nu)
    jac = a / 2.0
    detJ = jac**3
    Kcc = np.zeros((24, 24))
    Kci = np.zeros((24, 9))
    Kii = np.zeros((9, 9))
    M1 = np.zeros((8, 8))
    for xi in _gauss_points():
        s = _SIGNS
        f = 1 + s * xi  # (8, 3)
        N = f.prod(axis=1) / 8.0
        dN = np.column_stack([
            s[:, 0] * f[:, 1] * f[:, 2],
            s[:, 1] * f[:, 0] * f[:, 2],
            s[:, 2] * f[:, 0] * f[:, 1],
        ]) / 8.0 / jac
        # bubble 1 - xi_m^2 gradients: only along its own axis
        dP = np.diag(-2.0 * xi / jac)
        Bc = _strain_matrix(dN)
        Bi = _strain_matrix(dP)
        Kcc += Bc.T @ D @ Bc * detJ
        Kci += Bc.T @ D @ Bi * detJ
        Kii += Bi.T @ D @ Bi * detJ
        M1 += np.outer(N, N) * rho * detJ
    K = Kcc - Kci @ np.linalg.solve(Kii, Kci.T)
    K = 0.5 * (K + K.T)
    M = np.kron(M1, np.eye(3))
    return K, M


def assemble(model: HexModel, mat: Material) -> tuple[sp.csc_matrix, sp.csc_matrix]:
    """Global stiffness and consistent mass in SI units."""
    enodes, _ = model.connectivity()
    a = model.elem_size * MM
    Ke, Me = hex8_matrices(a, mat.youngs_modulus, mat.poisson_ratio, mat.density)
    edof = (3 * enodes[:, :, None] + np.arange(3)).reshape(-1, 24)
    rows = np.repeat(edof, 24, axis=1).ravel()
    cols = np.tile(edof, (1, 24)).ravel()
    n = 3 * (enodes.max() + 1)
    K = sp.coo_matrix((np.tile(Ke.ravel(), len(edof)), (rows, cols)), shape=(n, n)).tocsc()
    M = sp.coo_matrix((np.tile(Me.ravel(), len(edof)), (rows, cols)), shape=(n, n)).tocsc()
    # duplicate summation order differs between (i, j) and (j, i)
    return ((K + K.T) * 0.5).tocsc(), ((M + M.T) * 0.5).tocsc()


def modal_analysis(model: HexModel, mat: Material | None = None, n_modes: int = 20,
                   sigma: float = DEFAULT_SHIFT, tol: float = 0.0) -> ModalResult:
    """Lowest ``n_modes`` free-free natural frequencies by shift-invert Lanczos."""
    if n_modes < 12:
        raise ValueError("n_modes must be at least 12")
    mat = mat or Material()
    if model.n_elements == 0:
        raise Disconnected("model has no elements")
    labels, n_comp = ndimage.label(model.occupancy)
    if n_comp > 1:
        raise Disconnected(f"model has {n_comp} face-connected components")
    K, M = assemble(model, mat)
    if n_modes >= K.shape[0]:
        raise ValueError(f"n_modes={n_modes} exceeds the {K.shape[0]} degrees of freedom")
    v0 = np.ones(K.shape[0]) + np.linspace(0.0, 1.0, K.shape[0])  # deterministic start
    # symmetric minimum-degree ordering roughly halves the fill of the default
    lu = splu((K - sigma * M).tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    opinv = LinearOperator(K.shape, matvec=lu.solve, dtype=float)
    try:
        _, V = eigsh(K, k=n_modes, M=M, sigma=sigma, which="LM", v0=v0, tol=tol, OPinv=opinv)
    except ArpackNoConvergence as exc:
        raise EigenNonConvergence(str(exc)) from exc
    # Rayleigh-Ritz with the exact K and M removes the error of an ill-conditioned
    # factorization (shift near the rigid modes) from the eigenvalues
    w2 = eigh(V.T @ (K @ V), V.T @ (M @ V), eigvals_only=True)
    freqs = np.sqrt(np.clip(w2, 0.0, None)) / (2 * np.pi)
    rigid = int(np.sum(freqs < 1e-3 * freqs[-1]))
    mass = mat.density * model.n_elements * (model.elem_size * MM) ** 3
    return ModalResult(float(mass), freqs, rigid)


def _normalize(values: np.ndarray) -> tuple[np.ndarray, bool]:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full(len(values), 0.5), True
    return (values - lo) / (hi - lo), False


def performance_score(results) -> list[PerformanceScore]:
    """Min-max normalize mode 7, mode 11 and inverted mass; overall is their mean.

    A metric with zero spread normalizes to 0.5 and flags every score as
    degenerate (with a :class:`DegenerateRangeWarning`).
    """
    results = list(results)
    if len(results) < 2:
        raise ValueError("need at least two results to normalize")
    m7, d7 = _normalize(np.array([r.mode7_hz for r in results]))
    m11, d11 = _normalize(np.array([r.mode11_hz for r in results]))
    mass, dm = _normalize(np.array([r.mass for r in results]))
    degenerate = d7 or d11 or dm
    if dm:
        mass = np.full(len(results), 0.5)
    else:
        mass = 1.0 - mass
    if degenerate:
        warnings.warn("a performance metric has zero range; normalized to 0.5",
                      DegenerateRangeWarning, stacklevel=2)
    overall = (m7 + m11 + mass) / 3.0
    return [PerformanceScore(float(a), float(b), float(c), float(o), degenerate)
            for a, b, c, o in zip(m7, m11, mass, overall)]


def result_row(design_id: str, result: ModalResult, score: float | None = None) -> dict:
    """One results-CSV row; frequencies in Hz, mode indices positional."""
    row = {"design_id": design_id, "mass_kg": result.mass}
    for i, f in enumerate(result.frequencies, start=1):
        row[f"f{i}_hz"] = float(f)
    row["mode7_hz"] = result.mode7_hz
    row["mode11_hz"] = result.mode11_hz
    row["score"] = score
    row["mode_labels"] = "positional"
    return row
