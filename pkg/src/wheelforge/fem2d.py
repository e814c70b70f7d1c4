"""Plane-stress bilinear-quad finite elements on a regular grid.

Node ``(i, j)`` sits at ``x = i * h``, ``y = j * h`` and has id ``i * (ny + 1) + j``;
dofs are ``2 * id`` (x) and ``2 * id + 1`` (y). Element ``(ex, ey)`` has flat index
``ex * ny + ey``, so ``densities.reshape(nx, ny)[ex, ey]`` addresses it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DimensionMismatch, InvalidLoadCase, SingularSystem

_GAUSS_2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)
# local node order: lower-left, lower-right, upper-right, upper-left
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


def plane_stress_matrix(E: float, nu: float) -> np.ndarray:
    return E / (1.0 - nu**2) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]
    )


def quad_stiffness(E: float, nu: float, h: float = 1.0, thickness: float = 1.0) -> np.ndarray:
    """8x8 stiffness of a square bilinear quad, 2x2 Gauss quadrature."""
    D = plane_stress_matrix(E, nu)
    ke = np.zeros((8, 8))
    half = h / 2.0
    for xi in _GAUSS_2:
        for eta in _GAUSS_2:
            dn_dxi = 0.25 * _XI * (1.0 + eta * _ETA)
            dn_deta = 0.25 * _ETA * (1.0 + xi * _XI)
            # square element: J = diag(h/2, h/2)
            dn_dx = dn_dxi / half
            dn_dy = dn_deta / half
            B = np.zeros((3, 8))
            B[0, 0::2] = dn_dx
            B[1, 1::2] = dn_dy
            B[2, 0::2] = dn_dy
            B[2, 1::2] = dn_dx
            ke += B.T @ D @ B * half * half * thickness
    # exact symmetry keeps assembled K bitwise symmetric
    return 0.5 * (ke + ke.T)


@dataclass(frozen=True)
class GridModel2D:
    nx: int
    ny: int
    elem_size: float = 1.0
    youngs_modulus_solid: float = 1.0
    youngs_modulus_void: float = 1e-9
    poisson_ratio: float = 0.3
    penal: float = 3.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("nx and ny must be >= 1")
        if not 0.0 < self.youngs_modulus_void < self.youngs_modulus_solid:
            raise ValueError("need 0 < youngs_modulus_void < youngs_modulus_solid")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in (0, 0.5)")
        if self.penal < 1.0:
            raise ValueError("penal must be >= 1")

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def node_id(self, i: int, j: int) -> int:
        return i * (self.ny + 1) + j

    @cached_property
    def element_stiffness(self) -> np.ndarray:
        return quad_stiffness(self.youngs_modulus_solid, self.poisson_ratio, self.elem_size)

    @cached_property
    def edof(self) -> np.ndarray:
        """(n_elements, 8) global dof indices per element."""
        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        ex, ey = ex.ravel(), ey.ravel()
        n_ll = ex * (self.ny + 1) + ey
        n_lr = (ex + 1) * (self.ny + 1) + ey
        nodes = np.stack([n_ll, n_lr, n_lr + 1, n_ll + 1], axis=1)
        edof = np.empty((nodes.shape[0], 8), dtype=np.int64)
        edof[:, 0::2] = 2 * nodes
        edof[:, 1::2] = 2 * nodes + 1
        return edof

    def stiffness_scale(self, densities: np.ndarray) -> np.ndarray:
        """SIMP modulus per element relative to the solid modulus."""
        e0, emin = self.youngs_modulus_solid, self.youngs_modulus_void
        return (emin + np.asarray(densities) ** self.penal * (e0 - emin)) / e0

    def stiffness_scale_derivative(self, densities: np.ndarray) -> np.ndarray:
        e0, emin = self.youngs_modulus_solid, self.youngs_modulus_void
        x = np.asarray(densities)
        return self.penal * x ** (self.penal - 1.0) * (e0 - emin) / e0


@dataclass
class LoadCase2D:
    fixed_dofs: np.ndarray
    nodal_forces: dict[int, float]
    normal_shear_ratio: float | None = None

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        if self.fixed_dofs.size == 0:
            raise InvalidLoadCase("at least one fixed dof is required")
        if not any(v != 0.0 for v in self.nodal_forces.values()):
            raise InvalidLoadCase("at least one nonzero nodal force is required")

    def force_vector(self, n_dofs: int) -> np.ndarray:
        F = np.zeros(n_dofs)
        for dof, value in self.nodal_forces.items():
            if not 0 <= dof < n_dofs:
                raise DimensionMismatch(f"force dof {dof} outside 0..{n_dofs - 1}")
            F[dof] += value
        return F


def cantilever_load(model: GridModel2D, magnitude: float = 1.0) -> LoadCase2D:
    """Left edge clamped, downward point load at the middle of the right edge."""
    fixed = [2 * model.node_id(0, j) + k for j in range(model.ny + 1) for k in (0, 1)]
    tip = model.node_id(model.nx, model.ny // 2)
    return LoadCase2D(fixed, {2 * tip + 1: -magnitude})


def segment_load(model: GridModel2D, normal_shear_ratio: float = 1.0,
                 magnitude: float = 1.0) -> LoadCase2D:
    """Wheel-segment load: hub edge (j = 0) clamped, rim edge loaded at mid-span.

    The grid is the unrolled segment (x angular, y radial). The rim load is split
    into a radial (normal, pointing at the hub) and a tangential (shear) component
    with ``normal / shear == normal_shear_ratio`` and unit total magnitude.
    """
    if normal_shear_ratio < 0:
        raise InvalidLoadCase("normal_shear_ratio must be >= 0")
    fixed = [2 * model.node_id(i, 0) + k for i in range(model.nx + 1) for k in (0, 1)]
    norm = np.hypot(normal_shear_ratio, 1.0)
    node = model.node_id(model.nx // 2, model.ny)
    forces = {
        2 * node: magnitude / norm,
        2 * node + 1: -magnitude * normal_shear_ratio / norm,
    }
    return LoadCase2D(fixed, forces, normal_shear_ratio)


def assemble_stiffness(model: GridModel2D, densities: np.ndarray) -> sp.csc_matrix:
    x = _check_densities(model, densities)
    scale = model.stiffness_scale(x)
    edof = model.edof
    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    vals = (model.element_stiffness.ravel()[None, :] * scale[:, None]).ravel()
    K = sp.coo_matrix((vals, (rows, cols)), shape=(model.n_dofs, model.n_dofs)).tocsc()
    return K


def assemble_and_solve(model: GridModel2D, densities: np.ndarray, loads: LoadCase2D) -> np.ndarray:
    """Solve ``K(x) U = F`` with the fixed dofs held at zero."""
    K = assemble_stiffness(model, densities)
    F = loads.force_vector(model.n_dofs)
    free = np.setdiff1d(np.arange(model.n_dofs), loads.fixed_dofs)
    Kff = K[free][:, free].tocsc()
    Ff = F[free]
    # diagonal pivoting makes the LU an LDL^T, whose pivots expose indefiniteness
    try:
        lu = splu(Kff, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    pivots = lu.U.diagonal()
    if pivots.min() <= 1e-14 * np.abs(pivots).max():
        raise SingularSystem("stiffness matrix is not positive definite; check supports")
    Uf = lu.solve(Ff)
    # normwise backward error; plain ||r||/||F|| is unreachable when void
    # elements (1e-9 stiffness) carry huge displacements
    knorm = abs(Kff).sum(axis=1).max()

    def backward_error(u):
        r = Kff @ u - Ff
        return np.abs(r).max() / (knorm * np.abs(u).max() + np.abs(Ff).max())

    residual = backward_error(Uf)
    for _ in range(3):
        if residual <= 1e-12:
            break
        Uf = Uf + lu.solve(Ff - Kff @ Uf)
        residual = backward_error(Uf)
    if not np.isfinite(residual) or residual > 1e-8:
        raise SingularSystem(f"relative residual {residual:.3e} exceeds 1e-8")
    U = np.zeros(model.n_dofs)
    U[free] = Uf
    return U


def element_compliances(model: GridModel2D, densities: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Per-element ``u_e^T k0 u_e`` with ``k0`` the solid element stiffness.

    Weighting by ``model.stiffness_scale(densities)`` and summing gives ``U^T K U``.
    """
    _check_densities(model, densities)
    U = np.asarray(U, dtype=float)
    if U.shape != (model.n_dofs,):
        raise DimensionMismatch(f"U has shape {U.shape}, expected ({model.n_dofs},)")
    ue = U[model.edof]
    return np.einsum("ei,ij,ej->e", ue, model.element_stiffness, ue)


def compliance(model: GridModel2D, densities: np.ndarray, U: np.ndarray) -> float:
    ce = element_compliances(model, densities, U)
    return float(np.sum(model.stiffness_scale(densities) * ce))


def _check_densities(model: GridModel2D, densities) -> np.ndarray:
    x = np.asarray(densities, dtype=float).ravel()
    if x.size != model.n_elements:
        raise DimensionMismatch(f"got {x.size} densities for {model.n_elements} elements")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("densities must lie in [0, 1]")
    return x
