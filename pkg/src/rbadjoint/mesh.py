"""Structured plane-stress Q4 meshes, element matrices and sparse assembly."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .material import MaterialParams, interp_derivatives, interpolate

_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)
# reference-element corner coordinates, counter-clockwise from lower left
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


@dataclass(frozen=True, eq=False)
class Mesh:
    nx: int
    ny: int
    lx: float
    ly: float
    thickness: float
    node_coords: np.ndarray
    element_connectivity: np.ndarray
    element_volumes: np.ndarray
    fixed_dofs: frozenset = field(default_factory=frozenset)

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_elements(self) -> int:
        return len(self.element_connectivity)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    def node_id(self, i: int, j: int) -> int:
        """Node at column ``i`` (along x) and row ``j`` (along y)."""
        return j * (self.nx + 1) + i

    def element_id(self, i: int, j: int) -> int:
        return j * self.nx + i

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[list(self.fixed_dofs)] = False
        return np.flatnonzero(mask)

    @property
    def n_free(self) -> int:
        return len(self.free_dofs)

    @cached_property
    def full_to_free(self) -> np.ndarray:
        """Map from global dof to free index, ``n_free`` for constrained dofs."""
        m = np.full(self.n_dofs, self.n_free, dtype=np.int64)
        m[self.free_dofs] = np.arange(self.n_free)
        return m

    @cached_property
    def element_dofs(self) -> np.ndarray:
        conn = self.element_connectivity
        edofs = np.empty((self.n_elements, 8), dtype=np.int64)
        edofs[:, 0::2] = 2 * conn
        edofs[:, 1::2] = 2 * conn + 1
        return edofs

    @cached_property
    def element_free_dofs(self) -> np.ndarray:
        """Element dofs in free numbering; constrained entries point at ``n_free``."""
        return self.full_to_free[self.element_dofs]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.node_coords[self.element_connectivity].mean(axis=1)

    @cached_property
    def _triplets(self):
        ef = self.element_free_dofs
        rows = np.repeat(ef, 8, axis=1).ravel()
        cols = np.tile(ef, (1, 8)).ravel()
        keep = (rows < self.n_free) & (cols < self.n_free)
        return rows[keep], cols[keep], keep

    def with_fixed_dofs(self, dofs) -> "Mesh":
        return dataclasses.replace(self, fixed_dofs=frozenset(int(d) for d in dofs))

    def dofs_on(self, side: str, directions=(0, 1)) -> list[int]:
        """Global dofs on a boundary side (``left``, ``right``, ``bottom``, ``top``)."""
        nx, ny = self.nx, self.ny
        if side == "left":
            nodes = [self.node_id(0, j) for j in range(ny + 1)]
        elif side == "right":
            nodes = [self.node_id(nx, j) for j in range(ny + 1)]
        elif side == "bottom":
            nodes = [self.node_id(i, 0) for i in range(nx + 1)]
        elif side == "top":
            nodes = [self.node_id(i, ny) for i in range(nx + 1)]
        else:
            raise ValueError(f"unknown side {side!r}")
        return [2 * n + d for n in nodes for d in directions]


def build_structured_mesh(nx: int, ny: int, lx: float, ly: float, thickness: float) -> Mesh:
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    if lx <= 0 or ly <= 0 or thickness <= 0:
        raise ValueError("mesh dimensions must be positive")
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    coords = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    conn = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    vol = np.full(nx * ny, (lx / nx) * (ly / ny) * thickness)
    return Mesh(nx, ny, float(lx), float(ly), float(thickness), coords, conn, vol)


def _shape_derivatives(xi, eta, dx, dy):
    dN_dxi = 0.25 * _XI * (1 + eta * _ETA)
    dN_deta = 0.25 * _ETA * (1 + xi * _XI)
    # rectangular element: diagonal Jacobian
    return dN_dxi * 2.0 / dx, dN_deta * 2.0 / dy, dx * dy / 4.0


def element_stiffness(E: float, nu: float, thickness: float, dx: float, dy: float) -> np.ndarray:
    """Plane-stress bilinear quadrilateral stiffness, 2x2 Gauss."""
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    D = E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    ke = np.zeros((8, 8))
    for xi in _GAUSS2:
        for eta in _GAUSS2:
            Nx, Ny, detJ = _shape_derivatives(xi, eta, dx, dy)
            B = np.zeros((3, 8))
            B[0, 0::2] = Nx
            B[1, 1::2] = Ny
            B[2, 0::2] = Ny
            B[2, 1::2] = Nx
            ke += B.T @ D @ B * detJ * thickness
    return 0.5 * (ke + ke.T)


def element_mass(rho: float, thickness: float, dx: float, dy: float) -> np.ndarray:
    """Consistent mass matrix of the bilinear quadrilateral."""
    if rho <= 0:
        raise ValueError("density must be positive")
    me = np.zeros((8, 8))
    for xi in _GAUSS2:
        for eta in _GAUSS2:
            Nv = 0.25 * (1 + xi * _XI) * (1 + eta * _ETA)
            N = np.zeros((2, 8))
            N[0, 0::2] = Nv
            N[1, 1::2] = Nv
            me += N.T @ N * rho * thickness * dx * dy / 4.0
    return 0.5 * (me + me.T)


@dataclass(eq=False)
class SystemMatrices:
    """Sparse free-dof mass, damping and stiffness with their design data.

    The design fields are ``None`` for systems built directly from matrices.
    """

    M: sp.csc_matrix
    C: sp.csc_matrix
    K: sp.csc_matrix
    mesh: Mesh | None = None
    material: MaterialParams | None = None
    ke0: np.ndarray | None = None
    me0: np.ndarray | None = None
    vbar: np.ndarray | None = None
    ebar: np.ndarray | None = None
    dvbar: np.ndarray | None = None
    debar: np.ndarray | None = None

    @property
    def n_free(self) -> int:
        return self.M.shape[0]

    @classmethod
    def from_matrices(cls, M, C, K) -> "SystemMatrices":
        return cls(sp.csc_matrix(np.atleast_2d(M)), sp.csc_matrix(np.atleast_2d(C)),
                   sp.csc_matrix(np.atleast_2d(K)))


def assemble_scaled(mesh: Mesh, ke: np.ndarray, scale: np.ndarray) -> sp.csc_matrix:
    """Assemble ``sum_e scale[e] * ke`` on the free dofs."""
    rows, cols, keep = mesh._triplets
    data = (scale[:, None] * ke.ravel()[None, :]).ravel()[keep]
    n = mesh.n_free
    return sp.csc_matrix((data, (rows, cols)), shape=(n, n))


def lumped_mass_vector(mesh: Mesh, lumped_masses) -> np.ndarray:
    """Free-dof diagonal of point masses given as ``(node, kg)`` pairs."""
    diag = np.zeros(mesh.n_dofs)
    for node, mass in lumped_masses:
        diag[2 * node] += mass
        diag[2 * node + 1] += mass
    return diag[mesh.free_dofs]


def assemble(mesh: Mesh, density, material: MaterialParams, lumped_masses=()) -> SystemMatrices:
    b = np.asarray(density, dtype=float)
    if b.shape != (mesh.n_elements,):
        raise ValueError(f"density has shape {b.shape}, expected ({mesh.n_elements},)")
    if mesh.n_free == 0:
        raise ValueError("every dof is constrained; mass matrix would be singular")
    ke0 = element_stiffness(material.E0, material.nu, mesh.thickness, mesh.dx, mesh.dy)
    me0 = element_mass(material.rho0, mesh.thickness, mesh.dx, mesh.dy)
    vbar, ebar = interpolate(b, material)
    dvbar, debar = interp_derivatives(b, material)
    K = assemble_scaled(mesh, ke0, ebar)
    M = assemble_scaled(mesh, me0, vbar)
    lumped = lumped_mass_vector(mesh, lumped_masses)
    if np.any(lumped):
        M = (M + sp.diags(lumped)).tocsc()
    C = (material.alpha_M * M + material.alpha_K * K).tocsc()
    return SystemMatrices(M, C, K, mesh, material, ke0, me0, vbar, ebar, dvbar, debar)


LOAD_KINDS = ("point_transient", "rotating_constant", "ground_acceleration")


@dataclass(frozen=True)
class LoadCase:
    """Time-dependent loading.

    ``point_transient`` applies a half-sine pulse of ``amplitude`` newtons over
    ``duration`` seconds along ``direction`` at each node in ``nodes``.
    ``rotating_constant`` applies ``amplitude * (cos wt, sin wt)``.
    ``ground_acceleration`` applies ``-M iota a_g(t)`` with
    ``a_g = amplitude * sin(omega t)`` and ``iota`` selecting ``direction``.
    """

    kind: str
    nodes: tuple = ()
    amplitude: float = 1000.0
    direction: tuple = (0.0, -1.0)
    duration: float | None = None
    omega: float | None = None
    lumped_masses: tuple = ()

    def __post_init__(self):
        if self.kind not in LOAD_KINDS:
            raise ValueError(f"unknown load kind {self.kind!r}")
        if self.kind == "point_transient" and (not self.nodes or not self.duration):
            raise ValueError("point_transient needs nodes and a positive duration")
        if self.kind == "rotating_constant" and (not self.nodes or self.omega is None):
            raise ValueError("rotating_constant needs nodes and omega")
        if self.kind == "ground_acceleration" and self.omega is None:
            raise ValueError("ground_acceleration needs omega")

    def time_profile(self, times: np.ndarray) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        if self.kind == "point_transient":
            return np.where(t <= self.duration, self.amplitude * np.sin(np.pi * t / self.duration), 0.0)
        if self.kind == "ground_acceleration":
            return self.amplitude * np.sin(self.omega * t)
        raise ValueError("rotating loads have a two-component profile")


@dataclass(eq=False)
class LoadHistory:
    """Sampled forces on the free dofs, one row per time instant.

    For mass-proportional (ground) loading ``iota`` and ``ag`` are kept so that
    the design derivative ``-dM/db iota ag`` can be formed.
    """

    forces: np.ndarray
    iota: np.ndarray | None = None
    ag: np.ndarray | None = None

    @property
    def design_dependent(self) -> bool:
        return self.iota is not None


def evaluate_load(load: LoadCase, mesh: Mesh, system: SystemMatrices, times) -> LoadHistory:
    times = np.asarray(times, dtype=float)
    nt = len(times)
    full = np.zeros((nt, mesh.n_dofs))
    if load.kind == "point_transient":
        prof = load.time_profile(times)
        for node in load.nodes:
            full[:, 2 * node] += prof * load.direction[0]
            full[:, 2 * node + 1] += prof * load.direction[1]
    elif load.kind == "rotating_constant":
        for node in load.nodes:
            full[:, 2 * node] += load.amplitude * np.cos(load.omega * times)
            full[:, 2 * node + 1] += load.amplitude * np.sin(load.omega * times)
    else:
        iota_full = np.zeros(mesh.n_dofs)
        iota_full[0::2] = load.direction[0]
        iota_full[1::2] = load.direction[1]
        iota = iota_full[mesh.free_dofs]
        ag = load.time_profile(times)
        forces = -np.outer(ag, system.M @ iota)
        return LoadHistory(forces, iota, ag)
    return LoadHistory(np.ascontiguousarray(full[:, mesh.free_dofs]))


def gather_elements(mesh: Mesh, X: np.ndarray) -> np.ndarray:
    """Element-local view of free-dof vectors: ``(..., n_free) -> (..., n_el, 8)``.

    Constrained dofs read as zero.
    """
    X = np.asarray(X)
    pad = np.zeros(X.shape[:-1] + (1,))
    return np.concatenate([X, pad], axis=-1)[..., mesh.element_free_dofs]
