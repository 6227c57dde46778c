"""Bilinear finite elements on uniform square grids.

Stiffness and mass pencils for ``-div(a grad u) = lam * m * u`` under
Dirichlet (eliminated), periodic or quasi-periodic (Bloch) boundary
conditions.  Coefficients are sampled once per element at its centroid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from . import _kernels


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box split into ``nx * ny`` square elements."""

    box: tuple[float, float, float, float]
    nx: int
    ny: int
    bc: str = "dirichlet"
    theta: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        x0, x1, y0, y1 = self.box
        if self.nx < 2 or self.ny < 2:
            raise AssemblyError("need at least two elements per direction")
        if self.bc not in ("dirichlet", "periodic", "quasiperiodic"):
            raise AssemblyError(f"unknown boundary condition {self.bc!r}")
        hx = (x1 - x0) / self.nx
        hy = (y1 - y0) / self.ny
        if not (hx > 0 and hy > 0) or abs(hx - hy) > 1e-12 * max(hx, hy):
            raise AssemblyError(f"elements are not square (hx={hx}, hy={hy})")

    @classmethod
    def square(cls, half_width: float, h: float, bc: str = "dirichlet") -> "Grid":
        """Box [-L, L]^2 with spacing h (2L/h must be an integer)."""
        n = int(round(2.0 * half_width / h))
        if abs(n * h - 2.0 * half_width) > 1e-9 * half_width:
            raise AssemblyError(f"2L = {2 * half_width} is not a multiple of h = {h}")
        return cls((-half_width, half_width, -half_width, half_width), n, n, bc)

    @classmethod
    def unit_cell(cls, n: int, bc: str = "periodic", theta=(0.0, 0.0)) -> "Grid":
        return cls((0.0, 1.0, 0.0, 1.0), n, n, bc, tuple(float(t) for t in theta))

    @property
    def h(self) -> float:
        return (self.box[1] - self.box[0]) / self.nx

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_dofs(self) -> int:
        if self.bc == "dirichlet":
            return (self.nx - 1) * (self.ny - 1)
        return self.nx * self.ny

    def node_coords(self) -> np.ndarray:
        """(ny+1, nx+1, 2) array of all node positions."""
        x = np.linspace(self.box[0], self.box[1], self.nx + 1)
        y = np.linspace(self.box[2], self.box[3], self.ny + 1)
        X, Y = np.meshgrid(x, y)
        return np.stack([X, Y], axis=-1)

    def centroids(self) -> np.ndarray:
        """(n_elements, 2) element centroids, element index i + nx * j."""
        h = self.h
        x = self.box[0] + h * (np.arange(self.nx) + 0.5)
        y = self.box[2] + h * (np.arange(self.ny) + 0.5)
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def node_dof(self) -> np.ndarray:
        """(ny+1, nx+1) map from node to dof index (-1 = eliminated)."""
        nx, ny = self.nx, self.ny
        jj, ii = np.meshgrid(np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
        if self.bc == "dirichlet":
            dof = (jj - 1) * (nx - 1) + (ii - 1)
            interior = (ii > 0) & (ii < nx) & (jj > 0) & (jj < ny)
            return np.where(interior, dof, -1)
        return (ii % nx) + nx * (jj % ny)

    def node_phase(self) -> np.ndarray:
        """Bloch factor carried by each node copy (1 except on wrapped edges)."""
        nx, ny = self.nx, self.ny
        ph = np.ones((ny + 1, nx + 1), dtype=complex)
        if self.bc == "quasiperiodic":
            t1, t2 = self.theta
            ph[:, nx] *= np.exp(1j * t1)
            ph[ny, :] *= np.exp(1j * t2)
        return ph

    def dof_coords(self) -> np.ndarray:
        """(n_dofs, 2) coordinates of the representative node of each dof."""
        coords = self.node_coords()
        dof = self.node_dof()
        out = np.empty((self.n_dofs, 2))
        if self.bc == "dirichlet":
            sel = dof >= 0
            out[dof[sel]] = coords[sel]
        else:
            out[dof[: self.ny, : self.nx].ravel()] = coords[: self.ny, : self.nx].reshape(-1, 2)
        return out

    def element_nodes(self):
        """(n_elements, 4) dofs and Bloch phases, local order (0,0),(1,0),(1,1),(0,1)."""
        dof = self.node_dof()
        ph = self.node_phase()
        j, i = np.meshgrid(np.arange(self.ny), np.arange(self.nx), indexing="ij")
        i = i.ravel()
        j = j.ravel()
        corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
        dofs = np.stack([dof[b, a] for a, b in corners], axis=1)
        phase = np.stack([ph[b, a] for a, b in corners], axis=1)
        return dofs, phase


@dataclass
class AssembledPencil:
    """Sparse pair (K, M) with the grid it was assembled on."""

    K: sp.csr_matrix
    M: sp.csr_matrix
    grid: Grid
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.K.data) or np.iscomplexobj(self.M.data)


Field = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


def _sample(f: Field, grid: Grid, name: str) -> np.ndarray:
    ne = grid.n_elements
    if callable(f):
        vals = np.asarray(f(grid.centroids()), dtype=float)
    else:
        vals = np.asarray(f, dtype=float)
        if vals.ndim == 0:
            vals = np.full(ne, float(vals))
    if vals.shape[0] != ne:
        raise AssemblyError(f"{name} gives {vals.shape[0]} values for {ne} elements")
    return vals


def _tensor_parts(c: np.ndarray):
    if c.ndim == 1:
        return c, c, np.zeros_like(c)
    if c.shape[1:] != (2, 2):
        raise AssemblyError("tensor coefficient must have shape (n, 2, 2)")
    if not np.allclose(c[:, 0, 1], c[:, 1, 0]):
        raise AssemblyError("tensor coefficient must be symmetric")
    return c[:, 0, 0].copy(), c[:, 1, 1].copy(), c[:, 0, 1].copy()


def _coo(rows, cols, vals, n, real):
    if real:
        vals = vals.real
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def assemble(grid: Grid, coeff: Field = 1.0, mass_weight: Field = 1.0,
             allow_zero: bool = False) -> AssembledPencil:
    """Assemble K_ij = sum_e a(c_e) int grad psi_i . grad psi_j and the weighted mass.

    ``coeff`` may be a scalar, a per-element array, or a callable evaluated at
    element centroids; it may be scalar-valued or return (n, 2, 2) tensors.
    Non-positive coefficients are rejected unless ``allow_zero`` (zeros only).
    """
    c = _sample(coeff, grid, "coeff")
    a11, a22, a12 = _tensor_parts(c)
    if c.ndim == 1:
        bad = c < 0 if allow_zero else c <= 0
    else:
        det = a11 * a22 - a12 ** 2
        bad = (a11 < 0) | (det < 0) if allow_zero else (a11 <= 0) | (det <= 0)
    if np.any(bad):
        raise AssemblyError(f"non-positive coefficient on {int(bad.sum())} elements")
    mw = _sample(mass_weight, grid, "mass_weight")
    dofs, phase = grid.element_nodes()
    rows, cols, kv, mv = _kernels.element_triplets(dofs, phase, a11, a22, a12, mw, grid.h ** 2)
    real = bool(np.all(np.abs(phase.imag) < 1e-15))
    n = grid.n_dofs
    K = _coo(rows, cols, kv, n, real)
    M = _coo(rows, cols, mv, n, real)
    return AssembledPencil(K, M, grid, {"bc": grid.bc, "theta": grid.theta})


def mass_matrix(grid: Grid, weight: Field = 1.0) -> sp.csr_matrix:
    """Weighted mass matrix only (the stiffness part of the kernel output is dropped)."""
    return assemble(grid, 1.0, weight).M


def restrict_norm(u: np.ndarray, pencil: AssembledPencil, region) -> float:
    """L2 norm of ``u`` over elements whose centroid satisfies ``region``.

    ``region`` is a callable on (n, 2) centroid arrays returning booleans, or a
    boolean element mask.
    """
    u = np.asarray(u)
    if u.shape != (pencil.n,):
        raise AssemblyError(f"vector of size {u.shape} does not match {pencil.n} dofs")
    grid = pencil.grid
    mask = region(grid.centroids()) if callable(region) else np.asarray(region)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    Mr = mass_matrix(grid, mask.astype(float))
    return float(np.sqrt(max(np.real(np.vdot(u, Mr @ u)), 0.0)))


def element_gradients(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Centroid gradients (n_elements, 2) of a real dof vector."""
    dofs, phase = grid.element_nodes()
    vals = np.where(dofs >= 0, u[np.maximum(dofs, 0)], 0.0) * phase
    h = grid.h
    gx = 0.5 * (vals[:, 1] - vals[:, 0] + vals[:, 2] - vals[:, 3]) / h
    gy = 0.5 * (vals[:, 3] - vals[:, 0] + vals[:, 2] - vals[:, 1]) / h
    return np.real_if_close(np.column_stack([gx, gy]))


def interpolate(grid: Grid, u: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a dof vector (zero outside a Dirichlet box)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    full = np.zeros((grid.ny + 1, grid.nx + 1), dtype=np.result_type(u, float))
    dof = grid.node_dof()
    sel = dof >= 0
    full[sel] = u[dof[sel]]
    if grid.bc == "quasiperiodic":
        full = full * grid.node_phase()
    h = grid.h
    s = (pts[:, 0] - grid.box[0]) / h
    t = (pts[:, 1] - grid.box[2]) / h
    outside = (s < 0) | (s > grid.nx) | (t < 0) | (t > grid.ny)
    i = np.clip(np.floor(s).astype(int), 0, grid.nx - 1)
    j = np.clip(np.floor(t).astype(int), 0, grid.ny - 1)
    fs = np.clip(s - i, 0.0, 1.0)
    ft = np.clip(t - j, 0.0, 1.0)
    val = ((1 - fs) * (1 - ft) * full[j, i] + fs * (1 - ft) * full[j, i + 1]
           + fs * ft * full[j + 1, i + 1] + (1 - fs) * ft * full[j + 1, i])
    return np.where(outside, 0.0, val)
