"""Reference-cell quantities: Dirichlet spectrum of -a0*Laplace on Q0, the
dispersion function beta(lam), band gaps, and the homogenized matrix of the
perforated matrix phase.

The Q0 problem uses the nodes whose four incident elements all have their
centroid inside the inclusion; with this choice the cell problem is exactly
the one a lattice-aligned fine grid with ``1/h`` elements per period sees.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .assembly import Grid, assemble
from .eigensolve import DENSE_MAX, SolverError, SymmetricFactor, dense_eigs, shift_invert_eigs
from .geometry import CellGeometry

# mean_sq below this marks a mode without a gap of its own: angular modes have
# zero mean exactly, and the square grid leaves some of them an O(h^2) residue
ZERO_MEAN = 1e-6
POLE_RTOL = 1e-6       # beta is not evaluated closer than this to a pole
CLUSTER_RTOL = 1e-8
DEFAULT_J = 40


class CellError(ValueError):
    pass


class PoleError(CellError):
    pass


def _cells_per_period(h: float) -> int:
    n = int(round(1.0 / h))
    if n < 2 or abs(n * h - 1.0) > 1e-9:
        raise CellError(f"1/h must be an integer >= 2 (h={h})")
    return n


def _check_resolution(cell: CellGeometry, n: int, check: bool):
    if check and 2.0 * cell.radius * n < 16.0:
        raise CellError(f"h = 1/{n} puts fewer than 16 elements across the inclusion; "
                        "refine h or pass check_resolution=False")


@dataclass
class CellOperator:
    """Discrete Dirichlet problem on Q0 embedded in a periodic unit-cell grid."""

    grid: Grid
    in_q0: np.ndarray          # element mask
    interior: np.ndarray       # dof indices (on grid) of Q0 interior nodes
    K: sp.csr_matrix           # a0 * stiffness on interior nodes
    M: sp.csr_matrix           # mass on interior nodes
    load: np.ndarray           # int psi_i, i.e. Galerkin load of the constant 1
    area: float                # |Q0_h|, union of inclusion elements
    a0: float

    def solve_b(self, lam: float) -> np.ndarray:
        """b with (T - lam) b = 1 in Q0, b = 0 on the boundary."""
        A = (self.K - lam * self.M).tocsc()
        if A.shape[0] <= DENSE_MAX:
            fac = SymmetricFactor(A)
            return np.real(fac.solve(self.load))
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise PoleError(f"lam = {lam} is an eigenvalue of the cell operator") from exc
        d = np.abs(lu.U.diagonal())
        if d.min() <= 1e-13 * d.max():
            raise PoleError(f"lam = {lam} is too close to an eigenvalue of the cell operator")
        return lu.solve(self.load)

    def full_field(self, v: np.ndarray) -> np.ndarray:
        """Extend interior values by zero to all dofs of the cell grid."""
        out = np.zeros(self.grid.n_dofs)
        out[self.interior] = v
        return out


@functools.lru_cache(maxsize=16)
def cell_operator(cell: CellGeometry, a0: float, h: float) -> CellOperator:
    n = _cells_per_period(h)
    grid = Grid.unit_cell(n, bc="periodic")
    in_q0 = cell.contains(grid.centroids())
    dofs, _ = grid.element_nodes()
    count = np.zeros(grid.n_dofs, dtype=int)
    np.add.at(count, dofs.ravel(), np.repeat(in_q0.astype(int), 4))
    interior = np.flatnonzero(count == 4)
    if interior.size == 0:
        raise CellError("inclusion contains no interior node at this resolution")
    full = assemble(grid, a0 * in_q0.astype(float), 1.0, allow_zero=True)
    K = full.K[interior][:, interior].tocsr()
    M = full.M[interior][:, interior].tocsr()
    load = np.asarray(full.M @ np.ones(grid.n_dofs)).ravel()[interior]
    area = float(in_q0.sum()) * grid.h ** 2
    return CellOperator(grid, in_q0, interior, K, M, load, area, float(a0))


@dataclass
class BetaTable:
    """Eigenvalues lam_j of T with squared means <phi_j>^2 (M-normalized phi_j)."""

    lambdas: np.ndarray
    means: np.ndarray
    a0: float
    h: float
    area: float               # |Q0_h|
    total_mean_sq: float      # sum over *all* discrete modes of <phi_j>^2
    complete: bool            # True when every discrete mode is in the table
    vectors: np.ndarray | None = field(default=None, repr=False)
    operator: CellOperator | None = field(default=None, repr=False)
    # exact moments sum_j <phi_j>^2 / lam_j^p over all discrete modes, p = 1, 2
    moment1: float = float("nan")
    moment2: float = float("nan")

    @property
    def J(self) -> int:
        return len(self.lambdas)

    @property
    def mean_sq(self) -> np.ndarray:
        return self.means ** 2

    @property
    def remaining_mass(self) -> float:
        if self.complete:
            return 0.0
        return max(self.total_mean_sq - float(self.mean_sq.sum()), 0.0)

    @property
    def valid_below(self) -> float:
        """Upper end of the window where the truncated series is controlled."""
        return np.inf if self.complete else float(self.lambdas[-1])

    def clusters(self, rtol: float = CLUSTER_RTOL) -> list[tuple[float, float, int]]:
        """(lambda, summed mean_sq, multiplicity) for each group of degenerate modes."""
        out: list[list] = []
        for lam, msq in zip(self.lambdas, self.mean_sq):
            if out and abs(lam - out[-1][0]) <= rtol * lam:
                out[-1][1] += msq
                out[-1][2] += 1
            else:
                out.append([float(lam), float(msq), 1])
        return [tuple(c) for c in out]

    def poles(self) -> np.ndarray:
        return np.array([c[0] for c in self.clusters() if c[1] >= ZERO_MEAN])

    def zero_mean_points(self) -> np.ndarray:
        return np.array([c[0] for c in self.clusters() if c[1] < ZERO_MEAN])

    def beta(self, lam):
        return beta_series(self, lam)[0]


def dirichlet_cell_eigs(cell: CellGeometry, a0: float, h: float, J: int = DEFAULT_J,
                        check_resolution: bool = True) -> BetaTable:
    """First ``J`` eigenpairs of -a0*Laplace on Q0 with zero boundary values."""
    if J < 1:
        raise CellError("J must be >= 1")
    n = _cells_per_period(h)
    _check_resolution(cell, n, check_resolution)
    op = cell_operator(cell, float(a0), float(h))
    nI = len(op.interior)
    J_eff = min(J, nI)
    if nI <= DENSE_MAX or J_eff >= nI - 1:
        w, V = dense_eigs(op.K, op.M)
        w, V = w[:J_eff], V[:, :J_eff]
    else:
        from .assembly import AssembledPencil
        es = shift_invert_eigs(AssembledPencil(op.K, op.M, op.grid), 0.0, J_eff)
        w, V = es.values, es.vectors
    # sign convention: first non-negligible component positive
    for j in range(V.shape[1]):
        k = int(np.argmax(np.abs(V[:, j]) > 1e-8 * np.abs(V[:, j]).max()))
        if V[k, j] < 0:
            V[:, j] = -V[:, j]
    means = op.load @ V
    Mfac = spla.splu(op.M.tocsc())
    total = float(op.load @ Mfac.solve(op.load))
    x = spla.splu(op.K.tocsc()).solve(op.load)      # T^-1 1
    mom1 = float(op.load @ x)
    mom2 = float(x @ (op.M @ x))
    return BetaTable(np.asarray(w, dtype=float), np.asarray(means, dtype=float), float(a0),
                     float(h), op.area, total, J_eff == nI, V, op, mom1, mom2)


def beta_series(table: BetaTable, lam, accelerate: bool = True):
    """beta(lam) = lam + lam^2 sum_j <phi_j>^2/(lam_j - lam) and a truncation bound.

    Returns ``(value, bound)``; arrays in, arrays out.

    The plain partial sum converges slowly (its tail mass decays like a power
    of J).  With ``accelerate`` the two leading terms of the expansion of
    1/(lam_j - lam) in lam/lam_j are summed exactly through the moments of the
    table (Kummer's transformation), so only terms of size
    c_j lam^2 / (lam_j^2 (lam_j - lam)) are truncated.
    """
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
    lj = table.lambdas
    cj = table.mean_sq
    sig = cj >= ZERO_MEAN
    near = np.abs(lam_arr[:, None] - lj[None, :]) <= POLE_RTOL * lj[None, :]
    if (near & sig[None, :]).any():
        raise PoleError(f"beta evaluated within {POLE_RTOL:g} of a pole")
    # a (numerically) zero-mean mode contributes nothing at its own eigenvalue
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(near, 0.0, cj[None, :] / (lj[None, :] - lam_arr[:, None]))
    lJ = table.lambdas[-1]
    if accelerate and not table.complete and np.isfinite(table.moment2):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(near, 0.0, cj[None, :] * lam_arr[:, None] ** 2
                         / (lj[None, :] ** 2 * (lj[None, :] - lam_arr[:, None])))
        s = table.moment1 + lam_arr * table.moment2 + t.sum(axis=1)
        rest = max(table.moment2 - float(np.sum(cj / lj ** 2)), 0.0)
        with np.errstate(divide="ignore"):
            bound = np.where(lam_arr < lJ, lam_arr ** 4 * rest / (lJ - lam_arr), np.inf)
    else:
        s = terms.sum(axis=1)
        if table.complete:
            bound = np.zeros_like(lam_arr)
        else:
            with np.errstate(divide="ignore"):
                bound = np.where(lam_arr < lJ,
                                 lam_arr ** 2 * table.remaining_mass / (lJ - lam_arr), np.inf)
    value = lam_arr + lam_arr ** 2 * s
    if np.ndim(lam) == 0:
        return float(value[0]), float(bound[0])
    return value, bound


def beta_direct(cell: CellGeometry, a0: float, lam: float, h: float,
                check_resolution: bool = True) -> float:
    """beta(lam) = lam (1 + lam <b>) from a direct solve of (T - lam) b = 1."""
    n = _cells_per_period(h)
    _check_resolution(cell, n, check_resolution)
    op = cell_operator(cell, float(a0), float(h))
    if lam == 0.0:
        return 0.0
    b = op.solve_b(lam)
    return float(lam * (1.0 + lam * (op.load @ b)))


def mean_b(op: CellOperator, lam: float) -> float:
    return float(op.load @ op.solve_b(lam))


@dataclass(frozen=True)
class GapInterval:
    lo: float
    hi: float
    left_pole: float
    kind: str = "PoleToZero"

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, lam: float) -> bool:
        return self.lo < lam < self.hi


def _scan_zero(f, a, b, n):
    # geometric clustering towards both ends, where beta varies fastest
    t = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, n))
    xs = a + (b - a) * t
    vals = np.array([f(x) for x in xs])
    idx = np.flatnonzero((vals[:-1] < 0) & (vals[1:] >= 0))
    if idx.size == 0:
        return None
    i = idx[0]
    if vals[i + 1] == 0.0:
        return xs[i + 1]
    return brentq(f, xs[i], xs[i + 1], xtol=1e-14 * xs[i + 1], rtol=1e-15, maxiter=500)


def find_gaps(table: BetaTable, lambda_max: float, n_scan: int = 64) -> list[GapInterval]:
    """Gaps (pole, zero of beta) for every significant pole below ``lambda_max``."""
    if lambda_max > table.valid_below:
        raise CellError(f"lambda_max = {lambda_max} exceeds the truncation window "
                        f"({table.valid_below})")
    poles = table.poles()
    f = table.beta
    gaps = []
    for k, p in enumerate(poles):
        if p >= lambda_max:
            break
        a = p * (1.0 + 2.0 * POLE_RTOL)
        if k + 1 < len(poles):
            b = poles[k + 1] * (1.0 - 2.0 * POLE_RTOL)
        elif np.isfinite(table.valid_below):
            b = table.valid_below * (1.0 - 2.0 * POLE_RTOL)
        else:
            b = 2.0 * p
            while f(b) < 0:
                b *= 2.0
        zero = None
        if f(a) >= 0.0:
            # weak pole: the whole gap sits inside the guard band next to it
            d = a - p
            while d > 2.0 * POLE_RTOL * p and f(p + d) >= 0.0:
                d *= 0.5
            if d > 2.0 * POLE_RTOL * p and f(p + d) < 0.0:
                zero = brentq(f, p + d, a, xtol=1e-14 * a, rtol=1e-15, maxiter=500)
        for refine in range(4 if zero is None else 0):
            zero = _scan_zero(f, a, b, n_scan * 4 ** refine)
            if zero is not None:
                break
        if zero is None:
            raise CellError(f"no sign change of beta found after the pole at {p}")
        gaps.append(GapInterval(float(p), float(zero), float(p)))
    return gaps


def degenerate_points(table: BetaTable, lambda_max: float) -> list[float]:
    """Zero-mean eigenvalues lam_j < lambda_max with beta(lam_j) < 0 (isolated spectrum)."""
    out = []
    for lam in table.zero_mean_points():
        if lam < lambda_max and table.beta(lam) < 0:
            out.append(float(lam))
    return out


@dataclass
class HomogenizedMatrix:
    matrix: np.ndarray
    correctors: np.ndarray          # (2, n_dofs) on the periodic cell grid
    grid: Grid = field(repr=False)
    K: sp.csr_matrix = field(repr=False)
    loads: np.ndarray = field(repr=False)
    area_q1: float = 0.0
    a1: float = 1.0
    raw_asymmetry: float = 0.0     # |A12 - A21| / max|A| before symmetrization

    @property
    def max_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix).max())

    def energy(self, i: int, w: np.ndarray) -> float:
        """int_{Q1} a1 |e_i + grad w|^2 for a periodic field ``w`` on the cell grid."""
        return float(self.a1 * self.area_q1 + 2.0 * self.loads[i] @ w + w @ (self.K @ w))


def compute_ahom(cell: CellGeometry, a1: float, h: float,
                 check_resolution: bool = True) -> HomogenizedMatrix:
    """Periodic corrector problems on the matrix phase Q1 for xi = e1, e2."""
    n = _cells_per_period(h)
    _check_resolution(cell, n, check_resolution)
    grid = Grid.unit_cell(n, bc="periodic")
    in_q1 = ~cell.contains(grid.centroids())
    coeff = a1 * in_q1.astype(float)
    K = assemble(grid, coeff, 1.0, allow_zero=True).K
    dofs, _ = grid.element_nodes()
    hh = 0.5 * grid.h
    gx = hh * np.array([-1.0, 1.0, 1.0, -1.0])
    gy = hh * np.array([-1.0, -1.0, 1.0, 1.0])
    loads = np.zeros((2, grid.n_dofs))
    np.add.at(loads[0], dofs.ravel(), (coeff[:, None] * gx[None, :]).ravel())
    np.add.at(loads[1], dofs.ravel(), (coeff[:, None] * gy[None, :]).ravel())
    keep = np.flatnonzero(np.abs(K.diagonal()) > 0)
    pinned, free = keep[0], keep[1:]
    Kf = K[free][:, free].tocsc()
    try:
        lu = spla.splu(Kf)
    except RuntimeError as exc:
        raise CellError("corrector system is singular; is the matrix phase connected?") from exc
    W = np.zeros((2, grid.n_dofs))
    for i in range(2):
        W[i, free] = lu.solve(-loads[i, free])
        r = K @ W[i] + loads[i]
        if np.linalg.norm(r[keep]) > 1e-8 * max(np.linalg.norm(loads[i]), 1e-300):
            raise CellError("corrector solve is inaccurate; matrix phase may be disconnected")
        W[i, keep] -= W[i, keep].mean()
        W[i, ~np.isin(np.arange(grid.n_dofs), keep)] = 0.0
    area_q1 = float(in_q1.sum()) * grid.h ** 2
    A = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            A[i, j] = (a1 * area_q1 * (i == j) + loads[i] @ W[j] + loads[j] @ W[i]
                       + W[i] @ (K @ W[j]))
    asym = float(abs(A[0, 1] - A[1, 0]) / np.abs(A).max())
    A = 0.5 * (A + A.T)
    return HomogenizedMatrix(A, W, grid, K, loads, area_q1, float(a1), asym)
