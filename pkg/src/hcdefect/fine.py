"""Fine-scale (finite eps) defect eigenproblem and the eps-convergence study."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import AssembledPencil, Grid, assemble, interpolate, mass_matrix
from .decay import fit_decay
from .eigensolve import SolverError, SymmetricFactor, count_in_interval, shift_invert_eigs
from .geometry import MediumSpec, PhaseLabel, classify_points, coefficients
from .limit import DefectMode

log = logging.getLogger(__name__)

DOF_CAP = 4_000_000


class FineError(ValueError):
    pass


@dataclass
class FineMode:
    eps: float
    lambda_eps: float
    u_eps: np.ndarray = field(repr=False)     # M-normalized dof vector
    grid: Grid = field(repr=False)
    residual: float
    decay_fit: dict | None = None


@dataclass
class ConvergenceRecord:
    eps: float
    lambda_eps: float
    err_lambda: float
    two_scale_err: float
    alpha_fit: float
    L: float
    m: int
    seconds: float

    HEADER = ("eps", "lambda_eps", "err_lambda", "two_scale_err", "alpha_fit", "L", "m",
              "seconds")

    def row(self) -> tuple:
        return tuple(getattr(self, k) for k in self.HEADER)


def check_eps(eps: float) -> int:
    """1/eps as an integer; the lattice must align with the origin-centred box."""
    if not 0.0 < eps <= 1.0:
        raise FineError(f"eps = {eps} must lie in (0, 1]")
    n = int(round(1.0 / eps))
    if n < 1 or abs(n * eps - 1.0) > 1e-12:
        raise FineError(f"eps = {eps} must have an integer reciprocal (lattice alignment)")
    return n


def fine_grid(eps: float, L: float, m: int, dof_cap: int = DOF_CAP) -> Grid:
    """Box [-L, L]^2 with m elements per period, periods aligned with the origin."""
    n = check_eps(eps)
    if m < 4:
        raise FineError(f"need at least 4 elements per period (m = {m})")
    if abs(L * n - round(L * n)) > 1e-9:
        raise FineError(f"L = {L} is not a whole number of periods for eps = {eps}")
    grid = Grid.square(L, eps / m)
    if grid.n_dofs > dof_cap:
        raise FineError(f"{grid.n_dofs} dofs exceed the cap {dof_cap}")
    return grid


def fine_pencil(spec: MediumSpec, eps: float, grid: Grid) -> AssembledPencil:
    a = coefficients(grid.centroids(), eps, spec)
    pen = assemble(grid, a)
    pen.meta.update(eps=eps)
    return pen


def solve_eps_modes(spec: MediumSpec, eps: float, center: float, radius: float,
                    L: float = 4.0, m: int = 4, pencil: AssembledPencil | None = None,
                    dof_cap: int = DOF_CAP) -> list[FineMode]:
    """All eigenpairs of the eps-problem in [center - radius, center + radius].

    The count comes from two inertia evaluations; the eigensolver must return
    exactly that many pairs.
    """
    grid = pencil.grid if pencil is not None else fine_grid(eps, L, m, dof_cap)
    pen = pencil if pencil is not None else fine_pencil(spec, eps, grid)
    lo, hi = center - radius, center + radius
    n = count_in_interval(pen, lo, hi)
    if n == 0:
        return []
    fac = SymmetricFactor((pen.K - center * pen.M).tocsc())
    # the band edges hold dense clusters, so no guard vectors beyond the counted ones
    es = shift_invert_eigs(pen, center, n, factor=fac, guard=0)
    pairs = [p for p in es.pairs if lo <= p.value <= hi]
    if len(pairs) != n:
        raise SolverError(f"found {len(pairs)} eigenvalues in [{lo}, {hi}], inertia says {n}")
    out = []
    for p in pairs:
        u = np.real(p.vector)
        u = u / np.sqrt(u @ (pen.M @ u))
        if u[np.argmax(np.abs(u))] < 0:
            u = -u
        out.append(FineMode(float(eps), p.value, u, grid, p.residual))
    return out


def count_near(pen: AssembledPencil, center: float, radius: float) -> int:
    return count_in_interval(pen, center - radius, center + radius)


def resonant_nodes(spec: MediumSpec, eps: float, points: np.ndarray) -> np.ndarray:
    """Points inside inclusions that carry the a0*eps^2 coefficient.

    Under the full policy this includes inclusions cut by the defect boundary.
    """
    lab = classify_points(points, eps, spec)
    out = lab == PhaseLabel.INCLUSION
    if spec.boundary_policy.kind == "full":
        out |= lab == PhaseLabel.BOUNDARY_INCLUSION
    return out


def approx_field(mode: DefectMode, spec: MediumSpec, eps: float, grid: Grid) -> np.ndarray:
    """u0(x) + lam0 * b(x/eps) * u0(x) at the fine dofs, micro part on resonant inclusions."""
    x = grid.dof_coords()
    u0 = interpolate(mode.grid, mode.u0, x)
    op = mode.cell_op
    y = np.mod(x / eps, 1.0)
    b = interpolate(op.grid, op.full_field(mode.b), y)
    micro = np.where(resonant_nodes(spec, eps, x), mode.lambda0 * b, 0.0)
    return u0 * (1.0 + micro)


def two_scale_error(fine: list[FineMode], mode: DefectMode, spec: MediumSpec) -> float:
    """L2 distance between the normalized approximation and its best match in span(fine).

    For a single fine mode this is the sign-aligned difference ||u_eps - s u_appr||.
    """
    if not fine:
        raise FineError("no fine modes to compare")
    grid = fine[0].grid
    eps = fine[0].eps
    M = mass_matrix(grid)
    a = approx_field(mode, spec, eps, grid)
    a = a / np.sqrt(a @ (M @ a))
    U = np.column_stack([f.u_eps for f in fine])
    c = U.T @ (M @ a)
    p = U @ c
    pn = np.sqrt(p @ (M @ p))
    if pn == 0.0:
        return float(np.sqrt(2.0))
    d = p / pn - a
    return float(np.sqrt(d @ (M @ d)))


def fine_decay_fit(fm: FineMode, beta_at_lambda0: float, a1: float, r_inner: float = 1.0,
                   width: float = 0.25) -> dict:
    """Fitted decay rate of u_eps outside the defect and the reference rate sqrt(-beta/a1)."""
    fit = fit_decay(fm.grid, fm.u_eps, r_inner, width)
    out = {"alpha_fit": fit.alpha,
           "alpha_bound": float(np.sqrt(max(-beta_at_lambda0, 0.0) / a1)),
           "fit_rms_residual": fit.rms_residual,
           "n_annuli": int(len(fit.radii))}
    fm.decay_fit = out
    return out


def fitted_order(eps, err) -> float:
    """Least-squares slope of log(err) against log(eps)."""
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(err, dtype=float)
    if len(eps) < 2 or np.any(err <= 0):
        return float("nan")
    return float(np.polyfit(np.log(eps), np.log(err), 1)[0])


@dataclass
class SweepResult:
    records: list[ConvergenceRecord]
    modes: dict                  # eps -> list[FineMode]
    counts: dict                 # eps -> inertia count within the matching radius
    order_lambda: float
    order_two_scale: float
    radius: float


def matching_radius(mode: DefectMode) -> float:
    """Half the distance from lambda0 to the nearer gap edge."""
    g = mode.gap
    return 0.5 * min(mode.lambda0 - g.lo, g.hi - mode.lambda0)


def eps_sweep(spec: MediumSpec, mode: DefectMode, eps_list, L: float = 4.0, m: int = 4,
              radius: float | None = None, dof_cap: int = DOF_CAP) -> SweepResult:
    """Fine solves along eps_list compared with the limit mode."""
    r = matching_radius(mode) if radius is None else radius
    records, modes, counts = [], {}, {}
    for eps in eps_list:
        t0 = time.perf_counter()
        fms = solve_eps_modes(spec, eps, mode.lambda0, r, L, m, dof_cap=dof_cap)
        counts[eps] = len(fms)
        modes[eps] = fms
        if not fms:
            raise FineError(f"no eigenvalue of the eps = {eps} problem within {r} of "
                            f"lambda0 = {mode.lambda0}")
        lam = min((f.lambda_eps for f in fms), key=lambda v: abs(v - mode.lambda0))
        ts = two_scale_error(fms, mode, spec)
        fit = fine_decay_fit(fms[0], mode.beta0, spec.a1, spec.defect.extent)
        dt = time.perf_counter() - t0
        records.append(ConvergenceRecord(float(eps), float(lam), abs(lam - mode.lambda0), ts,
                                         fit["alpha_fit"], float(L), int(m), dt))
        log.info("eps = %g: lambda = %.12g, two-scale error %.4g (%.1fs)", eps, lam, ts, dt)
    eps_arr = [rec.eps for rec in records]
    return SweepResult(records, modes, counts,
                       fitted_order(eps_arr, [rec.err_lambda for rec in records]),
                       fitted_order(eps_arr, [rec.two_scale_err for rec in records]), r)
