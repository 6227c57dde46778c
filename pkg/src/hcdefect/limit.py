"""Two-scale limit defect problem.

Two independent routes to the gap eigenvalues of the limit operator:

* the beta-reduction: find lam with a zero eigenvalue of the frozen operator
  ``B(lam) = -div(A grad) - beta(lam) on the matrix region, - lam on the defect``
  (A = A^hom outside the defect, a2*I inside);
* a coupled-modal Galerkin discretization of the two-scale form with micro
  ansatz ``v(x, y) = sum_j c_j(x) phi_j(y)``, a linear but larger pencil.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .assembly import AssembledPencil, Grid, assemble, mass_matrix
from .cell import (ZERO_MEAN, BetaTable, CellOperator, GapInterval, HomogenizedMatrix,
                   beta_series)
from .decay import DecayFit, fit_decay
from .eigensolve import EigenSet, SolverError, SymmetricFactor, count_in_interval, \
    residuals, shift_invert_eigs
from .geometry import MediumSpec

log = logging.getLogger(__name__)


class LimitError(ValueError):
    pass


class DirectBeta:
    """beta(lam) from direct Q0 solves; also hands out the micro profile b."""

    def __init__(self, op: CellOperator):
        self.operator = op

    def b(self, lam: float) -> np.ndarray:
        return self.operator.solve_b(lam)

    def __call__(self, lam: float) -> float:
        if lam == 0.0:
            return 0.0
        return float(lam * (1.0 + lam * (self.operator.load @ self.b(lam))))


class SeriesBeta:
    """beta(lam) from a (possibly truncated) modal table."""

    def __init__(self, table: BetaTable):
        self.table = table
        self.operator = table.operator

    def b(self, lam: float) -> np.ndarray:
        t = self.table
        return t.vectors @ (t.means / (t.lambdas - lam))

    def __call__(self, lam: float) -> float:
        return beta_series(self.table, lam)[0]


@dataclass
class NonlinearPencilTrace:
    samples: list = field(default_factory=list)     # (lam, beta, n_negative, nu values)
    brackets: list = field(default_factory=list)    # (lam_a, lam_b, jump)

    def add(self, lam, beta, nneg, nus):
        self.samples.append((float(lam), float(beta), int(nneg), [float(v) for v in nus]))

    def rows(self):
        """Flat (lam, beta, n_negative, k, nu) rows sorted by lam."""
        out = []
        for lam, beta, nneg, nus in sorted(self.samples, key=lambda s: s[0]):
            for k, v in enumerate(nus):
                out.append((lam, beta, nneg, k, v))
        return out


@dataclass
class DefectMode:
    lambda0: float
    u0: np.ndarray               # macro field on ``grid`` dofs
    grid: Grid
    b: np.ndarray                # micro profile on the cell interior nodes
    cell_op: CellOperator
    gap: GapInterval
    residual: float
    nu: float
    cluster_size: int = 1
    beta0: float = float("nan")
    truncation_bound: float = float("nan")
    omega1_mask: np.ndarray | None = field(default=None, repr=False)
    decay_fit: dict | None = None

    @property
    def micro_scale(self) -> float:
        """v(x, y) = micro_scale * b(y) * u0(x) on the matrix region."""
        return self.lambda0

    def norm_sq(self) -> float:
        """||u0 + v||^2 in L2(R^2 x Q), cross term included."""
        op = self.cell_op
        Mfull = mass_matrix(self.grid)
        M1 = mass_matrix(self.grid, self.omega1_mask.astype(float))
        u_sq = float(self.u0 @ (Mfull @ self.u0))
        u1_sq = float(self.u0 @ (M1 @ self.u0))
        mb = float(op.load @ self.b)
        bb = float(self.b @ (op.M @ self.b))
        lam = self.lambda0
        return u_sq + u1_sq * (2.0 * lam * mb + lam ** 2 * bb)


class LimitProblem:
    """Assembled macro operators on a Dirichlet box, reused across lam."""

    def __init__(self, spec: MediumSpec, ahom: HomogenizedMatrix, grid: Grid):
        if grid.bc != "dirichlet":
            raise LimitError("limit problem needs a Dirichlet box")
        self.spec = spec
        self.ahom = ahom
        self.grid = grid
        cen = grid.centroids()
        self.in_defect = spec.defect.contains(cen)
        coeff = np.empty((grid.n_elements, 2, 2))
        coeff[:] = ahom.matrix
        coeff[self.in_defect] = spec.a2 * np.eye(2)
        self.K = assemble(grid, coeff).K
        self.M1 = mass_matrix(grid, (~self.in_defect).astype(float))
        self.M2 = mass_matrix(grid, self.in_defect.astype(float))
        self.M = (self.M1 + self.M2).tocsr()
        self.half_width = min(-grid.box[0], grid.box[1], -grid.box[2], grid.box[3])

    def B(self, lam: float, beta_val: float) -> sp.csr_matrix:
        return (self.K - beta_val * self.M1 - lam * self.M2).tocsr()

    def decay_rate(self, beta_val: float) -> float:
        if beta_val >= 0:
            return 0.0
        return float(np.sqrt(-beta_val / self.ahom.max_eig))

    def truncation_bound(self, beta_val: float) -> float:
        return float(np.exp(-self.decay_rate(beta_val) * self.half_width))


def frozen_operator(lam: float, ahom: HomogenizedMatrix, spec: MediumSpec, grid: Grid,
                    beta, gap: GapInterval | None = None, check_box: bool = True,
                    problem: LimitProblem | None = None) -> AssembledPencil:
    """Pencil (B(lam), M) whose zero eigenvalue marks a limit defect eigenvalue."""
    if gap is not None and not gap.lo < lam <= gap.hi:
        raise LimitError(f"lam = {lam} is outside the gap ({gap.lo}, {gap.hi})")
    prob = problem or LimitProblem(spec, ahom, grid)
    bval = beta(lam)
    if check_box and prob.truncation_bound(bval) > 1e-4:
        raise LimitError(f"box half-width {prob.half_width} too small for decay rate "
                         f"{prob.decay_rate(bval):.3g} at lam = {lam}")
    return AssembledPencil(prob.B(lam, bval), prob.M, grid, {"lam": lam, "beta": bval})


def _nu_k(prob, beta, lam, k, nev, trace):
    """k-th smallest eigenvalue (1-based) of (B(lam), M) plus its vector."""
    bval = beta(lam)
    B = prob.B(lam, bval)
    fac = SymmetricFactor(B)
    nneg = fac.inertia
    pen = AssembledPencil(B, prob.M, prob.grid)
    # B carries lam and beta(lam) as coefficients; residuals are measured on that scale
    tol = 1e-9 * max(1.0, abs(bval), lam)
    es = shift_invert_eigs(pen, 0.0, nev, tol=tol, factor=fac)
    w = es.values
    neg = np.flatnonzero(w < 0)[::-1]      # closest to zero first
    pos = np.flatnonzero(w >= 0)
    trace.add(lam, bval, nneg, w)
    if nneg >= k:
        i = nneg - k
        j = neg[i] if i < len(neg) else None
    else:
        i = k - nneg - 1
        j = pos[i] if i < len(pos) else None
    if j is None:
        # at a root the factorization and the eigensolver may disagree on the
        # sign of the vanishing eigenvalue; that eigenvalue is the answer
        j0 = int(np.argmin(np.abs(w)))
        if abs(w[j0]) <= 1e-8 * max(1.0, abs(bval), lam) and abs(nneg - k) <= 1:
            j = j0
        else:
            raise SolverError("not enough eigenvalues resolved near zero")
    return w[j], es.vectors[:, j], nneg, bval


def solve_limit_mode(spec: MediumSpec, ahom: HomogenizedMatrix, beta, gap: GapInterval,
                     grid: Grid, n_scan: int = 32, problem: LimitProblem | None = None,
                     trace: NonlinearPencilTrace | None = None) -> list[DefectMode]:
    """Roots of nu(lam) = 0 in the gap via inertia brackets and Brent refinement."""
    prob = problem or LimitProblem(spec, ahom, grid)
    trace = trace if trace is not None else NonlinearPencilTrace()
    op = beta.operator
    width = gap.hi - gap.lo

    def count(lam):
        bval = beta(lam)
        n = SymmetricFactor(prob.B(lam, bval)).inertia
        trace.add(lam, bval, n, [])
        return n

    lams = gap.lo + width * np.arange(1, n_scan + 1) / n_scan
    lams[-1] = gap.hi
    lams = np.concatenate([[gap.lo + width * 1e-4], lams])
    counts = [count(l) for l in lams]
    brackets = []   # (lo, hi, n_lo, jump)

    def split(a, b, na, nb):
        if nb == na:
            return
        if nb - na == 1 or (b - a) <= 1e-10 * b:
            brackets.append((a, b, na, nb - na))
            return
        m = 0.5 * (a + b)
        nm = count(m)
        split(a, m, na, nm)
        split(m, b, nm, nb)

    for i in range(len(lams) - 1):
        split(lams[i], lams[i + 1], counts[i], counts[i + 1])
    trace.brackets = [(a, b, d) for a, b, _, d in brackets]

    modes = []
    for a, b, na, jump in brackets:
        if jump == 1:
            k = na + 1

            def f(lam):
                return _nu_k(prob, beta, lam, k, 6, trace)[0]

            lam0 = brentq(f, a, b, xtol=1e-13 * b, rtol=1e-15, maxiter=200)
            roots = [(lam0, k)]
        else:
            lam0 = 0.5 * (a + b)
            roots = [(lam0, na + i + 1) for i in range(jump)]
        for lam0, k in roots:
            nu, u0, _, bval = _nu_k(prob, beta, lam0, k, max(6, jump + 4), trace)
            u0 = np.real(u0)
            res = residuals(prob.B(lam0, bval), prob.M, [0.0], u0[:, None])[0]
            bvec = beta.b(lam0)
            mode = DefectMode(float(lam0), u0, grid, bvec, op, gap, float(res), float(nu),
                              jump, float(bval), prob.truncation_bound(bval),
                              ~prob.in_defect)
            scale = np.sqrt(mode.norm_sq())
            mode.u0 = u0 / scale
            if mode.u0[np.argmax(np.abs(mode.u0))] < 0:
                mode.u0 = -mode.u0
            modes.append(mode)
    return modes


def coupled_modal_pencil(spec: MediumSpec, ahom: HomogenizedMatrix, table: BetaTable, Jc: int,
                         grid: Grid, problem: LimitProblem | None = None) -> AssembledPencil:
    """Block pencil for u0 and micro amplitudes c_j on matrix-region nodes."""
    prob = problem or LimitProblem(spec, ahom, grid)
    Jc = min(Jc, table.J)
    M1 = prob.M1.tocsr()
    support = np.flatnonzero(np.abs(M1.diagonal()) > 0)
    M1r = M1[support][:, support]
    M1c = M1[:, support]
    Kblocks = [[None] * (Jc + 1) for _ in range(Jc + 1)]
    Mblocks = [[None] * (Jc + 1) for _ in range(Jc + 1)]
    Kblocks[0][0] = prob.K
    Mblocks[0][0] = prob.M
    for j in range(Jc):
        Kblocks[j + 1][j + 1] = table.lambdas[j] * M1r
        Mblocks[j + 1][j + 1] = M1r
        Mblocks[0][j + 1] = table.means[j] * M1c
        Mblocks[j + 1][0] = table.means[j] * M1c.T
    K = sp.bmat(Kblocks, format="csr")
    M = sp.bmat(Mblocks, format="csr")
    return AssembledPencil(K, M, grid, {"Jc": Jc, "n_macro": grid.n_dofs,
                                       "n_support": len(support)})


def _tight_shift(pen, windows, total, rounds: int = 12) -> float:
    lo = min(a for a, _ in windows)
    hi = max(b for _, b in windows)
    for _ in range(rounds):
        mid = 0.5 * (lo + hi)
        left = count_in_interval(pen, lo, mid)
        if left == total:
            hi = mid
        elif left == 0:
            lo = mid
        else:
            break
    return 0.5 * (lo + hi)


def coupled_modal_solve(spec: MediumSpec, ahom: HomogenizedMatrix, table: BetaTable, Jc: int,
                        gap: GapInterval, grid: Grid,
                        problem: LimitProblem | None = None) -> EigenSet:
    """Gap eigenvalues of the coupled-modal two-scale discretization."""
    pen = coupled_modal_pencil(spec, ahom, table, Jc, grid, problem)
    Jc_eff = pen.meta["Jc"]
    # zero-mean modes give huge exactly degenerate clusters; keep them out of the window
    skip = [lam for lam, msq in zip(table.lambdas[:Jc_eff], table.mean_sq[:Jc_eff])
            if msq < ZERO_MEAN and gap.lo < lam < gap.hi]
    lo = gap.lo * (1.0 + 1e-6)
    hi = gap.hi * (1.0 - 1e-9) if Jc_eff > 0 else gap.hi
    edges = [lo] + sorted(x for s in skip for x in (s * (1 - 1e-6), s * (1 + 1e-6))) + [hi]
    windows = list(zip(edges[0::2], edges[1::2]))
    total = sum(count_in_interval(pen, a, b) for a, b in windows)
    info = {"count": total, "Jc": Jc_eff, "windows": windows}
    if total == 0:
        return EigenSet([], gap.midpoint, info)
    keep, sigma = [], gap.midpoint
    for attempt in range(2):
        if attempt == 1:
            # the micro blocks put dense clusters at the gap edges; slice the
            # window with inertia counts until it hugs the wanted eigenvalues
            sigma = _tight_shift(pen, windows, total)
        try:
            es = shift_invert_eigs(pen, sigma, total, guard=0)
        except SolverError:
            continue
        keep = [p for p in es.pairs if any(a < p.value < b for a, b in windows)]
        if len(keep) == total:
            break
    info["shift"] = sigma
    out = EigenSet(keep, sigma, info)
    if len(keep) != total:
        raise SolverError(f"coupled-modal solve found {len(keep)} gap eigenvalues, "
                          f"inertia says {total}")
    return out


def limit_decay_fit(mode: DefectMode, ahom: HomogenizedMatrix, beta, a1: float,
                    width: float = 0.25, r_inner: float | None = None) -> dict:
    """Fitted decay rate of u0 outside the defect and the two reference rates."""
    b0 = beta(mode.lambda0) if np.isnan(mode.beta0) else mode.beta0
    if r_inner is None:
        r_inner = 1.0       # unit defect; callers pass the defect extent
    fit: DecayFit = fit_decay(mode.grid, mode.u0, r_inner, width)
    out = {"alpha_fit": fit.alpha,
           "alpha_theory_a1": float(np.sqrt(-b0 / a1)),
           "alpha_theory_ahom": float(np.sqrt(-b0 / ahom.max_eig)),
           "fit_rms_residual": fit.rms_residual,
           "n_annuli": int(len(fit.radii))}
    mode.decay_fit = out
    return out
