"""Sparse symmetric / Hermitian generalized eigensolvers ``K u = lam M u``.

Shift-invert Lanczos (ARPACK's implicitly restarted Lanczos with full
reorthogonalization) on top of a symmetric-mode SuperLU factorization.  The
factorization uses diagonal pivots only, so ``P (K - s M) P^T = L D L^H`` and
the sign pattern of ``D`` gives the inertia (Sylvester's law), i.e. the
number of eigenvalues below ``s``.  Problems with at most ``DENSE_MAX`` dofs
are solved densely; the dense path doubles as a test oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_MAX = 400
DEFAULT_TOL = 1e-9
DEFAULT_MAXITER = 500
SEED = 20240607


class SolverError(RuntimeError):
    """Eigensolver or factorization failure; ``residuals`` holds best effort data."""

    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


@dataclass
class EigenPair:
    value: float
    vector: np.ndarray
    residual: float


@dataclass
class EigenSet:
    pairs: list[EigenPair]
    shift: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.pairs])

    @property
    def vectors(self) -> np.ndarray:
        if not self.pairs:
            return np.zeros((0, 0))
        return np.column_stack([p.vector for p in self.pairs])

    def __len__(self):
        return len(self.pairs)

    def clusters(self, rtol: float = 1e-8) -> list[tuple[float, int]]:
        """Group values closer than ``rtol * max(|shift|, |value|, 1)`` into (mean, size)."""
        out: list[list[float]] = []
        scale = abs(self.shift) if self.shift else 0.0
        for v in self.values:
            if out and abs(v - out[-1][-1]) <= rtol * max(scale, abs(v), 1.0):
                out[-1].append(v)
            else:
                out.append([v])
        return [(float(np.mean(c)), len(c)) for c in out]


def _as_sparse(A):
    return A.tocsc() if sp.issparse(A) else sp.csc_matrix(A)


class SymmetricFactor:
    """Factorization of a symmetric/Hermitian matrix exposing ``solve`` and ``inertia``."""

    def __init__(self, A):
        n = A.shape[0]
        self.n = n
        self.dense = n <= DENSE_MAX
        if self.dense:
            Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
            Ad = 0.5 * (Ad + Ad.conj().T)
            lu, d, perm = sla.ldl(Ad, hermitian=True)
            ev = np.linalg.eigvalsh(d)
            scale = max(np.abs(Ad).max(), 1e-300)
            if np.min(np.abs(ev)) <= 1e-13 * scale:
                raise SolverError("matrix is singular at this shift; perturb the shift")
            self.negative = int(np.sum(ev < 0))
            self._lu = sla.lu_factor(Ad)
        else:
            As = _as_sparse(A)
            try:
                lu = spla.splu(As, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                               options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise SolverError(f"factorization failed ({exc}); perturb the shift") from exc
            if not np.array_equal(lu.perm_r, lu.perm_c):
                raise SolverError("factorization used off-diagonal pivots; inertia unavailable")
            d = lu.U.diagonal()
            ad = np.abs(d)
            if ad.min() <= 1e-14 * ad.max():
                raise SolverError("matrix is numerically singular at this shift; perturb the shift")
            self.negative = int(np.sum(d.real < 0))
            self._lu = lu

    @property
    def inertia(self) -> int:
        """Number of negative eigenvalues of the factored matrix."""
        return self.negative

    def solve(self, b):
        if self.dense:
            return sla.lu_solve(self._lu, b)
        return self._lu.solve(b)


def inertia(K, M, sigma: float) -> int:
    """Number of eigenvalues of (K, M) strictly below ``sigma``."""
    return SymmetricFactor((K - sigma * M)).inertia


def _lumped(M):
    d = np.asarray(abs(M).sum(axis=1)).ravel()
    return d


def residuals(K, M, values, vectors) -> np.ndarray:
    """Relative residuals ||K u - lam M u||_{D^-1} / (max(|lam|, 1) ||u||_M), D = lumped M."""
    d = _lumped(M)
    out = []
    for lam, u in zip(values, vectors.T):
        r = K @ u - lam * (M @ u)
        rn = np.sqrt(np.real(np.vdot(r, r / d)))
        un = np.sqrt(np.real(np.vdot(u, M @ u)))
        out.append(rn / (max(abs(lam), 1.0) * un))
    return np.array(out)


def _rayleigh_ritz(K, M, V):
    G = V.conj().T @ (M @ V)
    G = 0.5 * (G + G.conj().T)
    H = V.conj().T @ (K @ V)
    H = 0.5 * (H + H.conj().T)
    w, Y = sla.eigh(H, G)
    V = V @ Y
    return w, V


def _fix_sign(V):
    # first entry with non-negligible magnitude made real positive
    for j in range(V.shape[1]):
        v = V[:, j]
        k = int(np.argmax(np.abs(v) > 1e-8 * np.abs(v).max()))
        ph = v[k] / abs(v[k])
        V[:, j] = v / ph
    return V


def _finish(K, M, w, V, tol, shift, info):
    V = _fix_sign(V)
    if not np.iscomplexobj(K.data if sp.issparse(K) else K):
        V = np.real_if_close(V, tol=1e6)
    res = residuals(K, M, w, V)
    if np.any(res > tol):
        raise SolverError(f"eigensolver did not reach tol={tol:g} "
                          f"(worst residual {res.max():.3e})", residuals=res)
    pairs = [EigenPair(float(np.real(l)), V[:, i], float(r)) for i, (l, r) in enumerate(zip(w, res))]
    return EigenSet(pairs, shift, info)


def dense_eigs(K, M):
    """All eigenpairs of a small pencil, ascending."""
    Kd = K.toarray() if sp.issparse(K) else np.asarray(K)
    Md = M.toarray() if sp.issparse(M) else np.asarray(M)
    try:
        return sla.eigh(0.5 * (Kd + Kd.conj().T), 0.5 * (Md + Md.conj().T))
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"mass matrix not positive definite ({exc})") from exc


def _start_vector(n, complex_):
    rng = np.random.default_rng(SEED)
    v = rng.standard_normal(n)
    if complex_:
        v = v + 1j * rng.standard_normal(n)
    return v


def shift_invert_eigs(pencil, sigma: float, k: int, tol: float = DEFAULT_TOL,
                      maxiter: int = DEFAULT_MAXITER, factor: SymmetricFactor | None = None,
                      guard: int = 3) -> EigenSet:
    """The ``k`` eigenpairs nearest ``sigma``, ascending; ``info['inertia']`` counts those below.

    ``guard`` extra Ritz pairs are iterated and discarded; use 0 when the wanted
    pairs are known to be well separated from a dense cluster.
    """
    K, M = pencil.K, pencil.M
    n = K.shape[0]
    if not 1 <= k < n:
        raise SolverError(f"need 1 <= k < n (k={k}, n={n})")
    if factor is None:
        factor = SymmetricFactor(K - sigma * M)
    info = {"inertia": factor.inertia, "n": n}
    if n <= DENSE_MAX:
        w, V = dense_eigs(K, M)
        idx = np.sort(np.argsort(np.abs(w - sigma), kind="stable")[:k])
        return _finish(K, M, w[idx], V[:, idx], tol, sigma, info)
    cplx = np.iscomplexobj(K.data) or np.iscomplexobj(M.data)
    dtype = complex if cplx else float
    op = spla.LinearOperator((n, n), matvec=factor.solve, dtype=dtype)
    # a few guard vectors: Ritz pairs at the edge of the window converge slowest
    kk = min(n - 1, k + guard)
    ncv = min(n, max(2 * kk + 1, 20))
    try:
        w, V = spla.eigsh(K, k=kk, M=M, sigma=sigma, which="LM", OPinv=op,
                          v0=_start_vector(n, cplx), ncv=ncv, tol=tol * 1e-3,
                          maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        # guard vectors may sit in a dense cluster; the converged part can still suffice
        if len(exc.eigenvalues) < k:
            res = residuals(K, M, exc.eigenvalues, exc.eigenvectors) if len(exc.eigenvalues) else None
            raise SolverError("Lanczos did not converge within the iteration budget",
                              residuals=res) from exc
        w, V = exc.eigenvalues, exc.eigenvectors
        info["partial"] = True
    w, V = _rayleigh_ritz(K, M, V)
    near = np.argsort(np.abs(w - sigma), kind="stable")[:k]
    res = residuals(K, M, w, V)
    rounds = 0
    # block inverse iteration polishes the Ritz vectors farthest from the shift
    while np.any(res[near] > tol) and rounds < 4:
        V = np.column_stack([factor.solve(M @ v) for v in V.T])
        w, V = _rayleigh_ritz(K, M, V)
        res = residuals(K, M, w, V)
        near = np.argsort(np.abs(w - sigma), kind="stable")[:k]
        rounds += 1
    info["polish_rounds"] = rounds
    idx = np.sort(np.argsort(np.abs(w - sigma), kind="stable")[:k])
    return _finish(K, M, w[idx], V[:, idx], tol, sigma, info)


def lower_shift(pencil) -> float:
    """A shift certified (by inertia) to lie below every eigenvalue of the pencil."""
    K, M = pencil.K, pencil.M
    scale = np.median(np.abs(K.diagonal()) / np.abs(M.diagonal()))
    sigma = -1e-3 * scale
    for _ in range(60):
        try:
            if inertia(K, M, sigma) == 0:
                return sigma
        except SolverError:
            pass
        sigma *= 4.0
    raise SolverError("could not find a shift below the spectrum")


def smallest_eigs(pencil, k: int, tol: float = DEFAULT_TOL,
                  maxiter: int = DEFAULT_MAXITER) -> EigenSet:
    """The ``k`` algebraically smallest eigenpairs."""
    K, M = pencil.K, pencil.M
    n = K.shape[0]
    if not 1 <= k < n:
        raise SolverError(f"need 1 <= k < n (k={k}, n={n})")
    if n <= DENSE_MAX:
        w, V = dense_eigs(K, M)
        return _finish(K, M, w[:k], V[:, :k], tol, None, {"n": n})
    try:
        indefinite = SymmetricFactor(M).inertia > 0
    except SolverError as exc:
        raise SolverError("mass matrix is singular") from exc
    if indefinite:
        raise SolverError("mass matrix is not positive definite")
    sigma = lower_shift(pencil)
    out = shift_invert_eigs(pencil, sigma, k, tol, maxiter)
    out.shift = None
    out.info["lower_shift"] = sigma
    return out


def count_in_interval(pencil, lo: float, hi: float) -> int:
    """Exact number of eigenvalues in (lo, hi) from two inertia counts."""
    if not lo < hi:
        raise SolverError("count_in_interval needs lo < hi")
    K, M = pencil.K, pencil.M
    if np.isinf(hi):
        n_hi = K.shape[0]
    else:
        n_hi = inertia(K, M, hi)
    return n_hi - inertia(K, M, lo)
