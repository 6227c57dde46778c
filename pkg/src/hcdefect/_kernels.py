"""Hot inner loops: bilinear element triplets and phase classification.

Every kernel exists twice, as a numba ``@njit`` function and as a vectorized
numpy function with the same signature and bit-identical output.  The numba
path is used when numba imports cleanly and ``HCDEFECT_DISABLE_NUMBA`` is not
set to a truthy value; ``set_backend`` switches at runtime (benchmarks, tests).
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_DISABLED = os.environ.get("HCDEFECT_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")
_backend = "numba" if (HAVE_NUMBA and not _DISABLED) else "numpy"

# phase codes, kept in sync with geometry.PhaseLabel
INCLUSION, MATRIX, DEFECT, BOUNDARY_INCLUSION = 0, 1, 2, 3
DEFECT_DISK, DEFECT_SQUARE = 0, 1


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    _backend = name


def _reference_matrices():
    # local node order: (0,0), (1,0), (1,1), (0,1) on the unit reference square
    k1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    m1 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    g1 = np.array([[-0.5, -0.5], [0.5, 0.5]])  # g1[a, c] = int l_a' l_c
    order = [(0, 0), (1, 0), (1, 1), (0, 1)]
    kxx = np.empty((4, 4))
    kyy = np.empty((4, 4))
    kxy = np.empty((4, 4))
    mm = np.empty((4, 4))
    for i, (ax, ay) in enumerate(order):
        for j, (bx, by) in enumerate(order):
            kxx[i, j] = k1[ax, bx] * m1[ay, by]
            kyy[i, j] = m1[ax, bx] * k1[ay, by]
            # int d_x psi_i d_y psi_j + int d_y psi_i d_x psi_j
            kxy[i, j] = g1[ax, bx] * g1[by, ay] + g1[bx, ax] * g1[ay, by]
            mm[i, j] = m1[ax, bx] * m1[ay, by]
    return kxx, kyy, kxy, mm


KXX, KYY, KXY, MREF = _reference_matrices()


# --------------------------------------------------------------------------
# element triplets
# --------------------------------------------------------------------------

def _triplets_numpy(dofs, phase, a11, a22, a12, mw, h2):
    ne = dofs.shape[0]
    ke = (a11[:, None, None] * KXX + a22[:, None, None] * KYY
          + a12[:, None, None] * KXY)
    me = (mw * h2)[:, None, None] * MREF
    pc = np.conj(phase)
    ke = ke * (pc[:, :, None] * phase[:, None, :])
    me = me * (pc[:, :, None] * phase[:, None, :])
    rows = np.broadcast_to(dofs[:, :, None], (ne, 4, 4))
    cols = np.broadcast_to(dofs[:, None, :], (ne, 4, 4))
    keep = (rows >= 0) & (cols >= 0)
    return rows[keep], cols[keep], ke[keep], me[keep]


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _triplets_numba(dofs, phase, a11, a22, a12, mw, h2):
        ne = dofs.shape[0]
        cnt = 0
        for e in range(ne):
            for i in range(4):
                if dofs[e, i] >= 0:
                    for j in range(4):
                        if dofs[e, j] >= 0:
                            cnt += 1
        rows = np.empty(cnt, dtype=np.int64)
        cols = np.empty(cnt, dtype=np.int64)
        kv = np.empty(cnt, dtype=np.complex128)
        mv = np.empty(cnt, dtype=np.complex128)
        p = 0
        for e in range(ne):
            for i in range(4):
                di = dofs[e, i]
                if di < 0:
                    continue
                for j in range(4):
                    dj = dofs[e, j]
                    if dj < 0:
                        continue
                    f = np.conj(phase[e, i]) * phase[e, j]
                    rows[p] = di
                    cols[p] = dj
                    kv[p] = (a11[e] * KXX[i, j] + a22[e] * KYY[i, j]
                             + a12[e] * KXY[i, j]) * f
                    mv[p] = (mw[e] * h2) * MREF[i, j] * f
                    p += 1
        return rows, cols, kv, mv


def element_triplets(dofs, phase, a11, a22, a12, mw, h2):
    """COO triplets of stiffness and mass for square bilinear elements.

    ``dofs`` is (ne, 4) int64 with -1 for eliminated nodes, ``phase`` the
    (ne, 4) complex Bloch factors, ``a11, a22, a12`` the per-element tensor
    coefficient and ``mw`` the per-element mass weight.  Returns
    ``rows, cols, kvals, mvals`` with complex values.
    """
    dofs = np.ascontiguousarray(dofs, dtype=np.int64)
    phase = np.ascontiguousarray(phase, dtype=np.complex128)
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (a11, a22, a12, mw)]
    if _backend == "numba":
        return _triplets_numba(dofs, phase, *args, float(h2))
    return _triplets_numpy(dofs, phase, *args, float(h2))


# --------------------------------------------------------------------------
# phase classification
# --------------------------------------------------------------------------

def _classify_numpy(px, py, eps, cx, cy, r, dkind, dsize):
    xi = np.floor(px / eps)
    yi = np.floor(py / eps)
    ly = px / eps - xi
    lz = py / eps - yi
    inside_incl = (ly - cx) ** 2 + (lz - cy) ** 2 < r * r
    # scaled inclusion centre and radius
    X = eps * (xi + cx)
    Y = eps * (yi + cy)
    rho = eps * r
    if dkind == DEFECT_DISK:
        R = dsize
        dist_c = np.sqrt(X * X + Y * Y)
        touches = dist_c <= R + rho
        contained = dist_c + rho < R
        in_defect = px * px + py * py < R * R
    else:
        s = 0.5 * dsize
        dx = np.maximum(np.abs(X) - s, 0.0)
        dy = np.maximum(np.abs(Y) - s, 0.0)
        touches = dx * dx + dy * dy <= rho * rho
        contained = (np.abs(X) + rho < s) & (np.abs(Y) + rho < s)
        in_defect = (np.abs(px) < s) & (np.abs(py) < s)
    out = np.where(in_defect, DEFECT, MATRIX)
    out = np.where(inside_incl & ~touches, INCLUSION, out)
    out = np.where(inside_incl & touches & ~contained, BOUNDARY_INCLUSION, out)
    return out.astype(np.int8)


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _classify_numba(px, py, eps, cx, cy, r, dkind, dsize):
        n = px.shape[0]
        out = np.empty(n, dtype=np.int8)
        rho = eps * r
        for k in range(n):
            xi = np.floor(px[k] / eps)
            yi = np.floor(py[k] / eps)
            ly = px[k] / eps - xi
            lz = py[k] / eps - yi
            inside_incl = (ly - cx) ** 2 + (lz - cy) ** 2 < r * r
            X = eps * (xi + cx)
            Y = eps * (yi + cy)
            if dkind == DEFECT_DISK:
                dist_c = np.sqrt(X * X + Y * Y)
                touches = dist_c <= dsize + rho
                contained = dist_c + rho < dsize
                in_defect = px[k] * px[k] + py[k] * py[k] < dsize * dsize
            else:
                s = 0.5 * dsize
                dx = max(abs(X) - s, 0.0)
                dy = max(abs(Y) - s, 0.0)
                touches = dx * dx + dy * dy <= rho * rho
                contained = (abs(X) + rho < s) and (abs(Y) + rho < s)
                in_defect = (abs(px[k]) < s) and (abs(py[k]) < s)
            if inside_incl and not touches:
                out[k] = INCLUSION
            elif inside_incl and not contained:
                out[k] = BOUNDARY_INCLUSION
            elif in_defect:
                out[k] = DEFECT
            else:
                out[k] = MATRIX
        return out


def classify(px, py, eps, cx, cy, r, dkind, dsize):
    """Phase code for each point (see the module-level constants)."""
    px = np.ascontiguousarray(px, dtype=np.float64).ravel()
    py = np.ascontiguousarray(py, dtype=np.float64).ravel()
    if _backend == "numba":
        return _classify_numba(px, py, float(eps), float(cx), float(cy), float(r),
                               int(dkind), float(dsize))
    return _classify_numpy(px, py, float(eps), float(cx), float(cy), float(r),
                           int(dkind), float(dsize))
