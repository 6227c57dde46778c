"""Exponential decay rates from annulus norms of grid fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import MREF
from .assembly import Grid


class DecayFitError(ValueError):
    pass


@dataclass
class DecayFit:
    alpha: float
    radii: np.ndarray          # annulus mid-radii used in the fit
    log_rms: np.ndarray        # log of the annulus RMS values used in the fit
    rms_residual: float        # RMS deviation of the log data from the line


def element_l2_sq(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Per-element contributions int_e |u|^2 (sum over elements = ||u||_M^2)."""
    dofs, phase = grid.element_nodes()
    vals = np.where(dofs >= 0, u[np.maximum(dofs, 0)], 0.0) * phase
    me = MREF * grid.h ** 2
    return np.real(np.einsum("ei,ij,ej->e", vals.conj(), me, vals))


def annulus_rms(grid: Grid, u: np.ndarray, edges: np.ndarray):
    """RMS of ``u`` over each annulus edges[k] <= |x| < edges[k+1] (element centroids)."""
    r = np.hypot(*grid.centroids().T)
    e2 = element_l2_sq(grid, u)
    k = np.digitize(r, edges) - 1
    n = len(edges) - 1
    ok = (k >= 0) & (k < n)
    sq = np.bincount(k[ok], weights=e2[ok], minlength=n)
    area = np.bincount(k[ok], minlength=n) * grid.h ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        rms = np.sqrt(sq / area)
    return rms, sq


def fit_decay(grid: Grid, u: np.ndarray, r_inner: float, width: float = 0.25,
              r_outer: float | None = None, floor: float = 1e-12) -> DecayFit:
    """Least-squares rate alpha in rms(annulus) ~ exp(-alpha * r).

    Annuli of the given width run from ``r_inner`` to the inscribed radius of the
    box (or ``r_outer``); the outermost annulus is dropped because it feels the
    Dirichlet wall.  Annulus RMS, not the raw norm, so the 2*pi*r area growth
    does not bias the rate.
    """
    if r_outer is None:
        x0, x1, y0, y1 = grid.box
        r_outer = min(-x0, x1, -y0, y1)
    n = int(np.floor((r_outer - r_inner) / width + 1e-9))
    edges = r_inner + width * np.arange(n + 1)
    rms, sq = annulus_rms(grid, u, edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    mids, rms, sq = mids[:-1], rms[:-1], sq[:-1]
    use = np.isfinite(rms) & (np.sqrt(sq) > floor)
    if use.sum() < 3:
        raise DecayFitError(f"only {int(use.sum())} usable annuli (need 3)")
    x, y = mids[use], np.log(rms[use])
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    return DecayFit(float(-slope), x, y, resid)
