"""Floquet-Bloch bands of the eps-periodic medium and the limit spectrum.

Rescaling x = eps * y turns the eps-periodic operator into the unit-cell operator
-div_y(a~ grad_y) with a~ = a0 in Q0 and a1 / eps^2 in Q1; its theta-quasi-periodic
eigenvalues are the Bloch eigenvalues of the original problem.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assembly import Grid, assemble
from .cell import BetaTable, degenerate_points, find_gaps
from .eigensolve import dense_eigs
from .geometry import MediumSpec

MIN_RESOLUTION = 16


class BlochError(ValueError):
    pass


@dataclass
class BandStructure:
    thetas: np.ndarray            # (n, 2) quasimomenta
    bands: np.ndarray             # (n, k) ascending per row
    eps: float
    m: int
    labels: list = field(default_factory=list)   # "grid" or "path" per sample

    @property
    def k(self) -> int:
        return self.bands.shape[1]

    @property
    def band_intervals(self) -> np.ndarray:
        """(k, 2) array of [min, max] over the sampled quasimomenta."""
        return np.column_stack([self.bands.min(axis=0), self.bands.max(axis=0)])

    def merged_intervals(self, lam_max: float | None = None) -> list[tuple[float, float]]:
        """Union of the band intervals as disjoint sorted intervals, clipped to [0, lam_max]."""
        ivs = sorted(map(tuple, self.band_intervals))
        if lam_max is not None:
            ivs = [(lo, min(hi, lam_max)) for lo, hi in ivs if lo <= lam_max]
        return merge_intervals(ivs)

    def covers(self, lam_max: float) -> bool:
        """True if the computed bands reach past lam_max at every theta."""
        return bool(np.all(self.bands[:, -1] >= lam_max))


@dataclass
class LimitSpectrum:
    band_set: list[tuple[float, float]]
    point_set: list[float]
    gaps: list[tuple[float, float]]
    lam_max: float

    def intervals(self) -> list[tuple[float, float]]:
        """Bands plus points as degenerate intervals, sorted."""
        return merge_intervals(sorted(self.band_set + [(p, p) for p in self.point_set]))


def merge_intervals(ivs) -> list[tuple[float, float]]:
    out: list[tuple[float, float]] = []
    for lo, hi in sorted(ivs):
        if hi < lo:
            raise BlochError(f"empty interval ({lo}, {hi})")
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((float(lo), float(hi)))
    return out


def theta_grid(n: int = 8) -> np.ndarray:
    t = 2.0 * np.pi * np.arange(n) / n
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    return np.column_stack([T1.ravel(), T2.ravel()])


def symmetry_path(n_points: int = 17) -> np.ndarray:
    """Gamma - X - M - Gamma, steps split in proportion to the leg lengths."""
    legs = np.array([np.pi, np.pi, np.pi * np.sqrt(2.0)])
    n_int = n_points - 1
    steps = np.floor(n_int * legs / legs.sum()).astype(int)
    steps[np.argsort(-(n_int * legs / legs.sum() - steps), kind="stable")[: n_int - steps.sum()]] += 1
    corners = np.array([[0.0, 0.0], [np.pi, 0.0], [np.pi, np.pi], [0.0, 0.0]])
    pts = [corners[0]]
    for a, b, s in zip(corners[:-1], corners[1:], steps):
        for i in range(1, s + 1):
            pts.append(a + (b - a) * i / s)
    return np.array(pts)


def bloch_coefficient(grid: Grid, eps: float, spec: MediumSpec) -> np.ndarray:
    in_q0 = spec.cell.contains(grid.centroids())
    return np.where(in_q0, spec.a0, spec.a1 / eps ** 2)


def bloch_cell_eigs(theta, eps: float, spec: MediumSpec, m: int = 16, k: int = 12,
                    check_resolution: bool = True) -> np.ndarray:
    """First k eigenvalues of the rescaled cell problem at quasimomentum theta."""
    if check_resolution and m < MIN_RESOLUTION:
        raise BlochError(f"cell resolution m = {m} is below {MIN_RESOLUTION}")
    t1, t2 = (float(t) for t in theta)
    grid = Grid.unit_cell(m, "quasiperiodic", (t1, t2))
    if not 1 <= k <= grid.n_dofs:
        raise BlochError(f"k = {k} outside [1, {grid.n_dofs}]")
    pen = assemble(grid, bloch_coefficient(grid, eps, spec))
    w, _ = dense_eigs(pen.K, pen.M)
    return np.sort(np.real(w))[:k]


def band_structure(eps: float, spec: MediumSpec, m: int = 16, k: int = 12, n_grid: int = 8,
                   n_path: int = 17, workers: int = 1,
                   check_resolution: bool = True) -> BandStructure:
    """Bands over the n_grid x n_grid theta lattice plus the symmetry path."""
    g = theta_grid(n_grid)
    p = symmetry_path(n_path)
    thetas = np.vstack([g, p])
    labels = ["grid"] * len(g) + ["path"] * len(p)
    k = min(k, m * m)

    def solve(t):
        return bloch_cell_eigs(t, eps, spec, m, k, check_resolution)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(solve, thetas))
    else:
        rows = [solve(t) for t in thetas]
    return BandStructure(thetas, np.array(rows), float(eps), int(m), labels)


def limit_spectrum(table: BetaTable, lam_max: float) -> LimitSpectrum:
    """{beta >= 0} within [0, lam_max] plus the zero-mean cell eigenvalues."""
    gaps = [(g.lo, min(g.hi, lam_max)) for g in find_gaps(table, lam_max)]
    bands, start = [], 0.0
    for lo, hi in gaps:
        bands.append((start, lo))
        start = hi
    if start < lam_max:
        bands.append((start, lam_max))
    points = [p for p in degenerate_points(table, lam_max)]
    return LimitSpectrum(merge_intervals(bands), sorted(points), gaps, float(lam_max))


def _directed(A, B) -> float:
    """sup over x in A of dist(x, B) for sorted disjoint closed interval unions."""
    B = merge_intervals(B)
    blo = np.array([b[0] for b in B])
    bhi = np.array([b[1] for b in B])

    def dist(x):
        return float(np.min(np.maximum(np.maximum(blo - x, x - bhi), 0.0)))

    # dist(., B) is piecewise linear; maxima sit at interval ends or mid-gaps of B
    mids = 0.5 * (bhi[:-1] + blo[1:])
    best = 0.0
    for lo, hi in A:
        cand = [lo, hi] + [c for c in mids if lo < c < hi]
        best = max(best, max(dist(c) for c in cand))
    return best


def hausdorff_distance(A, B) -> float:
    """Symmetric Hausdorff distance between finite unions of closed intervals.

    Points are given as degenerate intervals (p, p).
    """
    A = merge_intervals(A)
    B = merge_intervals(B)
    if not A or not B:
        raise BlochError("empty spectrum in window")
    return max(_directed(A, B), _directed(B, A))


def spectral_distance(bands: BandStructure, limit: LimitSpectrum) -> float:
    """d_H between the sampled band union and the limit spectrum on [0, lam_max]."""
    return hausdorff_distance(bands.merged_intervals(limit.lam_max), limit.intervals())


def outside_bands(lams, bands: BandStructure) -> list[bool]:
    iv = bands.band_intervals
    return [bool(not np.any((iv[:, 0] <= x) & (x <= iv[:, 1]))) for x in np.atleast_1d(lams)]
