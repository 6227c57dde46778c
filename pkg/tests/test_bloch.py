import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcdefect.bloch import (BlochError, band_structure, bloch_cell_eigs, hausdorff_distance,
                            limit_spectrum, merge_intervals, outside_bands, spectral_distance,
                            symmetry_path, theta_grid)
from hcdefect.cell import dirichlet_cell_eigs, find_gaps


def test_hausdorff_examples():
    assert hausdorff_distance([(0, 1)], [(0, 1)]) == 0.0
    assert hausdorff_distance([(0, 1)], [(0, 1), (2, 2)]) == 1.0
    assert hausdorff_distance([(0, 1)], [(0, 0.5)]) == 0.5
    # the worst point of [0, 4] is the middle of the hole in the other set
    assert hausdorff_distance([(0, 4)], [(0, 1), (3, 4)]) == 1.0
    assert hausdorff_distance([(2, 2)], [(5, 5)]) == 3.0
    with pytest.raises(BlochError):
        hausdorff_distance([], [(0, 1)])


def test_merge_intervals():
    assert merge_intervals([(2, 3), (0, 1), (0.5, 1.5)]) == [(0.0, 1.5), (2.0, 3.0)]
    assert merge_intervals([(1, 1), (1, 2)]) == [(1.0, 2.0)]
    with pytest.raises(BlochError):
        merge_intervals([(1, 0)])


intervals = st.lists(st.tuples(st.floats(0, 10), st.floats(0, 2)).map(lambda t: (t[0], t[0] + t[1])),
                     min_size=1, max_size=5)


def _brute(A, B):
    A = merge_intervals(A)
    B = merge_intervals(B)

    def d(x, S):
        return min(max(lo - x, x - hi, 0.0) for lo, hi in S)

    xs = lambda S: np.concatenate([np.linspace(lo, hi, 401) for lo, hi in S])  # noqa: E731
    return max(max(d(x, B) for x in xs(A)), max(d(x, A) for x in xs(B)))


@settings(max_examples=60, deadline=None)
@given(intervals, intervals)
def test_hausdorff_symmetric_and_exact(A, B):
    h = hausdorff_distance(A, B)
    assert h == hausdorff_distance(B, A)
    assert h >= 0
    # dense sampling can only underestimate the exact supremum
    b = _brute(A, B)
    assert b <= h + 1e-12
    assert h - b <= 10.0 / 400 + 1e-12


@settings(max_examples=30, deadline=None)
@given(intervals, intervals, intervals)
def test_hausdorff_triangle(A, B, C):
    assert hausdorff_distance(A, C) <= hausdorff_distance(A, B) + hausdorff_distance(B, C) + 1e-12


def test_theta_sampling():
    g = theta_grid(4)
    assert g.shape == (16, 2) and g.min() == 0 and g.max() < 2 * np.pi
    p = symmetry_path(17)
    assert len(p) == 17
    assert np.allclose(p[0], 0) and np.allclose(p[-1], 0)
    assert any(np.allclose(q, [np.pi, 0]) for q in p)
    assert any(np.allclose(q, [np.pi, np.pi]) for q in p)


def test_bloch_eigs_basic(spec):
    w0 = bloch_cell_eigs((0.0, 0.0), 0.25, spec, m=16, k=6)
    assert abs(w0[0]) < 1e-8
    assert np.all(np.diff(w0) >= -1e-12)
    t = (0.7, 1.9)
    assert np.allclose(bloch_cell_eigs(t, 0.25, spec, 16, 6),
                       bloch_cell_eigs((-0.7, -1.9), 0.25, spec, 16, 6))
    assert np.allclose(bloch_cell_eigs(t, 0.25, spec, 16, 6),
                       bloch_cell_eigs((0.7 + 2 * np.pi, 1.9), 0.25, spec, 16, 6))
    with pytest.raises(BlochError):
        bloch_cell_eigs(t, 0.25, spec, m=8)


def test_bands_converge_to_limit_spectrum(spec):
    # lattice-consistent pair: cell problem and Bloch cell both use four elements per period
    table = dirichlet_cell_eigs(spec.cell, spec.a0, 1 / 4, check_resolution=False)
    gap = find_gaps(table, 10.0)[0]
    lim = limit_spectrum(table, 2 * gap.hi)
    d = []
    for eps in (0.25, 0.125):
        bs = band_structure(eps, spec, m=4, k=12, n_grid=4, n_path=9, check_resolution=False)
        assert bs.covers(lim.lam_max)
        d.append(spectral_distance(bs, lim))
    assert d[1] < d[0] < 0.1
    assert outside_bands([gap.midpoint], bs) == [True]


def test_threaded_bands_match_serial(spec):
    a = band_structure(0.25, spec, m=4, k=4, n_grid=2, n_path=5, check_resolution=False)
    b = band_structure(0.25, spec, m=4, k=4, n_grid=2, n_path=5, workers=3,
                       check_resolution=False)
    assert np.array_equal(a.bands, b.bands)
    assert a.labels.count("path") == 5
