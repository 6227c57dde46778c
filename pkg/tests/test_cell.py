import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import jn_zeros

from hcdefect.cell import (ZERO_MEAN, CellError, PoleError, beta_direct, beta_series,
                           compute_ahom, dirichlet_cell_eigs, find_gaps)
from hcdefect.geometry import CellGeometry

CELL = CellGeometry(0.3)


@pytest.fixture(scope="module")
def table64():
    return dirichlet_cell_eigs(CELL, 1.0, 1 / 64, 20)


@pytest.fixture(scope="module")
def complete16():
    return dirichlet_cell_eigs(CELL, 1.0, 1 / 16, 400, check_resolution=False)


def test_bessel_lowest(table64):
    oracle = (jn_zeros(0, 1)[0] / 0.3) ** 2
    assert abs(table64.lambdas[0] - oracle) / oracle < 0.03


def test_second_cluster_is_a_zero_mean_pair(table64):
    lam, msq, mult = table64.clusters()[1]
    assert mult == 2
    assert msq < 1e-20


def test_a0_scales_eigenvalues():
    t1 = dirichlet_cell_eigs(CELL, 1.0, 1 / 32, 5)
    t2 = dirichlet_cell_eigs(CELL, 0.1, 1 / 32, 5)
    assert np.allclose(t2.lambdas, 0.1 * t1.lambdas)
    assert np.allclose(t2.mean_sq, t1.mean_sq)


def test_mass_identity(complete16):
    # Parseval: the means of a complete basis add up to the mass of the projected 1,
    # which is below |Q0_h| because 1 is not in the zero-trace space
    assert complete16.complete
    assert np.isclose(complete16.mean_sq.sum(), complete16.total_mean_sq, rtol=1e-10)
    assert complete16.total_mean_sq < complete16.area


def test_complete_series_equals_direct(complete16):
    for lam in (5.0, 80.0, 150.0, 700.0):
        try:
            s, bound = beta_series(complete16, lam)
        except PoleError:
            continue
        d = beta_direct(CELL, 1.0, lam, 1 / 16, check_resolution=False)
        assert bound == 0.0
        assert abs(s - d) <= 1e-9 * max(1.0, abs(d))


def test_truncated_series_respects_bound(table64):
    g = find_gaps(table64, 0.99 * table64.valid_below)[0]
    for f in (0.1, 0.5, 0.9):
        lam = g.lo + f * g.width
        d = beta_direct(CELL, 1.0, lam, 1 / 64)
        for acc in (True, False):
            s, bound = beta_series(table64, lam, accelerate=acc)
            assert abs(s - d) <= bound


def test_acceleration_beats_partial_sum(table64):
    g = find_gaps(table64, 0.99 * table64.valid_below)[0]
    lam = g.midpoint
    d = beta_direct(CELL, 1.0, lam, 1 / 64)
    err_acc = abs(beta_series(table64, lam)[0] - d)
    err_plain = abs(beta_series(table64, lam, accelerate=False)[0] - d)
    assert err_acc < 0.1 * err_plain


def test_beta_zero_and_pole(table64):
    assert beta_series(table64, 0.0)[0] == 0.0
    with pytest.raises(PoleError):
        beta_series(table64, table64.lambdas[0])


def test_gap_structure(table64):
    gaps = find_gaps(table64, 0.99 * table64.valid_below)
    assert gaps[0].lo == table64.lambdas[0]
    for g in gaps:
        assert g.lo < g.hi
        assert abs(beta_series(table64, g.hi)[0]) <= 1e-8 * g.hi
        assert beta_series(table64, g.midpoint)[0] < 0
        assert g.contains(g.midpoint) and not g.contains(g.hi + 1.0)
    poles = table64.poles()
    assert all(table64.mean_sq[np.isclose(table64.lambdas, p)].sum() >= ZERO_MEAN for p in poles)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_beta_monotone_between_poles(u, v):
    t = dirichlet_cell_eigs(CELL, 1.0, 1 / 16, 400, check_resolution=False)
    edges = np.concatenate([[0.0], [c[0] for c in t.clusters()]])
    k = int(u * (len(edges) - 2))
    a, b = edges[k], edges[k + 1]
    x1 = a + (b - a) * (0.01 + 0.98 * min(u, v))
    x2 = a + (b - a) * (0.01 + 0.98 * max(u, v))
    assert beta_series(t, x1)[0] <= beta_series(t, x2)[0] + 1e-9 * (1 + abs(beta_series(t, x2)[0]))


def test_resolution_check():
    with pytest.raises(CellError):
        dirichlet_cell_eigs(CELL, 1.0, 1 / 8)
    t = dirichlet_cell_eigs(CELL, 0.025, 1 / 4, check_resolution=False)
    assert t.J == 1 and t.complete
    assert np.isclose(t.lambdas[0], 96 * 0.025)


@pytest.fixture(scope="module")
def ahom64():
    return compute_ahom(CELL, 1.0, 1 / 64)


def test_ahom_bounds_and_symmetry(ahom64):
    A = ahom64.matrix
    assert ahom64.raw_asymmetry < 1e-12
    assert abs(A[0, 0] - A[1, 1]) <= 1e-3 * A[0, 0]
    assert abs(A[0, 1]) <= 1e-6 * A[0, 0]
    assert 0 < A[0, 0] <= ahom64.a1 * ahom64.area_q1
    # Hashin-Shtrikman upper bound for insulating disks
    f = np.pi * 0.3 ** 2
    assert A[0, 0] <= (1 - f) / (1 + f) * 1.05


def test_ahom_scales_with_a1():
    A1 = compute_ahom(CELL, 1.0, 1 / 32).matrix
    A3 = compute_ahom(CELL, 3.0, 1 / 32).matrix
    assert np.allclose(A3, 3 * A1)


def test_ahom_corrector_is_energy_minimizer(ahom64, rng):
    w = ahom64.correctors[0]
    e0 = ahom64.energy(0, w)
    assert np.isclose(e0, ahom64.matrix[0, 0])
    for _ in range(5):
        d = rng.standard_normal(w.shape) * 1e-3
        assert ahom64.energy(0, w + d) >= e0 - 1e-12


def test_lattice_cell_ahom():
    a = compute_ahom(CELL, 1.0, 1 / 4, check_resolution=False)
    assert np.isclose(a.matrix[0, 0], 0.6041666666666666, rtol=1e-12)
