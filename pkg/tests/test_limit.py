import numpy as np
import pytest

from hcdefect.assembly import Grid
from hcdefect.cell import beta_series, compute_ahom, dirichlet_cell_eigs, find_gaps
from hcdefect.limit import (DirectBeta, LimitError, LimitProblem, NonlinearPencilTrace,
                            SeriesBeta, coupled_modal_solve, frozen_operator, solve_limit_mode)


@pytest.fixture(scope="module")
def setup():
    from hcdefect.geometry import BoundaryPolicy, CellGeometry, DefectGeometry, MediumSpec
    spec = MediumSpec(0.025, 1.0, 1.0, BoundaryPolicy("full"), CellGeometry(0.3),
                      DefectGeometry("disk", 1.0))
    # h_cell = 1/8 has nine interior nodes: a complete table with several poles
    table = dirichlet_cell_eigs(spec.cell, spec.a0, 1 / 8, 40, check_resolution=False)
    ahom = compute_ahom(spec.cell, spec.a1, 1 / 8, check_resolution=False)
    gaps = find_gaps(table, 30.0)
    grid = Grid.square(4.0, 0.25)
    return spec, table, ahom, gaps, grid


def test_direct_and_series_beta_agree(setup):
    spec, table, ahom, gaps, grid = setup
    d = DirectBeta(table.operator)
    s = SeriesBeta(table)
    for g in gaps[:2]:
        lam = g.midpoint
        assert np.isclose(d(lam), s(lam), rtol=1e-10)
        assert np.isclose(d(lam), beta_series(table, lam)[0], rtol=1e-10)


@pytest.mark.parametrize("gi", [0, 1])
def test_reduction_matches_coupled_modal(setup, gi):
    spec, table, ahom, gaps, grid = setup
    gap = gaps[gi]
    trace = NonlinearPencilTrace()
    modes = solve_limit_mode(spec, ahom, DirectBeta(table.operator), gap, grid, trace=trace)
    cm = coupled_modal_solve(spec, ahom, table, 40, gap, grid)
    assert cm.info["Jc"] == table.J
    red = sorted(m.lambda0 for m in modes)
    assert len(red) == cm.info["count"] == len(cm.values) >= 1
    assert np.allclose(red, sorted(cm.values), rtol=0, atol=1e-6 * gap.width)
    for m in modes:
        assert gap.lo < m.lambda0 < gap.hi
        assert m.beta0 < 0
        assert m.residual < 1e-6
    assert trace.brackets and trace.rows()


def test_degenerate_cluster_found(setup):
    spec, table, ahom, gaps, grid = setup
    modes = solve_limit_mode(spec, ahom, DirectBeta(table.operator), gaps[1], grid)
    assert 2 in [m.cluster_size for m in modes]


def test_mode_normalization_and_decay(setup):
    spec, table, ahom, gaps, grid = setup
    m = solve_limit_mode(spec, ahom, DirectBeta(table.operator), gaps[0], grid)[0]
    assert np.isclose(m.norm_sq(), 1.0)
    assert m.u0[np.argmax(np.abs(m.u0))] > 0
    r = np.hypot(*grid.dof_coords().T)
    assert np.abs(m.u0[r > 3]).max() < 0.2 * np.abs(m.u0).max()


def test_frozen_operator_checks(setup):
    spec, table, ahom, gaps, grid = setup
    beta = DirectBeta(table.operator)
    g = gaps[0]
    with pytest.raises(LimitError):
        frozen_operator(g.lo - 1.0, ahom, spec, grid, beta, gap=g)
    small = Grid.square(0.5, 0.125)
    with pytest.raises(LimitError):
        frozen_operator(g.midpoint, ahom, spec, small, beta, gap=g)
    pen = frozen_operator(g.midpoint, ahom, spec, Grid.square(6.0, 0.5), beta, gap=g)
    assert pen.meta["beta"] < 0


def test_limit_problem_needs_dirichlet(setup):
    spec, table, ahom, gaps, grid = setup
    with pytest.raises(LimitError):
        LimitProblem(spec, ahom, Grid.unit_cell(8))
