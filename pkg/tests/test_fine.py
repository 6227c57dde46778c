import numpy as np
import pytest

from hcdefect.assembly import Grid, mass_matrix
from hcdefect.config import validate_config
from hcdefect.decay import DecayFitError, annulus_rms, fit_decay
from hcdefect.eigensolve import count_in_interval
from hcdefect.fine import (ConvergenceRecord, FineError, approx_field, check_eps, fine_grid,
                           fine_pencil, fitted_order, matching_radius, resonant_nodes,
                           solve_eps_modes, two_scale_error)
from hcdefect.geometry import PhaseLabel, classify_points
from hcdefect.pipeline import Workspace


def test_check_eps():
    assert check_eps(0.125) == 8
    for bad in (0.3, 0.0, 2.5):
        with pytest.raises(FineError):
            check_eps(bad)


def test_fine_grid_rules():
    g = fine_grid(0.25, 4.0, 4)
    assert np.isclose(g.h, 1 / 16) and g.nx == 128
    with pytest.raises(FineError):
        fine_grid(0.25, 4.0, 2)
    with pytest.raises(FineError):
        fine_grid(0.25, 4.1, 4)
    with pytest.raises(FineError):
        fine_grid(0.0625, 4.0, 4, dof_cap=1000)


def test_record_header_order():
    rec = ConvergenceRecord(0.25, 2.5, 0.01, 0.1, 2.0, 4.0, 4, 1.5)
    assert ConvergenceRecord.HEADER == ("eps", "lambda_eps", "err_lambda", "two_scale_err",
                                        "alpha_fit", "L", "m", "seconds")
    assert rec.row() == (0.25, 2.5, 0.01, 0.1, 2.0, 4.0, 4, 1.5)


def test_fitted_order():
    eps = np.array([0.25, 0.125, 0.0625])
    assert np.isclose(fitted_order(eps, 3 * eps ** 1.5), 1.5)
    assert np.isnan(fitted_order([0.5], [1.0]))
    assert np.isnan(fitted_order(eps, [1.0, 0.0, 1.0]))


def test_decay_fit_recovers_rate():
    g = Grid.square(6.0, 0.05)
    r = np.hypot(*g.dof_coords().T)
    u = np.exp(-1.7 * r)
    fit = fit_decay(g, u, 1.0, 0.25)
    assert abs(fit.alpha - 1.7) < 0.05
    assert fit.rms_residual < 0.05
    rms, sq = annulus_rms(g, u, np.array([1.0, 2.0, 3.0]))
    assert rms[0] > rms[1] > 0


def test_decay_fit_needs_room():
    g = Grid.square(1.0, 0.1)
    with pytest.raises(DecayFitError):
        fit_decay(g, np.ones(g.n_dofs), 0.9, 0.25)


@pytest.fixture(scope="module")
def coarse():
    cfg = validate_config({"h_macro": 0.125, "L": 4.0})
    ws = Workspace(cfg)
    return ws, ws.mode()


def test_eps_modes_counted_by_inertia(coarse):
    ws, mode = coarse
    eps = 0.5
    r = matching_radius(mode)
    grid = fine_grid(eps, 4.0, 4)
    pen = fine_pencil(ws.spec, eps, grid)
    fms = solve_eps_modes(ws.spec, eps, mode.lambda0, r, pencil=pen)
    assert len(fms) == count_in_interval(pen, mode.lambda0 - r, mode.lambda0 + r) == 1
    f = fms[0]
    M = mass_matrix(grid)
    assert np.isclose(f.u_eps @ (M @ f.u_eps), 1.0)
    assert f.residual < 1e-6
    assert abs(f.lambda_eps - mode.lambda0) < r


def test_two_scale_error_range(coarse):
    ws, mode = coarse
    fms = solve_eps_modes(ws.spec, 0.5, mode.lambda0, matching_radius(mode))
    e = two_scale_error(fms, mode, ws.spec)
    assert 0.0 <= e < 0.5
    # the sign of the fine mode does not matter
    fms[0].u_eps = -fms[0].u_eps
    assert np.isclose(two_scale_error(fms, mode, ws.spec), e)
    with pytest.raises(FineError):
        two_scale_error([], mode, ws.spec)


def test_approx_field_micro_part(coarse):
    ws, mode = coarse
    eps = 0.25
    grid = fine_grid(eps, 4.0, 4)
    a = approx_field(mode, ws.spec, eps, grid)
    x = grid.dof_coords()
    res = resonant_nodes(ws.spec, eps, x)
    lab = classify_points(x, eps, ws.spec)
    assert np.all(res[lab == PhaseLabel.INCLUSION])
    assert not np.any(res[lab == PhaseLabel.MATRIX])
    from hcdefect.assembly import interpolate
    u0 = interpolate(mode.grid, mode.u0, x)
    assert np.allclose(a[~res], u0[~res])
    assert not np.allclose(a[res], u0[res])
