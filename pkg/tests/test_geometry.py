import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcdefect import _kernels
from hcdefect.geometry import (BoundaryPolicy, CellGeometry, DefectGeometry, GeometryError,
                               MediumSpec, PhaseLabel, classify_point, classify_points,
                               coefficients)


def test_labels_at_known_points(spec):
    eps = 0.25
    assert classify_point((0.0, 0.0), eps, spec) == PhaseLabel.DEFECT
    # centre of the period cell [1, 1.25]^2 lies in an inclusion outside the defect
    assert classify_point((1.125, 1.125), eps, spec) == PhaseLabel.INCLUSION
    # corner of a cell is matrix
    assert classify_point((1.5, 1.5), eps, spec) == PhaseLabel.MATRIX


def test_cut_inclusions_are_flagged(spec):
    eps = 0.25
    x = np.linspace(-2, 2, 401)
    pts = np.array(np.meshgrid(x, x)).reshape(2, -1).T
    lab = classify_points(pts, eps, spec)
    assert np.any(lab == PhaseLabel.BOUNDARY_INCLUSION)
    r = np.hypot(*pts.T)
    # nothing labelled as inclusion inside the defect
    assert not np.any((lab == PhaseLabel.INCLUSION) & (r < 1.0 - 1e-12))


@pytest.mark.parametrize("kind,expect", [("full", 0.025 / 16), ("removed", 1.0)])
def test_boundary_policies(kind, expect):
    spec = MediumSpec(0.025, 1.0, 1.0, BoundaryPolicy(kind), CellGeometry(0.3),
                      DefectGeometry("disk", 1.0))
    eps = 0.25
    x = np.linspace(-2, 2, 801)
    pts = np.array(np.meshgrid(x, x)).reshape(2, -1).T
    lab = classify_points(pts, eps, spec)
    a = coefficients(pts, eps, spec)
    assert np.allclose(a[lab == PhaseLabel.BOUNDARY_INCLUSION], expect)


def test_scaled_policy_needs_valid_theta():
    with pytest.raises(GeometryError):
        BoundaryPolicy("scaled", theta=3.0)


def test_nonpositive_eps_rejected(spec):
    with pytest.raises(GeometryError):
        classify_points(np.zeros((1, 2)), 0.0, spec)


@settings(max_examples=60, deadline=None)
@given(st.floats(2.0, 3.0), st.floats(-3.0, 3.0), st.integers(-4, 4), st.integers(-4, 4))
def test_periodic_outside_defect(x, y, i, j):
    spec = MediumSpec(0.025, 1.0, 1.0, BoundaryPolicy("full"), CellGeometry(0.3),
                      DefectGeometry("disk", 1.0))
    eps = 0.125
    p = np.array([x, y])
    q = p + eps * np.array([i, j])
    if np.hypot(*q) <= 1.5:
        return
    assert classify_point(p, eps, spec) == classify_point(q, eps, spec)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_numba_and_numpy_classifiers_agree(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3, 3, size=(500, 2))
    args = (pts[:, 0], pts[:, 1], 0.25, 0.5, 0.5, 0.3, 0, 1.0)
    ref = _kernels._classify_numpy(*args)
    assert np.array_equal(_kernels.classify(*args), ref)


def test_straddling_inclusion_and_coefficient(spec):
    # scaled inclusion centre c, radius 0.075 at eps = 1/4: it straddles |x| = 1
    # exactly when |c| - 0.075 < 1 < |c| + 0.075
    eps, r = 0.25, 0.3 * 0.25
    for corner, straddles in (((0.75, 0.75), False), ((0.75, 0.25), True),
                              ((0.5, 0.75), False)):
        c = np.array(corner) + 0.5 * eps
        d = np.hypot(*c)
        assert (d - r < 1.0 < d + r) == straddles
        want = PhaseLabel.BOUNDARY_INCLUSION if straddles else (
            PhaseLabel.INCLUSION if d - r > 1.0 else PhaseLabel.DEFECT)
        assert classify_point(c, eps, spec) == want
    one = MediumSpec(1.0, 1.0, 1.0)
    assert np.isclose(coefficients(np.array([[2.5625, 2.5625]]), 0.125, one)[0], 1 / 64)
