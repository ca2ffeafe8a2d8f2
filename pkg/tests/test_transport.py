import math

import numpy as np
import pytest

import roughflow as rf
from roughflow.flow import FlowEvaluator
from roughflow.geometry import ball_set, box, sample_uniform
from roughflow.transport import (
    GridSpec,
    backtrack_many,
    bump_test_function,
    commutator_field,
    coordinate,
    indicator_mollified,
    l2_identity_residual,
    lagrangian_solution,
    rho_convergence_study,
    smooth_bump,
    solve_eulerian,
    solve_lagrangian,
    weak_residual,
)

from oracles import rotation_flow


# --- initial data ------------------------------------------------------------


def test_initial_data_bounds():
    x = sample_uniform(rf.unit_ball(), 5000, 0)
    for rho in (coordinate(0), smooth_bump([0.2, 0, 0], 0.4, 2.0),
                indicator_mollified(ball_set([0, 0, 0], 0.3), 0.05, 8)):
        assert np.abs(rho(x)).max() <= rho.sup_bound + 1e-12
    b = smooth_bump([0.2, 0, 0], 0.4, 2.0)
    assert b([0.2, 0, 0])[0] == pytest.approx(2.0)
    assert b([0.7, 0, 0])[0] == 0.0


def test_indicator_mollified_profile():
    rho = indicator_mollified(ball_set([0, 0, 0], 0.3), 0.05, 8)
    v = rho(np.array([[0.0, 0, 0], [0.3, 0, 0], [0.4, 0, 0]]))
    assert v[0] == pytest.approx(1.0)
    assert 0.3 < v[1] < 0.7
    assert v[2] == 0.0


# --- Lagrangian ---------------------------------------------------------------


def test_lagrangian_equal_times(shear_field):
    fl = FlowEvaluator(shear_field, 0.05)
    x = sample_uniform(shear_field.domain, 50, 1)
    rho = coordinate(0)
    assert np.array_equal(solve_lagrangian(fl, rho, 0.3, 0.3, x), x[:, 0])


def test_lagrangian_zero_field(zero):
    fl = FlowEvaluator(zero, 0.1)
    x = sample_uniform(zero.domain, 50, 1)
    assert np.array_equal(solve_lagrangian(fl, coordinate(1), 0.0, 2.0, x), x[:, 1])


def test_lagrangian_rotation_oracle(rotation_field):
    fl = FlowEvaluator(rotation_field, 1e-3)
    x = np.array([[0.5, 0.0, 0.0]])
    expected = rotation_flow(0.0, np.pi / 2, x)[0, 0]  # first coordinate of (0, -0.5, 0)
    assert solve_lagrangian(fl, coordinate(0), 0.0, np.pi / 2, x)[0] == pytest.approx(
        expected, abs=1e-6
    )


def test_solution_initial_condition_and_batch(contraction_field):
    fl = FlowEvaluator(contraction_field, 0.02)
    rho = smooth_bump([0.1, 0, 0], 0.3)
    sol = lagrangian_solution(fl, rho, 0.0)
    x = sample_uniform(contraction_field.domain, 200, 2)
    assert np.array_equal(sol(0.0, x), rho(x))
    times = [-0.5, 0.25, 0.0, 0.5]
    many = sol.at_times(times, x)
    for k, t in enumerate(times):
        np.testing.assert_allclose(many[k], sol(t, x), atol=1e-9)


def test_backtrack_many_matches_direct(shear_field):
    fl = FlowEvaluator(shear_field, 0.05)
    x = sample_uniform(shear_field.domain, 30, 3)
    times = [0.2, -0.4, 0.6]
    feet = backtrack_many(fl, 0.0, times, x)
    for k, t in enumerate(times):
        np.testing.assert_allclose(feet[k], fl(0.0, t, x), atol=1e-10)


def test_maximum_principle_lagrangian(shear_field):
    fl = FlowEvaluator(shear_field, 0.05)
    rho = smooth_bump([0, 0, 0], 0.8, 1.5)
    x = sample_uniform(shear_field.domain, 2000, 4)
    assert np.abs(solve_lagrangian(fl, rho, 0.0, 1.0, x)).max() <= 1.5 + 1e-12


# --- Eulerian -------------------------------------------------------------------


def test_eulerian_zero_field_and_equal_times(zero, rotation_field):
    g = GridSpec(box([-1] * 3, [1] * 3), 8)
    rho = smooth_bump([0, 0, 0], 0.5)
    e0 = solve_eulerian(zero, rho, 0.0, 1.0, g)
    np.testing.assert_array_equal(e0.flat(), rho(g.centers()))
    e1 = solve_eulerian(rotation_field, rho, 0.5, 0.5, g)
    np.testing.assert_array_equal(e1.flat(), rho(g.centers()))
    assert e1.values.shape == (8, 8, 8) and e1.cells_per_axis == 8


def test_eulerian_cfl_rejected(rotation_field):
    g = GridSpec(box([-1] * 3, [1] * 3), 16)
    with pytest.raises(ValueError):
        solve_eulerian(rotation_field, coordinate(0), 0.0, 1.0, g, dt=0.1)


def test_eulerian_maximum_principle(rotation_field):
    g = GridSpec(box([-1] * 3, [1] * 3), 24)
    rho = smooth_bump([0.3, 0, 0], 0.3)
    e = solve_eulerian(rotation_field, rho, 0.0, 1.0, g)
    assert e.values.max() <= 1.0 + 1e-12 and e.values.min() >= -1e-12


def test_eulerian_frozen_outside(rotation_field):
    g = GridSpec(box([-1.2] * 3, [1.2] * 3), 12)
    rho = coordinate(0, 1.2)
    e = solve_eulerian(rotation_field, rho, 0.0, 0.5, g)
    c = g.centers()
    far = np.linalg.norm(c, axis=1) > 1.0 + 2 * g.spacing[0]
    np.testing.assert_array_equal(e.flat()[far], c[far, 0])


def _translation(c):
    # a uniform velocity on a large box so the bump never feels the boundary
    dom = box([-3] * 3, [3] * 3)
    c = np.asarray(c, dtype=float)
    return rf.VelocityField(
        "translation", dom,
        lambda t, x: np.broadcast_to(c, x.shape).copy(),
        lambda t, x: np.zeros(len(x)),
        0.0, float(np.linalg.norm(c)), vanishes_on_boundary=False,
    )


def test_eulerian_translation_first_order():
    v = np.array([0.4, -0.2, 0.1])
    field = _translation(v)
    rho = smooth_bump([-0.2, 0.1, 0], 0.5)
    shifted = smooth_bump(np.array([-0.2, 0.1, 0]) + v, 0.5)
    errs = []
    for cells in (16, 32):
        g = GridSpec(box([-1] * 3, [1] * 3), cells)
        e = solve_eulerian(field, rho, 0.0, 1.0, g)
        errs.append(np.abs(e.flat() - shifted(g.centers())).sum() * g.cell_volume)
    assert errs[1] < errs[0]
    # first order: error of order h, well inside C sqrt(h)
    assert 0.4 <= errs[1] / errs[0] <= 0.75


def test_eulerian_backward(rotation_field):
    g = GridSpec(box([-1] * 3, [1] * 3), 20)
    rho = smooth_bump([0.3, 0, 0], 0.35)
    back = solve_eulerian(rotation_field, rho, 1.0, 0.0, g)
    fwd = solve_eulerian(rotation_field, rho, 1.0, 2.0, g)
    # rotating back and forth by one radian gives mirror images in x2
    vb = back.values
    vf = fwd.values
    assert np.abs(vb - vf[:, ::-1, :]).max() < 1e-12


# --- norm evolution ---------------------------------------------------------------


def test_l2_identity_rotation_conserves(rotation_field):
    fl = FlowEvaluator(rotation_field, 0.02)
    rho = smooth_bump([0.3, 0, 0], 0.3)
    res = l2_identity_residual(fl, rho, 0.0, [0.5, 1.0], 20_000, 3)
    for r in res:
        assert r.predicted == r.initial_norm_sq  # divergence term is exactly 0
        assert abs(r.norm_sq - r.initial_norm_sq) <= 3 * r.sigma


def test_l2_identity_zero_field(zero):
    res = l2_identity_residual(FlowEvaluator(zero, 0.1), coordinate(0), 0.0, [0.5, 1.0], 1000, 0)
    assert all(r.residual == 0.0 for r in res)


def test_l2_identity_contraction_oracle(contraction_field):
    # X(0, t, x) = x e^t in the core, so ||rho(t)||^2 = e^{-3t} ||rho0||^2
    fl = FlowEvaluator(contraction_field, 0.01)
    rho = smooth_bump([0.1, 0, 0], 0.3)
    (r,) = l2_identity_residual(fl, rho, 0.0, [0.5], 50_000, 4)
    exact = math.exp(-1.5) * r.initial_norm_sq
    assert abs(r.norm_sq - exact) <= 3 * r.sigma
    assert r.residual <= 4 * r.sigma
    assert r.predicted == pytest.approx(exact, rel=1e-3)


def test_l2_identity_requires_ordered_times(rotation_field):
    with pytest.raises(ValueError):
        l2_identity_residual(FlowEvaluator(rotation_field), coordinate(0), 0, [1.0, 0.5], 100, 0)


def test_l2_time_continuity(shear_field):
    fl = FlowEvaluator(shear_field, 0.02)
    rho = coordinate(0)
    res = l2_identity_residual(fl, rho, 0.0, [0.5, 0.52, 0.54, 0.58], 5000, 1)
    gaps = [abs(b.norm_sq - res[0].norm_sq) for b in res[1:]]
    assert gaps[0] < gaps[1] < gaps[2]


# --- commutator ------------------------------------------------------------------


def test_commutator_vanishes_for_constants():
    field = rf.fields.constant_window([0.3, -0.1, 0.2])
    g = GridSpec(box([-0.5] * 3, [0.5] * 3), 6)
    r = commutator_field(field, lambda x: np.full(len(x), 2.0), 0.1, 0.0, g)
    assert np.abs(r.values).max() < 1e-12


def test_commutator_decreases_rough_shear(shear_field):
    g = GridSpec(box([-1.1] * 3, [1.1] * 3), 24)
    rho = smooth_bump([0, 0, 0], 0.9)
    n = [commutator_field(shear_field, rho, e, 0.0, g).l1_norm() for e in (0.1, 0.05, 0.025)]
    assert n[0] > n[1] > n[2]


def test_commutator_rejects_large_eps(rotation_field):
    g = GridSpec(box([-1] * 3, [1] * 3), 4)
    with pytest.raises(ValueError):
        commutator_field(rotation_field, coordinate(0), 0.3, 0.0, g)


# --- weak formulation --------------------------------------------------------------


def test_weak_residual_zero_field(zero):
    rho = smooth_bump([0.3, 0, 0], 0.4)
    sol = lagrangian_solution(FlowEvaluator(zero, 0.1), rho, 0.0)
    tf = bump_test_function(0.0, 0.8, [0.4, 0.2, 0.0], 0.45)
    assert weak_residual(sol, zero, rho, tf, (-0.8, 0.8), cells=16) <= 1e-6


def test_weak_residual_disjoint_support(rotation_field):
    rho = smooth_bump([-0.5, 0, 0], 0.1)
    sol = lagrangian_solution(FlowEvaluator(rotation_field, 0.05), rho, 0.0)
    tf = bump_test_function(0.0, 0.2, [0.5, 0.0, 0.0], 0.1)
    assert weak_residual(sol, rotation_field, rho, tf, (-0.2, 0.2), cells=8) == 0.0


def test_weak_residual_converges(shear_field):
    rho = coordinate(0)
    sol = lagrangian_solution(FlowEvaluator(shear_field, 0.01), rho, 0.0)
    tf = bump_test_function(0.0, 0.8, [0.4, 0.2, 0.0], 0.45)
    r = [weak_residual(sol, shear_field, rho, tf, (-0.8, 0.8), cells=c) for c in (8, 16)]
    assert r[1] <= 0.2 * r[0]


# --- convergence under mollification ----------------------------------------------


def test_rho_convergence_zero_field(zero):
    d = rho_convergence_study(zero, coordinate(0), 0.0, 1.0, [0.1, 0.05], 100, 0, step_size=0.1)
    assert d == [0.0]


def test_rho_convergence_rotation(rotation_field):
    d = rho_convergence_study(rotation_field, coordinate(0), 0.0, 1.0,
                              [0.1, 0.05, 0.025], 1000, 2, step_size=0.05)
    assert d[1] <= 0.7 * d[0]


def test_rho_convergence_validates(rotation_field):
    with pytest.raises(ValueError):
        rho_convergence_study(rotation_field, coordinate(0), 0, 1, [0.1, 0.1], 10, 0)


def test_lagrangian_points_outside_domain_are_stationary(rotation_field):
    fl = FlowEvaluator(rotation_field, 0.05)
    x = np.array([[1.5, 1.5, 1.5], [0.5, 0.0, 0.0]])
    rho = coordinate(0, 2.0)
    out = solve_lagrangian(fl, rho, 0.0, 1.0, x)
    assert out[0] == 1.5
    many = lagrangian_solution(fl, rho, 0.0).at_times([0.5, 1.0], x)
    np.testing.assert_array_equal(many[:, 0], [1.5, 1.5])
    assert many[1, 1] == pytest.approx(out[1], abs=1e-10)
