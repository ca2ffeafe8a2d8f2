import math

import numpy as np
import pytest

from roughflow.fields import mollify
from roughflow.flow import FlowEvaluator
from roughflow.geometry import Enclosure, ball, ball_set, box_set, empty_set, full_set
from roughflow.reynolds import (
    ONE,
    DensityFunction,
    ReynoldsReport,
    change_of_variables_check,
    compressibility_check,
    compressibility_constant,
    constant_density,
    containment_check,
    measure_image,
    measure_image_jacobian,
    measure_preimage,
    rtt_density_residual,
    rtt_limit_study,
    rtt_measure_residual,
)

from oracles import CONTRACTION_DIV_BOUND, ball_volume


def quadratic_density():
    """g(r, x) = (x1 - 0.2)^2 + r: non-constant in space and time."""

    def g(r, x):
        return (x[:, 0] - 0.2) ** 2 + r

    def dg(r, x):
        return np.ones(len(x))

    def grad(r, x):
        out = np.zeros((len(x), 3))
        out[:, 0] = 2 * (x[:, 0] - 0.2)
        return out

    return DensityFunction(g, dg, grad, "quadratic")


# --- measures --------------------------------------------------------------------


def test_rotation_preserves_ball_measure(rotation_field):
    fl = FlowEvaluator(rotation_field, 0.02)
    a = ball_set([0.4, 0.1, 0.0], 0.2)
    est = measure_preimage(fl, 1.0, 0.0, a, 50_000, 3)
    assert est.within(ball_volume(0.2), 4.0)
    img = measure_image_jacobian(fl, 1.0, 0.0, a, 50_000, 3)
    assert abs(img.value - ball_volume(0.2)) < 1e-12 + 4 * img.std_error


def test_contraction_measures_match_oracle(contraction_field):
    fl = FlowEvaluator(contraction_field, 0.01)
    a = ball_set([0, 0, 0], 0.2)
    vol = ball_volume(0.2)
    pre = measure_preimage(fl, 1.0, 0.0, a, 50_000, 1)  # preimage is B(0.2 e)
    assert pre.within(vol * math.e**3, 4.0)
    img = measure_image(fl, 1.0, 0.0, a, 200_000, 2, region=ball([0, 0, 0], 0.2))
    assert img.within(vol * math.exp(-3), 4.0)
    jac = measure_image_jacobian(fl, 1.0, 0.0, a, 50_000, 4, region=ball([0, 0, 0], 0.2))
    assert jac.value == pytest.approx(vol * math.exp(-3), rel=1e-6)


def test_measure_equal_times_exact(shear_field):
    fl = FlowEvaluator(shear_field, 0.05)
    a = box_set([-0.3] * 3, [0.2] * 3)
    p = measure_preimage(fl, 0.4, 0.4, a, 1000, 0)
    q = measure_preimage(fl, 0.7, 0.1, full_set(shear_field.domain), 1000, 0)
    assert q.value == shear_field.domain.exact_volume
    assert p.value == measure_image(fl, 0.4, 0.4, a, 1000, 0).value
    assert measure_preimage(fl, 1.0, 0.0, empty_set(), 1000, 0).value == 0.0


def test_measure_list_shares_samples(shear_field):
    fl = FlowEvaluator(shear_field, 0.05)
    sets = [box_set([-0.3] * 3, [0.2] * 3), ball_set([0, 0, 0], 0.3)]
    many = measure_preimage(fl, 1.0, 0.0, sets, 2000, 9)
    for a, e in zip(sets, many):
        assert e == measure_preimage(fl, 1.0, 0.0, a, 2000, 9)


# --- identities --------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["trans1", "trans0"])
def test_equal_times_residual_vanishes(shear_field, variant):
    fl = FlowEvaluator(shear_field, 0.05)
    rep = rtt_measure_residual(fl, 0.3, 0.3, ball_set([0, 0, 0], 0.3), 5, 2000, 0, variant)
    assert rep.residual <= 1e-12 and rep.passed


@pytest.mark.parametrize("pair", [("trans2", "trans1"), ("trans3", "trans0")])
def test_unit_density_reduces_bitwise(contraction_field, pair):
    fl = FlowEvaluator(contraction_field, 0.02)
    a = ball_set([0.1, 0, 0], 0.2)
    d = rtt_density_residual(fl, constant_density(1.0), None, 1.0, 0.0, a, 5, 5000, 7, pair[0])
    m = rtt_measure_residual(fl, 1.0, 0.0, a, 5, 5000, 7, pair[1])
    assert (d.lhs, d.rhs, d.residual, d.mc_sigma) == (m.lhs, m.rhs, m.residual, m.mc_sigma)


@pytest.mark.parametrize("variant", ["trans2", "trans3"])
def test_zero_field_density_identity(zero, variant):
    # L g = dg/dr = 1, so both sides are known in closed form and agree sample by sample
    fl = FlowEvaluator(zero, 0.1)
    rep = rtt_density_residual(fl, quadratic_density(), zero, 1.0, 0.0,
                               ball_set([0, 0, 0], 0.4), 5, 5000, 2, variant)
    assert rep.residual < 1e-12


@pytest.mark.parametrize("variant", ["trans1", "trans0"])
def test_contraction_measure_identity(contraction_field, variant):
    fl = FlowEvaluator(contraction_field, 0.01)
    rep = rtt_measure_residual(fl, 1.0, 0.0, ball_set([0, 0, 0], 0.2), 9, 20_000, 5, variant)
    assert rep.passed, rep


@pytest.mark.parametrize("variant", ["trans2", "trans3"])
def test_shear_density_identity(shear_field, variant):
    fl = FlowEvaluator(shear_field, 0.02)
    a = box_set([-0.5, -0.4, -0.3], [0.2, 0.3, 0.4])
    rep = rtt_density_residual(fl, quadratic_density(), None, 1.0, 0.0, a, 9, 20_000, 3, variant)
    assert rep.passed, rep
    assert rep.identity_tag == variant and (rep.s, rep.t) == (1.0, 0.0)


def test_smooth_variants_on_mollified_field(shear_field):
    fl = FlowEvaluator(mollify(shear_field, 0.05, 8), 0.02)
    a = box_set([-0.5, -0.4, -0.3], [0.2, 0.3, 0.4])
    r1 = rtt_density_residual(fl, quadratic_density(), None, 0.0, 1.0, a, 5, 5000, 3, "usi1")
    r2 = rtt_measure_residual(fl, 0.0, 1.0, a, 5, 5000, 3, "usi2")
    assert r1.passed and r2.passed


def test_identity_argument_checks(rotation_field, contraction_field):
    fl = FlowEvaluator(rotation_field, 0.05)
    a = ball_set([0, 0, 0], 0.2)
    with pytest.raises(ValueError):
        rtt_measure_residual(fl, 1, 0, a, 2, 100, 0)
    with pytest.raises(ValueError):
        rtt_measure_residual(fl, 1, 0, a, 5, 100, 0, "trans2")
    with pytest.raises(ValueError):
        rtt_density_residual(fl, ONE, None, 1, 0, a, 5, 100, 0, "trans1")
    with pytest.raises(ValueError):
        rtt_density_residual(fl, ONE, contraction_field, 1, 0, a, 5, 100, 0)


def test_change_of_variables(contraction_field):
    enc = Enclosure(contraction_field.domain, 0.1)
    fl = FlowEvaluator(contraction_field, 0.02, enclosure=enc)
    rep = change_of_variables_check(fl, lambda x: np.exp(-4 * np.sum(x**2, axis=1)), 0.0, 1.0,
                                    9, 20_000, 1)
    assert rep.identity_tag == "cov" and rep.passed, rep


def test_report_threshold():
    rep = ReynoldsReport("trans1", 1.0, 1.1, 0.1, 0.02, 5, 0, 0.005)
    assert rep.threshold == pytest.approx(0.08 + 0.01 + 1e-9)
    assert not rep.passed and rep.deterministic == 0.005


def test_density_probe():
    assert max(quadratic_density().probe(20, 0)) < 1e-6
    bad = DensityFunction(lambda r, x: r * np.ones(len(x)), lambda r, x: np.zeros(len(x)),
                          lambda r, x: np.zeros((len(x), 3)))
    assert bad.probe(5, 0)[0] > 0.5


# --- structure --------------------------------------------------------------------


def test_compressibility_constant(contraction_field, rotation_field):
    assert compressibility_constant(contraction_field, 0, 1) == pytest.approx(
        math.exp(CONTRACTION_DIV_BOUND))
    assert compressibility_constant(rotation_field, 0, 5) == 1.0


def test_compressibility_sandwich(shear_field):
    fl = FlowEvaluator(shear_field, 0.05)
    sets = [box_set([-0.5, -0.4, -0.3], [0.2, 0.3, 0.4]), ball_set([0.2, 0, 0], 0.4)]
    for res in compressibility_check(fl, 1.0, 0.0, sets, 20_000, 0):
        assert res.ok and res.c > 1


def test_containment(shear_field):
    fl = FlowEvaluator(shear_field, 0.02)
    r = containment_check(fl, 1.0, 0.0, ball_set([0.1, 0, 0], 0.4), 4000, 0)
    assert r.fraction == 1.0 and r.checked > 100


def test_limit_study_shapes(rotation_field):
    rows, diffs = rtt_limit_study(rotation_field, [0.1, 0.05], 1.0, 0.0,
                                  ball_set([0.3, 0, 0], 0.2), 500, 1, step_size=0.05)
    assert [r.eps for r in rows] == [0.1, 0.05]
    assert set(diffs) == {"preimage", "image", "image_jacobian"}
    assert all(len(v) == 1 for v in diffs.values())
    with pytest.raises(ValueError):
        rtt_limit_study(rotation_field, [0.05, 0.1], 1, 0, ball_set([0, 0, 0], 0.1), 10, 0)
