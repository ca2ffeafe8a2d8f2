"""Transport identities for co-moving volumes, checked by Monte Carlo.

Two numerical routes reach the integral of ``g(s, .)`` over the image
``X(s, t, A)``:

* preimage sampling, ``int_Omega 1_A(X(t, s, y)) g(s, y) dy``, which tests
  membership after flowing uniform samples;
* Jacobian weighting, ``int_A g(s, X(s, t, a)) det dX(s, t, a) da``, which
  carries samples of ``A`` forward.

The four identities of the generalised Reynolds theorem pair up under
``s <-> t``: the "preimage" forms (tags ``trans3``/``trans0``) are the image
forms (``trans2``/``trans1``) read backwards in time, but each is evaluated
with the estimator its statement suggests so that the two families exercise
different code.

Every report carries ``mc_sigma`` (root-sum-square of the Monte Carlo
standard errors) and ``quad_error``, a Richardson estimate of the composite
trapezoid error in ``r`` obtained from the same samples on the once-refined
node set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .fields import MollifiedField, VelocityField, mollify
from .flow import FlowEvaluator, group_defect
from .geometry import (
    Domain,
    Enclosure,
    MeasurableSet,
    MeasureEstimate,
    hit_estimate,
    sample_uniform,
    weighted_estimate,
)
from .transport import backtrack_many

__all__ = [
    "ReynoldsReport",
    "DensityFunction",
    "constant_density",
    "measure_preimage",
    "measure_image",
    "measure_image_jacobian",
    "rtt_measure_residual",
    "rtt_density_residual",
    "change_of_variables_check",
    "compressibility_constant",
    "compressibility_check",
    "containment_check",
    "rtt_limit_study",
    "LimitRow",
    "INTEGRATOR_TOL",
]

TAGS = ("trans0", "trans1", "trans2", "trans3", "usi1", "usi2", "cov")

#: allowance for flow-map error in indicator tests (volume units)
INTEGRATOR_TOL = 1e-9

Region = Union[Domain, Enclosure, None]


@dataclass(frozen=True)
class ReynoldsReport:
    """Left side, right side and error budget of one transport identity."""

    identity_tag: str
    lhs: float
    rhs: float
    residual: float
    mc_sigma: float
    time_quadrature_nodes: int
    seed: int
    quad_error: float = 0.0
    s: float = 0.0
    t: float = 0.0

    @property
    def deterministic(self) -> float:
        """The step/quadrature part of the budget."""
        return self.quad_error

    @property
    def threshold(self) -> float:
        return 4.0 * self.mc_sigma + 2.0 * self.quad_error + INTEGRATOR_TOL

    @property
    def passed(self) -> bool:
        return self.residual <= self.threshold


@dataclass(frozen=True)
class DensityFunction:
    """A C^1 density ``g(r, x)`` with its time derivative and gradient."""

    g: Callable[[float, np.ndarray], np.ndarray]
    dg_dt: Callable[[float, np.ndarray], np.ndarray]
    grad_g: Callable[[float, np.ndarray], np.ndarray]
    label: str = "g"

    def transport_rate(self, r: float, x: np.ndarray, v: np.ndarray, div: np.ndarray) -> np.ndarray:
        """``dg/dr + div(g v)`` expanded as ``dg/dr + grad g . v + g div v``."""
        return (
            self.dg_dt(r, x)
            + np.einsum("ij,ij->i", self.grad_g(r, x), v)
            + self.g(r, x) * div
        )

    def probe(self, n: int = 100, seed: int = 0, h: float = 1e-4) -> tuple[float, float]:
        """Largest mismatch between the supplied and central-difference
        derivatives at ``n`` probe points in ``[-1, 1]^3 x [0, 1]``."""
        gen = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
        x = gen.uniform(-1.0, 1.0, (n, 3))
        r = gen.uniform(0.0, 1.0, n)
        dt_err = 0.0
        gr_err = 0.0
        for i in range(n):
            xi = x[i : i + 1]
            fd_t = (self.g(r[i] + h, xi) - self.g(r[i] - h, xi)) / (2 * h)
            dt_err = max(dt_err, float(np.abs(fd_t - self.dg_dt(r[i], xi)).max()))
            e = np.eye(3) * h
            fd_x = (self.g(r[i], xi + e) - self.g(r[i], xi - e)) / (2 * h)
            gr_err = max(gr_err, float(np.abs(fd_x - self.grad_g(r[i], xi)[0]).max()))
        return dt_err, gr_err


def constant_density(value: float = 1.0) -> DensityFunction:
    """``g == value``; with ``value == 1`` the density identities reduce to
    the measure identities."""

    def g(r, x):
        return np.full(len(x), float(value))

    def zero(r, x):
        return np.zeros(len(x))

    def zero_grad(r, x):
        return np.zeros((len(x), 3))

    return DensityFunction(g, zero, zero_grad, f"const({value:g})")


ONE = constant_density(1.0)


# --- helpers ------------------------------------------------------------------


def _region(flow: FlowEvaluator, region: Region) -> Domain:
    if region is None:
        return flow.domain
    return region.as_domain() if isinstance(region, Enclosure) else region


def _velocity_div(field: VelocityField, r: float, x: np.ndarray):
    if isinstance(field, MollifiedField):
        return field.evaluate_with_divergence(r, x)
    return field.evaluate(r, x), field.divergence(r, x)


def _nodes(t0: float, t1: float, m: int) -> np.ndarray:
    if m < 2:
        raise ValueError("time_nodes must be at least 2")
    return t0 + (t1 - t0) * np.arange(m) / (m - 1)


def _trapezoid_weights(t0: float, t1: float, m: int) -> np.ndarray:
    w = np.full(m, (t1 - t0) / (m - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _rhs_pair(values: np.ndarray, t0: float, t1: float, m: int):
    """Per-sample trapezoid sums on ``m`` nodes and on the refined
    ``2m - 1`` nodes; ``values`` has shape ``(2m - 1, n)``."""
    fine = _trapezoid_weights(t0, t1, 2 * m - 1) @ values
    coarse = _trapezoid_weights(t0, t1, m) @ values[::2]
    return coarse, fine


def _sets(sets) -> list[MeasurableSet]:
    return [sets] if isinstance(sets, MeasurableSet) else list(sets)


# --- measures of transported sets ---------------------------------------------


def measure_preimage(
    flow: FlowEvaluator,
    s: float,
    t: float,
    set,
    n: int,
    seed: int,
    region: Region = None,
):
    """``meas{x : X(s, t, x) in A}`` by hit-or-miss sampling.

    Samples are uniform on ``region`` (default: the domain), flowed from ``t``
    to ``s`` and tested for membership.  ``region`` must contain the preimage.
    ``set`` may be a sequence of sets, which then share one flow; a list of
    estimates is returned in that case.
    """
    dom = _region(flow, region)
    y = sample_uniform(dom, n, seed)
    x = y if s == t else flow(s, t, y)
    out = [hit_estimate(a(x), dom.exact_volume, seed) for a in _sets(set)]
    return out[0] if isinstance(set, MeasurableSet) else out


def measure_image(
    flow: FlowEvaluator,
    s: float,
    t: float,
    set,
    n: int,
    seed: int,
    region: Region = None,
):
    """``meas X(s, t, A)`` through ``meas X(t, s, .)^{-1}(A)``."""
    return measure_preimage(flow, t, s, set, n, seed, region)


def measure_image_jacobian(
    flow: FlowEvaluator,
    s: float,
    t: float,
    set: MeasurableSet,
    n: int,
    seed: int,
    region: Region = None,
) -> MeasureEstimate:
    """``int_A det dX(s, t, a) da``: uniform samples kept when they fall in
    ``A``, flowed from ``t`` to ``s`` and weighted by ``exp(jacobian_log)``.

    ``region`` (default: the domain) must contain ``A``.
    """
    dom = _region(flow, region)
    y = sample_uniform(dom, n, seed)
    inside = set(y)
    terms = inside.astype(float)
    idx = np.flatnonzero(inside)
    if s != t and len(idx):
        res = flow.integrate(t, y[idx], s)
        terms[idx] = np.exp(res.jacobian_log)
    return weighted_estimate(terms, dom.exact_volume, seed)


# --- Reynolds identities ------------------------------------------------------


def _image_identity(flow, g, t0, t1, a, m, n, seed, region, tag):
    """``int_{X(t1,t0,A)} g(t1) = int_A g(t0) + int_{t0}^{t1} int_{X(r,t0,A)} L g``.

    lhs by preimage sampling; rhs by carrying the samples that fall in ``A``
    forward through the refined r-grid and weighting by the Jacobian.
    """
    dom = _region(flow, region)
    vol = dom.exact_volume
    y = sample_uniform(dom, n, seed)
    in_a = a(y)
    idx = np.flatnonzero(in_a)
    back = y if t0 == t1 else flow(t0, t1, y)
    lhs_terms = np.where(a(back), g.g(t1, y), 0.0)
    base = np.where(in_a, g.g(t0, y), 0.0)
    if t0 == t1 or len(idx) == 0:
        coarse = fine = base
    else:
        nodes = _nodes(t0, t1, 2 * m - 1)
        ya = y[idx]
        res = flow.integrate(t0, ya, nodes[1:], jacobian=True)
        pos = np.concatenate([ya[None], res.positions])
        jac = np.concatenate([np.zeros((1, len(idx))), res.jacobian_logs])
        vals = np.empty((len(nodes), len(idx)))
        for k, r in enumerate(nodes):
            v, div = _velocity_div(flow.field, r, pos[k])
            vals[k] = g.transport_rate(r, pos[k], v, div) * np.exp(jac[k])
        c, f = _rhs_pair(vals, t0, t1, m)
        coarse = base.copy()
        fine = base.copy()
        coarse[idx] += c
        fine[idx] += f
    return _report(tag, lhs_terms, coarse, fine, vol, m, seed, t1, t0)


def _preimage_identity(flow, g, weight, s, t, m, n, seed, region, tag):
    """``int w(X(s,t,y)) g(t,y) dy = int w(y) g(s,y) dy
    + int_s^t int w(X(s,r,y)) L g(r,y) dy dr`` with common samples ``y``.

    ``weight`` is the indicator of ``A`` for the preimage identities and a
    bounded function for the change-of-variables check.
    """
    dom = _region(flow, region)
    vol = dom.exact_volume
    y = sample_uniform(dom, n, seed)
    base = weight(y) * g.g(s, y)
    if s == t:
        lhs_terms = base
        coarse = fine = base
    else:
        nodes = _nodes(s, t, 2 * m - 1)
        feet = backtrack_many(flow, s, nodes, y)
        lhs_terms = weight(feet[-1]) * g.g(t, y)
        vals = np.empty((len(nodes), n))
        for k, r in enumerate(nodes):
            v, div = _velocity_div(flow.field, r, y)
            vals[k] = weight(feet[k]) * g.transport_rate(r, y, v, div)
        c, f = _rhs_pair(vals, s, t, m)
        coarse = base + c
        fine = base + f
    return _report(tag, lhs_terms, coarse, fine, vol, m, seed, s, t)


def _report(tag, lhs_terms, coarse, fine, vol, m, seed, s, t):
    n = len(lhs_terms)
    lhs = vol * float(np.mean(lhs_terms))
    rhs = vol * float(np.mean(coarse))
    rhs_fine = vol * float(np.mean(fine))
    sig_l = vol * float(np.std(lhs_terms)) / math.sqrt(n)
    sig_r = vol * float(np.std(coarse)) / math.sqrt(n)
    quad = 4.0 / 3.0 * abs(rhs - rhs_fine)
    return ReynoldsReport(
        tag, lhs, rhs, abs(lhs - rhs), math.hypot(sig_l, sig_r), m, seed, quad, s, t
    )


def _identity(flow, g, s, t, set, time_nodes, n, seed, tag, region):
    if time_nodes < 3:
        raise ValueError("time_nodes must be at least 3")
    if tag in ("trans2", "trans1", "usi1", "usi2"):
        return _image_identity(flow, g, t, s, set, time_nodes, n, seed, region, tag)
    w = lambda x: set(x).astype(float)
    return _preimage_identity(flow, g, w, s, t, time_nodes, n, seed, region, tag)


def rtt_density_residual(
    flow: FlowEvaluator,
    g: DensityFunction,
    field: Optional[VelocityField],
    s: float,
    t: float,
    set: MeasurableSet,
    time_nodes: int,
    n: int,
    seed: int,
    variant: str = "trans2",
    region: Region = None,
) -> ReynoldsReport:
    """Residual of the density identities.

    ``trans2``: ``int_{X(s,t,A)} g(s) = int_A g(t) + int_t^s int_{X(r,t,A)} L g``;
    ``trans3``: ``int_{X(s,t,.)^{-1}(A)} g(t) = int_A g(s)
    + int_s^t int_{X(s,r,.)^{-1}(A)} L g``, with ``L g = dg/dr + div(g v)``.
    ``usi1`` is ``trans2`` under its classical name, for smooth (mollified)
    flows.

    ``field`` must be the field the flow integrates (None means
    ``flow.field``); it is accepted for symmetry with the identity's
    statement.  ``time_nodes`` counts the trapezoid nodes in ``r``.
    """
    if field is not None and field is not flow.field:
        raise ValueError("field must be the velocity field of the flow")
    if variant not in ("trans2", "trans3", "usi1"):
        raise ValueError(f"unknown variant {variant!r}")
    return _identity(flow, g, s, t, set, time_nodes, n, seed, variant, region)


def rtt_measure_residual(
    flow: FlowEvaluator,
    s: float,
    t: float,
    set: MeasurableSet,
    time_nodes: int,
    n: int,
    seed: int,
    variant: str = "trans1",
    region: Region = None,
) -> ReynoldsReport:
    """Liouville-type identities: ``trans1`` for ``meas X(s,t,A)``, ``trans0``
    for ``meas X(s,t,.)^{-1}(A)`` (``usi2`` is ``trans1`` for smooth flows).

    Runs the density code with ``g == 1``, so the numbers agree bitwise with
    :func:`rtt_density_residual` on the matching variant.
    """
    if variant not in ("trans1", "trans0", "usi2"):
        raise ValueError(f"unknown variant {variant!r}")
    return _identity(flow, ONE, s, t, set, time_nodes, n, seed, variant, region)


def change_of_variables_check(
    flow: FlowEvaluator,
    f: Callable[[np.ndarray], np.ndarray],
    s: float,
    t: float,
    time_nodes: int,
    n: int,
    seed: int,
    region: Region = None,
) -> ReynoldsReport:
    """``int_K f(X(s,t,x)) dx = int_K f + int_s^t int_K f(X(s,r,x)) div w(r,x) dx dr``.

    Both sides use the same uniform samples on K (default: the flow's
    enclosure, or the domain when there is none).
    """
    if region is None:
        region = flow.enclosure if flow.enclosure is not None else flow.domain
    w = lambda x: np.asarray(f(x), dtype=float)
    return _preimage_identity(flow, ONE, w, s, t, time_nodes, n, seed, region, "cov")


# --- structural checks --------------------------------------------------------


def compressibility_constant(field: VelocityField, s: float, t: float) -> float:
    """``c = exp(|t - s| sup|div v|)`` from the analytic divergence bound."""
    return math.exp(abs(t - s) * field.div_sup_bound)


class SandwichResult(NamedTuple):
    estimate: MeasureEstimate
    lower: float
    upper: float
    c: float

    @property
    def ok(self) -> bool:
        return self.lower <= self.estimate.value <= self.upper


def compressibility_check(
    flow: FlowEvaluator, s: float, t: float, sets, n: int, seed: int
) -> list[SandwichResult]:
    """Preimage measures against ``[meas(A)/c - 4 sigma, c meas(A) + 4 sigma]``."""
    sets = _sets(sets)
    c = compressibility_constant(flow.field, s, t)
    ests = measure_preimage(flow, s, t, sets, n, seed)
    out = []
    for a, e in zip(sets, ests):
        m = a.exact_volume
        out.append(SandwichResult(e, m / c - 4 * e.std_error, c * m + 4 * e.std_error, c))
    return out


class ContainmentResult(NamedTuple):
    fraction: float
    delta: float
    checked: int


def containment_check(
    flow: FlowEvaluator, s: float, t: float, set: MeasurableSet, n: int, seed: int
) -> ContainmentResult:
    """For sampled ``x`` in ``A`` and ``y = X(s,t,x)``, the share of points
    with ``X(t,s,y)`` in ``A`` dilated by ``10 * max group defect``."""
    x = sample_uniform(flow.domain, n, seed)
    x = x[set(x)]
    if len(x) == 0:
        return ContainmentResult(1.0, 0.0, 0)
    delta = 10.0 * group_defect(flow, s, t, x).max
    back = flow(t, s, flow(s, t, x))
    grown = set.dilated(delta) if delta > 0 else set
    return ContainmentResult(float(np.mean(grown(back))), delta, len(x))


# --- mollification limit -------------------------------------------------------


class LimitRow(NamedTuple):
    eps: float
    preimage: MeasureEstimate
    image: MeasureEstimate
    image_jacobian: MeasureEstimate


def rtt_limit_study(
    base_field: VelocityField,
    eps_list: Sequence[float],
    s: float,
    t: float,
    set: MeasurableSet,
    n: int,
    seed: int,
    step_size: float = 1e-2,
    order: int = 8,
    region: Region = None,
) -> tuple[list[LimitRow], dict]:
    """Measures of transported sets under the mollified flows, one row per eps.

    All rows share the same samples.  The second value maps each column
    name to the absolute successive differences down the table.
    """
    eps = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    rows = []
    for e in eps:
        fl = FlowEvaluator(mollify(base_field, e, order), step_size)
        rows.append(
            LimitRow(
                e,
                measure_preimage(fl, s, t, set, n, seed, region),
                measure_image(fl, s, t, set, n, seed, region),
                measure_image_jacobian(fl, s, t, set, n, seed, region),
            )
        )
    diffs = {
        name: [abs(getattr(a, name).value - getattr(b, name).value) for a, b in zip(rows, rows[1:])]
        for name in ("preimage", "image", "image_jacobian")
    }
    return rows, diffs
