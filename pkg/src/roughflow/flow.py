"""Regularised flow maps by fixed-step RK4.

``X(s, t, x)`` is the position at time ``s`` of the particle that sits at
``x`` at time ``t``.  Integration always runs from ``t`` to ``s`` on the grid
``t + k h`` with ``h = (s - t) / ceil(|s - t| / step_size)``, so two calls
with the same endpoints share their nodes exactly.  Alongside the position
we accumulate ``log det dX/dx`` as the trapezoid sum of the divergence at the
RK4 nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .fields import MollifiedField, VelocityField, mollify
from .geometry import (
    Enclosure,
    MeasurableSet,
    MeasureEstimate,
    sample_uniform,
    weighted_estimate,
)

__all__ = [
    "TrajectoryEscape",
    "FlowEvaluator",
    "FlowResult",
    "TrajectoryRecord",
    "DefectStats",
    "IntegralResidual",
    "advect",
    "flow_map",
    "group_defect",
    "semigroup_defect",
    "integral_equation_residual",
    "leak_measure",
    "flow_convergence_study",
]


class TrajectoryEscape(RuntimeError):
    """A trajectory left the enclosing ball by more than the drift tolerance."""

    def __init__(self, index: int, position, time: float, message: str = ""):
        self.index = int(index)
        self.position = np.asarray(position)
        self.time = time
        super().__init__(
            message
            or f"trajectory {self.index} escaped the enclosure at r={time!r}: {self.position}"
        )


class FlowResult(NamedTuple):
    endpoints: np.ndarray  # (N, 3) at the last requested time
    jacobian_log: np.ndarray  # (N,)
    times: np.ndarray  # requested checkpoint times, in integration order
    positions: np.ndarray  # (len(times), N, 3)
    jacobian_logs: np.ndarray  # (len(times), N)


@dataclass(frozen=True)
class TrajectoryRecord:
    times: np.ndarray
    positions: np.ndarray
    jacobian_log: np.ndarray
    velocities: np.ndarray


class DefectStats(NamedTuple):
    max: float
    mean: float


class IntegralResidual(NamedTuple):
    residual: float
    expected_bound: float


def _velocity_and_div(field, r, x, need_div):
    if need_div and isinstance(field, MollifiedField):
        return field.evaluate_with_divergence(r, x)
    v = field.evaluate(r, x)
    return v, (field.divergence(r, x) if need_div else None)


class FlowEvaluator:
    """Fixed-step RK4 integrator for one velocity field.

    Parameters
    ----------
    field : VelocityField
        Exact or mollified field.
    step_size : float
        Upper bound for the RK4 step.
    enclosure : Enclosure, optional
        Ball K used for the escape check; defaults to the field's domain
        enclosure.  Synthetic fields without a domain are not checked.
    """

    def __init__(
        self,
        field: VelocityField,
        step_size: float = 1e-3,
        enclosure: Optional[Enclosure] = None,
        method: str = "rk4",
    ):
        if method != "rk4":
            raise ValueError("only fixed-step 'rk4' is available")
        if step_size <= 0:
            raise ValueError("step_size must be positive")
        self.field = field
        self.step_size = float(step_size)
        self.method = method
        if enclosure is None and field.domain is not None:
            enclosure = Enclosure(field.domain)
        self.enclosure = enclosure

    def __repr__(self):
        return f"FlowEvaluator({self.field!r}, step_size={self.step_size!r})"

    @property
    def domain(self):
        return self.field.domain

    def steps_between(self, t: float, s: float) -> int:
        if s == t:
            return 0
        return max(1, math.ceil(abs(s - t) / self.step_size - 1e-9))

    def _check(self, x, r, h, offset=0):
        if self.enclosure is None:
            return
        tol = 10.0 * abs(h) * self.field.sup_speed
        d = np.linalg.norm(x - self.enclosure.ball_center, axis=1)
        bad = d > self.enclosure.ball_radius + tol
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise TrajectoryEscape(i + offset, x[i], r)

    def _segment(self, t, s, x, jac, need_div, record=None):
        """Integrate from ``t`` to ``s``; returns the new (x, jac)."""
        n = self.steps_between(t, s)
        if n == 0:
            return x, jac
        h = (s - t) / n
        f = self.field
        k1, div_r = _velocity_and_div(f, t, x, need_div)
        for k in range(n):
            r = t + k * h
            k2, _ = _velocity_and_div(f, r + 0.5 * h, x + 0.5 * h * k1, False)
            k3, _ = _velocity_and_div(f, r + 0.5 * h, x + 0.5 * h * k2, False)
            k4, _ = _velocity_and_div(f, r + h, x + h * k3, False)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            r_next = t + (k + 1) * h if k + 1 < n else s
            self._check(x, r_next, h)
            if need_div:
                k1, div_next = _velocity_and_div(f, r_next, x, True)
                jac = jac + 0.5 * h * (div_r + div_next)
                div_r = div_next
            elif k + 1 < n:
                k1, _ = _velocity_and_div(f, r_next, x, False)
            if record is not None:
                record.append((r_next, x, jac))
        return x, jac

    def integrate(
        self,
        t: float,
        points,
        s,
        jacobian: bool = True,
    ) -> FlowResult:
        """Flow ``points`` from time ``t`` to each time in ``s``.

        ``s`` is a scalar or a sequence of times on one side of ``t``, ordered
        away from ``t``; the integration is restarted at every checkpoint so
        the node grid between consecutive checkpoints is the standard one.
        """
        x = np.array(points, dtype=float, copy=True).reshape(-1, 3)
        targets = np.atleast_1d(np.asarray(s, dtype=float))
        if len(targets) > 1:
            d = np.diff(np.concatenate([[t], targets]))
            if not (np.all(d >= 0) or np.all(d <= 0)):
                raise ValueError("checkpoint times must move monotonically away from t")
        self._check(x, t, self.step_size)
        jac = np.zeros(len(x))
        positions = np.empty((len(targets),) + x.shape)
        jacs = np.empty((len(targets), len(x)))
        r = t
        for i, target in enumerate(targets):
            x, jac = self._segment(r, target, x, jac, jacobian)
            r = target
            positions[i] = x
            jacs[i] = jac
        return FlowResult(x, jac, targets, positions, jacs)

    def __call__(self, s: float, t: float, points) -> np.ndarray:
        """``X(s, t, points)``."""
        return self.integrate(t, points, s, jacobian=False).endpoints

    def trajectory(self, t: float, x0, s: float) -> TrajectoryRecord:
        x = np.array(x0, dtype=float).reshape(-1, 3)
        self._check(x, t, self.step_size)
        jac = np.zeros(len(x))
        record = [(t, x, jac)]
        self._segment(t, s, x, jac, True, record)
        times = np.array([r for r, _, _ in record])
        pos = np.stack([p for _, p, _ in record])
        jl = np.stack([j for _, _, j in record])
        vel = np.stack([self.field.evaluate(r, p) for r, p, _ in record])
        if np.asarray(x0).ndim == 1:
            pos, jl, vel = pos[:, 0], jl[:, 0], vel[:, 0]
        return TrajectoryRecord(times, pos, jl, vel)


def advect(flow: FlowEvaluator, t: float, x0, s: float) -> TrajectoryRecord:
    """Full RK4 trajectory of ``x0`` from time ``t`` to time ``s``.

    ``times`` runs in integration order, so it is decreasing when ``s < t``.
    """
    return flow.trajectory(t, x0, s)


def flow_map(flow: FlowEvaluator, s: float, t: float, points) -> np.ndarray:
    """``X(s, t, x)`` for every row of ``points``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if s == t:
        return pts.copy()
    try:
        return flow(s, t, pts)
    except TrajectoryEscape as exc:
        raise TrajectoryEscape(exc.index, exc.position, exc.time,
                               f"flow_map: point {exc.index} escaped: {exc}") from exc


def _stats(d: np.ndarray) -> DefectStats:
    if len(d) == 0:
        return DefectStats(0.0, 0.0)
    return DefectStats(float(np.max(d)), float(np.mean(d)))


def group_defect(flow: FlowEvaluator, s: float, t: float, points) -> DefectStats:
    """Round-trip error ``|X(t, s, X(s, t, x)) - x|``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    back = flow_map(flow, t, s, flow_map(flow, s, t, pts))
    return _stats(np.linalg.norm(back - pts, axis=1))


def semigroup_defect(
    flow: FlowEvaluator, s: float, tau: float, t: float, points
) -> DefectStats:
    """Composition error ``|X(s, t, x) - X(s, tau, X(tau, t, x))|``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    direct = flow_map(flow, s, t, pts)
    composed = flow_map(flow, s, tau, flow_map(flow, tau, t, pts))
    return _stats(np.linalg.norm(direct - composed, axis=1))


def integral_equation_residual(
    flow: FlowEvaluator, t: float, x0, s: float, quad_nodes: Optional[int] = None
) -> IntegralResidual:
    """``|X(s,t,x0) - x0 - int_t^s v(r, X(r,t,x0)) dr|`` by the trapezoid rule.

    The quadrature uses the stored RK4 nodes (every node when ``quad_nodes``
    is None, otherwise ``quad_nodes`` evenly spaced ones).  The expected
    bound is ``|s - t| * max|d^2 v/dr^2| * dr^2 / 12`` with the second
    derivative taken by differences along the path.
    """
    if s == t:
        return IntegralResidual(0.0, 0.0)
    rec = flow.trajectory(t, np.asarray(x0, dtype=float), s)
    times, vel = rec.times, rec.velocities
    if quad_nodes is not None and quad_nodes < len(times):
        n_int = len(times) - 1
        stride = max(1, n_int // max(1, quad_nodes - 1))
        idx = np.arange(0, len(times), stride)
        if idx[-1] != len(times) - 1:
            idx = np.append(idx, len(times) - 1)
        times, vel = times[idx], vel[idx]
    q = np.trapezoid(vel, times, axis=0)
    residual = float(np.linalg.norm(rec.positions[-1] - rec.positions[0] - q))
    if len(times) >= 3:
        dr = np.diff(times)
        second = np.diff(np.diff(vel, axis=0) / dr[:, None], axis=0) / dr[1:, None]
        curv = float(np.max(np.linalg.norm(second, axis=1)))
        h = float(np.max(np.abs(dr)))
    else:
        curv, h = 0.0, abs(s - t)
    return IntegralResidual(residual, abs(s - t) * curv * h * h / 12.0)


def leak_measure(
    flow: FlowEvaluator,
    s: float,
    t: float,
    set: MeasurableSet,
    n: int,
    seed: int,
) -> MeasureEstimate:
    """Measure of ``X(t, s, A)`` outside the domain, by Jacobian push-forward.

    Samples uniform on the domain are kept when they lie in ``A``, flowed from
    time ``s`` to ``t`` and weighted by ``det dX = exp(jacobian_log)``.
    """
    dom = flow.domain
    x = sample_uniform(dom, n, seed)
    terms = np.zeros(n)
    if s != t:
        inside = np.flatnonzero(set(x))
        if len(inside):
            res = flow.integrate(s, x[inside], t)
            out = ~dom.contains(res.endpoints)
            terms[inside] = np.where(out, np.exp(res.jacobian_log), 0.0)
    return weighted_estimate(terms, dom.exact_volume, seed)


def flow_convergence_study(
    field: VelocityField,
    eps_list: Sequence[float],
    s: float,
    t: float,
    n: int,
    seed: int,
    step_size: float = 1e-2,
    order: int = 8,
) -> list[float]:
    """L2(domain) distances between ``X^eps(s, t, .)`` for successive eps.

    Every mollified flow is evaluated on the same uniform samples of the
    domain; the list has ``len(eps_list) - 1`` entries.
    """
    eps = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    dom = field.domain
    x = sample_uniform(dom, n, seed)
    ends = [FlowEvaluator(mollify(field, e, order), step_size)(s, t, x) for e in eps]
    vol = dom.exact_volume
    return [
        math.sqrt(vol * float(np.mean(np.sum((a - b) ** 2, axis=1))))
        for a, b in zip(ends, ends[1:])
    ]
