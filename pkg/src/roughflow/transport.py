"""Linear transport ``d_t rho + v . grad rho = 0`` with initial time ``s``.

Two solvers:

* Lagrangian: ``rho(s, t, x) = rho0(X(s, t, x))`` through the flow map;
* Eulerian: dimension-split first-order upwind on a cell-centred box grid.

The remaining functions check the weak formulation, the L2-norm evolution
law, the mollification commutator and convergence under mollification.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .fields import Mollifier, VelocityField, mollify
from .flow import FlowEvaluator
from .geometry import Domain, MeasurableSet, sample_uniform

__all__ = [
    "InitialDatum",
    "TransportSolution",
    "GridSpec",
    "GridFunction",
    "TestFunction",
    "coordinate",
    "smooth_bump",
    "indicator_mollified",
    "bump_test_function",
    "solve_lagrangian",
    "lagrangian_solution",
    "solve_eulerian",
    "l2_identity_residual",
    "NormResidual",
    "commutator_field",
    "weak_residual",
    "rho_convergence_study",
    "backtrack_many",
]


@dataclass(frozen=True)
class InitialDatum:
    evaluate: Callable[[np.ndarray], np.ndarray]
    kind: str
    sup_bound: float
    label: str = ""

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(np.atleast_2d(np.asarray(x, dtype=float)))


def coordinate(i: int, bound: float = 1.0) -> InitialDatum:
    """``rho0(x) = x_i`` (zero-based ``i``); ``bound`` is sup |x_i| on the region of use."""
    return InitialDatum(lambda x: x[:, i].copy(), "coordinate", bound, f"x{i + 1}")


def smooth_bump(center, radius: float, amplitude: float = 1.0) -> InitialDatum:
    """``amplitude * exp(1 - 1/(1 - |x-c|^2/R^2))``, peak value ``amplitude``."""
    c = np.asarray(center, dtype=float)

    def ev(x):
        d = x - c
        r2 = np.einsum("ij,ij->i", d, d) / radius**2
        out = np.zeros(len(x))
        inside = r2 < 1.0
        out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out

    return InitialDatum(ev, "smooth-bump", abs(amplitude), "bump")


def indicator_mollified(set: MeasurableSet, eps: float, order: int = 10) -> InitialDatum:
    """Bump-kernel mollification of the indicator of ``set``."""
    rule = Mollifier.of_radius(eps).rule(order)

    def ev(x):
        out = np.empty(len(x))
        block = max(1, (1 << 20) // len(rule.weights))
        for i in range(0, len(x), block):
            xs = x[i : i + block]
            shifted = (xs[:, None, :] - rule.nodes[None]).reshape(-1, 3)
            hits = set(shifted).reshape(len(xs), -1)
            out[i : i + block] = hits @ rule.weights
        return out

    return InitialDatum(ev, "indicator-mollified", 1.0, f"moll({set.label})")


def backtrack_many(flow: FlowEvaluator, s: float, times, points) -> np.ndarray:
    """``X(s, t_j, x)`` for every time ``t_j`` and every point; shape (T, N, 3).

    Autonomous fields use ``X(s, t, x) = X(2s - t, s, x)`` so one checkpointed
    pass from ``s`` covers every time on the same side of ``s``.
    """
    times = np.asarray(times, dtype=float)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    out = np.empty((len(times),) + pts.shape)
    if not flow.field.autonomous:
        for j, t in enumerate(times):
            out[j] = flow(s, t, pts)
        return out
    targets = 2.0 * s - times
    for side in (targets > s, targets < s):
        idx = np.flatnonzero(side)
        if len(idx) == 0:
            continue
        order = idx[np.argsort(np.abs(targets[idx] - s))]
        res = flow.integrate(s, pts, targets[order], jacobian=False)
        out[order] = res.positions
    out[targets == s] = pts
    return out


@dataclass(frozen=True)
class TransportSolution:
    s: float
    field_tag: str
    evaluate: Callable[[float, np.ndarray], np.ndarray]
    provenance: str
    evaluate_many: Optional[Callable] = None

    def __call__(self, t, x):
        return self.evaluate(t, np.atleast_2d(np.asarray(x, dtype=float)))

    def at_times(self, times, points) -> np.ndarray:
        if self.evaluate_many is not None:
            return self.evaluate_many(times, points)
        return np.stack([self.evaluate(t, points) for t in times])


def solve_lagrangian(flow: FlowEvaluator, rho0: InitialDatum, s: float, t: float, points) -> np.ndarray:
    """``rho(s, t, x) = rho0(X(s, t, x))``: trace back from ``t`` to ``s``.

    The velocity is zero outside the domain, so points there are stationary
    and keep ``rho0``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    feet = pts.copy()
    inside = flow.domain.contains(pts)
    if s != t and inside.any():
        feet[inside] = flow(s, t, pts[inside])
    return rho0(feet)


def lagrangian_solution(flow: FlowEvaluator, rho0: InitialDatum, s: float) -> TransportSolution:
    def many(times, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        inside = flow.domain.contains(pts)
        feet = np.broadcast_to(pts, (len(times),) + pts.shape).copy()
        if inside.any():
            feet[:, inside] = backtrack_many(flow, s, times, pts[inside])
        return np.stack([rho0(f) for f in feet])

    return TransportSolution(
        s,
        flow.field.name,
        lambda t, x: solve_lagrangian(flow, rho0, s, t, x),
        "lagrangian",
        many,
    )


# --- Eulerian ----------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred grid with ``cells`` cells per axis on ``box``."""

    box: Domain
    cells: int

    @property
    def spacing(self) -> np.ndarray:
        lo, hi = self.box.bounding_box()
        return (hi - lo) / self.cells

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self):
        lo, hi = self.box.bounding_box()
        h = self.spacing
        return [lo[i] + (np.arange(self.cells) + 0.5) * h[i] for i in range(3)]

    def centers(self) -> np.ndarray:
        a = self.axes()
        g = np.meshgrid(*a, indexing="ij")
        return np.stack(g, axis=-1).reshape(-1, 3)


@dataclass(frozen=True)
class GridFunction:
    grid: GridSpec
    values: np.ndarray  # (cells, cells, cells)

    @property
    def box(self) -> Domain:
        return self.grid.box

    @property
    def cells_per_axis(self) -> int:
        return self.grid.cells

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def l1_norm(self, mask: Optional[np.ndarray] = None) -> float:
        v = np.abs(self.flat())
        if mask is not None:
            v = v[mask]
        return float(np.sum(v) * self.grid.cell_volume)


def _upwind_sweep(rho, vel, dt, h, axis):
    # rho_t + vel * d_axis rho = 0, first-order upwind; ghost cells copy edges
    pad = [(0, 0)] * 3
    pad[axis] = (1, 1)
    r = np.pad(rho, pad, mode="edge")
    sl = [slice(None)] * 3

    def shifted(k):
        sl[axis] = slice(1 + k, 1 + k + rho.shape[axis])
        return r[tuple(sl)]

    back = rho - shifted(-1)
    fwd = shifted(1) - rho
    c = vel * dt / h
    return rho - np.where(c > 0, c * back, c * fwd)


def solve_eulerian(
    field: VelocityField,
    rho0: InitialDatum,
    s: float,
    t: float,
    grid: GridSpec,
    dt: Optional[float] = None,
    cfl: float = 0.4,
) -> GridFunction:
    """Dimension-split upwind solution of the advective transport equation.

    The velocity is the zero-extended field sampled at cell centres, so cells
    outside the domain keep their initial value.  ``dt`` defaults to the
    largest step allowed by ``dt <= cfl * h / sup|v|``; an explicit ``dt``
    violating that bound raises ``ValueError``.
    """
    h = float(np.min(grid.spacing))
    speed = field.sup_speed
    dt_max = cfl * h / speed if speed > 0 else np.inf
    if dt is not None and dt > dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt!r} violates CFL limit {dt_max!r}")
    centers = grid.centers()
    shape = (grid.cells,) * 3
    rho = rho0(centers).reshape(shape)
    if s == t or speed == 0:
        return GridFunction(grid, rho)
    span = t - s
    if dt is None:
        dt = dt_max
    nsteps = max(1, math.ceil(abs(span) / dt - 1e-9))
    step = span / nsteps
    sign = np.sign(span)
    cache = None
    for k in range(nsteps):
        r = s + k * step
        if cache is None or not field.autonomous:
            v = field.evaluate(r, centers).reshape(shape + (3,))
            cache = v
        v = cache
        for axis in range(3):
            rho = _upwind_sweep(rho, sign * v[..., axis], abs(step), grid.spacing[axis], axis)
    return GridFunction(grid, rho)


# --- norm evolution ----------------------------------------------------------


class NormResidual(NamedTuple):
    t: float
    norm_sq: float  # MC ||rho(s,t)||^2
    predicted: float  # ||rho0||^2 + time integral
    residual: float
    sigma: float  # combined MC standard error
    initial_norm_sq: float


def l2_identity_residual(
    flow: FlowEvaluator,
    rho0: InitialDatum,
    s: float,
    times: Sequence[float],
    n: int,
    seed: int,
) -> list[NormResidual]:
    """Check ``||rho(t)||^2 = ||rho0||^2 + int_s^t int (div v) rho^2`` at each time.

    The left side traces uniform samples back from ``t`` to ``s``.  The
    inner integral at time ``r`` is pushed forward from the same samples:
    ``int div(r, X(r,s,y)) rho0(y)^2 det dX(r,s,y) dy``, accumulated by the
    trapezoid rule over the RK4 nodes.
    """
    dom = flow.domain
    vol = dom.exact_volume
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be ordered")
    y = sample_uniform(dom, n, seed)
    r0sq = rho0(y) ** 2
    base = vol * float(np.mean(r0sq))
    base_sig = vol * float(np.std(r0sq)) / math.sqrt(n)
    feet = backtrack_many(flow, s, times, y)
    integrals = {}
    for side in (1, -1):
        ts = sorted({t for t in times if (t - s) * side > 0}, key=lambda t: abs(t - s))
        if not ts:
            continue
        integrals.update(_norm_time_integrals(flow, s, ts, y, r0sq, vol, n))
    out = []
    for j, t in enumerate(times):
        lhs_terms = rho0(feet[j]) ** 2
        lhs = vol * float(np.mean(lhs_terms))
        lhs_sig = vol * float(np.std(lhs_terms)) / math.sqrt(n)
        integ, integ_sig = integrals.get(t, (0.0, 0.0))
        pred = base + integ
        sigma = math.sqrt(lhs_sig**2 + base_sig**2 + integ_sig**2)
        out.append(NormResidual(t, lhs, pred, abs(lhs - pred), sigma, base))
    return out


def _norm_time_integrals(flow, s, ts, y, r0sq, vol, n):
    """Signed ``int_s^t`` of the pushed-forward inner integral for each t."""
    dom = flow.domain
    field = flow.field
    x = y.copy()
    jac = np.zeros(n)
    acc = np.zeros(n)
    r = s

    def inner(rr, xx, jj):
        return np.where(dom.contains(xx), field.divergence(rr, xx), 0.0) * r0sq * np.exp(jj)

    g_prev = inner(r, x, jac)
    result = {}
    for t in ts:
        rec = flow.trajectory(r, x, t) if len(x) else None
        # trajectory returns positions per node; walk them for the trapezoid
        for k in range(1, len(rec.times)):
            g = inner(rec.times[k], rec.positions[k], jac + rec.jacobian_log[k])
            acc = acc + 0.5 * (rec.times[k] - rec.times[k - 1]) * (g_prev + g)
            g_prev = g
        x = rec.positions[-1]
        jac = jac + rec.jacobian_log[-1]
        r = t
        result[t] = (vol * float(np.mean(acc)), vol * float(np.std(acc)) / math.sqrt(n))
    return result


# --- commutator --------------------------------------------------------------


def commutator_field(
    field: VelocityField,
    rho_snapshot: Callable[[np.ndarray], np.ndarray],
    eps: float,
    t: float,
    grid: GridSpec,
    order: int = 8,
) -> GridFunction:
    """Mollification commutator on the grid nodes.

    ``R = -grad(eta*rho) . v + div(eta*(rho v)) - eta*(rho div v)``
    with ``rho`` zero outside the domain.  The first two terms are combined
    as ``sum_j rho(x-y_j) (v(x-y_j) - v(x)) . G_j`` over the gradient weights
    ``G_j`` so the O(1) parts cancel before rounding.
    """
    dom = field.domain
    if dom is not None:
        mollify(field, eps)  # validates eps against the enclosure margin
    rule = Mollifier.of_radius(eps).rule(order)
    y, w, g = rule
    q = len(w)
    x = grid.centers()
    out = np.zeros(len(x))
    if dom is not None:
        active = np.flatnonzero(dom.distance(x) < eps)
    else:
        active = np.arange(len(x))
    block = max(1, (1 << 21) // q)
    for i in range(0, len(active), block):
        idx = active[i : i + block]
        xs = x[idx]
        shifted = (xs[:, None, :] - y[None]).reshape(-1, 3)
        rho = np.asarray(rho_snapshot(shifted), dtype=float)
        if dom is not None:
            rho = np.where(dom.contains(shifted), rho, 0.0)
        rho = rho.reshape(len(idx), q)
        vs = field.evaluate(t, shifted).reshape(len(idx), q, 3)
        ds = field.divergence(t, shifted).reshape(len(idx), q)
        vx = field.evaluate(t, xs)
        diff = vs - vx[:, None, :]
        first = np.einsum("nq,nqi,qi->n", rho, diff, g)
        third = (rho * ds) @ w
        out[idx] = first - third
    return GridFunction(grid, out.reshape((grid.cells,) * 3))


# --- weak formulation --------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported ``phi(t, x)`` with its derivatives."""

    value: Callable
    dt: Callable
    grad: Callable
    support_box: Domain
    time_support: tuple


def _bump1(u):
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(1.0 / (u[inside] ** 2 - 1.0))
    return out


def _bump1_prime(u):
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = np.exp(1.0 / (ui**2 - 1.0)) * (-2.0 * ui / (ui**2 - 1.0) ** 2)
    return out


def bump_test_function(t_center: float, t_half: float, x_center, x_radius: float) -> TestFunction:
    """Product bump ``b((t - tc)/T) * b(|x - c|/R)`` with ``b(u) = exp(1/(u^2-1))``."""
    c = np.asarray(x_center, dtype=float)

    def spatial(x):
        d = (x - c) / x_radius
        r2 = np.einsum("ij,ij->i", d, d)
        b = np.zeros(len(x))
        inside = r2 < 1.0
        b[inside] = np.exp(1.0 / (r2[inside] - 1.0))
        return b, d, r2, inside

    def value(t, x):
        b, *_ = spatial(x)
        return _bump1(np.asarray((t - t_center) / t_half, dtype=float)) * b

    def dt(t, x):
        b, *_ = spatial(x)
        return _bump1_prime(np.asarray((t - t_center) / t_half, dtype=float)) / t_half * b

    def grad(t, x):
        b, d, r2, inside = spatial(x)
        scale = np.zeros(len(x))
        scale[inside] = b[inside] * (-2.0 / (r2[inside] - 1.0) ** 2) / x_radius
        return _bump1(np.asarray((t - t_center) / t_half, dtype=float)) * scale[:, None] * d

    half = np.full(3, x_radius)
    from .geometry import box

    return TestFunction(value, dt, grad, box(c - half, c + half), (t_center - t_half, t_center + t_half))


def weak_residual(
    solution: TransportSolution,
    field: VelocityField,
    rho0: InitialDatum,
    testfn: TestFunction,
    time_window: tuple,
    cells: int = 64,
    time_nodes: int = 48,
) -> float:
    """Absolute weak-form residual on ``[s - T, s + T]``.

    Forward half: ``int_s^{s+T} int_Omega {rho phi_t + rho v.grad phi +
    (div v) rho phi} + int rho0 phi(s)``; the backward half subtracts the
    initial term.  Space uses the midpoint rule on ``cells^3`` cells over the
    test function's support box, time uses Gauss-Legendre.  Returns the
    larger of the two halves.
    """
    s = solution.s
    lo, hi = time_window
    grid = GridSpec(testfn.support_box, cells)
    x = grid.centers()
    if field.domain is not None:
        x = x[field.domain.contains(x)]
    dv = grid.cell_volume
    init = float(np.sum(rho0(x) * testfn.value(s, x)) * dv)
    u, w = np.polynomial.legendre.leggauss(time_nodes)
    worst = 0.0
    for a, b, sign in ((s, hi, 1.0), (lo, s, -1.0)):
        if b <= a:
            continue
        times = 0.5 * (b - a) * u + 0.5 * (a + b)
        wts = 0.5 * (b - a) * w
        rho = solution.at_times(times, x)
        total = 0.0
        for k, tk in enumerate(times):
            r = rho[k]
            integrand = (
                r * testfn.dt(tk, x)
                + r * np.einsum("ij,ij->i", field.evaluate(tk, x), testfn.grad(tk, x))
                + field.divergence(tk, x) * r * testfn.value(tk, x)
            )
            total += wts[k] * float(np.sum(integrand)) * dv
        worst = max(worst, abs(total + sign * init))
    return worst


# --- convergence under mollification -----------------------------------------


def rho_convergence_study(
    field: VelocityField,
    rho0: InitialDatum,
    s: float,
    t: float,
    eps_list: Sequence[float],
    n: int,
    seed: int,
    step_size: float = 1e-2,
    order: int = 8,
) -> list[float]:
    """L2(domain) distances between Lagrangian solutions for successive eps.

    Every solution is evaluated on the same uniform samples; the returned
    list has ``len(eps_list) - 1`` entries.
    """
    eps = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    dom = field.domain
    x = sample_uniform(dom, n, seed)
    sols = [
        solve_lagrangian(FlowEvaluator(mollify(field, e, order), step_size), rho0, s, t, x)
        for e in eps
    ]
    vol = dom.exact_volume
    return [
        math.sqrt(vol * float(np.mean((a - b) ** 2))) for a, b in zip(sols, sols[1:])
    ]
