"""Velocity fields on bounded domains, their zero extension and mollification.

Every field is vectorised: ``evaluate(t, x)`` takes ``x`` of shape ``(N, 3)``
(or a single point) and returns ``(N, 3)``; ``divergence`` returns ``(N,)``.
Points outside the domain get the zero vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import Domain, Enclosure, box, unit_ball

__all__ = [
    "VelocityField",
    "Mollifier",
    "MollifiedField",
    "QuadratureError",
    "DivergenceNorm",
    "smoothstep",
    "cutoff",
    "rotation",
    "contraction",
    "rough_shear",
    "zero_field",
    "constant_window",
    "linear_window",
    "eval_zero_extended",
    "mollify",
    "mollifier_normalizer",
    "div_l1_linf",
    "SCENARIOS",
]


class QuadratureError(RuntimeError):
    pass


def smoothstep(u):
    """Quintic smoothstep 6u^5 - 15u^4 + 10u^3 clamped to [0, 1]."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def smoothstep_prime(u):
    inside = (u > 0.0) & (u < 1.0)
    u = np.clip(u, 0.0, 1.0)
    return np.where(inside, 30.0 * u * u * (1.0 - u) ** 2, 0.0)


def cutoff(r, inner: float, outer: float):
    """C^2 profile equal to 1 on [0, inner] and 0 on [outer, inf)."""
    return 1.0 - smoothstep((np.asarray(r) - inner) / (outer - inner))


def cutoff_prime(r, inner: float, outer: float):
    return -smoothstep_prime((np.asarray(r) - inner) / (outer - inner)) / (outer - inner)


def _radius(x):
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def _points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(1, 3) if x.ndim == 1 else x


class VelocityField:
    """Time-dependent velocity field with zero extension outside ``domain``.

    ``raw_velocity`` and ``raw_divergence`` are evaluated only at interior
    points. ``domain=None`` marks a synthetic window field that is never
    zero-extended (used to test the mollifier on constants and linear maps).
    """

    def __init__(
        self,
        name: str,
        domain: Optional[Domain],
        raw_velocity: Callable,
        raw_divergence: Callable,
        div_sup_bound: float,
        sup_speed: float,
        regularity_note: str = "",
        vanishes_on_boundary: bool = True,
        autonomous: bool = True,
        description: str = "",
    ):
        self.name = name
        self.domain = domain
        self._velocity = raw_velocity
        self._divergence = raw_divergence
        self.div_sup_bound = float(div_sup_bound)
        self.sup_speed = float(sup_speed)
        self.regularity_note = regularity_note
        self.vanishes_on_boundary = vanishes_on_boundary
        self.autonomous = autonomous
        self.description = description

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"

    @property
    def divergence_free(self) -> bool:
        return self.div_sup_bound == 0.0

    def evaluate(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = _points(x)
        out = np.zeros_like(pts)
        if self.domain is None:
            out[:] = self._velocity(t, pts)
        else:
            inside = self.domain.contains(pts)
            if inside.all():
                out = self._velocity(t, pts)
            elif inside.any():
                out[inside] = self._velocity(t, pts[inside])
        return out.reshape(x.shape)

    def divergence(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = _points(x)
        out = np.zeros(len(pts))
        if self.domain is None:
            out[:] = self._divergence(t, pts)
        else:
            inside = self.domain.contains(pts)
            if inside.all():
                out = self._divergence(t, pts)
            elif inside.any():
                out[inside] = self._divergence(t, pts[inside])
        return out if x.ndim > 1 else out.reshape(())

    __call__ = evaluate


def eval_zero_extended(field: VelocityField, t: float, x) -> np.ndarray:
    return field.evaluate(t, x)


# --- scenario fields -------------------------------------------------------

CORE, OUTER = 0.7, 0.9


def _radial_max(fun, lo: float, hi: float) -> float:
    res = minimize_scalar(lambda r: -fun(r), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return float(max(-res.fun, fun(lo), fun(hi)))


def rotation(domain: Optional[Domain] = None) -> VelocityField:
    """Rigid rotation about the x3 axis, cut off smoothly before the boundary."""
    domain = domain or unit_ball()

    def vel(t, x):
        phi = cutoff(_radius(x), CORE, OUTER)
        v = np.empty_like(x)
        v[:, 0] = -x[:, 1] * phi
        v[:, 1] = x[:, 0] * phi
        v[:, 2] = 0.0
        return v

    def div(t, x):
        return np.zeros(len(x))

    speed = _radial_max(lambda r: r * cutoff(r, CORE, OUTER), CORE, OUTER)
    return VelocityField(
        "rotation", domain, vel, div, 0.0, speed,
        regularity_note="C^2, divergence-free, compactly supported in the ball",
        description="rigid rotation phi(|x|)(-x2, x1, 0); exact rotation for |x| <= 0.7",
    )


def _contraction_div_abs(r):
    return abs(-3.0 * cutoff(r, CORE, OUTER) - r * cutoff_prime(r, CORE, OUTER))


def contraction(domain: Optional[Domain] = None) -> VelocityField:
    """Radial contraction -phi(|x|) x with divergence -3 in the core."""
    domain = domain or unit_ball()

    def vel(t, x):
        phi = cutoff(_radius(x), CORE, OUTER)
        return -phi[:, None] * x

    def div(t, x):
        r = _radius(x)
        return -3.0 * cutoff(r, CORE, OUTER) - r * cutoff_prime(r, CORE, OUTER)

    bound = max(3.0, _radial_max(_contraction_div_abs, CORE, OUTER))
    speed = _radial_max(lambda r: r * cutoff(r, CORE, OUTER), CORE, OUTER)
    return VelocityField(
        "contraction", domain, vel, div, bound, speed,
        regularity_note="C^2, compressible, div = -3 for |x| <= 0.7",
        description="radial contraction -phi(|x|) x; x(s) = x0 exp(-s) in the core",
    )


SHEAR_INNER, SHEAR_OUTER = 0.5, 1.0


def _shear_profile(u):
    return cutoff(np.abs(u), SHEAR_INNER, SHEAR_OUTER)


def _shear_profile_prime(u):
    return np.sign(u) * cutoff_prime(np.abs(u), SHEAR_INNER, SHEAR_OUTER)


def rough_shear(domain: Optional[Domain] = None) -> VelocityField:
    """Shear ``(theta(x1) psi(x2) psi(x3) sqrt|x2|, 0, 0)`` on the cube (-1, 1)^3.

    The gradient blows up like ``|x2|^(-1/2)`` on the plane ``x2 = 0`` (in
    W^{1,1} but not Lipschitz) while the divergence
    ``theta'(x1) psi(x2) psi(x3) sqrt|x2|`` stays bounded.
    """
    domain = domain or box(-np.ones(3), np.ones(3))

    def amplitude(x):
        return _shear_profile(x[:, 2]) * _shear_profile(x[:, 1]) * np.sqrt(np.abs(x[:, 1]))

    def vel(t, x):
        v = np.zeros_like(x)
        v[:, 0] = _shear_profile(x[:, 0]) * amplitude(x)
        return v

    def div(t, x):
        return _shear_profile_prime(x[:, 0]) * amplitude(x)

    root_max = _radial_max(lambda y: _shear_profile(y) * np.sqrt(y), 0.0, 1.0)
    slope_max = _radial_max(lambda u: abs(_shear_profile_prime(u)), SHEAR_INNER, SHEAR_OUTER)
    return VelocityField(
        "rough_shear", domain, vel, div, slope_max * root_max, root_max,
        regularity_note="W^{1,1}_0, not Lipschitz: grad v ~ |x2|^(-1/2); div in L^inf",
        description="shear along x1 with sqrt|x2| profile; x2, x3 conserved, plane x2=0 stationary",
    )


def zero_field(domain: Optional[Domain] = None) -> VelocityField:
    domain = domain or unit_ball()
    return VelocityField(
        "zero", domain,
        lambda t, x: np.zeros_like(x),
        lambda t, x: np.zeros(len(x)),
        0.0, 0.0,
        regularity_note="identically zero",
        description="v = 0; every flow map is the identity",
    )


def constant_window(c) -> VelocityField:
    """Synthetic constant field on all of R^3 (no zero extension)."""
    c = np.asarray(c, dtype=float)
    return VelocityField(
        "constant_window", None,
        lambda t, x: np.broadcast_to(c, x.shape).copy(),
        lambda t, x: np.zeros(len(x)),
        0.0, float(np.linalg.norm(c)), vanishes_on_boundary=False,
    )


def linear_window(matrix) -> VelocityField:
    """Synthetic linear field ``v(x) = A x`` on all of R^3."""
    a = np.asarray(matrix, dtype=float)
    tr = float(np.trace(a))
    return VelocityField(
        "linear_window", None,
        lambda t, x: x @ a.T,
        lambda t, x: np.full(len(x), tr),
        abs(tr), np.inf, vanishes_on_boundary=False,
    )


SCENARIOS = {
    "rotation": rotation,
    "contraction": contraction,
    "rough_shear": rough_shear,
    "zero": zero_field,
}


# --- mollifier ---------------------------------------------------------------


def _bump(r2):
    """exp(1/(r^2 - 1)) for r < 1, else 0, on squared radii."""
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 / (r2[inside] - 1.0))
    return out


def _radial_moment(nodes: int) -> float:
    u, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * (u + 1.0)
    return float(0.5 * np.sum(w * r * r * _bump(r * r)))


def mollifier_normalizer(eps: float = 1.0, quad_points: int = 128) -> float:
    """Constant C making ``C exp(1/(|x|^2-1))`` a unit-mass kernel on the unit ball.

    Computed by Gauss-Legendre in the radius with ``quad_points`` and
    ``2 * quad_points`` nodes; the two must agree to 1e-8 relative.
    ``eps`` is accepted for symmetry with the scaled kernel and does not
    change the result.
    """
    if quad_points < 64:
        raise ValueError("quad_points must be at least 64")
    coarse = _radial_moment(quad_points)
    fine = _radial_moment(2 * quad_points)
    if abs(fine - coarse) > 1e-8 * abs(fine):
        raise QuadratureError(
            f"radial quadrature not converged: {coarse!r} vs {fine!r} ({quad_points} nodes)"
        )
    return 1.0 / (4.0 * np.pi * fine)


class KernelRule(NamedTuple):
    nodes: np.ndarray  # (Q, 3) offsets y with |y| < eps
    weights: np.ndarray  # (Q,) discrete eta^eps, sum = 1
    grad_weights: np.ndarray  # (Q, 3) discrete grad eta^eps


@lru_cache(maxsize=None)
def _reference_rule(order: int):
    u, w = np.polynomial.legendre.leggauss(order)
    g = np.stack(np.meshgrid(u, u, u, indexing="ij"), axis=-1).reshape(-1, 3)
    wt = (w[:, None, None] * w[None, :, None] * w[None, None, :]).reshape(-1)
    r2 = np.einsum("ij,ij->i", g, g)
    keep = r2 < 1.0
    g, wt, r2 = g[keep], wt[keep], r2[keep]
    b = _bump(r2)
    weights = wt * b
    grad = wt[:, None] * (b * (-2.0 / (r2 - 1.0) ** 2))[:, None] * g
    weights = weights / weights.sum()
    # discrete moment condition sum_j G_ji * (-y_ji) = 1 per axis
    moment = -np.sum(grad * g, axis=0)
    grad = grad / moment
    return g, weights, grad


@dataclass(frozen=True)
class Mollifier:
    epsilon: float
    normalizer_C: float

    @classmethod
    def of_radius(cls, eps: float) -> "Mollifier":
        return cls(float(eps), mollifier_normalizer(eps))

    def value(self, y) -> np.ndarray:
        y = _points(y) / self.epsilon
        return self.normalizer_C * _bump(np.einsum("ij,ij->i", y, y)) / self.epsilon**3

    def gradient(self, y) -> np.ndarray:
        y = _points(y) / self.epsilon
        r2 = np.einsum("ij,ij->i", y, y)
        b = _bump(r2)
        safe = np.where(r2 < 1.0, r2 - 1.0, -1.0)
        scale = self.normalizer_C * b * (-2.0 / safe**2) / self.epsilon**4
        return scale[:, None] * y

    def rule(self, order: int) -> KernelRule:
        """Product Gauss-Legendre rule on the cube around B_eps, restricted to the ball.

        Weights are renormalised to unit mass and the gradient weights to the
        exact first moment, so constants and linear maps are reproduced to
        rounding error.
        """
        g, w, grad = _reference_rule(order)
        return KernelRule(g * self.epsilon, w, grad / self.epsilon)


# --- mollified field ---------------------------------------------------------

_BLOCK = 1 << 21  # max (points x nodes) evaluated at once


class MollifiedField(VelocityField):
    """Spatial convolution ``eta^eps * v`` of a zero-extended field."""

    def __init__(self, base: VelocityField, mollifier: Mollifier, quadrature_order: int):
        self.base = base
        self.mollifier = mollifier
        self.quadrature_order = quadrature_order
        self._rule = mollifier.rule(quadrature_order)
        super().__init__(
            f"{base.name}@eps={mollifier.epsilon:g}",
            base.domain,
            None,
            None,
            base.div_sup_bound,
            base.sup_speed,
            regularity_note=f"C^inf mollification of {base.name}",
            vanishes_on_boundary=False,
            autonomous=base.autonomous,
            description=base.description,
        )

    @property
    def epsilon(self) -> float:
        return self.mollifier.epsilon

    def _active(self, pts):
        if self.base.domain is None:
            return np.ones(len(pts), dtype=bool)
        return self.base.domain.distance(pts) < self.epsilon

    def _convolve(self, t, pts, want_div: bool):
        y, w, g = self._rule
        q = len(w)
        n = len(pts)
        vel = np.zeros((n, 3))
        div = np.zeros(n)
        active = np.flatnonzero(self._active(pts))
        block = max(1, _BLOCK // q)
        for start in range(0, len(active), block):
            idx = active[start : start + block]
            shifted = (pts[idx, None, :] - y[None, :, :]).reshape(-1, 3)
            vals = self.base.evaluate(t, shifted).reshape(len(idx), q, 3)
            vel[idx] = np.einsum("q,nqi->ni", w, vals)
            if want_div:
                div[idx] = np.einsum("qi,nqi->n", g, vals)
        return vel, div

    def evaluate(self, t, x):
        x = np.asarray(x, dtype=float)
        vel, _ = self._convolve(t, _points(x), False)
        return vel.reshape(x.shape)

    def divergence(self, t, x):
        x = np.asarray(x, dtype=float)
        _, div = self._convolve(t, _points(x), True)
        return div if x.ndim > 1 else div.reshape(())

    def evaluate_with_divergence(self, t, x):
        return self._convolve(t, _points(x), True)


def mollify(
    field: VelocityField,
    eps: float,
    order: int = 12,
    enclosure: Optional[Enclosure] = None,
) -> MollifiedField:
    """Mollify ``field`` in space with the bump kernel of radius ``eps``.

    Raises ``ValueError`` if ``eps`` exceeds the margin between the domain
    and its enclosing ball, since the mollified support would leave K.
    """
    if order < 8:
        raise ValueError("quadrature order must be at least 8")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if field.domain is not None:
        enclosure = enclosure or Enclosure(field.domain)
        if eps > enclosure.margin:
            raise ValueError(
                f"eps={eps!r} exceeds the enclosure margin {enclosure.margin!r}"
            )
    return MollifiedField(field, Mollifier.of_radius(eps), order)


class DivergenceNorm(NamedTuple):
    sampled: float
    bound: float

    @property
    def compressibility(self) -> float:
        """``exp(bound)``, the guaranteed measure-distortion constant."""
        return float(np.exp(self.bound))


def div_l1_linf(
    field: VelocityField,
    s: float,
    t: float,
    time_nodes: int = 5,
    space_samples: int = 10_000,
    seed: int = 0,
) -> DivergenceNorm:
    """Time integral over [s, t] of the sup-norm of the divergence.

    ``sampled`` uses the trapezoid rule in time and the maximum over uniform
    samples of the domain in space; ``bound`` is ``|t - s| * div_sup_bound``.
    """
    from .geometry import sample_uniform

    if time_nodes < 2:
        raise ValueError("time_nodes must be at least 2")
    if s == t:
        return DivergenceNorm(0.0, 0.0)
    region = field.domain if field.domain is not None else unit_ball()
    pts = sample_uniform(region, space_samples, seed)
    times = np.linspace(min(s, t), max(s, t), time_nodes)
    sup = np.array([np.max(np.abs(field.divergence(r, pts))) for r in times])
    sampled = float(np.trapezoid(sup, times))
    return DivergenceNorm(sampled, abs(t - s) * field.div_sup_bound)
