"""Brinkman test problems on the unit square.

All closures take coordinate arrays ``x, y`` of equal shape and return
arrays with trailing component axes: vectors ``(..., 2)``, gradients
``(..., 2, 2)`` (row i = gradient of component i), symmetric tensors
``(..., 3)`` as ``(t11, t12, t22)``.

The physical model is

    nu kappa^-1 u - div sigma = f,   sigma = 2 nu eps(u) - p I,   div u = 0,

and is solved in the viscosity-free form obtained by dividing through by nu.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

Closure = Callable[[np.ndarray, np.ndarray], np.ndarray]


class InvalidProblemError(ValueError):
    pass


# ---------------------------------------------------------------- permeability

@dataclass(frozen=True)
class Rectangle:
    x0: float
    x1: float
    y0: float
    y1: float
    value: float

    def contains(self, x, y):
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


@dataclass(frozen=True)
class Disc:
    cx: float
    cy: float
    r: float
    value: float

    def contains(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.r ** 2


@dataclass(frozen=True)
class KappaInvField:
    """Inverse permeability: a constant, a closed form, or piecewise regions.

    For ``regions`` the last listed shape containing a point wins; points in
    no shape take ``background``.
    """

    variant: str
    value: float | None = None
    expression: Closure | None = None
    label: str = ""
    background: float | None = None
    regions: tuple = ()

    def __post_init__(self):
        if self.variant == "constant":
            if self.value is None or not self.value > 0:
                raise InvalidProblemError(f"constant kappa^-1 must be positive, got {self.value}")
        elif self.variant == "closed_form":
            if self.expression is None:
                raise InvalidProblemError("closed-form kappa^-1 needs an expression")
        elif self.variant == "regions":
            if self.background is None:
                raise InvalidProblemError("region-wise kappa^-1 needs a background value")
            values = [self.background] + [s.value for s in self.regions]
            if not all(v > 0 for v in values):
                raise InvalidProblemError(f"region values must be positive, got {values}")
        else:
            raise InvalidProblemError(f"unknown kappa^-1 variant {self.variant!r}")

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value), label=f"{float(value):g}")

    @classmethod
    def closed_form(cls, expression, label):
        return cls("closed_form", expression=expression, label=label)

    @classmethod
    def from_regions(cls, background, regions, label=""):
        return cls("regions", background=float(background), regions=tuple(regions), label=label)

    def __call__(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if self.variant == "constant":
            return np.full(np.broadcast(x, y).shape, self.value)
        if self.variant == "closed_form":
            return np.broadcast_to(np.asarray(self.expression(x, y), dtype=float),
                                   np.broadcast(x, y).shape).copy()
        out = np.full(np.broadcast(x, y).shape, self.background)
        for shape in self.regions:
            out = np.where(shape.contains(x, y), shape.value, out)
        return out

    def maximum(self, samples=None):
        if self.variant == "constant":
            return self.value
        if self.variant == "regions":
            return max([self.background] + [s.value for s in self.regions])
        return float(np.max(self(*samples)))


# ---------------------------------------------------------------- exact fields

@dataclass(frozen=True)
class ExactSolution:
    u: Closure
    grad_u: Closure
    lap_u: Closure
    p: Closure
    grad_p: Closure

    def sigma(self, x, y, nu=1.0):
        """2 nu eps(u) - p I."""
        G = self.grad_u(x, y)
        p = self.p(x, y)
        return np.stack([2 * nu * G[..., 0, 0] - p,
                         nu * (G[..., 0, 1] + G[..., 1, 0]),
                         2 * nu * G[..., 1, 1] - p], axis=-1)

    def div_sigma(self, x, y, nu=1.0):
        # div(2 eps(u)) = lap u + grad div u = lap u for solenoidal u
        return nu * self.lap_u(x, y) - self.grad_p(x, y)


def _stream_solution(X, Y, p, grad_p) -> ExactSolution:
    """Velocity ``(X Y', -X' Y)`` of the separable stream function X(x) Y(y).

    ``X`` and ``Y`` are lists of callables: the function and its first three
    derivatives.
    """
    def u(x, y):
        return np.stack([X[0](x) * Y[1](y), -X[1](x) * Y[0](y)], axis=-1)

    def grad_u(x, y):
        return np.stack([np.stack([X[1](x) * Y[1](y), X[0](x) * Y[2](y)], -1),
                         np.stack([-X[2](x) * Y[0](y), -X[1](x) * Y[1](y)], -1)], -2)

    def lap_u(x, y):
        return np.stack([X[2](x) * Y[1](y) + X[0](x) * Y[3](y),
                         -(X[3](x) * Y[0](y) + X[1](x) * Y[2](y))], axis=-1)

    return ExactSolution(u, grad_u, lap_u, p, grad_p)


def _quartic_bump():
    # s^2 (s-1)^2 and derivatives
    return [lambda s: s ** 2 * (s - 1) ** 2,
            lambda s: 2 * s * (s - 1) * (2 * s - 1),
            lambda s: 12 * s ** 2 - 12 * s + 2,
            lambda s: 24 * s - 12]


def _example1_exact() -> ExactSolution:
    X = _quartic_bump()
    Y = [lambda s, d=d: 0.5 * d(s) for d in _quartic_bump()]
    return _stream_solution(
        X, Y,
        lambda x, y: (2 * x - 1) * (2 * y - 1),
        lambda x, y: np.stack([2 * (2 * y - 1), 2 * (2 * x - 1)], axis=-1) + 0 * x[..., None])


def _example2_exact() -> ExactSolution:
    pi = math.pi
    # sin^2(pi s) and derivatives
    X = [lambda s: np.sin(pi * s) ** 2,
         lambda s: pi * np.sin(2 * pi * s),
         lambda s: 2 * pi ** 2 * np.cos(2 * pi * s),
         lambda s: -4 * pi ** 3 * np.sin(2 * pi * s)]
    Y = [lambda s, d=d: d(s) / pi for d in X]
    return _stream_solution(
        X, Y,
        lambda x, y: np.cos(pi * x) * np.cos(pi * y),
        lambda x, y: np.stack([-pi * np.sin(pi * x) * np.cos(pi * y),
                               -pi * np.cos(pi * x) * np.sin(pi * y)], axis=-1))


# ---------------------------------------------------------------- problems

def _constant_vector(v):
    v = np.asarray(v, dtype=float)

    def fn(x, y):
        return np.broadcast_to(v, np.broadcast(x, y).shape + (2,)).copy()
    return fn


@dataclass(frozen=True)
class BrinkmanProblem:
    """Physical data; ``f`` and the exact fields refer to the unscaled model."""

    name: str
    kappa_inv: KappaInvField
    f: Closure
    g: Closure
    nu: float = 1.0
    exact: ExactSolution | None = None
    low_permeability: tuple = field(default=())

    def __post_init__(self):
        if not self.nu > 0:
            raise InvalidProblemError(f"viscosity must be positive, got {self.nu}")

    def with_nu(self, nu: float) -> "BrinkmanProblem":
        return _attach_source(replace(self, nu=float(nu)))

    def exact_sigma(self, x, y):
        return self.exact.sigma(x, y, self.nu)

    def exact_div_sigma(self, x, y):
        return self.exact.div_sigma(x, y, self.nu)


def _attach_source(problem: BrinkmanProblem) -> BrinkmanProblem:
    """Manufactured source f = nu kappa^-1 u - div sigma and g = u."""
    ex = problem.exact
    if ex is None:
        return problem
    nu, kinv = problem.nu, problem.kappa_inv

    def f(x, y):
        return nu * kinv(x, y)[..., None] * ex.u(x, y) - ex.div_sigma(x, y, nu)

    return replace(problem, f=f, g=ex.u)


def example1(inv_kappa: float = 1.0) -> BrinkmanProblem:
    """Polynomial manufactured solution with homogeneous boundary velocity."""
    prob = BrinkmanProblem("example1", KappaInvField.constant(inv_kappa), None, None,
                           exact=_example1_exact())
    return _attach_source(prob)


def example2_kappa_inv() -> KappaInvField:
    return KappaInvField.closed_form(lambda x, y: 1000.0 * (np.sin(np.pi * x) + 1.1) + 0.0 * y,
                                     "1000(sin(pi x)+1.1)")


def example2(nu: float = 1.0) -> BrinkmanProblem:
    """Trigonometric manufactured solution, variable permeability."""
    prob = BrinkmanProblem("example2", example2_kappa_inv(), None, None, nu=nu,
                           exact=_example2_exact())
    return _attach_source(prob)


# Default obstacle geometry; the coordinates are approximate.
EXAMPLE3_BARS = (
    (0.1, 0.3, 0.15, 0.85),
    (0.45, 0.55, 0.0, 0.6),
    (0.7, 0.9, 0.15, 0.85),
)
EXAMPLE4_VUGS = (
    ("rect", (0.0, 1.0, 0.45, 0.55)),
    ("disc", (0.25, 0.2, 0.12)),
    ("disc", (0.7, 0.25, 0.1)),
    ("disc", (0.3, 0.78, 0.1)),
    ("disc", (0.75, 0.8, 0.13)),
    ("rect", (0.2, 0.3, 0.2, 0.5)),
    ("rect", (0.7, 0.8, 0.5, 0.8)),
)


def _shape(kind, coords, value):
    if kind == "rect":
        return Rectangle(*coords, value)
    if kind == "disc":
        return Disc(*coords, value)
    raise InvalidProblemError(f"unknown region shape {kind!r}")


def example3(inv_kappa_high: float = 1e3, bars=EXAMPLE3_BARS, nu: float = 1e-2) -> BrinkmanProblem:
    """Channel with low-permeability bars (kappa^-1 = ``inv_kappa_high``) in a unit background."""
    shapes = [Rectangle(*b, inv_kappa_high) for b in bars]
    kinv = KappaInvField.from_regions(1.0, shapes, label=f"bars:{inv_kappa_high:g}")
    return BrinkmanProblem("example3", kinv, _constant_vector((0.0, 0.0)),
                           _constant_vector((1.0, 0.0)), nu=nu, low_permeability=tuple(shapes))


def example4(inv_kappa_high: float = 1e3, vugs=EXAMPLE4_VUGS, nu: float = 1e-2) -> BrinkmanProblem:
    """Vuggy medium: unit kappa^-1 in the vugs, ``inv_kappa_high`` elsewhere."""
    shapes = [_shape(kind, coords, 1.0) for kind, coords in vugs]
    kinv = KappaInvField.from_regions(inv_kappa_high, shapes, label=f"vugs:{inv_kappa_high:g}")
    return BrinkmanProblem("example4", kinv, _constant_vector((0.0, 0.0)),
                           _constant_vector((1.0, 0.0)), nu=nu,
                           low_permeability=("complement",) + tuple(shapes))


def custom(kappa_inv: KappaInvField, f=(0.0, 0.0), g=(0.0, 0.0), nu: float = 1.0) -> BrinkmanProblem:
    """Constant source and boundary velocity."""
    return BrinkmanProblem("custom", kappa_inv, _constant_vector(f), _constant_vector(g), nu=nu)


def in_low_permeability(problem: BrinkmanProblem, x, y):
    """Mask of points in the low-permeability part of Examples 3-4."""
    shapes = problem.low_permeability
    if not shapes:
        return np.zeros(np.broadcast(x, y).shape, dtype=bool)
    complement = shapes[0] == "complement"
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    for s in shapes[1:] if complement else shapes:
        inside |= s.contains(x, y)
    return ~inside if complement else inside


# ---------------------------------------------------------------- viscosity scaling

@dataclass(frozen=True)
class ScaledProblem:
    """Viscosity-free data: kappa^-1 u - div s = f / nu with s = sigma / nu."""

    kappa_inv: KappaInvField
    f: Closure
    g: Closure
    nu: float


def nu_scale(problem: BrinkmanProblem) -> ScaledProblem:
    nu = problem.nu
    if not nu > 0:
        raise InvalidProblemError(f"viscosity must be positive, got {nu}")
    f = problem.f

    def f_scaled(x, y):
        return np.asarray(f(x, y)) / nu

    return ScaledProblem(problem.kappa_inv, f if nu == 1.0 else f_scaled, problem.g, nu)


def nu_unscale(sigma, u, nu: float, p=None):
    """Physical stress (and pressure) from the scaled ones; velocity is unchanged."""
    if not nu > 0:
        raise InvalidProblemError(f"viscosity must be positive, got {nu}")
    out = (nu * np.asarray(sigma), np.asarray(u))
    if p is not None:
        out += (nu * np.asarray(p),)
    return out


def boundary_flux(g: Closure, n_samples: int = 64) -> float:
    """Gauss approximation of the net boundary flux of ``g`` over the unit square."""
    t, w = np.polynomial.legendre.leggauss(n_samples)
    t, w = 0.5 * (t + 1), 0.5 * w
    z, o = np.zeros_like(t), np.ones_like(t)
    total = 0.0
    for (x, y), n in [((t, z), (0, -1)), ((o, t), (1, 0)), ((t, o), (0, 1)), ((z, t), (-1, 0))]:
        total += float(w @ (np.asarray(g(x, y)) @ np.asarray(n, float)))
    return total


def validate_exact(problem: BrinkmanProblem, n_points: int = 100, seed: int = 0, tol: float = 1e-8):
    """Check sigma = 2 nu eps(u) - p I and f = nu kappa^-1 u - div sigma at random points."""
    if problem.exact is None:
        return
    rng = np.random.default_rng(seed)
    x, y = rng.random(n_points), rng.random(n_points)
    ex = problem.exact
    resid = problem.nu * problem.kappa_inv(x, y)[:, None] * ex.u(x, y) - ex.div_sigma(x, y, problem.nu) - problem.f(x, y)
    if np.max(np.abs(resid)) > tol * max(1.0, np.max(np.abs(problem.f(x, y)))):
        raise InvalidProblemError(f"source inconsistent with exact solution (max residual {np.max(np.abs(resid)):.3e})")
    if abs(boundary_flux(problem.g)) > 1e-10:
        raise InvalidProblemError("boundary datum has nonzero net flux")


def catalog(name: str) -> Callable[..., BrinkmanProblem]:
    try:
        return {"example1": example1, "example2": example2, "example3": example3,
                "example4": example4}[name]
    except KeyError:
        raise InvalidProblemError(f"unknown problem {name!r}") from None


def region_shapes(entries: Sequence[dict]):
    """Shapes from config entries like ``{rect: [x0, x1, y0, y1], value: 10}``."""
    shapes = []
    for entry in entries:
        kinds = [k for k in ("rect", "disc") if k in entry]
        if len(kinds) != 1 or "value" not in entry:
            raise InvalidProblemError(f"region entry needs exactly one of rect/disc and a value: {entry}")
        shapes.append(_shape(kinds[0], tuple(float(c) for c in entry[kinds[0]]), float(entry["value"])))
    return shapes
