"""PDE data: coefficient fields, nonlinearities, test-problem configurations.

The solved system couples three scalar fields (u, v, w) through a shared
reaction term:

    d(phi) + [ xi(x,y) (phi_x + phi_y) - div(zeta(x,y) grad phi)
               + wp * e_i * f(u, v) + r(x,y) * w * [phi == w] ] dt
        = forcing_i dt + dW

with homogeneous Dirichlet boundary conditions.  Coefficient fields are plain
callables (x, y) -> array; forcings are callables (x, y, t) -> array, all
vectorized over numpy inputs.

Two nonlinearities are supported:

    saturating_sum : f(u, v) = u/(kappa1 + u) + v/(kappa2 + v)
    test1_product  : f(u, v) = u*v / ((1 + u)(v + 2))

Test problem 1 carries a manufactured solution; its forcing terms are the
closed forms obtained by substituting the exact triple into the equations, so
the noise-free residual vanishes identically (this is enforced by tests).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

_POLE_TOL = 1e-12

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]
TimeField = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


def const_field(c: float) -> Field:
    c = float(c)

    def f(x, y):
        return np.full(np.broadcast(x, y).shape, c)

    return f


@dataclass(frozen=True)
class ModelSpec:
    """Complete problem data for one configuration of the system."""

    xi: Field                     # advection speed, applied to (d/dx + d/dy)
    zeta: Field                   # diffusivity, must stay > 0
    r: Field                      # reaction coefficient (acts on w only)
    wp: float
    e: tuple[float, float, float]
    kappa: tuple[float, float]
    nonlinearity: str             # "saturating_sum" | "test1_product"
    init: tuple[Field, Field, Field]
    forcing: Optional[tuple[TimeField, TimeField, TimeField]] = None
    exact: Optional[tuple[TimeField, TimeField, TimeField]] = None
    exact_grad: Optional[tuple] = None   # per field: (d/dx, d/dy) callables
    name: str = "custom"

    def __post_init__(self):
        if self.nonlinearity not in ("saturating_sum", "test1_product"):
            raise ValueError(f"unknown nonlinearity selector {self.nonlinearity!r}")
        if self.kappa[0] <= 0 or self.kappa[1] <= 0:
            raise ValueError(f"kappa constants must be positive, got {self.kappa}")

    def with_wp(self, wp: float) -> "ModelSpec":
        """Copy with a different nonlinearity strength (wp = 0 disables it)."""
        return replace(self, wp=float(wp))


def nonlinear_f(spec: ModelSpec, u, v):
    """Reaction value f(u, v) for the spec's selector (vectorized).

    Raises ValueError when any denominator comes within 1e-12 of a pole.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if spec.nonlinearity == "saturating_sum":
        k1, k2 = spec.kappa
        d1 = k1 + u
        d2 = k2 + v
        if np.any(np.abs(d1) < _POLE_TOL) or np.any(np.abs(d2) < _POLE_TOL):
            raise ValueError("singular nonlinearity: denominator within 1e-12 of a pole")
        return u / d1 + v / d2
    den = (1.0 + u) * (v + 2.0)
    if np.any(np.abs(den) < _POLE_TOL):
        raise ValueError("singular nonlinearity: denominator within 1e-12 of a pole")
    return u * v / den


# ---------------------------------------------------------------------------
# Test problem 1: manufactured solution on the unit square
# ---------------------------------------------------------------------------

_PI = math.pi
TEST1_DIFFUSIVITY = 1e-3


def _rho(x, y):
    return np.sin(_PI * x) * np.sin(_PI * y)


def test1_exact(x, y, t):
    """Exact triple (u, v, w) = (e^{-5t}, e^{-2t}, e^{-3t}) * sin(pi x) sin(pi y)."""
    r = _rho(x, y)
    return (np.exp(-5.0 * t) * r, np.exp(-2.0 * t) * r, np.exp(-3.0 * t) * r)


def test1_spec(prefactor: float = 1.0) -> ModelSpec:
    """Test problem 1: advection speed 1, diffusivity 1e-3, reaction 2 on w,
    product nonlinearity with strength 0.6 * prefactor, manufactured forcing.

    The per-equation forcings are the closed forms obtained by substituting
    the exact solution triple into the noise-free equations; the nonlinear
    contribution 0.6 * prefactor * uv/((1+u)(v+2)) is identical in all three.
    """
    D = TEST1_DIFFUSIVITY
    wp = 0.6 * prefactor

    def nl_at_exact(x, y, t):
        u, v, _ = test1_exact(x, y, t)
        return wp * u * v / ((1.0 + u) * (v + 2.0))

    def linear_part(x, y, t, decay):
        # phi_t + phi_x + phi_y - D lap(phi) for phi = e^{-decay t} rho
        r = _rho(x, y)
        cx = _PI * np.cos(_PI * x) * np.sin(_PI * y)
        cy = _PI * np.sin(_PI * x) * np.cos(_PI * y)
        return np.exp(-decay * t) * ((2.0 * D * _PI**2 - decay) * r + cx + cy)

    def f_u(x, y, t):
        return linear_part(x, y, t, 5.0) + nl_at_exact(x, y, t)

    def f_v(x, y, t):
        return linear_part(x, y, t, 2.0) + nl_at_exact(x, y, t)

    def f_w(x, y, t):
        # the +2w reaction contributes 2 e^{-3t} rho
        extra = 2.0 * np.exp(-3.0 * t) * _rho(x, y)
        return linear_part(x, y, t, 3.0) + extra + nl_at_exact(x, y, t)

    init = lambda x, y: _rho(x, y)

    def make_grad(decay):
        gx = lambda x, y, t: np.exp(-decay * t) * _PI * np.cos(_PI * x) * np.sin(_PI * y)
        gy = lambda x, y, t: np.exp(-decay * t) * _PI * np.sin(_PI * x) * np.cos(_PI * y)
        return (gx, gy)

    return ModelSpec(
        xi=const_field(1.0),
        zeta=const_field(D),
        r=const_field(2.0),
        wp=wp,
        e=(1.0, 1.0, 1.0),
        kappa=(1.0, 1.0),
        nonlinearity="test1_product",
        init=(init, init, init),
        forcing=(f_u, f_v, f_w),
        exact=(lambda x, y, t: test1_exact(x, y, t)[0],
               lambda x, y, t: test1_exact(x, y, t)[1],
               lambda x, y, t: test1_exact(x, y, t)[2]),
        exact_grad=(make_grad(5.0), make_grad(2.0), make_grad(3.0)),
        name="test1",
    )


# ---------------------------------------------------------------------------
# Test problem 2: noise-driven groundwater model on the unit square
# ---------------------------------------------------------------------------

TEST2_DIFFUSIVITY = 1e-4


def test2_spec(init_kind: str = "smooth",
               delta_center: tuple[float, float] = (0.5, 0.5),
               delta_width: float = 0.05,
               prefactor: float = 1.0) -> ModelSpec:
    """Test problem 2: advection speed 1, diffusivity 1e-4, reaction 2 on w,
    no deterministic forcing (the dynamics are noise-driven).

    init_kind "smooth" uses x(1-x)y(1-y); "delta" uses a unit-mass Gaussian
    bump of the given width.  The nominal point source sits at the domain
    corner, where every basis function vanishes, so the bump is centered at
    delta_center (default (0.5, 0.5)) instead; the relocation is logged.
    """
    if init_kind not in ("smooth", "delta"):
        raise ValueError(f"init_kind must be 'smooth' or 'delta', got {init_kind!r}")
    if init_kind == "delta":
        if delta_width <= 0:
            raise ValueError(f"delta_width must be positive, got {delta_width}")
        cx, cy = delta_center
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
            raise ValueError(f"delta_center {delta_center} outside the unit square")
        log.info("point-source initial data realized as Gaussian bump at %s, width %g",
                 delta_center, delta_width)

        amp = 1.0 / (2.0 * _PI * delta_width**2)

        def init(x, y):
            return amp * np.exp(-((np.asarray(x) - cx) ** 2 + (np.asarray(y) - cy) ** 2)
                                / (2.0 * delta_width**2))
    else:
        def init(x, y):
            return np.asarray(x) * (1.0 - np.asarray(x)) * np.asarray(y) * (1.0 - np.asarray(y))

    return ModelSpec(
        xi=const_field(1.0),
        zeta=const_field(TEST2_DIFFUSIVITY),
        r=const_field(2.0),
        wp=0.6 * prefactor,
        e=(1.0, 1.0, 1.0),
        kappa=(1.0, 1.0),
        nonlinearity="test1_product",
        init=(init, init, init),
        forcing=None,
        exact=None,
        name=f"test2_{init_kind}",
    )
