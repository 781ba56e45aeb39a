"""Quasilinear PDE specifications: d_t y = sum_{|a|<=p} a_alpha[t,y] D^alpha y + f[t,y].

Coefficients read the current solution through a state object (pointwise for
the built-ins, full-field access for nonlocal functionals). Built-in models
live on the unit circle so that boundary conditions never enter the operator
domain; interval runs are supported by the engine but flagged unverified.

Sign convention: the operator is taken from the normal form d_t y = A y, so
transport (d_t y + d_x y = 0) carries a_(1) = -1 even though some displays of
these systems omit the sign.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DerivativeUnavailable
from .geometry import Domain, as_points, torus


def _vectorize_pointwise(func):
    def many(t, state, X):
        X = np.asarray(X, dtype=float)
        return np.asarray([func(t, state, x) for x in X])

    return many


@dataclass
class SmoothField:
    """Field with closed-form derivatives, used as ground truth in operator tests.

    derivs[k] is a vectorized callable for the k-th derivative (1d), or a
    dict keyed by multi-index in higher dimensions. Vector-valued fields
    return shape (m, d).
    """

    derivs: tuple
    d: int = 1

    def evaluate_many(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2 and X.shape[1] == 1:
            X = X[:, 0]
        return np.asarray(self.derivs[0](X), dtype=float)

    def evaluate(self, x):
        out = self.evaluate_many(np.atleast_1d(np.asarray(x, dtype=float)).ravel()[:1])
        return out[0]

    def derivative_many(self, alpha, X):
        k = alpha if isinstance(alpha, (int, np.integer)) else sum(alpha)
        if k >= len(self.derivs) or self.derivs[k] is None:
            raise DerivativeUnavailable(f"field provides no derivative of order {k}")
        X = np.asarray(X, dtype=float)
        if X.ndim == 2 and X.shape[1] == 1:
            X = X[:, 0]
        return np.asarray(self.derivs[k](X), dtype=float)

    def __call__(self, x):
        return self.derivs[0](np.asarray(x, dtype=float))

    def norm_Linf(self, samples=8192):
        """Sup norm estimated on a uniform sample grid (fields live on [0,1))."""
        x = (np.arange(samples) + 0.5) / samples
        v = np.asarray(self.derivs[0](x), dtype=float)
        return float(np.max(np.abs(v)))


def sine_field(k=1, amp=1.0, phase=0.0, orders=6):
    """amp*sin(2 pi k x + phase) with derivatives up to `orders`."""
    w = 2.0 * np.pi * k

    def mk(m):
        return lambda x, m=m: amp * w**m * np.sin(w * np.asarray(x) + phase + m * np.pi / 2.0)

    return SmoothField(tuple(mk(m) for m in range(orders + 1)))


def constant_field(c, orders=6):
    vals = [lambda x: np.full_like(np.asarray(x, dtype=float), float(c))]
    vals += [lambda x: np.zeros_like(np.asarray(x, dtype=float))] * orders
    return SmoothField(tuple(vals))


def field_sum(*fields):
    """Pointwise sum of smooth fields (derivatives summed where all provide them)."""
    orders = min(len(f.derivs) for f in fields)

    def mk(m):
        return lambda x, m=m: sum(f.derivs[m](x) for f in fields)

    return SmoothField(tuple(mk(m) for m in range(orders)))


@dataclass
class CoefficientField:
    """One a_alpha term: evaluates to a d x d matrix (a scalar when d = 1)."""

    alpha: tuple
    func_many: object  # (t, state, X) -> (m,) or (m, d, d)
    bound: object = 1.0  # C_a: float, or callable(state) -> float for quasilinear
    lip_z: float | None = None
    lip_x: float | None = None
    is_constant: bool = False
    const_value: object = None

    def evaluate_many(self, t, state, X):
        return np.asarray(self.func_many(t, state, X), dtype=float)

    def bound_for(self, state):
        return self.bound(state) if callable(self.bound) else float(self.bound)


def constant_coefficient(alpha, value):
    value = np.asarray(value, dtype=float)
    scalar = value.ndim == 0

    def many(t, state, X):
        m = np.asarray(X).shape[0]
        if scalar:
            return np.full(m, float(value))
        return np.broadcast_to(value, (m,) + value.shape).copy()

    return CoefficientField(
        alpha=tuple(alpha),
        func_many=many,
        bound=float(np.abs(value)) if scalar else float(np.linalg.norm(value, 2)),
        lip_z=0.0,
        lip_x=0.0,
        is_constant=True,
        const_value=float(value) if scalar else value,
    )


@dataclass
class SourceField:
    func_many: object  # (t, state, X) -> (m, d) or (m,) for d = 1
    sup: float = 0.0
    lip: float = 0.0

    def evaluate_many(self, t, state, X):
        return np.asarray(self.func_many(t, state, X), dtype=float)


def zero_source(d=1):
    def many(t, state, X):
        m = np.asarray(X).shape[0]
        return np.zeros(m) if d == 1 else np.zeros((m, d))

    return SourceField(many, sup=0.0, lip=0.0)


def constant_source(value):
    value = np.asarray(value, dtype=float)

    def many(t, state, X):
        m = np.asarray(X).shape[0]
        if value.ndim == 0:
            return np.full(m, float(value))
        return np.broadcast_to(value, (m,) + value.shape).copy()

    return SourceField(many, sup=float(np.max(np.abs(value))), lip=0.0)


_warned_bounds = set()


@dataclass
class PdeModel:
    domain: Domain
    d: int
    p: int
    coefficients: list
    source: SourceField
    name: str = "custom"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("operator order p must be >= 1")
        for c in self.coefficients:
            if len(c.alpha) != self.domain.n:
                raise ValueError(f"multi-index {c.alpha} has wrong dimension")
            if sum(c.alpha) > self.p:
                raise ValueError(f"|{c.alpha}| exceeds operator order p={self.p}")

    @property
    def is_constant_coefficient(self):
        return all(c.is_constant for c in self.coefficients)

    def coefficient_bound(self, state=None):
        """Runtime C_a over all terms (state-dependent for quasilinear models)."""
        return max(c.bound_for(state) for c in self.coefficients)

    def check_coefficient_values(self, coeff, values, state):
        """Warn once if evaluated coefficients exceed the declared bound."""
        declared = coeff.bound_for(state)
        seen = float(np.max(np.abs(values)))
        if seen > declared * (1.0 + 1e-9) + 1e-300:
            key = (self.name, coeff.alpha)
            if key not in _warned_bounds:
                _warned_bounds.add(key)
                warnings.warn(
                    f"model {self.name}: coefficient a_{coeff.alpha} reached "
                    f"{seen:.3e}, above its declared bound {declared:.3e}"
                )


def builtin_transport():
    """d_t y + d_x y = 0 on the circle: single constant coefficient a_(1) = -1."""
    return PdeModel(
        domain=torus(1),
        d=1,
        p=1,
        coefficients=[constant_coefficient((1,), -1.0)],
        source=zero_source(),
        name="transport",
    )


def builtin_burgers():
    """d_t y + y d_x y = 0: the first-order coefficient reads the solution at x."""

    def many(t, state, X):
        return -np.asarray(state.evaluate_many(X), dtype=float)

    coeff = CoefficientField(
        alpha=(1,),
        func_many=many,
        bound=lambda state: float(state.norm_Linf()) if state is not None else np.inf,
        lip_z=1.0,
    )
    return PdeModel(
        domain=torus(1),
        d=1,
        p=1,
        coefficients=[coeff],
        source=zero_source(),
        name="burgers",
    )


def builtin_kdv():
    """d_t y + d^3_x y + 6 y d_x y = 0 on the circle."""

    def many(t, state, X):
        return -6.0 * np.asarray(state.evaluate_many(X), dtype=float)

    coeff1 = CoefficientField(
        alpha=(1,),
        func_many=many,
        bound=lambda state: 6.0 * float(state.norm_Linf()) if state is not None else np.inf,
        lip_z=6.0,
    )
    return PdeModel(
        domain=torus(1),
        d=1,
        p=3,
        coefficients=[constant_coefficient((3,), -1.0), coeff1],
        source=zero_source(),
        name="kdv",
    )


def builtin_heat():
    """d_t y = d^2_x y on the circle."""
    return PdeModel(
        domain=torus(1),
        d=1,
        p=2,
        coefficients=[constant_coefficient((2,), 1.0)],
        source=zero_source(),
        name="heat",
    )


def builtin_by_name(name, linear_coeffs=None):
    if name == "transport":
        return builtin_transport()
    if name == "burgers":
        return builtin_burgers()
    if name == "kdv":
        return builtin_kdv()
    if name == "heat":
        return builtin_heat()
    if name == "custom-linear":
        if not linear_coeffs:
            raise ValueError("custom-linear requires (order, value) coefficient pairs")
        p = max(order for order, _ in linear_coeffs)
        return PdeModel(
            domain=torus(1),
            d=1,
            p=p,
            coefficients=[constant_coefficient((o,), v) for o, v in linear_coeffs],
            source=zero_source(),
            name="custom-linear",
        )
    raise ValueError(f"unknown model {name!r}")


def apply_operator(model, t, state, x):
    """The exact (unbounded) operator: sum a_alpha(t,state,x) D^alpha state(x) + f.

    `state` must supply analytic derivatives up to order p; this is the
    ground-truth side of the operator-convergence checks.
    """
    X = as_points(x, model.domain.n)
    if model.domain.n == 1:
        X1 = X[:, 0]
    else:
        X1 = X
    out = np.zeros((X.shape[0], model.d)) if model.d > 1 else np.zeros(X.shape[0])
    for coeff in model.coefficients:
        a = coeff.evaluate_many(t, state, X1)
        model.check_coefficient_values(coeff, a, state)
        dv = state.derivative_many(coeff.alpha if model.domain.n > 1 else sum(coeff.alpha), X1)
        if model.d == 1:
            out += a * dv
        else:
            out += np.einsum("mij,mj->mi", a, dv)
    out += model.source.evaluate_many(t, state, X1)
    if np.isscalar(x) or np.asarray(x).ndim == 0:
        return out[0]
    return out
