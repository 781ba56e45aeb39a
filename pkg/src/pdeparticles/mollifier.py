"""The smooth bump eta, its epsilon-scalings and analytic derivatives.

eta(x) = c * exp(1/(||x||^2 - 1)) on ||x|| < 1 and 0 outside, with c chosen
so that the bump integrates to 1 over R^n. The scaled mollifier is
eta_eps(x) = eps^{-n} * eta(x/eps), supported in the closed eps-ball.

Derivatives are closed forms, not finite differences: in 1d,
eta^(k)(x) = eta(x) * P_k(x) / (x^2-1)^(2k) with the polynomial recurrence
P_{k+1} = P_k' (x^2-1)^2 - (4k x (x^2-1) + 2x) P_k, P_0 = 1. Finite
differences would be swamped by the eps^{-n-|alpha|} growth during kernel
assembly.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate

from .errors import EpsilonTooLarge, OrderTooHigh, QuadratureTooCoarse
from .geometry import TORUS, as_points

_NORMALIZATION_CACHE = {}
_MOMENT_CACHE = {}


def _sphere_area(n):
    """Surface measure of the unit sphere S^{n-1} in R^n (2 points for n=1)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def _radial_integral(n, power):
    """int_0^1 r^power * exp(1/(r^2-1)) dr to 1e-12 relative accuracy."""
    val, _ = integrate.quad(
        lambda r: r**power * math.exp(1.0 / (r * r - 1.0)) if r < 1.0 else 0.0,
        0.0,
        1.0,
        epsabs=1e-15,
        epsrel=1e-12,
        limit=200,
    )
    return val


def bump_normalization(n):
    """c with int_{R^n} c*exp(1/(||x||^2-1)) dx = 1, cached per dimension."""
    if n not in _NORMALIZATION_CACHE:
        _NORMALIZATION_CACHE[n] = 1.0 / (_sphere_area(n) * _radial_integral(n, n - 1))
    return _NORMALIZATION_CACHE[n]


def bump_moment(n):
    """C_eta = int ||x|| eta(x) dx for the unit bump, cached per dimension."""
    if n not in _MOMENT_CACHE:
        _MOMENT_CACHE[n] = (
            bump_normalization(n) * _sphere_area(n) * _radial_integral(n, n)
        )
    return _MOMENT_CACHE[n]


def _derivative_polynomials(max_order):
    """P_k with eta^(k)(x) = eta(x) P_k(x) (x^2-1)^(-2k), k = 0..max_order."""
    x = Polynomial([0.0, 1.0])
    w = x * x - 1.0
    polys = [Polynomial([1.0])]
    for k in range(max_order):
        p = polys[-1]
        polys.append(p.deriv() * w * w - (4.0 * k * x * w + 2.0 * x) * p)
    return polys


class Mollifier:
    """eta_eps at scale eps in (0, 1], with derivatives up to max_order."""

    def __init__(self, epsilon, n=1, max_order=4):
        if not 0.0 < epsilon <= 1.0:
            raise EpsilonTooLarge(f"epsilon must lie in (0, 1], got {epsilon}")
        if n > 1 and max_order > 2:
            max_order = 2  # closed-form partials beyond order 2 only in 1d
        self.epsilon = float(epsilon)
        self.n = int(n)
        self.max_order = int(max_order)
        self.c = bump_normalization(n)
        self.c_eta = bump_moment(n)
        if n == 1:
            self._polys = _derivative_polynomials(max_order)
        else:
            # radial profile F(s) = c e^{1/(s-1)}, s = ||x||^2:
            # F^(k) = F * Q_k(s) (s-1)^{-2k}, Q_{k+1} = Q_k'(s-1)^2 - (2k(s-1)+1)Q_k
            s = Polynomial([0.0, 1.0])
            w = s - 1.0
            qs = [Polynomial([1.0])]
            for k in range(2):
                q = qs[-1]
                qs.append(q.deriv() * w * w - (2.0 * k * w + 1.0) * q)
            self._radial_qs = qs

    # -- unit-bump evaluations ------------------------------------------------

    def _unit_eval_1d(self, u, order=0):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        inside = np.abs(u) < 1.0
        if np.any(inside):
            ui = u[inside]
            w = ui * ui - 1.0
            core = self.c * np.exp(1.0 / w)
            if order == 0:
                out[inside] = core
            else:
                out[inside] = core * self._polys[order](ui) / w ** (2 * order)
        return out

    def _unit_radial(self, s, k):
        """k-th derivative of F(s) = c e^{1/(s-1)} on s < 1 (vectorized)."""
        w = s - 1.0
        core = self.c * np.exp(1.0 / w)
        if k == 0:
            return core
        return core * self._radial_qs[k](s) / w ** (2 * k)

    # -- scaled evaluations ---------------------------------------------------

    def eval(self, x):
        """eta_eps(x); exact zero outside the open support, no exp evaluated there."""
        if self.n == 1:
            u = np.asarray(x, dtype=float) / self.epsilon
            out = self._unit_eval_1d(u) / self.epsilon
            return out if out.ndim else float(out)
        p = as_points(x, self.n) / self.epsilon
        s = np.sum(p * p, axis=1)
        out = np.zeros(p.shape[0])
        inside = s < 1.0
        if np.any(inside):
            out[inside] = self._unit_radial(s[inside], 0)
        return out / self.epsilon**self.n

    def eval_derivative(self, alpha, x):
        """D^alpha eta_eps(x), scaled by eps^{-n-|alpha|}; zero outside support."""
        alpha = self._as_multi_index(alpha)
        k = sum(alpha)
        if k > self.max_order:
            raise OrderTooHigh(
                f"|alpha|={k} exceeds max supported order {self.max_order}"
            )
        if self.n == 1:
            u = np.asarray(x, dtype=float) / self.epsilon
            out = self._unit_eval_1d(u, order=k) / self.epsilon ** (1 + k)
            return out if out.ndim else float(out)
        return self._eval_derivative_nd(alpha, k, x)

    def _eval_derivative_nd(self, alpha, k, x):
        p = as_points(x, self.n) / self.epsilon
        s = np.sum(p * p, axis=1)
        out = np.zeros(p.shape[0])
        inside = s < 1.0
        if np.any(inside):
            pi, si = p[inside], s[inside]
            if k == 0:
                val = self._unit_radial(si, 0)
            elif k == 1:
                i = alpha.index(1)
                val = 2.0 * pi[:, i] * self._unit_radial(si, 1)
            else:  # k == 2
                ij = [a for a, c in enumerate(alpha) for _ in range(c)]
                i, j = ij[0], ij[1]
                val = 4.0 * pi[:, i] * pi[:, j] * self._unit_radial(si, 2)
                if i == j:
                    val = val + 2.0 * self._unit_radial(si, 1)
            out[inside] = val
        return out / self.epsilon ** (self.n + k)

    def _as_multi_index(self, alpha):
        if isinstance(alpha, (int, np.integer)):
            if self.n != 1:
                raise ValueError("scalar order only valid in dimension 1")
            alpha = (int(alpha),)
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.n or any(a < 0 for a in alpha):
            raise ValueError(f"bad multi-index {alpha} for dimension {self.n}")
        return alpha


def check_support_resolution(moll, quad):
    """Require >= 8 quadrature nodes across the 2*eps support window per axis."""
    m_axis = quad.m_per_axis
    for a in range(quad.domain.n):
        h = quad.domain.sides[a] / m_axis
        if 2.0 * moll.epsilon / h < 8.0:
            raise QuadratureTooCoarse(
                f"only {2.0 * moll.epsilon / h:.2f} nodes per support width "
                f"(need >= 8); raise M or epsilon"
            )


def convolve_domain(moll, g, x, quad, chunk=4096):
    """(eta_eps *_Omega g)(x): quadrature of the Omega-restricted convolution.

    On a torus the difference x - x' is taken with the minimal-image
    representative, which requires eps < 1/2 so the support cannot wrap onto
    itself. On domains with boundary the integral simply stops at the
    boundary (this is the point of *_Omega: no extension of g is involved).
    """
    domain = quad.domain
    if domain.kind == TORUS and moll.epsilon >= 0.5:
        raise EpsilonTooLarge("torus convolution requires epsilon < 1/2")
    check_support_resolution(moll, quad)

    from .geometry import _eval_field

    gv = np.asarray(_eval_field(g, quad.nodes), dtype=float)
    pts = as_points(x, domain.n)
    out = np.empty((pts.shape[0],) + gv.shape[1:])
    w = quad.weights[0]
    for lo in range(0, pts.shape[0], chunk):
        block = pts[lo : lo + chunk]
        d = block[:, None, :] - quad.nodes[None, :, :]
        if domain.kind == TORUS:
            d = d - np.round(d)
        if domain.n == 1:
            k = moll._unit_eval_1d(d[:, :, 0] / moll.epsilon) / moll.epsilon
        else:
            flat = d.reshape(-1, domain.n)
            k = moll.eval(flat).reshape(d.shape[0], d.shape[1])
        out[lo : lo + chunk] = w * (k @ gv)
    if np.isscalar(x) or (np.asarray(x).ndim == 0):
        return out[0]
    return out
