"""Ground-truth solutions: exact formulas, characteristics, fine-grid solves.

The fine-grid solvers reuse the particle machinery at large N with midpoint
tags: the method-of-lines discretization of the mollified (or directly
given) integral operator is exactly the particle system on that grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BeyondShock, BisectionFailure, TailTooFat
from .geometry import make_uniform_partition, torus
from .kernel import QuadratureGrid
from .particle import (
    GraphKernelSystem,
    MollifiedSystem,
    PiecewiseField,
    integrate,
    sample_initial,
)


@dataclass
class ReferenceSolution:
    """evaluate(t, x) with a validity horizon and a provenance tag."""

    evaluate: object  # (t, x-array) -> values
    T_valid: float
    provenance: str  # exact-formula | characteristics | fine-grid
    times: tuple = ()  # fine-grid solutions are stored at sample times only

    def __call__(self, t, x):
        return self.evaluate(t, x)


def exact_transport(y0):
    """y(t, x) = y0((x - t) mod 1) on the circle; valid for all time."""

    def ev(t, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(y0(np.mod(x - t, 1.0)), dtype=float)

    return ReferenceSolution(ev, np.inf, "exact-formula")


def exact_heat_mode(k=1, amp=1.0):
    """Single-mode heat solution amp*e^{-(2 pi k)^2 t} sin(2 pi k x)."""

    def ev(t, x):
        x = np.asarray(x, dtype=float)
        return amp * np.exp(-((2 * np.pi * k) ** 2) * t) * np.sin(2 * np.pi * k * x)

    return ReferenceSolution(ev, np.inf, "exact-formula")


def burgers_characteristics(y0, y0_prime, grid_points=4096):
    """Pre-shock solution of d_t y + y d_x y = 0 by inverting x = xi + t y0(xi).

    The characteristic map is strictly increasing while t < 1/max(-y0');
    each query is solved by bisection after a periodic unwrap. Past the
    shock time the solver refuses (the engine never extends with entropy
    solutions: the regularity hypotheses exclude shocks).
    """
    xs = np.linspace(0.0, 1.0, grid_points, endpoint=False)
    slopes = np.asarray(y0_prime(xs), dtype=float)
    steep = max(0.0, float(-np.min(slopes)))
    T_valid = np.inf if steep == 0.0 else 1.0 / steep
    sup0 = float(np.max(np.abs(np.asarray(y0(xs), dtype=float)))) + 1e-12

    def ev(t, x):
        if t >= T_valid:
            raise BeyondShock(f"t={t} is at/after the shock time {T_valid:.6g}")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo = x - t * sup0 - 1e-12
        hi = x + t * sup0 + 1e-12
        flo = lo + t * np.asarray(y0(np.mod(lo, 1.0)), dtype=float) - x
        fhi = hi + t * np.asarray(y0(np.mod(hi, 1.0)), dtype=float) - x
        if np.any(flo > 0.0) or np.any(fhi < 0.0):
            raise BisectionFailure("characteristic root not bracketed")
        for _ in range(80):  # 2^-80 of the bracket: well below 1e-12
            mid = 0.5 * (lo + hi)
            fm = mid + t * np.asarray(y0(np.mod(mid, 1.0)), dtype=float) - x
            neg = fm < 0.0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        xi = 0.5 * (lo + hi)
        return np.asarray(y0(np.mod(xi, 1.0)), dtype=float)

    return ReferenceSolution(ev, T_valid, "characteristics")


def soliton_profile(v, x0=0.5):
    """The line soliton (v/2) sech^2(sqrt(v) (x - x0 - v t) / 2) of the KdV flow."""

    def ev(t, x):
        x = np.asarray(x, dtype=float)
        arg = 0.5 * np.sqrt(v) * (x - x0 - v * t)
        return 0.5 * v / np.cosh(arg) ** 2

    return ev


def kdv_soliton(v, x0=0.5, tail_tol=1e-10):
    """Soliton wrapped onto the circle; requires negligible tails at the seam.

    The sech^2 factor at the seam (half a period from the peak) must be below
    tail_tol, i.e. sqrt(v)/4 large; narrow solitons only.
    """
    if v <= 0:
        raise ValueError("soliton speed v must be positive")
    seam = 1.0 / np.cosh(0.25 * np.sqrt(v)) ** 2
    if seam >= tail_tol:
        raise TailTooFat(
            f"sech^2 tail at the seam is {seam:.3e} (need < {tail_tol:.0e}); "
            f"increase v"
        )
    line = soliton_profile(v, x0)

    def ev(t, x):
        x = np.asarray(x, dtype=float)
        s = x - x0 - v * t
        s = s - np.round(s)  # center the argument on the peak
        arg = 0.5 * np.sqrt(v) * s
        return 0.5 * v / np.cosh(arg) ** 2

    sol = ReferenceSolution(ev, np.inf, "exact-formula")
    sol.line_profile = line
    return sol


def _snapshot_reference(traj, T_final, quad_M=None):
    times = tuple(traj.times)
    fields = {t: traj.field_at(t) for t in times}

    def ev(t, x):
        for ts in times:
            if abs(ts - t) <= 1e-10:
                f = fields[ts]
                x = np.asarray(x, dtype=float)
                return f.evaluate_many(x.reshape(-1, 1) if x.ndim == 1 else x)
        raise KeyError(f"fine-grid solution stored at {times}, not t={t}")

    return ReferenceSolution(ev, T_final, "fine-grid", times=times)


def fine_grid_mollified(
    model, moll, M_grid, y0, T_final, dt=None, sample_times=None, quad_M=None
):
    """Method-of-lines solve of the mollified evolution on an M_grid grid.

    This realizes the intermediate mollified solution of the two-step
    argument: bounded operator, fixed eps, grid fine enough that the spatial
    error sits below any particle run it will be compared against
    (M_grid >= 8 N is the caller's contract).
    """
    part = make_uniform_partition(model.domain, M_grid, "midpoint")
    quad = QuadratureGrid.uniform(model.domain, quad_M or max(4096, M_grid))
    system = MollifiedSystem(model, moll, part, quad)
    init = sample_initial(part, y0)
    traj = integrate(
        system,
        PiecewiseField(part, init.xi),
        T_final,
        dt=dt,
        sample_times=sample_times or [T_final],
    )
    return _snapshot_reference(traj, T_final)


def fine_grid_lipschitz(system, M_grid, y0, T_final, dt=None, sample_times=None):
    """Ground truth for directly given Lipschitz kernels: particles at N = M_grid."""
    part = make_uniform_partition(torus(1), M_grid, "midpoint")
    gsys = GraphKernelSystem(system, part)
    init = sample_initial(part, y0)
    traj = integrate(
        gsys,
        PiecewiseField(part, init.xi),
        T_final,
        dt=dt,
        sample_times=sample_times or [T_final],
    )
    return _snapshot_reference(traj, T_final)
