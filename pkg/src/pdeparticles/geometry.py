"""Domains, tagged partitions and Riemann-sum estimates.

A domain here is a flat compact set of total measure exactly 1: the unit
interval, the unit n-torus (period 1 per axis, wrap-around metric), or an
axis-aligned box with side product 1. A tagged partition splits the domain
into N cells of measure 1/N, each carrying a tag point, with cell diameters
bounded by c_omega / N**gamma, gamma = 1/n.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonConformingN

INTERVAL = "interval"
TORUS = "torus"
BOX = "box"


def as_points(x, n):
    """Coerce scalars / (n,) / (m,) / (m,n) input to an (m, n) float array."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        if n != 1:
            raise ValueError(f"scalar point given for {n}-dimensional domain")
        return a.reshape(1, 1)
    if a.ndim == 1:
        if n == 1:
            return a.reshape(-1, 1)
        if a.shape[0] == n:
            return a.reshape(1, n)
        raise ValueError(f"cannot interpret shape {a.shape} as points in dim {n}")
    if a.ndim == 2 and a.shape[1] == n:
        return a
    raise ValueError(f"cannot interpret shape {a.shape} as points in dim {n}")


@dataclass(frozen=True)
class Domain:
    """Flat measure-1 domain: unit interval, unit n-torus, or measure-1 box."""

    kind: str
    n: int = 1
    sides: tuple = ()

    def __post_init__(self):
        if self.kind not in (INTERVAL, TORUS, BOX):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == INTERVAL and self.n != 1:
            raise ValueError("interval domain is one-dimensional")
        if self.n < 1:
            raise ValueError("dimension must be positive")
        if self.kind == BOX:
            sides = self.sides if self.sides else tuple([1.0] * self.n)
            object.__setattr__(self, "sides", tuple(float(s) for s in sides))
            if len(self.sides) != self.n:
                raise ValueError("need one side length per axis")
            if abs(np.prod(self.sides) - 1.0) > 1e-12:
                raise ValueError("box must have measure 1 (side product 1)")
        else:
            object.__setattr__(self, "sides", tuple([1.0] * self.n))

    @property
    def has_boundary(self):
        return self.kind != TORUS

    def diff(self, x, y):
        """Difference vectors x - y, wrapped to (-1/2, 1/2] per axis on a torus."""
        d = as_points(x, self.n) - as_points(y, self.n)
        if self.kind == TORUS:
            d = d - np.round(d)
            # round() sends +-0.5 to the even side; force the representative +1/2
            d[d == -0.5] = 0.5
        return d

    def metric(self, x, y):
        """d_Omega(x, y); wrap-around distance on the torus."""
        return np.linalg.norm(self.diff(x, y), axis=-1)

    def contains(self, x):
        p = as_points(x, self.n)
        if self.kind == TORUS:
            return np.ones(p.shape[0], dtype=bool)
        hi = np.asarray(self.sides)
        return np.all((p >= 0.0) & (p <= hi), axis=1)

    def wrap(self, x):
        """Map points to the fundamental cell [0,1)^n (torus) or clamp-free passthrough."""
        p = as_points(x, self.n)
        if self.kind == TORUS:
            return np.mod(p, 1.0)
        return p


def unit_interval():
    return Domain(INTERVAL, 1)


def torus(n=1):
    return Domain(TORUS, n)


def box(sides):
    return Domain(BOX, len(sides), tuple(sides))


@dataclass(frozen=True)
class TaggedPartition:
    """Uniform grid partition: N = m^n cells of measure 1/N with tag points."""

    domain: Domain
    N: int
    m_per_axis: int
    tags: np.ndarray
    tag_rule: str
    gamma: float
    c_omega: float
    cell_diam: float = field(default=0.0)

    @property
    def n(self):
        return self.domain.n

    @property
    def cell_measure(self):
        return 1.0 / self.N

    def cell_side(self, axis=0):
        return self.domain.sides[axis] / self.m_per_axis

    def cell_lower(self, i):
        """Lower corner of cell i (C-order over the per-axis grid)."""
        idx = np.unravel_index(i, (self.m_per_axis,) * self.n)
        return np.array([idx[a] * self.cell_side(a) for a in range(self.n)])

    def cell_upper(self, i):
        return self.cell_lower(i) + np.array(
            [self.cell_side(a) for a in range(self.n)]
        )

    def cell_index(self, x):
        return int(self.cell_index_many(x)[0])

    def cell_index_many(self, x):
        """Cells are half-open [lo, lo+h) per axis; x=1.0 clamps into the last cell."""
        p = self.domain.wrap(as_points(x, self.n))
        m = self.m_per_axis
        idx = np.empty((p.shape[0], self.n), dtype=np.int64)
        for a in range(self.n):
            k = np.floor(p[:, a] / self.cell_side(a)).astype(np.int64)
            idx[:, a] = np.clip(k, 0, m - 1)
        return np.ravel_multi_index(tuple(idx.T), (m,) * self.n)


def make_uniform_partition(domain, N, tag_rule="midpoint"):
    """Build the uniform tagged partition with N cells (N a perfect n-th power)."""
    if N < 1:
        raise NonConformingN("N must be >= 1")
    if tag_rule not in ("left", "midpoint"):
        raise ValueError(f"unknown tag rule {tag_rule!r}")
    n = domain.n
    m = int(round(N ** (1.0 / n)))
    # guard rounding of the n-th root
    m = next((c for c in (m - 1, m, m + 1) if c >= 1 and c**n == N), None)
    if m is None:
        raise NonConformingN(f"N={N} is not a perfect {n}-th power")

    axes = []
    for a in range(n):
        h = domain.sides[a] / m
        lo = np.arange(m) * h
        axes.append(lo + (0.5 * h if tag_rule == "midpoint" else 0.0))
    grid = np.meshgrid(*axes, indexing="ij")
    tags = np.stack([g.ravel() for g in grid], axis=1)

    sides = np.asarray(domain.sides) / m
    if domain.kind == TORUS:
        per_axis = np.minimum(sides, 0.5)  # wrap distance caps the diameter
        diam = float(np.linalg.norm(per_axis))
        c_omega = float(np.sqrt(n))
    else:
        diam = float(np.linalg.norm(sides))
        c_omega = float(np.linalg.norm(domain.sides))
    gamma = 1.0 / n
    return TaggedPartition(domain, N, m, tags, tag_rule, gamma, c_omega, diam)


def _eval_field(f, pts):
    """Evaluate a scalar/vector field at (m, n) points; accepts scalar-arg callables."""
    m, n = pts.shape
    arg = pts[:, 0] if n == 1 else pts
    try:
        out = np.asarray(f(arg), dtype=float)
        if out.shape[:1] == (m,):
            return out
    except (TypeError, ValueError, IndexError):
        pass
    vals = [f(arg[i]) for i in range(m)]
    return np.asarray(vals, dtype=float)


def riemann_sum(partition, f):
    """(1/N) sum_i f(x_i) over the partition tags; exact for constants."""
    vals = _eval_field(f, partition.tags)
    return vals.sum(axis=0) / partition.N


def check_riemann_bound(partition, f, lip_f, quad=None, tol=1e-6):
    """Check |int f - riemann_sum(f)| <= c_omega * lip_f / N**gamma.

    The reference integral is computed with the composite-midpoint quadrature
    grid from the kernel module (caller may pass one); lip_f must be a valid
    Lipschitz constant for f, which is the caller's responsibility. `tol`
    absorbs the reference quadrature's own error in the `holds` verdict.
    """
    if quad is None:
        from .kernel import QuadratureGrid

        quad = QuadratureGrid.uniform(partition.domain, max(8192, 8 * partition.N))
    vals = _eval_field(f, quad.nodes)
    integral = vals.sum(axis=0) * quad.weights[0]
    lhs = float(np.max(np.abs(integral - riemann_sum(partition, f))))
    rhs = partition.c_omega * lip_f / partition.N**partition.gamma
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs + tol)}


@dataclass(frozen=True)
class InteriorRegion:
    """Points at distance >= epsilon from the boundary (all of Omega on a torus).

    c_boundary bounds the complement measure; exact on the unit interval
    (measure 2*epsilon, c_boundary = 2). For boxes in dimension n >= 2 the
    strip measure scales like epsilon (not epsilon^n), so the stored constant
    satisfies nu(complement) <= c_boundary * epsilon there.
    """

    domain: Domain
    epsilon: float
    c_boundary: float = field(default=0.0)

    def __post_init__(self):
        if self.domain.kind == TORUS:
            object.__setattr__(self, "c_boundary", 0.0)
        elif self.domain.kind == INTERVAL:
            object.__setattr__(self, "c_boundary", 2.0)
        else:
            sides = np.asarray(self.domain.sides)
            object.__setattr__(
                self, "c_boundary", float(2.0 * np.sum(1.0 / sides))
            )

    def contains_many(self, x):
        p = as_points(x, self.domain.n)
        if self.domain.kind == TORUS:
            return np.ones(p.shape[0], dtype=bool)
        hi = np.asarray(self.domain.sides)
        margin = np.minimum(p, hi - p).min(axis=1)
        return margin >= self.epsilon

    def contains(self, x):
        return bool(self.contains_many(x)[0])

    def complement_measure_bound(self):
        return self.c_boundary * self.epsilon**self.domain.n


def lipschitz_family(domain, seed=1234, count=20):
    """Deterministic family of Lipschitz test functions with known constants.

    Sums of up to 5 sine modes plus up to 2 hat functions (wrap-around hats
    on the torus). Returns a list of (f, lip) pairs; each f is vectorized.
    """
    if domain.n != 1:
        raise ValueError("the test family is one-dimensional")
    rng = np.random.default_rng(seed)
    wrap = domain.kind == TORUS
    family = []
    for _ in range(count):
        n_modes = int(rng.integers(1, 6))
        amps = rng.uniform(-1.0, 1.0, size=n_modes)
        ks = rng.integers(1, 6, size=n_modes)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=n_modes)
        n_hats = int(rng.integers(0, 3))
        hat_c = rng.uniform(0.0, 1.0, size=n_hats)
        hat_w = rng.uniform(0.05, 0.3, size=n_hats)
        hat_a = rng.uniform(-1.0, 1.0, size=n_hats)

        def f(x, amps=amps, ks=ks, phases=phases, hc=hat_c, hw=hat_w, ha=hat_a):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            for a, k, ph in zip(amps, ks, phases):
                out = out + a * np.sin(2.0 * np.pi * k * x + ph)
            for c, w, a in zip(hc, hw, ha):
                d = np.abs(x - c)
                if wrap:
                    d = np.minimum(d, 1.0 - d)
                out = out + a * np.maximum(0.0, 1.0 - d / w)
            return out

        lip = float(
            np.sum(np.abs(amps) * 2.0 * np.pi * ks)
            + (np.sum(np.abs(hat_a) / hat_w) if n_hats else 0.0)
        )
        family.append((f, lip))
    return family
