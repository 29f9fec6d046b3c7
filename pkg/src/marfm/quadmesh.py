"""Tensor-product Gauss-Legendre quadrature on a dyadic hierarchy of boxes.

Leaves are kept sorted by ``(level, lo)`` so that quadrature points (and hence
the columns of any assembled matrix) come out in a reproducible order.
"""
import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

MAX_LEVEL = 12


@dataclass(frozen=True)
class QuadRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n(self):
        return len(self.nodes)


def gauss_legendre(n):
    """Gauss-Legendre rule on [-1, 1] with ``n`` points.

    Roots of P_n come from Newton's method started at Chebyshev-like guesses;
    weights are 2 / ((1 - t^2) P_n'(t)^2).
    """
    if not 1 <= n <= 128:
        raise ValueError("gauss_legendre supports 1 <= n <= 128")
    m = (n + 1) // 2
    i = np.arange(1, m + 1)
    t = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    for _ in range(100):
        p0 = np.ones_like(t)
        p1 = t.copy()
        for j in range(2, n + 1):
            p0, p1 = p1, ((2 * j - 1) * t * p1 - (j - 1) * p0) / j
        if n == 1:
            p1, p0 = t, np.ones_like(t)
        dp = n * (t * p1 - p0) / (t * t - 1.0)
        step = p1 / dp
        t = t - step
        if np.max(np.abs(step)) < 1e-15:
            break
    # derivative at the converged roots
    p0 = np.ones_like(t)
    p1 = t.copy()
    for j in range(2, n + 1):
        p0, p1 = p1, ((2 * j - 1) * t * p1 - (j - 1) * p0) / j
    if n == 1:
        p1, p0 = t, np.ones_like(t)
    dp = n * (t * p1 - p0) / (t * t - 1.0)
    w = 2.0 / ((1.0 - t * t) * dp * dp)
    if n % 2:
        t[-1] = 0.0
    nodes = np.concatenate([-t, t[::-1][n % 2:]])
    weights = np.concatenate([w, w[::-1][n % 2:]])
    return QuadRule(nodes, weights)


@dataclass(frozen=True)
class Cell:
    lo: tuple
    hi: tuple
    level: int
    id: str

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def children(self):
        lo = np.asarray(self.lo)
        mid = 0.5 * (lo + np.asarray(self.hi))
        hi = np.asarray(self.hi)
        kids = []
        for corner in itertools.product((0, 1), repeat=len(lo)):
            c = np.asarray(corner)
            clo = np.where(c == 0, lo, mid)
            chi = np.where(c == 0, mid, hi)
            tag = "".join(str(b) for b in corner)
            kids.append(Cell(tuple(clo.tolist()), tuple(chi.tolist()), self.level + 1,
                             f"{self.id}.{tag}"))
        return kids


def _sort_key(cell):
    return (cell.level, cell.lo)


def cell_points(cell, rule):
    """Mapped tensor Gauss points and weights of one cell, shapes (n^d, d) and (n^d,)."""
    lo = np.asarray(cell.lo)
    hi = np.asarray(cell.hi)
    d = len(lo)
    half = 0.5 * (hi - lo)
    axes = [lo[a] + half[a] * (rule.nodes + 1.0) for a in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wgrid = np.meshgrid(*([rule.weights] * d), indexing="ij")
    w = np.prod(np.stack([g.ravel() for g in wgrid], axis=-1), axis=-1) * np.prod(half)
    return pts, w


@dataclass
class AdaptiveMesh:
    """Leaves of a dyadic box hierarchy with per-leaf quadrature points."""

    domain: tuple
    rule: QuadRule
    leaves: list
    max_level: int = MAX_LEVEL
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return len(self.domain[0])

    @property
    def points_per_cell(self):
        return self.rule.n ** self.dim

    @property
    def n_points(self):
        return len(self.leaves) * self.points_per_cell

    def _leaf_data(self, cell):
        if cell.id not in self._cache:
            self._cache[cell.id] = cell_points(cell, self.rule)
        return self._cache[cell.id]

    @property
    def points(self):
        return np.concatenate([self._leaf_data(c)[0] for c in self.leaves])

    @property
    def weights(self):
        return np.concatenate([self._leaf_data(c)[1] for c in self.leaves])

    @property
    def cell_index(self):
        """Leaf index of every quadrature point."""
        return np.repeat(np.arange(len(self.leaves)), self.points_per_cell)

    def leaf_ids(self):
        return [c.id for c in self.leaves]

    def to_csv(self, path):
        d = self.dim
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "level"] + [f"lo{a}" for a in range(d)] + [f"hi{a}" for a in range(d)])
            for c in self.leaves:
                writer.writerow([c.id, c.level, *[repr(v) for v in c.lo], *[repr(v) for v in c.hi]])


def build_uniform_mesh(domain, cells_per_axis, rule, max_level=MAX_LEVEL):
    """Level-0 tensor mesh of the box ``domain = (lo, hi)``."""
    lo = np.asarray(domain[0], dtype=float)
    hi = np.asarray(domain[1], dtype=float)
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise ValueError("degenerate quadrature box")
    d = len(lo)
    counts = np.broadcast_to(np.asarray(cells_per_axis, dtype=int), (d,))
    if np.any(counts < 1):
        raise ValueError("cells_per_axis must be >= 1 on every axis")
    edges = [np.linspace(lo[a], hi[a], counts[a] + 1) for a in range(d)]
    leaves = []
    for idx in itertools.product(*[range(c) for c in counts]):
        clo = tuple(float(edges[a][i]) for a, i in enumerate(idx))
        chi = tuple(float(edges[a][i + 1]) for a, i in enumerate(idx))
        leaves.append(Cell(clo, chi, 0, "c" + "_".join(map(str, idx))))
    leaves.sort(key=_sort_key)
    return AdaptiveMesh((tuple(lo.tolist()), tuple(hi.tolist())), rule, leaves, max_level)


def refine(mesh, marked):
    """Split every marked leaf into its 2^d dyadic children."""
    marked = set(marked)
    ids = set(mesh.leaf_ids())
    unknown = marked - ids
    if unknown:
        raise KeyError(f"cannot refine non-leaf cells: {sorted(unknown)[:5]}")
    leaves = []
    for c in mesh.leaves:
        if c.id in marked:
            if c.level >= mesh.max_level:
                raise ValueError(f"cell {c.id} is already at the maximum level {mesh.max_level}")
            leaves.extend(c.children())
        else:
            leaves.append(c)
    leaves.sort(key=_sort_key)
    kept = {c.id: mesh._cache[c.id] for c in leaves if c.id in mesh._cache}
    return AdaptiveMesh(mesh.domain, mesh.rule, leaves, mesh.max_level, kept)


def integrate(mesh, f):
    """Sum of w * f(y) over all quadrature points; ``f`` maps (N, d) -> (N,)."""
    vals = np.asarray(f(mesh.points))
    return np.sum(mesh.weights * vals)


def tensor_rule(domain, n_per_axis, n_gauss=4):
    """Dense composite Gauss rule on a box: ``n_per_axis`` points per axis in total.

    Used for oracle data; the cell count per axis is ``n_per_axis // n_gauss``.
    """
    cells = max(1, n_per_axis // n_gauss)
    mesh = build_uniform_mesh(domain, cells, gauss_legendre(n_gauss))
    return mesh.points, mesh.weights
