"""Wealth-grid densities: quadrature, interpolation, normalization, distances.

Everything else in the package works on densities f(u) tabulated over a
truncated wealth axis.  Beyond u_max a density is treated as exactly zero,
so every "integrate to infinity" elsewhere becomes an integral to u_max.
Two grid presets are shipped:

* ``uniform``: evenly spaced nodes on [0, span * mean_wealth].
* ``loghead``: log-uniform nodes on [head * mean_wealth, span * mean_wealth]
  for densities with an integrable power-law divergence at u -> 0.  The mass
  of the leading cell [0, nodes[0]] is estimated analytically from the local
  power-law exponent instead of being dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_NODES = 4001
DEFAULT_SPAN = 40.0     # u_max as a multiple of the mean wealth
LOGHEAD_FIRST = 1e-4    # first loghead node as a multiple of the mean wealth


def trapz(y, x):
    """Composite trapezoidal rule over sample points x."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.sum(0.5 * (x[1:] - x[:-1]) * (y[1:] + y[:-1])))


@dataclass(frozen=True)
class WealthGrid:
    """Strictly increasing wealth nodes plus a spacing tag."""

    nodes: np.ndarray
    spacing: str = "custom"

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("grid needs at least 3 nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if nodes[0] < 0:
            raise ValueError("grid nodes must be nonnegative")
        if nodes[0] == 0.0 and self.spacing not in ("uniform", "custom"):
            raise ValueError("a node at u=0 is only allowed for uniform spacing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def u_max(self) -> float:
        return float(self.nodes[-1])

    @classmethod
    def uniform(cls, mean_wealth=1.0, n_nodes=DEFAULT_NODES, span=DEFAULT_SPAN):
        if mean_wealth <= 0:
            raise ValueError("mean wealth must be positive")
        return cls(np.linspace(0.0, span * mean_wealth, n_nodes), "uniform")

    @classmethod
    def loghead(cls, mean_wealth=1.0, n_nodes=DEFAULT_NODES, span=DEFAULT_SPAN,
                head=LOGHEAD_FIRST):
        if mean_wealth <= 0:
            raise ValueError("mean wealth must be positive")
        nodes = np.geomspace(head * mean_wealth, span * mean_wealth, n_nodes)
        return cls(nodes, "loghead")


@dataclass(frozen=True)
class GridPdf:
    """A probability density tabulated on a WealthGrid.

    Immutable after construction; all operations below return new values.
    """

    grid: WealthGrid
    values: np.ndarray
    mean_wealth: float

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.shape != self.grid.nodes.shape:
            raise ValueError("values and grid nodes differ in length")
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")
        if values.min() < 0.0:
            raise ValueError("density values must be nonnegative")
        if self.mean_wealth <= 0:
            raise ValueError("mean wealth must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: WealthGrid, fn, mean_wealth: float) -> "GridPdf":
        return cls(grid, fn(grid.nodes), mean_wealth)


@dataclass(frozen=True)
class PdfDistance:
    l1: float
    sup: float


def _head_mass(grid: WealthGrid, g: np.ndarray) -> float:
    """Mass of the untabulated cell [0, nodes[0]] for grids not starting at 0.

    Assumes the integrand continues as the local power law fitted to the
    first two nodes.  Falls back to a rectangle when the fit is unusable.
    """
    u0 = grid.nodes[0]
    if u0 <= 0.0:
        return 0.0
    g0, g1 = g[0], g[1]
    if g0 <= 0.0:
        return 0.0
    if g1 <= 0.0:
        return float(g0 * u0)
    p = math.log(g1 / g0) / math.log(grid.nodes[1] / u0)
    p = max(p, -0.95)
    return float(g0 * u0 / (p + 1.0))


def quadrature(pdf: GridPdf, integrand=None) -> float:
    """Integrate per-node values over the pdf's grid (trapezoid + head cell).

    With ``integrand=None`` the density itself is integrated.
    """
    g = pdf.values if integrand is None else np.asarray(integrand, dtype=float)
    if g.shape != pdf.grid.nodes.shape:
        raise ValueError("integrand length does not match the grid")
    return trapz(g, pdf.grid.nodes) + _head_mass(pdf.grid, g)


def interpolate(pdf: GridPdf, u):
    """Linear interpolation of the density.

    Clamps to the first node value below the grid, returns 0 beyond u_max.
    Negative wealth is a domain error.
    """
    uarr = np.asarray(u, dtype=float)
    if np.any(uarr < 0):
        raise ValueError("wealth must be nonnegative")
    out = np.interp(uarr, pdf.grid.nodes, pdf.values,
                    left=pdf.values[0], right=0.0)
    return float(out) if np.isscalar(u) or uarr.ndim == 0 else out


def normalize(pdf: GridPdf) -> GridPdf:
    """Rescale so the density integrates to one."""
    total = quadrature(pdf)
    if not math.isfinite(total) or total <= 0.0:
        raise ValueError("cannot normalize a degenerate (zero-mass) density")
    return GridPdf(pdf.grid, pdf.values / total, pdf.mean_wealth)


def mean_of(pdf: GridPdf) -> float:
    """First moment of the tabulated density."""
    return quadrature(pdf, pdf.grid.nodes * pdf.values)


def same_grid(a: GridPdf, b: GridPdf) -> bool:
    return a.grid is b.grid or np.array_equal(a.grid.nodes, b.grid.nodes)


def distance(a: GridPdf, b: GridPdf) -> PdfDistance:
    """L1 and sup-norm distance between two densities on the same grid."""
    if not same_grid(a, b):
        raise ValueError("distance requires both densities on the same grid")
    diff = np.abs(a.values - b.values)
    l1 = trapz(diff, a.grid.nodes) + _head_mass(a.grid, diff)
    return PdfDistance(l1=float(l1), sup=float(diff.max()))
