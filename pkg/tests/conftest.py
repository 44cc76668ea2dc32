import numpy as np
import pytest

from kinex import GammaSpec, GridPdf, WealthGrid, gamma_pdf, normalize


@pytest.fixture(scope="session")
def unit_grid():
    """Default uniform grid for mean wealth 1."""
    return WealthGrid.uniform(1.0, 4001)


def mixture_density(grid, rng, n_components=3):
    """Random normalized density: a mixture of Gamma shapes with means well
    inside the grid so truncation plays no role."""
    shapes = rng.uniform(1.0, 8.0, n_components)
    means = rng.uniform(0.4, 1.8, n_components)
    weights = rng.dirichlet(np.ones(n_components))
    values = np.zeros_like(grid.nodes)
    for s, mu, w in zip(shapes, means, weights):
        values += w * gamma_pdf(grid.nodes, GammaSpec.from_shape(s, mu))
    return normalize(GridPdf(grid, values, 1.0))


def reference_pair_gain(nodes, f, lam):
    """Straightforward numpy transcription of the pair-total gain integral.

    Mirrors the quadrature conventions of the compiled kernel (trapezoid
    with partial end cells, linear interpolation clamped at the grid ends)
    so the two must agree to rounding.
    """
    M = nodes.size
    K = np.zeros(M)

    def f_at(x):
        return np.interp(x, nodes, f, left=f[0], right=0.0)

    I_prev = np.zeros(M)
    if lam == 0.0:
        I_prev[0] = f[0] * f[0]
    for k in range(1, M):
        U = nodes[k]
        t = nodes[:k + 1]
        g = f[:k + 1] * f_at(U - t)
        P = np.concatenate([[0.0],
                            np.cumsum(0.5 * np.diff(t) * (g[1:] + g[:-1]))])
        if lam == 0.0:
            I_cur = np.full(k + 1, P[-1] / U)
        else:
            uj = nodes[:k + 1]
            L = np.clip((uj - (1.0 - lam) * U) / lam, nodes[0], None)
            R = np.minimum(uj / lam, U)

            def P_at(x):
                idx = np.clip(np.searchsorted(t, x), 1, k)
                gx = f_at(x) * f_at(U - x)
                return P[idx - 1] + 0.5 * (x - t[idx - 1]) * (g[idx - 1] + gx)

            I_cur = np.where(R > L,
                             (P_at(R) - P_at(L)) / ((1.0 - lam) * U), 0.0)
            I_cur = np.maximum(I_cur, 0.0)
        hk = nodes[k] - nodes[k - 1]
        K[:k] += 0.5 * hk * (I_prev[:k] + I_cur[:k])
        I_prev[:k + 1] = I_cur
    return K
