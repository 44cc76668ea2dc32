"""Deterministic side of the toolkit: gain operators, time evolution,
steady-state fixed points, and relaxation measurement.

The per-collision change of the tabulated density splits into a loss term
(selected agents leave their wealth) and gain integrals (post-trade wealth
lands at u).  The pure and saving models share one bilinear kernel over the
pair total U = u1 + u2; the asymmetric angle model has separate winner and
loser gains.  All integrals run over the truncated grid; quadrature is
trapezoidal with analytic handling of singular head cells, which is what
makes the omega -> 1 angle model (density diverging at u -> 0) workable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NumericError
from .grid import (GridPdf, WealthGrid, distance, normalize, quadrature,
                   trapz, _head_mass)
from .models import (ANGLE, PURE, SAVING, GammaSpec, ModelParams,
                     exponential_pdf, gamma_pdf, gamma_shape)

MAX_SAVING_FRACTION = 0.999


# ---------------------------------------------------------------------------
# pair-total gain kernel (pure and saving models)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _pair_gain_kernel(nodes, f, lam):
    """Gain integral at every node for the pure (lam=0) or saving model.

    For each pair total U (outer trapezoid from the output node to u_max)
    the inner integral of f(t) f(U-t) runs over the eps-admissible window;
    the cumulative inner table P is shared by all output nodes, and window
    endpoints are evaluated with partial-cell trapezoids.  All interpolation
    brackets move monotonically, so the whole evaluation is O(M^2).
    """
    M = nodes.shape[0]
    K = np.zeros(M)
    Iprev = np.zeros(M)
    Icur = np.zeros(M)
    g = np.zeros(M)
    P = np.zeros(M)
    if lam == 0.0:
        # integrand limit C(U)/U -> f(0)^2 at the lower end of the U axis
        Iprev[0] = f[0] * f[0]
    u_lo = nodes[0]
    for k in range(1, M):
        U = nodes[k]
        # products g_i = f(t_i) f(U - t_i); the reflected bracket descends
        q = k
        for i in range(k + 1):
            x = U - nodes[i]
            while q > 1 and nodes[q - 1] > x:
                q -= 1
            while q < M - 1 and nodes[q] < x:
                q += 1
            t0 = nodes[q - 1]
            w = (x - t0) / (nodes[q] - t0)
            if w < 0.0:
                w = 0.0
            elif w > 1.0:
                w = 1.0
            g[i] = f[i] * (f[q - 1] * (1.0 - w) + f[q] * w)
        P[0] = 0.0
        for i in range(1, k + 1):
            P[i] = P[i - 1] + 0.5 * (nodes[i] - nodes[i - 1]) * (g[i - 1] + g[i])
        if lam == 0.0:
            v = P[k] / U
            for j in range(k + 1):
                Icur[j] = v
        else:
            inv_den = 1.0 / ((1.0 - lam) * U)
            aL = 1
            dL = k
            aR = 1
            dR = k
            for j in range(k + 1):
                uj = nodes[j]
                L = (uj - (1.0 - lam) * U) / lam
                if L < u_lo:
                    L = u_lo
                R = uj / lam
                if R > U:
                    R = U
                if R <= L:
                    Icur[j] = 0.0
                    continue
                # P(L) with a partial cell
                while aL < k and nodes[aL] < L:
                    aL += 1
                while aL > 1 and nodes[aL - 1] > L:
                    aL -= 1
                t0 = nodes[aL - 1]
                w = (L - t0) / (nodes[aL] - t0)
                if w < 0.0:
                    w = 0.0
                fL = f[aL - 1] * (1.0 - w) + f[aL] * w
                xr = U - L
                while dL > 1 and nodes[dL - 1] > xr:
                    dL -= 1
                while dL < M - 1 and nodes[dL] < xr:
                    dL += 1
                t0r = nodes[dL - 1]
                wr = (xr - t0r) / (nodes[dL] - t0r)
                if wr < 0.0:
                    wr = 0.0
                elif wr > 1.0:
                    wr = 1.0
                gL = fL * (f[dL - 1] * (1.0 - wr) + f[dL] * wr)
                PL = P[aL - 1] + 0.5 * (L - t0) * (g[aL - 1] + gL)
                # P(R) with a partial cell
                while aR < k and nodes[aR] < R:
                    aR += 1
                while aR > 1 and nodes[aR - 1] > R:
                    aR -= 1
                t0 = nodes[aR - 1]
                w = (R - t0) / (nodes[aR] - t0)
                if w < 0.0:
                    w = 0.0
                fR = f[aR - 1] * (1.0 - w) + f[aR] * w
                xr = U - R
                while dR > 1 and nodes[dR - 1] > xr:
                    dR -= 1
                while dR < M - 1 and nodes[dR] < xr:
                    dR += 1
                t0r = nodes[dR - 1]
                wr = (xr - t0r) / (nodes[dR] - t0r)
                if wr < 0.0:
                    wr = 0.0
                elif wr > 1.0:
                    wr = 1.0
                gR = fR * (f[dR - 1] * (1.0 - wr) + f[dR] * wr)
                PR = P[aR - 1] + 0.5 * (R - t0) * (g[aR - 1] + gR)
                v = (PR - PL) * inv_den
                Icur[j] = v if v > 0.0 else 0.0
        hk = nodes[k] - nodes[k - 1]
        for j in range(k):
            K[j] += 0.5 * hk * (Iprev[j] + Icur[j])
        Iprev, Icur = Icur, Iprev
    return K


# ---------------------------------------------------------------------------
# angle-model gains
# ---------------------------------------------------------------------------

_N_THETA = 768
_THETA = (np.arange(_N_THETA) + 0.5) * (0.5 * np.pi / _N_THETA)
_SIN2 = np.sin(_THETA) ** 2
_COS2 = np.cos(_THETA) ** 2
_SINCOS = np.sin(_THETA) * np.cos(_THETA)
_DTHETA = 0.5 * np.pi / _N_THETA
_TINY = 1e-300


def _power_exponent(x0, x1, y0, y1):
    if y0 <= 0.0 or y1 <= 0.0:
        return 0.0
    return math.log(y1 / y0) / math.log(x1 / x0)


def _tail_over_u_table(nodes, f):
    """H_i = integral of f(t)/t from nodes[i] to u_max.

    Each cell is integrated exactly for the linearly interpolated density:
    with slope s on the cell, the integrand (f_i + s (t - t_i))/t has the
    antiderivative (f_i - s t_i) ln t + s t.  Plain trapezoid would be far
    off near t -> 0 where 1/t curves hard; the exact-for-linear rule keeps
    every consumer consistent with one effective density, which is what
    makes the rate integrals balance.
    """
    h = np.diff(nodes)
    s = np.diff(f) / h
    if nodes[0] > 0.0:
        seg = (f[:-1] - s * nodes[:-1]) * np.log(nodes[1:] / nodes[:-1]) + s * h
    else:
        seg = np.empty(nodes.size - 1)
        seg[1:] = ((f[1:-1] - s[1:] * nodes[1:-1])
                   * np.log(nodes[2:] / nodes[1:-1]) + s[1:] * h[1:])
        # first cell: finite only when f(0) = 0; the table entry at the
        # origin node is never consumed (queries go through the cell formula)
        seg[0] = f[1] if f[0] == 0.0 else np.inf
    H = np.zeros(nodes.size)
    H[:-1] = np.cumsum(seg[::-1])[::-1]
    return H


def _tail_eval(nodes, f, H, x):
    """Evaluate the f/t tail integral at arbitrary x >= 0 (vectorized).

    Inside cells the partial integral uses the same exact-for-linear rule
    as the table, so the result is the tail integral of one well-defined
    effective density at every query point.  Below a positive first node
    the density continues as the local power law.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    lo_edge = nodes[0] if nodes[0] > 0.0 else nodes[1]
    inside = (x >= lo_edge) & (x < nodes[-1])
    if np.any(inside):
        xi = x[inside]
        idx = np.clip(np.searchsorted(nodes, xi, side="right"), 1,
                      nodes.size - 1)
        t0, t1 = nodes[idx - 1], nodes[idx]
        f0c, f1c = f[idx - 1], f[idx]
        s = (f1c - f0c) / (t1 - t0)
        partial = (f0c - s * t0) * np.log(t1 / xi) + s * (t1 - xi)
        out[inside] = H[idx] + partial
    head = x < lo_edge
    if np.any(head):
        xb = np.maximum(x[head], _TINY)
        if nodes[0] > 0.0:
            f0, f1 = f[0], f[1]
            if f0 <= 0.0:
                cell = np.zeros_like(xb)
            else:
                p = _power_exponent(nodes[0], nodes[1], f0, f1)
                if abs(p) < 1e-12:
                    cell = f0 * np.log(nodes[0] / xb)
                else:
                    cell = (f0 / p) * (1.0 - (xb / nodes[0]) ** p)
            out[head] = H[0] + cell
        else:
            f0, f1 = f[0], f[1]
            n1 = nodes[1]
            cell = (f1 - f0) * (n1 - xb) / n1
            if f0 > 0.0:
                cell = cell + f0 * np.log(n1 / xb)
            out[head] = H[1] + cell
    return out


def _density_eval(nodes, f, x):
    """Density at arbitrary x: linear interpolation, except the power-law
    continuation below a positive first node (loghead grids)."""
    out = np.interp(x, nodes, f, left=f[0], right=0.0)
    if nodes[0] > 0.0 and f[0] > 0.0:
        below = x < nodes[0]
        if np.any(below):
            p = _power_exponent(nodes[0], nodes[1], f[0], f[1])
            if p != 0.0:
                xb = np.maximum(x[below], _TINY)
                out[below] = f[0] * (xb / nodes[0]) ** p
    return out


def _winner_gain_at(nodes, f, H, u_query, omega):
    """Winner gain: collision integral over donors reachable within eps*omega."""
    u_query = np.atleast_1d(np.asarray(u_query, dtype=float))
    out = np.zeros(u_query.size)
    pos = np.nonzero(u_query > 0.0)[0]
    chunk = max(1, 400_000 // _N_THETA)
    for lo in range(0, pos.size, chunk):
        idx = pos[lo:lo + chunk]
        u = u_query[idx]
        x1 = np.outer(_SIN2, u)
        x2 = np.outer(_COS2, u) / omega
        F = _density_eval(nodes, f, x1.ravel()).reshape(x1.shape)
        T = _tail_eval(nodes, f, H, x2.ravel()).reshape(x2.shape)
        acc = np.einsum("tc,t->c", F * T, _SINCOS)
        out[idx] = (2.0 * u / omega) * _DTHETA * acc
    return out


def _mass_between(nodes, f, x, y):
    """Mass of the linearly interpolated density between x and y."""
    cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(nodes)
                                           * (f[1:] + f[:-1]))])

    def at(q):
        q = min(max(q, nodes[0]), nodes[-1])
        i = int(np.clip(np.searchsorted(nodes, q, side="right"), 1,
                        nodes.size - 1))
        fq = f[i - 1] + (f[i] - f[i - 1]) * (q - nodes[i - 1]) \
            / (nodes[i] - nodes[i - 1])
        return cum[i - 1] + 0.5 * (q - nodes[i - 1]) * (f[i - 1] + fq)

    return at(y) - at(x)


def _loser_gain_at(nodes, f, H, u_query, omega, u0_conservative=False):
    """Loser gain: single tail integral between u and u/(1-omega).

    The loser gain varies on the scale (1-omega) * h inside the first grid
    cell, which node sampling cannot represent.  With ``u0_conservative``
    the u=0 node gets the value that makes the first trapezoid cell
    integrate the true cell content exactly (it reduces to the continuity
    limit f(0) ln(1/(1-omega))/omega for a locally constant density), so
    grid quadrature of the rate stays conservative.
    """
    u_query = np.atleast_1d(np.asarray(u_query, dtype=float))
    out = np.zeros(u_query.size)
    pos = u_query > 0.0
    u = u_query[pos]
    if u.size:
        if omega >= 1.0:
            hi = np.full_like(u, nodes[-1])
        else:
            hi = np.minimum(u / (1.0 - omega), nodes[-1])
        vals = _tail_eval(nodes, f, H, u) - _tail_eval(nodes, f, H, hi)
        out[pos] = np.maximum(vals, 0.0) / omega
    if u0_conservative and np.any(~pos):
        h = nodes[1]
        b = min(h / (1.0 - omega), nodes[-1]) if omega < 1.0 else nodes[-1]
        Hh, Hb = _tail_eval(nodes, f, H, np.array([h, b]))
        mass0 = 0.5 * h * (f[0] + f[1])
        tail_piece = (Hh - Hb) / omega
        correction = (2.0 * (1.0 - omega) / (omega * h)) \
            * _mass_between(nodes, f, h, b)
        out[~pos] = max(2.0 * mass0 / h + tail_piece - correction, 0.0)
    return out


# ---------------------------------------------------------------------------
# public gain operators
# ---------------------------------------------------------------------------

def _gain_pair_nodes(pdf: GridPdf, lam: float) -> np.ndarray:
    return _pair_gain_kernel(pdf.grid.nodes, pdf.values, lam)


def gain_pure(pdf: GridPdf, u):
    """Gain rate of the pure model at wealth u (nodes are exact, off-node
    queries are interpolated)."""
    K = _gain_pair_nodes(pdf, 0.0)
    out = np.interp(np.asarray(u, dtype=float), pdf.grid.nodes, K,
                    left=K[0], right=0.0)
    return float(out) if np.isscalar(u) else out


def gain_saving(pdf: GridPdf, u, params: ModelParams):
    """Gain rate of the saving model at wealth u."""
    if params.kind != SAVING:
        raise ValueError("gain_saving requires saving-model parameters")
    lam = params.saving_fraction
    if lam > MAX_SAVING_FRACTION:
        raise ValueError("saving fraction above 0.999 collapses the kernel "
                         "to the identity; refusing to integrate it")
    K = _gain_pair_nodes(pdf, lam)
    out = np.interp(np.asarray(u, dtype=float), pdf.grid.nodes, K,
                    left=K[0], right=0.0)
    return float(out) if np.isscalar(u) else out


def gain_angle(pdf: GridPdf, u, params: ModelParams):
    """Winner and loser gain rates of the angle model at wealth u.

    At u=0 both integration intervals are empty and the pair (0, 0) is
    returned.
    """
    if params.kind != ANGLE:
        raise ValueError("gain_angle requires angle-model parameters")
    omega = params.exchange_fraction
    nodes, f = pdf.grid.nodes, pdf.values
    H = _tail_over_u_table(nodes, f)
    uarr = np.atleast_1d(np.asarray(u, dtype=float))
    W = _winner_gain_at(nodes, f, H, uarr, omega)
    L = _loser_gain_at(nodes, f, H, uarr, omega, u0_conservative=False)
    if np.isscalar(u):
        return float(W[0]), float(L[0])
    return W, L


# ---------------------------------------------------------------------------
# evolution and steady state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvolutionState:
    """A density plus elapsed collisions; n_agents scales the rate."""

    pdf: GridPdf
    model: ModelParams
    time: float = 0.0
    n_agents: int = 1000
    clipped_mass: float = 0.0


def _gain_terms(pdf: GridPdf, params: ModelParams) -> np.ndarray:
    """Total gain vector on the grid, with the angle node-0 limit applied."""
    if params.kind == PURE:
        return 2.0 * _gain_pair_nodes(pdf, 0.0)
    if params.kind == SAVING:
        lam = params.saving_fraction
        if lam > MAX_SAVING_FRACTION:
            raise ValueError("saving fraction above 0.999 is not integrable")
        return 2.0 * _gain_pair_nodes(pdf, lam)
    omega = params.exchange_fraction
    nodes, f = pdf.grid.nodes, pdf.values
    H = _tail_over_u_table(nodes, f)
    W = _winner_gain_at(nodes, f, H, nodes, omega)
    L = _loser_gain_at(nodes, f, H, nodes, omega, u0_conservative=True)
    return W + L


def evolution_rate(state: EvolutionState) -> np.ndarray:
    """N df/dt per node: loss of the selected pair plus the gain integrals."""
    return _gain_terms(state.pdf, state.model) - 2.0 * state.pdf.values


def advance(state: EvolutionState, dt_steps: float) -> EvolutionState:
    """Explicit Euler step of df/dt over dt_steps collisions.

    Negative excursions are clipped before renormalizing; the clipped mass
    is carried on the returned state and aborts the run above 1e-3.
    """
    if dt_steps < 0:
        raise ValueError("dt must be nonnegative")
    if dt_steps > state.n_agents / 4.0:
        raise ValueError("dt above N/4 violates the stability bound")
    if dt_steps == 0:
        return state
    rate = evolution_rate(state)
    values = state.pdf.values + (dt_steps / state.n_agents) * rate
    neg = np.minimum(values, 0.0)
    clipped = -(trapz(neg, state.pdf.grid.nodes))
    if clipped > 1e-3:
        raise NumericError(f"clipped mass {clipped:.2e} exceeds 1e-3; "
                           "the time step is unstable")
    pdf = normalize(GridPdf(state.pdf.grid, np.maximum(values, 0.0),
                            state.pdf.mean_wealth))
    return EvolutionState(pdf, state.model, state.time + dt_steps,
                          state.n_agents, float(clipped))


@dataclass(frozen=True)
class FixedPointReport:
    iterations: int
    final_sup_residual: float
    residuals: tuple
    converged: bool


def default_grid(model: ModelParams, n_nodes: int | None = None,
                 span: float | None = None) -> WealthGrid:
    """Uniform grid, except a loghead grid for angle models whose
    equilibrium diverges at the origin (shape below one)."""
    n = n_nodes or 4001
    s = span or 40.0
    if model.kind == ANGLE and gamma_shape(model) < 1.0:
        return WealthGrid.loghead(model.mean_wealth, n, s)
    return WealthGrid.uniform(model.mean_wealth, n, s)


def default_seed_pdf(model: ModelParams, grid: WealthGrid) -> GridPdf:
    """Analytic starting guess: exponential for pure, Gamma otherwise."""
    m = model.mean_wealth
    if model.kind == PURE:
        values = exponential_pdf(grid.nodes, m)
    else:
        spec = GammaSpec.for_model(model)
        values = gamma_pdf(grid.nodes, spec)
        if grid.nodes[0] == 0.0 and not np.isfinite(values[0]):
            values = values.copy()
            values[0] = 0.0
    return GridPdf(grid, values, m)


def steady_operator(pdf: GridPdf, params: ModelParams) -> np.ndarray:
    """The fixed-point map K whose solution is the stationary density."""
    gains = _gain_terms(pdf, params)
    return 0.5 * gains


def solve_steady(model: ModelParams, seed_pdf: GridPdf | None = None,
                 grid: WealthGrid | None = None, max_iter: int = 40,
                 tol: float | None = None, step_tol: float | None = None):
    """Picard iteration f <- normalize(K[f]) from the analytic seed.

    Stops once sup|f - K[f]| falls below tol (or at max_iter); returns
    (density, report) with non-convergence flagged, not raised.  A 0.5
    damping factor switches on automatically if the residual grows twice
    in a row.

    The residual cannot reach zero: the discrete operator loses a little
    mass, so its normalized fixed point satisfies K[f*] = Z f* with Z close
    to but not exactly 1.  Callers that need the attractor itself (the
    relaxation pipeline) pass ``step_tol`` to keep iterating until
    successive iterates agree to that sup-norm tolerance or stop improving
    (the map carries a near-neutral boundary-layer mode at the origin that
    floors the step change around 1e-5 for some parameters).
    """
    if grid is None:
        grid = seed_pdf.grid if seed_pdf is not None else default_grid(model)
    if seed_pdf is None:
        seed_pdf = default_seed_pdf(model, grid)
    if tol is None:
        tol = 5e-4 if model.kind == PURE else 5e-3
    f = normalize(seed_pdf)
    Kf = steady_operator(f, model)
    residuals = [float(np.max(np.abs(f.values - Kf)))]
    iterations = 0
    damped = False
    steps = []
    while iterations < max_iter:
        if residuals[-1] <= tol and (step_tol is None or
                                     (steps and steps[-1] <= step_tol)):
            break
        if (step_tol is not None and len(steps) >= 12
                and steps[-1] > 0.9 * steps[-11]
                and residuals[-1] <= tol):
            break  # stalled at the numeric floor of the map
        if damped:
            new_values = 0.5 * f.values + 0.5 * Kf
        else:
            new_values = Kf
        f_next = normalize(GridPdf(grid, np.maximum(new_values, 0.0),
                                   model.mean_wealth))
        steps.append(float(np.max(np.abs(f_next.values - f.values))))
        f = f_next
        Kf = steady_operator(f, model)
        residuals.append(float(np.max(np.abs(f.values - Kf))))
        iterations += 1
        if (not damped and len(residuals) >= 3
                and residuals[-1] > residuals[-2] > residuals[-3]):
            damped = True
    report = FixedPointReport(
        iterations=iterations,
        final_sup_residual=residuals[-1],
        residuals=tuple(residuals),
        converged=residuals[-1] <= tol,
    )
    return f, report


# ---------------------------------------------------------------------------
# relaxation measurement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelaxationFit:
    tau: float
    tau_over_n: float
    rms_residual: float
    window: tuple
    times: np.ndarray
    dists: np.ndarray


def _support_bump(x, center, width):
    """C1 bump of unit height supported on |x - center| <= width."""
    z = (x - center) / width
    out = np.where(np.abs(z) < 1.0, np.cos(0.5 * np.pi * z) ** 2, 0.0)
    return out


def perturb_equilibrium(f_eq: GridPdf, rel_amplitude: float = 0.3,
                        period_in_mean: float = 0.05,
                        width_in_mean: float = 0.2) -> GridPdf:
    """Fine-grained, mass- and mean-neutral perturbation of an equilibrium.

    Adds a short-wavelength wave packet near the density's bulk.  The
    carrier period is chosen far below every model's per-collision
    smearing width, so the gain integrals almost annihilate the packet
    and the distance to equilibrium decays at the bulk loss rate; a broad
    or smooth perturbation would instead excite the slowly relaxing
    moment modes of the collision operator.  By parity the packet carries
    no mass and almost no mean; tiny compact corrections restore both to
    grid-quadrature zero so the conserved moments leave no floor under
    the measured distance.
    """
    m = f_eq.mean_wealth
    u = f_eq.grid.nodes
    half_width = 2.0 * width_in_mean * m
    uc = max(float(u[np.argmax(f_eq.values)]), 0.6 * m)
    kappa = 2.0 * np.pi / (period_in_mean * m)
    packet = np.sin(kappa * (u - uc)) * _support_bump(u, uc, half_width)
    # exact mass/mean projection with two small bumps inside the support
    phi0 = _support_bump(u, uc - 0.5 * half_width, 0.25 * half_width)
    phi1 = _support_bump(u, uc + 0.5 * half_width, 0.25 * half_width)
    moments = lambda g: (quadrature(f_eq, g), quadrature(f_eq, u * g))
    a00, a10 = moments(phi0)
    a01, a11 = moments(phi1)
    b0, b1 = moments(packet)
    det = a00 * a11 - a01 * a10
    c0 = (b0 * a11 - b1 * a01) / det
    c1 = (b1 * a00 - b0 * a10) / det
    shape = packet - c0 * phi0 - c1 * phi1
    active = np.abs(shape) > 1e-12
    headroom = np.min(f_eq.values[active] / np.abs(shape[active]))
    values = f_eq.values + (rel_amplitude * headroom) * shape
    return normalize(GridPdf(f_eq.grid, np.maximum(values, 0.0), m))


def relaxation_time(model: ModelParams, f0: GridPdf | None = None,
                    n_agents: int = 1000, f_eq: GridPdf | None = None,
                    grid: WealthGrid | None = None,
                    dt_steps: float | None = None,
                    t_max_in_n: float = 1.6,
                    fit_window_in_n: tuple = (0.1, 1.2),
                    solve_max_iter: int = 300) -> RelaxationFit:
    """Measure the e-folding time of the distance to equilibrium.

    Advances the full nonlinear operator from f0 (default: a small
    localized mean-neutral perturbation of the equilibrium), records the
    L1 distance to the attractor of the discrete dynamics, and fits
    ln d(t) linearly inside the fit window; tau = -1/slope.

    The default grid trades tail span for resolution (span 20 instead of
    40) so the fine carrier of the default perturbation is resolved.
    """
    if f_eq is None:
        if grid is None:
            grid = default_grid(model, span=20.0)
        f_eq, report = solve_steady(model, grid=grid, max_iter=solve_max_iter,
                                    step_tol=1e-10)
        if not report.converged:
            raise NumericError("steady state did not converge; "
                               "no reference point for a relaxation fit")
    if f0 is None:
        f0 = perturb_equilibrium(f_eq)
    dt = dt_steps if dt_steps is not None else n_agents / 40.0
    state = EvolutionState(f0, model, 0.0, n_agents)
    times = [0.0]
    dists = [distance(state.pdf, f_eq).l1]
    t_max = t_max_in_n * n_agents
    n_steps = int(round(t_max / dt))
    if n_steps < 20:
        raise ValueError("need at least 20 samples; lower dt or raise t_max")
    for _ in range(n_steps):
        state = advance(state, dt)
        d = distance(state.pdf, f_eq).l1
        times.append(state.time)
        dists.append(d)
        if d < 1e-10 and len(dists) < 10:
            raise NumericError("perturbation too small: distance reached "
                               "the numeric floor before 10 samples")
    times = np.asarray(times)
    dists = np.asarray(dists)
    w0, w1 = fit_window_in_n[0] * n_agents, fit_window_in_n[1] * n_agents
    mask = (times >= w0) & (times <= w1) & (dists > 1e-14)
    if mask.sum() < 10:
        raise NumericError("fewer than 10 usable samples in the fit window")
    t_fit = times[mask]
    ln_d = np.log(dists[mask])
    slope, intercept = np.polyfit(t_fit, ln_d, 1)
    if slope >= 0:
        raise NumericError("distance to equilibrium is not decaying")
    resid = ln_d - (slope * t_fit + intercept)
    tau = -1.0 / slope
    return RelaxationFit(
        tau=float(tau),
        tau_over_n=float(tau / n_agents),
        rms_residual=float(np.sqrt(np.mean(resid ** 2))),
        window=(float(w0), float(w1)),
        times=times,
        dists=dists,
    )
