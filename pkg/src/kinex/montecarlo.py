"""Agent-based Monte Carlo engine.

One step is one collision: draw a distinct ordered pair (i, j), draw eps,
apply the model's pair update.  The compiled kernel consumes the exact
xoshiro256** sequence of :class:`kinex.rng.RngStream`, so single stepping
in Python and bulk running through numba produce bit-identical trajectories.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import GridPdf, WealthGrid, trapz, _head_mass, normalize
from .models import ModelParams, exchange, PURE, SAVING, ANGLE
from .rng import RngStream

_KIND_CODE = {PURE: 0, SAVING: 1, ANGLE: 2}

_U5 = np.uint64(5)
_U7 = np.uint64(7)
_U9 = np.uint64(9)
_U11 = np.uint64(11)
_U17 = np.uint64(17)
_U19 = np.uint64(19)
_U45 = np.uint64(45)
_U57 = np.uint64(57)
_U0 = np.uint64(0)
_TWO53_INV = 2.0 ** -53


@njit(cache=True, nogil=True, inline="always")
def _xo_next(s):
    s1 = s[1]
    r = s1 * _U5
    result = ((r << _U7) | (r >> _U57)) * _U9
    t = s1 << _U17
    s[2] ^= s[0]
    s[3] ^= s1
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = (s[3] << _U45) | (s[3] >> _U19)
    return result


@njit(cache=True, nogil=True)
def _mc_kernel(wealth, kind, lam, omega, n_steps, s, reject_limit):
    """Advance the population by n_steps collisions; returns u64 draws used."""
    n = wealth.shape[0]
    un = np.uint64(n)
    draws = 0
    for _ in range(n_steps):
        x = _xo_next(s)
        draws += 1
        while reject_limit != _U0 and x >= reject_limit:
            x = _xo_next(s)
            draws += 1
        i = int(x % un)
        x = _xo_next(s)
        draws += 1
        while reject_limit != _U0 and x >= reject_limit:
            x = _xo_next(s)
            draws += 1
        j = int(x % un)
        while j == i:
            x = _xo_next(s)
            draws += 1
            while reject_limit != _U0 and x >= reject_limit:
                x = _xo_next(s)
                draws += 1
            j = int(x % un)
        eps = (_xo_next(s) >> _U11) * _TWO53_INV
        draws += 1
        while eps == 0.0:
            eps = (_xo_next(s) >> _U11) * _TWO53_INV
            draws += 1
        u_i = wealth[i]
        u_j = wealth[j]
        if kind == 0:
            total = u_i + u_j
            first = eps * total
            wealth[i] = first
            wealth[j] = total - first
        elif kind == 1:
            total = u_i + u_j
            first = lam * u_i + eps * ((1.0 - lam) * total)
            if first > total:
                first = total
            wealth[i] = first
            wealth[j] = total - first
        else:
            moved = eps * (omega * u_j)
            wealth[i] = u_i + moved
            wealth[j] = u_j - moved
    return draws


def _reject_limit(n: int) -> np.uint64:
    return np.uint64(((1 << 64) - ((1 << 64) % n)) & ((1 << 64) - 1))


@dataclass(frozen=True)
class Population:
    """N agent wealths under one model; step_count counts collisions."""

    wealth: np.ndarray
    model: ModelParams
    step_count: int = 0

    def __post_init__(self):
        w = np.ascontiguousarray(self.wealth, dtype=float)
        if w.ndim != 1 or w.size < 2:
            raise ValueError("a population needs at least 2 agents")
        if w.min() < 0:
            raise ValueError("wealth must be nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "wealth", w)

    @property
    def n_agents(self) -> int:
        return self.wealth.size

    @property
    def total_wealth(self) -> float:
        return float(self.wealth.sum())


def init_population(n_agents: int, model: ModelParams, initial="delta",
                    rng: RngStream | None = None) -> Population:
    """Create a population; `initial` is "delta", "exponential" or a GridPdf.

    Random initial conditions are rescaled so the empirical mean equals the
    model's mean wealth exactly.
    """
    if n_agents < 2:
        raise ValueError("need at least 2 agents")
    m = model.mean_wealth
    if isinstance(initial, str) and initial == "delta":
        wealth = np.full(n_agents, m)
        return Population(wealth, model)
    if rng is None:
        raise ValueError("random initial conditions require an RngStream")
    draws = np.empty(n_agents)
    for k in range(n_agents):
        draws[k] = rng.random()
    if isinstance(initial, str) and initial == "exponential":
        wealth = -m * np.log1p(-draws)
    elif isinstance(initial, GridPdf):
        nodes = initial.grid.nodes
        cdf = np.empty(nodes.size)
        cdf[0] = _head_mass(initial.grid, initial.values)
        cdf[1:] = cdf[0] + np.cumsum(
            0.5 * np.diff(nodes) * (initial.values[1:] + initial.values[:-1]))
        if cdf[-1] <= 0:
            raise ValueError("cannot sample from a zero-mass density")
        cdf /= cdf[-1]
        wealth = np.interp(draws, cdf, nodes)
    else:
        raise ValueError("initial must be 'delta', 'exponential', or a GridPdf")
    wealth *= m / wealth.mean()
    return Population(wealth, model)


def step(pop: Population, rng: RngStream) -> Population:
    """One collision, in Python; bit-compatible with the compiled kernel."""
    n = pop.n_agents
    i = rng.below(n)
    j = rng.below(n)
    while j == i:
        j = rng.below(n)
    eps = rng.uniform_eps()
    wealth = pop.wealth.copy()
    wealth[i], wealth[j] = exchange(wealth[i], wealth[j], eps, pop.model)
    return Population(wealth, pop.model, pop.step_count + 1)


def run(pop: Population, n_steps: int, rng: RngStream) -> Population:
    """Apply n_steps collisions through the compiled kernel."""
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if n_steps == 0:
        return pop
    wealth = pop.wealth.copy()
    state = np.array(rng.state_words(), dtype=np.uint64)
    params = pop.model
    draws = _mc_kernel(
        wealth, _KIND_CODE[params.kind],
        params.saving_fraction if params.kind == SAVING else 0.0,
        params.exchange_fraction if params.kind == ANGLE else 0.0,
        n_steps, state, _reject_limit(pop.n_agents))
    rng.set_state(state, rng.position + int(draws))
    return Population(wealth, params, pop.step_count + n_steps)


@dataclass(frozen=True)
class WealthHistogram:
    """Occupancy counts over wealth bins; wealth above the last edge is
    accumulated in a reported overflow count, never dropped."""

    bin_edges: np.ndarray
    counts: np.ndarray
    overflow: int = 0

    def __post_init__(self):
        edges = np.ascontiguousarray(self.bin_edges, dtype=float)
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if counts.size != edges.size - 1:
            raise ValueError("counts and edges are inconsistent")
        edges.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def samples(self) -> int:
        return int(self.counts.sum())

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def density(self) -> np.ndarray:
        """Per-bin density normalized over the in-range samples."""
        if self.samples == 0:
            raise ValueError("empty histogram has no density")
        return self.counts / (self.samples * self.widths)

    @classmethod
    def merge(cls, hists) -> "WealthHistogram":
        hists = list(hists)
        edges = hists[0].bin_edges
        for h in hists[1:]:
            if not np.array_equal(h.bin_edges, edges):
                raise ValueError("cannot merge histograms with different bins")
        counts = np.sum([h.counts for h in hists], axis=0)
        overflow = sum(h.overflow for h in hists)
        return cls(edges, counts, overflow)

    def to_grid_pdf(self, grid: WealthGrid, mean_wealth: float) -> GridPdf:
        """Bin-center density interpolated onto a grid and normalized."""
        dens = self.density()
        values = np.interp(grid.nodes, self.centers, dens,
                           left=dens[0], right=0.0)
        return normalize(GridPdf(grid, np.clip(values, 0.0, None), mean_wealth))


def histogram(pop: Population, bin_edges) -> WealthHistogram:
    edges = np.asarray(bin_edges, dtype=float)
    counts, _ = np.histogram(pop.wealth, bins=edges)
    overflow = int(np.count_nonzero(pop.wealth > edges[-1]))
    return WealthHistogram(edges, counts, overflow)


def default_bin_edges(mean_wealth: float, n_bins: int = 200,
                      span: float = 10.0) -> np.ndarray:
    return np.linspace(0.0, span * mean_wealth, n_bins + 1)


def sample_equilibrium(pop: Population, rng: RngStream, n_steps: int,
                       bin_edges=None, burn_in: int | None = None,
                       interval: int | None = None):
    """Run n_steps collisions, accumulating decorrelated histogram snapshots.

    Burn-in defaults to 20 N collisions (capped by n_steps), after which the
    population is histogrammed every N collisions and the counts summed.
    Returns (final population, accumulated histogram).
    """
    n = pop.n_agents
    if bin_edges is None:
        bin_edges = default_bin_edges(pop.model.mean_wealth)
    edges = np.asarray(bin_edges, dtype=float)
    if burn_in is None:
        burn_in = min(20 * n, n_steps)
    if interval is None:
        interval = n
    pop = run(pop, burn_in, rng)
    remaining = n_steps - burn_in
    counts = np.zeros(edges.size - 1, dtype=np.int64)
    overflow = 0
    n_snapshots = remaining // interval
    if n_snapshots == 0:
        pop = run(pop, remaining, rng)
        snap = histogram(pop, edges)
        counts += snap.counts
        overflow += snap.overflow
    else:
        for _ in range(n_snapshots):
            pop = run(pop, interval, rng)
            snap = histogram(pop, edges)
            counts += snap.counts
            overflow += snap.overflow
        pop = run(pop, remaining - n_snapshots * interval, rng)
    return pop, WealthHistogram(edges, counts, overflow)


def run_replicas(model: ModelParams, n_agents: int, n_steps: int, seed: int,
                 replicas: int = 1, initial="delta", bin_edges=None,
                 burn_in: int | None = None, interval: int | None = None,
                 jobs: int = 1):
    """Independent replicas with derived seeds, merged into one histogram.

    Returns (merged histogram, list of final populations in replica order).
    """
    master = RngStream(seed)
    streams = [master.split(r) for r in range(replicas)]

    def one(r: int):
        rng = streams[r]
        pop = init_population(n_agents, model, initial, rng)
        return sample_equilibrium(pop, rng, n_steps, bin_edges, burn_in, interval)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, range(replicas)))
    else:
        results = [one(r) for r in range(replicas)]
    pops = [pop for pop, _ in results]
    merged = WealthHistogram.merge([h for _, h in results])
    return merged, pops
