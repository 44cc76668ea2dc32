"""kinex: kinetic wealth-exchange models.

Agent-based Monte Carlo simulation and deterministic evolution of the
wealth density for three conservative exchange models (pure random split,
saving, and asymmetric winner/loser exchange), plus steady-state solvers,
relaxation-time measurement, and the Gamma-exactness residual.
"""

from .errors import NumericError
from .grid import (GridPdf, PdfDistance, WealthGrid, distance, interpolate,
                   mean_of, normalize, quadrature)
from .models import (ANGLE, PURE, SAVING, GammaSpec, ModelParams,
                     exchange, exchange_angle, exchange_pure, exchange_saving,
                     exponential_pdf, gamma_pdf, gamma_residual, gamma_shape,
                     hyp1f1)
from .montecarlo import (Population, WealthHistogram, default_bin_edges,
                         histogram, init_population, run, run_replicas,
                         sample_equilibrium, step)
from .kinetics import (EvolutionState, FixedPointReport, RelaxationFit,
                       advance, default_grid, default_seed_pdf, evolution_rate,
                       gain_angle, gain_pure, gain_saving, perturb_equilibrium,
                       relaxation_time, solve_steady, steady_operator)
from .rng import RngStream

__version__ = "0.1.0"
