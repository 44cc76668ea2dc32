"""The three exchange mappings and their reference distributions.

Pair updates are pure functions of (u_i, u_j, eps) and conserve the pair
total to the last representable digit: the second output is always computed
as total minus first output.  The same expressions, in the same order, are
used by the compiled Monte Carlo kernel so that both paths agree bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError

PURE = "pure"
SAVING = "saving"
ANGLE = "angle"
KINDS = (PURE, SAVING, ANGLE)


@dataclass(frozen=True)
class ModelParams:
    """Which exchange model, its parameter, and the mean wealth."""

    kind: str
    saving_fraction: float | None = None
    exchange_fraction: float | None = None
    mean_wealth: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"model must be one of {', '.join(KINDS)}")
        if self.mean_wealth <= 0 or not math.isfinite(self.mean_wealth):
            raise ValueError("mean-wealth must be positive")
        if self.kind == SAVING:
            lam = self.saving_fraction
            if lam is None or not (0.0 <= lam < 1.0):
                raise ValueError("lambda must be in [0,1)")
            if self.exchange_fraction is not None:
                raise ValueError("omega is not a saving-model parameter")
        elif self.kind == ANGLE:
            w = self.exchange_fraction
            if w is None or not (0.0 < w <= 1.0):
                raise ValueError("omega must be in (0,1]")
            if self.saving_fraction is not None:
                raise ValueError("lambda is not an angle-model parameter")
        else:
            if self.saving_fraction is not None or self.exchange_fraction is not None:
                raise ValueError("the pure model takes no lambda/omega parameter")

    @property
    def parameter(self) -> float | None:
        """The model's single free parameter, None for the pure model."""
        if self.kind == SAVING:
            return self.saving_fraction
        if self.kind == ANGLE:
            return self.exchange_fraction
        return None


def _check_eps(eps: float):
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must be strictly inside (0,1)")


def _check_wealth(u_i: float, u_j: float):
    if u_i < 0 or u_j < 0:
        raise ValueError("wealth must be nonnegative")


def exchange_pure(u_i: float, u_j: float, eps: float) -> tuple[float, float]:
    """Random split of the pair total: (eps*S, (1-eps)*S)."""
    _check_wealth(u_i, u_j)
    _check_eps(eps)
    total = u_i + u_j
    first = eps * total
    return first, total - first


def exchange_saving(u_i: float, u_j: float, eps: float,
                    params: ModelParams) -> tuple[float, float]:
    """Each agent keeps a fixed fraction, the rest is split at random."""
    if params.kind != SAVING:
        raise ValueError("exchange_saving requires saving-model parameters")
    _check_wealth(u_i, u_j)
    _check_eps(eps)
    lam = params.saving_fraction
    total = u_i + u_j
    first = lam * u_i + eps * ((1.0 - lam) * total)
    if first > total:
        first = total
    return first, total - first


def exchange_angle(u_i: float, u_j: float, eps: float,
                   params: ModelParams) -> tuple[float, float]:
    """Loser j hands a random share of omega*u_j to winner i."""
    if params.kind != ANGLE:
        raise ValueError("exchange_angle requires angle-model parameters")
    _check_wealth(u_i, u_j)
    _check_eps(eps)
    moved = eps * (params.exchange_fraction * u_j)
    return u_i + moved, u_j - moved


def exchange(u_i: float, u_j: float, eps: float,
             params: ModelParams) -> tuple[float, float]:
    """Dispatch to the model's pair update."""
    if params.kind == PURE:
        return exchange_pure(u_i, u_j, eps)
    if params.kind == SAVING:
        return exchange_saving(u_i, u_j, eps, params)
    return exchange_angle(u_i, u_j, eps, params)


def exponential_pdf(u, mean_wealth: float):
    """Equilibrium density of the pure model: (1/m) * exp(-u/m)."""
    if mean_wealth <= 0:
        raise ValueError("mean-wealth must be positive")
    uarr = np.asarray(u, dtype=float)
    if np.any(uarr < 0):
        raise ValueError("wealth must be nonnegative")
    beta = 1.0 / mean_wealth
    out = beta * np.exp(-beta * uarr)
    return float(out) if uarr.ndim == 0 else out


def gamma_shape(params: ModelParams) -> float:
    """Shape exponent of the Gamma approximation for saving/angle models."""
    if params.kind == SAVING:
        lam = params.saving_fraction
        return (1.0 + 2.0 * lam) / (1.0 - lam)
    if params.kind == ANGLE:
        w = params.exchange_fraction
        return (3.0 - 2.0 * w) / (2.0 * w)
    raise ValueError("the pure model has an exponential equilibrium; "
                     "no Gamma shape is defined for it")


@dataclass(frozen=True)
class GammaSpec:
    """Shape n, normalization a, and mean of f = a * u**(n-1) * exp(-n*u/m)."""

    n: float
    a: float
    mean_wealth: float

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("gamma shape must be positive")
        expected = math.exp(self.n * math.log(self.n / self.mean_wealth)
                            - math.lgamma(self.n))
        if abs(self.a - expected) > 1e-10 * expected:
            raise ValueError("normalization inconsistent with shape and mean")

    @classmethod
    def from_shape(cls, n: float, mean_wealth: float = 1.0) -> "GammaSpec":
        a = math.exp(n * math.log(n / mean_wealth) - math.lgamma(n))
        return cls(n=n, a=a, mean_wealth=mean_wealth)

    @classmethod
    def for_model(cls, params: ModelParams) -> "GammaSpec":
        return cls.from_shape(gamma_shape(params), params.mean_wealth)


def gamma_pdf(u, spec: GammaSpec):
    """Evaluate the Gamma density; u=0 with n<1 yields inf (singular head)."""
    uarr = np.asarray(u, dtype=float)
    if np.any(uarr < 0):
        raise ValueError("wealth must be nonnegative")
    n, m = spec.n, spec.mean_wealth
    lna = math.log(spec.a)
    with np.errstate(divide="ignore", invalid="ignore"):
        logf = lna + (n - 1.0) * np.log(uarr) - n * uarr / m
        out = np.exp(logf)
    if n > 1.0:
        out = np.where(uarr == 0.0, 0.0, out)
    elif n == 1.0:
        out = np.where(uarr == 0.0, spec.a, out)
    else:
        out = np.where(uarr == 0.0, np.inf, out)
    return float(out) if uarr.ndim == 0 else out


# --- confluent hypergeometric function (Kummer's M) ---

_SERIES_MAX_TERMS = 100_000
_SERIES_RTOL = 1e-14


def _kummer_series(a: float, b: float, z: float) -> tuple[float, float]:
    """Taylor series of M(a,b,z) with overflow rescaling.

    Returns (sum, log_scale) with M = sum * exp(log_scale).
    """
    term = 1.0
    total = 1.0
    log_scale = 0.0
    for k in range(_SERIES_MAX_TERMS):
        term *= (a + k) * z / ((b + k) * (k + 1.0))
        if term == 0.0:
            return total, log_scale
        total += term
        if abs(term) <= _SERIES_RTOL * abs(total):
            return total, log_scale
        if abs(total) > 1e280 or abs(term) > 1e280:
            total *= 0.5 ** 512
            term *= 0.5 ** 512
            log_scale += 512.0 * math.log(2.0)
    raise NumericError(f"hyp1f1 series did not converge for a={a}, b={b}, z={z}")


def hyp1f1(a: float, b: float, z: float) -> float:
    """Kummer's confluent hypergeometric function M(a, b, z).

    Negative arguments are routed through M(a,b,z) = exp(z) M(b-a, b, -z)
    so the series keeps positive terms in the shipped envelope.
    """
    if b <= 0 and b == round(b):
        raise ValueError("b must not be a nonpositive integer")
    if z < 0.0:
        total, log_scale = _kummer_series(b - a, b, -z)
        return total * math.exp(z + log_scale)
    total, log_scale = _kummer_series(a, b, z)
    if log_scale == 0.0:
        return total
    return total * math.exp(log_scale)


def gamma_residual(u, params: ModelParams):
    """Departure of the Gamma ansatz from the angle-model balance condition.

    Evaluates 2 u^2 (ln f)'' of the iterated Gamma plus 2(n-1); identically
    zero exactly when the Gamma density solves the stationary equation.
    """
    if params.kind != ANGLE:
        raise ValueError("the residual identity is defined for the angle model")
    uarr = np.asarray(u, dtype=float)
    if np.any(uarr <= 0):
        raise ValueError("the residual identity requires u > 0")
    w = params.exchange_fraction
    m = params.mean_wealth
    n = gamma_shape(params)
    base = 1.0 / w + 2.0 * (n - 1.0)
    if w == 1.0:
        # Both integral terms vanish in the limit: the hypergeometric term
        # carries 1/Gamma(2n-1) -> 0 and the exponential decay argument
        # diverges faster than its linear prefactor.
        out = np.full_like(uarr, base, dtype=float)
        return float(out) if uarr.ndim == 0 else out

    scalar = uarr.ndim == 0
    uvec = np.atleast_1d(uarr)
    out = np.empty_like(uvec)
    # a * Gamma(n) == (n/m)**n, so the prefactor needs only Gamma(n-1).
    coeff = 0.0
    if n != 1.0:
        coeff = ((n - 1.0) * (n / m) ** n * math.gamma(n - 1.0)
                 / (w ** n * math.gamma(2.0 * n - 1.0)))
    for i, ui in enumerate(uvec):
        first = 0.0
        if coeff != 0.0:
            z = (n / m) * ui * (w - 1.0) / w
            first = -coeff * ui ** n * hyp1f1(n, 2.0 * n - 1.0, z)
        arg = (n / m) * w * ui / (1.0 - w)
        second = -math.exp(-arg) * (1.0 + arg) / (w * (1.0 - w) ** (n - 1.0))
        out[i] = first + second + base
    return float(out[0]) if scalar else out
