"""Black-Scholes call analytics.

All functions work on scalars or numpy arrays (broadcasting) and use the
log-spot convention: the spot is ``exp(x)``.  Degenerate inputs
(``vol * sqrt(tau) == 0``) collapse the call price to its intrinsic value,
which the short-maturity studies in this package rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = [
    "BsInputs",
    "DegenerateVolError",
    "NoSolutionError",
    "ImpliedVolConvergenceError",
    "norm_cdf",
    "norm_pdf",
    "d_plus_minus",
    "bs_call",
    "bs_vega",
    "g_function",
    "h_function",
    "dk_g",
    "dkk_g",
    "forward_start_bs_price",
    "implied_vol",
]


class DegenerateVolError(ValueError):
    """Raised when ``vol * sqrt(tau) == 0`` makes d+/d- undefined."""


class NoSolutionError(ValueError):
    """Raised when a target price lies at or above the upper bound exp(x)."""


class ImpliedVolConvergenceError(RuntimeError):
    """Raised when the implied-vol solver exhausts its iteration budget.

    Carries the best bracket found so far in ``bracket``.
    """

    def __init__(self, msg, bracket):
        super().__init__(msg)
        self.bracket = bracket


def norm_cdf(z):
    """Standard normal CDF, erfc-based (accurate to ~1e-16 in both tails)."""
    return ndtr(z)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BsInputs:
    """Scalar Black-Scholes inputs with validation at construction.

    tau is the time to maturity in years, x the log-spot, strike in price
    units, vol and rate annualized (continuous compounding).
    """

    tau: float
    x: float
    strike: float
    vol: float
    rate: float = 0.0

    def __post_init__(self):
        vals = (self.tau, self.x, self.strike, self.vol, self.rate)
        if any(not math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite Black-Scholes input: {vals}")
        if self.tau < 0.0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.strike <= 0.0:
            raise ValueError(f"strike must be > 0, got {self.strike}")
        if self.vol < 0.0:
            raise ValueError(f"vol must be >= 0, got {self.vol}")

    def as_args(self):
        return self.tau, self.x, self.strike, self.vol, self.rate


def _intrinsic(tau, x, strike, rate):
    return np.maximum(np.exp(x) - strike * np.exp(-rate * tau), 0.0)


def d_plus_minus(tau, x, strike, vol, rate=0.0):
    """d+ and d- of the Black-Scholes formula.

    Raises DegenerateVolError when ``vol * sqrt(tau)`` vanishes anywhere.
    """
    tau, x, strike, vol = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (tau, x, strike, vol))
    )
    total_std = vol * np.sqrt(tau)
    if np.any(total_std <= 0.0):
        raise DegenerateVolError("vol * sqrt(tau) must be positive for d+/d-")
    log_fwd_moneyness = x - np.log(strike) + rate * tau
    d_plus = log_fwd_moneyness / total_std + 0.5 * total_std
    return d_plus, d_plus - total_std


def bs_call(tau, x, strike, vol, rate=0.0):
    """Black-Scholes call price exp(x)*N(d+) - K*exp(-r*tau)*N(d-).

    Where ``vol*sqrt(tau)`` is zero the intrinsic value
    ``(exp(x) - K exp(-r tau))_+`` is returned instead of erroring.
    """
    tau, x, strike, vol = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (tau, x, strike, vol))
    )
    if np.any(~np.isfinite(tau) | ~np.isfinite(x) | ~np.isfinite(strike) | ~np.isfinite(vol)):
        raise ValueError("non-finite input to bs_call")
    if np.any(tau < 0.0) or np.any(strike <= 0.0) or np.any(vol < 0.0):
        raise ValueError("bs_call requires tau >= 0, strike > 0, vol >= 0")

    total_std = vol * np.sqrt(tau)
    degenerate = total_std <= 0.0
    safe_std = np.where(degenerate, 1.0, total_std)
    log_fwd_moneyness = x - np.log(strike) + rate * tau
    d_plus = log_fwd_moneyness / safe_std + 0.5 * safe_std
    d_minus = d_plus - safe_std
    live = np.exp(x) * ndtr(d_plus) - strike * np.exp(-rate * tau) * ndtr(d_minus)
    price = np.where(degenerate, _intrinsic(tau, x, strike, rate), live)
    return price if price.ndim else float(price)


def bs_vega(tau, x, strike, vol, rate=0.0):
    """d(price)/d(vol) = exp(x) * N'(d+) * sqrt(tau); requires vol, tau > 0."""
    d_plus, _ = d_plus_minus(tau, x, strike, vol, rate)
    out = np.exp(np.asarray(x, dtype=float)) * norm_pdf(d_plus) * np.sqrt(
        np.asarray(tau, dtype=float)
    )
    return out if out.ndim else float(out)


def g_function(tau, x, strike, vol, rate=0.0):
    """(d_xx - d_x) of the call price: exp(x) * N'(d+) / (vol*sqrt(tau))."""
    d_plus, _ = d_plus_minus(tau, x, strike, vol, rate)
    total_std = np.asarray(vol, dtype=float) * np.sqrt(np.asarray(tau, dtype=float))
    out = np.exp(np.asarray(x, dtype=float)) * norm_pdf(d_plus) / total_std
    return out if out.ndim else float(out)


def h_function(tau, x, strike, vol, rate=0.0):
    """d_x of g_function: G * (1 - d+ / (vol*sqrt(tau)))."""
    d_plus, _ = d_plus_minus(tau, x, strike, vol, rate)
    total_std = np.asarray(vol, dtype=float) * np.sqrt(np.asarray(tau, dtype=float))
    g = np.exp(np.asarray(x, dtype=float)) * norm_pdf(d_plus) / total_std
    out = g * (1.0 - d_plus / total_std)
    return out if out.ndim else float(out)


def dk_g(tau, x, strike, vol, rate=0.0):
    """d/dk of g_function with k = ln(strike): G * d+ / (vol*sqrt(tau))."""
    d_plus, _ = d_plus_minus(tau, x, strike, vol, rate)
    total_std = np.asarray(vol, dtype=float) * np.sqrt(np.asarray(tau, dtype=float))
    g = np.exp(np.asarray(x, dtype=float)) * norm_pdf(d_plus) / total_std
    out = g * d_plus / total_std
    return out if out.ndim else float(out)


def dkk_g(tau, x, strike, vol, rate=0.0):
    """Second k-derivative of g_function: G * (d+^2 - 1) / (vol^2 * tau)."""
    d_plus, _ = d_plus_minus(tau, x, strike, vol, rate)
    total_std = np.asarray(vol, dtype=float) * np.sqrt(np.asarray(tau, dtype=float))
    g = np.exp(np.asarray(x, dtype=float)) * norm_pdf(d_plus) / total_std
    out = g * (d_plus * d_plus - 1.0) / (total_std * total_std)
    return out if out.ndim else float(out)


def forward_start_bs_price(x_t, s, maturity, alpha, vol, rate=0.0):
    """Constant-vol forward-start call value exp(x_t) * BS(T-s, 0, exp(alpha), vol).

    Independent of the time between valuation and the forward-start date s.
    """
    if maturity <= s:
        raise ValueError(f"maturity {maturity} must exceed forward-start date {s}")
    out = np.exp(np.asarray(x_t, dtype=float)) * bs_call(
        maturity - s, 0.0, math.exp(alpha), vol, rate
    )
    return out if np.ndim(out) else float(out)


def _implied_vol_seed(target, tau, x, strike, rate):
    # Corrado-Miller style rational seed, with a flat fallback when the
    # square root goes negative (deep ITM/OTM or tiny tau).
    spot = math.exp(x)
    disc_strike = strike * math.exp(-rate * tau)
    half_gap = 0.5 * (spot - disc_strike)
    core = target - half_gap
    radicand = core * core - half_gap * half_gap * 4.0 / math.pi
    if radicand <= 0.0 or spot + disc_strike <= 0.0:
        return 0.5
    sigma = (
        math.sqrt(2.0 * math.pi / tau)
        / (spot + disc_strike)
        * (core + math.sqrt(radicand))
    )
    return min(max(sigma, 1e-4), 5.0)


def implied_vol(target_price, tau, x, strike, rate=0.0, tol=None, max_iter=100):
    """Invert bs_call with respect to volatility.

    Newton iterations with the analytic vega, safeguarded by a maintained
    bracket; falls back to bisection whenever a Newton step leaves the
    bracket or the vega is too small.  A price at or below intrinsic
    returns the boundary value 0.0; a price at or above exp(x) raises
    NoSolutionError.
    """
    if not all(math.isfinite(v) for v in (target_price, tau, x, strike, rate)):
        raise ValueError("non-finite input to implied_vol")
    if tau <= 0.0 or strike <= 0.0:
        raise ValueError("implied_vol requires tau > 0 and strike > 0")
    spot = math.exp(x)
    if tol is None:
        tol = 1e-12 * spot
    intrinsic = max(spot - strike * math.exp(-rate * tau), 0.0)
    if target_price <= intrinsic + tol:
        return 0.0
    if target_price >= spot:
        raise NoSolutionError(
            f"price {target_price} at or above upper no-arbitrage bound {spot}"
        )

    lo, hi = 0.0, 1.0
    while bs_call(tau, x, strike, hi, rate) < target_price:
        hi *= 2.0
        if hi > 1e4:  # pragma: no cover - cannot happen below the upper bound
            raise ImpliedVolConvergenceError("bracket expansion failed", (lo, hi))

    sigma = min(max(_implied_vol_seed(target_price, tau, x, strike, rate), lo), hi)
    for _ in range(max_iter):
        price = bs_call(tau, x, strike, sigma, rate)
        err = price - target_price
        if abs(err) <= tol:
            return sigma
        if err > 0.0:
            hi = sigma
        else:
            lo = sigma
        vega = bs_vega(tau, x, strike, sigma, rate) if sigma > 0.0 else 0.0
        if vega > 1e-300:
            candidate = sigma - err / vega
        else:
            candidate = 0.5 * (lo + hi)
        if not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        sigma = candidate
    raise ImpliedVolConvergenceError(
        f"no convergence after {max_iter} iterations", (lo, hi)
    )
