"""Volatility model definitions.

Two model families: constant volatility, and an extended Stein-Stein model
where the instantaneous vol is sigma_t = f(Y_t) for an Ornstein-Uhlenbeck
factor Y driven by the vol Brownian motion.  The OU transition and the
pathwise sensitivities of Y (and of sigma^2) to the driving noise are
closed-form and live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OuParams",
    "Identity",
    "AbsClamped",
    "SmoothedAbs",
    "ConstantVol",
    "ExtendedSteinStein",
    "ModelSpec",
]


@dataclass(frozen=True)
class OuParams:
    """Ornstein-Uhlenbeck factor dY = kappa*(m - Y) dt + lam dW."""

    kappa: float
    m: float
    lam: float
    y0: float

    def __post_init__(self):
        vals = (self.kappa, self.m, self.lam, self.y0)
        if any(not math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite OU parameter: {vals}")
        # kappa = 0 (no mean reversion) and lam = 0 (deterministic factor)
        # are permitted as degenerate limits used by the convergence studies.
        if self.kappa < 0.0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if self.lam < 0.0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")

    def mean(self, y, t, s):
        """Conditional mean of Y_s given Y_t = y: y*e^{-k(s-t)} + m*(1 - e^{-k(s-t)})."""
        if np.any(np.asarray(s) < np.asarray(t)):
            raise ValueError("ou mean requires s >= t")
        decay = np.exp(-self.kappa * (np.asarray(s, dtype=float) - t))
        out = np.asarray(y, dtype=float) * decay + self.m * (1.0 - decay)
        return out if np.ndim(out) else float(out)

    def variance(self, t, s):
        """Conditional variance of Y_s given Y_t: lam^2 (1 - e^{-2k(s-t)}) / (2k)."""
        if np.any(np.asarray(s) < np.asarray(t)):
            raise ValueError("ou variance requires s >= t")
        dt = np.asarray(s, dtype=float) - t
        if self.kappa == 0.0:
            out = self.lam**2 * dt
        else:
            out = self.lam**2 * (1.0 - np.exp(-2.0 * self.kappa * dt)) / (2.0 * self.kappa)
        return out if np.ndim(out) else float(out)

    def malliavin_d_y(self, u, s):
        """Sensitivity of Y_s to a bump of the driving noise at u: lam * e^{-k(s-u)}."""
        if np.any(np.asarray(s) < np.asarray(u)):
            raise ValueError("requires u <= s")
        out = self.lam * np.exp(-self.kappa * (np.asarray(s, dtype=float) - u))
        return out if np.ndim(out) else float(out)


class Identity:
    """f(y) = y.  Matches the classical Stein-Stein model.

    Does not keep sigma bounded away from zero, so downstream code that
    divides by sigma flags and counts near-zero samples.
    """

    bounded = False

    def __call__(self, y):
        return np.asarray(y, dtype=float)

    def fprime(self, y):
        return np.ones_like(np.asarray(y, dtype=float))

    def corner_mask(self, y):
        return np.zeros(np.shape(np.asarray(y)), dtype=bool)

    def __repr__(self):
        return "Identity()"


@dataclass(frozen=True)
class AbsClamped:
    """f(y) = clamp(|y|, sig_min, sig_max).

    One-sided derivatives at the corners: the derivative is 0 on the
    clamped plateaus and at y = 0, sign(y) elsewhere.
    """

    sig_min: float = 0.01
    sig_max: float = 2.0
    bounded = True

    def __post_init__(self):
        if not 0.0 < self.sig_min <= self.sig_max:
            raise ValueError("need 0 < sig_min <= sig_max")

    def __call__(self, y):
        return np.clip(np.abs(np.asarray(y, dtype=float)), self.sig_min, self.sig_max)

    def fprime(self, y):
        y = np.asarray(y, dtype=float)
        a = np.abs(y)
        return np.where((a > self.sig_min) & (a < self.sig_max), np.sign(y), 0.0)

    def corner_mask(self, y):
        a = np.abs(np.asarray(y, dtype=float))
        return (a <= self.sig_min) | (a >= self.sig_max)


@dataclass(frozen=True)
class SmoothedAbs:
    """f(y) = clamp(sqrt(y^2 + eps^2), sig_min, sig_max).

    Continuously differentiable away from the clamp corners; keeps sigma in
    [sig_min, sig_max] so every division by sigma downstream is safe.
    """

    eps: float = 1e-3
    sig_min: float = 0.01
    sig_max: float = 2.0
    bounded = True

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be > 0")
        if not 0.0 < self.sig_min <= self.sig_max:
            raise ValueError("need 0 < sig_min <= sig_max")

    def __call__(self, y):
        smooth = np.sqrt(np.asarray(y, dtype=float) ** 2 + self.eps**2)
        return np.clip(smooth, self.sig_min, self.sig_max)

    def fprime(self, y):
        # One-sided (interior zero) derivative on the clamped plateaus.
        y = np.asarray(y, dtype=float)
        smooth = np.sqrt(y**2 + self.eps**2)
        inner = y / smooth
        return np.where((smooth > self.sig_min) & (smooth < self.sig_max), inner, 0.0)

    def corner_mask(self, y):
        smooth = np.sqrt(np.asarray(y, dtype=float) ** 2 + self.eps**2)
        return (smooth <= self.sig_min) | (smooth >= self.sig_max)


@dataclass(frozen=True)
class ConstantVol:
    """Deterministic constant volatility."""

    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise ValueError(f"constant vol must be finite and > 0, got {self.sigma}")


@dataclass(frozen=True)
class ExtendedSteinStein:
    """sigma_t = f(Y_t) with Y an OU factor driven by the vol Brownian motion."""

    ou: OuParams
    vol_fn: object = field(default_factory=SmoothedAbs)

    def sigma(self, y):
        return self.vol_fn(y)

    def malliavin_d_sigma_sq(self, y_s, u, s):
        """Sensitivity of sigma_s^2 to a noise bump at u <= s.

        Chain rule: 2 f(Y_s) f'(Y_s) * lam * e^{-kappa (s - u)}.
        """
        f = self.vol_fn(y_s)
        fp = self.vol_fn.fprime(y_s)
        out = 2.0 * f * fp * self.ou.malliavin_d_y(u, s)
        return out if np.ndim(out) else float(out)

    def sigma_bar_sq(self, y_s):
        """u -> s limit of malliavin_d_sigma_sq: 2 lam f(Y_s) f'(Y_s)."""
        out = 2.0 * self.ou.lam * self.vol_fn(y_s) * self.vol_fn.fprime(y_s)
        return out if np.ndim(out) else float(out)

    def skew_quotient(self, y_s):
        """sigma_bar^2 / sigma^2 = 2 lam f'(Y_s) / f(Y_s)."""
        out = 2.0 * self.ou.lam * self.vol_fn.fprime(y_s) / self.vol_fn(y_s)
        return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ModelSpec:
    """Market rate, log-spot, spot/vol correlation and the vol model."""

    rate: float
    rho: float
    x0: float
    vol: object  # ConstantVol | ExtendedSteinStein

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        if not (math.isfinite(self.rate) and math.isfinite(self.x0)):
            raise ValueError("rate and x0 must be finite")
        if not isinstance(self.vol, (ConstantVol, ExtendedSteinStein)):
            raise TypeError(f"unsupported vol model: {self.vol!r}")

    @property
    def is_constant_vol(self):
        return isinstance(self.vol, ConstantVol)
