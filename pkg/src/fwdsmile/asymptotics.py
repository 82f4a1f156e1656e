"""Closed-form short-maturity limits of the ATM forward smile.

Level:      lim I = E(sigma_s) + rho * E_corr
Skew:       lim dI/dalpha = rho e^{-r(s-t)} / (4 e^{x_t}) * E(e^{X_s} sbar^2/sigma_s^2)
Curvature:  lim (T-s) d2I/dalpha2 = four-term expression mixing a nested
            conditional-expectation integral, the level components and a
            1/sigma_s^3-weighted correction integral.

All expectations are over [t, s] only, so the limits are computed without
ever simulating past the forward-start date.  For the extended
Stein-Stein family every kernel factorizes through lam * e^{-kappa(s-u)},
which the nested term exploits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import forward_smile, mc_engine
from .mc_engine import McConfig, McEstimate, SimGrid
from .models import ConstantVol, ExtendedSteinStein, Identity

__all__ = [
    "CorrectionTerm",
    "CurvatureLimit",
    "AsymptoticsReport",
    "ComparisonRow",
    "correction_e",
    "nested_u_nodes",
    "level_limit",
    "skew_limit",
    "curvature_limit",
    "asymptotics_report",
    "compare",
]

# Identity-f division hazard: exclude |Y_s| below this and fail loudly if
# the excluded fraction exceeds the cap.
IDENTITY_EXCLUSION_CUTOFF = 1e-4
IDENTITY_EXCLUSION_MAX_FRACTION = 1e-4


@dataclass(frozen=True)
class CorrectionTerm:
    """The correlation correction to the ATM level limit."""

    estimate: McEstimate
    mode: str
    n_excluded: int = 0


@dataclass(frozen=True)
class CurvatureLimit:
    total: McEstimate
    term_nested: McEstimate
    term_level_uncorr: float
    term_level_corr: float
    term_correction: McEstimate
    term_correction_alt: float  # diagnostic: correction with E_corr pulled out

    @property
    def breakdown(self):
        return (self.term_nested.value, self.term_level_uncorr,
                self.term_level_corr, self.term_correction.value)


@dataclass(frozen=True)
class AsymptoticsReport:
    level: McEstimate
    skew: McEstimate
    curvature: CurvatureLimit


def _interval_batch(model, t, s, cfg: McConfig):
    grid = SimGrid.build(t, s, s, cfg.steps_per_year)
    return mc_engine.simulate(model, grid, cfg.n_paths, cfg.seed,
                              exact_ou=cfg.exact_ou, chunk_size=cfg.chunk_size,
                              n_workers=cfg.n_workers)


def _identity_guard(vol_model, y_s):
    """Mask of usable samples when f may vanish; counts exclusions."""
    if vol_model.vol_fn.bounded:
        return np.ones(y_s.shape, dtype=bool), 0
    keep = np.abs(y_s) >= IDENTITY_EXCLUSION_CUTOFF
    n_excluded = int(y_s.size - keep.sum())
    if n_excluded > IDENTITY_EXCLUSION_MAX_FRACTION * y_s.size:
        raise RuntimeError(
            f"{n_excluded} of {y_s.size} samples excluded for |Y_s| < "
            f"{IDENTITY_EXCLUSION_CUTOFF}; unbounded vol function is outside "
            "its safe regime here")
    return keep, n_excluded


def _correction_samples(model, batch, t, s, mode):
    """Per-path samples of the correction term, plus the exclusion count."""
    ou, f = model.vol.ou, model.vol.vol_fn
    times = batch.grid.times
    y_s = batch.y[:, -1]
    x_u = batch.x
    discount = np.exp(-model.rate * (times - t))
    decay = np.exp(-ou.kappa * (s - times))

    if mode == "specialized":
        integrand = discount * np.exp(x_u) * f(batch.y) * decay
        integral = np.trapezoid(integrand, x=times, axis=1)
        samples = math.exp(-model.x0) * ou.lam * f.fprime(y_s) * integral
        return samples, 0
    if mode == "general":
        d_sig_sq = model.vol.malliavin_d_sigma_sq(y_s[:, None], times[None, :], s)
        integrand = discount * np.exp(x_u) * batch.sigma * d_sig_sq
        integral = np.trapezoid(integrand, x=times, axis=1)
        sigma_s = batch.sigma[:, -1]
        keep, n_excluded = _identity_guard(model.vol, y_s)
        samples = 0.5 * math.exp(-model.x0) * integral[keep] / sigma_s[keep]
        return samples, n_excluded
    raise ValueError(f"unknown correction mode {mode!r}")


def correction_e(model, t, s, cfg: McConfig, mode="specialized", batch=None):
    """Monte Carlo estimate of the level-correction term over [t, s].

    ``mode='specialized'`` evaluates the factorized OU form; ``'general'``
    evaluates the generic 1/sigma_s-weighted form.  The two are
    algebraically identical for sigma = f(Y) and must agree statistically.
    """
    if s < t:
        raise ValueError("need t <= s")
    if s == t or isinstance(model.vol, ConstantVol) or model.vol.ou.lam == 0.0:
        return CorrectionTerm(McEstimate(0.0, 0.0, 0, cfg.seed), mode=mode)
    if batch is None:
        batch = _interval_batch(model, t, s, cfg)
    samples, n_excluded = _correction_samples(model, batch, t, s, mode)
    return CorrectionTerm(McEstimate.from_samples(samples, cfg.seed), mode=mode,
                          n_excluded=n_excluded)


def _level_components(model, t, s, cfg, batch=None):
    """Per-path samples of (sigma_s, correction), sharing one batch."""
    if isinstance(model.vol, ConstantVol):
        return None, None, None
    if batch is None:
        batch = _interval_batch(model, t, s, cfg)
    f = model.vol.vol_fn
    sigma_s = f(batch.y[:, -1])
    corr_samples, _ = _correction_samples(model, batch, t, s, "specialized")
    return batch, sigma_s, corr_samples


def level_limit(model, t, s, cfg: McConfig, batch=None):
    """ATM level limit E(sigma_s) + rho * E_corr.

    For the Identity vol function the E(sigma_s) leg is the exact OU mean
    g(t, s), so only the correction contributes Monte Carlo error.
    """
    if isinstance(model.vol, ConstantVol):
        return McEstimate(model.vol.sigma, 0.0, 0, cfg.seed)
    batch, sigma_s, corr = _level_components(model, t, s, cfg, batch)
    if isinstance(model.vol.vol_fn, Identity):
        g = model.vol.ou.mean(model.vol.ou.y0, t, s)
        return McEstimate.from_samples(g + model.rho * corr, cfg.seed)
    return McEstimate.from_samples(sigma_s + model.rho * corr, cfg.seed)


def skew_limit(model, t, s, cfg: McConfig, batch=None):
    """ATM skew limit rho e^{-r(s-t)}/(4 e^{x_t}) * E(e^{X_s} sbar^2/sigma_s^2)."""
    if isinstance(model.vol, ConstantVol) or model.rho == 0.0:
        return McEstimate(0.0, 0.0, 0, cfg.seed)
    if batch is None:
        batch = _interval_batch(model, t, s, cfg)
    y_s = batch.y[:, -1]
    keep, _ = _identity_guard(model.vol, y_s)
    quotient = model.vol.skew_quotient(y_s[keep])
    scale = model.rho * math.exp(-model.rate * (s - t)) / (4.0 * math.exp(model.x0))
    samples = scale * np.exp(batch.x[keep, -1]) * quotient
    return McEstimate.from_samples(samples, cfg.seed)


NESTED_GRADING_POWER = 4


def nested_u_nodes(t, s, n_nodes, power=NESTED_GRADING_POWER):
    """u-quadrature nodes for the nested curvature term, graded toward s.

    The integrand develops a boundary layer as u -> s whenever f has small
    values or corners (the conditional law of Y_s degenerates to a point
    mass there), so uniform nodes underresolve it badly.  Power-law grading
    u = s - (s-t) * tau^power concentrates nodes where the layer lives.
    """
    tau = np.linspace(1.0, 0.0, n_nodes)
    u = s - (s - t) * tau**power
    u[0], u[-1] = t, s
    return u


def _nested_term(model, t, s, cfg: McConfig):
    """Nested conditional-expectation integral of the curvature limit.

    lam^2 * E_t[ int_t^s e^{-2 kappa (s-u)} E_u(f'(Y_s))^2 / E_u(f(Y_s))^3 du ]
    with the inner conditional expectations computed by Gaussian
    sub-sampling of Y_s given Y_u (exact for an OU factor).
    """
    ou, f = model.vol.ou, model.vol.vol_fn
    u_nodes = nested_u_nodes(t, s, cfg.n_u_nodes)
    # exact-OU outer paths of Y on the coarse u grid
    rng = mc_engine._chunk_rng(cfg.seed, 0xA5)
    y = np.empty((cfg.n_outer, cfg.n_u_nodes))
    y[:, 0] = ou.y0
    for i in range(cfg.n_u_nodes - 1):
        du = u_nodes[i + 1] - u_nodes[i]
        sd = math.sqrt(ou.variance(0.0, du))
        y[:, i + 1] = (ou.m + (y[:, i] - ou.m) * math.exp(-ou.kappa * du)
                       + sd * rng.standard_normal(cfg.n_outer))

    identity = isinstance(f, Identity)
    integrand = np.empty((cfg.n_outer, cfg.n_u_nodes))
    inner_rng = mc_engine._chunk_rng(cfg.seed, 0xB7)
    inner_block = 2048
    for i, u in enumerate(u_nodes):
        g_u = ou.mean(y[:, i], u, s)
        if identity:
            e_fp, e_f = 1.0, g_u
        else:
            sd = math.sqrt(ou.variance(u, s))
            sum_f = np.zeros(cfg.n_outer)
            sum_fp = np.zeros(cfg.n_outer)
            drawn = 0
            while drawn < cfg.n_inner:
                k = min(inner_block, cfg.n_inner - drawn)
                z = inner_rng.standard_normal(k)
                y_s = g_u[:, None] + sd * z[None, :]
                sum_f += f(y_s).sum(axis=1)
                sum_fp += f.fprime(y_s).sum(axis=1)
                drawn += k
            e_f, e_fp = sum_f / cfg.n_inner, sum_fp / cfg.n_inner
        integrand[:, i] = np.exp(-2.0 * ou.kappa * (s - u)) * e_fp**2 / e_f**3
    per_path = ou.lam**2 * np.trapezoid(integrand, x=u_nodes, axis=1)
    return McEstimate.from_samples(per_path, cfg.seed)


def curvature_limit(model, t, s, cfg: McConfig):
    """Four-term ATM curvature limit (the gap-scaled second derivative).

    Constant vol, or a deterministic factor (lam = 0), gives an exact zero
    with all terms cancelling analytically.
    """
    if isinstance(model.vol, ConstantVol) or model.vol.ou.lam == 0.0:
        zero = McEstimate(0.0, 0.0, 0, cfg.seed)
        sigma = (model.vol.sigma if isinstance(model.vol, ConstantVol)
                 else float(model.vol.vol_fn(model.vol.ou.mean(model.vol.ou.y0, t, s))))
        inv = 1.0 / sigma
        return CurvatureLimit(total=zero, term_nested=zero, term_level_uncorr=inv,
                              term_level_corr=inv, term_correction=zero,
                              term_correction_alt=0.0)

    ou, f = model.vol.ou, model.vol.vol_fn
    nested = _nested_term(model, t, s, cfg)

    batch, sigma_s_samples, corr_samples = _level_components(model, t, s, cfg)
    if isinstance(f, Identity):
        e_sigma = ou.mean(ou.y0, t, s)
        e_sigma_samples = np.full_like(corr_samples, e_sigma)
    else:
        e_sigma_samples = sigma_s_samples
        e_sigma = float(np.mean(sigma_s_samples))
    e_corr = float(np.mean(corr_samples))
    term2 = 1.0 / e_sigma
    term3 = 1.0 / (e_sigma + model.rho * e_corr)

    # 1/sigma_s^3-weighted correction integral (the fourth term)
    y_s = batch.y[:, -1]
    keep, _ = _identity_guard(model.vol, y_s)
    times = batch.grid.times
    decay = np.exp(-ou.kappa * (s - times))
    discount = np.exp(-model.rate * (times - t))
    integrand = discount * np.exp(batch.x) * f(batch.y) * decay
    integral = np.trapezoid(integrand, x=times, axis=1)
    t4_samples = (-model.rho * ou.lam * math.exp(-model.x0)
                  * f.fprime(y_s[keep]) / f(y_s[keep]) ** 2 * integral[keep])
    term4 = McEstimate.from_samples(t4_samples, cfg.seed)
    # diagnostic variant with the scalar correction pulled outside
    inv_f_sq = float(np.mean(1.0 / f(y_s[keep]) ** 2))
    term4_alt = -model.rho * e_corr * inv_f_sq

    total_value = nested.value + term2 - term3 + term4.value
    # delta-method influence of (term2 - term3) through (E sigma, E corr),
    # combined per path with term4 so their covariance is captured
    d_a = -1.0 / e_sigma**2 + 1.0 / (e_sigma + model.rho * e_corr) ** 2
    d_e = model.rho / (e_sigma + model.rho * e_corr) ** 2
    infl = (d_a * (e_sigma_samples[keep] - e_sigma)
            + d_e * (corr_samples[keep] - e_corr)
            + t4_samples)
    n = infl.size
    se_rest = float(infl.std(ddof=1)) / math.sqrt(n)
    total_se = math.hypot(nested.std_error, se_rest)
    total = McEstimate(total_value, total_se, n, cfg.seed)
    return CurvatureLimit(total=total, term_nested=nested, term_level_uncorr=term2,
                          term_level_corr=term3, term_correction=term4,
                          term_correction_alt=term4_alt)


def asymptotics_report(model, t, s, cfg: McConfig):
    """Level, skew and curvature limits from decorrelated runs."""
    return AsymptoticsReport(
        level=level_limit(model, t, s, cfg),
        skew=skew_limit(model, t, s, replace(cfg, seed=cfg.seed + 101)),
        curvature=curvature_limit(model, t, s, replace(cfg, seed=cfg.seed + 202)),
    )


@dataclass(frozen=True)
class ComparisonRow:
    quantity: str
    fd_value: float
    fd_se: float
    limit_value: float
    limit_se: float

    @property
    def z(self):
        se = math.hypot(self.fd_se, self.limit_se)
        gap = self.fd_value - self.limit_value
        return gap / se if se > 0.0 else (0.0 if gap == 0.0 else math.inf)

    @property
    def passed(self):
        return abs(self.z) < 3.0


def compare(model, t, s, gap_list, cfg: McConfig, h=None):
    """Join FD extrapolations from the simulated smile with the closed-form
    limits, one pass/fail row per quantity."""
    study = forward_smile.convergence_study(model, t, s, gap_list, cfg, h=h)
    limits = asymptotics_report(model, t, s, replace(cfg, seed=cfg.seed + 90001))
    rows = [
        ComparisonRow("level", study.level.value, study.level.std_error,
                      limits.level.value, limits.level.std_error),
        ComparisonRow("skew", study.skew.value, study.skew.std_error,
                      limits.skew.value, limits.skew.std_error),
        ComparisonRow("scaled_curvature", study.scaled_curvature.value,
                      study.scaled_curvature.std_error,
                      limits.curvature.total.value, limits.curvature.total.std_error),
    ]
    return rows, study, limits
