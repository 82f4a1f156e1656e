"""Correlated path simulation and the two forward-start pricers.

Paths of the factor Y, the vol sigma = f(Y) and the log-price X are
simulated on a shared grid with counter-based random streams, so a fixed
seed reproduces the batch bit-for-bit regardless of how many workers run
the chunks.  Two pricers operate on a batch: the direct discounted-payoff
estimator and the pathwise decomposition into a randomized Black-Scholes
term plus two correlation corrections weighted by the integrated vol
sensitivity Lambda.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import blackscholes as bs
from .models import ConstantVol, ExtendedSteinStein, ModelSpec

__all__ = [
    "SimGrid",
    "McConfig",
    "McEstimate",
    "PathBatch",
    "PathFunctionals",
    "DecompositionResult",
    "simulate",
    "discounted_payoffs",
    "price_forward_start",
    "path_functionals",
    "price_decomposition",
    "dump_batch_summary",
    "load_batch_summary",
]

BATCH_DUMP_VERSION = 1


@dataclass(frozen=True)
class SimGrid:
    """Strictly increasing node times with the key dates snapped onto nodes."""

    times: np.ndarray
    idx_s: int
    idx_maturity: int

    @classmethod
    def build(cls, t, s, maturity, steps_per_year=400):
        if not t <= s <= maturity:
            raise ValueError(f"need t <= s <= maturity, got {(t, s, maturity)}")
        if maturity <= t:
            raise ValueError("grid must span a positive time interval")
        first = np.linspace(t, s, _n_steps(s - t, steps_per_year) + 1) if s > t else np.array([t])
        if maturity > s:
            second = np.linspace(s, maturity, _n_steps(maturity - s, steps_per_year) + 1)
            times = np.concatenate([first, second[1:]])
        else:
            times = first
        return cls(times=times, idx_s=len(first) - 1, idx_maturity=len(times) - 1)

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def s(self):
        return float(self.times[self.idx_s])

    @property
    def maturity(self):
        return float(self.times[self.idx_maturity])

    @property
    def n_nodes(self):
        return len(self.times)

    def index_of(self, when, tol=1e-10):
        hits = np.nonzero(np.abs(self.times - when) < tol)[0]
        if len(hits) == 0:
            raise ValueError(f"time {when} is not a grid node")
        return int(hits[0])


def _n_steps(span, steps_per_year):
    return max(1, int(math.ceil(span * steps_per_year - 1e-9)))


@dataclass(frozen=True)
class McConfig:
    """Budget and determinism knobs shared by the simulation-driven routines."""

    n_paths: int = 200_000
    steps_per_year: int = 400
    seed: int = 1234
    chunk_size: int = 32_768
    n_workers: int = 1
    exact_ou: bool = False
    # nested-expectation budgets (curvature term 1)
    n_outer: int = 4096
    n_inner: int = 20_000
    n_u_nodes: int = 120

    def __post_init__(self):
        if self.n_paths < 1 or self.chunk_size < 1 or self.n_workers < 1:
            raise ValueError("path counts and worker counts must be >= 1")


@dataclass(frozen=True)
class McEstimate:
    """A Monte Carlo value that always carries its uncertainty."""

    value: float
    std_error: float
    n_paths: int
    seed: int

    def __post_init__(self):
        if not math.isfinite(self.value) or self.std_error < 0.0:
            raise ValueError(f"invalid estimate {self.value} +- {self.std_error}")

    @classmethod
    def from_samples(cls, samples, seed):
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(value=float(samples.mean()), std_error=se, n_paths=n, seed=seed)

    def z_against(self, other):
        """z-score of the difference against another estimate or a constant."""
        if isinstance(other, McEstimate):
            gap = self.value - other.value
            se = math.hypot(self.std_error, other.std_error)
        else:
            gap = self.value - float(other)
            se = self.std_error
        return gap / se if se > 0.0 else (0.0 if gap == 0.0 else math.inf)


@dataclass
class PathBatch:
    """Simulated joint paths of (Y, sigma, X) on a grid.

    ``y`` is None for constant-vol models and ``sigma`` then broadcasts with
    shape (1, n_nodes).  Driving increments are kept only when requested at
    simulation time.
    """

    grid: SimGrid
    model: ModelSpec
    x: np.ndarray
    sigma: np.ndarray
    y: Optional[np.ndarray]
    n_paths: int
    seed: int
    dw: Optional[np.ndarray] = None
    db: Optional[np.ndarray] = None


def _chunk_rng(seed, chunk_index):
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(chunk_index)]))


def _simulate_chunk(model, grid, n_chunk, seed, chunk_index, exact_ou, store_increments):
    rng = _chunk_rng(seed, chunk_index)
    times = grid.times
    n_steps = len(times) - 1
    dt = np.diff(times)
    z = rng.standard_normal((2, n_chunk, n_steps))
    dw = np.sqrt(dt) * z[0]
    db = np.sqrt(dt) * z[1]

    x = np.empty((n_chunk, n_steps + 1))
    x[:, 0] = model.x0
    rho = model.rho
    rho_c = math.sqrt(1.0 - rho * rho)

    if isinstance(model.vol, ConstantVol):
        sig = model.vol.sigma
        drift = (model.rate - 0.5 * sig * sig) * dt
        x[:, 1:] = model.x0 + np.cumsum(drift + sig * (rho * dw + rho_c * db), axis=1)
        sigma = np.full((1, n_steps + 1), sig)
        y = None
    else:
        ou, f = model.vol.ou, model.vol.vol_fn
        y = np.empty((n_chunk, n_steps + 1))
        y[:, 0] = ou.y0
        for i in range(n_steps):
            if exact_ou:
                decay = math.exp(-ou.kappa * dt[i])
                sd = math.sqrt(ou.variance(0.0, dt[i]))
                y[:, i + 1] = ou.m + (y[:, i] - ou.m) * decay + sd * z[0, :, i]
            else:
                y[:, i + 1] = y[:, i] + ou.kappa * (ou.m - y[:, i]) * dt[i] + ou.lam * dw[:, i]
        sigma = f(y)
        sig_left = sigma[:, :-1]
        incr = (model.rate - 0.5 * sig_left**2) * dt + sig_left * (rho * dw + rho_c * db)
        x[:, 1:] = model.x0 + np.cumsum(incr, axis=1)

    if not (np.all(np.isfinite(x)) and (y is None or np.all(np.isfinite(y)))):
        raise FloatingPointError(
            f"non-finite state in chunk {chunk_index} (seed={seed}, n={n_chunk})"
        )
    if not store_increments:
        dw = db = None
    return x, sigma, y, dw, db


def simulate(model, grid, n_paths, seed, *, exact_ou=False, store_increments=False,
             chunk_size=32_768, n_workers=1):
    """Simulate a PathBatch; bit-identical for a fixed seed at any worker count.

    Y is stepped by Euler (default) or by the exact OU transition reusing
    the same normal innovation; X by log-Euler with the left-point vol.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    chunk_sizes = [min(chunk_size, n_paths - i) for i in range(0, n_paths, chunk_size)]

    def run(i):
        return _simulate_chunk(model, grid, chunk_sizes[i], seed, i, exact_ou,
                               store_increments)

    if n_workers > 1 and len(chunk_sizes) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run, range(len(chunk_sizes))))
    else:
        parts = [run(i) for i in range(len(chunk_sizes))]

    x = np.concatenate([p[0] for p in parts])
    if isinstance(model.vol, ConstantVol):
        sigma, y = parts[0][1], None
    else:
        sigma = np.concatenate([p[1] for p in parts])
        y = np.concatenate([p[2] for p in parts])
    dw = np.concatenate([p[3] for p in parts]) if store_increments else None
    db = np.concatenate([p[4] for p in parts]) if store_increments else None
    return PathBatch(grid=grid, model=model, x=x, sigma=sigma, y=y,
                     n_paths=n_paths, seed=seed, dw=dw, db=db)


def _check_contract_on_grid(batch, contract):
    grid = batch.grid
    if abs(contract.t - grid.t0) > 1e-10:
        raise ValueError("contract evaluation time must be the grid start")
    i_s = grid.index_of(contract.s)
    i_T = grid.index_of(contract.maturity)
    if i_s != grid.idx_s or i_T != grid.idx_maturity:
        raise ValueError("contract key dates must be the grid's snapped key dates")
    return i_s, i_T


def discounted_payoffs(batch, contract, alpha=None):
    """Per-path discounted forward-start payoffs (the CRN building block)."""
    i_s, i_T = _check_contract_on_grid(batch, contract)
    if alpha is None:
        alpha = contract.alpha
    r = batch.model.rate
    disc = math.exp(-r * (contract.maturity - contract.t))
    return disc * np.maximum(np.exp(batch.x[:, i_T]) - np.exp(alpha + batch.x[:, i_s]), 0.0)


def price_forward_start(batch, contract, alpha=None):
    """Direct Monte Carlo price: discounted sample mean of the payoff."""
    if batch.n_paths < 1:
        raise ValueError("empty batch")
    return McEstimate.from_samples(discounted_payoffs(batch, contract, alpha), batch.seed)


@dataclass
class PathFunctionals:
    """Per-path functionals feeding the decomposition pricer.

    v_s is the realized vol over [s, T]; ``v_nodes`` extends it to every
    node u in [s, T] (with the limit value sigma_T at u = T);
    ``lam_nodes`` is the integrated future vol-sensitivity Lambda_u on the
    full grid and ``m_nodes`` the strike-adjusted forward.
    """

    v_s: np.ndarray
    v_nodes: np.ndarray
    lam_nodes: np.ndarray
    m_nodes: np.ndarray


def path_functionals(batch, contract):
    i_s, i_T = _check_contract_on_grid(batch, contract)
    grid = batch.grid
    times = grid.times
    model = batch.model
    tail = times[i_s:]  # nodes in [s, T]
    gap = contract.maturity - contract.s

    sig_tail = np.broadcast_to(batch.sigma, (batch.n_paths, grid.n_nodes))[:, i_s:]
    sq = sig_tail**2
    # right cumulative integral R(u) = int_u^T sigma^2
    right_int = cumulative_trapezoid(sq[:, ::-1], x=-tail[::-1], axis=1, initial=0.0)[:, ::-1]
    v_s = np.sqrt(right_int[:, 0] / gap)
    tau_tail = np.maximum(times[i_T] - tail, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        v_nodes = np.sqrt(right_int / np.where(tau_tail > 0.0, tau_tail, 1.0))
    v_nodes[:, -1] = sig_tail[:, -1]

    if isinstance(model.vol, ConstantVol):
        lam = np.zeros((1, grid.n_nodes))
    else:
        ou, f = model.vol.ou, model.vol.vol_fn
        y_tail = batch.y[:, i_s:]
        # Lambda_u = e^{kappa u} * int_{max(u,s)}^T 2 f f'(Y_theta) lam e^{-kappa theta} dtheta
        w = 2.0 * f(y_tail) * f.fprime(y_tail) * ou.lam * np.exp(-ou.kappa * tail)
        j_tail = cumulative_trapezoid(w[:, ::-1], x=-tail[::-1], axis=1, initial=0.0)[:, ::-1]
        lam = np.empty((batch.n_paths, grid.n_nodes))
        lam[:, i_s:] = j_tail
        lam[:, :i_s] = j_tail[:, [0]]
        lam *= np.exp(ou.kappa * times)

    alpha, r = contract.alpha, model.rate
    m = np.empty((batch.n_paths, grid.n_nodes))
    m[:, : i_s + 1] = np.exp(alpha + r * (contract.s - times[: i_s + 1]) + batch.x[:, : i_s + 1])
    m[:, i_s + 1:] = np.exp(alpha + batch.x[:, [i_s]])
    return PathFunctionals(v_s=v_s, v_nodes=v_nodes, lam_nodes=lam, m_nodes=m)


@dataclass(frozen=True)
class DecompositionResult:
    """Decomposition price with its term-by-term diagnostics."""

    total: McEstimate
    bs_term: McEstimate
    h_term: McEstimate
    g_term: McEstimate


def price_decomposition(batch, contract, functionals=None):
    """Pathwise decomposition price: randomized-BS term plus the two
    correlation corrections (the H-weighted integral over [s, T] and the
    G-weighted integral over [t, s])."""
    i_s, i_T = _check_contract_on_grid(batch, contract)
    grid, model = batch.grid, batch.model
    times = grid.times
    fn = functionals if functionals is not None else path_functionals(batch, contract)
    if np.any(fn.v_s <= 0.0):
        raise ValueError("degenerate realized vol v_s <= 0 in batch")

    gap = contract.maturity - contract.s
    r, rho = model.rate, model.rho
    strike = math.exp(contract.alpha)
    x_t = batch.x[:, 0]

    bs_term = np.exp(x_t) * bs.bs_call(gap, 0.0, strike, fn.v_s, r)

    if isinstance(model.vol, ConstantVol) or rho == 0.0:
        h_term = np.zeros_like(bs_term)
        g_term = np.zeros_like(bs_term)
    else:
        sig_full = np.broadcast_to(batch.sigma, (batch.n_paths, grid.n_nodes))
        # [s, T] leg: integrand vanishes at u = T (Lambda_T = 0 faster than H blows up)
        tail = times[i_s:i_T]
        tau_tail = times[i_T] - tail
        h_vals = bs.h_function(tau_tail, batch.x[:, i_s:i_T], fn.m_nodes[:, i_s:i_T],
                               fn.v_nodes[:, : i_T - i_s], r)
        integrand_h = np.zeros((batch.n_paths, i_T - i_s + 1))
        integrand_h[:, :-1] = (np.exp(-r * (tail - contract.t)) * h_vals
                               * sig_full[:, i_s:i_T] * fn.lam_nodes[:, i_s:i_T])
        h_term = 0.5 * rho * np.trapezoid(integrand_h, x=times[i_s:], axis=1)

        # [t, s] leg
        head = times[: i_s + 1]
        integrand_g = (np.exp(-r * (head - contract.t)) * np.exp(batch.x[:, : i_s + 1])
                       * sig_full[:, : i_s + 1] * fn.lam_nodes[:, : i_s + 1])
        g_weight = bs.g_function(gap, 0.0, strike, fn.v_s, r)
        g_term = 0.5 * rho * g_weight * np.trapezoid(integrand_g, x=head, axis=1)

    total = bs_term + h_term + g_term
    return DecompositionResult(
        total=McEstimate.from_samples(total, batch.seed),
        bs_term=McEstimate.from_samples(bs_term, batch.seed),
        h_term=McEstimate.from_samples(h_term, batch.seed),
        g_term=McEstimate.from_samples(g_term, batch.seed),
    )


def model_hash(model):
    """Stable short hash of a model definition, for dump headers."""
    return hashlib.sha256(repr(model).encode()).hexdigest()[:16]


def dump_batch_summary(batch, path):
    """Binary dump of per-path batch summaries with a versioned header."""
    i_s, i_T = batch.grid.idx_s, batch.grid.idx_maturity
    header = json.dumps({
        "version": BATCH_DUMP_VERSION,
        "seed": int(batch.seed),
        "n_paths": int(batch.n_paths),
        "grid": {"t0": batch.grid.t0, "s": batch.grid.s,
                 "maturity": batch.grid.maturity, "n_nodes": batch.grid.n_nodes},
        "model_hash": model_hash(batch.model),
    })
    arrays = {
        "header": np.frombuffer(header.encode(), dtype=np.uint8),
        "x_s": batch.x[:, i_s],
        "x_maturity": batch.x[:, i_T],
    }
    if batch.y is not None:
        arrays["y_s"] = batch.y[:, i_s]
    np.savez(path, **arrays)


def load_batch_summary(path):
    """Load a batch summary dump; rejects unknown versions."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header["version"] != BATCH_DUMP_VERSION:
            raise ValueError(f"unsupported batch dump version {header['version']}")
        arrays = {k: data[k] for k in data.files if k != "header"}
    return header, arrays
