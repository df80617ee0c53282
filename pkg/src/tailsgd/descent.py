"""Population GD, batch GD and mini-batch multipass SGD with tail averaging.

All iterations start at zero and use the descent step
``w <- w - gamma * (Sigma_b w - h_b)`` where ``(Sigma_b, h_b)`` are the
second moments of the batch in use (the population, the full sample, or a
mini-batch drawn uniformly with replacement).
"""
from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, StepSizeError
from .model import Dataset, EmpiricalMoments, Problem, Spectrum, batch_moments, empirical_moments
from .spectral import FilterParams, tail_filter, tail_filter_psd
from .streams import derive_seed, make_rng

SAMPLING = "uniform-with-replacement"
DIVERGENCE_NORM = 1e12

IterateHook = Callable[[int, np.ndarray], None]
# sampler(rng, n, b, T) -> integer array of shape (T, batch); row t-1 feeds step t
Sampler = Callable[[np.random.Generator, int, int, int], np.ndarray]


@dataclass(frozen=True)
class SgdConfig:
    gamma: float
    batch_size: int
    T: int
    S: int = 0
    seed: int = 0
    sampling: str = SAMPLING

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma!r}")
        if operator.index(self.batch_size) < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.sampling != SAMPLING:
            raise ValueError(f"only {SAMPLING!r} sampling is supported")
        # delegates T/S validation
        self.filter_params

    @property
    def filter_params(self) -> FilterParams:
        return FilterParams(self.gamma, self.T, self.S)

    def passes(self, n: int) -> int:
        return math.ceil(self.batch_size * self.T / n)

    def check_step(self, spectrum: Spectrum) -> None:
        if self.gamma * spectrum.sigma_max >= 1:
            raise StepSizeError(f"gamma * sigma_1 = {self.gamma * spectrum.sigma_max!r} >= 1")


class TailAverager:
    """Running mean of the iterates ``S+1..T``; earlier and later ones are ignored."""

    def __init__(self, S: int, T: int, d: int):
        FilterParams(1.0, T, S)
        self.S = S
        self.T = T
        self.running_sum = np.zeros(d)
        self.count = 0
        self._last_t = 0

    def feed(self, t: int, w: np.ndarray) -> None:
        if t <= self._last_t:
            raise ValueError(f"iterates must be fed in increasing t (got {t} after {self._last_t})")
        self._last_t = t
        if self.S < t <= self.T:
            self.running_sum += w
            self.count += 1

    def value(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no iterate inside the averaging window yet")
        return self.running_sum / self.count


def uniform_sampler(rng: np.random.Generator, n: int, b: int, T: int) -> np.ndarray:
    """All ``b*T`` indices in one draw, reshaped so row ``t-1`` is the batch of step ``t``."""
    return rng.integers(0, n, size=(T, b))


def full_sweep_sampler(rng: np.random.Generator, n: int, b: int, T: int) -> np.ndarray:
    """Deterministic batch of every sample at every step; turns SGD into batch GD."""
    return np.broadcast_to(np.arange(n), (T, n))


def _gd_step(w: np.ndarray, gamma: float, sigma: np.ndarray, h: np.ndarray) -> np.ndarray:
    return w - gamma * (sigma @ w - h)


def population_gd_tail_average(problem: Problem, p: FilterParams) -> np.ndarray:
    """``G_{S,T}(Sigma) Sigma w*``."""
    return tail_filter(problem.spectrum.eigenvalues, p) * problem.h


def population_gd_recursion(problem: Problem, p: FilterParams) -> np.ndarray:
    """Same quantity by running ``u_t = (I - gamma Sigma) u_{t-1} + gamma h`` explicitly."""
    ev = problem.spectrum.eigenvalues
    if p.gamma * ev[0] >= 1:
        raise StepSizeError("gamma * sigma_1 must be < 1")
    u = np.zeros_like(ev)
    avg = TailAverager(p.S, p.T, ev.size)
    for t in range(1, p.T + 1):
        u = u - p.gamma * (ev * u - problem.h)
        avg.feed(t, u)
    return avg.value()


def _check_batch_step(moments: EmpiricalMoments, gamma: float) -> None:
    top = moments.top_eigenvalue()
    if gamma * top >= 1:
        raise StepSizeError(f"gamma * sigma_max(Sigma_hat) = {gamma * top!r} >= 1")


def batch_gd_run(moments: EmpiricalMoments, p: FilterParams, on_iterate: Optional[IterateHook] = None) -> np.ndarray:
    """Tail average of ``v_{t+1} = v_t - gamma (Sigma_hat v_t - h_hat)`` from ``v_0 = 0``.

    ``on_iterate(t, v_t)`` is called after every step when given.
    """
    _check_batch_step(moments, p.gamma)
    v = np.zeros_like(moments.h_hat)
    avg = TailAverager(p.S, p.T, v.size)
    for t in range(1, p.T + 1):
        v = _gd_step(v, p.gamma, moments.sigma_hat, moments.h_hat)
        avg.feed(t, v)
        if on_iterate is not None:
            on_iterate(t, v)
    return avg.value()


def batch_gd_spectral(moments: EmpiricalMoments, p: FilterParams) -> np.ndarray:
    """``G_{S,T}(Sigma_hat) h_hat`` through the eigendecomposition of ``Sigma_hat``."""
    lam, U = np.linalg.eigh(moments.sigma_hat)
    if p.gamma * lam[-1] >= 1:
        raise StepSizeError(f"gamma * sigma_max(Sigma_hat) = {p.gamma * lam[-1]!r} >= 1")
    return U @ (tail_filter_psd(lam, p) * (U.T @ moments.h_hat))


def minibatch_sgd_run(
    dataset: Dataset,
    config: SgdConfig,
    *,
    sampler: Sampler = uniform_sampler,
    on_iterate: Optional[IterateHook] = None,
) -> np.ndarray:
    """Tail-averaged mini-batch SGD; deterministic given ``(dataset, config)``.

    Raises :class:`DivergenceError` as soon as ``||w_t||`` is non-finite or
    exceeds ``DIVERGENCE_NORM``.
    """
    if dataset.n == 0:
        raise ValueError("empty dataset")
    rng = make_rng(config.seed, "sgd")
    batches = sampler(rng, dataset.n, config.batch_size, config.T)
    xs, ys = dataset.xs, dataset.ys
    w = np.zeros(dataset.d)
    avg = TailAverager(config.S, config.T, dataset.d)
    for t in range(1, config.T + 1):
        rows = batches[t - 1]
        sigma_t, h_t = batch_moments(xs[rows], ys[rows])
        w = _gd_step(w, config.gamma, sigma_t, h_t)
        norm = math.sqrt(float(np.dot(w, w)))
        if not norm <= DIVERGENCE_NORM:
            raise DivergenceError(t, norm)
        avg.feed(t, w)
        if on_iterate is not None:
            on_iterate(t, w)
    return avg.value()


def computational_variance_samples(
    dataset: Dataset,
    spectrum: Spectrum,
    config: SgdConfig,
    replicates: int,
    master_seed: int,
    *,
    sampler: Sampler = uniform_sampler,
) -> np.ndarray:
    """Per-replicate ``||Sigma^(1/2) (w_bar - v_bar)||^2`` on a fixed dataset.

    Replicate ``i`` runs SGD with seed ``derive_seed(master_seed, "computational-variance", i)``.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    v_bar = batch_gd_run(empirical_moments(dataset), config.filter_params)
    ev = spectrum.eigenvalues
    out = np.empty(replicates)
    for i in range(replicates):
        cfg = _with_seed(config, derive_seed(master_seed, "computational-variance", i))
        diff = minibatch_sgd_run(dataset, cfg, sampler=sampler) - v_bar
        out[i] = float(np.dot(ev, diff * diff))
    return out


def computational_variance(
    dataset: Dataset,
    spectrum: Spectrum,
    config: SgdConfig,
    replicates: int,
    master_seed: int,
    *,
    sampler: Sampler = uniform_sampler,
) -> float:
    return float(np.mean(computational_variance_samples(dataset, spectrum, config, replicates, master_seed, sampler=sampler)))


def _with_seed(config: SgdConfig, seed: int) -> SgdConfig:
    return SgdConfig(config.gamma, config.batch_size, config.T, config.S, seed, config.sampling)


@dataclass(frozen=True)
class ProbeResult:
    empirical: float
    stderr: float
    bound: float
    kappa_sq: float

    def within_bound(self, n_stderr: float = 3.0) -> bool:
        return self.empirical <= self.bound + n_stderr * self.stderr


def probe_kappa_sq(H: Spectrum, perturbation_scale: float) -> float:
    """Smallest admissible ``kappa^2`` for the diagonal perturbation family.

    ``E[H_t^2] = (1 + c^2) H^2 <= (1 + c^2) sigma_1 H``; the trace is also
    included so the value never drops below the operational ``kappa^2``.
    """
    return max(H.kappa_sq, (1 + perturbation_scale**2) * H.sigma_max)


def probe_bound(H: Spectrum, noise_var: float, p: FilterParams, u: float, alpha: float) -> float:
    upsilon = 1 + (p.S + 1) / p.L
    return 16 * noise_var * H.trace_power(alpha) * p.gamma ** (1 - u + alpha) * p.L ** (alpha - u) * upsilon


def recursion_probe(
    H: Spectrum,
    noise_var: float,
    perturbation_scale: float,
    p: FilterParams,
    u: float,
    alpha: float,
    replicates: int,
    seed: int,
) -> ProbeResult:
    """Monte-Carlo ``E||H^(u/2) mu_bar||^2`` for ``mu_t = (I - gamma H_t) mu_{t-1} + gamma xi_t``.

    ``H_t = H * (1 + c * eps_t)`` with Rademacher ``eps_t`` (coordinatewise) and
    ``xi_t = sqrt(noise_var * H) * z_t`` with standard normal ``z_t``, so
    ``E[H_t] = H`` and ``E[xi xi^T] = noise_var * H``.  Per step, the
    Rademacher signs are drawn before the normals, both as ``(replicates, d)``.
    """
    if not 0 <= perturbation_scale <= 1:
        raise ValueError("perturbation_scale must lie in [0, 1] to keep H_t positive")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0 <= u <= 1 + alpha:
        raise ValueError(f"u must lie in [0, 1 + alpha], got {u}")
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    if replicates < 2:
        raise ValueError("need at least 2 replicates for a standard error")
    kappa_sq = probe_kappa_sq(H, perturbation_scale)
    if p.gamma * kappa_sq > 0.25:
        raise StepSizeError(f"gamma * kappa^2 = {p.gamma * kappa_sq!r} > 1/4")

    rng = make_rng(seed, "recursion-probe")
    h = H.eigenvalues
    noise_scale = np.sqrt(noise_var * h)
    mu = np.zeros((replicates, h.size))
    acc = np.zeros_like(mu)
    for t in range(1, p.T + 1):
        eps = rng.integers(0, 2, size=mu.shape) * 2.0 - 1.0
        z = rng.standard_normal(mu.shape)
        h_t = h * (1.0 + perturbation_scale * eps)
        mu = mu - p.gamma * h_t * mu + p.gamma * noise_scale * z
        if t > p.S:
            acc += mu
    mu_bar = acc / p.L
    moments = (h**u * mu_bar**2).sum(axis=1)
    return ProbeResult(
        empirical=float(moments.mean()),
        stderr=float(moments.std(ddof=1) / math.sqrt(replicates)),
        bound=probe_bound(H, noise_var, p, u, alpha),
        kappa_sq=kappa_sq,
    )
