"""Bound terms, parameter schedules, exact approximation error and slope fits.

The bound terms are reported raw: the inequalities they come from hide
unknown constants, so a :class:`BoundReport` describes the shape of the
excess risk, not an upper bound on a measured value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import StepSizeError
from .model import SourceVector, Spectrum, effective_dimension
from .spectral import FilterParams, tail_residual

Variant = Literal["a", "b", "c"]
TAIL_K = 3.0


def approx_error(spectrum: Spectrum, source: SourceVector, p: FilterParams) -> float:
    """``||Sigma^(1/2) R_{S,T}(Sigma) w*||^2``, exact on the spectrum."""
    ev = spectrum.eigenvalues
    res = tail_residual(ev, p)
    return float(np.sum(ev * (res * source.coeffs) ** 2))


@dataclass(frozen=True)
class BoundReport:
    approx_term: float
    sample_term: float
    computational_term: float
    alpha: float
    sample_size_ok: bool

    @property
    def total(self) -> float:
        return self.approx_term + self.sample_term + self.computational_term


def bound_terms(
    spectrum: Spectrum,
    source: SourceVector,
    p: FilterParams,
    b: int,
    n: int,
    alpha: float,
) -> BoundReport:
    """``A(L)``, ``N(1/(gamma L))/n`` and ``gamma Tr[Sigma^alpha] / (b (gamma L)^(1-alpha))``.

    ``sample_size_ok`` reports ``n >= 16 kappa^2 gamma L max(1, N(1/(gamma L)))``;
    it is informational and never raises.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if b < 1 or n < 1:
        raise ValueError("b and n must be >= 1")
    kappa_sq = spectrum.kappa_sq
    if p.gamma * kappa_sq >= 0.25:
        raise StepSizeError(f"gamma * kappa^2 = {p.gamma * kappa_sq!r} must be < 1/4")
    gl = p.gamma * p.L
    eff = effective_dimension(spectrum, 1.0 / gl)
    return BoundReport(
        approx_term=approx_error(spectrum, source, p),
        sample_term=eff / n,
        computational_term=p.gamma * spectrum.trace_power(alpha) / (b * gl ** (1 - alpha)),
        alpha=alpha,
        sample_size_ok=n >= 16 * kappa_sq * gl * max(1.0, eff),
    )


def _round_half_up(x: float) -> int:
    return max(1, math.floor(x + 0.5))


@dataclass(frozen=True)
class ScheduleChoice:
    variant: Variant
    n: int
    r: float
    nu: float
    gamma: float
    b: int
    T: int
    S: int
    K: float

    @property
    def L(self) -> int:
        return self.T - self.S

    @property
    def rate_exponent(self) -> float:
        """Predicted decay ``n**(-rate_exponent)`` of the excess risk."""
        return (2 * self.r + 1) / (2 * self.r + 1 + self.nu)

    @property
    def passes(self) -> int:
        return math.ceil(self.b * self.T / self.n)

    @property
    def filter_params(self) -> FilterParams:
        return FilterParams(self.gamma, self.T, self.S)


def schedule(variant: Variant, n: int, r: float, nu: float, kappa_sq: float) -> ScheduleChoice:
    """Step-size, batch size and iteration window for one of the three optimal settings.

    ``a``: ``b = 1``, one pass (``T = n``), ``gamma = n**(-(2r+nu)/(2r+1+nu))``.
    ``b``: ``b = n**((2r+nu)/(2r+1+nu))``, ``T = n**(1/(2r+1+nu))``, constant ``gamma``.
    ``c``: ``b = n``, same ``T`` and ``gamma`` as ``b``.

    The constant step is 1.  Any step with ``gamma kappa^2 >= 1/4`` is clipped
    to ``0.9 / (4 kappa^2)``.
    ``S = 0`` for ``r <= 1/2``, otherwise ``S = floor(T/2)`` which satisfies
    both window constraints with ``K = 3``.  Counts round half up, floor 1.
    """
    if variant not in ("a", "b", "c"):
        raise ValueError(f"variant must be 'a', 'b' or 'c', got {variant!r}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not (r >= 0 and math.isfinite(r)):
        raise ValueError(f"r must be finite and >= 0, got {r}")
    if not 0 < nu <= 1:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    if not kappa_sq > 0:
        raise ValueError("kappa_sq must be > 0")

    denom = 2 * r + 1 + nu
    if variant == "a":
        gamma = n ** (-(2 * r + nu) / denom)
        b = 1
        T = n
    else:
        gamma = 1.0
        b = _round_half_up(n ** ((2 * r + nu) / denom)) if variant == "b" else n
        T = _round_half_up(n ** (1 / denom))
    if gamma * kappa_sq >= 0.25:
        gamma = 0.9 / (4 * kappa_sq)
    if r <= 0.5 or T < 2:
        S, K = 0, 1.0
    else:
        S, K = T // 2, TAIL_K
    return ScheduleChoice(variant, n, r, nu, gamma, b, T, S, K)


def saturation_curves(
    spectrum: Spectrum,
    r: float,
    gamma: float,
    T_grid: Iterable[int],
    mode: Literal["uniform", "tail_half"],
    norm: Literal["vector", "operator"] = "vector",
) -> list[tuple[float, float]]:
    """``(gamma T, risk)`` pairs for uniform (``S = 0``) or half-tail (``S = T//2``) averaging.

    ``norm="vector"`` evaluates ``||Sigma^(1/2) R_{S,T}(Sigma) Sigma^r e||^2`` with
    ``e`` all ones; ``norm="operator"`` the squared operator norm
    ``max_i sigma_i^(2r+1) R_{S,T}(sigma_i)^2``.
    """
    if mode not in ("uniform", "tail_half"):
        raise ValueError(f"mode must be 'uniform' or 'tail_half', got {mode!r}")
    if norm not in ("vector", "operator"):
        raise ValueError(f"norm must be 'vector' or 'operator', got {norm!r}")
    ev = spectrum.eigenvalues
    weights = ev ** (2 * r + 1)
    out = []
    prev = 0
    for T in T_grid:
        if T <= prev:
            raise ValueError("T grid must be increasing")
        prev = T
        p = FilterParams(gamma, T, 0 if mode == "uniform" else T // 2)
        terms = weights * tail_residual(ev, p) ** 2
        risk = float(np.sum(terms)) if norm == "vector" else float(np.max(terms))
        out.append((gamma * T, risk))
    return out


def slope_fit(points: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("need at least 2 (x, y) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("coordinates must be positive and finite")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("x values must not all coincide")
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))
