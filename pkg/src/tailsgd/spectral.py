"""Spectral filters of constant-step gradient descent and of its tail average.

All functions act on eigenvalues, so a filter applied to a diagonal covariance
is a componentwise product.  Writing ``x = gamma * sigma`` and ``q = 1 - x``:

* ``g_t(sigma) = gamma * sum_{k<t} q**k = (1 - q**t) / sigma``
* ``r_t(sigma) = q**t``
* ``G_{S,T}(sigma) = mean(g_t for t in S+1..T)``
* ``R_{S,T}(sigma) = 1 - sigma * G_{S,T}(sigma) = q**(S+1) * (1 - q**L) / (L * x)``

Powers are evaluated as ``exp(t * log1p(-x))``.  The tail residual has a
removable singularity at ``x = 0``; below ``x * (T + 1) < SERIES_CUTOFF`` both
``R`` and ``G`` are taken from the power series in ``x`` whose coefficients are
exact binomial differences, which also avoids the cancellation in ``1 - R``.
"""
from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Literal

import numpy as np

from .errors import StepSizeError

SERIES_CUTOFF = 1e-3
SERIES_TERMS = 6

FilterKind = Literal["gd_filter", "tail_filter", "gd_residual", "tail_residual"]


@dataclass(frozen=True)
class FilterParams:
    """Step-size ``gamma``, iteration count ``T`` and tail start ``S``.

    The tail average runs over iterates ``S+1..T``, so ``L = T - S >= 1``.
    """

    gamma: float
    T: int
    S: int = 0

    def __post_init__(self):
        gamma = float(self.gamma)
        if not (math.isfinite(gamma) and gamma > 0):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma!r}")
        T = operator.index(self.T)
        S = operator.index(self.S)
        if T < 1:
            raise ValueError(f"T must be >= 1, got {T}")
        if not 0 <= S <= T - 1:
            raise ValueError(f"S must lie in [0, T-1] = [0, {T - 1}], got {S}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "S", S)

    @property
    def L(self) -> int:
        return self.T - self.S


@dataclass(frozen=True)
class SpectralCurve:
    sigmas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        sigmas = np.asarray(self.sigmas, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if sigmas.shape != values.shape:
            raise ValueError("sigmas and values must have the same length")
        if np.any(sigmas <= 0) or not np.all(np.isfinite(values)):
            raise ValueError("sigmas must be positive and values finite")
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "values", values)

    def sup(self, power: float = 0.0) -> float:
        """Grid maximum of ``|sigma**power * value|``."""
        return float(np.max(np.abs(self.sigmas**power * self.values)))


def _scaled_steps(sigma, gamma: float) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise StepSizeError("eigenvalues must be positive and finite")
    x = gamma * s
    if np.any(x >= 1):
        raise StepSizeError(f"gamma * sigma must be < 1 (max is {float(np.max(x))!r})")
    return x


def _shape_like(values: np.ndarray, like):
    return float(values[0]) if np.ndim(like) == 0 else values


@lru_cache(maxsize=256)
def _series_coeffs(S: int, T: int) -> np.ndarray:
    # (1 - R)/x = sum_{k>=2} (-1)^k [C(T+1,k) - C(S+1,k)] / L * x^(k-2)
    L = T - S
    coeffs = [
        (-1) ** k * float(Fraction(math.comb(T + 1, k) - math.comb(S + 1, k), L))
        for k in range(2, 2 + SERIES_TERMS)
    ]
    return np.array(coeffs)


def _window(x: np.ndarray, S: int, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(R_{S,T}, G_{S,T} / gamma)`` as functions of ``x = gamma*sigma`` in ``[0, 1)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    L = T - S
    resid = np.empty_like(x)
    scaled = np.empty_like(x)
    small = x * (T + 1) < SERIES_CUTOFF
    if np.any(small):
        xs = x[small]
        d = np.polyval(_series_coeffs(S, T)[::-1], xs)
        scaled[small] = d
        resid[small] = 1.0 - xs * d
    big = ~small
    if np.any(big):
        xb = x[big]
        ell = np.log1p(-xb)
        rb = np.exp((S + 1) * ell) * -np.expm1(L * ell) / (L * xb)
        resid[big] = rb
        scaled[big] = (1.0 - rb) / xb
    return resid, scaled


def gd_filter(sigma, p: FilterParams, t: int):
    """``g_t(sigma)``, equal to ``gamma * t`` in the limit ``sigma -> 0``."""
    t = operator.index(t)
    if not 1 <= t <= p.T:
        raise ValueError(f"t must lie in [1, T={p.T}], got {t}")
    x = _scaled_steps(sigma, p.gamma)
    _, scaled = _window(x, t - 1, t)
    return _shape_like(p.gamma * scaled, sigma)


def gd_residual(sigma, p: FilterParams, t: int):
    """``r_t(sigma) = (1 - gamma*sigma)**t``; ``t = 0`` gives the identity."""
    t = operator.index(t)
    if not 0 <= t <= p.T:
        raise ValueError(f"t must lie in [0, T={p.T}], got {t}")
    x = _scaled_steps(sigma, p.gamma)
    return _shape_like(np.exp(t * np.log1p(-np.atleast_1d(x))), sigma)


def tail_filter(sigma, p: FilterParams):
    x = _scaled_steps(sigma, p.gamma)
    _, scaled = _window(x, p.S, p.T)
    return _shape_like(p.gamma * scaled, sigma)


def tail_residual(sigma, p: FilterParams):
    x = _scaled_steps(sigma, p.gamma)
    resid, _ = _window(x, p.S, p.T)
    return _shape_like(resid, sigma)


def tail_filter_psd(eigenvalues, p: FilterParams) -> np.ndarray:
    """``G_{S,T}`` on a numerically PSD spectrum; entries ``<= 0`` use the ``sigma -> 0`` limit."""
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    x = p.gamma * lam
    if np.any(x >= 1):
        raise StepSizeError(f"gamma * sigma_max must be < 1 (got {float(np.max(x))!r})")
    _, scaled = _window(x, p.S, p.T)
    return p.gamma * scaled


_KINDS = {
    "gd_filter": gd_filter,
    "gd_residual": gd_residual,
    "tail_filter": tail_filter,
    "tail_residual": tail_residual,
}


def evaluate(kind: FilterKind, sigma, p: FilterParams, t: int | None = None):
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown filter kind {kind!r}; expected one of {sorted(_KINDS)}") from None
    if kind.startswith("gd_"):
        if t is None:
            raise ValueError(f"{kind} needs an iteration index t")
        return fn(sigma, p, t)
    return fn(sigma, p)


def curve(kind: FilterKind, sigmas, p: FilterParams, t: int | None = None) -> SpectralCurve:
    sigmas = np.asarray(sigmas, dtype=float)
    return SpectralCurve(sigmas, np.atleast_1d(evaluate(kind, sigmas, p, t)))


def apply_filter(spectrum, coeffs, kind: FilterKind, p: FilterParams, t: int | None = None) -> np.ndarray:
    """Multiply eigenbasis coefficients by the scalar filter ``kind`` at each eigenvalue."""
    sigmas = np.asarray(getattr(spectrum, "eigenvalues", spectrum), dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != sigmas.shape:
        raise ValueError(f"length mismatch: {coeffs.shape} coefficients for {sigmas.shape} eigenvalues")
    return np.atleast_1d(evaluate(kind, sigmas, p, t)) * coeffs


def minimal_k(p: FilterParams) -> float:
    """Smallest ``K >= 1`` with ``S <= (K-1)/(K+1) * T``."""
    return max(1.0, (p.T + p.S) / p.L)


def _check_lower_window(p: FilterParams, K: float) -> None:
    if K < 1 or p.S * (K + 1) > (K - 1) * p.T * (1 + 1e-12):
        raise ValueError(f"need S <= (K-1)/(K+1) T; got S={p.S}, T={p.T}, K={K}")


def filter_sup_gap(p: FilterParams, u: float, sigma_grid, K: float | None = None) -> tuple[float, float]:
    """Return ``(observed_sup, bound)`` for ``sup |sigma**u G_{S,T}| <= K gamma**(1-u) L**(1-u)``."""
    if not 0 <= u <= 1:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    K = minimal_k(p) if K is None else float(K)
    _check_lower_window(p, K)
    observed = curve("tail_filter", sigma_grid, p).sup(u)
    bound = K * p.gamma ** (1 - u) * p.L ** (1 - u)
    return observed, bound


def residual_constant(u: float) -> float:
    """Constant for the ``u > 1`` residual bound.

    ``x**(u-1) * exp(-(S+1) x)`` peaks at ``((u-1)/e)**(u-1) * (S+1)**(1-u)``,
    which bounds ``sup |sigma**u R_{S,T}| * gamma**u * L / (S+1)**(1-u)`` for
    every window.  A brute-force calibration over windows never exceeds it
    (see the tests), so the analytic value is frozen here.
    """
    if u <= 1:
        return 1.0
    return ((u - 1) / math.e) ** (u - 1)


def residual_sup_gap(p: FilterParams, u: float, sigma_grid, K: float | None = None) -> tuple[float, float]:
    """Grid sup of ``|sigma**u R_{S,T}|`` and the matching bound.

    ``u <= 1``: ``(gamma L)**(-u)``.  ``1 < u <= 3``: ``2 C_u gamma**(-u) K**2 L**(-u)``,
    valid in the tail regime ``S <= (K-1)/(K+1) T`` and ``T <= (K+1) S``.
    """
    if u < 0:
        raise ValueError(f"u must be >= 0, got {u}")
    observed = curve("tail_residual", sigma_grid, p).sup(u)
    if u <= 1:
        return observed, (p.gamma * p.L) ** (-u)
    if u > 3:
        raise ValueError("the K**2 form of the residual bound only holds for u <= 3")
    if p.S == 0:
        raise ValueError("u > 1 needs a tail window (S > 0)")
    K = max(minimal_k(p), p.T / p.S - 1) if K is None else float(K)
    _check_lower_window(p, K)
    if p.T > (K + 1) * p.S:
        raise ValueError(f"need T <= (K+1) S; got S={p.S}, T={p.T}, K={K}")
    bound = 2 * residual_constant(u) * p.gamma ** (-u) * K**2 * p.L ** (-u)
    return observed, bound
