"""Least-squares problem on a diagonal covariance, data generation and risk.

Everything is expressed in the eigenbasis of the covariance: a covariate is a
vector of independent ``N(0, sigma_i)`` coordinates.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .streams import GENERATOR_ID, make_rng


@dataclass(frozen=True)
class Spectrum:
    """Nonincreasing positive eigenvalues of the covariance.

    ``kappa_sq`` is the trace, i.e. ``E||X||^2``.  Gaussian covariates are not
    bounded, so the trace stands in for the almost-sure bound in every
    step-size guard.
    """

    eigenvalues: np.ndarray
    decay_nu: float | None = None

    def __post_init__(self):
        ev = np.array(self.eigenvalues, dtype=float).reshape(-1)
        if ev.size == 0:
            raise ValueError("spectrum must be nonempty")
        if not np.all(np.isfinite(ev)) or np.any(ev <= 0):
            raise ValueError("eigenvalues must be positive and finite")
        if np.any(np.diff(ev) > 0):
            raise ValueError("eigenvalues must be nonincreasing")
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    def __len__(self) -> int:
        return self.eigenvalues.size

    @property
    def d(self) -> int:
        return self.eigenvalues.size

    @property
    def kappa_sq(self) -> float:
        return float(np.sum(self.eigenvalues))

    @property
    def sigma_max(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def sigma_min(self) -> float:
        return float(self.eigenvalues[-1])

    def trace_power(self, alpha: float) -> float:
        return float(np.sum(self.eigenvalues**alpha))


@dataclass(frozen=True)
class SourceVector:
    """Coordinates of ``w* = Sigma**r v*`` with ``||v*|| <= R``."""

    coeffs: np.ndarray
    r: float
    R: float

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if not np.all(np.isfinite(c)):
            raise ValueError("source coefficients must be finite")
        if self.r < 0:
            raise ValueError("smoothness r must be >= 0")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def base(self, spectrum: Spectrum) -> np.ndarray:
        """Recover ``v*`` from ``w*``."""
        return self.coeffs / spectrum.eigenvalues**self.r


@dataclass(frozen=True)
class Problem:
    spectrum: Spectrum
    source: SourceVector
    noise_std: float = 1.0
    # |Y| <= M cannot hold with Gaussian noise; kept only as metadata.
    label_bound_M: float | None = None

    def __post_init__(self):
        if len(self.source.coeffs) != len(self.spectrum):
            raise ValueError("spectrum and source lengths differ")
        if not (self.noise_std >= 0 and math.isfinite(self.noise_std)):
            raise ValueError("noise_std must be finite and >= 0")

    @property
    def d(self) -> int:
        return self.spectrum.d

    @property
    def w_star(self) -> np.ndarray:
        return self.source.coeffs

    @property
    def h(self) -> np.ndarray:
        """``E[XY] = Sigma w*``."""
        return self.spectrum.eigenvalues * self.source.coeffs


@dataclass(frozen=True)
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    seed: int
    generator_id: str = GENERATOR_ID

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.ndim != 2 or ys.shape != (xs.shape[0],):
            raise ValueError(f"inconsistent shapes xs={xs.shape}, ys={ys.shape}")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sample_index", *(f"x_{i + 1}" for i in range(self.d)), "y"])
            for j, (x, y) in enumerate(zip(self.xs, self.ys)):
                writer.writerow([j, *map(repr, x.tolist()), repr(float(y))])


@dataclass(frozen=True)
class EmpiricalMoments:
    sigma_hat: np.ndarray
    h_hat: np.ndarray
    n: int = field(default=0)

    def top_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.sigma_hat)[-1])


def make_spectrum(d: int, nu: float) -> Spectrum:
    """Polynomially decaying spectrum ``sigma_i = i**(-1/nu)``, ``i = 1..d``."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if not 0 < nu <= 1:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    return Spectrum(np.arange(1, d + 1, dtype=float) ** (-1.0 / nu), decay_nu=nu)


def make_source(spectrum: Spectrum, r: float) -> SourceVector:
    """``w* = Sigma**r e`` with ``e`` the all-ones vector, so ``R = sqrt(d)``."""
    if not (r >= 0 and math.isfinite(r)):
        raise ValueError(f"r must be finite and >= 0, got {r}")
    return SourceVector(spectrum.eigenvalues**r, r=r, R=math.sqrt(spectrum.d))


def make_problem(d: int, nu: float, r: float, noise_std: float = 1.0) -> Problem:
    spectrum = make_spectrum(d, nu)
    return Problem(spectrum, make_source(spectrum, r), noise_std)


def sample_dataset(problem: Problem, n: int, seed: int) -> Dataset:
    """Draw ``n`` pairs ``(x, <w*, x> + noise_std * z)``.

    Draw order from the ``"dataset"`` stream: the ``n x d`` standard normals
    for the covariates row by row, then the ``n`` label noises.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = make_rng(seed, "dataset")
    z = rng.standard_normal((n, problem.d))
    noise = rng.standard_normal(n)
    xs = z * np.sqrt(problem.spectrum.eigenvalues)
    ys = xs @ problem.w_star + problem.noise_std * noise
    return Dataset(xs, ys, seed=seed)


def batch_moments(xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Shared by batch GD and the SGD step so a full-sweep batch reproduces batch GD bit for bit.
    m = xs.shape[0]
    return (xs.T @ xs) / m, (xs.T @ ys) / m


def empirical_moments(dataset: Dataset) -> EmpiricalMoments:
    if dataset.n == 0:
        raise ValueError("empty dataset")
    sigma_hat, h_hat = batch_moments(dataset.xs, dataset.ys)
    return EmpiricalMoments(sigma_hat, h_hat, dataset.n)


def effective_dimension(spectrum: Spectrum, lam: float) -> float:
    """``Tr[(Sigma + lam)^-1 Sigma]``."""
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    ev = np.asarray(getattr(spectrum, "eigenvalues", spectrum), dtype=float)
    return float(np.sum(ev / (ev + lam)))


def excess_risk(spectrum: Spectrum, w, source: SourceVector | np.ndarray) -> float:
    """``||Sigma^(1/2) (w - w*)||^2``."""
    ev = np.asarray(getattr(spectrum, "eigenvalues", spectrum), dtype=float)
    w = np.asarray(w, dtype=float)
    w_star = np.asarray(getattr(source, "coeffs", source), dtype=float)
    if not (w.shape == w_star.shape == ev.shape):
        raise ValueError(f"length mismatch: w{w.shape}, w*{w_star.shape}, spectrum{ev.shape}")
    diff = w - w_star
    return float(np.dot(ev, diff * diff))
