"""Experiment sweeps and their CSV output.

Every experiment is a list of independent work items (grid cell x replicate).
Each item derives its random streams from ``(master_seed, cell, replicate)``
and results are gathered by index, so output bytes do not depend on the
number of worker threads or on completion order.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .descent import SgdConfig, TailAverager, minibatch_sgd_run, probe_kappa_sq, recursion_probe
from .errors import ConfigError, DivergenceError
from .model import Spectrum, excess_risk, make_problem, sample_dataset
from .spectral import (
    FilterParams,
    filter_sup_gap,
    gd_filter,
    residual_sup_gap,
    tail_filter,
    tail_residual,
)
from .streams import GENERATOR_ID, derive_seed
from .theory import schedule, slope_fit

EXPERIMENTS = ("figure-a", "figure-grid", "rates", "verify-filters", "probe")

CLOSED_FORM_TOL = 1e-10
IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    d: int = 100
    n: int = 2000
    nu: float = 0.5
    noise_std: float = 1.0
    master_seed: int = 0
    replicates: int | None = None
    # figure-a
    r_values: tuple[float, ...] = (0.0, 0.5, 1.0, 1.5, 2.0)
    # figure-grid and rates
    r: float = 0.5
    gammas: tuple[float, ...] = (0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 5.0)
    batch_sizes: tuple[int, ...] = (1, 4, 16, 64)
    n_values: tuple[int, ...] = (500, 1000, 2000, 4000, 8000)
    variant: str = "a"
    # verify-filters
    filter_gammas: tuple[float, ...] = (0.01, 0.1, 0.24)
    filter_windows: tuple[tuple[int, int], ...] = ((0, 10), (5, 10), (127, 255), (499, 1000), (9, 10), (999, 1000))
    sigmas: tuple[float, ...] | None = None
    sigma_points: int = 20
    # probe
    probe_configs: int = 10
    output_path: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.replicates is None:
            object.__setattr__(self, "replicates", 200 if self.experiment == "probe" else 20)
        _positive_int(self, "d", "n", "replicates", "sigma_points", "probe_configs")
        _nonnegative_int(self, "master_seed")
        if not 0 < self.nu <= 1:
            raise ConfigError(f"nu must lie in (0, 1], got {self.nu}")
        _finite(self, "noise_std", "r")
        if self.noise_std < 0 or self.r < 0:
            raise ConfigError("noise_std and r must be >= 0")
        for name in ("r_values",):
            if any(not math.isfinite(v) or v < 0 for v in getattr(self, name)):
                raise ConfigError(f"{name} entries must be finite and >= 0")
        for name in ("gammas", "filter_gammas"):
            if not getattr(self, name) or any(not (math.isfinite(v) and v > 0) for v in getattr(self, name)):
                raise ConfigError(f"{name} entries must be positive and finite")
        for name in ("batch_sizes", "n_values"):
            if not getattr(self, name) or any(not _is_int(v) or v < 1 for v in getattr(self, name)):
                raise ConfigError(f"{name} entries must be positive integers")
        if list(self.n_values) != sorted(set(self.n_values)):
            raise ConfigError("n_values must be strictly increasing")
        if self.variant not in ("a", "b", "c"):
            raise ConfigError(f"variant must be 'a', 'b' or 'c', got {self.variant!r}")
        for S, T in self.filter_windows:
            if not (_is_int(S) and _is_int(T) and T >= 1 and 0 <= S <= T - 1):
                raise ConfigError(f"filter window (S={S}, T={T}) needs 0 <= S <= T-1")
        if self.sigmas is not None:
            if not self.sigmas or any(not (math.isfinite(s) and s > 0) for s in self.sigmas):
                raise ConfigError("sigmas must be positive and finite")
            worst = max(self.filter_gammas) * max(self.sigmas)
            if worst >= 1:
                raise ConfigError(f"gamma * sigma = {worst!r} >= 1 in the filter grid")

    @classmethod
    def from_dict(cls, data: dict[str, Any], experiment: str | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if experiment is not None:
            if data.get("experiment", experiment) != experiment:
                raise ConfigError(f"config is for {data['experiment']!r}, not {experiment!r}")
            data["experiment"] = experiment
        if "experiment" not in data:
            raise ConfigError("no experiment given")
        for key, value in data.items():
            if isinstance(value, list):
                data[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        for key in ("d", "n", "master_seed", "replicates", "sigma_points", "probe_configs"):
            if key in data and data[key] is not None and not _is_int(data[key]):
                raise ConfigError(f"{key} must be an integer")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _positive_int(cfg, *names):
    for name in names:
        v = getattr(cfg, name)
        if not _is_int(v) or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")


def _nonnegative_int(cfg, *names):
    for name in names:
        v = getattr(cfg, name)
        if not _is_int(v) or not 0 <= v < 2**64:
            raise ConfigError(f"{name} must be an unsigned 64-bit integer, got {v!r}")


def _finite(cfg, *names):
    for name in names:
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{name} must be a finite number, got {v!r}")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def load_config(path: str | os.PathLike, experiment: str | None = None) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return ExperimentConfig.from_dict(data, experiment)


# --------------------------------------------------------------------- output


def fmt(value) -> str:
    """Shortest round-trip text for floats; plain text otherwise."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


@dataclass
class CsvTable:
    columns: Sequence[str]
    rows: list[Sequence[Any]]
    meta: dict[str, Any] = field(default_factory=dict)
    ok: bool = True

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, value in self.meta.items():
            buf.write(f"# {key}: {value}\n")
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(fmt(v) for v in row) + "\n")
        return buf.getvalue()

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def records(self) -> list[dict[str, Any]]:
        return [dict(zip(self.columns, row)) for row in self.rows]


def _meta(config: ExperimentConfig, kappa_sq) -> dict[str, Any]:
    return {
        "tailsgd_version": __version__,
        "experiment": config.experiment,
        "config_sha256": config.digest(),
        "generator_id": GENERATOR_ID,
        "kappa_sq": fmt(kappa_sq) if isinstance(kappa_sq, float) else kappa_sq,
        "config": canonical_json(config.to_dict()),
    }


def _parallel_map(fn: Callable, items: Iterable, threads: int) -> list:
    items = list(items)
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _summary(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values)
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else math.nan
    return mean, stderr


def _round_half_up(x: float) -> int:
    return max(1, math.floor(x + 0.5))


# ---------------------------------------------------------------- experiments


def _uniform_and_tail(problem, dataset, gamma: float, b: int, T: int, seed: int) -> tuple[float, float] | None:
    """One SGD path scored under uniform (S=0) and half-tail (S=T//2) averaging; None if it diverged."""
    uniform = TailAverager(0, T, problem.d)
    try:
        tail = minibatch_sgd_run(dataset, SgdConfig(gamma, b, T, T // 2, seed), on_iterate=uniform.feed)
    except DivergenceError:
        return None
    return (
        excess_risk(problem.spectrum, uniform.value(), problem.source),
        excess_risk(problem.spectrum, tail, problem.source),
    )


def _mode_rows(prefix: tuple, results: list, reps: int) -> list[list]:
    ok = [res for res in results if res is not None]
    rows = []
    for k, mode in enumerate(("uniform", "tail")):
        mean, stderr = _summary([res[k] for res in ok])
        rows.append([*prefix, mode, mean, stderr, len(ok), reps - len(ok)])
    return rows


def run_figure_a(config: ExperimentConfig, threads: int = 1) -> CsvTable:
    """Excess risk against smoothness ``r`` for uniform and tail averaging.

    ``b = 1``, ``T = n``, ``gamma = n**(-(2r+nu)/(2r+1+nu))``; the tail run
    averages ``S = T//2 .. T``.  Replicate ``k`` uses the same data seed for
    every ``r``.
    """
    ms, n, reps = config.master_seed, config.n, config.replicates
    problems = [make_problem(config.d, config.nu, r, config.noise_std) for r in config.r_values]

    def work(item):
        j, k = item
        r = config.r_values[j]
        problem = problems[j]
        dataset = sample_dataset(problem, n, derive_seed(ms, "figure-a/dataset", k))
        gamma = n ** (-(2 * r + config.nu) / (2 * r + 1 + config.nu))
        return _uniform_and_tail(problem, dataset, gamma, 1, n, derive_seed(ms, "figure-a/sgd", j, k))

    items = [(j, k) for j in range(len(config.r_values)) for k in range(reps)]
    results = _parallel_map(work, items, threads)
    rows = []
    for j, r in enumerate(config.r_values):
        rows += _mode_rows((r,), results[j * reps:(j + 1) * reps], reps)
    return CsvTable(
        ["r", "mode", "mean_excess_risk", "stderr", "replicates", "diverged_count"],
        rows,
        _meta(config, problems[0].spectrum.kappa_sq),
    )


def run_figure_grid(config: ExperimentConfig, threads: int = 1) -> CsvTable:
    """Excess risk over a step-size x batch-size grid with ``T = n/b`` (one pass)."""
    ms, n, reps = config.master_seed, config.n, config.replicates
    problem = make_problem(config.d, config.nu, config.r, config.noise_std)
    cells = [(g, b) for g in config.gammas for b in config.batch_sizes]

    def work(item):
        c, k = item
        gamma, b = cells[c]
        dataset = sample_dataset(problem, n, derive_seed(ms, "figure-grid/dataset", k))
        T = _round_half_up(n / b)
        return _uniform_and_tail(problem, dataset, gamma, b, T, derive_seed(ms, "figure-grid/sgd", c, k))

    items = [(c, k) for c in range(len(cells)) for k in range(reps)]
    results = _parallel_map(work, items, threads)
    rows = []
    for c, (gamma, b) in enumerate(cells):
        for row in _mode_rows((gamma, b), results[c * reps:(c + 1) * reps], reps):
            rows.append([*row[:5], row[6]])
    return CsvTable(
        ["gamma", "b", "mode", "mean_excess_risk", "stderr", "diverged_count"],
        rows,
        _meta(config, problem.spectrum.kappa_sq),
    )


def run_rates(config: ExperimentConfig, threads: int = 1) -> CsvTable:
    """Excess risk along an ``n`` ladder under one of the optimal schedules, plus a fitted slope."""
    ms, reps = config.master_seed, config.replicates
    problem = make_problem(config.d, config.nu, config.r, config.noise_std)
    kappa_sq = problem.spectrum.kappa_sq
    plans = [schedule(config.variant, n, config.r, config.nu, kappa_sq) for n in config.n_values]

    def work(item):
        i, k = item
        plan = plans[i]
        dataset = sample_dataset(problem, plan.n, derive_seed(ms, "rates/dataset", i, k))
        cfg = SgdConfig(plan.gamma, plan.b, plan.T, plan.S, derive_seed(ms, "rates/sgd", i, k))
        try:
            w = minibatch_sgd_run(dataset, cfg)
        except DivergenceError:
            return None
        return excess_risk(problem.spectrum, w, problem.source)

    items = [(i, k) for i in range(len(plans)) for k in range(reps)]
    results = _parallel_map(work, items, threads)
    rows, points = [], []
    for i, plan in enumerate(plans):
        ok = [v for v in results[i * reps:(i + 1) * reps] if v is not None]
        mean, stderr = _summary(ok)
        rows.append([plan.n, plan.variant, plan.gamma, plan.b, plan.L, plan.T, plan.S, mean, stderr, None])
        if ok and mean > 0:
            points.append((plan.n, mean))
    if len(points) >= 2:
        rows.append(["all", config.variant, None, None, None, None, None, None, None, slope_fit(points)])
    return CsvTable(
        ["n", "variant", "gamma", "b", "L", "T", "S", "mean_excess_risk", "stderr", "fitted_slope"],
        rows,
        _meta(config, kappa_sq),
    )


def _direct_average(sigmas: np.ndarray, gamma: float, S: int, T: int) -> np.ndarray:
    """Average of ``g_t = gamma * sum_{k<t} q**k`` over ``t = S+1..T`` by explicit summation."""
    q = 1.0 - gamma * sigmas
    power = np.ones_like(q)
    partial = np.zeros_like(q)
    total = np.zeros_like(q)
    for t in range(1, T + 1):
        partial += power
        power *= q
        if t > S:
            total += partial
    return gamma * total / (T - S)


def _filter_grid(config: ExperimentConfig, gamma: float) -> np.ndarray:
    if config.sigmas is not None:
        return np.asarray(sorted(config.sigmas, reverse=True), dtype=float)
    return np.geomspace(0.99 / gamma, 1e-8, config.sigma_points)


def run_verify_filters(config: ExperimentConfig, threads: int = 1) -> CsvTable:
    """Closed-form filters against brute-force sums, plus the sup-norm bounds, one row per check."""
    rows = []

    def add(name, gap, bound):
        rows.append([name, gap, bound, bool(gap <= bound)])

    for gamma in config.filter_gammas:
        sig = _filter_grid(config, gamma)
        for S, T in config.filter_windows:
            p = FilterParams(gamma, T, S)
            tag = f"gamma={fmt(gamma)};S={S};T={T}"
            G = tail_filter(sig, p)
            R = tail_residual(sig, p)
            scale = max(1.0, gamma * T)
            add(f"closed_form_vs_sum[{tag}]", float(np.max(np.abs(G - _direct_average(sig, gamma, S, T)))) / scale, CLOSED_FORM_TOL)
            add(f"residual_identity[{tag}]", float(np.max(np.abs(R + sig * G - 1.0))), IDENTITY_TOL)
            if S == T - 1:
                add(f"last_window_is_gd_filter[{tag}]", float(np.max(np.abs(G - gd_filter(sig, p, T)))) / scale, IDENTITY_TOL)
            for u in (0.0, 0.5, 1.0):
                observed, bound = residual_sup_gap(p, u, sig)
                add(f"residual_sup[u={fmt(u)};{tag}]", observed, bound)
                observed, bound = filter_sup_gap(p, u, sig)
                add(f"filter_sup[u={fmt(u)};{tag}]", observed, bound)
    table = CsvTable(["check_name", "worst_gap", "bound", "pass"], rows, _meta(config, "n/a"))
    table.ok = all(row[3] for row in rows)
    return table


def probe_settings(master_seed: int, count: int) -> list[dict[str, Any]]:
    """Random admissible probe configurations, reproducible from ``master_seed``."""
    rng = np.random.Generator(np.random.Philox(derive_seed(master_seed, "probe/configs")))
    out = []
    for _ in range(count):
        d = int(rng.integers(2, 21))
        decay = float(rng.uniform(1.0, 3.0))
        spectrum = Spectrum(np.arange(1, d + 1, dtype=float) ** (-decay))
        c = float(rng.uniform(0.0, 1.0))
        T = int(rng.integers(10, 301))
        alpha = float(rng.uniform(0.2, 1.0))
        out.append(
            dict(
                spectrum=spectrum,
                noise_var=float(rng.uniform(0.1, 2.0)),
                perturbation_scale=c,
                gamma=float(rng.uniform(0.2, 1.0)) / (4 * probe_kappa_sq(spectrum, c)),
                T=T,
                S=int(rng.integers(0, T)),
                u=float(rng.uniform(0.0, 1.0)),
                alpha=alpha,
            )
        )
    return out


def run_probe(config: ExperimentConfig, threads: int = 1) -> CsvTable:
    """Monte-Carlo moment of the general tail-averaged recursion against its bound."""
    settings = probe_settings(config.master_seed, config.probe_configs)

    def work(i):
        s = settings[i]
        p = FilterParams(s["gamma"], s["T"], s["S"])
        return recursion_probe(
            s["spectrum"], s["noise_var"], s["perturbation_scale"], p, s["u"], s["alpha"],
            config.replicates, derive_seed(config.master_seed, "probe/run", i),
        )

    results = _parallel_map(work, range(len(settings)), threads)
    rows = []
    for i, (s, res) in enumerate(zip(settings, results)):
        rows.append([
            i, s["spectrum"].d, s["gamma"], s["S"], s["T"], s["u"], s["alpha"], s["noise_var"],
            s["perturbation_scale"], res.kappa_sq, res.empirical, res.stderr, res.bound, res.within_bound(3.0),
        ])
    table = CsvTable(
        ["config_index", "d", "gamma", "S", "T", "u", "alpha", "noise_var", "perturbation_scale",
         "kappa_sq", "empirical", "stderr", "bound", "pass"],
        rows,
        _meta(config, "per-row"),
    )
    table.ok = all(row[-1] for row in rows)
    return table


RUNNERS: dict[str, Callable[[ExperimentConfig, int], CsvTable]] = {
    "figure-a": run_figure_a,
    "figure-grid": run_figure_grid,
    "rates": run_rates,
    "verify-filters": run_verify_filters,
    "probe": run_probe,
}


def run(config: ExperimentConfig, threads: int = 1) -> CsvTable:
    return RUNNERS[config.experiment](config, threads)
