"""Simulation-study harness: scenarios, replicate loops, metrics, lag sensitivity and rate checks.

Every replicate draws its generators from ``SeedSequence(seed).spawn(R)[i]``
(one child for simulation, one for fitting), so results do not depend on how
replicates are spread over worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .domain import ObservationDomain, build_domain, square_sites
from .errors import ExtremoError, PartialFailureError, ValidationError
from .glse import WeightKind
from .models import HALF_PI_OPEN, RAY, DependenceModel, Family, IntervalSet, param_names
from .simulate import FieldSampler, simulate_brown_resnick
from .subsampling import MAX_DROP_FRACTION, SubsampleConfig, fit_field, subsample_ci

__all__ = [
    "LAG_SETS",
    "ScenarioConfig",
    "MetricsTable",
    "ScenarioResult",
    "LagSensitivityResult",
    "RateCheckResult",
    "scenario_config",
    "metrics",
    "run_scenario",
    "lag_sensitivity",
    "rate_check",
    "run_rate_study",
    "replicate_seeds",
    "write_scenario_outputs",
]

log = logging.getLogger(__name__)

_H1 = [(0, 0, 1), (1, 0, 0), (0, 0, 2)]
_H2 = _H1 + [(2, 0, 0), (2, 1, 0), (1, 2, 0), (1, 1, 1), (1, 3, 2)]
_H3 = _H2 + [(0, 0, 3), (0, 0, 4), (3, 0, 0), (4, 0, 0), (4, 2, 0), (2, 4, 0), (2, 2, 2), (2, 6, 4)]
_H4 = _H3 + [(0, 0, 5), (0, 0, 6), (5, 0, 0), (6, 0, 0), (8, 4, 0), (4, 8, 0), (3, 3, 3), (3, 9, 6)]
_H5 = _H4 + [(0, 0, 7), (0, 0, 8), (7, 0, 0), (8, 0, 0), (10, 5, 0), (5, 10, 0), (4, 4, 4), (4, 12, 8)]

LAG_SETS: dict[str, tuple[tuple[int, ...], ...]] = {
    "H": ((0, 0, 1), (0, 0, 2), (0, 0, 3), (0, 0, 4), (1, 0, 0), (2, 0, 0), (3, 0, 0), (4, 0, 0),
          (2, 1, 0), (4, 2, 0), (1, 2, 0), (2, 4, 0), (1, 1, 1), (2, 2, 2), (1, 3, 2)),
    "H1": tuple(_H1),
    "H2": tuple(_H2),
    "H3": tuple(_H3),
    "H4": tuple(_H4),
    "H5": tuple(_H5),
}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    family: Family
    theta_star: dict[str, float]
    fixed_sites: tuple[tuple[int, ...], ...]
    n: int
    w: int
    quantile_level: float
    lags: tuple[tuple[int, ...], ...] = LAG_SETS["H"]
    weights: WeightKind = WeightKind.EMPIRICAL
    replicates: int = 20
    seed: int = 0
    bias_correction: str = "auto"
    starts: int = 16
    box: dict[str, tuple[float, float]] = field(default_factory=dict)
    sets: tuple[IntervalSet, IntervalSet] = (RAY, RAY)
    ci: SubsampleConfig | None = None
    # EMPIRICAL weights are invalid when an estimate is zero; such replicates use this kind instead
    weights_fallback: WeightKind | None = WeightKind.EXP_DECAY

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "weights", WeightKind(self.weights))
        if self.weights_fallback is not None:
            object.__setattr__(self, "weights_fallback", WeightKind(self.weights_fallback))
        object.__setattr__(self, "lags", tuple(tuple(int(c) for c in h) for h in self.lags))
        object.__setattr__(self, "fixed_sites", tuple(tuple(int(c) for c in f) for f in self.fixed_sites))
        if self.replicates < 1:
            raise ValidationError("need at least one replicate")
        if str(self.bias_correction).lower() not in ("auto", "on", "off"):
            raise ValidationError("bias_correction must be auto, on or off")
        dom = self.domain()
        if any(len(h) != dom.d for h in self.lags):
            raise ValidationError(f"lags must have dimension d = {dom.d}")
        self.model()  # theta* inside its box, names valid

    def domain(self) -> ObservationDomain:
        return build_domain(self.fixed_sites, self.n, self.w)

    def model(self) -> DependenceModel:
        return DependenceModel(self.family, self.theta_star, self.box)

    @property
    def names(self) -> tuple[str, ...]:
        return self.model().names

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "family": self.family.value,
            "theta_star": dict(self.theta_star),
            "fixed_sites": [list(f) for f in self.fixed_sites],
            "n": self.n,
            "w": self.w,
            "quantile_level": self.quantile_level,
            "lags": [list(h) for h in self.lags],
            "weights": self.weights.value,
            "replicates": self.replicates,
            "seed": self.seed,
            "bias_correction": self.bias_correction,
            "starts": self.starts,
            "box": {k: list(v) for k, v in self.box.items()},
            "sets": [s.to_list() for s in self.sets],
            "ci": None if self.ci is None else asdict(self.ci),
            "weights_fallback": None if self.weights_fallback is None else self.weights_fallback.value,
        }


_SCENARIOS = {
    "i": dict(family=Family.ISO_FRAC, theta_star={"C1": 0.8, "C2": 0.4, "alpha1": 1.5, "alpha2": 1.0},
              quantile_level=0.96, box={}),
    "ii": dict(family=Family.ISO_FRAC_GEO_ANISO,
               theta_star={"C1": 0.8, "C2": 0.4, "alpha1": 1.5, "alpha2": 0.5, "c": 3.0, "phi": math.pi / 4},
               quantile_level=0.97, box={"alpha1": (1.0, 2.0)}),
    "iii": dict(family=Family.TIME_SHIFTED,
                theta_star={"C1": 0.4, "C2": 0.8, "C3": 0.5, "alpha1": 1.5, "alpha2": 1.5, "alpha3": 1.0,
                            "tau1": 1.0, "tau2": 1.0},
                quantile_level=0.95, box={"alpha1": (1.0, 2.0), "alpha2": (1.0, 2.0)}),
}

# (spatial side, time points) for fixed x increasing scenarios; cube side for scenario iii
_SCALES = {"desk": {"i": (8, 150), "ii": (8, 150), "iii": 25}, "full": {"i": (15, 300), "ii": (15, 300), "iii": 40}}


def scenario_config(name: str, scale: str = "desk", **overrides) -> ScenarioConfig:
    """Preset for scenario ``i``, ``ii`` or ``iii`` at ``desk`` or ``full`` scale.

    Full scale reproduces the published grid sizes (15x15x300, 40^3) and
    100 replicates; it is slow and is never run by the test-suite.
    """
    if name not in _SCENARIOS:
        raise ValidationError(f"unknown scenario {name!r}; choose from {sorted(_SCENARIOS)}")
    if scale not in _SCALES:
        raise ValidationError(f"unknown scale {scale!r}; choose desk or full")
    base = dict(_SCENARIOS[name])
    size = _SCALES[scale][name]
    if name == "iii":
        base.update(fixed_sites=[()], n=size, w=3)
    else:
        side, n = size
        base.update(fixed_sites=square_sites(side, side), n=n, w=1)
    base.update(name=f"{name}-{scale}", replicates=20 if scale == "desk" else 100)
    base.update(overrides)
    return ScenarioConfig(**base)


@dataclass(frozen=True)
class MetricsTable:
    names: tuple[str, ...]
    true: np.ndarray
    mean: np.ndarray
    mae: np.ndarray
    rmse: np.ndarray
    rel: np.ndarray | None
    n_replicates: int

    def rows(self) -> list[dict]:
        out = []
        for i, name in enumerate(self.names):
            out.append({"parameter": name, "TRUE": float(self.true[i]), "MEAN": float(self.mean[i]),
                        "MAE": float(self.mae[i]), "RMSE": float(self.rmse[i]),
                        "REL": None if self.rel is None else float(self.rel[i])})
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["parameter", "TRUE", "MEAN", "MAE", "RMSE", "REL"])
            for r in self.rows():
                writer.writerow([r["parameter"]] + [("" if r[k] is None else repr(r[k]))
                                                    for k in ("TRUE", "MEAN", "MAE", "RMSE", "REL")])


def metrics(estimate_matrix, theta_star, names: Sequence[str] | None = None, rel: bool = True) -> MetricsTable:
    """Columnwise MEAN, MAE, RMSE and REL = sqrt(mean(((est - true)/true)^2))."""
    est = np.atleast_2d(np.asarray(estimate_matrix, dtype=float))
    if isinstance(theta_star, Mapping):
        names = tuple(theta_star) if names is None else tuple(names)
        true = np.array([theta_star[k] for k in names], dtype=float)
    else:
        true = np.asarray(theta_star, dtype=float).ravel()
        names = tuple(names) if names is not None else tuple(f"theta{j + 1}" for j in range(true.size))
    if est.shape[0] < 1 or est.size == 0:
        raise ValidationError("metrics need at least one replicate")
    if est.shape[1] != true.size:
        raise ValidationError(f"estimate matrix has {est.shape[1]} columns, theta* has {true.size}")
    err = est - true
    rel_vals = None
    if rel:
        if np.any(true == 0):
            zero = [n for n, t in zip(names, true) if t == 0]
            raise ValidationError(f"REL undefined for zero true values: {zero}")
        rel_vals = np.sqrt(np.mean((err / true) ** 2, axis=0))
    return MetricsTable(tuple(names), true, est.mean(axis=0), np.abs(err).mean(axis=0),
                        np.sqrt(np.mean(err ** 2, axis=0)), rel_vals, est.shape[0])


def replicate_seeds(seed: int, replicates: int) -> list[tuple[np.random.SeedSequence, np.random.SeedSequence]]:
    """``(simulation, fitting)`` seed sequences per replicate."""
    return [tuple(child.spawn(2)) for child in np.random.SeedSequence(seed).spawn(replicates)]


_SAMPLER_CACHE: dict = {}


def _sampler(config: ScenarioConfig, n: int | None = None) -> tuple[DependenceModel, ObservationDomain, FieldSampler]:
    dom = config.domain() if n is None else config.domain().with_n(n)
    model = config.model()
    key = (json.dumps(model.to_dict(), sort_keys=True), dom)
    if key not in _SAMPLER_CACHE:
        _SAMPLER_CACHE.clear()
        _SAMPLER_CACHE[key] = FieldSampler(model, dom)
    return model, dom, _SAMPLER_CACHE[key]


def _simulate(config: ScenarioConfig, sim_seed, n: int | None = None):
    model, dom, sampler = _sampler(config, n)
    return simulate_brown_resnick(model, dom, np.random.default_rng(sim_seed), sampler=sampler)


def _fit(config: ScenarioConfig, fld, fit_seed, lags=None):
    fit, _, weights = fit_field(fld, lags if lags is not None else config.lags, config.quantile_level,
                                config.family, config.box, config.weights, config.sets, config.bias_correction,
                                config.starts, np.random.default_rng(fit_seed),
                                weights_fallback=config.weights_fallback)
    return fit, weights.kind is not config.weights


def _replicate_task(args):
    config, index, sim_seed, fit_seed = args
    out = {"index": index, "theta": None, "converged": False, "fallback": False, "error": None, "lower": None,
           "upper": None}
    with threadpool_limits(1):
        try:
            fld = _simulate(config, sim_seed)
            fit, out["fallback"] = _fit(config, fld, fit_seed)
            out["theta"] = [fit.theta_hat[k] for k in config.names]
            out["converged"] = fit.converged
            if config.ci is not None:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    ci = subsample_ci(fld, config.lags, config.quantile_level, config.sets, config.weights,
                                      config.family, config.box, config.ci, np.random.default_rng(fit_seed),
                                      config.starts, config.bias_correction, full_fit=fit,
                                      weights_fallback=config.weights_fallback)
                out["lower"] = [ci.lower[k] for k in config.names]
                out["upper"] = [ci.upper[k] for k in config.names]
        except ExtremoError as exc:
            out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def _workers(threads: int) -> int:
    return (os.cpu_count() or 1) if threads == 0 else max(1, int(threads))


def _parallel_map(fn: Callable, tasks: list, threads: int) -> list:
    workers = _workers(threads)
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    names: tuple[str, ...]
    estimates: np.ndarray  # replicates x k, NaN rows for failed replicates
    converged: np.ndarray
    errors: list[str | None]
    metrics: MetricsTable
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    weight_fallback: np.ndarray | None = None  # replicates fitted with the fallback weights

    @property
    def n_failed(self) -> int:
        return sum(e is not None for e in self.errors)

    def coverage(self) -> dict[str, float] | None:
        if self.lower is None:
            return None
        ok = ~np.isnan(self.lower[:, 0])
        true = np.array([self.config.theta_star[k] for k in self.names])
        hit = (self.lower[ok] <= true) & (true <= self.upper[ok])
        return {k: float(v) for k, v in zip(self.names, hit.mean(axis=0))}

    def summary(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "metrics": self.metrics.rows(),
            "n_replicates": int(self.estimates.shape[0]),
            "n_failed": self.n_failed,
            "n_not_converged": int(np.sum(~self.converged)),
            "n_weight_fallback": 0 if self.weight_fallback is None else int(np.sum(self.weight_fallback)),
            "failures": [{"replicate": i, "error": e} for i, e in enumerate(self.errors) if e is not None],
            "coverage": self.coverage(),
        }


def _check_failures(n_failed: int, total: int, what: str) -> None:
    if n_failed > MAX_DROP_FRACTION * total:
        raise PartialFailureError(f"{n_failed} of {total} {what} failed", n_failed, total)
    if n_failed:
        warnings.warn(f"{n_failed} of {total} {what} failed and were dropped", RuntimeWarning, stacklevel=3)


def _collect(config: ScenarioConfig, results: list[dict]) -> ScenarioResult:
    k = len(config.names)
    est = np.full((len(results), k), np.nan)
    lower = np.full((len(results), k), np.nan) if config.ci is not None else None
    upper = np.full((len(results), k), np.nan) if config.ci is not None else None
    conv = np.zeros(len(results), dtype=bool)
    fallback = np.zeros(len(results), dtype=bool)
    errors = []
    for r in results:
        i = r["index"]
        errors.append(r["error"])
        if r["theta"] is not None:
            est[i] = r["theta"]
            conv[i] = r["converged"]
            fallback[i] = r["fallback"]
        if lower is not None and r["lower"] is not None:
            lower[i], upper[i] = r["lower"], r["upper"]
    n_failed = sum(e is not None for e in errors)
    _check_failures(n_failed, len(results), "replicates")
    ok = ~np.isnan(est[:, 0])
    table = metrics(est[ok], config.theta_star, config.names, rel=all(v != 0 for v in config.theta_star.values()))
    return ScenarioResult(config, config.names, est, conv, errors, table, lower, upper, fallback)


def run_scenario(config: ScenarioConfig, threads: int = 1) -> ScenarioResult:
    """simulate -> threshold -> extremogram (-> bias correction) -> fit, per replicate; then metrics."""
    seeds = replicate_seeds(config.seed, config.replicates)
    tasks = [(config, i, s, f) for i, (s, f) in enumerate(seeds)]
    log.info("scenario %s: %d replicates on %d worker(s)", config.name, len(tasks), _workers(threads))
    return _collect(config, _parallel_map(_replicate_task, tasks, threads))


def write_scenario_outputs(result: ScenarioResult, out_dir) -> list[Path]:
    """estimates.csv, metrics.csv, summary.json and long.csv (replicate, parameter, estimate, ci_low, ci_high)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = result.names
    fmt = lambda v: "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))  # noqa: E731
    paths = [out / "estimates.csv", out / "metrics.csv", out / "summary.json", out / "long.csv"]
    with open(paths[0], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["replicate", *names, "converged", "error"])
        for i, row in enumerate(result.estimates):
            writer.writerow([i, *(fmt(v) for v in row), int(result.converged[i]), result.errors[i] or ""])
    result.metrics.write_csv(paths[1])
    paths[2].write_text(json.dumps(result.summary(), indent=2) + "\n", encoding="utf-8")
    with open(paths[3], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["replicate", "parameter", "estimate", "ci_low", "ci_high"])
        for i, row in enumerate(result.estimates):
            for j, name in enumerate(names):
                lo = None if result.lower is None else result.lower[i, j]
                hi = None if result.upper is None else result.upper[i, j]
                writer.writerow([i, name, fmt(row[j]), fmt(lo), fmt(hi)])
    return paths


# ---------------------------------------------------------------------------
# lag-set sensitivity


@dataclass
class LagSensitivityResult:
    names: tuple[str, ...]
    set_names: list[str]
    n_lags: dict[str, int]
    tables: dict[str, MetricsTable]
    seconds: dict[str, float]  # mean wall-clock per replicate fit
    skipped: list[str]

    def rows(self) -> list[dict]:
        out = []
        for s in self.set_names:
            if s in self.skipped:
                continue
            t = self.tables[s]
            for i, name in enumerate(self.names):
                out.append({"lag_set": s, "n_lags": self.n_lags[s], "parameter": name, "TRUE": float(t.true[i]),
                            "MEAN": float(t.mean[i]), "RMSE": float(t.rmse[i])})
        return out


def _lag_task(args):
    config, index, sim_seed, fit_seed, lag_sets = args
    out = {"index": index, "theta": {}, "seconds": {}, "error": {}}
    with threadpool_limits(1):
        try:
            fld = _simulate(config, sim_seed)
        except ExtremoError as exc:
            return {**out, "error": {s: str(exc) for s in lag_sets}}
        for name, lags in lag_sets.items():
            start = time.perf_counter()
            try:
                fit, _ = _fit(config, fld, fit_seed, lags)
                out["theta"][name] = [fit.theta_hat[k] for k in config.names]
            except ExtremoError as exc:
                out["error"][name] = str(exc)
            out["seconds"][name] = time.perf_counter() - start
    return out


def lag_sensitivity(base_config: ScenarioConfig, lag_sets: Mapping[str, Sequence], threads: int = 1
                    ) -> LagSensitivityResult:
    """Fit every replicate field once per lag set; fields are shared across sets."""
    if len(lag_sets) < 2:
        raise ValidationError("lag sensitivity needs at least two lag sets")
    k = sum(1 for n in base_config.names
            if base_config.model().box[n][0] < base_config.model().box[n][1])
    usable, skipped = {}, []
    for name, lags in lag_sets.items():
        lags = tuple(tuple(int(c) for c in h) for h in lags)
        if len(lags) < k:
            warnings.warn(f"lag set {name} has {len(lags)} < {k} lags; skipped", RuntimeWarning, stacklevel=2)
            skipped.append(name)
        else:
            usable[name] = lags
    seeds = replicate_seeds(base_config.seed, base_config.replicates)
    tasks = [(base_config, i, s, f, usable) for i, (s, f) in enumerate(seeds)]
    results = _parallel_map(_lag_task, tasks, threads)
    tables, seconds = {}, {}
    for name in usable:
        rows = [r["theta"][name] for r in results if name in r["theta"]]
        _check_failures(len(results) - len(rows), len(results), f"replicates for lag set {name}")
        tables[name] = metrics(np.array(rows), base_config.theta_star, base_config.names)
        seconds[name] = float(np.mean([r["seconds"].get(name, math.nan) for r in results]))
    return LagSensitivityResult(base_config.names, list(lag_sets), {n: len(v) for n, v in lag_sets.items()},
                                tables, seconds, skipped)


# ---------------------------------------------------------------------------
# sample-size rate check


@dataclass
class RateCheckResult:
    rows: list[dict]  # T, k, parameter, factor, band_low, band_high, status

    def all_within(self) -> bool:
        return all(r["status"] != "out" for r in self.rows)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            cols = ["T", "k", "parameter", "factor", "band_low", "band_high", "status"]
            writer.writerow(cols)
            for r in self.rows:
                writer.writerow([r["T"], repr(r["k"]), r["parameter"], repr(r["factor"]), repr(r["band_low"]),
                                 repr(r["band_high"]), r["status"]])


def rate_band(k: float, w: int, d: int, beta1_low: float, beta1_high: float) -> tuple[float, float]:
    """``[(1/k)^((w - beta1_high d)/2), (1/k)^((w - beta1_low d)/2)]``."""
    lo = (1.0 / k) ** ((w - beta1_high * d) / 2.0)
    hi = (1.0 / k) ** ((w - beta1_low * d) / 2.0)
    return min(lo, hi), max(lo, hi)


def rate_check(rmse_by_T: Mapping[int, Mapping[str, float]], w: int, d: int, beta1_low: float, beta1_high: float,
               tol: float = 0.05) -> RateCheckResult:
    """Compare ``RMSE(k T0) / RMSE(T0)`` with the theoretical band; ``T0`` is the smallest length."""
    if len(rmse_by_T) < 2:
        raise ValidationError("rate check needs at least two time lengths")
    if not 0 < beta1_low < beta1_high:
        raise ValidationError("need 0 < beta1_low < beta1_high")
    Ts = sorted(rmse_by_T)
    T0 = Ts[0]
    base = rmse_by_T[T0]
    zero = [p for p, v in base.items() if not v > 0]
    if zero:
        raise ValidationError(f"zero base RMSE for {zero}")
    rows = []
    for T in Ts:
        k = T / T0
        lo, hi = rate_band(k, w, d, beta1_low, beta1_high)
        for p, v in rmse_by_T[T].items():
            factor = 1.0 if T == T0 else v / base[p]
            if lo <= factor <= hi:
                status = "in"
            elif lo - tol <= factor <= hi + tol:
                status = "near"
            else:
                status = "out"
            rows.append({"T": T, "k": k, "parameter": p, "factor": factor, "band_low": lo, "band_high": hi,
                         "status": status})
    return RateCheckResult(rows)


def _rate_task(args):
    config, index, sim_seed, fit_seed, lengths = args
    out = {"index": index, "theta": {}, "error": {}}
    with threadpool_limits(1):
        try:
            fld = _simulate(config, sim_seed, max(lengths))
        except ExtremoError as exc:
            return {**out, "error": {T: str(exc) for T in lengths}}
        for T in lengths:
            # restricting an exact draw to a sub-domain is an exact draw on the sub-domain
            sub = fld if T == fld.domain.n else fld.block((0,) * fld.domain.w, T)
            try:
                fit, _ = _fit(config, sub, fit_seed)
                out["theta"][T] = [fit.theta_hat[k] for k in config.names]
            except ExtremoError as exc:
                out["error"][T] = str(exc)
    return out


def run_rate_study(config: ScenarioConfig, lengths: Iterable[int], threads: int = 1
                   ) -> tuple[dict[int, MetricsTable], dict[int, dict[str, float]]]:
    """Fit each replicate at several lengths of the increasing dimensions (nested sub-domains)."""
    lengths = sorted({int(T) for T in lengths})
    if len(lengths) < 2:
        raise ValidationError("need at least two lengths")
    seeds = replicate_seeds(config.seed, config.replicates)
    tasks = [(config, i, s, f, lengths) for i, (s, f) in enumerate(seeds)]
    results = _parallel_map(_rate_task, tasks, threads)
    tables, rmse = {}, {}
    for T in lengths:
        rows = [r["theta"][T] for r in results if T in r["theta"]]
        _check_failures(len(results) - len(rows), len(results), f"replicates at length {T}")
        tables[T] = metrics(np.array(rows), config.theta_star, config.names)
        rmse[T] = {n: float(v) for n, v in zip(config.names, tables[T].rmse)}
    return tables, rmse
