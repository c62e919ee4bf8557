"""Command-line entry point: ``extremo <command> --config PATH [flags]``.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 too many
dropped replicates or blocks.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from .domain import build_domain, load_field, save_field, square_sites
from .errors import NumericalError, PartialFailureError, ValidationError
from .extremogram import (
    bias_correct,
    empirical_extremogram,
    read_estimates,
    resolve_regime,
    select_threshold,
    threshold_sweep,
    write_estimates,
)
from .glse import WeightKind, fit_glse, weights_with_fallback
from .models import DependenceModel, Family, IntervalSet
from .study import (
    LAG_SETS,
    ScenarioConfig,
    lag_sensitivity,
    rate_check,
    replicate_seeds,
    run_rate_study,
    run_scenario,
    scenario_config,
    write_scenario_outputs,
)
from .simulate import simulate_brown_resnick
from .subsampling import SubsampleConfig, subsample_ci

__all__ = ["CliConfig", "parse_config", "main", "DEFAULT_LEVELS"]

log = logging.getLogger("extremo")

# quantile level of the matching published scenario per family; the axis families have none and use 0.96
DEFAULT_LEVELS = {
    Family.ISO_FRAC: 0.96,
    Family.ISO_FRAC_GEO_ANISO: 0.97,
    Family.TIME_SHIFTED: 0.95,
    Family.AXIS_ANISO: 0.96,
    Family.AXIS_ANISO_ROT: 0.96,
}
_SCENARIO_OF = {Family.ISO_FRAC: "i", Family.ISO_FRAC_GEO_ANISO: "ii", Family.TIME_SHIFTED: "iii"}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSpec(_Strict):
    fixed_sites: Optional[list[list[int]]] = None
    fixed_grid: Optional[list[int]] = None
    n: int = Field(ge=1)
    w: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _one_fixed_form(self):
        if (self.fixed_sites is None) == (self.fixed_grid is None):
            raise ValueError("give exactly one of fixed_sites or fixed_grid ([] for a pure increasing grid)")
        return self

    def sites(self):
        return [tuple(f) for f in self.fixed_sites] if self.fixed_sites is not None else square_sites(*self.fixed_grid)

    def domain(self):
        return build_domain(self.sites(), self.n, self.w)


class SetsSpec(_Strict):
    A: tuple[float, Optional[float]] = (1.0, None)
    B: tuple[float, Optional[float]] = (1.0, None)

    def sets(self):
        return tuple(IntervalSet(lo, math.inf if hi is None else hi) for lo, hi in (self.A, self.B))


class SubsamplingSpec(_Strict):
    block_length: Optional[int] = Field(default=None, ge=1)
    stride: Optional[int] = Field(default=None, ge=1)
    level: float = Field(default=0.95, gt=0, lt=1)
    beta1: Optional[float] = None
    reuse_threshold: bool = False
    block_starts: int = Field(default=2, ge=0)

    def config(self, n: int) -> SubsampleConfig:
        return SubsampleConfig.default(n, block_length=self.block_length, stride=self.stride, level=self.level,
                                       beta1=self.beta1, reuse_threshold=self.reuse_threshold,
                                       block_starts=self.block_starts)


class CliConfig(_Strict):
    scenario: Optional[Literal["i", "ii", "iii"]] = None
    scale: Literal["desk", "full"] = "desk"
    family: Optional[Family] = None
    theta: Optional[dict[str, float]] = None
    box: dict[str, tuple[float, float]] = Field(default_factory=dict)
    grid: Optional[GridSpec] = None
    lags: Union[str, list[list[int]]] = "H"
    quantile_level: Optional[float] = Field(default=None, gt=0, lt=1)
    sets: SetsSpec = Field(default_factory=SetsSpec)
    weights: WeightKind = WeightKind.EMPIRICAL
    weights_fallback: Optional[WeightKind] = WeightKind.EXP_DECAY
    starts: int = Field(default=16, ge=0)
    bias_correct: Literal["auto", "on", "off"] = "auto"
    replicates: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    subsampling: Optional[SubsamplingSpec] = None
    field: Optional[str] = None
    estimates: Optional[str] = None
    levels: Optional[list[float]] = None
    lag_sets: Optional[Union[list[str], dict[str, list[list[int]]]]] = None
    lengths: Optional[list[int]] = None
    beta1_bounds: tuple[float, float] = (1.0 / 15.0, 1.0 / 6.0)
    rmse: Optional[dict[str, dict[str, float]]] = None
    _replicates_given: bool = PrivateAttr(default=False)

    @field_validator("lags")
    @classmethod
    def _known_lag_set(cls, v):
        if isinstance(v, str) and v not in LAG_SETS:
            raise ValueError(f"unknown lag set {v!r}; choose from {sorted(LAG_SETS)} or give a list")
        return v

    @model_validator(mode="after")
    def _apply_defaults(self):
        # filling defaults below marks fields as set, so remember what the user actually gave
        self._replicates_given = self.replicates is not None or self.scenario is not None
        if self.scenario is not None:
            preset = scenario_config(self.scenario, self.scale)
            if self.family is None:
                self.family = preset.family
            if self.theta is None and self.family is preset.family:
                self.theta = dict(preset.theta_star)
            if not self.box and self.family is preset.family:
                self.box = {k: tuple(v) for k, v in preset.box.items()}
            if self.grid is None:
                fixed = [list(f) for f in preset.fixed_sites]
                self.grid = GridSpec(fixed_sites=fixed, n=preset.n, w=preset.w)
            if self.replicates is None:
                self.replicates = preset.replicates
        if self.family is not None:
            if self.quantile_level is None:
                self.quantile_level = DEFAULT_LEVELS[self.family]
            if self.theta is not None:
                try:
                    DependenceModel(self.family, self.theta, self.box)
                except ValidationError as exc:
                    raise ValueError(str(exc)) from None
        if self.replicates is None:
            self.replicates = 20
        return self

    # -- derived objects -------------------------------------------------

    def lag_list(self):
        return [tuple(h) for h in (LAG_SETS[self.lags] if isinstance(self.lags, str) else self.lags)]

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValidationError(f"config is missing {', '.join(missing)}")

    def model(self) -> DependenceModel:
        self.require("family", "theta")
        return DependenceModel(self.family, self.theta, self.box)

    def scenario_config(self) -> ScenarioConfig:
        self.require("family", "theta", "grid")
        grid = self.grid
        name = self.scenario or _SCENARIO_OF.get(self.family, self.family.value)
        return ScenarioConfig(
            name=f"{name}-{self.scale}" if self.scenario else str(name),
            family=self.family,
            theta_star=dict(self.theta),
            fixed_sites=tuple(grid.sites()),
            n=grid.n,
            w=grid.w,
            quantile_level=self.quantile_level,
            lags=tuple(self.lag_list()),
            weights=self.weights,
            weights_fallback=self.weights_fallback,
            replicates=self.replicates,
            seed=self.seed,
            bias_correction=self.bias_correct,
            starts=self.starts,
            box={k: tuple(v) for k, v in self.box.items()},
            sets=self.sets.sets(),
            ci=None if self.subsampling is None else self.subsampling.config(grid.n),
        )


def _format_pydantic(exc: pydantic.ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(source=None, **overrides) -> CliConfig:
    """Validate a JSON config (path, dict or ``None``) with keyword overrides applied on top."""
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = dict(source)
    else:
        path = Path(source)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return CliConfig.model_validate(data)
    except pydantic.ValidationError as exc:
        raise ValidationError(f"invalid config: {_format_pydantic(exc)}") from None


def effective_config(cfg: CliConfig) -> dict:
    return cfg.model_dump(mode="json")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(cfg: CliConfig, out: Path, args) -> None:
    cfg.require("grid")
    model, dom = cfg.model(), cfg.grid.domain()
    count = cfg.replicates if args.count is None else args.count
    seeds = replicate_seeds(cfg.seed, count)
    for i, (sim_seed, _) in enumerate(seeds):
        fld = simulate_brown_resnick(model, dom, np.random.default_rng(sim_seed))
        name = "field.csv" if count == 1 else f"field_{i:03d}.csv"
        save_field(fld, out / name)
    log.info("wrote %d field(s) to %s", count, out)


def _load_input_field(cfg: CliConfig):
    cfg.require("field", "grid")
    return load_field(cfg.field, cfg.grid.domain(), positive=False)


def _cmd_extremogram(cfg: CliConfig, out: Path, args) -> None:
    fld = _load_input_field(cfg)
    A, B = cfg.sets.sets()
    th = select_threshold(fld, cfg.quantile_level)
    est = empirical_extremogram(fld, cfg.lag_list(), th, A, B)
    dom = fld.domain
    regime = resolve_regime(cfg.bias_correct, th.realized, dom.n, dom.w, dom.d)
    est = bias_correct(est, regime)
    write_estimates(est, out / "estimates.csv")
    _write_json(out / "threshold.json", {"quantile_level": th.quantile_level, "realized": th.realized,
                                         "degenerate": th.degenerate, "regime": regime.value})
    if cfg.levels:
        rows = threshold_sweep(fld, cfg.lag_list(), cfg.levels, A, B)
        with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
            fh.write("level,threshold,lag,value,change\n")
            for r in rows:
                fh.write(f"{r['level']!r},{r['threshold']!r},\"{r['lag']}\",{r['value']!r},{r['change']!r}\n")


def _cmd_fit(cfg: CliConfig, out: Path, args) -> None:
    cfg.require("estimates", "family")
    A, B = cfg.sets.sets()
    est = read_estimates(cfg.estimates, (A, B))
    weights = weights_with_fallback(cfg.weights, est, cfg.weights_fallback)
    if weights.kind is not cfg.weights:
        log.warning("empirical weights invalid (zero estimate); using %s", weights.kind.value)
    fit = fit_glse(est, weights, cfg.family, box=cfg.box, starts=cfg.starts, rng=np.random.default_rng(cfg.seed),
                   warm_start=cfg.theta, A=A, B=B)
    (out / "fit.json").write_text(fit.to_json() + "\n", encoding="utf-8")


def _cmd_ci(cfg: CliConfig, out: Path, args) -> None:
    cfg.require("family")
    fld = _load_input_field(cfg)
    sub = (cfg.subsampling or SubsamplingSpec()).config(fld.domain.n)
    ci = subsample_ci(fld, cfg.lag_list(), cfg.quantile_level, cfg.sets.sets(), cfg.weights, cfg.family, cfg.box,
                      sub, np.random.default_rng(cfg.seed), cfg.starts, cfg.bias_correct,
                      weights_fallback=cfg.weights_fallback)
    _write_json(out / "ci.json", ci.to_dict())
    ci.write_csv(out / "ci.csv")


def _cmd_study(cfg: CliConfig, out: Path, args) -> None:
    result = run_scenario(cfg.scenario_config(), threads=args.threads)
    write_scenario_outputs(result, out)
    for row in result.metrics.rows():
        print(f"{row['parameter']:>8}  TRUE {row['TRUE']:.4f}  MEAN {row['MEAN']:.4f}  MAE {row['MAE']:.4f}  "
              f"RMSE {row['RMSE']:.4f}")


def _cmd_lagscan(cfg: CliConfig, out: Path, args) -> None:
    base = cfg.scenario_config()
    if cfg.lag_sets is None:
        sets = {k: LAG_SETS[k] for k in ("H1", "H2", "H3", "H4", "H5")}
    elif isinstance(cfg.lag_sets, dict):
        sets = {k: [tuple(h) for h in v] for k, v in cfg.lag_sets.items()}
    else:
        unknown = [k for k in cfg.lag_sets if k not in LAG_SETS]
        if unknown:
            raise ValidationError(f"unknown lag sets {unknown}")
        sets = {k: LAG_SETS[k] for k in cfg.lag_sets}
    res = lag_sensitivity(base, sets, threads=args.threads)
    with open(out / "lagscan.csv", "w", encoding="utf-8") as fh:
        fh.write("lag_set,n_lags,parameter,TRUE,MEAN,RMSE\n")
        for r in res.rows():
            fh.write(f"{r['lag_set']},{r['n_lags']},{r['parameter']},{r['TRUE']!r},{r['MEAN']!r},{r['RMSE']!r}\n")
    _write_json(out / "lagscan.json", {"rows": res.rows(), "skipped": res.skipped, "n_lags": res.n_lags})
    for name in res.set_names:
        if name not in res.skipped:
            print(f"{name:>4}  |H| = {res.n_lags[name]:2d}  {res.seconds[name]:.3f} s per fit")
    if args.timings:
        # wall-clock numbers differ run to run, so they live outside the reproducible outputs
        _write_json(out / "timings.json", res.seconds)


def _cmd_ratecheck(cfg: CliConfig, out: Path, args) -> None:
    lo, hi = cfg.beta1_bounds
    if cfg.rmse is not None:
        rmse = {int(T): v for T, v in cfg.rmse.items()}
        w, d = (cfg.grid.w, cfg.grid.domain().d) if cfg.grid is not None else (1, 3)
    else:
        base = cfg.scenario_config()
        tables, rmse = run_rate_study(base, cfg.lengths or [100, 200, 400], threads=args.threads)
        dom = base.domain()
        w, d = dom.w, dom.d
        with open(out / "rate_metrics.csv", "w", encoding="utf-8") as fh:
            fh.write("T,parameter,MEAN,RMSE\n")
            for T, t in tables.items():
                for i, n in enumerate(t.names):
                    fh.write(f"{T},{n},{float(t.mean[i])!r},{float(t.rmse[i])!r}\n")
    res = rate_check(rmse, w, d, lo, hi)
    res.write_csv(out / "ratecheck.csv")
    _write_json(out / "ratecheck.json", {"rows": res.rows, "all_within": res.all_within()})
    for r in res.rows:
        print(f"T={r['T']:<5} {r['parameter']:>8} factor {r['factor']:.3f} band "
              f"[{r['band_low']:.3f}, {r['band_high']:.3f}] {r['status']}")


_COMMANDS = {
    "simulate": _cmd_simulate,
    "extremogram": _cmd_extremogram,
    "fit": _cmd_fit,
    "ci": _cmd_ci,
    "study": _cmd_study,
    "lagscan": _cmd_lagscan,
    "ratecheck": _cmd_ratecheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extremo", description="Brown-Resnick extremogram estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes (0 = all cores)")
        p.add_argument("--quantile-level", type=float, dest="quantile_level")
        p.add_argument("--bias-correct", choices=["auto", "on", "off"], dest="bias_correct")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "simulate":
            p.add_argument("--count", type=int, help="number of fields (default: replicates, or 1)")
        if name == "lagscan":
            p.add_argument("--timings", action="store_true", help="also write timings.json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads < 0:
            raise ValidationError("--threads must be >= 0")
        cfg = parse_config(args.config, seed=args.seed, quantile_level=args.quantile_level,
                           bias_correct=args.bias_correct)
        if args.command == "simulate" and args.count is None and not cfg._replicates_given:
            args.count = 1
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "effective_config.json", effective_config(cfg))
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            _COMMANDS[args.command](cfg, out, args)
    except PartialFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
