"""Block-subsampling confidence intervals for GLSE parameters.

Blocks keep the full fixed-site set and slide a window of length ``b`` over
every increasing dimension.  With ``tau_m = m^((w - beta1 d)/2)`` the law of
``tau_n (theta_n - theta)`` is approximated by the empirical law of
``tau_b (theta_b - theta_n)`` over blocks, giving the interval
``[theta_n - q_hi / tau_n, theta_n - q_lo / tau_n]``.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import SpaceTimeField
from .errors import ExtremoError, PartialFailureError, ValidationError
from .extremogram import ThresholdSpec, bias_correct, empirical_extremogram, resolve_regime, select_threshold
from .glse import GLSEResult, WeightKind, WeightMatrix, fit_glse, weights_with_fallback
from .models import RAY, IntervalSet

__all__ = ["SubsampleConfig", "SubsampleCI", "fit_field", "subsample_ci", "block_starts", "MAX_DROP_FRACTION"]

MAX_DROP_FRACTION = 0.2
MIN_BLOCKS = 10


@dataclass(frozen=True)
class SubsampleConfig:
    block_length: int
    stride: int
    level: float = 0.95
    beta1: float | None = None
    reuse_threshold: bool = False
    block_starts: int = 2  # Sobol starts per block fit, on top of the full-sample warm start

    @classmethod
    def default(cls, n: int, **overrides) -> "SubsampleConfig":
        b = overrides.pop("block_length", None) or max(1, int(math.floor(n ** 0.7)))
        stride = overrides.pop("stride", None) or max(1, b // 3)
        return cls(b, stride, **overrides)

    def resolved_beta1(self, w: int, d: int) -> float:
        return 5.0 * w / (24.0 * d) if self.beta1 is None else float(self.beta1)

    def validate(self, n: int, w: int, d: int) -> None:
        if self.block_length < 1 or self.stride < 1:
            raise ValidationError("block length and stride must be positive")
        if self.block_length > n:
            raise ValidationError(f"block length {self.block_length} exceeds n = {n}")
        if not 0.0 < self.level < 1.0:
            raise ValidationError(f"CI level must lie in (0, 1), got {self.level}")
        beta1 = self.resolved_beta1(w, d)
        if not w / (5 * d) < beta1 < w / (2 * d):
            raise ValidationError(f"beta1 = {beta1} outside (w/(5d), w/(2d)) = ({w / (5 * d):.4g}, {w / (2 * d):.4g})")


@dataclass
class SubsampleCI:
    lower: dict[str, float]
    upper: dict[str, float]
    n_blocks: int
    n_dropped: int
    config: SubsampleConfig
    point_estimate: dict[str, float]
    full_fit: GLSEResult | None = None
    block_estimates: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def to_dict(self) -> dict:
        return {
            "point_estimate": dict(self.point_estimate),
            "lower": dict(self.lower),
            "upper": dict(self.upper),
            "n_blocks": self.n_blocks,
            "n_dropped": self.n_dropped,
            "config": asdict(self.config),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["parameter", "estimate", "lower", "upper"])
            for k, v in self.point_estimate.items():
                writer.writerow([k, repr(v), repr(self.lower[k]), repr(self.upper[k])])


def block_starts(n: int, b: int, stride: int, w: int) -> list[tuple[int, ...]]:
    """0-based start corners of all blocks, row-major over the increasing dimensions."""
    one = list(range(0, n - b + 1, stride))
    return list(itertools.product(one, repeat=w))


def fit_field(
    field: SpaceTimeField,
    lags: Sequence,
    threshold: ThresholdSpec | float,
    family,
    box: Mapping | None = None,
    weights_kind=WeightKind.EMPIRICAL,
    sets: tuple[IntervalSet, IntervalSet] = (RAY, RAY),
    bias_mode: str = "off",
    starts: int = 16,
    rng=None,
    warm_start: Mapping[str, float] | None = None,
    weights: WeightMatrix | None = None,
    weights_fallback=None,
):
    """Threshold, extremogram, optional bias correction, weights and GLSE on one field.

    ``threshold`` is a quantile level (float) or a ready :class:`ThresholdSpec`.
    A supplied ``weights`` matrix replaces the one built from ``weights_kind``;
    ``weights_fallback`` is used instead of EMPIRICAL weights that are invalid.
    Returns ``(GLSEResult, estimates, weights)``.
    """
    th = threshold if isinstance(threshold, ThresholdSpec) else select_threshold(field, threshold)
    A, B = sets
    est = empirical_extremogram(field, lags, th, A, B)
    dom = field.domain
    regime = resolve_regime(bias_mode, th.realized, dom.n, dom.w, dom.d) if bias_mode != "off" else None
    if regime is not None:
        est = bias_correct(est, regime)
    if weights is None:
        weights = weights_with_fallback(weights_kind, est, weights_fallback)
    fit = fit_glse(est, weights, family, box=box, starts=starts, rng=rng, warm_start=warm_start, A=A, B=B)
    return fit, est, weights


def subsample_ci(
    field: SpaceTimeField,
    lags: Sequence,
    threshold_level: float,
    sets: tuple[IntervalSet, IntervalSet] = (RAY, RAY),
    weights_kind=WeightKind.EMPIRICAL,
    family=None,
    box: Mapping | None = None,
    config: SubsampleConfig | None = None,
    rng: np.random.Generator | int | None = None,
    starts: int = 16,
    bias_mode: str = "off",
    full_fit: GLSEResult | None = None,
    weights_fallback=None,
) -> SubsampleCI:
    """Equal-tailed subsampling interval for every parameter."""
    if family is None:
        raise ValidationError("family required")
    dom = field.domain
    config = config or SubsampleConfig.default(dom.n)
    config.validate(dom.n, dom.w, dom.d)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    b, n = config.block_length, dom.n
    corners = block_starts(n, b, config.stride, dom.w)
    if b < n and len(corners) < MIN_BLOCKS:
        raise ValidationError(
            f"only {len(corners)} blocks for n={n}, b={b}, stride={config.stride}; at least {MIN_BLOCKS} needed"
        )
    full_threshold = select_threshold(field, threshold_level)
    A, B = sets
    est = empirical_extremogram(field, lags, full_threshold, A, B)
    if bias_mode != "off":
        est = bias_correct(est, resolve_regime(bias_mode, full_threshold.realized, n, dom.w, dom.d))
    # inference is conditional on the realised full-sample weight matrix, so blocks reuse it
    # (block-level empirical weights are frequently zero at far lags)
    weights = weights_with_fallback(weights_kind, est, weights_fallback)
    if full_fit is None:
        full_fit = fit_glse(est, weights, family, box=box, starts=starts, rng=gen, A=A, B=B)
    theta_n = full_fit.theta_hat
    names = list(theta_n)
    point = np.array([theta_n[k] for k in names])
    # a fresh sequence from drawn entropy: spawning from gen would mutate a caller-owned SeedSequence
    root = np.random.SeedSequence(int(gen.integers(2**63)))
    block_seeds = [np.random.default_rng(c) for c in root.spawn(len(corners))]

    if b == n:
        # the only block is the full sample
        block_est = point[None, :]
        dropped = 0
    else:
        rows, dropped = [], 0
        for corner, seed in zip(corners, block_seeds):
            sub = field.block(corner, b)
            th = full_threshold if config.reuse_threshold else threshold_level
            try:
                fit, _, _ = fit_field(sub, lags, th, family, box, weights_kind, sets, bias_mode,
                                      config.block_starts, seed, warm_start=theta_n, weights=weights)
            except ExtremoError as exc:
                warnings.warn(f"block at {corner} dropped: {exc}", RuntimeWarning, stacklevel=2)
                dropped += 1
                continue
            if not fit.converged:
                warnings.warn(f"block at {corner} dropped: fit did not converge", RuntimeWarning, stacklevel=2)
                dropped += 1
                continue
            rows.append([fit.theta_hat[k] for k in names])
        if dropped > MAX_DROP_FRACTION * len(corners):
            raise PartialFailureError(f"{dropped} of {len(corners)} subsampling blocks dropped", dropped,
                                      len(corners))
        block_est = np.array(rows)

    expo = (dom.w - config.resolved_beta1(dom.w, dom.d) * dom.d) / 2.0
    tau_b, tau_n = b ** expo, n ** expo
    dev = tau_b * (block_est - point)
    alpha = 1.0 - config.level
    q_lo = np.quantile(dev, alpha / 2.0, axis=0)
    q_hi = np.quantile(dev, 1.0 - alpha / 2.0, axis=0)
    lower = point - q_hi / tau_n
    upper = point - q_lo / tau_n
    return SubsampleCI(
        lower=dict(zip(names, lower.tolist())),
        upper=dict(zip(names, upper.tolist())),
        n_blocks=len(corners) - dropped,
        n_dropped=dropped,
        config=config,
        point_estimate=dict(theta_n),
        full_fit=full_fit,
        block_estimates=block_est,
    )
