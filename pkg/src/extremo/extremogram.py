"""Empirical extremogram on ``F x {1..n}^w``, thresholds and the first-order bias correction.

Counting works on the value cube of shape ``(|F|, n, ..., n)``: for a lag
``(h_F, h_I)`` the fixed part pairs fixed sites ``f`` with ``f + h_F`` and the
increasing part is a pair of overlapping slices, so no site pairs are ever
enumerated explicitly.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .domain import Lag, SpaceTimeField, _open_text, as_lag
from .errors import UndefinedEstimateError, ValidationError
from .models import RAY, IntervalSet

__all__ = [
    "ThresholdSpec",
    "ExtremogramEstimate",
    "Regime",
    "select_threshold",
    "empirical_extremogram",
    "bias_correct",
    "regime_advise",
    "beta1_from_threshold",
    "resolve_regime",
    "threshold_sweep",
    "write_estimates",
    "read_estimates",
]


@dataclass(frozen=True)
class ThresholdSpec:
    quantile_level: float
    realized: float
    degenerate: bool = False


@dataclass(frozen=True)
class ExtremogramEstimate:
    lag: Lag
    value: float
    numerator_count: int
    numerator_sites: int
    denominator_count: int
    denominator_sites: int
    bias_corrected: bool
    threshold: ThresholdSpec | None
    sets: tuple[IntervalSet, IntervalSet] = (RAY, RAY)

    @property
    def raw_value(self) -> float:
        return (self.numerator_count / self.numerator_sites) / (self.denominator_count / self.denominator_sites)


class Regime(str, Enum):
    NONE = "NONE"
    FIRST_ORDER = "FIRST_ORDER"
    UNSUPPORTED = "UNSUPPORTED"


# index guard so that e.g. 0.96 * 100 = 96.00000000000001 still selects the 96th value
_LEVEL_EPS = 1e-9


def select_threshold(field: SpaceTimeField | np.ndarray, level: float) -> ThresholdSpec:
    """Empirical quantile as the order statistic ``X_(k)``, ``k = ceil(level * N)``."""
    values = field.values if isinstance(field, SpaceTimeField) else np.asarray(field, dtype=float).ravel()
    if values.size == 0:
        raise ValidationError("cannot select a threshold on an empty field")
    level = float(level)
    if not 0.0 < level < 1.0:
        raise ValidationError(f"quantile level must lie in (0, 1), got {level}")
    n = values.size
    k = min(max(math.ceil(level * n - _LEVEL_EPS * n), 1), n)
    realized = float(np.partition(values, k - 1)[k - 1])
    degenerate = bool(np.all(values == values[0]))
    if degenerate:
        warnings.warn("all field values are equal; the threshold carries no information", RuntimeWarning,
                      stacklevel=2)
    return ThresholdSpec(level, realized, degenerate)


def _fixed_pairs(fixed_sites, h_fixed) -> tuple[np.ndarray, np.ndarray]:
    lookup = {f: i for i, f in enumerate(fixed_sites)}
    src, dst = [], []
    for i, f in enumerate(fixed_sites):
        j = lookup.get(tuple(a + b for a, b in zip(f, h_fixed)))
        if j is not None:
            src.append(i)
            dst.append(j)
    return np.array(src, dtype=np.intp), np.array(dst, dtype=np.intp)


def _shift_slices(n: int, h_inc) -> tuple[tuple[slice, ...], tuple[slice, ...]]:
    src, dst = [], []
    for c in h_inc:
        c = int(c)
        if c >= 0:
            src.append(slice(0, max(n - c, 0)))
            dst.append(slice(min(c, n), n))
        else:
            src.append(slice(min(-c, n), n))
            dst.append(slice(0, max(n + c, 0)))
    return tuple(src), tuple(dst)


def _pair_count(ind_a: np.ndarray, ind_b: np.ndarray, domain, lag: Lag) -> tuple[int, int]:
    """``(#{s in D(h): s in A-event, s+h in B-event}, |D(h)|)``."""
    src_f, dst_f = _fixed_pairs(domain.fixed_sites, lag.fixed_part)
    src_s, dst_s = _shift_slices(domain.n, lag.increasing_part)
    inc_sites = math.prod(s.stop - s.start for s in src_s)
    n_sites = len(src_f) * inc_sites
    if n_sites == 0:
        return 0, 0
    a = ind_a[(src_f,) + src_s]
    b = ind_b[(dst_f,) + dst_s]
    return int(np.count_nonzero(a & b)), n_sites


def empirical_extremogram(
    field: SpaceTimeField,
    lags: Iterable,
    threshold: ThresholdSpec,
    A: IntervalSet = RAY,
    B: IntervalSet = RAY,
) -> list[ExtremogramEstimate]:
    """Ratio of the lagged joint exceedance frequency to the marginal one, per lag."""
    domain = field.domain
    a = float(threshold.realized)
    if not a > 0:
        raise ValidationError(f"threshold must be positive, got {a}")
    cube = field.cube() / a
    ind_a = A.contains(cube)
    ind_b = ind_a if B == A else B.contains(cube)
    den_count = int(np.count_nonzero(ind_a))
    den_sites = domain.n_sites
    if den_count == 0:
        raise UndefinedEstimateError(
            f"no site exceeds the threshold {a} (level {threshold.quantile_level}) inside set A; "
            "the extremogram is undefined"
        )
    out = []
    for raw in lags:
        lag = as_lag(raw, domain.q, domain.w)
        num, num_sites = _pair_count(ind_a, ind_b, domain, lag)
        if num_sites == 0:
            raise UndefinedEstimateError(f"lag {lag} has an empty lag closure on this domain")
        value = (num / num_sites) / (den_count / den_sites)
        out.append(ExtremogramEstimate(lag, value, num, num_sites, den_count, den_sites, False, threshold, (A, B)))
    return out


def bias_correct(estimates: Sequence[ExtremogramEstimate], regime: Regime | str) -> list[ExtremogramEstimate]:
    """Subtract the leading threshold bias ``(rho - 2A/B)(rho - 1) / (2 a A)`` for ray sets."""
    regime = Regime(regime)
    if regime is Regime.NONE:
        return [replace(e, bias_corrected=False) for e in estimates]
    if regime is Regime.UNSUPPORTED:
        raise ValidationError("no bias correction is available in the UNSUPPORTED regime")
    out = []
    for e in estimates:
        A, B = e.sets
        if not (A.is_ray and B.is_ray):
            raise ValidationError("the first-order bias correction is only available for ray sets")
        if e.threshold is None:
            raise ValidationError(f"estimate at lag {e.lag} carries no threshold")
        if e.bias_corrected:
            raise ValidationError(f"estimate at lag {e.lag} is already bias corrected")
        a = e.threshold.realized
        rho = e.value
        corrected = rho - (rho - 2.0 * A.lower / B.lower) * (rho - 1.0) / (2.0 * a * A.lower)
        out.append(replace(e, value=corrected, bias_corrected=True))
    return out


def regime_advise(n: int, w: int, d: int, beta1: float) -> Regime:
    """Which correction the rate exponent ``beta1`` of ``m_n = n^beta1`` calls for."""
    if w < 1 or d < w:
        raise ValidationError(f"need 1 <= w <= d, got w={w}, d={d}")
    upper = w / (2 * d)
    if not 0.0 < beta1 < upper:
        raise ValidationError(f"beta1 = {beta1} outside (0, w/(2d)) = (0, {upper:.6g})")
    if beta1 <= w / (5 * d):
        return Regime.UNSUPPORTED
    if beta1 <= w / (3 * d):
        return Regime.FIRST_ORDER
    return Regime.NONE


def beta1_from_threshold(threshold: float, n: int, d: int) -> float:
    """Exponent with ``a = m_n^d`` and ``m_n = n^beta1``."""
    if threshold <= 1 or n <= 1:
        raise ValidationError("need threshold > 1 and n > 1 to infer beta1")
    return math.log(threshold) / (d * math.log(n))


def resolve_regime(mode: str, threshold: float, n: int, w: int, d: int) -> Regime:
    """Map ``auto``/``on``/``off`` to a regime; ``auto`` follows :func:`regime_advise`.

    Thresholds so high that the implied ``beta1`` exceeds ``w/(2d)`` need no
    correction; below ``w/(5d)`` the first-order correction is applied with a
    warning since nothing better is available.
    """
    mode = str(mode).lower()
    if mode == "off":
        return Regime.NONE
    if mode == "on":
        return Regime.FIRST_ORDER
    if mode != "auto":
        raise ValidationError(f"bias-correction mode must be auto, on or off; got {mode!r}")
    beta1 = beta1_from_threshold(threshold, n, d)
    if beta1 >= w / (2 * d):
        return Regime.NONE
    regime = regime_advise(n, w, d, beta1)
    if regime is Regime.UNSUPPORTED:
        warnings.warn(f"beta1 = {beta1:.4f} is below w/(5d); applying the first-order correction anyway",
                      RuntimeWarning, stacklevel=2)
        return Regime.FIRST_ORDER
    return regime


def threshold_sweep(
    field: SpaceTimeField,
    lags: Iterable,
    levels: Sequence[float],
    A: IntervalSet = RAY,
    B: IntervalSet = RAY,
) -> list[dict]:
    """Estimates over several quantile levels with a per-lag stability measure.

    Each row holds the level, realised threshold, lag, value and ``change``:
    the absolute difference to the estimate at the previous (lower) level.
    """
    lags = list(lags)
    rows = []
    previous = None
    for level in sorted(levels):
        th = select_threshold(field, level)
        try:
            est = empirical_extremogram(field, lags, th, A, B)
        except UndefinedEstimateError:
            est = None
        values = [math.nan] * len(lags) if est is None else [e.value for e in est]
        for i, lag in enumerate(lags):
            change = math.nan if previous is None else abs(values[i] - previous[i])
            rows.append({"level": level, "threshold": th.realized, "lag": str(as_lag(lag, field.domain.q)),
                         "value": values[i], "change": change})
        previous = values
    return rows


_EST_TAIL = ["value", "num_count", "num_sites", "den_count", "den_sites", "corrected"]


def write_estimates(estimates: Sequence[ExtremogramEstimate], path) -> None:
    if not estimates:
        raise ValidationError("no estimates to write")
    q = len(estimates[0].lag.fixed_part)
    w = len(estimates[0].lag.increasing_part)
    header = [f"hf{j + 1}" for j in range(q)] + [f"hi{j + 1}" for j in range(w)] + _EST_TAIL
    with _open_text(path, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for e in estimates:
            writer.writerow(list(e.lag.vector) + [repr(float(e.value)), e.numerator_count, e.numerator_sites,
                                                   e.denominator_count, e.denominator_sites, int(e.bias_corrected)])


def read_estimates(path, sets: tuple[IntervalSet, IntervalSet] = (RAY, RAY)) -> list[ExtremogramEstimate]:
    """Read an estimates CSV; threshold metadata is not part of the format and comes back as ``None``."""
    with _open_text(path, "r") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty estimates file") from None
        q = sum(1 for c in header if c.startswith("hf"))
        w = sum(1 for c in header if c.startswith("hi"))
        expected = [f"hf{j + 1}" for j in range(q)] + [f"hi{j + 1}" for j in range(w)] + _EST_TAIL
        if header != expected or w < 1:
            raise ValidationError(f"{path}: header {header} is not a valid estimates header")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise ValidationError(f"{path}:{lineno}: expected {len(expected)} columns")
            try:
                vec = [int(c) for c in row[: q + w]]
                value = float(row[q + w])
                counts = [int(c) for c in row[q + w + 1 : q + w + 5]]
                corrected = bool(int(row[-1]))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if not math.isfinite(value):
                raise ValidationError(f"{path}:{lineno}: non-finite value")
            out.append(ExtremogramEstimate(Lag(tuple(vec[:q]), tuple(vec[q:])), value, *counts, corrected,
                                           None, sets))
    if not out:
        raise ValidationError(f"{path}: no estimates")
    return out
