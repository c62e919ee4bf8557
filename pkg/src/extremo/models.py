"""Dependence-function families and Brown-Resnick closed forms.

Every closed form reduces to the standard normal CDF, so a single
implementation (``scipy.special.ndtr``, erfc based) is used throughout and
upper tails are always computed as ``ndtr(-x)`` rather than ``1 - ndtr(x)``.

Lags are space-time vectors ``(h_1, ..., h_{d-1}, u)`` with the time
coordinate last.  All evaluation functions accept a single lag or a
``(p, d)`` array of lags.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .domain import lag_norm
from .errors import SingularLagError, ValidationError

__all__ = [
    "Family",
    "DependenceModel",
    "IntervalSet",
    "RAY",
    "param_names",
    "default_box",
    "family_dim",
    "delta_values",
    "dependence",
    "std_normal_cdf",
    "tilde_phi",
    "tilde_phi_delta",
    "exponent_measure_v2",
    "v2_delta",
    "true_extremogram",
    "extremogram_delta",
    "tail_dependence",
    "extremal_coefficient",
    "pre_asymptotic_extremogram",
    "pre_asymptotic_delta",
    "first_order_bias",
    "check_variogram_growth",
    "GrowthCheck",
    "additive_groups",
]

HALF_PI_OPEN = math.nextafter(math.pi / 2, 0.0)


class Family(str, Enum):
    ISO_FRAC = "ISO_FRAC"
    ISO_FRAC_GEO_ANISO = "ISO_FRAC_GEO_ANISO"
    AXIS_ANISO = "AXIS_ANISO"
    AXIS_ANISO_ROT = "AXIS_ANISO_ROT"
    TIME_SHIFTED = "TIME_SHIFTED"


# models with a fixed planar rotation or dilution only exist for d = 3
_FIXED_DIM = {Family.ISO_FRAC_GEO_ANISO: 3, Family.AXIS_ANISO_ROT: 3}


def family_dim(family, params: Mapping[str, float] | Sequence[str] | None = None) -> int | None:
    """Lag dimension implied by a family (and, for axis families, its parameter names)."""
    family = Family(family)
    if family in _FIXED_DIM:
        return _FIXED_DIM[family]
    if family is Family.ISO_FRAC or params is None:
        return None
    return sum(1 for k in params if k.startswith("C"))


def param_names(family, dim: int | None = 3) -> tuple[str, ...]:
    family = Family(family)
    if family is Family.ISO_FRAC:
        return ("C1", "C2", "alpha1", "alpha2")
    if family is Family.ISO_FRAC_GEO_ANISO:
        return ("C1", "C2", "alpha1", "alpha2", "c", "phi")
    if dim is None or dim < 1:
        raise ValidationError(f"{family.value} needs the lag dimension d")
    if family is Family.AXIS_ANISO_ROT and dim != 3:
        raise ValidationError("AXIS_ANISO_ROT is defined for d = 3 only")
    cs = tuple(f"C{j}" for j in range(1, dim + 1))
    alphas = tuple(f"alpha{j}" for j in range(1, dim + 1))
    if family is Family.AXIS_ANISO:
        return cs + alphas
    if family is Family.AXIS_ANISO_ROT:
        return cs + alphas + ("phi",)
    return cs + alphas + tuple(f"tau{j}" for j in range(1, dim))


def _kind(name: str) -> str:
    if name.startswith("alpha"):
        return "alpha"
    if name.startswith("tau"):
        return "tau"
    if name == "phi":
        return "angle"
    return "positive"


def default_box(family, dim: int | None = 3) -> dict[str, tuple[float, float]]:
    """Compact default parameter box used by the fitter."""
    box = {}
    for name in param_names(family, dim):
        kind = _kind(name)
        if kind == "alpha":
            box[name] = (0.01, 2.0)
        elif kind == "tau":
            box[name] = (-5.0, 5.0)
        elif kind == "angle":
            box[name] = (0.0, HALF_PI_OPEN)
        elif name == "c":
            box[name] = (0.05, 10.0)
        else:
            box[name] = (1e-3, 20.0)
    return box


def _check_intrinsic(name: str, value: float) -> None:
    kind = _kind(name)
    if not math.isfinite(value):
        raise ValidationError(f"parameter {name} = {value} is not finite")
    if kind == "alpha" and not 0.0 < value <= 2.0:
        raise ValidationError(f"parameter {name} = {value} violates alpha in (0,2]")
    if kind == "positive" and not value > 0.0:
        raise ValidationError(f"parameter {name} = {value} must be > 0")
    if kind == "angle" and not 0.0 <= value < math.pi / 2:
        raise ValidationError(f"parameter {name} = {value} violates phi in [0, pi/2)")


@dataclass(frozen=True)
class DependenceModel:
    family: Family
    params: dict[str, float]
    box: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        dim = family_dim(family, self.params)
        names = param_names(family, dim if dim is not None else 3)
        missing = [k for k in names if k not in self.params]
        extra = [k for k in self.params if k not in names]
        if missing or extra:
            raise ValidationError(
                f"{family.value} expects parameters {list(names)}; missing {missing}, unknown {extra}"
            )
        params = {k: float(self.params[k]) for k in names}
        box = dict(default_box(family, dim if dim is not None else 3))
        for k, bounds in self.box.items():
            if k not in names:
                raise ValidationError(f"box entry for unknown parameter {k!r}")
            lo, hi = float(bounds[0]), float(bounds[1])
            if lo > hi:
                raise ValidationError(f"box for {k} is empty: [{lo}, {hi}]")
            box[k] = (lo, hi)
        for k, v in params.items():
            _check_intrinsic(k, v)
            lo, hi = box[k]
            if not lo <= v <= hi:
                raise ValidationError(f"parameter {k} = {v} outside its box [{lo}, {hi}]")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "box", box)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.params)

    @property
    def dim(self) -> int | None:
        return family_dim(self.family, self.params)

    def vector(self) -> np.ndarray:
        return np.array(list(self.params.values()))

    def with_params(self, values) -> "DependenceModel":
        if isinstance(values, Mapping):
            new = dict(self.params)
            new.update(values)
        else:
            new = dict(zip(self.names, (float(v) for v in values)))
        return DependenceModel(self.family, new, self.box)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "params": dict(self.params),
            "box": {k: list(v) for k, v in self.box.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Mapping) -> "DependenceModel":
        unknown = set(data) - {"family", "params", "box"}
        if unknown:
            raise ValidationError(f"unknown model keys {sorted(unknown)}")
        return cls(data["family"], dict(data["params"]), {k: tuple(v) for k, v in data.get("box", {}).items()})

    @classmethod
    def from_json(cls, text: str) -> "DependenceModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class IntervalSet:
    """Open interval ``(lower, upper)``; ``upper = inf`` gives a ray."""

    lower: float
    upper: float = math.inf

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if not (0.0 < lo < hi) or math.isnan(hi):
            raise ValidationError(f"invalid interval set ({lo}, {hi}); need 0 < lower < upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def is_ray(self) -> bool:
        return math.isinf(self.upper)

    def contains(self, x):
        x = np.asarray(x)
        return (x > self.lower) & (x < self.upper)

    def to_list(self):
        return [self.lower, None if self.is_ray else self.upper]


RAY = IntervalSet(1.0)


# ---------------------------------------------------------------------------
# dependence functions, vectorised over lags


def _lags(lag) -> tuple[np.ndarray, bool]:
    arr = np.asarray(lag, dtype=float)
    single = arr.ndim == 1
    return np.atleast_2d(arr), single


def _rot(phi):
    c, s = math.cos(phi), math.sin(phi)
    return c, s


def delta_values(family, theta: Mapping[str, float], lags: np.ndarray) -> np.ndarray:
    """Dependence function for a ``(p, d)`` lag array; no validation (hot path)."""
    family = Family(family)
    h = lags[:, :-1]
    u = np.abs(lags[:, -1])
    if family is Family.ISO_FRAC:
        return theta["C1"] * np.sqrt(np.sum(h * h, axis=1)) ** theta["alpha1"] + theta["C2"] * u ** theta["alpha2"]
    if family is Family.ISO_FRAC_GEO_ANISO:
        c, s = _rot(theta["phi"])
        x1 = c * h[:, 0] - s * h[:, 1]
        x2 = theta["c"] * (s * h[:, 0] + c * h[:, 1])
        return theta["C1"] * np.sqrt(x1 * x1 + x2 * x2) ** theta["alpha1"] + theta["C2"] * u ** theta["alpha2"]
    dim = lags.shape[1]
    if family is Family.AXIS_ANISO_ROT:
        c, s = _rot(theta["phi"])
        x1 = np.abs(c * h[:, 0] - s * h[:, 1])
        x2 = np.abs(s * h[:, 0] + c * h[:, 1])
        return theta["C1"] * x1 ** theta["alpha1"] + theta["C2"] * x2 ** theta["alpha2"] + theta["C3"] * u ** theta["alpha3"]
    out = theta[f"C{dim}"] * u ** theta[f"alpha{dim}"]
    for j in range(dim - 1):
        x = h[:, j]
        if family is Family.TIME_SHIFTED:
            x = x - lags[:, -1] * theta[f"tau{j + 1}"]
        out = out + theta[f"C{j + 1}"] * np.abs(x) ** theta[f"alpha{j + 1}"]
    return out


def _check_dim(model: DependenceModel, lags: np.ndarray) -> None:
    d = lags.shape[1]
    want = model.dim
    if want is not None and d != want:
        raise ValidationError(f"{model.family.value} model expects lags of dimension {want}, got {d}")
    if d < 1:
        raise ValidationError("empty lag")
    if model.family is Family.ISO_FRAC_GEO_ANISO and d != 3:
        raise ValidationError("geometric anisotropy is defined for two spatial dimensions")


def dependence(model: DependenceModel, lag):
    """``delta_theta(h, u)``; scalar for one lag, array for a ``(p, d)`` array."""
    arr, single = _lags(lag)
    _check_dim(model, arr)
    out = delta_values(model.family, model.params, arr)
    return float(out[0]) if single else out


def additive_groups(model: DependenceModel, d: int):
    """Split ``delta`` into independent linear-projection groups.

    Returns ``(P, fn)`` pairs with ``P`` a ``(d, k)`` projection matrix such that
    ``delta(v) = sum_g fn_g(v @ P_g)``.  Each term is itself a valid variogram,
    so ``W`` is a sum of independent Gaussian processes on the projected
    coordinates; the simulator factorises the small per-group matrices.
    """
    fam, th = model.family, model.params
    eye = np.eye(d)
    spatial = eye[:, : d - 1]
    time = eye[:, d - 1 :]

    def power(C, a):
        return lambda x: C * np.abs(x[:, 0]) ** a

    def iso(x):
        return th["C1"] * np.sqrt(np.sum(x * x, axis=1)) ** th["alpha1"]

    def geo(x):
        c, s = _rot(th["phi"])
        x1 = c * x[:, 0] - s * x[:, 1]
        x2 = th["c"] * (s * x[:, 0] + c * x[:, 1])
        return th["C1"] * np.sqrt(x1 * x1 + x2 * x2) ** th["alpha1"]

    def rot(x):
        c, s = _rot(th["phi"])
        return (th["C1"] * np.abs(c * x[:, 0] - s * x[:, 1]) ** th["alpha1"]
                + th["C2"] * np.abs(s * x[:, 0] + c * x[:, 1]) ** th["alpha2"])

    if fam is Family.ISO_FRAC:
        groups = [(spatial, iso)] if d > 1 else []
        return groups + [(time, power(th["C2"], th["alpha2"]))]
    if fam is Family.ISO_FRAC_GEO_ANISO:
        return [(spatial, geo), (time, power(th["C2"], th["alpha2"]))]
    if fam is Family.AXIS_ANISO_ROT:
        return [(spatial, rot), (time, power(th["C3"], th["alpha3"]))]
    groups = []
    for j in range(d - 1):
        col = eye[:, j : j + 1].copy()
        if fam is Family.TIME_SHIFTED:
            # |h_j - u tau_j| is a function of the projection s_j - tau_j t
            col[d - 1, 0] = -th[f"tau{j + 1}"]
        groups.append((col, power(th[f"C{j + 1}"], th[f"alpha{j + 1}"])))
    groups.append((time, power(th[f"C{d}"], th[f"alpha{d}"])))
    return groups


# ---------------------------------------------------------------------------
# closed forms on the dependence value


def std_normal_cdf(x):
    return ndtr(x)


def tilde_phi_delta(delta, ratio, upper: bool = False):
    """``Phi(log(ratio)/sqrt(2 delta) + sqrt(delta/2))``; ``upper`` returns ``1 - `` that value.

    ``delta = 0`` is only defined for ``ratio = 1`` (value 1/2).
    """
    delta = np.asarray(delta, dtype=float)
    ratio = np.asarray(ratio, dtype=float)
    if np.any(ratio <= 0):
        raise ValidationError("ratio must be > 0")
    zero = delta == 0
    if np.any(zero & (ratio != 1.0)):
        raise SingularLagError("tilde-Phi is singular at zero dependence with ratio != 1")
    safe = np.where(zero, 1.0, delta)
    arg = np.log(ratio) / np.sqrt(2.0 * safe) + np.sqrt(safe / 2.0)
    arg = np.where(zero, 0.0, arg)
    out = ndtr(-arg) if upper else ndtr(arg)
    return out[()] if out.ndim == 0 else out


def tilde_phi(model: DependenceModel, lag, ratio):
    return tilde_phi_delta(dependence(model, lag), ratio)


def v2_delta(delta, y1, y2):
    """Bivariate exponent measure ``V_2`` as a function of the dependence value."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if np.any(y1 <= 0) or np.any(y2 <= 0):
        raise ValidationError("V2 needs y1, y2 > 0")
    return tilde_phi_delta(delta, y2 / y1) / y1 + tilde_phi_delta(delta, y1 / y2) / y2


def exponent_measure_v2(model: DependenceModel, lag, y1, y2):
    return v2_delta(dependence(model, lag), y1, y2)


def _v2_general(delta: np.ndarray, x: float, y: float) -> np.ndarray:
    """``V_2`` allowing infinite arguments and zero dependence (complete dependence)."""
    if math.isinf(x) and math.isinf(y):
        return np.zeros_like(delta)
    if math.isinf(x):
        return np.full_like(delta, 1.0 / y)
    if math.isinf(y):
        return np.full_like(delta, 1.0 / x)
    zero = delta == 0
    safe = np.where(zero, 1.0, delta)
    val = v2_delta(safe, x, y)
    return np.where(zero, 1.0 / min(x, y), val)


def _prefactor(A: IntervalSet) -> float:
    if A.is_ray:
        return A.lower
    return A.lower * A.upper / (A.upper - A.lower)


def extremogram_delta(delta, A: IntervalSet = RAY, B: IntervalSet = RAY):
    """Brown-Resnick extremogram as a function of the dependence value(s)."""
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    if A.is_ray and B.is_ray:
        a, b = A.lower, B.lower
        pos = np.where(d == 0, 1.0, d)
        # ray formula; delta = 0 handled through complete dependence below
        val = a * (tilde_phi_delta(pos, b / a, upper=True) / a + tilde_phi_delta(pos, a / b, upper=True) / b)
        full = a * (1.0 / a + 1.0 / b - 1.0 / min(a, b))
        out = np.where(d == 0, full, val)
    else:
        out = _prefactor(A) * (
            -_v2_general(d, A.upper, B.upper)
            + _v2_general(d, A.upper, B.lower)
            + _v2_general(d, A.lower, B.upper)
            - _v2_general(d, A.lower, B.lower)
        )
    if A == B:
        out = np.where(d == 0, 1.0, out)
    return out if np.ndim(delta) else float(out[0])


def true_extremogram(model: DependenceModel, lag, A: IntervalSet = RAY, B: IntervalSet = RAY):
    return extremogram_delta(dependence(model, lag), A, B)


def tail_dependence(model: DependenceModel, lag):
    out = 2.0 * ndtr(-np.sqrt(np.asarray(dependence(model, lag)) / 2.0))
    return out[()] if np.ndim(out) == 0 else out


def extremal_coefficient(model: DependenceModel, lag):
    out = 2.0 * ndtr(np.sqrt(np.asarray(dependence(model, lag)) / 2.0))
    return out[()] if np.ndim(out) == 0 else out


def _joint_exceed(delta: np.ndarray, x: float, y: float) -> np.ndarray:
    """``1 - F(x, y)`` with ``F`` the bivariate Frechet CDF, computed through expm1."""
    return -np.expm1(-_v2_general(delta, x, y))


def pre_asymptotic_delta(delta, A: IntervalSet, B: IntervalSet, threshold: float):
    """``P(X0/a in A, Xh/a in B) / P(X0/a in A)`` for unit Frechet margins."""
    a = float(threshold)
    if not a > 0 or not math.isfinite(a):
        raise ValidationError(f"threshold must be a positive finite number, got {threshold}")
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    alo, ahi, blo, bhi = a * A.lower, a * A.upper, a * B.lower, a * B.upper
    # rectangle probability written with G = 1 - F to avoid cancellation
    num = (-_joint_exceed(d, ahi, bhi) + _joint_exceed(d, ahi, blo)
           + _joint_exceed(d, alo, bhi) - _joint_exceed(d, alo, blo))
    inf = np.zeros(1)
    den = _joint_exceed(inf, alo, math.inf) - _joint_exceed(inf, ahi, math.inf)
    out = num / den
    if A == B:
        out = np.where(d == 0, 1.0, out)
    return out if np.ndim(delta) else float(out[0])


def pre_asymptotic_extremogram(model: DependenceModel, lag, A: IntervalSet, B: IntervalSet, threshold: float):
    return pre_asymptotic_delta(dependence(model, lag), A, B, threshold)


def first_order_bias(rho, A: IntervalSet, B: IntervalSet, threshold: float):
    """Leading bias term ``(rho - 2A/B)(rho - 1) / (2 a A)`` for ray sets."""
    if not (A.is_ray and B.is_ray):
        raise ValidationError("the first-order bias term is only available for ray sets")
    rho = np.asarray(rho, dtype=float)
    out = (rho - 2.0 * A.lower / B.lower) * (rho - 1.0) / (2.0 * threshold * A.lower)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# growth diagnostic


@dataclass(frozen=True)
class GrowthCheck:
    passed: bool
    worst_lag: tuple[int, ...]
    worst_margin: float  # delta(v) - C ||v_I||^alpha at the worst lag
    n_checked: int


def check_variogram_growth(
    model: DependenceModel,
    C: float,
    alpha: float,
    fixed_lag_set: Sequence[Sequence[int]],
    radius: int,
    w: int = 1,
    norm="euclidean",
    rtol: float = 1e-12,
) -> GrowthCheck:
    """Check ``delta(v) >= C ||v_I||^alpha`` on ``L x (Z^w ball of the given radius)``.

    The increasing coordinates are the last ``w`` entries of each lag.
    """
    if radius < 1:
        raise ValidationError("radius must be >= 1")
    fixed = [tuple(int(c) for c in v) for v in fixed_lag_set] or [()]
    rng = range(-radius, radius + 1)
    inc = np.array(list(np.ndindex(*(len(rng),) * w)), dtype=np.int64) - radius
    inc = inc[lag_norm(inc, norm) <= radius + 1e-12]
    lags = np.array([f + tuple(v) for f in fixed for v in inc.tolist()], dtype=float)
    delta = dependence(model, lags)
    bound = C * lag_norm(lags[:, lags.shape[1] - w:], norm) ** alpha
    margin = delta - bound
    slack = rtol * np.maximum(np.abs(delta), np.abs(bound))
    worst = int(np.argmin(margin))
    return GrowthCheck(
        passed=bool(np.all(margin >= -slack)),
        worst_lag=tuple(int(c) for c in lags[worst]),
        worst_margin=float(margin[worst]),
        n_checked=len(lags),
    )
