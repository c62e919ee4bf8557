"""Generalised least squares fitting of dependence models to extremogram estimates.

The fitter works on the free parameters only (box entries with ``lo == hi``
are held fixed).  Free parameters are mapped to the unit cube and the
Nelder-Mead search runs on an unbounded variable folded back into ``[0, 1]``
by a triangle wave, which acts as a reflecting boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize
from scipy.special import ndtr
from scipy.stats import qmc

from .domain import as_lag, lag_norm
from .errors import ValidationError
from .extremogram import ExtremogramEstimate
from .models import (
    RAY,
    DependenceModel,
    Family,
    IntervalSet,
    _check_intrinsic,
    default_box,
    delta_values,
    extremogram_delta,
    param_names,
)

__all__ = [
    "WeightKind",
    "WeightMatrix",
    "GLSEResult",
    "JacobianReport",
    "IdentifiabilityReport",
    "weight_matrix",
    "weights_with_fallback",
    "glse_objective",
    "fit_glse",
    "jacobian_P",
    "identifiability_scan",
    "model_extremogram",
]


class WeightKind(str, Enum):
    IDENTITY = "IDENTITY"
    EXP_DECAY = "EXP_DECAY"
    EMPIRICAL = "EMPIRICAL"


@dataclass(frozen=True)
class WeightMatrix:
    kind: WeightKind
    diag: np.ndarray
    source: str
    lags: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        if diag.ndim != 1 or not np.all(np.isfinite(diag)) or np.any(diag <= 0):
            raise ValidationError("weight matrix diagonal must be finite and strictly positive")
        object.__setattr__(self, "diag", diag)

    def scaled(self, factor: float) -> "WeightMatrix":
        return WeightMatrix(self.kind, self.diag * factor, f"{self.source} x {factor}", self.lags)


def _lag_vectors(lags) -> np.ndarray:
    vecs = []
    for lag in lags:
        if isinstance(lag, ExtremogramEstimate):
            lag = lag.lag
        vecs.append(tuple(lag.vector) if hasattr(lag, "vector") else tuple(int(c) for c in lag))
    if not vecs:
        raise ValidationError("empty lag list")
    if len({len(v) for v in vecs}) != 1:
        raise ValidationError("lags of differing dimensions")
    return np.array(vecs, dtype=float)


def weight_matrix(kind, lags, estimates: Sequence[ExtremogramEstimate] | None = None,
                  norm="euclidean") -> WeightMatrix:
    """Diagonal weights: ones, ``exp(-||(h,u)||^2)`` or the estimates themselves."""
    kind = WeightKind(kind)
    vecs = _lag_vectors(lags)
    keys = tuple(tuple(int(c) for c in v) for v in vecs)
    if kind is WeightKind.IDENTITY:
        return WeightMatrix(kind, np.ones(len(vecs)), "identity", keys)
    if kind is WeightKind.EXP_DECAY:
        return WeightMatrix(kind, np.exp(-lag_norm(vecs, norm) ** 2), f"exp(-{norm} norm^2)", keys)
    if estimates is None:
        raise ValidationError("EMPIRICAL weights need extremogram estimates")
    if len(estimates) != len(vecs):
        raise ValidationError("EMPIRICAL weights: estimates and lags differ in length")
    for key, e in zip(keys, estimates):
        if tuple(e.lag.vector) != key:
            raise ValidationError(f"EMPIRICAL weights: estimate lag {e.lag} does not match lag {key}")
    diag = np.array([e.value for e in estimates], dtype=float)
    bad = [str(e.lag) for e in estimates if not e.value > 0]
    if bad:
        raise ValidationError(f"EMPIRICAL weights need strictly positive estimates; non-positive at {bad}")
    return WeightMatrix(kind, diag, "empirical extremogram", keys)


def weights_with_fallback(kind, estimates: Sequence[ExtremogramEstimate], fallback=None,
                          norm="euclidean") -> WeightMatrix:
    """EMPIRICAL weights when every estimate is positive, else ``fallback`` (if given).

    Empirical weights are only a valid choice with a positive diagonal; far
    lags on small domains often have zero estimates.
    """
    kind = WeightKind(kind)
    lags = [e.lag for e in estimates]
    if kind is WeightKind.EMPIRICAL and fallback is not None and any(not e.value > 0 for e in estimates):
        return weight_matrix(fallback, lags, estimates, norm)
    return weight_matrix(kind, lags, estimates, norm)


def model_extremogram(family, theta: Mapping[str, float], lags: np.ndarray,
                      A: IntervalSet = RAY, B: IntervalSet = RAY) -> np.ndarray:
    delta = delta_values(family, theta, lags)
    if A == B and A.is_ray:
        # equal rays reduce to the tail dependence coefficient; this is the fitter's hot path
        return 2.0 * ndtr(-np.sqrt(0.5 * delta))
    return extremogram_delta(delta, A, B)


def _split(estimates) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(estimates, tuple) and len(estimates) == 2 and not isinstance(estimates[0], ExtremogramEstimate):
        lags, values = estimates
        return _lag_vectors(lags), np.asarray(values, dtype=float)
    return _lag_vectors(estimates), np.array([e.value for e in estimates], dtype=float)


def _check_aligned(lags: np.ndarray, weights: WeightMatrix) -> None:
    if len(weights.diag) != len(lags):
        raise ValidationError(f"{len(weights.diag)} weights for {len(lags)} lags")
    if weights.lags and tuple(tuple(int(c) for c in v) for v in lags) != weights.lags:
        raise ValidationError("weight matrix lags are not aligned with the estimate lags")


def glse_objective(theta, estimates, weights: WeightMatrix, family=None,
                   A: IntervalSet = RAY, B: IntervalSet = RAY) -> float:
    """``g' V g`` with ``g`` the estimate minus model extremogram per lag.

    ``theta`` is a :class:`DependenceModel` or a parameter mapping (then
    ``family`` is required); ``estimates`` is a list of estimates or a
    ``(lags, values)`` tuple.
    """
    if isinstance(theta, DependenceModel):
        family, params = theta.family, theta.params
    else:
        if family is None:
            raise ValidationError("family required when theta is a plain mapping")
        family = Family(family)
        params = {k: float(v) for k, v in theta.items()}
        # validates names and intrinsic constraints; the fitter's box is not imposed here
        DependenceModel(family, params, {k: (v, v) for k, v in params.items()})
    lags, values = _split(estimates)
    _check_aligned(lags, weights)
    g = values - model_extremogram(family, params, lags, A, B)
    return float(np.sum(weights.diag * g * g))


@dataclass
class GLSEResult:
    family: Family
    theta_hat: dict[str, float]
    objective: float
    converged: bool
    n_starts: int
    best_start_index: int
    jacobian_rank_ok: bool
    jacobian_condition: float
    jacobian_rank: int = 0
    free: tuple[str, ...] = ()
    box: dict[str, tuple[float, float]] = field(default_factory=dict)
    n_evaluations: int = 0
    notes: list[str] = field(default_factory=list)

    def model(self) -> DependenceModel:
        return DependenceModel(self.family, self.theta_hat, self.box)

    def vector(self) -> np.ndarray:
        return np.array(list(self.theta_hat.values()))

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "theta_hat": dict(self.theta_hat),
            "objective": self.objective,
            "converged": self.converged,
            "n_starts": self.n_starts,
            "best_start_index": self.best_start_index,
            "jacobian_rank_ok": self.jacobian_rank_ok,
            "jacobian_rank": self.jacobian_rank,
            "jacobian_condition": self.jacobian_condition if math.isfinite(self.jacobian_condition) else None,
            "free": list(self.free),
            "box": {k: list(v) for k, v in self.box.items()},
            "n_evaluations": self.n_evaluations,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def _fold(z: np.ndarray) -> np.ndarray:
    """Triangle wave onto ``[0, 1]``: identity on ``[0, 1]``, mirrored outside."""
    t = np.mod(z, 2.0)
    return np.where(t > 1.0, 2.0 - t, t)


def _resolve_box(family, dim, box):
    names = param_names(family, dim)
    full = dict(default_box(family, dim))
    for k, v in (box or {}).items():
        if k not in names:
            raise ValidationError(f"box entry for unknown parameter {k!r}; expected {list(names)}")
        full[k] = (float(v[0]), float(v[1]))
    for k, (lo, hi) in full.items():
        if not lo <= hi:
            raise ValidationError(f"infeasible box for {k}: [{lo}, {hi}]")
        for v in (lo, hi):
            try:
                _check_intrinsic(k, v)
            except ValidationError as exc:
                raise ValidationError(f"infeasible box for {k}: {exc}") from None
    return names, full


def _infer_dim(family, lags: np.ndarray, dim):
    family = Family(family)
    d = lags.shape[1]
    if dim is not None and dim != d:
        raise ValidationError(f"lags have dimension {d}, expected {dim}")
    if family in (Family.ISO_FRAC_GEO_ANISO, Family.AXIS_ANISO_ROT) and d != 3:
        raise ValidationError(f"{family.value} needs three-dimensional lags")
    return d


def fit_glse(
    estimates,
    weights: WeightMatrix,
    family,
    box: Mapping[str, Sequence[float]] | None = None,
    starts: int = 16,
    rng: np.random.Generator | int | None = None,
    warm_start: Mapping[str, float] | None = None,
    A: IntervalSet = RAY,
    B: IntervalSet = RAY,
    restarts: int = 1,
    xatol: float = 1e-10,
    fatol: float = 1e-16,
    maxiter: int | None = None,
) -> GLSEResult:
    """Multi-start Nelder-Mead minimisation of the GLSE objective over the box.

    Starts are a warm start (if given, index 0) followed by ``starts``
    scrambled Sobol points in the box.  Each local search is restarted
    ``restarts`` times from its own end point with a fresh simplex.  The lowest
    objective wins, ties going to the lowest start index.
    """
    family = Family(family)
    lags, values = _split(estimates)
    _check_aligned(lags, weights)
    d = _infer_dim(family, lags, None)
    names, full_box = _resolve_box(family, d, box)
    free = tuple(k for k in names if full_box[k][0] < full_box[k][1])
    k = len(free)
    if len(lags) < k:
        raise ValidationError(f"{len(lags)} lags cannot identify {k} free parameters (need |H| >= k)")
    if starts < 0 or (starts == 0 and warm_start is None):
        raise ValidationError("need at least one start")
    lo = np.array([full_box[n][0] for n in free])
    width = np.array([full_box[n][1] - full_box[n][0] for n in free])
    base = {n: full_box[n][0] for n in names}
    diag = weights.diag
    n_eval = 0

    def theta_of(u):
        theta = dict(base)
        theta.update(zip(free, lo + width * u))
        return theta

    def objective_u(u):
        g = values - model_extremogram(family, theta_of(u), lags, A, B)
        return float(np.sum(diag * g * g))

    def objective_z(z):
        nonlocal n_eval
        n_eval += 1
        return objective_u(_fold(z))

    start_points = []
    if warm_start is not None:
        missing = [n for n in free if n not in warm_start]
        if missing:
            raise ValidationError(f"warm start lacks {missing}")
        ws = np.array([(float(warm_start[n]) - full_box[n][0]) for n in free]) / np.where(width > 0, width, 1.0)
        start_points.append(np.clip(ws, 0.0, 1.0))
    if k > 0 and starts > 0:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        # scipy spawns from the generator's SeedSequence, which would mutate caller state; hand it an integer
        sobol = qmc.Sobol(d=k, scramble=True, seed=int(gen.integers(2**63)))
        m = max(int(math.ceil(math.log2(starts))), 0)
        start_points.extend(sobol.random_base2(m)[:starts])
    elif k == 0:
        start_points = start_points[:1] or [np.zeros(0)]

    maxiter = maxiter or 400 * max(k, 1) ** 2 + 2000
    best = None
    for index, u0 in enumerate(start_points):
        if k == 0:
            f = objective_u(u0)
            n_eval += 1
            cand = (f, index, u0, True)
        else:
            f0 = objective_u(u0)
            z, success = u0.copy(), False
            size = 0.1
            for _ in range(restarts + 1):
                simplex = np.vstack([z] + [z + size * e for e in np.eye(k)])
                res = optimize.minimize(objective_z, z, method="Nelder-Mead",
                                        options={"initial_simplex": simplex, "xatol": xatol, "fatol": fatol,
                                                 "maxiter": maxiter, "maxfev": 2 * maxiter})
                z, success = res.x, bool(res.success)
                size = 0.01
            u = _fold(z)
            f = objective_u(u)
            improved = f < f0 or f0 == 0.0
            cand = (f, index, u, success and improved)
        if best is None or cand[0] < best[0]:
            best = cand
    f_best, best_index, u_best, ok = best
    theta_hat = theta_of(u_best)
    # fold() lands exactly on the box, but round-off in lo + width*u can step just outside
    for n in free:
        theta_hat[n] = float(min(max(theta_hat[n], full_box[n][0]), full_box[n][1]))

    notes = []
    low_alpha = [n for n in free if n.startswith("alpha") and full_box[n][0] < 1.0]
    if low_alpha:
        notes.append(f"box allows {', '.join(low_alpha)} < 1 where the model is not differentiable at zero "
                     "coordinates; the derivative-free search is unaffected but the Jacobian may be unreliable")
    if k > 0:
        jac = _jacobian(family, theta_hat, free, lags, A, B, full_box, step=1e-6, one_sided=True)
        rank_ok, cond, rank = jac.rank_ok, jac.condition, jac.rank
        if jac.one_sided:
            notes.append("estimate on the box boundary; Jacobian from one-sided differences there")
    else:
        rank_ok, cond, rank = True, 1.0, 0
    return GLSEResult(
        family=family,
        theta_hat=theta_hat,
        objective=float(f_best),
        converged=bool(ok),
        n_starts=len(start_points),
        best_start_index=int(best_index),
        jacobian_rank_ok=bool(rank_ok),
        jacobian_condition=float(cond),
        jacobian_rank=int(rank),
        free=free,
        box=full_box,
        n_evaluations=n_eval,
        notes=notes,
    )


@dataclass(frozen=True)
class JacobianReport:
    matrix: np.ndarray  # p x k, derivative of -rho in each free parameter
    names: tuple[str, ...]
    rank: int
    rank_ok: bool
    condition: float
    singular_values: np.ndarray
    one_sided: bool = False


def _jacobian(family, theta, names, lags, A, B, box, step, one_sided=False, eps=None) -> JacobianReport:
    p, k = len(lags), len(names)
    jac = np.empty((p, k))
    used_one_sided = False
    for j, n in enumerate(names):
        x = theta[n]
        h = step * max(1.0, abs(x))
        lo, hi = box[n] if box is not None else (-math.inf, math.inf)
        up, down = dict(theta), dict(theta)
        if x - h >= lo and x + h <= hi:
            up[n], down[n] = x + h, x - h
            denom = 2.0 * h
        elif not one_sided:
            raise ValidationError(f"{n} = {x} is within {h:.3g} of its box [{lo}, {hi}]")
        elif x + h <= hi:
            up[n], down[n], denom = x + h, x, h
            used_one_sided = True
        else:
            up[n], down[n], denom = x, x - h, h
            used_one_sided = True
        jac[:, j] = -(model_extremogram(family, up, lags, A, B) - model_extremogram(family, down, lags, A, B)) / denom
    sv = np.linalg.svd(jac, compute_uv=False)
    eps = np.finfo(float).eps if eps is None else eps
    tol = p * eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    cond = float(sv[0] / sv[-1]) if sv.size and sv[-1] > 0 else math.inf
    return JacobianReport(jac, tuple(names), rank, rank == k, cond, sv, used_one_sided)


def jacobian_P(theta, family=None, lags=None, A: IntervalSet = RAY, B: IntervalSet = RAY,
               step: float = 1e-6, box: Mapping[str, Sequence[float]] | None = None,
               names: Sequence[str] | None = None, eps: float | None = None) -> JacobianReport:
    """Central-difference Jacobian of ``-rho_theta`` over the lags, with numerical rank.

    The rank uses the SVD tolerance ``p * eps * sigma_max`` (``eps`` defaults
    to machine epsilon).  ``theta`` must lie at least one step inside the box.
    """
    if isinstance(theta, DependenceModel):
        family, params = theta.family, dict(theta.params)
        box = theta.box if box is None else box
    else:
        family, params = Family(family), {k: float(v) for k, v in theta.items()}
    if lags is None:
        raise ValidationError("lags required")
    vecs = _lag_vectors(lags)
    d = _infer_dim(family, vecs, None)
    _, full_box = _resolve_box(family, d, box) if box is not None else (None, None)
    names = tuple(names) if names is not None else tuple(params)
    return _jacobian(family, params, names, vecs, A, B, full_box, step, one_sided=False, eps=eps)


@dataclass(frozen=True)
class IdentifiabilityReport:
    min_distance: float
    theta_a: dict[str, float]
    theta_b: dict[str, float]
    flagged: bool
    n_pairs: int


def identifiability_scan(family, lags, A: IntervalSet = RAY, B: IntervalSet = RAY,
                         box: Mapping[str, Sequence[float]] | None = None, samples: int = 64,
                         rng: np.random.Generator | int | None = None, separation: float = 1e-3,
                         tol: float = 1e-14) -> IdentifiabilityReport:
    """Smallest extremogram distance ``sum_i (rho_1 - rho_2)^2`` over separated parameter pairs.

    Pairs are all pairs of ``samples`` uniform draws from the box plus, for each
    draw and free coordinate, the draw paired with a copy whose coordinate is
    redrawn, which exposes single-parameter non-identifiability.
    """
    if samples < 2:
        raise ValidationError("identifiability scan needs at least two samples")
    family = Family(family)
    vecs = _lag_vectors(lags)
    d = _infer_dim(family, vecs, None)
    names, full_box = _resolve_box(family, d, box)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    lo = np.array([full_box[n][0] for n in names])
    hi = np.array([full_box[n][1] for n in names])
    draws = lo + (hi - lo) * gen.random((samples, len(names)))
    pairs = [(i, j) for i in range(samples) for j in range(i + 1, samples)]
    extra = []
    for i in range(samples):
        for c in range(len(names)):
            if hi[c] > lo[c]:
                alt = draws[i].copy()
                alt[c] = lo[c] + (hi[c] - lo[c]) * gen.random()
                extra.append(alt)
    points = np.vstack([draws] + extra) if extra else draws
    cursor = samples
    for i in range(samples):
        for c in range(len(names)):
            if hi[c] > lo[c]:
                pairs.append((i, cursor))
                cursor += 1
    rho = np.array([model_extremogram(family, dict(zip(names, p)), vecs, A, B) for p in points])
    best = (math.inf, None, None)
    n_pairs = 0
    for i, j in pairs:
        if np.max(np.abs(points[i] - points[j])) < separation:
            continue
        n_pairs += 1
        dist = float(np.sum((rho[i] - rho[j]) ** 2))
        if dist < best[0]:
            best = (dist, i, j)
    if best[1] is None:
        return IdentifiabilityReport(math.inf, {}, {}, False, 0)
    dist, i, j = best
    return IdentifiabilityReport(dist, dict(zip(names, points[i].tolist())), dict(zip(names, points[j].tolist())),
                                 dist <= tol, n_pairs)
