"""Exact simulation of Brown-Resnick fields by extremal functions.

The Gaussian process ``W`` (``W(0) = 0``, stationary increments, semivariogram
``delta``) is factorised once.  For the extremal function at site ``x`` the
algorithm needs ``W(s) - W(x)``, and because increments are stationary the
same factor serves every pin site: ``G = W - W[x]`` has covariance
``delta(s-x) + delta(t-x) - delta(s-t)``.

When ``delta`` splits into a sum over independent coordinate groups
(``delta(v) = sum_g delta_g(v_g)``), ``W`` is the sum of independent
per-group processes and only the small per-group matrices are factorised.
The law is identical; the dense single-factor route is kept for coupled
models and as a cross-check.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .domain import ObservationDomain, SpaceTimeField
from .errors import NumericalError, ValidationError
from .models import DependenceModel, additive_groups, dependence

__all__ = [
    "GaussianFactor",
    "FieldSampler",
    "build_factor",
    "build_sampler",
    "covariance_matrix",
    "sample_pinned",
    "simulate_brown_resnick",
    "max_sites",
    "DEFAULT_MAX_SITES",
    "MAX_ARRIVALS",
]

DEFAULT_MAX_SITES = 20000
MAX_ARRIVALS = 10**6
_JITTER_LADDER = (0.0, 1e-10, 1e-8)
_CHUNK = 512


def max_sites() -> int:
    """Cap on dense factorisation size; ``EXTREMO_MAX_SITES`` overrides the default."""
    raw = os.environ.get("EXTREMO_MAX_SITES")
    if raw is None:
        return DEFAULT_MAX_SITES
    try:
        cap = int(raw)
    except ValueError:
        raise ValidationError(f"EXTREMO_MAX_SITES={raw!r} is not an integer") from None
    if cap < 1:
        raise ValidationError("EXTREMO_MAX_SITES must be positive")
    return cap


@dataclass(frozen=True)
class GaussianFactor:
    sites: np.ndarray  # (N, k) coordinates
    chol: np.ndarray  # lower triangular, chol @ chol.T = Gamma + jitter * I
    jitter: float

    @property
    def n_sites(self) -> int:
        return self.sites.shape[0]


def covariance_matrix(delta_fn, sites: np.ndarray) -> np.ndarray:
    """``Gamma(s, t) = delta(s) + delta(t) - delta(s - t)`` built in row chunks."""
    sites = np.asarray(sites, dtype=float)
    n = sites.shape[0]
    own = delta_fn(sites)
    gamma = np.empty((n, n))
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        diff = (sites[start:stop, None, :] - sites[None, :, :]).reshape(-1, sites.shape[1])
        gamma[start:stop] = own[start:stop, None] + own[None, :] - delta_fn(diff).reshape(stop - start, n)
    return gamma


def _factorise(delta_fn, sites: np.ndarray, cap: int) -> GaussianFactor:
    n = sites.shape[0]
    if n > cap:
        raise ValidationError(
            f"dense factorisation of {n} sites exceeds the cap of {cap} (set EXTREMO_MAX_SITES to override)"
        )
    gamma = covariance_matrix(delta_fn, sites)
    scale = max(np.trace(gamma) / n, np.finfo(float).tiny)
    for rel in _JITTER_LADDER:
        jitter = rel * scale
        try:
            chol = linalg.cholesky(gamma + jitter * np.eye(n), lower=True, check_finite=True)
        except linalg.LinAlgError:
            continue
        return GaussianFactor(np.asarray(sites, dtype=float), chol, jitter)
    raise NumericalError(f"covariance of {n} sites is not positive definite even with jitter 1e-8*trace/N")


def build_factor(model: DependenceModel, domain_or_sites, cap: int | None = None) -> GaussianFactor:
    """Dense factor of ``Gamma`` over all sites of a domain (or an explicit site array)."""
    if isinstance(domain_or_sites, ObservationDomain):
        sites = domain_or_sites.sites().astype(float)
    else:
        sites = np.atleast_2d(np.asarray(domain_or_sites, dtype=float))
    return _factorise(lambda x: dependence(model, x), sites, max_sites() if cap is None else cap)


def sample_pinned(factor: GaussianFactor, pin_index: int, rng: np.random.Generator) -> np.ndarray:
    """One draw of ``W(s) - W(s_pin)`` over the factor's sites."""
    if not 0 <= pin_index < factor.n_sites:
        raise ValidationError(f"pin index {pin_index} outside 0..{factor.n_sites - 1}")
    w = factor.chol @ rng.standard_normal(factor.n_sites)
    return w - w[pin_index]


class FieldSampler:
    """Draws ``W`` over a domain's sites from one or more independent group factors."""

    def __init__(self, model: DependenceModel, domain: ObservationDomain, separable: bool = True,
                 cap: int | None = None, batch: int = 64):
        self.domain = domain
        self.sites = domain.sites().astype(float)
        self.batch = batch
        cap = max_sites() if cap is None else cap
        d = domain.d
        if separable:
            groups = additive_groups(model, d)
        else:
            groups = [(np.eye(d), lambda x: dependence(model, x))]
        self.groups = []
        for proj_matrix, fn in groups:
            proj = self.sites @ proj_matrix
            uniq, inverse = np.unique(proj, axis=0, return_inverse=True)
            factor = _factorise(fn, uniq, cap)
            self.groups.append((factor, np.asarray(inverse).ravel(), fn))
        self._buffer = None
        self._pos = 0

    def reset(self) -> None:
        self._buffer = None
        self._pos = 0

    def _refill(self, rng) -> None:
        total = None
        for factor, inverse, _ in self.groups:
            part = factor.chol @ rng.standard_normal((factor.n_sites, self.batch))
            part = part[inverse]
            total = part if total is None else total + part
        self._buffer = total
        self._pos = 0

    def draw_w(self, rng: np.random.Generator) -> np.ndarray:
        if self._buffer is None or self._pos == self.batch:
            self._refill(rng)
        col = self._buffer[:, self._pos]
        self._pos += 1
        return col

    def delta_from(self, k: int) -> np.ndarray:
        """``delta(s - s_k)`` for every site ``s``."""
        total = None
        for factor, inverse, fn in self.groups:
            part = fn(factor.sites - factor.sites[inverse[k]])[inverse]
            total = part if total is None else total + part
        return total


def build_sampler(model: DependenceModel, domain: ObservationDomain, separable: bool = True,
                  cap: int | None = None) -> FieldSampler:
    return FieldSampler(model, domain, separable=separable, cap=cap)


def simulate_brown_resnick(model: DependenceModel, domain: ObservationDomain, rng: np.random.Generator,
                           sampler: FieldSampler | None = None, separable: bool = True,
                           return_stats: bool = False):
    """One exact draw of the Brown-Resnick field on ``domain``.

    Sites are visited in canonical order.  For site ``k`` Poisson arrivals
    ``zeta`` are generated while ``1/zeta`` exceeds the current maximum at
    ``s_k``; each yields ``Y = exp(W - W(s_k) - delta(. - s_k))`` which is kept
    only if it does not exceed the running maximum at any earlier site.
    """
    if sampler is None:
        sampler = FieldSampler(model, domain, separable=separable)
    elif sampler.domain != domain:
        raise ValidationError("sampler was built for a different domain")
    sampler.reset()
    n = domain.n_sites
    z = np.zeros(n)
    n_draws = 0
    n_accepted = 0
    for k in range(n):
        zeta = rng.exponential()
        arrivals = 0
        drift = None
        while 1.0 / zeta > z[k]:
            arrivals += 1
            if arrivals > MAX_ARRIVALS:
                raise NumericalError(f"more than {MAX_ARRIVALS} arrivals at site {k}")
            w = sampler.draw_w(rng)
            if drift is None:
                drift = sampler.delta_from(k)
            y = np.exp(w - w[k] - drift) / zeta
            n_draws += 1
            # exp underflow to 0 far from s_k is harmless; overflow is not
            if not np.all(np.isfinite(y)):
                raise NumericalError(f"non-finite extremal function at site {k}")
            if k == 0 or np.all(y[:k] < z[:k]):
                np.maximum(z, y, out=z)
                n_accepted += 1
            zeta += rng.exponential()
    field = SpaceTimeField(domain, z)
    if return_stats:
        return field, {"spectral_functions": n_draws, "extremal_functions": n_accepted}
    return field
