"""Observation domains ``F x {1..n}^w``, lags, lag closures and field storage.

Sites are enumerated in a fixed canonical order: the fixed sites in the
order given (outer loop), then the increasing grid in row-major order with
1-based coordinates (inner loop).  Every counting loop and file format in
the package relies on this order.
"""

from __future__ import annotations

import csv
import gzip
import io
import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import FieldFormatError, ValidationError

__all__ = [
    "ObservationDomain",
    "Lag",
    "SpaceTimeField",
    "build_domain",
    "square_sites",
    "lag_closure",
    "rectangular_closure_size",
    "as_lag",
    "lag_norm",
    "load_field",
    "save_field",
]


@dataclass(frozen=True)
class ObservationDomain:
    fixed_sites: tuple[tuple[int, ...], ...]
    n: int
    w: int

    @property
    def q(self) -> int:
        return len(self.fixed_sites[0])

    @property
    def d(self) -> int:
        return self.q + self.w

    @property
    def n_fixed(self) -> int:
        return len(self.fixed_sites)

    @property
    def n_sites(self) -> int:
        return self.n_fixed * self.n**self.w

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the value cube: ``(|F|, n, ..., n)``."""
        return (self.n_fixed,) + (self.n,) * self.w

    def fixed_array(self) -> np.ndarray:
        return np.array(self.fixed_sites, dtype=np.int64).reshape(self.n_fixed, self.q)

    def increasing_coords(self) -> np.ndarray:
        """Row-major coordinates of ``{1..n}^w``, shape ``(n**w, w)``."""
        axes = [np.arange(1, self.n + 1, dtype=np.int64)] * self.w
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def sites(self) -> np.ndarray:
        """All site coordinates in canonical order, shape ``(n_sites, d)``."""
        fixed = self.fixed_array()
        inc = self.increasing_coords()
        m = inc.shape[0]
        return np.hstack([np.repeat(fixed, m, axis=0), np.tile(inc, (self.n_fixed, 1))])

    @cached_property
    def _fixed_lookup(self) -> dict[tuple[int, ...], int]:
        return {f: i for i, f in enumerate(self.fixed_sites)}

    def fixed_index(self) -> dict[tuple[int, ...], int]:
        return dict(self._fixed_lookup)

    def site_index(self, coords: Sequence[int]) -> int:
        """Canonical index of a site given its full coordinate vector."""
        coords = tuple(int(c) for c in coords)
        if len(coords) != self.d:
            raise ValidationError(f"site has {len(coords)} coordinates, domain has d={self.d}")
        f = coords[: self.q]
        try:
            fi = self._fixed_lookup[f]
        except KeyError:
            raise ValidationError(f"{f} is not a fixed site") from None
        idx = 0
        for c in coords[self.q :]:
            if not 1 <= c <= self.n:
                raise ValidationError(f"increasing coordinate {c} outside 1..{self.n}")
            idx = idx * self.n + (c - 1)
        return fi * self.n**self.w + idx

    def with_n(self, n: int) -> "ObservationDomain":
        return build_domain(self.fixed_sites, n, self.w)

    def to_dict(self) -> dict:
        return {"fixed_sites": [list(f) for f in self.fixed_sites], "n": self.n, "w": self.w}


def build_domain(fixed_sites: Iterable[Sequence[int]], n: int, w: int) -> ObservationDomain:
    """Validate and build ``F x {1..n}^w``.

    ``fixed_sites=[()]`` (a single empty coordinate) gives a pure increasing grid.
    """
    sites = [tuple(int(c) for c in f) for f in fixed_sites]
    if not sites:
        raise ValidationError("fixed_sites must be non-empty; use [()] for a pure increasing grid")
    q = len(sites[0])
    if any(len(f) != q for f in sites):
        raise ValidationError("dimension mismatch among fixed sites")
    if len(set(sites)) != len(sites):
        dup = next(f for f in sites if sites.count(f) > 1)
        raise ValidationError(f"duplicate fixed site {dup}")
    if q == 0 and len(sites) != 1:
        raise ValidationError("with q = 0 the fixed part must be the single empty site")
    if int(n) < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if int(w) < 1:
        raise ValidationError(f"w must be >= 1, got {w}")
    return ObservationDomain(tuple(sites), int(n), int(w))


def square_sites(*sides: int) -> list[tuple[int, ...]]:
    """Row-major integer grid ``{1..s1} x ... x {1..sq}``; no sides gives ``[()]``."""
    return [tuple(p) for p in itertools.product(*(range(1, s + 1) for s in sides))]


@dataclass(frozen=True)
class Lag:
    fixed_part: tuple[int, ...]
    increasing_part: tuple[int, ...]

    @property
    def vector(self) -> tuple[int, ...]:
        return self.fixed_part + self.increasing_part

    def __neg__(self) -> "Lag":
        return Lag(tuple(-c for c in self.fixed_part), tuple(-c for c in self.increasing_part))

    def __str__(self) -> str:
        return "(" + ",".join(str(c) for c in self.vector) + ")"


def as_lag(lag, q: int, w: int | None = None) -> Lag:
    """Coerce a ``Lag`` or a plain integer vector into a ``Lag`` with q fixed coordinates."""
    if isinstance(lag, Lag):
        if len(lag.fixed_part) != q or (w is not None and len(lag.increasing_part) != w):
            raise ValidationError(f"lag {lag} does not match domain dimensions q={q}, w={w}")
        return lag
    vec = tuple(int(c) for c in lag)
    if w is not None and len(vec) != q + w:
        raise ValidationError(f"lag {vec} has dimension {len(vec)}, expected {q + w}")
    if len(vec) < q:
        raise ValidationError(f"lag {vec} shorter than the fixed dimension q={q}")
    return Lag(vec[:q], vec[q:])


_NORMS = {
    "euclidean": lambda x: np.sqrt(np.sum(x * x, axis=-1)),
    "max": lambda x: np.max(np.abs(x), axis=-1, initial=0.0),
    "manhattan": lambda x: np.sum(np.abs(x), axis=-1),
}


def lag_norm(vectors, norm="euclidean") -> np.ndarray:
    """Norm of lag vectors along the last axis; ``norm`` is a name or a callable."""
    x = np.asarray(vectors, dtype=float)
    if callable(norm):
        return np.asarray(norm(x), dtype=float)
    try:
        return _NORMS[norm](x)
    except KeyError:
        raise ValidationError(f"unknown norm {norm!r}; choose from {sorted(_NORMS)}") from None


def lag_closure(sites, h) -> np.ndarray:
    """Sites ``z`` with ``z + h`` also a site, in input order."""
    z = np.asarray(sites, dtype=np.int64)
    h = np.asarray(h, dtype=np.int64).ravel()
    if z.ndim == 1:
        z = z.reshape(-1, 1) if h.size == 1 else z.reshape(1, -1)
    if z.shape[1] != h.size:
        raise ValidationError(f"lag of dimension {h.size} applied to sites of dimension {z.shape[1]}")
    members = {tuple(row) for row in z.tolist()}
    keep = [tuple((row + h).tolist()) in members for row in z]
    return z[np.array(keep, dtype=bool)] if len(keep) else z


def rectangular_closure_size(n: int, h) -> int:
    """``|Z(h)|`` for ``Z = {1..n}^w``: the product of ``max(n - |h_j|, 0)``."""
    return int(math.prod(max(n - abs(int(c)), 0) for c in np.ravel(h)))


class SpaceTimeField:
    """Real values on the sites of a domain, stored in canonical order (read-only)."""

    def __init__(self, domain: ObservationDomain, values):
        v = np.array(values, dtype=np.float64).ravel()
        if v.size != domain.n_sites:
            raise ValidationError(f"field has {v.size} values, domain has {domain.n_sites} sites")
        v.setflags(write=False)
        self.domain = domain
        self.values = v

    def cube(self) -> np.ndarray:
        return self.values.reshape(self.domain.shape)

    def block(self, starts: Sequence[int], length: int) -> "SpaceTimeField":
        """Sub-field ``F x prod_j [starts_j, starts_j + length)`` (0-based starts)."""
        if len(starts) != self.domain.w:
            raise ValidationError("one start per increasing dimension required")
        idx = (slice(None),) + tuple(slice(s, s + length) for s in starts)
        sub = self.cube()[idx]
        if any(dim != length for dim in sub.shape[1:]):
            raise ValidationError("block leaves the grid")
        return SpaceTimeField(self.domain.with_n(length), sub)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpaceTimeField):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"SpaceTimeField(n_sites={self.domain.n_sites}, q={self.domain.q}, n={self.domain.n}, w={self.domain.w})"


class _OwningGzip(gzip.GzipFile):
    """GzipFile that also closes the file object it writes to."""

    def __init__(self, fileobj):
        super().__init__(filename="", mode="wb", fileobj=fileobj, mtime=0)
        self._owned = fileobj

    def close(self):
        try:
            super().close()
        finally:
            self._owned.close()


def _open_text(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        # mtime=0 and an empty embedded name keep gzip output byte-stable across runs and paths
        if "w" in mode:
            raw = _OwningGzip(open(path, "wb"))
            return io.TextIOWrapper(raw, encoding="utf-8", newline="")
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def _header(domain: ObservationDomain) -> list[str]:
    return [f"f{j + 1}" for j in range(domain.q)] + [f"i{j + 1}" for j in range(domain.w)] + ["value"]


def save_field(field: SpaceTimeField, path) -> None:
    """Write ``f1..fq,i1..iw,value`` rows in canonical order; values via ``repr`` (round-trip exact)."""
    sites = field.domain.sites()
    with _open_text(path, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(field.domain))
        for coords, value in zip(sites.tolist(), field.values.tolist()):
            writer.writerow(coords + [repr(value)])


def load_field(path, domain: ObservationDomain, positive: bool = False) -> SpaceTimeField:
    """Read a field CSV; rows may come in any order and are matched by coordinates."""
    expected = _header(domain)
    values = np.full(domain.n_sites, np.nan)
    seen = np.zeros(domain.n_sites, dtype=bool)
    with _open_text(path, "r") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise FieldFormatError(f"{path}: empty file") from None
        if header != expected:
            raise FieldFormatError(f"{path}: header {header} != expected {expected}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise FieldFormatError(f"{path}:{lineno}: expected {len(expected)} columns, got {len(row)}")
            try:
                coords = [int(c) for c in row[:-1]]
            except ValueError:
                raise FieldFormatError(f"{path}:{lineno}: unparseable coordinate in {row[:-1]}") from None
            try:
                value = float(row[-1])
            except ValueError:
                value = math.nan
            if not math.isfinite(value):
                raise FieldFormatError(f"{path}:{lineno}: unparseable value {row[-1]!r}")
            if positive and value <= 0:
                raise FieldFormatError(f"{path}:{lineno}: non-positive value {value}")
            try:
                idx = domain.site_index(coords)
            except ValidationError:
                raise FieldFormatError(f"{path}:{lineno}: extra site {tuple(coords)} not in domain") from None
            if seen[idx]:
                raise FieldFormatError(f"{path}:{lineno}: duplicate site {tuple(coords)}")
            seen[idx] = True
            values[idx] = value
    if not seen.all():
        missing = tuple(domain.sites()[np.argmin(seen)].tolist())
        raise FieldFormatError(f"{path}: missing site {missing} ({int((~seen).sum())} missing in total)")
    return SpaceTimeField(domain, values)
