"""Nonconventional sums and sliding-window curve families.

A path stores ``X_1, X_2, ...`` with ``X_k`` at position ``k - 1``.  Prefix
sums are arrays of shape ``(n + 1, d)`` with the zero vector in row 0.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import check_positive_int, check_probability_vector
from .exceptions import OffsetOutOfRange, PathTooShort, SeedCollision, ValidationError, WindowTooShort

CENTERED_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Observable:
    """Bounded function ``F: S^ell -> R^d`` stored as a dense table.

    ``table`` has shape ``(S,) * ell + (d,)``; ``bound_D`` is ``max |F|`` in
    the Euclidean norm.  ``mean`` is the expectation
    under the product of ``reference`` measures when one is given.
    """

    table: np.ndarray
    reference: np.ndarray = None
    ell: int = field(init=False)
    d: int = field(init=False)
    bound_D: float = field(init=False)
    mean: np.ndarray = field(init=False)
    centered: bool = field(init=False)

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim < 2:
            raise ValidationError("table must have at least one state axis and one output axis")
        S = t.shape[0]
        if any(s != S for s in t.shape[:-1]):
            raise ValidationError(f"state axes of table must have equal length, got {t.shape[:-1]}")
        if not np.all(np.isfinite(t)):
            raise ValidationError("observable table must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "ell", t.ndim - 1)
        object.__setattr__(self, "d", t.shape[-1])
        # Euclidean sup norm, so that |beta| > D is outside the range of every average
        object.__setattr__(self, "bound_D", float(np.max(np.linalg.norm(t.reshape(-1, t.shape[-1]), axis=1))))
        if self.reference is None:
            mean = None
        else:
            mu = check_probability_vector(self.reference, size=S, tol=1e-10)
            object.__setattr__(self, "reference", mu)
            mean = _product_mean(t, mu)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "centered", mean is not None and bool(np.all(np.abs(mean) <= CENTERED_TOL)))

    @property
    def state_count(self):
        return self.table.shape[0]

    def flat_table(self):
        """Table reshaped to ``(S**ell, d)`` in product-chain state order."""
        return self.table.reshape(-1, self.d)

    @classmethod
    def from_state_values(cls, values, reference=None):
        """``ell = 1`` observable ``F(x) = values[x]``; scalar values give ``d = 1``."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        return cls(v, reference)

    @classmethod
    def product(cls, values, ell, reference=None):
        """Scalar observable ``F(x_1, ..., x_ell) = values[x_1] * ... * values[x_ell]``."""
        v = np.asarray(values, dtype=float)
        t = v
        for _ in range(ell - 1):
            t = np.multiply.outer(t, v)
        return cls(t[..., None], reference)


def _product_mean(table, mu):
    t = table
    for _ in range(table.ndim - 1):
        t = np.tensordot(mu, t, axes=(0, 0))
    return t


def center_observable(F, mu):
    """Return ``F - Fbar`` with ``Fbar`` the mean under ``mu`` in every argument."""
    mu = check_probability_vector(mu, size=F.state_count, tol=1e-10)
    mean = _product_mean(F.table, mu)
    return Observable(F.table - mean, mu)


class IndexMaps:
    """Index maps ``q_1, ..., q_ell`` used to pick the arguments of each summand.

    Each entry is either an int ``i`` (meaning ``q(m) = i*m``) or a vectorized
    callable on 1-based integer arrays.
    """

    def __init__(self, maps):
        self.maps = tuple(maps)
        if not self.maps:
            raise ValidationError("at least one index map is required")
        k = 0
        for i, q in enumerate(self.maps, start=1):
            if isinstance(q, (int, np.integer)) and q == i:
                k += 1
            else:
                break
        self.linear_prefix = k

    @classmethod
    def linear(cls, ell):
        return cls(range(1, ell + 1))

    @property
    def ell(self):
        return len(self.maps)

    @property
    def is_linear(self):
        return self.linear_prefix == self.ell

    def evaluate(self, n):
        """Array of shape ``(ell, n)`` holding ``q_i(m)`` for ``m = 1..n``."""
        m = np.arange(1, n + 1, dtype=np.int64)
        rows = []
        for q in self.maps:
            if isinstance(q, (int, np.integer)):
                rows.append(int(q) * m)
            else:
                r = np.asarray(q(m), dtype=np.int64)
                if r.shape != m.shape or (n > 1 and np.any(np.diff(r) <= 0)) or np.any(r < 1):
                    raise ValidationError("index maps must be positive and strictly increasing")
                rows.append(r)
        return np.stack(rows)

    def __repr__(self):
        return f"IndexMaps({list(self.maps)!r})"


def _check_q(q, F):
    q = IndexMaps.linear(F.ell) if q is None else q
    if q.ell != F.ell:
        raise ValidationError(f"observable takes {F.ell} arguments but {q.ell} index maps were given")
    return q


def _flat_index(coords, S):
    idx = np.zeros(coords.shape[1], dtype=np.int64)
    for row in coords:
        idx = idx * S + row
    return idx


def _states(path):
    return np.asarray(getattr(path, "states", path))


def prefix_sums_nonconventional(path, F, n, q=None):
    """``Sigma_0..Sigma_n`` with increments ``F(X_{q_1(k)}, ..., X_{q_ell(k)})``."""
    n = check_positive_int(n, "n")
    q = _check_q(q, F)
    X = _states(path)
    idx = q.evaluate(n)
    need = int(idx.max())
    if X.shape[0] < need:
        raise PathTooShort(f"path has {X.shape[0]} states but index {need} is required")
    inc = F.flat_table()[_flat_index(X[idx - 1], F.state_count)]
    out = np.zeros((n + 1, F.d))
    np.cumsum(inc, axis=0, out=out[1:])
    return out


def independent_copies_prefix_sums(paths, F, n, q=None):
    """``T_0..T_n`` where coordinate ``i`` is read from ``paths[i]``."""
    n = check_positive_int(n, "n")
    q = _check_q(q, F)
    if len(paths) != F.ell:
        raise ValidationError(f"need {F.ell} paths, got {len(paths)}")
    seeds = [getattr(p, "seed", None) for p in paths]
    named = [s for s in seeds if s is not None]
    if len(set(named)) != len(named):
        raise SeedCollision(f"independent copies need distinct seeds, got {seeds}")
    idx = q.evaluate(n)
    coords = np.empty_like(idx)
    for i, path in enumerate(paths):
        X = _states(path)
        need = int(idx[i, -1]) if idx.shape[1] else 0
        if X.shape[0] < need:
            raise PathTooShort(f"copy {i + 1} has {X.shape[0]} states but index {need} is required")
        coords[i] = X[idx[i] - 1]
    inc = F.flat_table()[_flat_index(coords, F.state_count)]
    out = np.zeros((n + 1, F.d))
    np.cumsum(inc, axis=0, out=out[1:])
    return out


def window_length(n, c):
    """``floor(c * ln n)``; raises when the window would be empty."""
    if n < 2:
        raise ValidationError(f"n must be >= 2, got {n}")
    if not c > 0:
        raise ValidationError(f"c must be positive, got {c}")
    x = c * math.log(n)
    # absorb rounding in products like (1/ln 2) * ln 2
    b = math.floor(x + 1e-9)
    if b < 1:
        raise WindowTooShort(f"floor(c ln n) = floor({x:.6g}) < 1")
    return b


@dataclass(frozen=True, eq=False)
class StepCurve:
    """Curve on ``[0, 1]`` stored at ``u = j/N``, anchored at the origin."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValidationError("a curve needs at least two grid points")
        if np.any(v[0] != 0):
            raise ValidationError("curves must start at the origin")
        if not np.all(np.isfinite(v)):
            raise ValidationError("curve values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def grid_size(self):
        return self.values.shape[0] - 1

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def slopes(self):
        return np.diff(self.values, axis=0) * self.grid_size

    @classmethod
    def linear(cls, slope, grid_size=1):
        z = np.atleast_1d(np.asarray(slope, dtype=float))
        u = np.arange(grid_size + 1) / grid_size
        return cls(u[:, None] * z[None, :])

    @classmethod
    def from_slopes(cls, slopes):
        z = np.asarray(slopes, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        N = z.shape[0]
        v = np.zeros((N + 1, z.shape[1]))
        np.cumsum(z / N, axis=0, out=v[1:])
        return cls(v)


@dataclass(frozen=True, eq=False)
class CurveFamily:
    """Curves sharing one grid, stored as an array of shape ``(count, N + 1, d)``."""

    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValidationError("curve family values must have shape (count, N+1, d)")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i):
        return StepCurve(self.values[i])

    @property
    def grid_size(self):
        return self.values.shape[1] - 1

    @property
    def d(self):
        return self.values.shape[2]

    @classmethod
    def from_curves(cls, curves, provenance=None):
        curves = list(curves)
        grids = {c.grid_size for c in curves}
        if len(grids) > 1:
            raise ValidationError(f"curves live on different grids: {sorted(grids)}")
        return cls(np.stack([c.values for c in curves]), dict(provenance or {}))


def window_curve(prefix, m, n, c):
    """Normalized window increment ``(Sigma_{m+j} - Sigma_m) / b`` for ``j = 0..b``."""
    b = window_length(n, c)
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim == 1:
        prefix = prefix[:, None]
    if m < 0 or m + b > n or m + b >= prefix.shape[0]:
        raise OffsetOutOfRange(f"offset {m} with window {b} does not fit in 0..{n}")
    return StepCurve((prefix[m:m + b + 1] - prefix[m]) / b)


def window_family(prefix, n, c):
    """All window curves ``m = 0..n-b`` as one :class:`CurveFamily`."""
    b = window_length(n, c)
    prefix = np.asarray(prefix, dtype=float)
    if prefix.ndim == 1:
        prefix = prefix[:, None]
    if prefix.shape[0] < n + 1:
        raise OffsetOutOfRange(f"prefix covers 0..{prefix.shape[0] - 1}, need 0..{n}")
    if b > n:
        raise OffsetOutOfRange(f"window {b} longer than n = {n}")
    win = sliding_window_view(prefix[:n + 1], b + 1, axis=0)  # (count, d, b+1)
    vals = (win - prefix[:n - b + 1, :, None]) / b
    vals = np.ascontiguousarray(vals.transpose(0, 2, 1))
    return CurveFamily(vals, {"n": n, "c": c, "b": b, "offsets": [0, n - b]})


def window_maxima(prefix, b, component=0):
    """``max_k (Sigma_{k+b} - Sigma_k) / b`` over ``k = 0..n-b`` for one component."""
    s = np.asarray(prefix, dtype=float)
    if s.ndim == 2:
        s = s[:, component]
    if b >= s.shape[0]:
        raise OffsetOutOfRange(f"window {b} does not fit in prefix of length {s.shape[0]}")
    return float(np.max(s[b:] - s[:-b]) / b)


def streaming_window_max(path, F, n, b, q=None, chunk=1 << 20, component=0):
    """Same value as ``window_maxima(prefix_sums_nonconventional(...), b)`` in O(chunk + b) float memory.

    The path itself (one small integer per step) is still read in full; only
    the float prefix sums are never materialized.
    """
    n = check_positive_int(n, "n")
    q = _check_q(q, F)
    X = _states(path)
    table = F.flat_table()[:, component]
    tail = np.zeros(1)  # the last (at most b) prefix sums seen so far
    best = -math.inf
    start = 1
    while start <= n:
        stop = min(n, start + chunk - 1)
        m = np.arange(start, stop + 1, dtype=np.int64)
        rows = [int(qi) * m if isinstance(qi, (int, np.integer)) else np.asarray(qi(m), dtype=np.int64)
                for qi in q.maps]
        coords = np.stack(rows)
        if coords.max() > X.shape[0]:
            raise PathTooShort(f"path has {X.shape[0]} states but index {int(coords.max())} is required")
        inc = table[_flat_index(X[coords - 1], F.state_count)]
        s = np.concatenate([tail, tail[-1] + np.cumsum(inc)])
        if s.shape[0] > b:
            best = max(best, float(np.max(s[b:] - s[:-b])))
        tail = s[-b:]
        start = stop + 1
    return best / b


# -- CSV --------------------------------------------------------------------------


def _fmt(x):
    return format(float(x), ".17g")


def family_to_csv(family, header=None):
    """CurveFamily as CSV: one comment line of metadata, then ``m, j, v0..``."""
    buf = io.StringIO()
    meta = dict(header if header is not None else family.provenance)
    meta.setdefault("d", family.d)
    meta.pop("offsets", None)
    buf.write("# " + ",".join(f"{k}={v}" for k, v in meta.items()) + "\r\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["m", "j"] + [f"v{i}" for i in range(family.d)])
    offset0 = family.provenance.get("offsets", [0])[0]
    for m, curve in enumerate(family.values):
        for j, point in enumerate(curve):
            w.writerow([m + offset0, j] + [_fmt(x) for x in point])
    return buf.getvalue()


def family_from_csv(text):
    lines = text.splitlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        for item in lines[0][1:].strip().split(","):
            if "=" in item:
                k, v = item.split("=", 1)
                meta[k.strip()] = v.strip()
        lines = lines[1:]
    rows = list(csv.reader(lines))[1:]
    if not rows:
        return CurveFamily(np.zeros((0, 1, int(meta.get("d", 1)))), meta)
    arr = np.array([[float(x) for x in r] for r in rows])
    ms = np.unique(arr[:, 0]).astype(int)
    N = int(arr[:, 1].max())
    d = arr.shape[1] - 2
    vals = arr[:, 2:].reshape(len(ms), N + 1, d)
    return CurveFamily(vals, meta)
