"""Level sets of the action functional and uniform distances to them.

Distances are measured between piecewise-linear interpolants of grid curves
in the sup norm over ``u`` (max-abs over components when ``d > 1``).

For scalar curves the distance to ``{S <= a}`` is found by bisection on the
tube radius.  Each feasibility question ("is there a lattice path inside the
tube with action at most ``a``?") is a dynamic program whose value functions
stay convex, so one transition is a min-plus convolution of two convex
sequences and costs a merge of their slope sequences.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..exceptions import BadResolution, NetExplosion, SizeCapExceeded, ValidationError
from ..sums import CurveFamily, StepCurve
from . import _dp
from .rate import INFINITE, action

DEFAULT_NET_CAP = 2_000_000
DENSE_STATE_CAP = 4_000


def default_tube_tol(evaluator):
    return 1e-3 * max(evaluator.bound_D_, 1e-12)


# -- slope tables -----------------------------------------------------------------


class SlopeTable:
    """Exact ``I`` at equispaced scalar nodes on ``[-D, D]`` with safe bounds in between.

    ``upper`` linearly interpolates the nodes (a chord, so never below the
    convex ``I``).  ``reach`` returns an interval guaranteed to contain
    ``{beta: I(beta) <= s}``.
    """

    def __init__(self, evaluator, nodes=2001):
        D = evaluator.bound_D_
        self.z = np.linspace(-D, D, nodes)
        self.values = evaluator.rate_grid(self.z)
        self.finite = np.isfinite(self.values)
        self._safe = np.where(self.finite, self.values, 0.0)
        self._cell_ok = self.finite[:-1] & self.finite[1:]

    def upper(self, z):
        z = np.asarray(z, dtype=float)
        # nodes are equispaced, so the cell index is arithmetic
        h = self.z[1] - self.z[0]
        pos = (z - self.z[0]) / h
        k = np.clip(np.floor(pos).astype(np.int64), 0, self.z.size - 2)
        t = pos - k
        out = self._safe[k] * (1 - t) + self._safe[k + 1] * t
        # any cell touching an infinite node (or outside [-D, D]) is treated as infinite
        ok = self._cell_ok[k] & (z >= self.z[0]) & (z <= self.z[-1])
        return np.where(ok, out, INFINITE)

    def reach(self, s):
        """Arrays ``(lo, hi)`` bracketing the sublevel set ``{I <= s}`` for each ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        zero = int(np.argmin(np.abs(self.z)))
        v = self.values
        hi = np.empty(s.shape)
        lo = np.empty(s.shape)
        pos_v, pos_z = v[zero:], self.z[zero:]
        neg_v, neg_z = v[:zero + 1][::-1], self.z[:zero + 1][::-1]
        for i, si in enumerate(s):
            over = np.flatnonzero(pos_v > si)
            hi[i] = pos_z[over[0]] if over.size else pos_z[-1]
            over = np.flatnonzero(neg_v > si)
            lo[i] = neg_z[over[0]] if over.size else neg_z[-1]
        return lo, hi


def slope_table(evaluator, nodes=2001):
    key = ("slope_table", nodes)
    cache = evaluator.__dict__.setdefault("aux_cache_", {})
    if key not in cache:
        cache[key] = SlopeTable(evaluator, nodes)
    return cache[key]


def _step_costs(evaluator, N, q):
    """``(k_lo, w)``: per-step action ``I(N k q)/N`` for the finite range of integer ``k``."""
    key = ("step_costs", N, q)
    cache = evaluator.__dict__.setdefault("aux_cache_", {})
    if key not in cache:
        D = evaluator.bound_D_
        K = int(math.floor(D / (N * q) + 1e-9))
        ks = np.arange(-K, K + 1)
        w = evaluator.rate_grid(ks * (N * q)) / N
        fin = np.flatnonzero(np.isfinite(w))
        cache[key] = (int(ks[fin[0]]), w[fin[0]:fin[-1] + 1].copy())
    return cache[key]


# -- feasibility and distance (scalar curves) -------------------------------------


def _require_centered(evaluator):
    # the zero curve must lie in every level set; screening witnesses shrink towards it
    pi = evaluator.product_model_.stationary
    mean = pi @ evaluator.values_
    if np.max(np.abs(mean)) > 1e-10:
        raise ValidationError(f"level-set distances need a centered observable, mean is {mean.tolist()}")


def _resolution(evaluator, tube_tol, quantum):
    _require_centered(evaluator)
    tube_tol = default_tube_tol(evaluator) if tube_tol is None else float(tube_tol)
    q = tube_tol / 4 if quantum is None else float(quantum)
    if not tube_tol > 0 or not q > 0:
        raise BadResolution("tube_tol and quantum must be positive")
    if q > tube_tol:
        raise BadResolution(f"quantum {q} is coarser than tube_tol {tube_tol}")
    return tube_tol, q


def _bisect(feasible, lo, hi, width):
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def dist_to_level_set(evaluator, curve, a, tube_tol=None, quantum=None):
    """Uniform distance from ``curve`` to ``{eta: eta_0 = 0, S(eta) <= a}`` on the curve's grid."""
    if not a > 0:
        raise ValidationError(f"action budget must be positive, got {a}")
    tube_tol, q = _resolution(evaluator, tube_tol, quantum)
    curve = curve if isinstance(curve, StepCurve) else StepCurve(curve)
    if action(evaluator, curve) <= a:
        return 0.0
    if curve.d != 1:
        return _dense_distance_nd(evaluator, curve, a, tube_tol, q)
    g = curve.values[:, 0]
    k_lo, w = _step_costs(evaluator, curve.grid_size, q)
    return _dp.tube_distance(g, 0.0, float(np.max(np.abs(g))), tube_tol / 2, q, k_lo, w, a)


def _dense_distance_nd(evaluator, curve, a, tube_tol, q):
    """Vector curves: dense DP over the product lattice of each sup-norm tube."""
    v = curve.values
    N, d = curve.grid_size, curve.d

    def feasible(delta):
        per_axis = int(2 * delta / q) + 2
        if per_axis ** d > DENSE_STATE_CAP:
            raise SizeCapExceeded(f"dense tube DP needs {per_axis ** d} states per step (cap {DENSE_STATE_CAP})")
        pos = np.zeros((1, d))
        cost = np.zeros(1)
        for j in range(1, N + 1):
            axes = [np.arange(math.ceil((v[j, i] - delta) / q - 1e-9),
                              math.floor((v[j, i] + delta) / q + 1e-9) + 1) * q for i in range(d)]
            if any(ax.size == 0 for ax in axes):
                return False
            new = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
            slopes = (new[:, None, :] - pos[None, :, :]) * N
            rates = np.array([[evaluator.rate(s) for s in row] for row in slopes]) / N
            cost = np.min(cost[None, :] + rates, axis=1)
            keep = cost <= a + 1e-12
            if not keep.any():
                return False
            pos, cost = new[keep], cost[keep]
        return True

    return _bisect(feasible, 0.0, float(np.max(np.abs(v))), tube_tol / 2)


# -- bounds and batched maxima over families ------------------------------------


def distance_lower_bounds(values, table, a):
    """Per-curve lower bounds from ``(j/N) I(eta_j N/j) <= S(eta) <= a`` (Jensen on ``[0, j/N]``)."""
    V = np.asarray(values)[..., 0]
    N = V.shape[1] - 1
    j = np.arange(1, N + 1)
    lo, hi = table.reach(a * N / j)
    lo, hi = lo * j / N, hi * j / N
    gap = np.maximum(V[:, 1:] - hi[None, :], lo[None, :] - V[:, 1:])
    return np.maximum(gap.max(axis=1), 0.0)


def _knot_interpolant(V, K):
    N = V.shape[1] - 1
    knots = np.unique(np.append(np.arange(0, N + 1, K), N))
    u = np.arange(N + 1)
    seg = np.clip(np.searchsorted(knots, u, side="right") - 1, 0, knots.size - 2)
    t = (u - knots[seg]) / (knots[seg + 1] - knots[seg])
    eta = V[:, knots[seg]] * (1 - t) + V[:, knots[seg + 1]] * t
    slopes = np.diff(V[:, knots], axis=1) * N / np.diff(knots)
    return eta, slopes, np.diff(knots) / N


def distance_upper_bounds(values, table, a, spacings=None):
    """Per-curve upper bounds from explicit witnesses inside the level set.

    Witnesses are scaled knot interpolants of the curve itself; their action
    is bounded above with chord interpolation of ``I``.
    """
    V = np.asarray(values)[..., 0]
    N = V.shape[1] - 1
    best = np.max(np.abs(V), axis=1)
    if spacings is None:
        spacings = sorted({max(1, N // k) for k in (2, 4, 8, 16)})
    for K in spacings:
        eta, slopes, lengths = _knot_interpolant(V, K)

        def act(t):
            return (table.upper(slopes * t[:, None]) * lengths[None, :]).sum(axis=1)

        lo = np.zeros(V.shape[0])
        hi = np.ones(V.shape[0])
        ok = act(hi) <= a
        lo[ok] = 1.0
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            good = act(mid) <= a
            lo = np.where(good, mid, lo)
            hi = np.where(good, hi, mid)
        cand = np.max(np.abs(V - lo[:, None] * eta), axis=1)
        best = np.minimum(best, cand)
    return best


@dataclass(frozen=True)
class FamilyDistance:
    value: float
    argmax: int
    exact_solves: int
    certified_by_bounds: int


def max_dist_to_level_set(evaluator, family, a, tube_tol=None, quantum=None):
    """``max`` over a scalar curve family of the distance to ``{S <= a}``.

    Curves are screened with cheap lower/upper bounds; a curve only reaches
    the tube DP when its upper bound exceeds the running maximum, and only a
    curve that is infeasible at the running maximum triggers a full bisection.
    """
    tube_tol, q = _resolution(evaluator, tube_tol, quantum)
    V = family.values if isinstance(family, CurveFamily) else np.asarray(family)
    if V.shape[0] == 0:
        raise ValidationError("empty curve family")
    if V.shape[2] != 1:
        vals = [dist_to_level_set(evaluator, StepCurve(c), a, tube_tol, q) for c in V]
        k = int(np.argmax(vals))
        return FamilyDistance(float(vals[k]), k, len(vals), 0)
    table = slope_table(evaluator)
    lb = distance_lower_bounds(V, table, a)
    ub = distance_upper_bounds(V, table, a)
    N = V.shape[1] - 1
    k_lo, w = _step_costs(evaluator, N, q)
    todo = np.flatnonzero(ub > lb.max())
    todo = todo[np.argsort(-lb[todo], kind="stable")]
    best, arg, solves = _dp.max_scan(V[:, :, 0], todo, ub, float(lb.max()), int(np.argmax(lb)),
                                     tube_tol / 2, q, k_lo, w, a)
    return FamilyDistance(best, arg, solves, int(V.shape[0] - solves))


def within_distance(evaluator, values, a, delta, tube_tol=None, quantum=None):
    """Boolean mask: is each scalar curve closer than ``delta`` to ``{S <= a}``?"""
    tube_tol, q = _resolution(evaluator, tube_tol, quantum)
    V = np.asarray(values)
    table = slope_table(evaluator)
    lb = distance_lower_bounds(V, table, a)
    ub = distance_upper_bounds(V, table, a)
    out = ub < delta
    undecided = np.flatnonzero(~out & (lb < delta))
    N = V.shape[1] - 1
    k_lo, w = _step_costs(evaluator, N, q)
    # open ball: feasible slightly inside delta
    out[undecided] = _dp.tube_feasible_batch(V[undecided, :, 0], delta - tube_tol / 2, q, k_lo, w, a)
    return out


# -- epsilon-nets of level sets ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class LevelSetNet:
    """Finite set of piecewise-linear curves with ``M`` equal segments inside ``{S <= a}``."""

    a: float
    eps: float
    segments: int
    pitch: float
    slopes: np.ndarray  # (count, M, d)

    def __len__(self):
        return self.slopes.shape[0]

    @property
    def values(self):
        """Breakpoint values, shape ``(count, M + 1, d)``."""
        out = np.zeros((self.slopes.shape[0], self.segments + 1, self.slopes.shape[2]))
        np.cumsum(self.slopes / self.segments, axis=1, out=out[:, 1:])
        return out

    def curve(self, i):
        return StepCurve(self.values[i])

    def radius(self):
        return float(np.max(np.abs(self.values))) if len(self) else 0.0


def _lattice(D, pitch, d):
    k = int(math.floor(D / pitch + 1e-9))
    axis = np.arange(-k, k + 1) * pitch
    if d == 1:
        return axis[:, None]
    pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return pts[np.max(np.abs(pts), axis=1) <= D + 1e-12]


def level_set_net(evaluator, a, eps, M=6, pitch=None, cap=DEFAULT_NET_CAP):
    """Enumerate lattice-slope curves with mean ``I`` at most ``a``, then thin to an ``eps/2``-separated set."""
    if not (a > 0 and eps > 0):
        raise ValidationError("a and eps must be positive")
    if M < 1:
        raise ValidationError("M must be at least 1")
    pitch = M * eps / 2 if pitch is None else float(pitch)
    lat = _lattice(evaluator.bound_D_, pitch, evaluator.d_)
    cost = np.array([evaluator.rate(z) for z in lat]) / M
    usable = np.isfinite(cost) & (cost <= a + 1e-9)
    lat, cost = lat[usable], cost[usable]
    # order by sup norm so the zero slope comes first and the zero curve is always kept
    order = np.lexsort(tuple(lat.T[::-1]) + (np.max(np.abs(lat), axis=1),))
    lat, cost = lat[order], cost[order]
    seqs = np.zeros((1, 0), dtype=np.int64)
    spent = np.zeros(1)
    for _ in range(M):
        total = spent[:, None] + cost[None, :]
        keep = total <= a + 1e-9
        count = int(keep.sum())
        if count > cap:
            raise NetExplosion(f"net enumeration reached {count} curves (cap {cap}); reduce M or coarsen the lattice")
        rows, cols = np.nonzero(keep)
        seqs = np.concatenate([seqs[rows], cols[:, None]], axis=1)
        spent = total[rows, cols]
    slopes = lat[seqs]  # (count, M, d)
    values = np.zeros((slopes.shape[0], M + 1, slopes.shape[2]))
    np.cumsum(slopes / M, axis=1, out=values[:, 1:])
    kept = _thin(values, eps / 2, spacing=pitch / M)
    return LevelSetNet(float(a), float(eps), int(M), float(pitch), slopes[kept])


def _thin(values, radius, spacing=None):
    """Greedy thinning: keep a curve unless a kept one lies strictly within ``radius``."""
    n = values.shape[0]
    if spacing is not None and spacing >= radius - 1e-12:
        # distinct curves on this breakpoint lattice are already radius apart
        return np.arange(n)
    flat = values.reshape(n, -1)
    tree = cKDTree(flat)
    removed = np.zeros(n, dtype=bool)
    kept = []
    for i in range(n):
        if removed[i]:
            continue
        kept.append(i)
        removed[tree.query_ball_point(flat[i], radius * (1 - 1e-9), p=np.inf)] = True
    return np.array(kept)


# -- uniform distance between curves on different grids ---------------------------


def _resample(values, grid, u):
    """Piecewise-linear evaluation of ``values`` (count, len(grid), d) at points ``u``."""
    k = np.clip(np.searchsorted(grid, u, side="right") - 1, 0, grid.size - 2)
    t = ((u - grid[k]) / (grid[k + 1] - grid[k]))[None, :, None]
    return values[:, k] * (1 - t) + values[:, k + 1] * t


def sup_distance(gamma, eta):
    """``rho(gamma, eta)`` for two piecewise-linear grid curves."""
    g = gamma.values if isinstance(gamma, StepCurve) else np.asarray(gamma)
    e = eta.values if isinstance(eta, StepCurve) else np.asarray(eta)
    if g.ndim == 1:
        g = g[:, None]
    if e.ndim == 1:
        e = e[:, None]
    ug = np.linspace(0, 1, g.shape[0])
    ue = np.linspace(0, 1, e.shape[0])
    u = np.union1d(ug, ue)
    a = _resample(g[None], ug, u)[0]
    b = _resample(e[None], ue, u)[0]
    return float(np.max(np.abs(a - b)))


def net_to_family_distance(net_values, family_values, k=8, chunk=4096):
    """``max`` over net curves of ``min`` over family curves of ``rho``; also returns the argmax.

    The sup over the net's breakpoints alone is a lower bound on ``rho``, so
    a KD-tree over family curves sampled at those breakpoints proposes
    candidates and full-grid distances settle them.
    """
    F = np.asarray(family_values, dtype=float)
    E = np.asarray(net_values, dtype=float)
    uf = np.linspace(0, 1, F.shape[1])
    ue = np.linspace(0, 1, E.shape[1])
    u = np.union1d(uf, ue)
    Fu = _resample(F, uf, u).reshape(F.shape[0], -1)
    tree = cKDTree(_resample(F, uf, ue).reshape(F.shape[0], -1))
    k = min(k, F.shape[0])
    count = E.shape[0]
    ub = np.empty(count)
    low = np.empty(count)
    exact = np.empty(count, dtype=bool)
    for s in range(0, count, chunk):
        Ec = E[s:s + chunk]
        Eb = Ec.reshape(Ec.shape[0], -1)
        lb, idx = tree.query(Eb, k=k, p=np.inf)
        lb, idx = lb.reshape(-1, k), idx.reshape(-1, k)
        Eu = _resample(Ec, ue, u).reshape(Ec.shape[0], -1)
        full = np.empty(idx.shape)
        for j in range(k):
            full[:, j] = np.max(np.abs(Fu[idx[:, j]] - Eu), axis=1)
        ub[s:s + chunk] = full.min(axis=1)
        low[s:s + chunk] = lb[:, 0]
        # exact once the best full distance does not exceed the k-th breakpoint bound
        exact[s:s + chunk] = ub[s:s + chunk] <= lb[:, -1]
    score = np.where(exact, ub, low)
    worst = float(score.max())
    arg = int(np.argmax(score))
    for i in np.flatnonzero(~exact & (ub > worst)):
        cand = tree.query_ball_point(E[i].ravel(), ub[i], p=np.inf)
        best = float(ub[i])
        if cand:
            Eu = _resample(E[i:i + 1], ue, u).reshape(1, -1)
            best = min(best, float(np.min(np.max(np.abs(Fu[cand] - Eu), axis=1))))
        if best > worst:
            worst, arg = best, int(i)
    return worst, arg


@dataclass(frozen=True)
class HausdorffReport:
    value: float
    family_to_level_set: float
    level_set_to_family: float
    net_eps: float
    exact_solves: int


def hausdorff_report(family, net, evaluator, a, tube_tol=None, quantum=None):
    first = max_dist_to_level_set(evaluator, family, a, tube_tol, quantum)
    V = family.values if isinstance(family, CurveFamily) else np.asarray(family)
    second, _ = net_to_family_distance(net.values, V)
    return HausdorffReport(max(first.value, second), first.value, second, net.eps, first.exact_solves)


def hausdorff_distance(family, net, evaluator, a, tube_tol=None, quantum=None):
    """Hausdorff distance between a curve family and ``{S <= a}``, the latter represented by ``net``."""
    return hausdorff_report(family, net, evaluator, a, tube_tol, quantum).value
