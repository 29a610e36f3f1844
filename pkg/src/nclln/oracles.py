"""Independent brute-force routes used to cross-check the main solvers.

None of these share code with the routines they check beyond the model and
observable containers: the growth ratio powers the tilted matrix directly,
the curve oracle runs a dense min-plus DP with no convexity shortcut, and
the cycle oracle enumerates every simple cycle by depth-first search.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .exceptions import UnknownOracle, ValidationError

ORACLE_TARGETS = ("pi-growth", "curve-dp", "cycles", "contraction")


@dataclass(frozen=True)
class OracleComparison:
    target: str
    main: float
    oracle: float
    tolerance: float

    @property
    def difference(self):
        if math.isinf(self.main) and math.isinf(self.oracle) and self.main == self.oracle:
            return 0.0
        return abs(self.main - self.oracle)

    @property
    def passed(self):
        return self.difference <= self.tolerance


# -- tilted growth ratio --------------------------------------------------------------


def growth_ratio_log_mgf(kernel, values, alpha, n=200, w=None):
    """``ln(1^T M^{n+1} w / 1^T M^n w)`` for ``M(x, y) = Q(x, y) exp((alpha, F(y)))``.

    Powers are renormalized at every step; the constant tilt shift is
    added back at the end, so only the ratio of the last two powers matters.
    """
    Q = np.asarray(kernel, dtype=float)
    F = np.asarray(values, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    tilt = F @ np.atleast_1d(np.asarray(alpha, dtype=float))
    shift = float(tilt.max())
    M = Q * np.exp(tilt - shift)[None, :]
    v = np.ones(Q.shape[0]) if w is None else np.asarray(w, dtype=float)
    for _ in range(n):
        v = M @ v
        v /= v.sum()
    return float(math.log((M @ v).sum() / v.sum()) + shift)


# -- dense curve DP -------------------------------------------------------------------


def fair_coin_rate(beta):
    """Closed-form rate of the fair +-1 coin; ``inf`` outside ``[-1, 1]``."""
    b = abs(float(beta))
    if b > 1:
        return math.inf
    if b == 1:
        return math.log(2.0)
    return 0.5 * ((1 + b) * math.log1p(b) + (1 - b) * math.log1p(-b))


def _dense_feasible(g, delta, q, costs, ks, a):
    # value function over the contiguous lattice block [lo, lo + len); inf marks unreachable
    lo = 0
    val = np.zeros(1)
    for j in range(1, g.shape[0]):
        t_lo = math.ceil((g[j] - delta) / q - 1e-9)
        t_hi = math.floor((g[j] + delta) / q + 1e-9)
        if t_lo > t_hi:
            return False
        tgt = np.arange(t_lo, t_hi + 1)
        out = np.full(tgt.shape, np.inf)
        for k, c in zip(ks, costs):
            src = tgt - k - lo
            ok = (src >= 0) & (src < val.shape[0])
            if ok.any():
                out[ok] = np.minimum(out[ok], val[src[ok]] + c)
        out[out > a + 1e-12] = np.inf
        if not np.isfinite(out).any():
            return False
        lo, val = t_lo, out
    return True


def dense_curve_distance(values, a, tube_tol, rate=fair_coin_rate, bound_D=1.0, refine=4):
    """Distance from a scalar grid curve to ``{S <= a}`` by an exhaustive lattice DP.

    Positions live on a lattice ``refine`` times finer than the main solver's
    (``tube_tol / (4 * refine)``); every pair of reachable positions is
    tried, with no appeal to convexity.  Bisection stops at width ``tube_tol / 2``.
    """
    g = np.asarray(values, dtype=float).reshape(-1)
    if g[0] != 0:
        raise ValidationError("curve must start at 0")
    N = g.shape[0] - 1
    q = tube_tol / (4 * refine)
    K = int(math.floor(bound_D / (N * q) + 1e-9))
    ks = np.arange(-K, K + 1)
    costs = np.array([rate(k * N * q) for k in ks]) / N
    slopes = np.diff(g) * N
    if all(math.isfinite(rate(z)) for z in slopes) and sum(rate(z) for z in slopes) / N <= a:
        return 0.0
    lo, hi = 0.0, float(np.max(np.abs(g)))
    while hi - lo > tube_tol / 2:
        mid = 0.5 * (lo + hi)
        if _dense_feasible(g, mid, q, costs, ks, a):
            hi = mid
        else:
            lo = mid
    return hi


# -- simple cycles --------------------------------------------------------------------


def simple_cycles(support):
    """Every simple cycle of a directed graph, each listed once starting at its smallest node."""
    A = np.asarray(support, dtype=bool)
    n = A.shape[0]
    succ = [list(np.flatnonzero(A[u])) for u in range(n)]
    cycles = []
    for s in range(n):
        stack = [(s, iter(succ[s]))]
        path = [s]
        on_path = {s}
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                on_path.discard(path.pop())
                continue
            if nxt == s:
                cycles.append(tuple(int(v) for v in path))
            elif nxt > s and nxt not in on_path:
                path.append(nxt)
                on_path.add(nxt)
                stack.append((nxt, iter(succ[nxt])))
    return cycles


def brute_force_range(support, weights):
    """``(max_mean, max_cycle, min_mean, min_cycle)`` over all simple cycles, ties to the smallest tuple."""
    w = [Fraction(float(x)) for x in np.asarray(weights, dtype=float)]
    cycles = simple_cycles(support)
    if not cycles:
        raise ValidationError("graph has no cycles")
    means = [(sum(w[v] for v in c) / len(c), c) for c in cycles]
    top = max(m for m, _ in means)
    bottom = min(m for m, _ in means)
    c_top = min(c for m, c in means if m == top)
    c_bot = min(c for m, c in means if m == bottom)
    return float(top), c_top, float(bottom), c_bot


# -- side-by-side runs -----------------------------------------------------------------


def check_pi_growth(evaluator, alphas, n=200, tol=1e-6):
    """Eigenvalue ``Pi`` against the growth ratio of tilted matrix powers."""
    Q = evaluator.product_model_.kernel
    out = []
    for al in alphas:
        out.append(OracleComparison("pi-growth", evaluator.log_mgf(al),
                                    growth_ratio_log_mgf(Q, evaluator.values_, al, n), tol))
    return out


def check_curve_dp(evaluator, curves, a, tube_tol):
    """Main tube solver against the dense DP; the evaluator must be the fair +-1 coin."""
    from .large_deviations.levelset import dist_to_level_set
    from .sums import StepCurve

    out = []
    for c in curves:
        main = dist_to_level_set(evaluator, StepCurve(c), a, tube_tol=tube_tol)
        out.append(OracleComparison("curve-dp", main, dense_curve_distance(c, a, tube_tol), 2 * tube_tol))
    return out


def check_cycles(evaluator):
    """Karp extremes against exhaustive simple-cycle enumeration (exact match required)."""
    from .large_deviations.cycles import beta_range

    rr = beta_range(evaluator)
    support = evaluator.product_model_.kernel > 0
    hi, _, lo, _ = brute_force_range(support, evaluator.values_[:, 0])
    return [OracleComparison("cycles", rr.beta_plus, hi, 0.0),
            OracleComparison("cycles", rr.beta_minus, lo, 0.0)]


def check_contraction(model, G, betas, n_points=400, tol=5e-3):
    """Spectral ``I`` against ``inf J`` over a simplex grid."""
    from .large_deviations.occupation import contraction_check
    from .large_deviations.rate import RateEvaluator
    from .sums import Observable

    ev = RateEvaluator().fit(model, Observable.from_state_values(G, model.stationary))
    return [OracleComparison("contraction", ev.rate(b), contraction_check(model, G, b, n_points), tol)
            for b in betas]


def check_target(target):
    if target not in ORACLE_TARGETS:
        raise UnknownOracle(f"unknown oracle {target!r}; expected one of {', '.join(ORACLE_TARGETS)}")
    return target
