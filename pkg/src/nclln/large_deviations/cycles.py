"""Essential range of a scalar observable via extreme mean cycles (Karp)."""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..exceptions import DimensionNotScalar, ValidationError


@dataclass(frozen=True)
class RangeReport:
    beta_plus: float
    beta_minus: float
    beta_zero: float
    witness_plus: tuple
    witness_minus: tuple


def cycle_mean(cycle, weights):
    """Exact mean of node weights along ``cycle``, rounded once to float."""
    total = sum((Fraction(float(weights[v])) for v in cycle), Fraction(0))
    return float(total / len(cycle))


def _canonical(cycle):
    k = cycle.index(min(cycle))
    return tuple(cycle[k:] + cycle[:k])


def _cycles_in_walk(walk):
    """Simple cycles obtained by peeling repeated nodes off a walk."""
    found = []
    stack = []
    pos = {}
    for v in walk:
        if v in pos:
            i = pos[v]
            cyc = stack[i:]
            found.append(_canonical(cyc))
            for u in cyc:
                del pos[u]
            del stack[i:]
        pos[v] = len(stack)
        stack.append(v)
    return found


def max_mean_cycle(support, weights):
    """Maximum mean node-weight cycle of a directed graph by Karp's recurrence.

    ``support[u, v]`` marks an edge ``u -> v``; an edge contributes the weight
    of its head.  Returns ``(value, cycle)`` where ``cycle`` is a simple cycle
    rotated to start at its smallest node; among tied cycles found on the
    extremal walk the lexicographically smallest is returned.
    """
    A = np.asarray(support, dtype=bool)
    w = np.asarray(weights, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or w.shape != (n,):
        raise ValidationError("support must be square and match the weight vector")
    if not A.any():
        raise ValidationError("graph has no edges, hence no cycles")
    neg = -np.inf
    D = np.full((n + 1, n), neg)
    pred = np.full((n + 1, n), -1, dtype=np.int64)
    D[0] = 0.0
    # candidate[u, v] = D[k-1][u] + w[v] on edges
    for k in range(1, n + 1):
        cand = np.where(A, D[k - 1][:, None] + w[None, :], neg)
        pred[k] = np.argmax(cand, axis=0)
        D[k] = cand[pred[k], np.arange(n)]
    with np.errstate(invalid="ignore"):
        ks = np.arange(n)[:, None]
        ratios = (D[n][None, :] - D[:n]) / (n - ks)
    ratios = np.where(np.isfinite(D[:n]), ratios, np.inf)
    per_node = np.where(np.isfinite(D[n]), ratios.min(axis=0), neg)
    best = float(per_node.max())
    if not np.isfinite(best):
        raise ValidationError("graph has no cycles")
    candidates = []
    for v in np.flatnonzero(per_node >= best - 1e-12 * max(1.0, abs(best))):
        walk = [int(v)]
        node = int(v)
        for k in range(n, 0, -1):
            node = int(pred[k, node])
            walk.append(node)
        walk.reverse()
        candidates.extend(_cycles_in_walk(walk))
    scored = [(cycle_mean(c, w), c) for c in set(candidates)]
    top = max(s for s, _ in scored)
    cycle = min(c for s, c in scored if s == top)
    return top, cycle


def min_mean_cycle(support, weights):
    value, cycle = max_mean_cycle(support, -np.asarray(weights, dtype=float))
    return -value, cycle


def beta_range(evaluator):
    """``beta_plus``/``beta_minus`` as extreme mean cycles on the product-chain support graph."""
    check_is_fitted(evaluator, "product_model_")
    if evaluator.d_ != 1:
        raise DimensionNotScalar(f"essential range needs d = 1, observable has d = {evaluator.d_}")
    support = evaluator.product_model_.kernel > 0
    g = evaluator.values_[:, 0]
    hi, c_hi = max_mean_cycle(support, g)
    lo, c_lo = min_mean_cycle(support, g)
    return RangeReport(hi, lo, hi, c_hi, c_lo)
