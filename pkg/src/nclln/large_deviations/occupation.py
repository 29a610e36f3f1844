"""Level-2 (occupation measure) rate functional and the contraction cross-check."""

import itertools
import math

import numpy as np
from scipy.optimize import minimize
from scipy.special import comb, logsumexp

from .._validation import check_probability_vector
from ..exceptions import InfeasibleBeta, ValidationError
from ..sums import Observable
from .cycles import max_mean_cycle, min_mean_cycle
from .rate import RateEvaluator


def _dv_objective(v, nu, logP):
    # f(v) = sum_x nu_x [v_x - log sum_y P_xy e^{v_y}], returned negated
    lse = logsumexp(logP + v[None, :], axis=1)
    f = nu @ (v - lse)
    soft = np.exp(logP + v[None, :] - lse[:, None])
    grad = nu - nu @ soft
    return -f, -grad


def donsker_varadhan_J(model, nu, n_starts=4):
    """``J(nu) = sup_{u > 0} -sum_x nu(x) ln((P u)(x) / u(x))``, maximized over ``log u``."""
    P = model.kernel
    nu = check_probability_vector(nu, size=P.shape[0], tol=1e-9)
    with np.errstate(divide="ignore"):
        logP = np.log(P)
    S = P.shape[0]
    starts = [np.zeros(S)]
    eye = np.eye(S)
    for i in range(min(n_starts - 1, S)):
        starts.append(2.0 * eye[i])
    best = 0.0
    for v0 in starts:
        res = minimize(_dv_objective, v0, args=(nu, logP), jac=True, method="BFGS",
                       options={"gtol": 1e-11, "maxiter": 2000})
        best = max(best, -float(res.fun))
    return best


def simplex_grid(states, resolution):
    """All probability vectors with coordinates in ``{0, 1/r, ..., 1}``."""
    r = resolution
    pts = []
    for cuts in itertools.combinations(range(r + states - 1), states - 1):
        bounds = (-1,) + cuts + (r + states - 1,)
        pts.append([bounds[i + 1] - bounds[i] - 1 for i in range(states)])
    return np.array(pts, dtype=float) / r


def contraction_check(model, G, beta, n_points=400):
    """Minimum of ``J`` over simplex-grid measures whose ``G``-mean is within grid slack of ``beta``."""
    g = np.asarray(G, dtype=float).reshape(-1)
    S = model.state_count
    if g.shape[0] != S:
        raise ValidationError(f"G has {g.shape[0]} entries, model has {S} states")
    support = model.kernel > 0
    hi, _ = max_mean_cycle(support, g)
    lo, _ = min_mean_cycle(support, g)
    if not lo <= beta <= hi:
        raise InfeasibleBeta(f"beta = {beta} lies outside the essential range [{lo}, {hi}]")
    r = 1
    while comb(r + 1 + S - 1, S - 1, exact=True) <= n_points:
        r += 1
    grid = simplex_grid(S, r)
    moments = grid @ g
    slack = (g.max() - g.min()) / (2 * r)
    feasible = np.flatnonzero(np.abs(moments - beta) <= slack * (1 + 1e-12))
    if feasible.size == 0:
        raise InfeasibleBeta(f"no grid measure has G-mean within {slack:.3g} of {beta}")
    return min(donsker_varadhan_J(model, grid[i]) for i in feasible)


def contraction_rate(model, G, beta):
    """Main-path counterpart of :func:`contraction_check`: ``I(beta)`` for ``G`` on the chain itself."""
    F = Observable.from_state_values(G, model.stationary)
    return RateEvaluator().fit(model, F).rate(beta)
