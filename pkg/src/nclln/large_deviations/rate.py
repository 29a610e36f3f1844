"""Log moment generating rate, its convex conjugate, and the action functional."""

import math
import threading
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_direction
from ..exceptions import ValidationError
from ..process_models import perron_eigenpair, product_chain

# +inf marks points outside the effective domain of the rate function; callers
# test with math.isinf / np.isinf before doing arithmetic.
INFINITE = math.inf

_DIRECTIONS_2D = 8


def is_infinite(x):
    return bool(np.isinf(x))


def _start_directions(d, count=_DIRECTIONS_2D):
    """Deterministic unit directions used to seed the ascent."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    dirs = []
    eye = np.eye(d)
    for i in range(d):
        dirs.extend([eye[i], -eye[i]])
    ones = np.ones(d) / math.sqrt(d)
    dirs.extend([ones, -ones])
    return np.array(dirs[:max(count, 2 * d)])


class RateEvaluator(TransformerMixin, BaseEstimator):
    """Spectral evaluator for ``Pi(alpha)`` and its Legendre transform ``I(beta)``.

    ``fit(model, observable)`` builds the product chain on which the
    observable is read; ``transform`` maps rows of ``beta`` values to ``I``.

    Parameters
    ----------
    alpha_max : float
        Radius of the ball searched by the Legendre ascent.
    fd_step : float
        Step of the central differences used for gradients and Hessians of ``Pi``.
    radii : tuple of float
        Radii at which the multi-start seeds are placed.
    size_cap : int
        Largest admissible product state space.
    """

    def __init__(self, alpha_max=50.0, fd_step=1e-4, radii=(0.5, 2.0), size_cap=20_000):
        self.alpha_max = alpha_max
        self.fd_step = fd_step
        self.radii = radii
        self.size_cap = size_cap

    def fit(self, model, observable):
        if observable.state_count != model.state_count:
            raise ValidationError(
                f"observable is defined on {observable.state_count} states, model has {model.state_count}")
        self.base_model_ = model
        self.observable_ = observable
        self.product_model_ = product_chain(model, observable.ell, size_cap=self.size_cap)
        self.values_ = np.ascontiguousarray(observable.flat_table())
        self.bound_D_ = observable.bound_D
        self.d_ = observable.d
        self.pi_cache_ = {}
        self.rate_cache_ = {}
        self._lock = threading.Lock()
        if observable.bound_D == 0:
            warnings.warn("observable is identically zero; the rate function is degenerate", stacklevel=2)
        return self

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_lock", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        if "product_model_" in state:
            self._lock = threading.Lock()

    def transform(self, X):
        check_is_fitted(self, "product_model_")
        B = np.asarray(X, dtype=float)
        if B.ndim == 1:
            B = B[:, None] if self.d_ == 1 else B[None, :]
        return np.array([self.rate(b) for b in B])

    # -- Pi --------------------------------------------------------------------

    def log_mgf(self, alpha):
        """``Pi(alpha)``: log Perron root of ``Q(x, y) exp((alpha, F(y)))``."""
        check_is_fitted(self, "product_model_")
        a = check_direction(alpha, self.d_)
        key = tuple(a.tolist())
        hit = self.pi_cache_.get(key)
        if hit is not None:
            return hit
        if not np.any(a):
            val = 0.0
        else:
            tilt = self.values_ @ a
            shift = float(tilt.max())
            M = self.product_model_.kernel * np.exp(tilt - shift)[None, :]
            lam, _ = perron_eigenpair(M)
            val = float(math.log(lam) + shift)
        with self._lock:
            self.pi_cache_[key] = val
        return val

    def grad_log_mgf(self, alpha):
        a = check_direction(alpha, self.d_)
        h = self.fd_step
        g = np.empty(self.d_)
        for i in range(self.d_):
            e = np.zeros(self.d_)
            e[i] = h
            g[i] = (self.log_mgf(a + e) - self.log_mgf(a - e)) / (2 * h)
        return g

    def hessian_log_mgf(self, alpha):
        a = check_direction(alpha, self.d_)
        h = self.fd_step
        d = self.d_
        H = np.empty((d, d))
        f0 = self.log_mgf(a)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h
            H[i, i] = (self.log_mgf(a + ei) - 2 * f0 + self.log_mgf(a - ei)) / h**2
            for j in range(i):
                ej = np.zeros(d)
                ej[j] = h
                H[i, j] = H[j, i] = (self.log_mgf(a + ei + ej) - self.log_mgf(a + ei - ej)
                                     - self.log_mgf(a - ei + ej) + self.log_mgf(a - ei - ej)) / (4 * h * h)
        return H

    # -- I ---------------------------------------------------------------------

    def _objective(self, a, beta):
        return float(a @ beta) - self.log_mgf(a)

    def _project(self, a):
        r = np.linalg.norm(a)
        return a if r <= self.alpha_max else a * (self.alpha_max / r)

    def _ascend(self, beta, a, max_iter=200):
        """Damped Newton ascent of ``(alpha, beta) - Pi(alpha)`` inside the ball.

        Returns ``(value, alpha, diverging)``; ``diverging`` flags a maximizer
        pinned to the boundary with outward slope above 1e-6.
        """
        f = self._objective(a, beta)
        for _ in range(max_iter):
            g = beta - self.grad_log_mgf(a)
            if np.linalg.norm(g) < 1e-10:
                break
            H = self.hessian_log_mgf(a)
            tau = 0.0
            while True:
                try:
                    step = np.linalg.solve(H + tau * np.eye(self.d_), g)
                    if np.all(np.isfinite(step)) and step @ g > 0:
                        break
                except np.linalg.LinAlgError:
                    pass
                tau = max(1e-8, 10 * tau)
                if tau > 1e8:
                    step = g
                    break
            # a flat direction yields an enormous step; the projection catches it
            t = 1.0
            improved = False
            while t > 1e-12:
                cand = self._project(a + t * step)
                fc = self._objective(cand, beta)
                if fc >= f - 1e-15:
                    improved = fc > f or np.linalg.norm(cand - a) > 0
                    break
                t *= 0.5
            if not improved:
                break
            moved = np.linalg.norm(cand - a)
            a, f = cand, fc
            if moved < 1e-11 * (1.0 + np.linalg.norm(a)):
                break
        r = np.linalg.norm(a)
        diverging = False
        if r >= self.alpha_max * (1 - 1e-9):
            outward = (beta - self.grad_log_mgf(a)) @ (a / r)
            diverging = outward > 1e-6
        return f, a, diverging

    def rate(self, beta):
        """``I(beta) = sup_alpha (alpha, beta) - Pi(alpha)``, or ``INFINITE``."""
        check_is_fitted(self, "product_model_")
        b = check_direction(beta, self.d_)
        key = tuple(b.tolist())
        hit = self.rate_cache_.get(key)
        if hit is not None:
            return hit
        val = self._rate_uncached(b)
        with self._lock:
            self.rate_cache_[key] = val
        return val

    def _rate_uncached(self, b):
        if np.linalg.norm(b) > self.bound_D_ * (1 + 1e-12):
            return INFINITE
        seeds = [np.zeros(self.d_)]
        for r in self.radii:
            for u in _start_directions(self.d_):
                seeds.append(self._project(r * u))
        values = [self._objective(s, b) for s in seeds]
        start = seeds[int(np.argmax(values))]
        f, _, diverging = self._ascend(b, start)
        if diverging:
            return INFINITE
        return max(f, 0.0)

    def rate_grid(self, betas):
        """``I`` on a sorted scalar grid by continuation from ``beta = 0``.

        Only for ``d = 1``.  Each solve is warm-started at the previous
        maximizer; once a point is infinite every point further out is too.
        """
        check_is_fitted(self, "product_model_")
        if self.d_ != 1:
            raise ValidationError("rate_grid needs a scalar observable")
        betas = np.asarray(betas, dtype=float)
        out = np.full(betas.shape, INFINITE)
        order = np.argsort(betas)
        sb = betas[order]
        k0 = int(np.searchsorted(sb, 0.0))
        for idx_range in (range(k0, sb.size), range(k0 - 1, -1, -1)):
            a = np.zeros(1)
            for k in idx_range:
                b = sb[k:k + 1]
                if abs(b[0]) > self.bound_D_ * (1 + 1e-12):
                    break
                f, a, diverging = self._ascend(b, a)
                if diverging:
                    break
                out[order[k]] = max(f, 0.0)
        return out


def log_mgf_rate(evaluator, alpha):
    return evaluator.log_mgf(alpha)


def rate_function(evaluator, beta):
    return evaluator.rate(beta)


def action(evaluator, curve):
    """``S(gamma) = (1/N) sum_j I(N (gamma_j - gamma_{j-1}))`` of the piecewise-linear curve."""
    total = 0.0
    for z in curve.slopes:
        v = evaluator.rate(z)
        if math.isinf(v):
            return INFINITE
        total += v
    return total / curve.grid_size


def sigma_squared(evaluator, direction):
    """Asymptotic variance of ``(direction, F)`` summed along the product chain.

    Uses the fundamental matrix ``(I - Q + 1 pi^T)^{-1}``.
    """
    check_is_fitted(evaluator, "product_model_")
    u = check_direction(direction, evaluator.d_)
    Q = evaluator.product_model_.kernel
    pi = evaluator.product_model_.stationary
    g = evaluator.values_ @ u
    g = g - pi @ g
    n = Q.shape[0]
    Z = np.linalg.solve(np.eye(n) - Q + np.outer(np.ones(n), pi), g)
    var = float(pi @ (g * g))
    return float(2.0 * (pi @ (g * Z)) - var)
