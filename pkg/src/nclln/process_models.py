"""Finite-state stationary mixing processes.

Models are small dense Markov kernels.  Everything here is exact matrix
algebra except :func:`sample_path`, which draws realizations from a seeded
generator.
"""

import json
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Optional

import numpy as np

from ._validation import check_positive_int, check_probability_vector, check_stochastic_matrix
from .exceptions import DoeblinViolated, NonConvergence, NotPrimitive, SizeCapExceeded, ValidationError

DEFAULT_SIZE_CAP = 20_000
PERRON_TOL = 1e-13
PERRON_MAX_ITER = 100_000
STATIONARY_TOL = 1e-10
# doubling scan in sample_path is only worth it for small alphabets
_SCAN_MAX_STATES = 64
_SAMPLE_CHUNK = 1 << 16


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """A primitive finite-state Markov kernel together with its invariant law.

    Use :meth:`from_kernel` to build one; the constructor only checks the
    stated invariants of already computed fields.
    """

    kernel: np.ndarray
    stationary: np.ndarray
    doeblin_kappa: Optional[float] = None
    label: str = ""
    state_count: int = field(init=False)

    def __post_init__(self):
        P = check_stochastic_matrix(self.kernel)
        mu = check_probability_vector(self.stationary, size=P.shape[0], tol=1e-10)
        if np.max(np.abs(mu @ P - mu)) > STATIONARY_TOL:
            raise ValidationError("stationary vector is not invariant under the kernel")
        kappa = self.doeblin_kappa
        if kappa is not None:
            kappa = float(kappa)
            if not 0 < kappa <= 1:
                raise ValidationError(f"doeblin_kappa must lie in (0, 1], got {kappa}")
            slack = 1e-12
            if np.any(kappa * mu[None, :] > P + slack) or np.any(P > mu[None, :] / kappa + slack):
                raise DoeblinViolated("kernel does not satisfy the claimed Doeblin sandwich")
        object.__setattr__(self, "kernel", _frozen(P))
        object.__setattr__(self, "stationary", _frozen(mu))
        object.__setattr__(self, "doeblin_kappa", kappa)
        object.__setattr__(self, "state_count", P.shape[0])

    @classmethod
    def from_kernel(cls, kernel, label=""):
        """Build a model from a primitive kernel, deriving ``stationary`` and ``doeblin_kappa``."""
        P = check_stochastic_matrix(kernel)
        mu = stationary_distribution(P)
        kappa = validate_doeblin(P, mu) if np.all(P > 0) else None
        return cls(P, mu, kappa, label)

    def n_step(self, n):
        """``kernel`` raised to the power ``n``."""
        return np.linalg.matrix_power(self.kernel, int(n))

    def to_dict(self):
        return {
            "label": self.label,
            "states": self.state_count,
            "kernel": self.kernel.tolist(),
            "stationary": self.stationary.tolist(),
            "doeblin_kappa": self.doeblin_kappa,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc):
        kernel = doc["kernel"]
        if "states" in doc and len(kernel) != doc["states"]:
            raise ValidationError(f"'states' is {doc['states']} but kernel has {len(kernel)} rows")
        stationary = doc.get("stationary")
        if stationary is None:
            return cls.from_kernel(kernel, label=doc.get("label", ""))
        return cls(kernel, stationary, doc.get("doeblin_kappa"), doc.get("label", ""))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class PathSample:
    states: np.ndarray
    seed: int
    model_label: str = ""

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True, eq=False)
class MixingProfile:
    psi: np.ndarray
    fitted_rate: float
    fitted_prefactor: float


def validate_doeblin(kernel, mu):
    """Largest ``kappa`` with ``kappa*mu(y) <= P(x, y) <= mu(y)/kappa`` for all ``x, y``."""
    P = check_stochastic_matrix(kernel)
    mu = check_probability_vector(mu, size=P.shape[0], strictly_positive=True, tol=1e-10)
    if np.any(P <= 0):
        raise DoeblinViolated("kernel has zero entries; no positive Doeblin constant exists")
    ratio = P / mu[None, :]
    return float(min(1.0, np.min(np.minimum(ratio, 1.0 / ratio))))


def _period(support):
    """Period of the strongly connected support graph, via BFS levels from state 0."""
    n = support.shape[0]
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    g = 0
    while frontier:
        nxt = []
        for x in frontier:
            for y in np.flatnonzero(support[x]):
                if level[y] < 0:
                    level[y] = level[x] + 1
                    nxt.append(y)
                else:
                    g = math.gcd(g, int(level[x] + 1 - level[y]))
        frontier = nxt
    return g


def is_primitive(kernel):
    """Irreducible and aperiodic, decided on the Boolean support pattern."""
    support = np.asarray(kernel) > 0
    n = support.shape[0]
    # irreducibility: transitive closure by repeated squaring of (I + A)
    reach = support | np.eye(n, dtype=bool)
    for _ in range(max(1, math.ceil(math.log2(max(n, 2)))) + 1):
        reach = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
    if not reach.all():
        return False
    return _period(support) == 1


def check_primitive(kernel):
    if not is_primitive(kernel):
        raise NotPrimitive("kernel is not irreducible and aperiodic")


def stationary_distribution(kernel):
    """Unique invariant probability vector of a primitive kernel."""
    P = check_stochastic_matrix(kernel)
    check_primitive(P)
    n = P.shape[0]
    # replace one balance equation by the normalization
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    mu = np.linalg.solve(A, rhs)
    # a few power steps polish the direct solve
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    for _ in range(3):
        mu = mu @ P
    return mu / mu.sum()


def psi_coefficient(model, n):
    """Two-point psi-mixing coefficient ``max |P^n(x, y)/mu(y) - 1|``."""
    n = check_positive_int(n, "n")
    Pn = model.n_step(n)
    return float(np.max(np.abs(Pn / model.stationary[None, :] - 1.0)))


def psi_sequence(model, n_max):
    """``psi(1), ..., psi(n_max)`` by incremental matrix products."""
    n_max = check_positive_int(n_max, "n_max")
    out = np.empty(n_max)
    Pn = np.eye(model.state_count)
    for k in range(n_max):
        Pn = Pn @ model.kernel
        out[k] = np.max(np.abs(Pn / model.stationary[None, :] - 1.0))
    return out


def mixing_profile(model, n_max=40):
    """Exact psi values plus a least-squares exponential envelope."""
    psi = psi_sequence(model, n_max)
    ns = np.arange(1, n_max + 1)
    keep = psi > 1e-13
    if keep.sum() >= 2:
        slope, intercept = np.polyfit(ns[keep], np.log(psi[keep]), 1)
        rate, prefactor = -float(slope), float(np.exp(intercept))
    else:
        rate, prefactor = math.inf, 0.0
    return MixingProfile(psi, rate, prefactor)


def perron_eigenpair(matrix, tol=PERRON_TOL, max_iter=PERRON_MAX_ITER, start=None):
    """Perron root and positive right eigenvector of a primitive non-negative matrix.

    Plain power iteration from the all-ones vector.  Returns ``(lam, h)`` with
    ``h`` normalized to sum one.
    """
    L = np.asarray(matrix, dtype=float)
    v = np.ones(L.shape[0]) if start is None else np.array(start, dtype=float)
    v /= v.sum()
    lam_prev = None
    for _ in range(max_iter):
        w = L @ v
        lam = w.sum()
        if not lam > 0:
            raise NonConvergence("power iteration collapsed to zero")
        w /= lam
        if lam_prev is not None and abs(lam - lam_prev) <= tol * lam and np.max(np.abs(w - v)) <= 10 * tol:
            return lam, w
        v, lam_prev = w, lam
    raise NonConvergence(f"power iteration did not converge in {max_iter} iterations")


def gibbs_markov(adjacency, potential, label="gibbs"):
    """Markov model of the Gibbs measure for a pair potential on a subshift of finite type.

    Returns ``(model, pressure)`` where ``pressure`` is the log Perron root of
    the transfer matrix ``A(x, y) exp(potential(x, y))``.
    """
    A = np.asarray(adjacency, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("adjacency must be square")
    if not np.all((A == 0) | (A == 1)):
        raise ValidationError("adjacency must be a 0/1 matrix")
    check_primitive(A)
    phi = np.broadcast_to(np.asarray(potential, dtype=float), A.shape)
    L = np.where(A > 0, np.exp(np.where(A > 0, phi, 0.0)), 0.0)
    lam, h = perron_eigenpair(L)
    P = L * h[None, :] / (lam * h[:, None])
    P /= P.sum(axis=1, keepdims=True)
    return TransitionModel.from_kernel(P, label=label), float(np.log(lam))


def product_chain(model, ell, size_cap=DEFAULT_SIZE_CAP):
    """Chain of ``(X1_k, X2_2k, ..., Xl_lk)`` built from independent copies.

    Coordinate ``i`` (1-based) advances ``i`` base steps per product step.
    Product states are indexed in row-major order with the first coordinate
    most significant.
    """
    ell = check_positive_int(ell, "ell")
    if ell == 1:
        return model
    size = model.state_count ** ell
    if size > size_cap:
        raise SizeCapExceeded(f"product chain would have {size} states (cap {size_cap})")
    powers = [model.n_step(i) for i in range(1, ell + 1)]
    Q = reduce(np.kron, powers)
    mu = reduce(np.kron, [model.stationary] * ell)
    kappa = None
    if np.all(Q > 0):
        kappa = validate_doeblin(Q, mu)
    return TransitionModel(Q, mu, kappa, f"{model.label}^x{ell}")


def _transition_maps(cum, u):
    S = cum.shape[0]
    maps = np.empty((u.shape[0], S), dtype=np.int64)
    for s in range(S):
        maps[:, s] = np.searchsorted(cum[s], u, side="right")
    np.minimum(maps, S - 1, out=maps)
    return maps


def _compose_prefix(maps):
    """Inclusive prefix composition: ``out[t] = maps[t] o ... o maps[0]``."""
    G = maps
    shift = 1
    while shift < G.shape[0]:
        head = G[:shift]
        tail = np.take_along_axis(G[shift:], G[:-shift], axis=1)
        G = np.concatenate([head, tail])
        shift <<= 1
    return G


def iter_path(model, length, seed, chunk=_SAMPLE_CHUNK):
    """Yield a sampled path in chunks of at most ``chunk`` states.

    The output is independent of ``chunk``: one uniform is consumed for the
    initial state and one per transition, in order.
    """
    length = check_positive_int(length, "length")
    rng = np.random.default_rng(seed)
    S = model.state_count
    cum = np.cumsum(model.kernel, axis=1)
    cum[:, -1] = 1.0
    cmu = np.cumsum(model.stationary)
    cmu[-1] = 1.0
    x = min(int(np.searchsorted(cmu, rng.random(), side="right")), S - 1)
    first = True
    remaining = length
    while remaining > 0:
        m = min(chunk, remaining) - (1 if first else 0)
        out = []
        if first:
            out.append(np.array([x]))
        if m > 0:
            u = rng.random(m)
            if S == 1:
                steps = np.zeros(m, dtype=np.int64)
            elif S <= _SCAN_MAX_STATES:
                steps = _compose_prefix(_transition_maps(cum, u))[:, x]
            else:
                steps = np.empty(m, dtype=np.int64)
                y = x
                for t in range(m):
                    y = min(int(np.searchsorted(cum[y], u[t], side="right")), S - 1)
                    steps[t] = y
            x = int(steps[-1])
            out.append(steps)
        block = np.concatenate(out).astype(np.int32)
        remaining -= block.shape[0]
        first = False
        yield block


def sample_path(model, length, seed):
    """Stationary realization ``X_1, ..., X_length``; ``states[k-1]`` holds ``X_k``."""
    states = np.concatenate(list(iter_path(model, length, seed)))
    states.setflags(write=False)
    return PathSample(states, int(seed), model.label)


# -- bundled constructors -------------------------------------------------------


def flip_chain(p, label=None):
    """Symmetric two-state chain that switches state with probability ``p``."""
    return TransitionModel.from_kernel([[1 - p, p], [p, 1 - p]], label=label or f"flip(p={p})")


def iid_model(probs, label=None):
    probs = check_probability_vector(probs, strictly_positive=True)
    return TransitionModel.from_kernel(np.tile(probs, (probs.size, 1)), label=label or "iid")
