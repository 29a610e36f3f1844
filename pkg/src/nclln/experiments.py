"""Desk-scale experiments: Erdos-Renyi laws, the decoupling lemma, and LD bounds.

A run is a pure function of its :class:`ExperimentConfig`.  Randomness is
derived per task from ``(master_seed, replicate seed, stream)`` through
``numpy.random.SeedSequence``, so results do not depend on how tasks are
scheduled across threads.
"""

import itertools
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import beta as beta_dist

from . import __version__
from .exceptions import BetaOutOfRange, SizeCapExceeded, ValidationError
from .large_deviations.cycles import beta_range
from .large_deviations.levelset import (
    _resolution, _step_costs, hausdorff_report, level_set_net, slope_table, within_distance,
)
from .large_deviations.rate import RateEvaluator, sigma_squared
from .process_models import (
    TransitionModel, flip_chain, gibbs_markov, iid_model, psi_coefficient, sample_path,
)
from .sums import (
    Observable, center_observable, prefix_sums_nonconventional, streaming_window_max, window_family,
    window_length, window_maxima,
)

SCHEMA_VERSION = 1
LAWS = ("scalar", "classical", "functional", "lemma31", "ld-bounds", "simulate", "rate", "oracle")

# window maxima switch to the streaming pass above this many summands
STREAMING_THRESHOLD = 10_000_000
# replicas are simulated in fixed blocks so seeding is independent of the thread count
REPLICA_BLOCK = 100_000
JOINT_LAW_CAP = 1 << 16

_TOP_KEYS = {
    "schema_version", "law", "model", "observable", "beta", "c", "n_schedule", "seeds",
    "master_seed", "tube_tol", "net_eps", "net_M", "options",
}

_OPTION_DEFAULTS = {
    "scalar": {},
    "classical": {},
    "functional": {"net_cap": 2_000_000},
    "lemma31": {"k_values": [2, 3], "gaps": list(range(1, 13)), "block_length": 1, "h": "all-indicators"},
    "ld-bounds": {"gamma_slope": 0.0, "gamma": None, "delta": 0.1, "lam": 0.05, "a": 0.2,
                  "replicas": 1_000_000, "band": 1e-3},
    "simulate": {"emit_family": False},
    "rate": {"betas": None, "grid_points": 41},
    "oracle": {"target": None, "alphas": 20, "alpha_radius": 3.0, "curves": 50, "a": 0.05,
               "betas": [0.1, 0.3, 0.5], "grid_points": 400, "max_nodes": 8},
}

_DEFAULT_SCHEDULES = {
    "scalar": [10_000, 1_000_000],
    "classical": [10_000, 1_000_000],
    "functional": [1_000, 10_000, 100_000],
    "ld-bounds": [60],
    "simulate": [10_000],
}


# -- configuration --------------------------------------------------------------------


def build_model(spec):
    """Model from a spec: ``flip``, ``iid``, ``kernel``, ``gibbs`` or an inline model ``document``."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValidationError("model spec must be an object with a 'kind'")
    kind = spec["kind"]
    allowed = {
        "flip": {"p"}, "iid": {"probs"}, "kernel": {"kernel"},
        "gibbs": {"adjacency", "potential"}, "document": {"document"},
    }
    if kind not in allowed:
        raise ValidationError(f"unknown model kind {kind!r}")
    extra = set(spec) - allowed[kind] - {"kind", "label"}
    if extra:
        raise ValidationError(f"unknown keys in model spec: {sorted(extra)}")
    missing = allowed[kind] - set(spec)
    if missing:
        raise ValidationError(f"model spec of kind {kind!r} is missing {sorted(missing)}")
    label = spec.get("label")
    if kind == "flip":
        return flip_chain(float(spec["p"]), label=label)
    if kind == "iid":
        return iid_model(spec["probs"], label=label)
    if kind == "kernel":
        return TransitionModel.from_kernel(spec["kernel"], label=label or "kernel")
    if kind == "gibbs":
        return gibbs_markov(spec["adjacency"], spec["potential"], label=label or "gibbs")[0]
    return TransitionModel.from_dict(spec["document"])


def build_observable(spec, model, center=True):
    """Observable from a spec: ``state_values``, ``product`` or a full ``table``."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValidationError("observable spec must be an object with a 'kind'")
    kind = spec["kind"]
    allowed = {"state_values": {"values"}, "product": {"values", "ell"}, "table": {"table"}}
    if kind not in allowed:
        raise ValidationError(f"unknown observable kind {kind!r}")
    extra = set(spec) - allowed[kind] - {"kind", "center"}
    if extra:
        raise ValidationError(f"unknown keys in observable spec: {sorted(extra)}")
    if kind == "state_values":
        F = Observable.from_state_values(spec["values"], model.stationary)
    elif kind == "product":
        F = Observable.product(spec["values"], int(spec["ell"]), model.stationary)
    else:
        F = Observable(spec["table"], model.stationary)
    if F.state_count != model.state_count:
        raise ValidationError(f"observable has {F.state_count} states, model has {model.state_count}")
    return center_observable(F, model.stationary) if spec.get("center", center) else F


_KERNEL_3 = [[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]
_KERNEL_4 = [[0.4, 0.3, 0.2, 0.1], [0.1, 0.4, 0.3, 0.2], [0.2, 0.1, 0.4, 0.3], [0.3, 0.2, 0.1, 0.4]]

BUNDLED_CASES = (
    ("fair-coin", {"kind": "iid", "probs": [0.5, 0.5]}, {"kind": "state_values", "values": [1, -1]}),
    ("biased-coin", {"kind": "iid", "probs": [0.3, 0.7]}, {"kind": "state_values", "values": [1, -1]}),
    ("flip-0.1", {"kind": "flip", "p": 0.1}, {"kind": "state_values", "values": [1, -1]}),
    ("flip-0.2-ell2", {"kind": "flip", "p": 0.2}, {"kind": "product", "values": [1, -1], "ell": 2}),
    ("flip-0.3-ell3", {"kind": "flip", "p": 0.3}, {"kind": "product", "values": [1, -1], "ell": 3}),
    ("three-state-ell2", {"kind": "kernel", "kernel": _KERNEL_3},
     {"kind": "table", "table": [[[1.0], [0.0], [-1.0]], [[0.5], [2.0], [0.0]], [[-1.0], [0.0], [1.0]]]}),
    ("gibbs-full-3-shift", {"kind": "gibbs", "adjacency": [[1, 1, 1]] * 3,
                            "potential": [[0.0, 0.5, -0.5], [0.3, 0.0, 0.2], [-0.4, 0.1, 0.0]]},
     {"kind": "state_values", "values": [1, 0, -1]}),
    ("four-state-2d", {"kind": "kernel", "kernel": _KERNEL_4},
     {"kind": "state_values", "values": [[1, 0], [0, 1], [-1, 0], [0, -1]]}),
)


def bundled_cases():
    """The small reference models used by the oracle and property suites.

    Returns ``(name, model, observable)`` triples with centered observables;
    every model has at most four states and ``ell <= 3``.
    """
    out = []
    for name, m, o in BUNDLED_CASES:
        model = build_model(m)
        out.append((name, model, build_observable(o, model)))
    return out


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment description with every default filled in.

    ``to_dict`` returns the resolved form that reports echo and that the
    config hash is computed from.
    """

    law: str
    model: dict
    observable: dict
    beta: float = None
    c: float = None
    n_schedule: tuple = ()
    seeds: tuple = (0,)
    master_seed: int = 0
    tube_tol: float = None
    net_eps: float = 0.05
    net_M: int = 6
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc, law=None):
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        extra = set(doc) - _TOP_KEYS
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
        declared = doc.get("law")
        if law is not None and declared is not None and declared != law:
            raise ValidationError(f"config declares law {declared!r} but {law!r} was requested")
        law = declared or law
        if law not in LAWS:
            raise ValidationError(f"law must be one of {LAWS}, got {law!r}")
        if "model" not in doc:
            raise ValidationError("config needs a 'model'")
        observable = doc.get("observable")
        if observable is None and law not in ("lemma31",):
            raise ValidationError("config needs an 'observable'")
        options = dict(_OPTION_DEFAULTS[law])
        given = doc.get("options", {}) or {}
        if not isinstance(given, dict):
            raise ValidationError("'options' must be an object")
        extra = set(given) - set(options)
        if extra:
            raise ValidationError(f"unknown options for law {law!r}: {sorted(extra)}")
        options.update(given)
        sched = doc.get("n_schedule", _DEFAULT_SCHEDULES.get(law, []))
        seeds = doc.get("seeds", [0])
        cfg = cls(
            law=law,
            model=doc["model"],
            observable=observable if observable is not None else {},
            beta=doc.get("beta"),
            c=doc.get("c"),
            n_schedule=tuple(int(n) if float(n) == int(n) else n for n in sched),
            seeds=tuple(seeds),
            master_seed=doc.get("master_seed", 0),
            tube_tol=doc.get("tube_tol"),
            net_eps=float(doc.get("net_eps", 0.05)),
            net_M=doc.get("net_M", 6),
            options=options,
        )
        cfg.validate()
        return cfg

    def with_master_seed(self, seed):
        doc = self.to_dict()
        doc["master_seed"] = int(seed)
        return ExperimentConfig.from_dict(doc)

    def validate(self):
        for n in self.n_schedule:
            if not isinstance(n, int) or n < 2:
                raise ValidationError(f"n_schedule entries must be integers >= 2, got {n!r}")
        if any(b <= a for a, b in zip(self.n_schedule, self.n_schedule[1:])):
            raise ValidationError("n_schedule must be strictly increasing")
        for s in self.seeds:
            if isinstance(s, bool) or not isinstance(s, int) or s < 0:
                raise ValidationError(f"seeds must be non-negative integers, got {s!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError(f"seeds must be pairwise distinct, got {list(self.seeds)}")
        if isinstance(self.master_seed, bool) or not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ValidationError(f"master_seed must be a non-negative integer, got {self.master_seed!r}")
        if isinstance(self.net_M, bool) or not isinstance(self.net_M, int) or self.net_M < 1:
            raise ValidationError(f"net_M must be a positive integer, got {self.net_M!r}")
        if not self.net_eps > 0:
            raise ValidationError("net_eps must be positive")
        if self.tube_tol is not None and not self.tube_tol > 0:
            raise ValidationError("tube_tol must be positive")
        if self.c is not None:
            if not self.c > 0:
                raise ValidationError("c must be positive")
            if self.n_schedule and self.c * math.log(min(self.n_schedule)) < 1:
                raise ValidationError(f"c ln(min n) = {self.c * math.log(min(self.n_schedule)):.4g} < 1")
        if self.law in ("scalar", "classical") and self.beta is None:
            raise ValidationError(f"law {self.law!r} needs a target 'beta'")
        if self.law == "functional" and self.c is None:
            raise ValidationError("functional law needs 'c'")
        if self.law == "oracle" and self.options.get("target") is None:
            raise ValidationError("oracle config needs options.target")

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "law": self.law,
            "model": self.model,
            "observable": self.observable,
            "beta": self.beta,
            "c": self.c,
            "n_schedule": list(self.n_schedule),
            "seeds": list(self.seeds),
            "master_seed": self.master_seed,
            "tube_tol": self.tube_tol,
            "net_eps": self.net_eps,
            "net_M": self.net_M,
            "options": self.options,
        }


@dataclass(eq=False)
class RunReport:
    """Result of one run: resolved config, per-record rows, derived summary.

    Wall-clock times live in ``timings`` and are never part of the
    serialized report, which must be byte-identical across reruns.
    """

    kind: str
    config: dict
    records: list
    summary: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    library_version: str = __version__

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "library_version": self.library_version,
            "kind": self.kind,
            "config": self.config,
            "summary": self.summary,
            "records": self.records,
        }


# -- seeding and fan-out --------------------------------------------------------------


def derive_seed(master, *task):
    """64-bit task seed from the master seed and an integer task id."""
    ss = np.random.SeedSequence([int(master)] + [int(t) for t in task])
    return int(ss.generate_state(1, np.uint64)[0])


def resolve_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get("NCLLN_THREADS", "0") or 0)
    threads = int(threads)
    if threads < 0:
        raise ValidationError("threads must be >= 0")
    return threads or (os.cpu_count() or 1)


def _fan_out(fn, tasks, threads):
    threads = resolve_threads(threads)
    if threads == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _median(xs):
    return float(np.median(np.asarray(xs, dtype=float)))


def _stream(name):
    return {"path": 1, "copies": 2, "replicas": 3}[name]


# -- shared setup ---------------------------------------------------------------------


def _setup(cfg, center=True):
    model = build_model(cfg.model)
    F = build_observable(cfg.observable, model, center=center)
    ev = RateEvaluator().fit(model, F)
    return model, F, ev


def _model_summary(model):
    psi = [psi_coefficient(model, n) for n in (1, 2, 5, 10)]
    return {"label": model.label, "states": model.state_count, "doeblin_kappa": model.doeblin_kappa,
            "psi_1_2_5_10": psi}


# -- Erdos-Renyi scalar laws ----------------------------------------------------------


def _scalar_envelope(ev, rr, b):
    # a walk of b nodes splits into closed walks (mean <= beta_plus) and at most |S| leftover nodes
    S = ev.product_model_.state_count
    return rr.beta_plus + min(b, S) * (ev.bound_D_ - rr.beta_plus) / b


def _window_max_records(cfg, model, F, ev, rr, beta, c, threads):
    ell = F.ell
    n_max = cfg.n_schedule[-1]

    def task(seed):
        path = sample_path(model, ell * n_max, derive_seed(cfg.master_seed, seed, _stream("path")))
        rows = []
        prefix = None
        if ell * n_max <= STREAMING_THRESHOLD:
            prefix = prefix_sums_nonconventional(path, F, n_max)
        for n in cfg.n_schedule:
            b = window_length(n, c)
            if prefix is not None:
                M = window_maxima(prefix[:n + 1], b)
            else:
                M = streaming_window_max(path, F, n, b)
            env = _scalar_envelope(ev, rr, b)
            rows.append({"n": n, "seed": seed, "b": b, "M_n": M, "beta": beta, "abs_error": abs(M - beta),
                         "envelope": env, "within_envelope": bool(M <= env + 1e-12)})
        return rows

    rows = [r for block in _fan_out(task, list(cfg.seeds), threads) for r in block]
    rows.sort(key=lambda r: (r["n"], cfg.seeds.index(r["seed"])))
    return rows


def _er_summary(rows, schedule, key, target=None):
    med = {str(n): _median([r[key] for r in rows if r["n"] == n]) for n in schedule}
    out = {"median_by_n": med}
    if target is not None:
        errs = [abs(med[str(n)] - target) for n in schedule]
        out["median_abs_error_by_n"] = dict(zip(med, errs))
        out["error_decreases"] = bool(errs[-1] < errs[0]) if len(errs) > 1 else None
    return out


def run_scalar_er(cfg, threads=None):
    """Window maxima ``M_n`` of the nonconventional sums against the target ``beta`` with ``c = 1/I(beta)``."""
    if cfg.law not in ("scalar", "classical"):
        raise ValidationError(f"run_scalar_er needs a scalar or classical config, got {cfg.law!r}")
    center = cfg.law == "scalar"
    model, F, ev = _setup(cfg, center=center)
    if F.d != 1:
        raise ValidationError("scalar laws need d = 1")
    if F.bound_D == 0 or np.all(F.table == F.table.flat[0]):
        raise ValidationError("observable is constant; the rate function is degenerate")
    if cfg.law == "classical":
        if F.ell != 1:
            raise ValidationError("classical law needs ell = 1")
        if not np.allclose(model.kernel, model.stationary[None, :], atol=1e-14):
            raise ValidationError("classical law needs an i.i.d. model (all kernel rows equal)")
    rr = beta_range(ev)
    mean = float(ev.product_model_.stationary @ ev.values_[:, 0])
    beta = float(cfg.beta)
    if not mean < beta < rr.beta_zero:
        raise BetaOutOfRange(
            f"beta = {beta} must lie strictly between the mean {mean:.17g} and beta_0 = {rr.beta_zero:.17g}")
    I = ev.rate(beta)
    if not I > 0 or math.isinf(I):
        raise BetaOutOfRange(f"I(beta) = {I} gives no usable window constant")
    c = 1.0 / I
    if cfg.c is not None and abs(cfg.c - c) > 1e-12 * c:
        raise ValidationError(f"c is fixed to 1/I(beta) = {c:.17g}; drop 'c' from the config")
    if c * math.log(cfg.n_schedule[0]) < 1:
        raise ValidationError(f"c ln(min n) = {c * math.log(cfg.n_schedule[0]):.4g} < 1")
    rows = _window_max_records(cfg, model, F, ev, rr, beta, c, threads)
    summary = {
        "beta": beta, "rate_at_beta": I, "c": c, "beta_plus": rr.beta_plus, "beta_minus": rr.beta_minus,
        "beta_zero": rr.beta_zero, "mean": mean, "model": _model_summary(model),
        "all_within_envelope": all(r["within_envelope"] for r in rows),
    }
    summary.update(_er_summary(rows, cfg.n_schedule, "M_n", beta))
    return RunReport(cfg.law, cfg.to_dict(), rows, summary)


def run_classical_er(cfg, threads=None):
    """The classical law: ``ell = 1``, i.i.d. model, uncentered observable."""
    return run_scalar_er(cfg, threads)


# -- functional law -------------------------------------------------------------------


def run_functional_er(cfg, threads=None):
    """Hausdorff distance between the window family ``W^c_n`` and ``Phi(1/c)`` for each ``(n, seed)``."""
    model, F, ev = _setup(cfg)
    a = 1.0 / cfg.c
    tube_tol, q = _resolution(ev, cfg.tube_tol, None)
    net = level_set_net(ev, a, cfg.net_eps, M=cfg.net_M, cap=cfg.options["net_cap"])
    if len(net) == 0 or not np.any(net.slopes):
        raise ValidationError(f"the net of Phi({a:.6g}) has no nonzero member; increase 1/c or refine the net")
    # fill the shared caches before fanning out
    if F.d == 1:
        slope_table(ev)
        for n in cfg.n_schedule:
            _step_costs(ev, window_length(n, cfg.c), q)
    n_max = cfg.n_schedule[-1]

    def task(seed):
        path = sample_path(model, F.ell * n_max, derive_seed(cfg.master_seed, seed, _stream("path")))
        prefix = prefix_sums_nonconventional(path, F, n_max)
        rows = []
        for n in cfg.n_schedule:
            fam = window_family(prefix[:n + 1], n, cfg.c)
            rep = hausdorff_report(fam, net, ev, a, tube_tol, q)
            rows.append({"n": n, "seed": seed, "b": fam.provenance["b"], "windows": len(fam),
                         "H": rep.value, "family_to_level_set": rep.family_to_level_set,
                         "level_set_to_family": rep.level_set_to_family, "net_eps": net.eps,
                         "exact_solves": rep.exact_solves})
        return rows

    rows = [r for block in _fan_out(task, list(cfg.seeds), threads) for r in block]
    rows.sort(key=lambda r: (r["n"], cfg.seeds.index(r["seed"])))
    summary = {"a": a, "c": cfg.c, "tube_tol": tube_tol, "net_size": len(net), "net_eps": net.eps,
               "net_M": net.segments, "net_pitch": net.pitch, "net_radius": net.radius(),
               "model": _model_summary(model)}
    summary.update(_er_summary(rows, cfg.n_schedule, "H"))
    med = [summary["median_by_n"][str(n)] for n in cfg.n_schedule]
    summary["median_nonincreasing"] = bool(all(y <= x for x, y in zip(med, med[1:])))
    summary["median_drop"] = med[0] - med[-1]
    return RunReport("functional", cfg.to_dict(), rows, summary, artifacts={"net": net})


# -- decoupling lemma -----------------------------------------------------------------


def _chain_law(model, transitions):
    """Law of ``(Z_0, ..., Z_r)`` with ``Z_0 ~ mu`` and ``Z_{i+1} | Z_i ~ transitions[i]``."""
    p = model.stationary.copy()
    for T in transitions:
        p = p[..., :, None] * T
    return p


def _block_layout(L, gaps):
    """Transition matrices between consecutive coordinates of ``k`` blocks of length ``L``."""
    within = ["P"] * (L - 1)
    out = list(within)
    for g in gaps:
        out.append(g)
        out.extend(within)
    return out


def _outer(parts):
    p = parts[0]
    for q in parts[1:]:
        p = np.multiply.outer(p, q)
    return p


def lemma31_check(model, k, gaps, block_length=1, h="all-indicators"):
    """Exact ``|E h(Y_1..Y_k) - E h(Y_1^(1)..Y_k^(k))|`` against ``||h|| sum psi(gap_i)``.

    ``Y_i`` are consecutive blocks of ``block_length`` states; block ``i`` starts
    ``gaps[i-2]`` steps after block ``i-1`` ends.  ``h`` is ``"all-indicators"``
    (every indicator of a set of outcomes; the worst one is reported),
    ``"equal-endpoints"`` (first state of ``Y_1`` equals last state of ``Y_k``),
    or an explicit array over the joint outcome space.

    Returns ``(exact_diff, bound)``.
    """
    k = int(k)
    L = int(block_length)
    gaps = [int(g) for g in gaps]
    if k < 1 or L < 1 or len(gaps) != k - 1 or any(g < 1 for g in gaps):
        raise ValidationError("need k >= 1 blocks of length >= 1 and k - 1 gaps >= 1")
    S = model.state_count
    atoms = S ** (k * L)
    if atoms > JOINT_LAW_CAP:
        raise SizeCapExceeded(f"joint law has {atoms} outcomes (cap {JOINT_LAW_CAP})")
    steps = [model.kernel if t == "P" else model.n_step(t) for t in _block_layout(L, gaps)]
    joint = _chain_law(model, steps).reshape(-1)
    block = _chain_law(model, [model.kernel] * (L - 1))
    product = _outer([block] * k).reshape(-1)
    diff = joint - product
    bound_psi = sum(psi_coefficient(model, g) for g in gaps)
    if isinstance(h, str):
        if h == "all-indicators":
            # sup over indicators is the positive part; the negative part is the complement's
            exact = max(float(diff[diff > 0].sum()), float(-diff[diff < 0].sum()))
            return exact, bound_psi
        if h == "equal-endpoints":
            idx = np.indices((S,) * (k * L)).reshape(k * L, -1)
            hv = (idx[0] == idx[-1]).astype(float)
        else:
            raise ValidationError(f"unknown test function {h!r}")
    else:
        hv = np.asarray(h, dtype=float).reshape(-1)
        if hv.shape[0] != atoms:
            raise ValidationError(f"h must have {atoms} entries")
    return abs(float(hv @ diff)), float(np.max(np.abs(hv))) * bound_psi


def all_indicator_differences(model, k, gaps, block_length=1):
    """``|P(A) - P^x(A)|`` for every set ``A`` of joint outcomes (exhaustive; small spaces only)."""
    S = model.state_count
    atoms = S ** (k * block_length)
    if atoms > 16:
        raise SizeCapExceeded(f"{atoms} outcomes give 2^{atoms} sets; enumerate at most 2^16")
    steps = [model.kernel if t == "P" else model.n_step(t) for t in _block_layout(block_length, gaps)]
    joint = _chain_law(model, steps).reshape(-1)
    product = _outer([_chain_law(model, [model.kernel] * (block_length - 1))] * k).reshape(-1)
    sets = np.array(list(itertools.product((0.0, 1.0), repeat=atoms)))
    return np.abs(sets @ (joint - product))


def run_lemma31(cfg, threads=None):
    model = build_model(cfg.model)
    opt = cfg.options
    rows = []
    for k in opt["k_values"]:
        for g in opt["gaps"]:
            gaps = [g] * (k - 1)
            exact, bound = lemma31_check(model, k, gaps, opt["block_length"], opt["h"])
            row = {"k": k, "gap": g, "block_length": opt["block_length"], "h": opt["h"],
                   "exact_diff": exact, "bound": bound, "holds": bool(exact <= bound)}
            if opt["h"] == "all-indicators" and model.state_count ** (k * opt["block_length"]) <= 16:
                every = all_indicator_differences(model, k, gaps, opt["block_length"])
                row["indicators_checked"] = int(every.size)
                row["holds"] = bool(row["holds"] and np.all(every <= bound))
            rows.append(row)
    monotone = {}
    for k in opt["k_values"]:
        seq = [r["exact_diff"] for r in rows if r["k"] == k]
        monotone[str(k)] = bool(all(y <= x + 1e-15 for x, y in zip(seq, seq[1:])))
    summary = {"all_hold": all(r["holds"] for r in rows), "nonincreasing_in_gap": monotone,
               "model": _model_summary(model)}
    return RunReport("lemma31", cfg.to_dict(), rows, summary)


# -- large deviation bounds -----------------------------------------------------------


def _batch_paths(model, length, count, rng):
    """``count`` independent stationary paths of ``length`` states, one row each."""
    S = model.state_count
    cmu = np.cumsum(model.stationary)
    cmu[-1] = 1.0
    u = rng.random((count, length))
    if np.allclose(model.kernel, model.stationary[None, :], atol=0):
        return np.minimum(np.searchsorted(cmu, u, side="right"), S - 1).astype(np.int8 if S < 128 else np.int32)
    cum = np.cumsum(model.kernel, axis=1)
    cum[:, -1] = 1.0
    out = np.empty((count, length), dtype=np.int32)
    out[:, 0] = np.minimum(np.searchsorted(cmu, u[:, 0], side="right"), S - 1)
    for t in range(1, length):
        rows = cum[out[:, t - 1]]
        out[:, t] = np.minimum((u[:, t:t + 1] > rows).sum(axis=1), S - 1)
    return out


def clopper_pearson(hits, trials, level):
    """Two-sided exact binomial interval with total miss probability ``level``."""
    lo = 0.0 if hits == 0 else float(beta_dist.ppf(level / 2, hits, trials - hits + 1))
    hi = 1.0 if hits == trials else float(beta_dist.ppf(1 - level / 2, hits + 1, trials - hits))
    return lo, hi


def _target_curve(opt, n):
    """Target curve on the grid ``k/n``: either ``slope * u`` or piecewise-linear ``gamma`` values."""
    u = np.arange(n + 1) / n
    if opt["gamma"] is None:
        return float(opt["gamma_slope"]) * u, None
    g = np.asarray(opt["gamma"], dtype=float)
    grid = np.linspace(0, 1, g.shape[0])
    return np.interp(u, grid, g), (grid, g)


def _sup_to_target(curves, n, target, knots):
    dist = np.max(np.abs(curves - target[None, :]), axis=1)
    if knots is not None:
        # both curves are piecewise linear; the sup may also sit at the target's own knots
        grid, g = knots
        j = np.clip(np.floor(grid * n).astype(np.int64), 0, n - 1)
        t = grid * n - j
        at_knots = curves[:, j] * (1 - t) + curves[:, j + 1] * t
        dist = np.maximum(dist, np.max(np.abs(at_knots - g[None, :]), axis=1))
    return dist


def ld_bounds_check(cfg, threads=None):
    """Monte Carlo check of both large-deviation bounds for ``T_n / n`` built from independent copies."""
    model, F, ev = _setup(cfg)
    if F.d != 1:
        raise ValidationError("ld-bounds is implemented for scalar observables")
    opt = cfg.options
    delta, lam, a = float(opt["delta"]), float(opt["lam"]), float(opt["a"])
    if not (delta > 0 and lam > 0 and a > 0):
        raise ValidationError("delta, lam and a must be positive")
    replicas = int(opt["replicas"])
    if replicas < 1:
        raise ValidationError("replicas must be positive")
    if opt["gamma"] is None:
        S_gamma = ev.rate(float(opt["gamma_slope"]))
    else:
        from .large_deviations.rate import action
        from .sums import StepCurve
        S_gamma = action(ev, StepCurve(opt["gamma"]))
    tube_tol, q = _resolution(ev, cfg.tube_tol, None)
    slope_table(ev)
    for n in cfg.n_schedule:
        _step_costs(ev, n, q)
    ell = F.ell
    table = F.flat_table()[:, 0]
    blocks = [(i, min(REPLICA_BLOCK, replicas - i)) for i in range(0, replicas, REPLICA_BLOCK)]

    def task(args):
        seed, n, (start, count) = args
        rng = np.random.default_rng(derive_seed(cfg.master_seed, seed, _stream("replicas"), n, start))
        k = np.arange(1, n + 1)
        flat = np.zeros((count, n), dtype=np.int64)
        for i in range(ell):
            X = _batch_paths(model, (i + 1) * n, count, rng)
            flat = flat * model.state_count + X[:, (i + 1) * k - 1]
        T = np.zeros((count, n + 1))
        np.cumsum(table[flat], axis=1, out=T[:, 1:])
        curves = T / n
        target, knots = _target_curve(opt, n)
        near = int(np.sum(_sup_to_target(curves, n, target, knots) < delta))
        inside = within_distance(ev, curves[:, :, None], a, delta, tube_tol, q)
        return near, int(count - inside.sum())

    tasks = [(seed, n, blk) for seed in cfg.seeds for n in cfg.n_schedule for blk in blocks]
    results = dict(zip(tasks, _fan_out(task, tasks, threads)))
    level = float(opt["band"])
    rows = []
    for n in cfg.n_schedule:
        for seed in cfg.seeds:
            near = sum(results[(seed, n, blk)][0] for blk in blocks)
            far = sum(results[(seed, n, blk)][1] for blk in blocks)
            p_lo, p_hi = clopper_pearson(near, replicas, level)
            q_lo, q_hi = clopper_pearson(far, replicas, level)
            zero = near == 0
            lower_rate = math.inf if zero else -math.log(near / replicas) / n
            upper_rate = -math.inf if far == 0 else math.log(far / replicas) / n
            rows.append({
                "n": n, "seed": seed, "replicas": replicas, "near_hits": near, "p_hat": near / replicas,
                "p_band": [p_lo, p_hi], "neg_log_p_over_n": lower_rate, "S_gamma": S_gamma, "lam": lam,
                "zero_hits": zero,
                "lower_ok": None if zero else bool(lower_rate <= S_gamma + lam),
                "lower_ok_band": bool(-math.log(p_hi) / n <= S_gamma + lam),
                "far_hits": far, "q_hat": far / replicas, "q_band": [q_lo, q_hi],
                "log_q_over_n": upper_rate, "a": a,
                "upper_ok": bool(math.log(q_hi) / n <= -(a - lam)),
            })
    summary = {"S_gamma": S_gamma, "delta": delta, "lam": lam, "a": a, "tube_tol": tube_tol,
               "band_level": level, "zero_hits_at": [r["n"] for r in rows if r["zero_hits"]],
               "lower_ok_all": all(r["lower_ok"] for r in rows if r["lower_ok"] is not None),
               "upper_ok_all": all(r["upper_ok"] for r in rows)}
    return RunReport("ld-bounds", cfg.to_dict(), rows, summary)


# -- plain simulation and rate tables -------------------------------------------------


def run_simulate(cfg, threads=None):
    """Sample paths and report ``Sigma_n / n``, state frequencies and (with ``c``) window maxima."""
    from .sums import family_to_csv

    model, F, ev = _setup(cfg)
    n_max = cfg.n_schedule[-1]

    def task(seed):
        path = sample_path(model, F.ell * n_max, derive_seed(cfg.master_seed, seed, _stream("path")))
        prefix = prefix_sums_nonconventional(path, F, n_max)
        rows, families = [], {}
        for n in cfg.n_schedule:
            freq = np.bincount(path.states[:F.ell * n], minlength=model.state_count) / (F.ell * n)
            row = {"n": n, "seed": seed, "sigma_n_over_n": (prefix[n] / n).tolist(),
                   "state_frequencies": freq.tolist()}
            if cfg.c is not None:
                b = window_length(n, cfg.c)
                row["b"] = b
                row["window_max"] = [window_maxima(prefix[:n + 1], b, i) for i in range(F.d)]
                if cfg.options["emit_family"]:
                    families[f"family_n{n}_seed{seed}"] = family_to_csv(window_family(prefix[:n + 1], n, cfg.c))
            rows.append(row)
        return rows, families

    out = _fan_out(task, list(cfg.seeds), threads)
    rows = sorted((r for block, _ in out for r in block), key=lambda r: (r["n"], cfg.seeds.index(r["seed"])))
    families = {k: v for _, fam in out for k, v in sorted(fam.items())}
    summary = {"model": _model_summary(model), "observable_D": F.bound_D, "ell": F.ell, "d": F.d}
    return RunReport("simulate", cfg.to_dict(), rows, summary, artifacts={"families": families})


def run_rate(cfg, threads=None):
    """Rate-function table over a ``beta`` grid plus ``sigma^2``, ``beta_+/-`` and ``D``."""
    model, F, ev = _setup(cfg)
    D = F.bound_D
    if cfg.options["betas"] is not None:
        betas = [np.atleast_1d(np.asarray(b, dtype=float)) for b in cfg.options["betas"]]
    elif F.d == 1:
        m = int(cfg.options["grid_points"])
        betas = [np.array([b]) for b in np.linspace(-1.1 * D, 1.1 * D, m)]
    else:
        raise ValidationError("give options.betas explicitly when d > 1")
    if F.d == 1 and cfg.options["betas"] is None:
        values = ev.rate_grid(np.array([b[0] for b in betas]))
    else:
        values = [ev.rate(b) for b in betas]
    rows = []
    for b, v in zip(betas, values):
        v = float(v)
        rows.append({"beta": float(b[0]) if F.d == 1 else b.tolist(),
                     "I": v if math.isfinite(v) else None, "finite": math.isfinite(v)})
    summary = {"D": D, "ell": F.ell, "d": F.d, "model": _model_summary(model)}
    if F.d == 1:
        rr = beta_range(ev)
        summary.update({"beta_plus": rr.beta_plus, "beta_minus": rr.beta_minus, "beta_zero": rr.beta_zero,
                        "witness_plus": list(rr.witness_plus), "witness_minus": list(rr.witness_minus)})
    s2 = [sigma_squared(ev, e) for e in np.eye(F.d)]
    if min(s2) <= 1e-14:
        warnings.warn("limiting variance vanishes in some direction; variance diagnostics skipped", stacklevel=2)
        summary["sigma_squared"] = None
    else:
        summary["sigma_squared"] = s2 if F.d > 1 else s2[0]
    return RunReport("rate", cfg.to_dict(), rows, summary)


# -- oracles --------------------------------------------------------------------------


def _is_fair_coin(model, F):
    return (F.ell == 1 and F.d == 1 and model.state_count == 2
            and np.allclose(model.kernel, 0.5, atol=0) and np.array_equal(np.sort(F.table[:, 0]), [-1.0, 1.0]))


def random_test_curves(rng, count, a, rate, D=1.0):
    """Mixed within- and over-budget scalar curves on small grids."""
    curves = []
    for i in range(count):
        N = int(rng.integers(3, 9))
        scale = rng.uniform(0.05, 0.3) if i % 2 == 0 else rng.uniform(0.4, 1.0)
        slopes = np.clip(rng.uniform(-1, 1, N) * scale * D + rng.normal(0, 0.05) * D, -D, D)
        curves.append(np.concatenate([[0.0], np.cumsum(slopes) / N]))
    return curves


def run_oracle(cfg, threads=None):
    from . import oracles

    opt = cfg.options
    target = oracles.check_target(opt["target"])
    model = build_model(cfg.model)
    rng = np.random.default_rng(derive_seed(cfg.master_seed, 0, 4))
    if target == "contraction":
        G = np.asarray(cfg.observable["values"], dtype=float)
        if cfg.observable.get("center", True):
            G = G - model.stationary @ G
        comps = oracles.check_contraction(model, G, opt["betas"], int(opt["grid_points"]))
    else:
        F = build_observable(cfg.observable, model)
        ev = RateEvaluator().fit(model, F)
        if target == "pi-growth":
            alphas = [np.zeros(F.d)]
            for _ in range(int(opt["alphas"]) - 1):
                v = rng.normal(size=F.d)
                alphas.append(v / np.linalg.norm(v) * opt["alpha_radius"] * rng.random() ** (1 / F.d))
            comps = oracles.check_pi_growth(ev, alphas)
        elif target == "cycles":
            if ev.product_model_.state_count > int(opt["max_nodes"]):
                raise SizeCapExceeded(f"product graph has {ev.product_model_.state_count} nodes; exhaustive "
                                      f"cycle enumeration is capped at {opt['max_nodes']}")
            comps = oracles.check_cycles(ev)
        else:
            tube_tol = cfg.tube_tol if cfg.tube_tol is not None else 0.01
            rate = oracles.fair_coin_rate if _is_fair_coin(model, F) else ev.rate
            curves = random_test_curves(rng, int(opt["curves"]), opt["a"], rate, F.bound_D)
            from .large_deviations.levelset import dist_to_level_set
            from .sums import StepCurve
            comps = []
            for c in curves:
                main = dist_to_level_set(ev, StepCurve(c), opt["a"], tube_tol=tube_tol)
                orc = oracles.dense_curve_distance(c, opt["a"], tube_tol, rate=rate, bound_D=F.bound_D)
                comps.append(oracles.OracleComparison("curve-dp", main, orc, 2 * tube_tol))
    rows = [{"target": c.target, "index": i, "main": c.main, "oracle": c.oracle, "difference": c.difference,
             "tolerance": c.tolerance, "passed": c.passed} for i, c in enumerate(comps)]
    summary = {"target": target, "all_passed": all(r["passed"] for r in rows), "count": len(rows)}
    return RunReport("oracle", cfg.to_dict(), rows, summary)


RUNNERS = {
    "scalar": run_scalar_er,
    "classical": run_classical_er,
    "functional": run_functional_er,
    "lemma31": run_lemma31,
    "ld-bounds": ld_bounds_check,
    "simulate": run_simulate,
    "rate": run_rate,
    "oracle": run_oracle,
}


def run_experiment(cfg, threads=None):
    return RUNNERS[cfg.law](cfg, threads)
