"""Command-line entry points, config ingestion and report emission.

Reports are written deterministically: floats carry 17 significant digits,
CSV follows RFC 4180 (CRLF line ends, UTF-8), and wall-clock timings go to
a separate ``*.timing.json`` sidecar so that ``report.json`` and
``records.csv`` are byte-identical across reruns of the same config.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import IoError, NclError, ParseError, ValidationError
from .experiments import ExperimentConfig, derive_seed, resolve_threads, run_experiment
from .sums import CurveFamily, family_to_csv

log = logging.getLogger("nclln")

SUBCOMMANDS = {
    "simulate": ("simulate",),
    "rate": ("rate",),
    "er-scalar": ("scalar", "classical"),
    "er-functional": ("functional",),
    "diagnose-lemma31": ("lemma31",),
    "ld-check": ("ld-bounds",),
    "oracle": ("oracle",),
}


# -- serialization --------------------------------------------------------------------


def format_float(x):
    """17 significant digits; non-finite values become ``inf``, ``-inf`` or ``nan``."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = format(x, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def to_json(obj, indent=2, _level=0):
    """JSON text with 17-digit floats; non-finite floats are encoded as strings."""
    obj = _plain(obj)
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        s = format_float(obj)
        return s if math.isfinite(obj) else json.dumps(s)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {to_json(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(_plain(v), (dict, list)) for v in obj):
            return "[" + ", ".join(to_json(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _compact(obj):
    return to_json(obj, indent=0).replace("\n", "")


def _cell(v):
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, (list, dict)):
        return _compact(v)
    return str(v)


def records_to_csv(records):
    """RFC 4180 CSV with the union of record keys (first-seen order) as header."""
    cols = []
    for r in records:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(cols)
    for r in records:
        w.writerow([_cell(r.get(k)) for k in cols])
    return buf.getvalue()


def rate_table_csv(records):
    """Rate table: ``beta, I, finite`` with ``inf`` for points outside the domain."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["beta", "I", "finite"])
    for r in records:
        I = r["I"] if r["I"] is not None else math.inf
        w.writerow([_cell(r["beta"]), format_float(I), "true" if r["finite"] else "false"])
    return buf.getvalue()


def net_csv(net):
    """Level-set net in the curve-family schema, with ``a, eps, M, pitch`` in the header line."""
    fam = CurveFamily(net.values, {})
    header = {"a": format_float(net.a), "eps": format_float(net.eps), "M": net.segments,
              "pitch": format_float(net.pitch), "d": fam.d}
    return family_to_csv(fam, header=header)


def config_hash(cfg):
    return hashlib.sha256(to_json(cfg.to_dict()).encode("utf-8")).hexdigest()[:12]


# -- config ---------------------------------------------------------------------------


def _no_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise ValidationError(f"duplicate key {k!r} in config")
        seen[k] = v
    return seen


def parse_config(path, law=None):
    """Read, parse and validate a JSON experiment config.

    A model spec ``{"kind": "file", "path": ...}`` is resolved relative to the
    config's directory and inlined as a ``document`` so the echoed config
    fully determines the run.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed config {path}: {exc.msg}", exc.lineno, exc.colno) from exc
    if isinstance(doc, dict) and isinstance(doc.get("model"), dict) and doc["model"].get("kind") == "file":
        spec = doc["model"]
        extra = set(spec) - {"kind", "path"}
        if extra or "path" not in spec:
            raise ValidationError("file model spec takes exactly 'path'")
        ref = (path.parent / spec["path"]).resolve()
        try:
            model_doc = json.loads(ref.read_text(encoding="utf-8"), object_pairs_hook=_no_duplicates)
        except OSError as exc:
            raise IoError(f"cannot read model file {ref}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed model file {ref}: {exc.msg}", exc.lineno, exc.colno) from exc
        doc = dict(doc, model={"kind": "document", "document": model_doc})
    return ExperimentConfig.from_dict(doc, law=law)


# -- emission -------------------------------------------------------------------------


def _write(path, text):
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def report_stem(report, subcommand):
    sched = report.config.get("n_schedule") or []
    nrange = f"n{min(sched)}-{max(sched)}" if sched else "n-none"
    cfg = ExperimentConfig.from_dict(report.config)
    return f"{subcommand}_{nrange}_{config_hash(cfg)}"


def emit_report(report, out_dir, fmt="both", subcommand=None):
    """Write ``<stem>.report.json`` and/or ``<stem>.records.csv`` plus run artifacts; returns the paths."""
    if fmt not in ("json", "csv", "both"):
        raise ValidationError(f"format must be json, csv or both, got {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from exc
    stem = report_stem(report, subcommand or report.kind)
    paths = []
    if fmt in ("json", "both"):
        paths.append(_write(out / f"{stem}.report.json", to_json(report.to_dict()) + "\n"))
    if fmt in ("csv", "both"):
        paths.append(_write(out / f"{stem}.records.csv", records_to_csv(report.records)))
    if report.kind == "rate":
        paths.append(_write(out / f"{stem}.rate_table.csv", rate_table_csv(report.records)))
    net = report.artifacts.get("net")
    if net is not None:
        paths.append(_write(out / f"{stem}.net.csv", net_csv(net)))
    for name, text in report.artifacts.get("families", {}).items():
        paths.append(_write(out / f"{stem}.{name}.csv", text))
    if report.timings:
        paths.append(_write(out / f"{stem}.timing.json", to_json(report.timings) + "\n"))
    return paths


# -- command line ---------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="nclln", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default="./out", help="output directory (default ./out)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--format", choices=("json", "csv", "both"), default="both")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads, 0 = auto (fallback: NCLLN_THREADS)")
    return parser


def _print_summary(report, paths, stream):
    for k, v in report.summary.items():
        if not isinstance(v, dict):
            print(f"{k}: {_cell(v)}", file=stream)
    for p in paths:
        print(f"wrote {p}", file=stream)


def run_cli(args):
    laws = SUBCOMMANDS[args.subcommand]
    cfg = parse_config(args.config, law=None if len(laws) > 1 else laws[0])
    if cfg.law not in laws:
        raise ValidationError(f"subcommand {args.subcommand} runs {laws}, config declares {cfg.law!r}")
    if args.seed is not None:
        cfg = cfg.with_master_seed(args.seed)
    threads = resolve_threads(args.threads)
    log.info("master seed %d, replicate seeds %s, path seeds %s", cfg.master_seed, list(cfg.seeds),
             [derive_seed(cfg.master_seed, s, 1) for s in cfg.seeds])
    start = time.perf_counter()
    report = run_experiment(cfg, threads)
    report.timings = {"wall_clock_seconds": time.perf_counter() - start, "threads": threads}
    paths = emit_report(report, args.out, args.format, args.subcommand)
    _print_summary(report, paths, sys.stdout)
    if report.kind == "oracle" and not report.summary.get("all_passed", False):
        print("oracle mismatch outside tolerance", file=sys.stderr)
        return 3
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return run_cli(args)
    except NclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
