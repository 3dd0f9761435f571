"""Command-line entry point: ``pcqa score|batch|train|predict|evaluate``.

Exit codes: 0 success, 1 usage error, 2 input/parse error, 3 partial batch failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import multiprocessing
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import _accel
from .evaluation import EvalReport, evaluate
from .metrics import SCORE_NAMES, MetricConfig, compute_features
from .ply import load_ply
from .svr import ModelFormatError, SvrHyperparams, load_model, save_model, train

log = logging.getLogger("pcqa")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_PARTIAL = 3


class InputError(Exception):
    """Bad input file or content; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v) -> str:
    return f"{float(v):.17g}"


# metric plumbing ---------------------------------------------------------


def _config(args) -> MetricConfig:
    return MetricConfig(k3=args.k3, k4=args.k4, k_n=args.kn, sampling=not args.no_sampling)


def _load(path, scale):
    cloud = load_ply(path)
    return cloud.scaled(scale) if scale != 1.0 else cloud


def score_pair(ref_path, dist_path, config: MetricConfig, scale: float = 1.0):
    return compute_features(_load(ref_path, scale), _load(dist_path, scale), config)


def _batch_worker_init(threads):
    _accel.set_num_threads(threads)


def _batch_task(task):
    row_no, ref_path, dist_path, config, scale = task
    t0 = time.perf_counter()
    try:
        fv = score_pair(ref_path, dist_path, config, scale)
    except Exception as exc:  # reported per row; the batch keeps going
        return row_no, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0
    return row_no, fv.scores(), None, time.perf_counter() - t0


# CSV helpers -------------------------------------------------------------


def _read_csv(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise InputError(f"{path}: empty CSV (header required)")
            fields = [f.strip() for f in reader.fieldnames]
            rows = [{k.strip(): (v.strip() if isinstance(v, str) else v) for k, v in r.items()} for r in reader]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return fields, rows


def _float_column(rows, name, path):
    out = []
    for i, r in enumerate(rows, start=2):
        try:
            v = float(r[name])
        except (TypeError, ValueError):
            raise InputError(f"{path}: line {i}: column {name!r} is not a number: {r.get(name)!r}") from None
        if not math.isfinite(v):
            raise InputError(f"{path}: line {i}: column {name!r} is not finite")
        out.append(v)
    return np.array(out, dtype=np.float64)


def _feature_columns(fields):
    cols = [f for f in fields if len(f) > 1 and f[0] == "s" and f[1:].isdigit()]
    return sorted(cols, key=lambda f: int(f[1:]))


def read_manifest(path):
    """Rows of ``(ref_path, dist_path, mos or None)``; relative paths resolve against the manifest's directory."""
    fields, rows = _read_csv(path)
    for col in ("ref_path", "dist_path"):
        if col not in fields:
            raise InputError(f"{path}: manifest lacks column {col!r}")
    has_mos = "mos" in fields
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for i, r in enumerate(rows, start=2):
        ref, dist = r["ref_path"], r["dist_path"]
        if not ref or not dist:
            raise InputError(f"{path}: line {i}: empty path")
        mos = None
        if has_mos and r.get("mos") not in (None, ""):
            try:
                mos = float(r["mos"])
            except ValueError:
                raise InputError(f"{path}: line {i}: mos is not a number") from None
            if not math.isfinite(mos):
                raise InputError(f"{path}: line {i}: mos is not finite")
        out.append((ref, dist, os.path.join(base, ref), os.path.join(base, dist), mos))
    return out, has_mos


# commands ------------------------------------------------------------


def cmd_score(args):
    cfg = _config(args)
    try:
        fv = score_pair(args.ref, args.dist, cfg, args.scale)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    pred = None
    if args.model:
        pred = float(_load_model(args.model).predict(fv.as_array()))
    if args.json:
        out = {name: getattr(fv, name) for name in SCORE_NAMES}
        out.update(e_p2point=fv.e_p2point, e_p2plane=fv.e_p2plane, e_bvar=fv.e_bvar, e_gvar=fv.e_gvar)
        if pred is not None:
            out["pred"] = pred
        out["timings"] = fv.timings
        print(json.dumps(out, indent=1))
    else:
        vals = list(fv.scores()) + ([pred] if pred is not None else [])
        if args.header:
            print(",".join(list(SCORE_NAMES) + (["pred"] if pred is not None else [])))
        print(",".join(_fmt(v) for v in vals))
    return EXIT_OK


def cmd_batch(args):
    rows, has_mos = read_manifest(args.manifest)
    cfg = _config(args)
    tasks = [(i, r[2], r[3], cfg, args.scale) for i, r in enumerate(rows)]
    jobs = max(1, int(args.jobs))
    results = [None] * len(rows)
    if jobs == 1 or len(tasks) <= 1:
        for t in tasks:
            res = _batch_task(t)
            results[res[0]] = res
    else:
        # spawn: forking after numba's OpenMP pool has started is unsafe
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx,
                                 initializer=_batch_worker_init, initargs=(1,)) as pool:
            for res in pool.map(_batch_task, tasks):
                results[res[0]] = res

    header = ["ref_path", "dist_path", *SCORE_NAMES] + (["mos"] if has_mos else []) + (["seconds"] if args.timing else [])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    failures = []
    for (ref, dist, _, _, mos), (row_no, scores, err, secs) in zip(rows, results):
        if err is not None:
            failures.append((row_no + 2, ref, dist, err))
            continue
        line = [ref, dist, *(_fmt(s) for s in scores)]
        if has_mos:
            line.append("" if mos is None else _fmt(mos))
        if args.timing:
            line.append(f"{secs:.3f}")
        writer.writerow(line)
    try:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from exc
    for line_no, ref, dist, err in failures:
        print(f"{args.manifest}: line {line_no}: FAILED {ref},{dist}: {err}", file=sys.stderr)
    if failures:
        print(f"{len(failures)} of {len(rows)} pairs failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _load_model(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise InputError(f"cannot read model {path}: {exc}") from exc
    except ModelFormatError as exc:
        raise InputError(f"{path}: {exc}") from exc


def cmd_train(args):
    fields, rows = _read_csv(args.features)
    cols = _feature_columns(fields)
    if not cols:
        raise InputError(f"{args.features}: no feature columns (s1..s5)")
    if "mos" not in fields:
        raise InputError(f"{args.features}: missing 'mos' column")
    if not rows:
        raise InputError(f"{args.features}: no data rows")
    x = np.column_stack([_float_column(rows, c, args.features) for c in cols])
    y = _float_column(rows, "mos", args.features)
    hp = SvrHyperparams(C=args.c, epsilon=args.epsilon, gamma=args.gamma,
                        kkt_tolerance=args.kkt_tol, max_passes=args.max_passes)
    model = train(x, y, hp)
    try:
        save_model(model, args.out)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from exc
    fit = model.predict(x)
    rmse = float(np.sqrt(np.mean((fit - y) ** 2)))
    print(f"n={len(y)} features={','.join(cols)} support_vectors={model.n_support} "
          f"converged={str(model.converged).lower()} iterations={model.iterations} "
          f"C={_fmt(model.C)} epsilon={_fmt(model.epsilon)} gamma={_fmt(model.gamma)} train_rmse={_fmt(rmse)}")
    if not model.converged:
        print("warning: SMO stopped at max-passes before meeting the KKT tolerance", file=sys.stderr)
    return EXIT_OK


def cmd_predict(args):
    model = _load_model(args.model)
    fields, rows = _read_csv(args.features)
    cols = _feature_columns(fields)
    if len(cols) != model.n_features:
        raise InputError(f"{args.features}: {len(cols)} feature columns but model expects {model.n_features}")
    x = np.column_stack([_float_column(rows, c, args.features) for c in cols]) if rows else np.empty((0, len(cols)))
    pred = model.predict(x) if rows else np.empty(0)
    out_fields = [f for f in fields if f != "pred"] + ["pred"]
    try:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(out_fields)
            for r, p in zip(rows, pred):
                writer.writerow([r.get(f, "") for f in out_fields[:-1]] + [_fmt(p)])
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from exc
    return EXIT_OK


def cmd_evaluate(args):
    fields, rows = _read_csv(args.pred)
    for col in ("pred", "mos"):
        if col not in fields:
            raise InputError(f"{args.pred}: missing {col!r} column")
    if len(rows) < 5:
        raise InputError(f"{args.pred}: need at least 5 rows, got {len(rows)}")
    report = evaluate(_float_column(rows, "pred", args.pred), _float_column(rows, "mos", args.pred))
    text = report.to_json() + "\n"
    if args.out:
        payload = f"{EvalReport.CSV_HEADER}\n{report.csv_row()}\n" if args.out.endswith(".csv") else text
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(payload)
        except OSError as exc:
            raise InputError(f"cannot write {args.out}: {exc}") from exc
    print(EvalReport.CSV_HEADER)
    print(report.csv_row())
    return EXIT_OK


# argument parsing ------------------------------------------------------


def _metric_flags(p):
    g = p.add_argument_group("metric parameters")
    g.add_argument("--k3", type=int, default=20, help="neighbors for the local lightness spread (S3)")
    g.add_argument("--k4", type=int, default=5, help="neighbors for the graph total variation (S4)")
    g.add_argument("--kn", type=int, default=20, help="neighbors for normal estimation (S2)")
    g.add_argument("--no-sampling", action="store_true",
                   help="use the full distorted cloud for S3/S4 instead of the reference-aligned resampling")
    g.add_argument("--scale", type=float, default=1.0,
                   help="uniform factor applied to all coordinates before scoring")


def build_parser():
    parser = _Parser(prog="pcqa", description="Full-reference point cloud quality assessment.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("score", help="score one reference/distorted pair")
    p.add_argument("--ref", required=True)
    p.add_argument("--dist", required=True)
    p.add_argument("--model", help="SVR model file; adds the predicted quality")
    p.add_argument("--json", action="store_true", help="structured output with raw errors and timings")
    p.add_argument("--header", action="store_true", help="print a CSV header line")
    _metric_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("batch", help="score every pair of a manifest CSV")
    p.add_argument("--manifest", required=True, help="CSV with ref_path,dist_path[,mos]")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="append a per-pair seconds column")
    _metric_flags(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("train", help="train the SVR on a feature CSV with a mos column")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=None, help="tube width (default 0.1*std(mos))")
    p.add_argument("--gamma", type=float, default=None, help="RBF width (default 1/n_features)")
    p.add_argument("--kkt-tol", type=float, default=1e-3)
    p.add_argument("--max-passes", type=int, default=1_000_000)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="append SVR predictions to a feature CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="PLCC/SROCC of predictions against MOS")
    p.add_argument("--pred", required=True, help="CSV with pred and mos columns")
    p.add_argument("--out", help="report path (.csv for a CSV row, otherwise JSON)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    for name in ("k3", "k4", "kn"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            parser.error(f"--{name} must be >= 1")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    if getattr(args, "scale", 1.0) <= 0 or not math.isfinite(getattr(args, "scale", 1.0)):
        parser.error("--scale must be a positive number")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"pcqa: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"pcqa: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
