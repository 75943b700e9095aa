"""Command line entry point: ingest, train, certify and curve.

Exit codes: 0 success, 1 usage or configuration, 2 data, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Domain, Exactness, Norm, ThreatSpec, dispatch_support, load_model, save_model
from .data import Dataset, load_dataset, read_idx, write_csv, write_npz
from .errors import (DataFormatError, DimensionMismatch, InvariantViolation, NPCError, SchemaVersionMismatch,
                     UnsupportedCombination)
from .exact import BoundMode, certify_dataset, robust_fraction
from .train import Init, Optimizer, TrainConfig, clean_accuracy, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

CERTIFY_COLUMNS = ["index", "label", "predicted", "lower_bound", "exact", "upper_bound",
                   "shortcut", "subproblems", "time_s"]
CURVE_COLUMNS = {"plain": "cra", "box": "cra_box", "dual": "cra_sphere"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _domain(text: str) -> Domain:
    return Domain(text.replace("-", "_"))


def _fmt(v: Optional[float]) -> str:
    if v is None:
        return ""
    return repr(float(v)) if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _load_data(path, labels=None, num_classes=None) -> Dataset:
    return load_dataset(path, labels, num_classes)


# ---------------------------------------------------------------------------
# ingest

def cmd_ingest(args) -> int:
    _require(args, "out")
    if args.images:
        _require(args, "labels")
        ds = read_idx(args.images, args.labels, args.num_classes)
    else:
        _require(args, "data")
        ds = load_dataset(args.data, None, args.num_classes)
    out = Path(args.out)
    if out.suffix.lower() == ".npz":
        write_npz(ds, out)
    else:
        write_csv(ds, out)
    counts = ds.class_counts(args.num_classes)
    print(f"points={len(ds)} dim={ds.dim if len(ds) else 0}")
    for k, c in enumerate(counts):
        print(f"class {k}: {int(c)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    _require(args, "data", "out")
    metric = Norm(args.metric)
    if metric not in (Norm.L2, Norm.LINF):
        raise UnsupportedCombination(f"training supports l2/linf only, got {metric.value}")
    threat = Norm(args.threat) if args.threat else metric
    ds = _load_data(args.data, args.data_labels, args.num_classes)
    k = args.num_classes or ds.num_classes
    ds.require_all_classes(k)
    batch = min(args.batch_size or 128, max(1, len(ds)))
    config = TrainConfig(prototypes_per_class=args.ppc, cap=args.cap, metric=metric,
                         learning_rate=args.lr, epochs=args.epochs, batch_size=batch, lr_decay=args.lr_decay,
                         init=Init(args.init), seed=args.seed, optimizer=Optimizer(args.optimizer))
    model, trace = train(ds, config, threat, k)
    out = Path(args.out)
    save_model(model, out)
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "objective", "clean_accuracy"])
        for row in trace:
            w.writerow([row.epoch, repr(row.objective), repr(row.clean_accuracy)])
    print(f"clean_accuracy={clean_accuracy(model, ds):.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# certify

def _refusal(model, q: Norm, mode: BoundMode, domain: Domain) -> None:
    exactness = Exactness.EXACT if mode is BoundMode.EXACT else Exactness.PAIRWISE
    entry = dispatch_support(model.metric, q, exactness, domain)
    if entry.supported:
        return
    hint = ""
    if mode is BoundMode.EXACT and dispatch_support(model.metric, q, Exactness.PAIRWISE, domain).supported:
        hint = "; a lower bound is available with --mode lower"
    raise UnsupportedCombination(entry.cell + hint)


def _prepare(args):
    model = load_model(args.model)
    if args.domain:
        model = model.with_domain(_domain(args.domain))
    q = Norm(args.threat) if args.threat else model.metric.base
    ds = _load_data(args.data, args.data_labels, model.num_classes)
    if len(ds) and ds.dim != model.dim:
        raise DimensionMismatch(f"data has {ds.dim} features, model expects {model.dim}")
    return model, q, ds


def _mean(values) -> str:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return f"{np.mean(vals):.6f}" if vals else "n/a"


def cmd_certify(args) -> int:
    _require(args, "model", "data")
    mode = BoundMode(args.mode)
    model, q, ds = _prepare(args)
    _refusal(model, q, mode, model.domain)
    threat = ThreatSpec(q, args.radius_cap)
    radii = args.radius or []
    report = certify_dataset(model, ds.features, ds.labels, threat, mode, radii, args.jobs)
    uppers = [None] * len(ds)
    if args.attack:
        from .oracle import attack_upper_bound
        for k, (cert, z, y) in enumerate(zip(report.certificates, ds.features, ds.labels)):
            if cert is not None and cert.correct:
                uppers[k] = attack_upper_bound(model, z, int(y), threat, args.budget)
            elif cert is not None:
                uppers[k] = 0.0
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(CERTIFY_COLUMNS)
        for k, (cert, y) in enumerate(zip(report.certificates, ds.labels)):
            if cert is None:
                w.writerow([k, int(y)] + [""] * (len(CERTIFY_COLUMNS) - 2))
                continue
            diag = cert.diagnostics
            w.writerow([k, int(y), cert.label_predicted, _fmt(cert.lower_bound), _fmt(cert.exact),
                        _fmt(uppers[k]), int(diag.shortcut_hit), diag.subproblems_solved,
                        f"{diag.wall_time:.6f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    for f in report.failures:
        print(f"point {f.index}: {f.error}: {f.message}", file=sys.stderr)
    for r, cra in zip(report.radii, report.cra):
        print(f"CRA@{r:g}={cra:.4f}")
    good = [c for c in report.certificates if c is not None and c.correct]
    box = model.domain is Domain.UNIT_BOX
    print("mean_bounds"
          f" trivial={_mean(c.diagnostics.trivial_bound for c in good)}"
          f" unbounded={_mean(c.diagnostics.unbounded_bound for c in good)}"
          f" box={_mean(c.lower_bound for c in good) if box else 'n/a'}"
          f" exact={_mean(c.exact for c in good) if mode is BoundMode.EXACT else 'n/a'}")
    print(f"clean_accuracy={report.clean_accuracy:.4f} failures={len(report.failures)}")
    if len(ds) and len(report.failures) == len(ds):
        return EXIT_SOLVER
    return EXIT_OK


# ---------------------------------------------------------------------------
# curve

def _bound_domains(model, kinds):
    table = {"plain": Domain.UNBOUNDED, "box": Domain.UNIT_BOX, "dual": Domain.SPHERE_PRODUCT}
    if "dual" in kinds and model.embedding is None:
        raise UsageError("--bound dual needs a model with a sphere embedding")
    return [(k, table[k]) for k in ("plain", "box", "dual") if k in kinds]


def cmd_curve(args) -> int:
    _require(args, "model", "data")
    mode = BoundMode(args.mode)
    model, q, ds = _prepare(args)
    if args.bound:
        kinds = [b.strip() for b in args.bound.split(",") if b.strip()]
        unknown = set(kinds) - set(CURVE_COLUMNS)
        if unknown:
            raise UsageError(f"unknown bound kind(s): {', '.join(sorted(unknown))}")
    else:
        kinds = ["plain", "dual"] if model.embedding is not None else ["plain", "box"]
    columns = _bound_domains(model, kinds)
    if args.num < 1:
        raise UsageError("--num must be positive")
    radii = np.linspace(args.radius_min, args.radius_max, args.num)
    threat = ThreatSpec(q)
    curves = []
    if len(ds):
        for _, domain in columns:
            m = model.with_domain(domain)
            _refusal(m, q, mode, domain)
            report = certify_dataset(m, ds.features, ds.labels, threat, mode, (), args.jobs)
            for f in report.failures:
                print(f"point {f.index}: {f.error}: {f.message}", file=sys.stderr)
            curves.append([robust_fraction(report.certificates, r, len(ds)) for r in radii])
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["radius"] + [CURVE_COLUMNS[k] for k, _ in columns])
        if len(ds):
            for n, r in enumerate(radii):
                w.writerow([repr(float(r))] + [repr(c[n]) for c in curves])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="npcert", description="Robustness certificates for nearest prototype classifiers.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of option defaults; explicit flags take precedence")
        return p

    p = command("ingest", "convert CSV or IDX data into a canonical CSV or NPZ file")
    p.add_argument("--data", help="input CSV or NPZ")
    p.add_argument("--images", help="IDX image file (with --labels)")
    p.add_argument("--labels", help="IDX label file")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--out", help="output path; .npz writes the binary form, anything else CSV")
    p.set_defaults(func=cmd_ingest)

    p = command("train", "train a prototype model")
    p.add_argument("--data")
    p.add_argument("--data-labels", help="IDX labels when --data is an IDX image file")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--metric", default="l2", choices=[n.value for n in Norm])
    p.add_argument("--threat", choices=["l1", "l2", "linf"], help="defaults to the metric")
    p.add_argument("--ppc", type=int, default=1, help="prototypes per class")
    p.add_argument("--cap", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lr-decay", type=float, default=0.95)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, help="defaults to min(128, dataset size)")
    p.add_argument("--init", default=Init.KMEANS.value, choices=[i.value for i in Init])
    p.add_argument("--optimizer", default=Optimizer.ADAM.value, choices=[o.value for o in Optimizer])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="model file (.json, or .npc for binary)")
    p.add_argument("--trace", help="loss trace CSV (default: <out stem>.trace.csv)")
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (("certify", cmd_certify, "certify every point of a dataset"),
                                  ("curve", cmd_curve, "certified robust accuracy as a function of the radius")):
        p = command(name, help_text)
        p.add_argument("--model")
        p.add_argument("--data")
        p.add_argument("--data-labels", help="IDX labels when --data is an IDX image file")
        p.add_argument("--threat", choices=["l1", "l2", "linf"], help="defaults to the model metric")
        p.add_argument("--mode", default=BoundMode.LOWER_BOUND.value, choices=[m.value for m in BoundMode])
        p.add_argument("--domain", choices=["unbounded", "unit-box", "unit_box", "sphere-product", "sphere_product"],
                       help="override the model domain")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", help="CSV output (default: stdout)")
        p.set_defaults(func=func)
        if name == "certify":
            p.add_argument("--radius", type=float, action="append", help="report CRA at this radius (repeatable)")
            p.add_argument("--radius-cap", type=float, help="stop exact search once the bound reaches this radius")
            p.add_argument("--attack", action="store_true", help="fill upper_bound with an attack")
            p.add_argument("--budget", type=int, default=5000, help="attack evaluations per point")
        else:
            p.add_argument("--radius-min", type=float, default=0.0)
            p.add_argument("--radius-max", type=float, default=1.0)
            p.add_argument("--num", type=int, default=11, help="number of radii (inclusive linspace)")
            p.add_argument("--bound", help="comma list of plain, box, dual")
    return parser


def _with_config(parser, argv, args):
    """Re-parse with the JSON config as defaults so that explicit flags still win."""
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - known - {"config"})
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        if args.config:
            args = _with_config(parser, argv, args)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, UnsupportedCombination, InvariantViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, DimensionMismatch, SchemaVersionMismatch, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NPCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        # bad enum values arriving through --config skip argparse's choices check
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
