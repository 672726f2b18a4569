"""Command-line entry point: ``cdnemil <subcommand> ...``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config
error. ``CDNEMIL_LOG_LEVEL`` sets log verbosity (default WARNING).
"""
import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import BACKEND
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SyntheticSpec, generate_synthetic, write_dataset
from .diagnostics import bag_diagnostics, evaluate, export_attention, principal_axes, write_summary
from .errors import (CdneMilError, ContractError, DimensionError, SchemaError,
                     ValidationError)
from .gradcheck import format_report, run_suite
from .train import (ABLATION_GRIDS, ablation_csv, delta_csv, json_report, load_config,
                    load_sources, run_ablation, run_cv, train_fold)

log = logging.getLogger("cdnemil")

USAGE_ERRORS = (ValidationError, SchemaError, DimensionError, ContractError)


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")


def _config(args):
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path), path.parent


def _out_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args):
    fields = {f.name: f for f in dataclasses.fields(SyntheticSpec)}
    spec = {}
    if args.spec:
        spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    for name in fields:
        value = getattr(args, name, None)
        if value is not None:
            spec[name] = value
    spec = SyntheticSpec.from_dict(spec)
    ds = generate_synthetic(spec)
    manifest = write_dataset(ds, args.out)
    ks = [b.num_instances for b in ds]
    counts = ", ".join(f"class {c}: {n}" for c, n in enumerate(ds.class_counts()))
    print(f"wrote {manifest} ({len(ds)} bags; {counts}; D={ds.feature_dim}; K {min(ks)}-{max(ks)})")
    return 0


def cmd_train(args):
    config, base = _config(args)
    train, test = load_sources(config, base)
    out = _out_dir(args.out)
    trained, tlog = train_fold(config, train, test)
    save_checkpoint(out / "model.ckpt", trained.model, trained.head)
    tlog.write_csv(out / "train_log.csv")
    last = tlog.records[-1]
    msg = f"trained {config.epochs} epochs, final l_overall={last.l_overall:.6g}"
    if last.val_auroc is not None:
        msg += f", val auroc={last.val_auroc:.4f}"
    print(msg)
    return 0


def _write_cv(report, out):
    out = _out_dir(out)
    for r in report["fold_results"]:
        r.log.write_csv(out / f"fold{r.fold}_log.csv")
    (out / "report.json").write_text(json_report(report), encoding="utf-8")


def cmd_cv(args):
    config, base = _config(args)
    train, test = load_sources(config, base)
    out = Path(args.out)
    if not args.compare:
        report = run_cv(config, train, test, jobs=args.jobs)
        _write_cv(report, out)
        print(f"auroc {report['auroc_mean']} accuracy {report['accuracy_mean']}")
        return 0
    reports = {}
    for name, enabled in (("baseline", False), ("cdne", True)):
        cfg = config.with_updates(enabled=enabled)
        reports[name] = run_cv(cfg, train, test, jobs=args.jobs)
        _write_cv(reports[name], out / name)
    table = delta_csv(reports["baseline"], reports["cdne"])
    (out / "delta.csv").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def _model_and_data(args):
    config, base = _config(args)
    train, test = load_sources(config, base)
    model, head = load_checkpoint(args.checkpoint)
    data = train if args.split == "train" or test is None else test
    if model.input_dim != data.feature_dim:
        raise UsageError(f"checkpoint expects D={model.input_dim}, dataset has D={data.feature_dim}")
    return model, head, data


def cmd_eval(args):
    model, _, data = _model_and_data(args)
    metrics = evaluate(model, data)
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_diagnose(args):
    model, head, data = _model_and_data(args)
    out = _out_dir(args.out)
    diags, summary = bag_diagnostics(model, head, data)
    write_summary(out / "summary.json", summary, evaluate(model, data))
    with open(out / "bags.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        m = len(diags[0].center)
        w.writerow(["bag_id", "label", "mean_std"] + [f"center_{j}" for j in range(m)])
        for d in diags:
            std = "" if d.mean_std is None else repr(d.mean_std)
            w.writerow([d.bag_id, d.label, std] + [repr(float(v)) for v in d.center])
    centers = np.array([d.center for d in diags])
    if len(centers) > 1:
        _, var, proj = principal_axes(centers, 2)
        with open(out / "centers_pca.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bag_id", "label"] + [f"pc{j + 1}" for j in range(proj.shape[1])])
            for d, row in zip(diags, proj):
                w.writerow([d.bag_id, d.label] + [repr(float(v)) for v in row])
    if args.attention:
        export_attention(diags, out / "attention")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_ablate(args):
    config, base = _config(args)
    values = args.values if args.values is not None else ABLATION_GRIDS[args.axis]
    if not values:
        raise UsageError("--values: empty list")
    rows = run_ablation(config, args.axis, values, args.seeds, jobs=args.jobs, base_dir=base)
    table = ablation_csv(rows)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_gradcheck(args):
    reports = run_suite(h=args.h, tol=args.tol, seed=args.seed)
    print(format_report(reports))
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser():
    p = argparse.ArgumentParser(prog="cdnemil", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s (kernels: {BACKEND})")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--spec", help="JSON file with synthetic spec fields")
    for f in dataclasses.fields(SyntheticSpec):
        kind = type(f.default)
        flag = "--" + f.name.replace("_", "-")
        if kind is bool:
            g.add_argument(flag, dest=f.name, type=lambda s: s.lower() in ("1", "true", "yes"),
                           metavar="BOOL")
        else:
            g.add_argument(flag, dest=f.name, type=kind)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model on the configured dataset")
    t.add_argument("config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("cv", help="stratified k-fold cross-validation")
    c.add_argument("config")
    c.add_argument("--out", required=True)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--compare", action="store_true",
                   help="run with and without CDNE and write delta.csv")
    c.set_defaults(func=cmd_cv)

    for name, func, helptext in (("eval", cmd_eval, "metrics of a checkpoint"),
                                 ("diagnose", cmd_diagnose, "embedding diagnostics of a checkpoint")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("config")
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--split", choices=("train", "test"), default="test",
                       help="dataset to use; test falls back to train when none is configured")
        e.add_argument("--out", required=(name == "diagnose"))
        if name == "diagnose":
            e.add_argument("--attention", action="store_true", help="export attention CSVs")
        e.set_defaults(func=func)

    a = sub.add_parser("ablate", help="CV sweep over one CDNE hyperparameter")
    a.add_argument("config")
    a.add_argument("--axis", choices=sorted(ABLATION_GRIDS), default="lambda_neg")
    a.add_argument("--values", type=_floats)
    a.add_argument("--seeds", type=_ints, default=[0],
                   help="seed offsets; each value is averaged over these replicates")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    k = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    k.add_argument("--h", type=float, default=1e-6)
    k.add_argument("--tol", type=float, default=1e-4)
    k.add_argument("--seed", type=int, default=0)
    k.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    level = os.environ.get("CDNEMIL_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except (CdneMilError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
