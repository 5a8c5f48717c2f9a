"""Batch command-line interface.

Subcommands: gen, check, train, eval, linear-solve, ablation, stability,
mpa-audit, triangles-gen. Exit codes: 0 success, 1 validation error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .conditions import check_sparsity_budget
from .datagen import (
    Dataset,
    StructureMask,
    generate_dataset,
    render_triangles,
    sample_sources,
    write_pgm,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    run_ablation,
    run_check,
    run_linear,
    run_mpa_audit,
    run_stability,
    validate_config,
)
from .flows import CouplingFlow, GaussianPrior
from .linear import RotationSearchConfig, linear_solve_report
from .metrics import mcc
from .support import SupportPattern
from .training import TrainConfig, train


def _load_mask(path: str) -> StructureMask:
    text = Path(path).read_text()
    try:
        pattern = SupportPattern.from_json(text)
        return StructureMask(pattern.to_matrix())
    except (json.JSONDecodeError, KeyError, TypeError):
        return StructureMask(np.loadtxt(path, delimiter=",", ndmin=2))


def _write_json(path: str | None, doc) -> None:
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_gen(args) -> int:
    mask = _load_mask(args.mask) if args.mask else None
    ds = generate_dataset(args.generator, n=args.n, k=args.k,
                          seed=args.seed or 0, m=args.m, mask=mask)
    out = args.out or f"dataset-{args.generator}-n{args.n}-seed{args.seed or 0}"
    ds.save(out)
    print(f"wrote {out}/sources.csv observations.csv meta.json")
    return 0


def _cmd_check(args) -> int:
    reports = run_check(args.input)
    doc = [r.to_dict() for r in reports]
    _write_json(args.report, doc)
    return 0


def _cmd_train(args) -> int:
    ds = Dataset.load(args.data)
    flow = CouplingFlow.create(ds.m, args.layers, args.hidden, args.mode,
                               init="identity", seed=args.seed or 0)
    prior = GaussianPrior.standard(ds.m)
    config = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        lam=args.lam, regularizer=args.reg, seed=args.seed or 0)
    flow, prior, history = train(flow, prior, ds.observations, config)
    out = Path(args.out or "trained")
    out.mkdir(parents=True, exist_ok=True)
    (out / "flow.json").write_text(flow.to_json())
    (out / "history.csv").write_text(history.to_csv())
    line = f"final objective {history.objective[-1]:.6f}"
    if ds.n == ds.m:
        estimates = flow.inverse(ds.observations)
        report = mcc(ds.sources, estimates, args.method)
        (out / "eval.json").write_text(report.to_json() + "\n")
        line += f"  MCC {report.mcc:.4f}"
    else:
        line += "  (undercomplete dataset: MCC evaluation skipped)"
    print(f"{line}  -> {out}")
    return 0


def _cmd_eval(args) -> int:
    ds = Dataset.load(args.data)
    if args.flow:
        flow = CouplingFlow.from_json(Path(args.flow).read_text())
        estimates = flow.inverse(ds.observations)
    elif args.estimates:
        estimates = np.atleast_2d(
            np.loadtxt(args.estimates, delimiter=",", skiprows=1))
    else:
        raise ConfigError("eval needs --flow or --estimates")
    report = mcc(ds.sources, estimates, args.method)
    doc = report.to_dict()
    if args.flow and ds.mask is not None:
        # estimated unmixing support vs the generator mask, at matched size
        from .training import jacobian_batch
        pts = ds.observations[np.linspace(0, ds.k - 1, 64, dtype=int)]
        jacs = jacobian_batch(flow, pts, "inverse")
        tol = 1e-6 * float(np.max(np.abs(jacs)))
        union = np.any(np.abs(jacs) > tol, axis=0)
        truth = SupportPattern.from_matrix(np.asarray(ds.mask))
        est_pattern = SupportPattern.from_matrix(union)
        doc["sparsity_budget_ok"] = check_sparsity_budget(est_pattern, truth)
        doc["estimated_support_size"] = len(est_pattern)
        doc["true_support_size"] = len(truth)
    _write_json(args.report, doc)
    if args.report:
        corr_path = Path(args.report).with_suffix(".corr.csv")
        corr_path.write_text(report.correlation_csv())
    return 0


def _cmd_linear_solve(args) -> int:
    ds = Dataset.load(args.data)
    truth = (np.loadtxt(args.truth, delimiter=",", ndmin=2)
             if args.truth else None)
    config = RotationSearchConfig(restarts=args.restarts, seed=args.seed or 0)
    report = linear_solve_report(ds.observations, args.n or ds.n, config, truth)
    _write_json(args.report, report)
    return 0


def _experiment_config(args, kind: str) -> ExperimentConfig:
    doc: dict = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
    doc["kind"] = kind
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.trials is not None:
        doc["trials"] = args.trials
    if args.workers is not None:
        doc["workers"] = args.workers
    validate_config(doc)
    return ExperimentConfig.from_dict(doc)


def _cmd_experiment(args, kind: str) -> int:
    config = _experiment_config(args, kind)
    out = args.out or "runs"
    runner = {"ablation": run_ablation, "stability": run_stability,
              "linear": run_linear, "mpa-audit": run_mpa_audit}[kind]
    record = runner(config, out)
    print(json.dumps(record.summary, sort_keys=True, indent=1))
    print(f"wrote {Path(out) / record.kind}/summary.json")
    return 0


def _cmd_triangles(args) -> int:
    factors, variances = sample_sources(4, args.k, args.seed or 0)
    images = render_triangles(factors, size=args.size,
                              stds=np.sqrt(variances))
    out = Path(args.out or "triangles")
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        write_pgm(out / f"img-{i:05d}.pgm", img)
    header = ",".join(f"f{j + 1}" for j in range(4))
    np.savetxt(out / "factors.csv", factors, fmt="%.17g", delimiter=",",
               header=header, comments="")
    (out / "meta.json").write_text(json.dumps({
        "generator": "triangles", "k": args.k, "seed": args.seed or 0,
        "size": args.size, "variances": [float(v) for v in variances],
    }, sort_keys=True, indent=1) + "\n")
    print(f"wrote {args.k} images to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(
        prog="sparseica",
        description="Sparsity-based identifiability toolkit for ICA",
        parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common],
                       help="generate a synthetic dataset")
    p.add_argument("--generator", required=True,
                   choices=["ss", "ii", "vp", "base"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=10000)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--mask", help="mask file (SupportPattern JSON or 0/1 CSV)")
    p.set_defaults(handler=_cmd_gen)

    p = sub.add_parser("check", parents=[common],
                       help="run structure condition checkers")
    p.add_argument("--input", required=True,
                   help="mask file or dataset directory")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(handler=_cmd_check)

    p = sub.add_parser("train", parents=[common],
                       help="train an unmixing flow on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default="general",
                   choices=["general", "volume-preserving"])
    p.add_argument("--reg", default="l1", choices=["l1", "ortho", "none"])
    p.add_argument("--lam", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--layers", type=int, default=16)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--method", default="pearson",
                   choices=["pearson", "spearman"])
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="score estimated sources against the truth")
    p.add_argument("--data", required=True)
    p.add_argument("--flow", help="trained flow JSON")
    p.add_argument("--estimates", help="CSV of estimated sources")
    p.add_argument("--method", default="pearson",
                   choices=["pearson", "spearman"])
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("linear-solve", parents=[common],
                       help="linear Gaussian recovery via sparsest rotation")
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--truth", help="CSV of the true mixing matrix")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(handler=_cmd_linear_solve)

    for kind in ("ablation", "stability", "mpa-audit", "linear"):
        p = sub.add_parser(kind, parents=[common],
                           help=f"run the {kind} experiment")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.set_defaults(handler=lambda a, k=kind: _cmd_experiment(a, k))

    p = sub.add_parser("triangles-gen", parents=[common],
                       help="render the triangle image dataset")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--size", type=int, default=32)
    p.set_defaults(handler=_cmd_triangles)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.handler(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
