"""``oddtrain`` command line.

Exit codes: 0 success, 1 usage or input error, 2 solver error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..dataset import Dataset, DatasetError, SplitSpec, apply_normalization, load_any, normalize
from ..diagram import DecisionDiagram, InvalidModel, evaluate, predict_classes, to_dot
from ..heuristic import HeuristicConfig
from ..milp.formulation import MULTIVARIATE, UNIVARIATE, FormulationError, ModelConfig, build_model, set_cutoff
from ..milp.writers import emit_lp, emit_mps
from ..skeleton import SkeletonError, build_graph, parse_skeleton
from ..solve.decode import AuditError, CorruptSolution
from ..solve.pipeline import train_pipeline
from ..solve.solvers import ERROR, SolveConfig
from .grid import (ODD, ODT, STABILITY_FRACTIONS, ExperimentConfig, GridSpec, compare_odd_odt,
                   fragmentation_csv, grid_search, mean_test_accuracy, prepare_splits,
                   records_csv, stability_sweep, sweep_csv, sweep_detail_csv)

log = logging.getLogger("oddtrain")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _names(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_data(p):
    p.add_argument("--data", required=True, help="CSV file, dataset JSON, or builtin:<name>")
    p.add_argument("--class-column", default="class", help="name of the label column in a CSV")
    p.add_argument("--categorical", type=_names, default=[], help="comma-separated columns to one-hot encode")


def _add_heuristic(p):
    p.add_argument("--heuristic-seconds", type=float, default=60.0)
    p.add_argument("--feature-fraction", type=float, default=0.6)
    p.add_argument("--max-starts", type=int, default=20,
                   help="cap on heuristic restarts; keeps runs reproducible")


def _add_solver(p):
    p.add_argument("--solver", default=None,
                   help="cbc, highs, or a command template (default: $ODD_SOLVER_CMD, then highs, then cbc)")
    p.add_argument("--time-limit", type=float, default=600.0, help="seconds per solve")
    p.add_argument("--mip-gap", type=float, default=0.0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--warm-start", action="store_true", help="pass the heuristic diagram as a start")


def _add_model(p, alpha_default=0.01):
    p.add_argument("--skeleton", default="I", help="preset I-IV or widths such as 1-2-4-8")
    p.add_argument("--alpha", type=float, default=alpha_default)
    p.add_argument("--split-mode", choices=(UNIVARIATE, MULTIVARIATE), default=MULTIVARIATE)
    p.add_argument("--mode", choices=(ODD, ODT), default=ODD)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--max-nodes", type=int, default=None, help="cap on active internal nodes")
    p.add_argument("--min-flow", type=float, default=None, help="minimum samples per active node")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--full", action="store_true", help="train on all samples instead of the training split")


def _add_grid(p):
    p.add_argument("--alphas", type=_floats, default=None)
    p.add_argument("--skeletons", type=_names, default=None)
    p.add_argument("--split-modes", type=_names, default=None)
    p.add_argument("--seeds", type=_ints, default=None)
    p.add_argument("--max-samples", type=int, default=1500)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oddtrain", description="Train optimal decision diagrams with MILP.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="heuristic + exact solve for one configuration")
    _add_data(p); _add_model(p); _add_heuristic(p); _add_solver(p)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--report", default=None, help="report JSON (default: report.json next to --out)")
    p.add_argument("--timings", action="store_true", help="include wall-clock times in the report")

    p = sub.add_parser("predict", help="predict classes of the rows of a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="predictions CSV (default: stdout)")

    p = sub.add_parser("evaluate", help="accuracy of a model on a labelled CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--class-column", default="class")

    p = sub.add_parser("export-dot", help="Graphviz rendering of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None, help="labelled CSV for per-node sample counts")
    p.add_argument("--class-column", default="class")
    p.add_argument("--out", default=None)

    p = sub.add_parser("emit-model", help="write the MILP as LP or MPS without solving")
    _add_data(p); _add_model(p)
    p.add_argument("--format", choices=("lp", "mps"), default="lp")
    p.add_argument("--cutoff", type=float, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("grid", help="hyperparameter grid with validation-based selection")
    _add_data(p); _add_grid(p); _add_heuristic(p); _add_solver(p)
    p.add_argument("--mode", choices=(ODD, ODT), default=ODD)

    p = sub.add_parser("stability-sweep", help="test accuracy under minimum-flow constraints")
    _add_data(p); _add_grid(p); _add_heuristic(p); _add_solver(p)
    p.add_argument("--fractions", type=_floats, default=list(STABILITY_FRACTIONS))
    p.add_argument("--skeleton", default="I")
    p.add_argument("--alpha", type=float, default=0.01)

    p = sub.add_parser("compare", help="diagrams versus trees over the same grid")
    _add_data(p); _add_grid(p); _add_heuristic(p); _add_solver(p)
    return parser


# ------------------------------------------------------------------ helpers

def _heuristic_cfg(args) -> HeuristicConfig:
    return HeuristicConfig(time_budget_s=args.heuristic_seconds, feature_fraction=args.feature_fraction,
                           seed=getattr(args, "seed", 0), max_starts=args.max_starts)


def _solve_cfg(args) -> SolveConfig:
    return SolveConfig(solver_command=args.solver, time_limit_s=args.time_limit, mip_gap=args.mip_gap,
                       threads=args.threads, warm_start=args.warm_start)


def _dataset(args) -> Dataset:
    ds = load_any(args.data, args.class_column, args.categorical)
    if not ds.name:
        ds = dataclasses.replace(ds, name=Path(args.data.split(":", 1)[-1]).stem)
    return ds


def _training_data(args, ds: Dataset):
    if args.full:
        return normalize(ds), None
    cfg = ExperimentConfig(max_samples=None)
    part = prepare_splits(ds, args.seed, cfg)
    return part.train, part


def _model_cfg(args) -> ModelConfig:
    return ModelConfig(alpha=args.alpha, split_mode=args.split_mode, epsilon=args.epsilon,
                       tree=args.mode == ODT, max_nodes=args.max_nodes, min_flow=args.min_flow)


def _write(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load_model(path):
    doc = json.loads(Path(path).read_text())
    return DecisionDiagram.from_json(doc), doc


def _read_features(path, doc) -> np.ndarray:
    """Raw feature matrix in the model's column order; one-hot columns
    ``col=level`` are rebuilt from the categorical column ``col``."""
    names = doc.get("feature_names")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    if names is None:
        raise DatasetError("model file lacks feature_names")
    X = np.zeros((len(rows), len(names)))
    for j, name in enumerate(names):
        if name in rows[0]:
            try:
                X[:, j] = [float(r[name]) for r in rows]
            except ValueError:
                raise DatasetError(f"non-numeric value in column {name}")
        elif "=" in name and name.split("=", 1)[0] in rows[0]:
            col, level = name.split("=", 1)
            X[:, j] = [1.0 if r[col] == level else 0.0 for r in rows]
        else:
            raise DatasetError(f"missing column {name}")
    norm = doc.get("normalization")
    return apply_normalization(X, norm) if norm is not None else X


def _read_labels(path, column, class_names) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or column not in rows[0]:
        raise DatasetError(f"missing column {column}")
    lookup = {c: k for k, c in enumerate(class_names)}
    try:
        return np.array([lookup[r[column]] for r in rows], dtype=int)
    except KeyError as exc:
        raise DatasetError(f"unknown class {exc.args[0]!r}")


# ----------------------------------------------------------------- commands

def cmd_train(args) -> int:
    ds = _dataset(args)
    train, part = _training_data(args, ds)
    topo = build_graph(parse_skeleton(args.skeleton, ds.n_classes))
    report = train_pipeline(train, topo, _model_cfg(args), _heuristic_cfg(args), _solve_cfg(args))
    out = report.to_json(timings=args.timings)
    out["dataset"] = ds.name
    out["skeleton"] = str(topo.skeleton)
    if report.diagram is not None:
        dd = report.diagram
        out["accuracy"] = {"train": evaluate(dd, train)}
        if part is not None:
            out["accuracy"].update(val=evaluate(dd, part.val), test=evaluate(dd, part.test))
        doc = dd.to_json()
        doc.update(feature_names=list(ds.feature_names), class_names=list(ds.class_names),
                   normalization=[list(p) for p in train.normalization])
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    report_path = args.report or str(Path(args.out).with_name("report.json"))
    Path(report_path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(f"status={report.status} objective={report.objective} "
          f"heuristic={report.heuristic_objective}")
    if report.status == ERROR:
        print(report.solver_output.strip()[-2000:], file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_predict(args) -> int:
    dd, doc = _load_model(args.model)
    classes = predict_classes(dd, _read_features(args.data, doc))
    names = doc.get("class_names") or [str(c) for c in range(dd.topology.n_classes)]
    lines = ["row,class_id,class"] + [f"{i},{c},{names[c]}" for i, c in enumerate(classes)]
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    dd, doc = _load_model(args.model)
    X = _read_features(args.data, doc)
    names = doc.get("class_names") or [str(c) for c in range(dd.topology.n_classes)]
    y = _read_labels(args.data, args.class_column, names)
    acc = float(np.mean(predict_classes(dd, X) == y)) if len(y) else 0.0
    print(json.dumps({"n": int(len(y)), "accuracy": acc}))
    return EXIT_OK


def cmd_export_dot(args) -> int:
    dd, doc = _load_model(args.model)
    ds = None
    names = doc.get("class_names")
    if args.data:
        X = _read_features(args.data, doc)
        y = _read_labels(args.data, args.class_column, names or [])
        ds = Dataset(X, y, doc["feature_names"], names)
    _write(to_dot(dd, ds, class_names=names), args.out)
    return EXIT_OK


def cmd_emit_model(args) -> int:
    ds = _dataset(args)
    train, _ = _training_data(args, ds)
    topo = build_graph(parse_skeleton(args.skeleton, ds.n_classes))
    model, _ = build_model(train, topo, _model_cfg(args))
    if args.cutoff is not None:
        set_cutoff(model, args.cutoff)
    _write(emit_lp(model) if args.format == "lp" else emit_mps(model), args.out)
    return EXIT_OK


def _experiment_cfg(args, ds: Dataset) -> ExperimentConfig:
    return ExperimentConfig(heuristic=_heuristic_cfg(args), solve=_solve_cfg(args),
                            split=SplitSpec(), max_samples=args.max_samples,
                            workers=args.workers, dataset_name=ds.name)


def _grid_spec(args, mode=ODD) -> GridSpec:
    kw = {}
    for name in ("alphas", "skeletons", "split_modes", "seeds"):
        if getattr(args, name) is not None:
            kw[name] = getattr(args, name)
    return GridSpec(mode=mode, **kw)


def _failed(records) -> bool:
    return any(r.status == ERROR for r in records)


def cmd_grid(args) -> int:
    ds = _dataset(args)
    grid = _grid_spec(args, args.mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    winners, records = grid_search(ds, grid, _experiment_cfg(args, ds))
    (out / "records.csv").write_text(records_csv(records))
    (out / "winners.csv").write_text(records_csv(list(winners.values())))
    (out / "fragmentation.csv").write_text(fragmentation_csv(winners))
    summary = {f"{m}/{sm}": mean_test_accuracy(winners, m, sm)
               for m in (grid.mode,) for sm in grid.split_modes}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for (m, sm, seed), rec in sorted(winners.items()):
        (out / f"winner_{m}_{sm}_seed{seed}.dot").write_text(to_dot(rec.diagram))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_SOLVER if _failed(records) else EXIT_OK


def cmd_stability(args) -> int:
    ds = _dataset(args)
    grid = _grid_spec(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = stability_sweep(ds, args.fractions, _experiment_cfg(args, ds), args.skeleton,
                           args.alpha, grid.split_modes, grid.seeds)
    (out / "stability.csv").write_text(sweep_csv(rows))
    (out / "stability_detail.csv").write_text(sweep_detail_csv(rows))
    sys.stdout.write(sweep_csv(rows))
    return EXIT_SOLVER if any(r.status == ERROR for r in rows) else EXIT_OK


def cmd_compare(args) -> int:
    ds = _dataset(args)
    grid = _grid_spec(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = compare_odd_odt(ds, grid, _experiment_cfg(args, ds))
    (out / "table.csv").write_text(result["table"])
    (out / "fragmentation.csv").write_text(result["fragmentation"])
    (out / "records.csv").write_text(records_csv(result["records"]))
    sys.stdout.write(result["table"])
    return EXIT_SOLVER if _failed(result["records"]) else EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
            "export-dot": cmd_export_dot, "emit-model": cmd_emit_model, "grid": cmd_grid,
            "stability-sweep": cmd_stability, "compare": cmd_compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (AuditError, CorruptSolution) as exc:
        print(f"oddtrain: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DatasetError, InvalidModel, SkeletonError, FormulationError, FileNotFoundError,
            ValueError, KeyError) as exc:
        print(f"oddtrain: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
