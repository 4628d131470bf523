"""Hyperparameter grids, stability sweeps and the diagram-versus-tree
comparison, at desk scale."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..dataset import Dataset, SplitSpec, apply_normalization, normalize, split, subsample
from ..diagram import DecisionDiagram, evaluate, fragmentation
from ..heuristic import HeuristicConfig
from ..milp.formulation import MULTIVARIATE, UNIVARIATE, ModelConfig
from ..skeleton import PRESETS, Skeleton, build_graph, parse_skeleton
from ..solve.pipeline import SolveReport, train_pipeline
from ..solve.solvers import SolveConfig

log = logging.getLogger(__name__)

ODD, ODT = "odd", "odt"
DEFAULT_ALPHAS = (0.01, 0.1, 0.2, 0.5, 1.0)
DEFAULT_SKELETONS = ("I", "II", "III", "IV")
DEFAULT_SEEDS = (1, 2, 3, 4, 5)
STABILITY_FRACTIONS = (0.05, 0.10, 0.15, 0.20)

RECORD_FIELDS = ("dataset", "mode", "split_mode", "seed", "skeleton", "alpha", "status",
                 "train_accuracy", "val_accuracy", "test_accuracy", "objective",
                 "heuristic_objective", "active_nodes", "improved_over_heuristic",
                 "proven_optimal")


@dataclass
class GridSpec:
    alphas: Sequence[float] = DEFAULT_ALPHAS
    skeletons: Sequence[str] = DEFAULT_SKELETONS
    split_modes: Sequence[str] = (UNIVARIATE, MULTIVARIATE)
    seeds: Sequence[int] = DEFAULT_SEEDS
    mode: str = ODD

    def __post_init__(self):
        for name in ("alphas", "skeletons", "split_modes", "seeds"):
            if not list(getattr(self, name)):
                raise ValueError(f"grid needs at least one entry in {name}")
        for m in self.split_modes:
            if m not in (UNIVARIATE, MULTIVARIATE):
                raise ValueError(f"unknown split mode {m!r}")
        if self.mode not in (ODD, ODT):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class ExperimentConfig:
    heuristic: HeuristicConfig = field(default_factory=lambda: HeuristicConfig(max_starts=20))
    solve: SolveConfig = field(default_factory=SolveConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    epsilon: float = 1e-4
    max_samples: Optional[int] = 1500
    workers: int = 1
    dataset_name: str = ""


@dataclass
class RunRecord:
    dataset: str
    mode: str
    split_mode: str
    seed: int
    skeleton: str
    alpha: float
    status: str
    train_accuracy: float
    val_accuracy: float
    test_accuracy: float
    objective: Optional[float]
    heuristic_objective: float
    active_nodes: int
    improved_over_heuristic: bool
    proven_optimal: bool
    runtime_s: float = 0.0
    skeleton_index: int = 0
    diagram: Optional[DecisionDiagram] = field(default=None, repr=False, compare=False)
    train_fragmentation: Dict[int, int] = field(default_factory=dict, repr=False, compare=False)

    def key(self) -> tuple:
        return (self.dataset, self.mode, self.split_mode, self.seed, self.skeleton_index, self.alpha)

    def row(self) -> List[str]:
        out = []
        for name in RECORD_FIELDS:
            v = getattr(self, name)
            if isinstance(v, float):
                out.append(f"{v:.6f}")
            elif v is None:
                out.append("")
            else:
                out.append(str(v))
        return out


@dataclass
class Partition:
    train: Dataset
    val: Dataset
    test: Dataset


def prepare_splits(ds: Dataset, seed: int, cfg: ExperimentConfig) -> Partition:
    """Subsample (if needed), split, and normalize with the training ranges."""
    if cfg.max_samples is not None and ds.n > cfg.max_samples:
        ds = subsample(ds, cfg.max_samples, seed)
    train, val, test = split(ds, dataclasses.replace(cfg.split, seed=seed))
    train_n = normalize(train)
    norm = train_n.normalization

    def scaled(part: Dataset) -> Dataset:
        return dataclasses.replace(part, X=apply_normalization(part.X, norm), normalization=norm)

    return Partition(train_n, scaled(val), scaled(test))


def _skeleton_for(name: str, n_classes: int) -> Skeleton:
    return parse_skeleton(name, n_classes)


def run_one(part: Partition, skeleton: str, alpha: float, split_mode: str, mode: str,
            seed: int, cfg: ExperimentConfig, skeleton_index: int = 0,
            min_flow: Optional[float] = None) -> Tuple[RunRecord, SolveReport]:
    sk = _skeleton_for(skeleton, part.train.n_classes)
    topo = build_graph(sk)
    mcfg = ModelConfig(alpha=alpha, split_mode=split_mode, epsilon=cfg.epsilon,
                       tree=mode == ODT, min_flow=min_flow)
    hcfg = dataclasses.replace(cfg.heuristic, seed=seed)
    report = train_pipeline(part.train, topo, mcfg, hcfg, cfg.solve)
    dd = report.diagram
    if dd is None:
        accs = (float("nan"),) * 3
        active, frag = 0, {}
    else:
        accs = (evaluate(dd, part.train), evaluate(dd, part.val), evaluate(dd, part.test))
        active, frag = len(dd.active_internal()), fragmentation(dd, part.train)
    rec = RunRecord(
        dataset=cfg.dataset_name, mode=mode, split_mode=split_mode, seed=seed,
        skeleton=str(sk), alpha=alpha, status=report.status,
        train_accuracy=accs[0], val_accuracy=accs[1], test_accuracy=accs[2],
        objective=report.objective, heuristic_objective=report.heuristic_objective,
        active_nodes=active, improved_over_heuristic=report.improved_over_heuristic,
        proven_optimal=report.proven_optimal, runtime_s=report.runtime_s,
        skeleton_index=skeleton_index, diagram=dd, train_fragmentation=frag)
    return rec, report


def _grid_skeletons(grid: GridSpec, n_classes: int) -> List[Tuple[int, str]]:
    out = []
    for k, name in enumerate(grid.skeletons):
        if grid.mode == ODT and not _skeleton_for(name, n_classes).is_tree:
            log.info("skipping non-tree skeleton %s in tree mode", name)
            continue
        out.append((k, name))
    if not out:
        raise ValueError("tree mode needs a tree skeleton in the grid")
    return out


def select_winner(records: Iterable[RunRecord]) -> RunRecord:
    """Best validation accuracy; ties go to the higher alpha, then to the
    earlier (simpler) skeleton."""
    usable = [r for r in records if r.diagram is not None]
    if not usable:
        raise ValueError("no run produced a diagram")
    return min(usable, key=lambda r: (-r.val_accuracy, -r.alpha, r.skeleton_index))


def grid_search(ds: Dataset, grid: GridSpec, cfg: ExperimentConfig
                ) -> Tuple[Dict[Tuple[str, str, int], RunRecord], List[RunRecord]]:
    """Train every grid cell; return the winner per (mode, split mode, seed)
    and all records sorted by key."""
    skeletons = _grid_skeletons(grid, ds.n_classes)
    parts = {seed: prepare_splits(ds, seed, cfg) for seed in grid.seeds}
    jobs = [(seed, k, name, alpha, sm)
            for seed in grid.seeds for sm in grid.split_modes
            for k, name in skeletons for alpha in grid.alphas]

    def work(job):
        seed, k, name, alpha, sm = job
        rec, _ = run_one(parts[seed], name, alpha, sm, grid.mode, seed, cfg, k)
        return rec

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(work, jobs))
    else:
        records = [work(j) for j in jobs]
    records.sort(key=RunRecord.key)
    winners = {}
    for sm in grid.split_modes:
        for seed in grid.seeds:
            cell = [r for r in records if r.split_mode == sm and r.seed == seed]
            winners[grid.mode, sm, seed] = select_winner(cell)
    return winners, records


def mean_test_accuracy(winners: Dict[Tuple[str, str, int], RunRecord], mode: str,
                       split_mode: str) -> float:
    accs = [r.test_accuracy for (m, sm, _), r in winners.items() if m == mode and sm == split_mode]
    return float(np.mean(accs)) if accs else float("nan")


def records_csv(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in sorted(records, key=RunRecord.key):
        w.writerow(r.row())
    return buf.getvalue()


def _fmt3(x: float) -> str:
    return "" if x != x else f"{x:.3f}"


def compare_odd_odt(ds: Dataset, grid: GridSpec, cfg: ExperimentConfig) -> dict:
    """Run the grid as diagrams and as trees; return the accuracy table,
    the fragmentation profiles of the winners and all records."""
    tree_grid = dataclasses.replace(grid, mode=ODT)
    odd_grid = dataclasses.replace(grid, mode=ODD)
    odt_w, odt_r = grid_search(ds, tree_grid, cfg)
    odd_w, odd_r = grid_search(ds, odd_grid, cfg)
    winners = {**odt_w, **odd_w}
    cells = {(m, sm): mean_test_accuracy(winners, m, sm)
             for m in (ODT, ODD) for sm in (MULTIVARIATE, UNIVARIATE)}
    return {"accuracy": cells, "winners": winners, "records": odt_r + odd_r,
            "table": accuracy_table_csv(cfg.dataset_name, cells),
            "fragmentation": fragmentation_csv(winners)}


def accuracy_table_csv(dataset: str, cells: Dict[Tuple[str, str], float]) -> str:
    """One row per dataset with tree and diagram accuracies per split type."""
    def avg(mode):
        vals = [cells.get((mode, sm), float("nan")) for sm in (MULTIVARIATE, UNIVARIATE)]
        vals = [v for v in vals if v == v]
        return float(np.mean(vals)) if vals else float("nan")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "odt_multi", "odt_uni", "odt_avg", "odd_multi", "odd_uni", "odd_avg"])
    w.writerow([dataset,
                _fmt3(cells.get((ODT, MULTIVARIATE), float("nan"))),
                _fmt3(cells.get((ODT, UNIVARIATE), float("nan"))), _fmt3(avg(ODT)),
                _fmt3(cells.get((ODD, MULTIVARIATE), float("nan"))),
                _fmt3(cells.get((ODD, UNIVARIATE), float("nan"))), _fmt3(avg(ODD))])
    return buf.getvalue()


def fragmentation_csv(winners: Dict[Tuple[str, str, int], RunRecord]) -> str:
    """Per-node share of training samples for every winning model."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "mode", "split_mode", "seed", "skeleton", "alpha",
                "node", "layer", "count", "share"])
    for key in sorted(winners):
        r = winners[key]
        if r.diagram is None:
            continue
        topo = r.diagram.topology
        n = r.train_fragmentation.get(0, 0) or 1
        for v, count in sorted(r.train_fragmentation.items()):
            layer = "terminal" if topo.is_terminal(v) else str(topo.layer_of(v))
            w.writerow([r.dataset, r.mode, r.split_mode, r.seed, r.skeleton, f"{r.alpha:g}",
                        v, layer, count, f"{count / n:.6f}"])
    return buf.getvalue()


@dataclass
class SweepRow:
    split_mode: str
    seed: int
    fraction: float
    min_flow: float
    status: str
    train_objective: Optional[float]
    test_accuracy: float
    proven_optimal: bool


def stability_sweep(ds: Dataset, fractions: Sequence[float], cfg: ExperimentConfig,
                    skeleton: str = "I", alpha: float = 0.01,
                    split_modes: Sequence[str] = (MULTIVARIATE, UNIVARIATE),
                    seeds: Sequence[int] = DEFAULT_SEEDS) -> List[SweepRow]:
    """Train with a minimum flow of ``fraction * n_train`` samples per node."""
    rows = []
    for seed in seeds:
        part = prepare_splits(ds, seed, cfg)
        for sm in split_modes:
            for frac in fractions:
                S = frac * part.train.n
                rec, report = run_one(part, skeleton, alpha, sm, ODD, seed, cfg, min_flow=S)
                rows.append(SweepRow(sm, seed, frac, S, rec.status, report.objective,
                                     rec.test_accuracy, rec.proven_optimal))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    """Mean test accuracy per split type (rows) and stability level (columns)."""
    fractions = sorted({r.fraction for r in rows})
    modes = [m for m in (MULTIVARIATE, UNIVARIATE) if any(r.split_mode == m for r in rows)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split"] + [f"S={f:g}n" for f in fractions])
    for m in modes:
        cells = []
        for f in fractions:
            accs = [r.test_accuracy for r in rows if r.split_mode == m and r.fraction == f]
            cells.append(_fmt3(float(np.mean(accs))) if accs else "")
        w.writerow([m] + cells)
    return buf.getvalue()


def sweep_detail_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split_mode", "seed", "fraction", "min_flow", "status", "train_objective",
                "test_accuracy", "proven_optimal"])
    for r in sorted(rows, key=lambda r: (r.split_mode, r.seed, r.fraction)):
        w.writerow([r.split_mode, r.seed, f"{r.fraction:g}", f"{r.min_flow:.6f}", r.status,
                    "" if r.train_objective is None else f"{r.train_objective:.6f}",
                    _fmt3(r.test_accuracy), r.proven_optimal])
    return buf.getvalue()
