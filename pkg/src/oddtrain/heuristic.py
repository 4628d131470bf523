"""Greedy multi-start construction of an initial diagram.

Top-down: every node takes the univariate split with the largest
information gain among a random subset of features; pure child flows go
straight to their class terminal, the others are merged pairwise (least
entropy increase first) until they fit the next layer. A bottom-up pass
then removes splitting nodes whose removal lowers the training objective.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset
from .diagram import NEG, POS, DecisionDiagram, objective, route, validate
from .skeleton import GraphTopology, tree_arcs

GAIN_TOL = 1e-12


@dataclass
class Flow:
    sample_ids: np.ndarray
    histogram: np.ndarray
    # (node, side) pairs whose output feeds this flow
    sources: List[Tuple[int, str]] = field(default_factory=list)

    @classmethod
    def of(cls, ds: Dataset, ids, sources=()) -> "Flow":
        ids = np.asarray(ids, dtype=int)
        return cls(ids, np.bincount(ds.y[ids], minlength=ds.n_classes), list(sources))

    @property
    def size(self) -> int:
        return int(self.histogram.sum())

    @property
    def is_pure(self) -> bool:
        return np.count_nonzero(self.histogram) <= 1

    @property
    def majority(self) -> int:
        return int(np.argmax(self.histogram))   # ties -> lowest class id

    def merged(self, other: "Flow") -> "Flow":
        return Flow(np.concatenate([self.sample_ids, other.sample_ids]),
                    self.histogram + other.histogram, self.sources + other.sources)


@dataclass
class HeuristicConfig:
    time_budget_s: float = 60.0
    feature_fraction: float = 0.6
    seed: int = 0
    alpha: float = 0.0
    max_starts: Optional[int] = None
    tree_mode: bool = False

    def __post_init__(self):
        if not 0.0 < self.feature_fraction <= 1.0:
            raise ValueError("feature_fraction must lie in (0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.max_starts is not None and self.max_starts < 1:
            raise ValueError("max_starts must be at least 1")


def entropy(histogram) -> float:
    h = np.asarray(histogram, dtype=float)
    total = h.sum()
    if total <= 0:
        return 0.0
    p = h[h > 0] / total
    return float(-(p * np.log2(p)).sum())


def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(totals > 0, counts / np.where(totals > 0, totals, 1), 0.0)
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def best_univariate_split(flow: Flow, ds: Dataset,
                          allowed_features: Optional[Sequence[int]] = None) -> Tuple[int, float, float]:
    """Best ``x_j >= b`` split of a flow by information gain (bits).

    Candidate thresholds are midpoints between consecutive distinct values.
    Ties go to the lower feature index, then the lower threshold. When no
    allowed feature varies inside the flow the split ``x_j >= 0`` (every
    sample positive) is returned with gain 0.
    """
    if flow.size == 0:
        raise ValueError("cannot split an empty flow")
    features = sorted(allowed_features) if allowed_features is not None else range(ds.d)
    features = list(features)
    parent = entropy(flow.histogram)
    n = flow.size
    best = (features[0], 0.0, 0.0)
    found = False
    y = ds.y[flow.sample_ids]
    onehot = np.eye(ds.n_classes, dtype=float)[y]
    for j in features:
        x = ds.X[flow.sample_ids, j]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        boundaries = np.flatnonzero(xs[1:] > xs[:-1])
        if boundaries.size == 0:
            continue
        cum = np.cumsum(onehot[order], axis=0)
        left = cum[boundaries]
        right = flow.histogram[None, :] - left
        n_left = boundaries + 1.0
        weighted = (n_left * _entropy_rows(left) + (n - n_left) * _entropy_rows(right)) / n
        gains = parent - weighted
        k = int(np.argmax(gains))   # first maximum -> lowest threshold
        gain = max(float(gains[k]), 0.0)
        threshold = float((xs[boundaries[k]] + xs[boundaries[k] + 1]) / 2.0)
        if not found or gain > best[2] + GAIN_TOL:
            best = (j, threshold, gain)
            found = True
    return best


def _merge_cost(f1: Flow, f2: Flow) -> float:
    h = f1.histogram + f2.histogram
    return entropy(h) * h.sum() - entropy(f1.histogram) * f1.size - entropy(f2.histogram) * f2.size


def greedy_merge(flows: List[Flow], target_width: int) -> List[Flow]:
    """Merge the cheapest pair (smallest weighted-entropy increase) until
    at most ``target_width`` flows remain; ties go to the lowest index pair."""
    if target_width < 1:
        raise ValueError("target_width must be at least 1")
    flows = list(flows)
    while len(flows) > target_width:
        best = None
        for i in range(len(flows)):
            for j in range(i + 1, len(flows)):
                cost = _merge_cost(flows[i], flows[j])
                if best is None or cost < best[0] - GAIN_TOL:
                    best = (cost, i, j)
        _, i, j = best
        flows[i] = flows[i].merged(flows[j])
        del flows[j]
    return flows


def _random_features(d: int, fraction: float, rng: np.random.Generator) -> List[int]:
    k = max(1, math.ceil(fraction * d - 1e-9))
    return sorted(int(j) for j in rng.choice(d, size=min(k, d), replace=False))


def construct_once(ds: Dataset, topo: GraphTopology, cfg: HeuristicConfig,
                   rng: np.random.Generator) -> DecisionDiagram:
    """One top-down pass over the layers of ``topo``."""
    if ds.n == 0:
        raise ValueError("empty training set")
    children = tree_arcs(topo.skeleton) if cfg.tree_mode else None
    neg_arc: Dict[int, int] = {}
    pos_arc: Dict[int, int] = {}
    hyperplane: Dict[int, Tuple[np.ndarray, float]] = {}
    assigned: Dict[int, Flow] = {0: Flow.of(ds, np.arange(ds.n))}

    for l, layer in enumerate(topo.layers):
        last = l == topo.depth - 1
        pending: List[Flow] = []
        for u in layer:
            flow = assigned.get(u)
            if flow is None:
                continue
            j, b, _ = best_univariate_split(flow, ds, _random_features(ds.d, cfg.feature_fraction, rng))
            a = np.zeros(ds.d)
            a[j] = 1.0
            positive = ds.X[flow.sample_ids, j] >= b
            if positive.all() or not positive.any():
                # nothing to split on: constant hyperplane, everything positive
                a, b = np.zeros(ds.d), -1.0
                positive = np.ones(flow.size, dtype=bool)
            hyperplane[u] = (a, b)
            for side, ids in ((NEG, flow.sample_ids[~positive]), (POS, flow.sample_ids[positive])):
                child = Flow.of(ds, ids, [(u, side)])
                arcs = neg_arc if side == NEG else pos_arc
                if child.size == 0:
                    arcs[u] = topo.terminal_of(flow.majority)
                elif child.is_pure or last:
                    arcs[u] = topo.terminal_of(child.majority)
                else:
                    pending.append(child)
        if last or not pending:
            continue
        if children is not None:
            # tree mode: each side feeds its canonical child, no merging
            targets = [children[f.sources[0][0]][0 if f.sources[0][1] == NEG else 1] for f in pending]
            merged_at = zip(targets, pending)
        else:
            merged_at = zip(topo.layers[l + 1], greedy_merge(pending, len(topo.layers[l + 1])))
        for node, flow in merged_at:
            assigned[node] = flow
            for (u, side) in flow.sources:
                (neg_arc if side == NEG else pos_arc)[u] = node

    active = frozenset(hyperplane) | frozenset(topo.terminals)
    dd = DecisionDiagram(topo, active, neg_arc, pos_arc, hyperplane)
    if not cfg.tree_mode:
        _orient(dd)
    return dd


def _orient(dd: DecisionDiagram) -> None:
    """Flip hyperplanes so that every node satisfies neg target <= pos target.

    ``a.x >= b`` becomes ``-a.x >= -b``; only samples lying exactly on the
    hyperplane change side, and midpoint thresholds never hold training
    samples of the node.
    """
    for u in dd.active_internal():
        if dd.neg_arc[u] > dd.pos_arc[u]:
            a, b = dd.hyperplane[u]
            dd.hyperplane[u] = (-a, -b)
            dd.neg_arc[u], dd.pos_arc[u] = dd.pos_arc[u], dd.neg_arc[u]


def bottom_up_prune(dd: DecisionDiagram, ds: Dataset, alpha: float,
                    phi: Optional[np.ndarray] = None) -> DecisionDiagram:
    """Repeatedly remove nodes feeding only terminals when that strictly
    lowers the objective; each removed node is replaced, on all of its
    parents' sides, by an arc to its majority-class terminal."""
    dd = dd.copy()
    topo = dd.topology
    current = objective(dd, ds, alpha, phi)
    changed = True
    while changed:
        changed = False
        _, visits = route(dd, ds.X)
        for v in sorted(dd.active_internal(), reverse=True):
            if v == 0 or v not in dd.active:
                continue
            if not (topo.is_terminal(dd.neg_arc[v]) and topo.is_terminal(dd.pos_arc[v])):
                continue
            counts = np.bincount(ds.y[visits[:, v]], minlength=topo.n_classes)
            target = topo.terminal_of(int(np.argmax(counts)))
            trial = _remove_node(dd, v, target)
            value = objective(trial, ds, alpha, phi)
            if value < current - 1e-12:
                dd, current, changed = trial, value, True
                _, visits = route(dd, ds.X)
    return dd


def _remove_node(dd: DecisionDiagram, v: int, target: int) -> DecisionDiagram:
    out = dd.copy()
    for u in out.active_internal():
        if out.neg_arc[u] == v:
            out.neg_arc[u] = target
        if out.pos_arc[u] == v:
            out.pos_arc[u] = target
    del out.neg_arc[v], out.pos_arc[v], out.hyperplane[v]
    out.active = out.active - {v}
    return out


def multi_start(ds: Dataset, topo: GraphTopology, cfg: HeuristicConfig,
                phi: Optional[np.ndarray] = None) -> Tuple[DecisionDiagram, float]:
    """Best of repeated construct+prune runs within the time budget.

    Start ``k`` draws its features from ``default_rng([seed, k])``, so a run
    capped by ``max_starts`` (and not by time) is reproducible.
    """
    deadline = time.monotonic() + cfg.time_budget_s
    best: Optional[Tuple[DecisionDiagram, float]] = None
    k = 0
    while True:
        rng = np.random.default_rng([cfg.seed, k])
        dd = bottom_up_prune(construct_once(ds, topo, cfg, rng), ds, cfg.alpha, phi)
        if not cfg.tree_mode:
            _orient(dd)   # pruning may have redirected arcs
        value = objective(dd, ds, cfg.alpha, phi)
        if best is None or value < best[1] - 1e-12:
            best = (dd, value)
        k += 1
        if cfg.max_starts is not None and k >= cfg.max_starts:
            break
        if time.monotonic() >= deadline:
            break
    validate(best[0], check_order=not cfg.tree_mode)
    return best
