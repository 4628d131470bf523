"""Flow-based MILP for training a decision diagram on a fixed skeleton.

Every sample sends one unit of flow from the root to a terminal. Per
sample and internal node a pair of continuous side flows (negative /
positive) is linked to binary arc-design variables; one binary per sample
and layer selects the hyperplane side taken on that layer, which is
enough to make all flows integral. Hyperplane consistency is enforced by
big-M rows derived from the variable boxes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..dataset import Dataset
from ..diagram import complexity_weight, mismatch_matrix
from ..skeleton import GraphTopology, tree_arcs
from .model import BINARY, CONTINUOUS, EQ, GE, LE, LinExpr, MilpModel

log = logging.getLogger(__name__)

MULTIVARIATE, UNIVARIATE = "multivariate", "univariate"


class FormulationError(ValueError):
    pass


@dataclass
class FairnessPack:
    group1: Sequence[int]
    group2: Sequence[int]
    xi: float = 0.8
    positive_class: int = 1


@dataclass
class ModelConfig:
    alpha: float = 0.0
    split_mode: str = MULTIVARIATE
    epsilon: float = 1e-4
    phi: Optional[np.ndarray] = None
    symmetry_breaking: bool = True
    tree: bool = False
    fairness: Optional[FairnessPack] = None
    max_nodes: Optional[int] = None
    min_flow: Optional[float] = None

    def __post_init__(self):
        if self.alpha < 0:
            raise FormulationError("alpha must be non-negative")
        if self.split_mode not in (MULTIVARIATE, UNIVARIATE):
            raise FormulationError(f"unknown split mode {self.split_mode!r}")
        if not self.epsilon > 1e-9:
            raise FormulationError("epsilon must exceed the solver feasibility tolerance")

    def big_m(self, d: int) -> float:
        # |a.x - b| <= d + 1 (resp. 2 with one active feature) on the box
        return (2.0 if self.split_mode == UNIVARIATE else d + 1.0) + self.epsilon


@dataclass
class VarIndex:
    """Semantic role -> variable id maps.

    ``d`` only holds the free node indicators; the root and the terminals
    are fixed to 1 and enter rows as constants.
    """

    topology: GraphTopology
    n: int
    n_features: int
    classes: np.ndarray
    wneg: Dict[Tuple[int, int], int] = field(default_factory=dict)
    wpos: Dict[Tuple[int, int], int] = field(default_factory=dict)
    zneg: Dict[Tuple[int, int, int], int] = field(default_factory=dict)
    zpos: Dict[Tuple[int, int, int], int] = field(default_factory=dict)
    lam: Dict[Tuple[int, int], int] = field(default_factory=dict)
    d: Dict[int, int] = field(default_factory=dict)
    yneg: Dict[Tuple[int, int], int] = field(default_factory=dict)
    ypos: Dict[Tuple[int, int], int] = field(default_factory=dict)
    a: Dict[Tuple[int, int], int] = field(default_factory=dict)
    b: Dict[int, int] = field(default_factory=dict)
    e: Dict[Tuple[int, int], int] = field(default_factory=dict)
    wleaf: Dict[Tuple[int, int], int] = field(default_factory=dict)

    ROLES = ("wneg", "wpos", "zneg", "zpos", "lam", "d", "yneg", "ypos", "a", "b", "e", "wleaf")

    def d_term(self, u: int) -> Tuple[Optional[int], float]:
        """(variable id, 0) for a free node, (None, 1) for a fixed one."""
        if u in self.d:
            return self.d[u], 0.0
        return None, 1.0

    def flow_into(self, v: int, i: int) -> List[int]:
        ids = []
        for u in self.topology.pred[v]:
            ids.append(self.zpos[i, u, v])
            ids.append(self.zneg[i, u, v])
        return ids

    def role_of(self) -> Dict[int, Tuple[str, Tuple[int, ...]]]:
        out = {}
        for role in self.ROLES:
            for key, vid in getattr(self, role).items():
                out[vid] = (role, key if isinstance(key, tuple) else (key,))
        return out


def var_name(role: str, *key: int) -> str:
    prefix = "lambda" if role == "lam" else role
    return "_".join([prefix] + [str(k) for k in key])


def parse_var_name(name: str) -> Tuple[str, Tuple[int, ...]]:
    head, *rest = name.split("_")
    role = "lam" if head == "lambda" else head
    if role not in VarIndex.ROLES:
        raise ValueError(f"not a formulation variable: {name}")
    return role, tuple(int(t) for t in rest)


def _add_terms(terms: List[Tuple[int, float]], idx: VarIndex, u: int, coef: float) -> float:
    """Append ``coef * d_u`` and return the constant part it contributes."""
    vid, const = idx.d_term(u)
    if vid is not None:
        terms.append((vid, coef))
    return coef * const


def build_model(ds: Dataset, topo: GraphTopology, cfg: ModelConfig) -> Tuple[MilpModel, VarIndex]:
    if topo.n_internal < 1:
        raise FormulationError("skeleton needs at least one internal node")
    if ds.n == 0:
        raise FormulationError("empty dataset")
    if ds.n_classes != topo.n_classes:
        raise FormulationError("dataset and skeleton disagree on the number of classes")
    n, d = ds.n, ds.d
    X = ds.X
    model = MilpModel()
    idx = VarIndex(topo, n, d, ds.y.copy())
    internal = list(topo.internal_nodes)
    arcs = topo.arcs()
    uni = cfg.split_mode == UNIVARIATE

    # design variables
    for u in internal:
        if u != 0:
            idx.d[u] = model.add_var(var_name("d", u), BINARY, 0, 1)
    for (u, v) in arcs:
        idx.yneg[u, v] = model.add_var(var_name("yneg", u, v), BINARY, 0, 1)
        idx.ypos[u, v] = model.add_var(var_name("ypos", u, v), BINARY, 0, 1)
    for v in internal:
        for j in range(d):
            idx.a[v, j] = model.add_var(var_name("a", v, j), CONTINUOUS, -1, 1)
        idx.b[v] = model.add_var(var_name("b", v), CONTINUOUS, -1, 1)
        if uni:
            for j in range(d):
                idx.e[v, j] = model.add_var(var_name("e", v, j), BINARY, 0, 1)
    for l in range(topo.depth):
        for i in range(n):
            idx.lam[i, l] = model.add_var(var_name("lam", i, l), BINARY, 0, 1)
    # flow variables (continuous; integral by construction)
    for u in internal:
        for i in range(n):
            idx.wneg[i, u] = model.add_var(var_name("wneg", i, u))
            idx.wpos[i, u] = model.add_var(var_name("wpos", i, u))
    for (u, v) in arcs:
        for i in range(n):
            idx.zneg[i, u, v] = model.add_var(var_name("zneg", i, u, v))
            idx.zpos[i, u, v] = model.add_var(var_name("zpos", i, u, v))
    for t in topo.terminals:
        for i in range(n):
            idx.wleaf[i, t] = model.add_var(var_name("wleaf", i, t))

    # flow conservation
    for v in internal:
        for i in range(n):
            terms = [(idx.wpos[i, v], 1.0), (idx.wneg[i, v], 1.0)]
            if v == 0:
                model.add_constraint(f"flow_{i}_{v}", terms, EQ, 1.0, "flow")
            else:
                terms += [(z, -1.0) for z in idx.flow_into(v, i)]
                model.add_constraint(f"flow_{i}_{v}", terms, EQ, 0.0, "flow")
    for u in internal:
        for i in range(n):
            model.add_constraint(
                f"outneg_{i}_{u}",
                [(idx.wneg[i, u], 1.0)] + [(idx.zneg[i, u, v], -1.0) for v in topo.succ[u]],
                EQ, 0.0, "outneg")
            model.add_constraint(
                f"outpos_{i}_{u}",
                [(idx.wpos[i, u], 1.0)] + [(idx.zpos[i, u, v], -1.0) for v in topo.succ[u]],
                EQ, 0.0, "outpos")

    # one side per sample and layer
    for l, layer in enumerate(topo.layers):
        for i in range(n):
            model.add_constraint(f"lamneg_{i}_{l}",
                                 [(idx.wneg[i, u], 1.0) for u in layer] + [(idx.lam[i, l], 1.0)],
                                 LE, 1.0, "lamneg")
            model.add_constraint(f"lampos_{i}_{l}",
                                 [(idx.wpos[i, u], 1.0) for u in layer] + [(idx.lam[i, l], -1.0)],
                                 LE, 0.0, "lampos")

    # topology
    for u in internal:
        for sign, y in (("pos", idx.ypos), ("neg", idx.yneg)):
            terms = [(y[u, v], 1.0) for v in topo.succ[u]]
            const = _add_terms(terms, idx, u, -1.0)
            model.add_constraint(f"out{sign}deg_{u}", terms, EQ, -const, "outdeg")
    for v in internal:
        if v == 0:
            continue
        terms = [(idx.d[v], 1.0)]
        for u in topo.pred[v]:
            terms += [(idx.ypos[u, v], -1.0), (idx.yneg[u, v], -1.0)]
        model.add_constraint(f"indeg_{v}", terms, LE, 0.0, "indeg")
    for (u, v) in arcs:
        terms = [(idx.ypos[u, v], 1.0), (idx.yneg[u, v], 1.0)]
        const = _add_terms(terms, idx, v, -1.0)
        model.add_constraint(f"arcuse_{u}_{v}", terms, LE, -const, "arcuse")
    for (u, v) in arcs:
        for i in range(n):
            model.add_constraint(f"zpos_{i}_{u}_{v}",
                                 [(idx.zpos[i, u, v], 1.0), (idx.ypos[u, v], -1.0)], LE, 0.0, "zlink")
            model.add_constraint(f"zneg_{i}_{u}_{v}",
                                 [(idx.zneg[i, u, v], 1.0), (idx.yneg[u, v], -1.0)], LE, 0.0, "zlink")

    if cfg.symmetry_breaking and not cfg.tree:
        add_symmetry_breaking(model, idx)

    # hyperplanes, big-M lowered
    M = cfg.big_m(d)
    eps = cfg.epsilon
    for v in internal:
        for i in range(n):
            lin = [(idx.a[v, j], float(X[i, j])) for j in range(d) if X[i, j] != 0.0]
            model.add_constraint(f"hneg_{i}_{v}",
                                 lin + [(idx.b[v], -1.0), (idx.wneg[i, v], M)], LE, M - eps, "hneg")
            model.add_constraint(f"hpos_{i}_{v}",
                                 lin + [(idx.b[v], -1.0), (idx.wpos[i, v], -M)], GE, -M, "hpos")
    if uni:
        for v in internal:
            model.add_constraint(f"onefeat_{v}", [(idx.e[v, j], 1.0) for j in range(d)], EQ, 1.0, "onefeat")
            for j in range(d):
                model.add_constraint(f"aup_{v}_{j}", [(idx.a[v, j], 1.0), (idx.e[v, j], -1.0)], LE, 0.0, "featlink")
                model.add_constraint(f"alo_{v}_{j}", [(idx.a[v, j], 1.0), (idx.e[v, j], 1.0)], GE, 0.0, "featlink")

    # terminal flows and objective
    for t in topo.terminals:
        for i in range(n):
            model.add_constraint(f"leaf_{i}_{t}",
                                 [(idx.wleaf[i, t], 1.0)] + [(z, -1.0) for z in idx.flow_into(t, i)],
                                 EQ, 0.0, "leaf")
    phi = cfg.phi if cfg.phi is not None else mismatch_matrix(ds.y, topo.n_classes)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (n, topo.n_classes):
        raise FormulationError(f"phi must have shape {(n, topo.n_classes)}")
    obj = []
    for t in topo.terminals:
        c = topo.class_of(t)
        for i in range(n):
            if phi[i, c] != 0.0:
                obj.append((idx.wleaf[i, t], phi[i, c] / n))
    weight = complexity_weight(topo, cfg.alpha)
    if weight:
        obj += [(idx.d[v], weight) for v in internal if v != 0]
    model.set_objective(obj)

    if cfg.tree:
        fix_tree_topology(model, idx, tree_arcs(topo.skeleton))
    if cfg.fairness is not None:
        f = cfg.fairness
        add_fairness(model, idx, f.group1, f.group2, f.xi, f.positive_class)
    if cfg.max_nodes is not None:
        add_parsimony(model, idx, cfg.max_nodes)
    if cfg.min_flow is not None:
        add_stability(model, idx, cfg.min_flow)
    return model, idx


def add_symmetry_breaking(model: MilpModel, idx: VarIndex) -> None:
    """Negative-side target before positive-side target, and non-increasing
    in-degree along every layer from the third one on."""
    topo = idx.topology
    for u in topo.internal_nodes:
        succ = topo.succ[u]
        for v in succ:
            terms = [(idx.yneg[u, v], 1.0)] + [(idx.ypos[u, w], 1.0) for w in succ if w <= v]
            model.add_constraint(f"sym_{u}_{v}", terms, LE, 1.0, "sym")
    for l in range(2, topo.depth):
        layer = topo.layers[l]
        for a_pos, u in enumerate(layer):
            for v in layer[a_pos + 1:]:
                terms = []
                for w in topo.pred[u]:
                    terms += [(idx.ypos[w, u], 1.0), (idx.yneg[w, u], 1.0)]
                for w in topo.pred[v]:
                    terms += [(idx.ypos[w, v], -1.0), (idx.yneg[w, v], -1.0)]
                model.add_constraint(f"order_{u}_{v}", terms, GE, 0.0, "order")


def _positive_terminal(idx: VarIndex, positive_class: int) -> int:
    if idx.topology.n_classes != 2:
        raise FormulationError("fairness pack requires binary classification")
    if positive_class not in (0, 1):
        raise FormulationError("positive class must be 0 or 1")
    return idx.topology.terminal_of(positive_class)


def add_fairness(model: MilpModel, idx: VarIndex, g1: Iterable[int], g2: Iterable[int],
                 xi: float = 0.8, positive_class: int = 1) -> None:
    """Demographic parity: positives(g1) >= xi * positives(g2)."""
    t = _positive_terminal(idx, positive_class)
    terms = [(idx.wleaf[i, t], 1.0) for i in sorted(set(g1))]
    terms += [(idx.wleaf[i, t], -xi) for i in sorted(set(g2))]
    model.add_constraint("fair_parity", terms, GE, 0.0, "fair")


def fairness_expressions(idx: VarIndex, g: Iterable[int], positive_class: int = 1) -> Dict[str, LinExpr]:
    """Positive predictions, false positives and false negatives of group ``g``."""
    t = _positive_terminal(idx, positive_class)
    pos, fp, fn = LinExpr(), LinExpr(), LinExpr()
    for i in sorted(set(g)):
        w = idx.wleaf[i, t]
        pos.add(w, 1.0)
        if idx.classes[i] != positive_class:
            fp.add(w, 1.0)
        else:
            fn.constant += 1.0
            fn.add(w, -1.0)
    return {"positives": pos, "false_positives": fp, "false_negatives": fn}


def add_parsimony(model: MilpModel, idx: VarIndex, max_nodes: int) -> None:
    """At most ``max_nodes`` active internal nodes, root included."""
    if max_nodes < 1:
        raise FormulationError("max_nodes must be at least 1")
    terms = [(vid, 1.0) for _, vid in sorted(idx.d.items())]
    model.add_constraint("parsimony", terms, LE, max_nodes - 1.0, "parsimony")


def add_stability(model: MilpModel, idx: VarIndex, min_flow: float) -> None:
    """Every active non-root internal node receives at least ``min_flow`` samples."""
    if min_flow < 0:
        raise FormulationError("minimum flow must be non-negative")
    if min_flow > idx.n:
        log.warning("minimum flow %s exceeds the %d training samples; every non-root "
                    "node is forced inactive", min_flow, idx.n)
    topo = idx.topology
    for v in topo.internal_nodes:
        if v == 0:
            continue
        terms = []
        for i in range(idx.n):
            terms += [(z, 1.0) for z in idx.flow_into(v, i)]
        terms.append((idx.d[v], -float(min_flow)))
        model.add_constraint(f"stab_{v}", terms, GE, 0.0, "stab")


def fix_tree_topology(model: MilpModel, idx: VarIndex,
                      tree: Dict[int, Tuple[Optional[int], Optional[int]]]) -> None:
    """Restrict internal arcs to the canonical tree children.

    Long arcs to terminals stay free, so subtrees can still be cut off. The
    symmetry-breaking rows do not apply to a fixed topology and are dropped.
    """
    topo = idx.topology
    if not topo.skeleton.is_tree:
        raise FormulationError(f"not a tree skeleton: {topo.skeleton}")
    for u in topo.internal_nodes:
        left, right = tree[u]
        for v in topo.succ[u]:
            if topo.is_terminal(v):
                continue
            if v != left:
                var = model.variables[idx.yneg[u, v]]
                var.lower = var.upper = 0.0
            if v != right:
                var = model.variables[idx.ypos[u, v]]
                var.lower = var.upper = 0.0
    model.remove_family("sym")
    model.remove_family("order")


def set_cutoff(model: MilpModel, value: float) -> None:
    if not np.isfinite(value):
        raise FormulationError("cutoff must be finite")
    model.cutoff = float(value)


def count_sample_binaries(model: MilpModel, idx: VarIndex) -> int:
    """Binary variables indexed by a sample."""
    roles = idx.role_of()
    return sum(1 for v in model.variables
               if v.kind == BINARY and roles[v.id][0] in ("lam", "wneg", "wpos", "zneg", "zpos", "wleaf"))


def encode_diagram(dd, ds: Dataset, idx: VarIndex, model: MilpModel,
                   epsilon: Optional[float] = None) -> np.ndarray:
    """Full variable assignment representing diagram ``dd`` on ``ds``.

    The result is feasible whenever ``dd`` respects the formulation's
    structural rules and its hyperplanes separate the training samples with
    margin ``epsilon`` on the negative side; use
    :meth:`MilpModel.violations` to check.
    """
    from ..diagram import route

    topo = idx.topology
    x = np.zeros(len(model.variables))
    for u in dd.active_internal():
        if u in idx.d:
            x[idx.d[u]] = 1.0
        x[idx.yneg[u, dd.neg_arc[u]]] = 1.0
        x[idx.ypos[u, dd.pos_arc[u]]] = 1.0
        a, b = dd.hyperplane[u]
        for j in range(idx.n_features):
            x[idx.a[u, j]] = a[j]
        x[idx.b[u]] = b
        if idx.e:
            nz = np.flatnonzero(np.abs(a) > 0)
            x[idx.e[u, int(nz[0]) if nz.size else 0]] = 1.0
    for v in topo.internal_nodes:
        if v not in dd.active and idx.e:
            x[idx.e[v, 0]] = 1.0
    X = ds.X
    for i in range(ds.n):
        v = 0
        for l in range(topo.depth):
            a, b = dd.hyperplane[v]
            pos = float(a @ X[i]) >= b
            x[idx.lam[i, l]] = 1.0 if pos else 0.0
            x[(idx.wpos if pos else idx.wneg)[i, v]] = 1.0
            nxt = dd.pos_arc[v] if pos else dd.neg_arc[v]
            x[(idx.zpos if pos else idx.zneg)[i, v, nxt]] = 1.0
            if topo.is_terminal(nxt):
                x[idx.wleaf[i, nxt]] = 1.0
                # remaining layers: lambda free, keep 0
                break
            v = nxt
    return x
