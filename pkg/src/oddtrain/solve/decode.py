"""Turning solver output into a diagram, and checking it independently."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..dataset import Dataset
from ..diagram import (DecisionDiagram, InvalidModel, complexity_weight, mismatch_matrix,
                       predict, route, validate)
from ..milp.formulation import ModelConfig, VarIndex
from ..milp.model import MilpModel
from ..skeleton import tree_arcs

ROUND = 0.5
# row tolerance for re-verifying a solver point against the model
FEASIBILITY_TOL = 1e-5
OBJECTIVE_TOL = 1e-6


class CorruptSolution(ValueError):
    pass


class AuditError(RuntimeError):
    """A decoded solution failed an audit; the record is attached."""

    def __init__(self, message: str, record: "AuditRecord"):
        super().__init__(message)
        self.record = record


@dataclass
class AuditRecord:
    integrality_ok: bool = True
    routing_ok: bool = True
    objective_match: bool = True
    constraints_ok: Optional[bool] = None
    max_integrality_error: float = 0.0
    objective_routed: float = 0.0
    objective_reported: Optional[float] = None
    objective_raw: Optional[float] = None
    diagram_only: bool = False
    messages: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.integrality_ok and self.routing_ok and self.objective_match
                and self.constraints_ok is not False)

    def to_json(self) -> dict:
        out = asdict(self)
        out["ok"] = self.ok
        return out


def decode(x: np.ndarray, idx: VarIndex, cfg: ModelConfig) -> DecisionDiagram:
    """Diagram encoded by the variable values ``x``.

    Binaries are rounded at 0.5. The stored threshold is moved to the middle
    of the training margin (``b - eps/2``) so that the ``>=`` routing rule is
    immune to the solver's feasibility tolerance.
    """
    topo = idx.topology
    active = {0} | {u for u, vid in idx.d.items() if x[vid] > ROUND} | set(topo.terminals)
    neg_arc: Dict[int, int] = {}
    pos_arc: Dict[int, int] = {}
    hyperplane = {}
    for u in topo.internal_nodes:
        negs = [v for v in topo.succ[u] if x[idx.yneg[u, v]] > ROUND]
        poss = [v for v in topo.succ[u] if x[idx.ypos[u, v]] > ROUND]
        if u not in active:
            if negs or poss:
                raise CorruptSolution(f"corrupt solution: inactive node {u} has outgoing arcs")
            continue
        if len(negs) != 1 or len(poss) != 1:
            raise CorruptSolution(
                f"corrupt solution: node {u} has {len(negs)} negative and {len(poss)} positive arcs")
        for v in negs + poss:
            if v not in active:
                raise CorruptSolution(f"corrupt solution: arc {u}->{v} targets an inactive node")
        neg_arc[u], pos_arc[u] = negs[0], poss[0]
        a = np.array([x[idx.a[u, j]] for j in range(idx.n_features)])
        if idx.e:
            a = np.where([x[idx.e[u, j]] > ROUND for j in range(idx.n_features)], a, 0.0)
        hyperplane[u] = (a, float(x[idx.b[u]]) - cfg.epsilon / 2.0)
    dd = DecisionDiagram(topo, frozenset(active), neg_arc, pos_arc, hyperplane, cfg.epsilon)
    try:
        # arc order is only imposed by the symmetry-breaking rows
        validate(dd, check_order=cfg.symmetry_breaking and not cfg.tree)
    except InvalidModel as exc:
        raise CorruptSolution(f"corrupt solution: {exc}") from exc
    return dd


def _diagram_objective(terminals: np.ndarray, dd: DecisionDiagram, ds: Dataset,
                       cfg: ModelConfig) -> float:
    topo = dd.topology
    phi = cfg.phi if cfg.phi is not None else mismatch_matrix(ds.y, topo.n_classes)
    classes = terminals - topo.n_internal
    return float(np.asarray(phi)[np.arange(ds.n), classes].sum() / ds.n
                 + complexity_weight(topo, cfg.alpha) * dd.n_active_nonroot())


def audit(dd: DecisionDiagram, ds: Dataset, cfg: ModelConfig,
          idx: Optional[VarIndex] = None, x: Optional[np.ndarray] = None,
          reported_objective: Optional[float] = None, model: Optional[MilpModel] = None,
          integrality_tol: float = 1e-6, raise_on_failure: bool = True) -> AuditRecord:
    """Check a diagram against the data and, when given, the solver point.

    With ``x``: side and arc flows, leaf flows and layer indicators must be
    integral; every training sample's route through ``dd`` must match its
    leaf flow and satisfy the separation margins of the raw hyperplanes;
    the objective recomputed from the routes must match both the reported
    objective and the objective of ``x``. Without ``x`` only routing
    consistency and the objective are checked.
    """
    rec = AuditRecord(diagram_only=x is None)
    terminals, visits = route(dd, ds.X)
    rec.objective_routed = _diagram_objective(terminals, dd, ds, cfg)
    rec.objective_reported = reported_objective

    if x is None or idx is None:
        for i in range(ds.n):
            if predict(dd, ds.X[i]).terminal != terminals[i]:
                rec.routing_ok = False
                rec.messages.append(f"sample {i}: traced and batched routes differ")
                break
    else:
        topo = idx.topology
        worst = 0.0
        for role in ("wneg", "wpos", "zneg", "zpos", "wleaf", "lam"):
            ids = np.fromiter(getattr(idx, role).values(), dtype=int)
            if ids.size:
                worst = max(worst, float(np.max(np.abs(x[ids] - np.round(x[ids])))))
        rec.max_integrality_error = worst
        if worst > integrality_tol:
            rec.integrality_ok = False
            rec.messages.append(f"flow integrality error {worst:.3g} exceeds {integrality_tol:g}")

        M = cfg.big_m(idx.n_features)
        margin_tol = M * integrality_tol + 1e-6
        raw_b = {u: float(x[idx.b[u]]) for u in dd.active_internal()}
        X = ds.X
        for i in range(ds.n):
            leaf = {t: x[idx.wleaf[i, t]] for t in topo.terminals}
            solver_t = max(leaf, key=leaf.get)
            if solver_t != terminals[i]:
                rec.routing_ok = False
                rec.messages.append(f"sample {i}: routed to {terminals[i]}, leaf flow at {solver_t}")
                continue
            for u in np.flatnonzero(visits[i, :topo.n_internal]):
                a = dd.hyperplane[u][0]
                lhs = float(a @ X[i]) - raw_b[u]
                if x[idx.wpos[i, u]] > ROUND:
                    good = lhs >= -margin_tol
                elif x[idx.wneg[i, u]] > ROUND:
                    good = lhs <= -cfg.epsilon + margin_tol
                else:
                    good = False
                if not good:
                    rec.routing_ok = False
                    rec.messages.append(f"sample {i}: flow and hyperplane disagree at node {u}")
                    break
        if model is not None:
            rec.objective_raw = model.objective_value(x)
            bad = model.violations(x, FEASIBILITY_TOL)
            rec.constraints_ok = not bad
            if bad:
                rec.messages.append(f"{len(bad)} violated rows, first: {bad[:3]}")
        else:
            rec.objective_raw = _raw_objective(x, idx, ds, cfg)
        if abs(rec.objective_raw - rec.objective_routed) > OBJECTIVE_TOL:
            rec.objective_match = False
            rec.messages.append(f"objective of solver point {rec.objective_raw:.9g} != "
                                f"routed objective {rec.objective_routed:.9g}")

    if reported_objective is not None and abs(reported_objective - rec.objective_routed) > OBJECTIVE_TOL:
        rec.objective_match = False
        rec.messages.append(f"reported objective {reported_objective:.9g} != "
                            f"routed objective {rec.objective_routed:.9g}")
    if raise_on_failure and not rec.ok:
        raise AuditError("audit failed: " + "; ".join(rec.messages), rec)
    return rec


def _raw_objective(x: np.ndarray, idx: VarIndex, ds: Dataset, cfg: ModelConfig) -> float:
    topo = idx.topology
    phi = cfg.phi if cfg.phi is not None else mismatch_matrix(ds.y, topo.n_classes)
    total = sum(phi[i, topo.class_of(t)] * x[vid] for (i, t), vid in idx.wleaf.items()) / ds.n
    weight = complexity_weight(topo, cfg.alpha)
    return float(total + weight * sum(x[vid] for vid in idx.d.values()))


def pack_violations(dd: DecisionDiagram, ds: Dataset, cfg: ModelConfig) -> List[str]:
    """Constraint packs of ``cfg`` that ``dd`` breaks, recounted from routes."""
    problems = []
    topo = dd.topology
    if cfg.max_nodes is not None and len(dd.active_internal()) > cfg.max_nodes:
        problems.append(f"parsimony: {len(dd.active_internal())} active nodes > {cfg.max_nodes}")
    terminals, visits = route(dd, ds.X)
    if cfg.min_flow is not None:
        counts = visits.sum(axis=0)
        for v in dd.active_internal():
            if v != 0 and counts[v] < cfg.min_flow - 1e-9:
                problems.append(f"stability: node {v} receives {counts[v]} < {cfg.min_flow} samples")
    if cfg.fairness is not None:
        f = cfg.fairness
        positive = (terminals - topo.n_internal) == f.positive_class
        p1 = int(positive[sorted(set(f.group1))].sum())
        p2 = int(positive[sorted(set(f.group2))].sum())
        if p1 < f.xi * p2 - 1e-9:
            problems.append(f"fairness: {p1} positives < {f.xi} * {p2}")
    if cfg.tree:
        problems += tree_violations(dd)
    return problems


def tree_violations(dd: DecisionDiagram) -> List[str]:
    """Non-canonical internal arcs and nodes with in-degree other than 1."""
    topo = dd.topology
    children = tree_arcs(topo.skeleton)
    problems = []
    for u in dd.active_internal():
        left, right = children[u]
        if not topo.is_terminal(dd.neg_arc[u]) and dd.neg_arc[u] != left:
            problems.append(f"tree: node {u} negative arc to {dd.neg_arc[u]}")
        if not topo.is_terminal(dd.pos_arc[u]) and dd.pos_arc[u] != right:
            problems.append(f"tree: node {u} positive arc to {dd.pos_arc[u]}")
        if u != 0 and dd.in_degree(u) != 1:
            problems.append(f"tree: node {u} has in-degree {dd.in_degree(u)}")
    return problems
