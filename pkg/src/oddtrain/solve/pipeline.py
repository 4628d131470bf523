"""Two-step training: greedy heuristic, then the MILP with the heuristic
objective as cutoff."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..dataset import Dataset
from ..diagram import DecisionDiagram
from ..heuristic import HeuristicConfig, multi_start
from ..milp.formulation import ModelConfig, build_model, encode_diagram, set_cutoff
from ..skeleton import GraphTopology
from .decode import AuditError, AuditRecord, audit, decode, pack_violations
from .solvers import ERROR, FEASIBLE, INFEASIBLE, OPTIMAL, SolveConfig, invoke

log = logging.getLogger(__name__)

CUTOFF_NO_IMPROVEMENT = "cutoff_no_improvement"
TIMEOUT_NO_SOLUTION = "timeout_no_solution"
STATUSES = (OPTIMAL, FEASIBLE, CUTOFF_NO_IMPROVEMENT, INFEASIBLE, TIMEOUT_NO_SOLUTION, ERROR)
IMPROVEMENT_TOL = 1e-9


@dataclass
class SolveReport:
    status: str
    objective: Optional[float]
    best_bound: Optional[float]
    gap: Optional[float]
    runtime_s: float
    diagram: Optional[DecisionDiagram]
    audit: Optional[AuditRecord]
    heuristic_objective: float
    heuristic_diagram: DecisionDiagram
    heuristic_feasible: bool = True
    solver_status: str = ""
    proven_optimal: bool = False
    improved_over_heuristic: bool = False
    heuristic_runtime_s: float = 0.0
    solver_runtime_s: float = 0.0
    n_variables: int = 0
    n_constraints: int = 0
    n_binaries: int = 0
    solver_output: str = ""

    def to_json(self, timings: bool = True) -> dict:
        out = {
            "status": self.status,
            "objective": self.objective,
            "best_bound": self.best_bound,
            "gap": self.gap,
            "heuristic_objective": self.heuristic_objective,
            "heuristic_feasible": self.heuristic_feasible,
            "solver_status": self.solver_status,
            "proven_optimal": self.proven_optimal,
            "improved_over_heuristic": self.improved_over_heuristic,
            "n_variables": self.n_variables,
            "n_constraints": self.n_constraints,
            "n_binaries": self.n_binaries,
            "audit": self.audit.to_json() if self.audit is not None else None,
            "diagram": self.diagram.to_json() if self.diagram is not None else None,
        }
        if timings:
            out["runtime_s"] = self.runtime_s
            out["heuristic_runtime_s"] = self.heuristic_runtime_s
            out["solver_runtime_s"] = self.solver_runtime_s
        return out


def _gap(objective: Optional[float], bound: Optional[float]) -> Optional[float]:
    if objective is None or bound is None:
        return None
    return max(0.0, objective - bound) / max(abs(objective), 1e-10)


def train_pipeline(ds: Dataset, topo: GraphTopology, model_cfg: ModelConfig,
                   heuristic_cfg: Optional[HeuristicConfig] = None,
                   solve_cfg: Optional[SolveConfig] = None) -> SolveReport:
    """Heuristic diagram, then an exact solve searching only for strictly
    better diagrams.

    The heuristic serves as cutoff (and fallback) only when it satisfies the
    constraint packs of ``model_cfg``. A solver answer is kept only if it
    beats the heuristic; otherwise the heuristic is reported with status
    ``cutoff_no_improvement``.
    """
    heuristic_cfg = heuristic_cfg or HeuristicConfig()
    solve_cfg = solve_cfg or SolveConfig()
    t0 = time.monotonic()
    hcfg = dataclasses.replace(heuristic_cfg, alpha=model_cfg.alpha, tree_mode=model_cfg.tree)
    h_dd, h_obj = multi_start(ds, topo, hcfg, phi=model_cfg.phi)
    h_time = time.monotonic() - t0
    h_ok = not pack_violations(h_dd, ds, model_cfg)

    model, idx = build_model(ds, topo, model_cfg)
    if h_ok:
        set_cutoff(model, h_obj)
    start = None
    if solve_cfg.warm_start and h_ok:
        start = encode_diagram(h_dd, ds, idx, model)
        if model.violations(start):
            log.info("heuristic diagram is not a feasible start for the model; warm start skipped")
            start = None
    raw = invoke(model, solve_cfg, start)

    report = SolveReport(
        status=ERROR, objective=None, best_bound=raw.best_bound, gap=None, runtime_s=0.0,
        diagram=None, audit=None, heuristic_objective=h_obj, heuristic_diagram=h_dd,
        heuristic_feasible=h_ok, solver_status=raw.status, heuristic_runtime_s=h_time,
        solver_runtime_s=raw.runtime_s, n_variables=len(model.variables),
        n_constraints=len(model.constraints), n_binaries=model.n_binaries(),
        solver_output=raw.output)

    def fallback(proven: bool) -> None:
        report.status = CUTOFF_NO_IMPROVEMENT
        report.objective = h_obj
        report.diagram = h_dd
        report.proven_optimal = proven
        if proven:
            report.best_bound = h_obj
        report.audit = audit(h_dd, ds, model_cfg, reported_objective=h_obj)

    if raw.status == ERROR:
        log.error("solver failed: %s", raw.output.strip()[-2000:])
    elif raw.has_solution:
        x = raw.vector(model)
        dd = decode(x, idx, model_cfg)
        rec = audit(dd, ds, model_cfg, idx, x, reported_objective=None, model=model,
                    integrality_tol=solve_cfg.integrality_tol)
        value = rec.objective_routed
        if raw.objective is not None and abs(raw.objective - value) > 1e-6:
            rec.objective_match = False
            rec.messages.append(f"solver objective {raw.objective:.9g} != routed {value:.9g}")
            raise AuditError("audit failed: " + "; ".join(rec.messages), rec)
        rec.objective_reported = raw.objective
        if h_ok and value >= h_obj - IMPROVEMENT_TOL:
            fallback(proven=raw.status == OPTIMAL)
        else:
            report.status = OPTIMAL if raw.status == OPTIMAL else FEASIBLE
            report.objective = value
            report.diagram = dd
            report.audit = rec
            report.proven_optimal = raw.status == OPTIMAL
            report.improved_over_heuristic = h_ok and value < h_obj - IMPROVEMENT_TOL
            if report.proven_optimal:
                # an exact solve closes the gap; otherwise keep the solver's bound
                exact = solve_cfg.mip_gap == 0 or raw.best_bound is None
                report.best_bound = value if exact else min(raw.best_bound, value)
    elif raw.status == INFEASIBLE:
        if h_ok:
            fallback(proven=True)
        else:
            report.status = INFEASIBLE
            report.proven_optimal = True
    else:
        if h_ok:
            fallback(proven=False)
        else:
            report.status = TIMEOUT_NO_SOLUTION
    report.gap = _gap(report.objective, report.best_bound)
    report.runtime_s = time.monotonic() - t0
    return report
