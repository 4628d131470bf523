import numpy as np
import pytest

from oddtrain.diagram import evaluate
from oddtrain.heuristic import HeuristicConfig
from oddtrain.milp import BINARY, GE, ModelConfig, MilpModel, UNIVARIATE, build_model, set_cutoff
from oddtrain.skeleton import Skeleton, build_graph
from oddtrain.solve import (CUTOFF_NO_IMPROVEMENT, AuditError, CorruptSolution, SolveConfig,
                            audit, decode, invoke, parse_solution, train_pipeline)
from oddtrain.solve.solvers import (ERROR, FEASIBLE, INFEASIBLE, OPTIMAL, TIMEOUT_NO_SOLUTION,
                                    SolverError, bundled_cbc, detect_dialect)

from conftest import make_dataset, needs_solver

SOLVERS = [s for s in ("highs", "cbc") if s != "cbc" or bundled_cbc()]


def tiny_model():
    """min x + y + z, x + y >= 1.5, y + z >= 1 over binaries; optimum 2."""
    m = MilpModel("tiny")
    x, y, z = (m.add_var(n, BINARY) for n in "xyz")
    m.add_constraint("c1", [(x, 1), (y, 1)], GE, 1.5)
    m.add_constraint("c2", [(y, 1), (z, 1)], GE, 1.0)
    m.set_objective([(x, 1), (y, 1), (z, 1)])
    return m


@needs_solver
@pytest.mark.parametrize("solver", SOLVERS)
def test_tiny_model(solver):
    m = tiny_model()
    raw = invoke(m, SolveConfig(solver_command=solver, time_limit_s=10))
    assert raw.status == OPTIMAL and raw.proven
    assert raw.objective == pytest.approx(2.0)
    x = raw.vector(m)
    assert x[m.var_id("x")] == pytest.approx(1) and x[m.var_id("y")] == pytest.approx(1)


@needs_solver
@pytest.mark.parametrize("solver", SOLVERS)
def test_cutoff_at_and_below_optimum_is_proven_infeasible(solver):
    for cut in (1.0, 2.0):
        m = tiny_model()
        set_cutoff(m, cut)
        raw = invoke(m, SolveConfig(solver_command=solver, time_limit_s=10))
        assert raw.status == INFEASIBLE and raw.proven
        assert raw.best_bound == cut
    m = tiny_model()
    set_cutoff(m, 2.5)
    assert invoke(m, SolveConfig(solver_command=solver, time_limit_s=10)).status == OPTIMAL


def test_bad_command_is_an_error():
    raw = invoke(tiny_model(), SolveConfig(solver_command="/nonexistent/solver {model_file} {time_limit} {solution_file}"))
    assert raw.status == ERROR
    raw = invoke(tiny_model(), SolveConfig(solver_command="echo {model_file}"))
    assert raw.status == ERROR and "lacks" in raw.output
    with pytest.raises(SolverError):
        from oddtrain.solve.solvers import named_command
        named_command("gurobi-ish")


# canned solver answers ---------------------------------------------------

HIGHS_SOL = """Model status
Time limit reached

# Primal solution values
Feasible
Objective 0.25
# Columns 2
x 1
y 0
# Rows 1
c1 1
"""

HIGHS_NOSOL = """Model status
Time limit reached

# Primal solution values
None
"""

CBC_OPT = """Optimal - objective value 2.00000000
      0 x                  1                       1
      1 y                  1                       1
"""

CBC_STOPPED = "Stopped on time - objective value 3.00000000\n      0 x 1 1\n"
CBC_NOSOL = "Stopped on time (no integer solution - continuous used) - objective value 1.5\n      0 x 0.5 1\n"
CBC_INFEAS = "Infeasible - objective value 0.00000000\n"

SCIP_SOL = "solution status: optimal solution found\nobjective value:                    2\nx  1  (obj:1)\ny  1  (obj:1)\n"
GUROBI_SOL = "# Solution for model tiny\n# Objective value = 2\nx 1\ny 1\n"


def test_dialect_detection():
    assert detect_dialect(HIGHS_SOL) == "highs"
    assert detect_dialect(CBC_OPT) == "cbc"
    assert detect_dialect(SCIP_SOL) == "scip"
    assert detect_dialect(GUROBI_SOL) == "gurobi"
    assert detect_dialect("") == "empty"
    with pytest.raises(SolverError):
        detect_dialect("garbage header\n")


def test_parse_highs():
    raw = parse_solution(HIGHS_SOL, "model_status Time limit reached\ndual_bound 0.1\n")
    assert raw.status == FEASIBLE and raw.values == {"x": 1.0, "y": 0.0}
    assert raw.objective == 0.25 and raw.best_bound == 0.1
    assert parse_solution(HIGHS_NOSOL).status == TIMEOUT_NO_SOLUTION


def test_parse_cbc():
    raw = parse_solution(CBC_OPT, "Result - Optimal solution found\n")
    assert raw.status == OPTIMAL and raw.best_bound == 2.0 and raw.values["y"] == 1.0
    raw = parse_solution(CBC_STOPPED, "Result - Stopped on time limit\nLower bound:  1.25\n")
    assert raw.status == FEASIBLE and raw.objective == 3.0 and raw.best_bound == 1.25
    assert parse_solution(CBC_NOSOL, "Result - Stopped on time limit\n").status == TIMEOUT_NO_SOLUTION
    # stopped during the root LP: no Result line, no incumbent
    assert parse_solution(CBC_STOPPED, "Stopped on iterations\n").status == TIMEOUT_NO_SOLUTION
    proven = parse_solution(CBC_INFEAS, "Result - Problem proven infeasible\n", cutoff=0.5)
    assert proven.status == INFEASIBLE and proven.proven and proven.best_bound == 0.5
    # preprocessing may say infeasible after the time limit; not a proof
    assert parse_solution(CBC_INFEAS, "Pre-processing says infeasible\n").status == TIMEOUT_NO_SOLUTION


def test_parse_scip_and_gurobi():
    raw = parse_solution(SCIP_SOL, "Dual Bound         : +2.00000000000000e+00\n")
    assert raw.status == OPTIMAL and raw.values == {"x": 1.0, "y": 1.0}
    raw = parse_solution(GUROBI_SOL, "Optimal solution found (tolerance 1.00e-04)\nBest objective 2, best bound 2\n")
    assert raw.status == OPTIMAL and raw.objective == 2.0


def test_empty_file_status_from_output():
    assert parse_solution("", "Time limit reached\n").status == TIMEOUT_NO_SOLUTION
    assert parse_solution("", "Model status : Infeasible\n").status == INFEASIBLE
    with pytest.raises(SolverError):
        parse_solution("", "segfault\n")


# decode and audit --------------------------------------------------------

@pytest.fixture
def solved_toy(xor4):
    topo = build_graph(Skeleton((1, 2)))
    cfg = ModelConfig(alpha=0.0)
    model, idx = build_model(xor4, topo, cfg)
    raw = invoke(model, SolveConfig(time_limit_s=30))
    assert raw.status == OPTIMAL
    return xor4, model, idx, cfg, raw.vector(model)


@needs_solver
def test_decode_and_audit_pass(solved_toy):
    ds, model, idx, cfg, x = solved_toy
    dd = decode(x, idx, cfg)
    rec = audit(dd, ds, cfg, idx, x, model=model)
    assert rec.ok and rec.objective_routed == pytest.approx(0.0)
    assert evaluate(dd, ds) == 1.0


@needs_solver
def test_arc_value_below_half_reads_as_absent(solved_toy):
    ds, model, idx, cfg, x = solved_toy
    x = x.copy()
    u, v = next(k for k, vid in idx.ypos.items() if k[0] == 0 and x[vid] > 0.5)
    x[idx.ypos[u, v]] = 0.4999
    with pytest.raises(CorruptSolution, match="corrupt solution"):
        decode(x, idx, cfg)
    x[idx.ypos[u, v]] = 0.5001
    decode(x, idx, cfg)


@needs_solver
def test_audit_catches_fractional_leaf_flow(solved_toy):
    ds, model, idx, cfg, x = solved_toy
    dd = decode(x, idx, cfg)
    bad = x.copy()
    i, t = next(k for k, vid in idx.wleaf.items() if x[vid] < 0.5)
    bad[idx.wleaf[i, t]] += 0.5
    with pytest.raises(AuditError) as err:
        audit(dd, ds, cfg, idx, bad, model=model)
    assert not err.value.record.integrality_ok
    rec = audit(dd, ds, cfg, idx, bad, model=model, raise_on_failure=False)
    assert not rec.ok and rec.constraints_ok is False


@needs_solver
def test_audit_catches_shifted_hyperplane(solved_toy):
    ds, model, idx, cfg, x = solved_toy
    dd = decode(x, idx, cfg)
    a, b = dd.hyperplane[0]
    dd.hyperplane[0] = (a, b + 10.0)      # everything routes negative now
    rec = audit(dd, ds, cfg, idx, x, model=model, raise_on_failure=False)
    assert not rec.routing_ok


@needs_solver
def test_diagram_only_audit(solved_toy):
    ds, model, idx, cfg, x = solved_toy
    dd = decode(x, idx, cfg)
    rec = audit(dd, ds, cfg, reported_objective=0.0)
    assert rec.ok and rec.diagram_only
    with pytest.raises(AuditError, match="reported objective"):
        audit(dd, ds, cfg, reported_objective=0.5)


# pipeline ----------------------------------------------------------------

@needs_solver
def test_pipeline_heuristic_already_optimal(toy4):
    topo = build_graph(Skeleton((1, 2)))
    rep = train_pipeline(toy4, topo, ModelConfig(alpha=0.1), HeuristicConfig(max_starts=2),
                         SolveConfig(time_limit_s=30))
    assert rep.heuristic_objective == 0.0
    assert rep.status == CUTOFF_NO_IMPROVEMENT and rep.proven_optimal
    assert rep.diagram.same_as(rep.heuristic_diagram)
    assert rep.best_bound == rep.objective == 0.0 and rep.gap == 0.0


@needs_solver
def test_pipeline_improves_on_xor(xor4):
    topo = build_graph(Skeleton((1, 2)))
    rep = train_pipeline(xor4, topo, ModelConfig(alpha=0.0), HeuristicConfig(max_starts=1),
                         SolveConfig(time_limit_s=30))
    assert rep.objective == pytest.approx(0.0) and rep.proven_optimal
    assert rep.objective <= rep.heuristic_objective
    assert rep.audit.ok
    doc = rep.to_json(timings=False)
    assert "runtime_s" not in doc and doc["diagram"]["skeleton"] == "1-2"


@needs_solver
def test_pipeline_with_tiny_time_limit_keeps_heuristic():
    rng = np.random.default_rng(0)
    X = rng.random((60, 4))
    y = (X[:, 0] + X[:, 1] * X[:, 2] > 0.7).astype(int)
    ds = make_dataset(X, y)
    topo = build_graph(Skeleton((1, 2, 4)))
    rep = train_pipeline(ds, topo, ModelConfig(alpha=0.01), HeuristicConfig(max_starts=2),
                         SolveConfig(time_limit_s=0.01))
    assert rep.diagram is not None
    assert rep.objective <= rep.heuristic_objective + 1e-12
    assert rep.status in ("optimal", "feasible", CUTOFF_NO_IMPROVEMENT)


@needs_solver
@pytest.mark.skipif(not bundled_cbc(), reason="cbc not available")
def test_cbc_warm_start(xor4):
    topo = build_graph(Skeleton((1, 2)))
    rep = train_pipeline(xor4, topo, ModelConfig(alpha=0.1, split_mode=UNIVARIATE),
                         HeuristicConfig(max_starts=1),
                         SolveConfig(solver_command="cbc", time_limit_s=30, warm_start=True))
    assert rep.proven_optimal and rep.objective == pytest.approx(0.1)
