from .solvers import (
    ENV_COMMAND, ERROR, FEASIBLE, INFEASIBLE, OPTIMAL, TIMEOUT_NO_SOLUTION, RawSolution,
    SolveConfig, SolverError, bundled_cbc, default_command, detect_dialect, invoke,
    parse_solution, resolve_command,
)
from .decode import AuditError, AuditRecord, CorruptSolution, audit, decode, pack_violations, tree_violations
from .pipeline import CUTOFF_NO_IMPROVEMENT, STATUSES, SolveReport, train_pipeline
