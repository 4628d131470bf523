from __future__ import annotations

import numpy as np
import pytest

from oddtrain.dataset import Dataset, normalize
from oddtrain.solve.solvers import SolverError, default_command


def make_dataset(X, y, n_classes=None, normalized=True) -> Dataset:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    k = n_classes or int(y.max()) + 1
    ds = Dataset(X, y, [f"f{j}" for j in range(X.shape[1])], [f"c{c}" for c in range(max(k, 2))])
    return normalize(ds) if normalized else ds


def solver_available() -> bool:
    try:
        default_command()
    except SolverError:
        return False
    return True


needs_solver = pytest.mark.skipif(not solver_available(), reason="no MILP solver installed")


@pytest.fixture
def toy4() -> Dataset:
    """Four samples, two features, class 1 iff x0 is large."""
    return make_dataset([[0.0, 0.0], [0.2, 1.0], [0.8, 0.0], [1.0, 1.0]], [0, 0, 1, 1])


@pytest.fixture
def xor4() -> Dataset:
    return make_dataset([[0, 0], [0, 1], [1, 0], [1, 1]], [0, 1, 1, 0])


# ---------------------------------------------------------------- suite-wide recorders
# Every audit and every pipeline report produced anywhere in the run is
# collected so that the audit and cutoff properties are checked over all
# solves, not only the ones made by the acceptance module.

AUDITS = []        # (AuditRecord or None, error message or None)
ACCEPTANCE = []    # PASS/FAIL lines of the acceptance module
REPORTS = []       # SolveReport


def _install_recorders():
    import oddtrain.solve as solve_pkg
    import oddtrain.experiment.cli as cli_mod
    import oddtrain.experiment.grid as grid_mod
    import oddtrain.solve.pipeline as pipe_mod
    from oddtrain.solve.decode import AuditError

    real_audit = pipe_mod.audit
    real_train = pipe_mod.train_pipeline

    def recording_audit(*args, **kwargs):
        try:
            rec = real_audit(*args, **kwargs)
        except AuditError as exc:
            AUDITS.append((exc.record, str(exc)))
            raise
        AUDITS.append((rec, None if rec.ok else "; ".join(rec.messages)))
        return rec

    def recording_train(*args, **kwargs):
        report = real_train(*args, **kwargs)
        REPORTS.append(report)
        return report

    pipe_mod.audit = recording_audit
    for mod in (pipe_mod, solve_pkg, grid_mod, cli_mod):
        mod.train_pipeline = recording_train


_install_recorders()


def cutoff_contract_violations(reports):
    from oddtrain.solve.pipeline import CUTOFF_NO_IMPROVEMENT

    bad = []
    for k, r in enumerate(reports):
        if r.objective is None or not r.heuristic_feasible:
            continue
        if r.objective > r.heuristic_objective + 1e-9:
            bad.append(f"run {k}: objective {r.objective} > heuristic {r.heuristic_objective}")
        if r.status == CUTOFF_NO_IMPROVEMENT and not r.diagram.same_as(r.heuristic_diagram):
            bad.append(f"run {k}: fallback diagram differs from the heuristic diagram")
    return bad


def pytest_terminal_summary(terminalreporter):
    failed = [m for _, m in AUDITS if m is not None]
    tr = terminalreporter
    if ACCEPTANCE:
        tr.section("acceptance criteria")
        for line in ACCEPTANCE:
            tr.write_line(line)
    tr.write_line(f"suite-wide audits: {len(AUDITS)} run, {len(failed)} failed")
    cut = cutoff_contract_violations(REPORTS)
    tr.write_line(f"suite-wide cutoff contract: {len(REPORTS)} runs, {len(cut)} violations")
    for m in (failed + cut)[:10]:
        tr.write_line(f"  {m}")


def pytest_sessionfinish(session, exitstatus):
    if any(m is not None for _, m in AUDITS) or cutoff_contract_violations(REPORTS):
        session.exitstatus = 1
