"""External MILP solvers driven through model files and subprocesses.

A solver is described by a command template. The placeholders
``{model_file}``, ``{time_limit}`` and ``{solution_file}`` are required;
``{cutoff}``, ``{mip_gap}``, ``{threads}`` and ``{start_file}`` are
optional. A cutoff is always written into the model as the row
``objective <= cutoff - margin``; templates taking ``{cutoff}`` receive
it as well.
"""

from __future__ import annotations

import logging
import os
import re
import shlex
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from ..milp.model import LE, MilpModel
from ..milp.writers import emit_lp, emit_mps, fmt

log = logging.getLogger(__name__)

ENV_COMMAND = "ODD_SOLVER_CMD"
# strictness margin of the objective-bound row; must exceed the solver's
# feasibility tolerance (1e-6 for HiGHS MIP)
CUTOFF_ROW_MARGIN = 1e-5
NO_CUTOFF = 1e30

OPTIMAL, FEASIBLE, INFEASIBLE = "optimal", "feasible", "infeasible"
TIMEOUT_NO_SOLUTION, ERROR = "timeout_no_solution", "error"

CBC_TEMPLATE = ("{cbc} {model_file} -sec {time_limit} -ratioGap {mip_gap} -allowableGap 0 "
                "-threads {threads} -cutoff {cutoff} -solve -solution {solution_file}")
CBC_START_TEMPLATE = CBC_TEMPLATE.replace("-solve", "-mips {start_file} -solve")
HIGHS_TEMPLATE = ("{python} -m oddtrain.solve.highs_runner {model_file} {solution_file} "
                  "--time-limit {time_limit} --mip-gap {mip_gap} --threads {threads}")


class SolverError(RuntimeError):
    pass


@dataclass
class SolveConfig:
    solver_command: Optional[str] = None
    time_limit_s: float = 600.0
    mip_gap: float = 0.0
    threads: int = 1
    integrality_tol: float = 1e-6
    model_format: Optional[str] = None
    warm_start: bool = False
    keep_dir: Optional[str] = None

    def __post_init__(self):
        if not self.time_limit_s > 0:
            raise ValueError("time_limit_s must be positive")
        if self.mip_gap < 0:
            raise ValueError("mip_gap must be non-negative")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.model_format not in (None, "lp", "mps"):
            raise ValueError(f"unknown model format {self.model_format!r}")


@dataclass
class RawSolution:
    status: str
    objective: Optional[float] = None
    best_bound: Optional[float] = None
    values: Dict[str, float] = field(default_factory=dict)
    runtime_s: float = 0.0
    output: str = ""
    command: str = ""
    proven: bool = False

    @property
    def has_solution(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE)

    def vector(self, model: MilpModel) -> np.ndarray:
        return model.vector(self.values)


def bundled_cbc() -> Optional[str]:
    """CBC executable on PATH or shipped inside the ``pulp`` package."""
    found = shutil.which("cbc")
    if found:
        return found
    try:
        import pulp
    except ImportError:
        return None
    path = Path(pulp.__file__).parent / "solverdir" / "cbc" / "linux" / "i64" / "cbc"
    if sys.platform.startswith("linux") and path.exists():
        return str(path)
    return None


def _highs_available() -> bool:
    try:
        import highspy  # noqa: F401
    except ImportError:
        return False
    return True


def default_command(warm_start: bool = False) -> str:
    """Template from ``ODD_SOLVER_CMD``, else the HiGHS runner, else CBC."""
    env = os.environ.get(ENV_COMMAND)
    if env:
        return env
    if _highs_available():
        return HIGHS_TEMPLATE.replace("{python}", shlex.quote(sys.executable))
    cbc = bundled_cbc()
    if cbc:
        return (CBC_START_TEMPLATE if warm_start else CBC_TEMPLATE).replace("{cbc}", shlex.quote(cbc))
    raise SolverError(f"no MILP solver found; set {ENV_COMMAND}")


def named_command(name: str, warm_start: bool = False) -> str:
    name = name.lower()
    if name == "cbc":
        cbc = bundled_cbc()
        if not cbc:
            raise SolverError("cbc executable not found")
        return (CBC_START_TEMPLATE if warm_start else CBC_TEMPLATE).replace("{cbc}", shlex.quote(cbc))
    if name == "highs":
        if not _highs_available():
            raise SolverError("highspy is not installed")
        return HIGHS_TEMPLATE.replace("{python}", shlex.quote(sys.executable))
    raise SolverError(f"unknown solver {name!r}")


def resolve_command(command: Optional[str], warm_start: bool = False) -> str:
    """``None`` -> default discovery; ``cbc``/``highs`` -> built-in templates;
    anything else is used as a literal template."""
    if command is None:
        return default_command(warm_start)
    if command.lower() in ("cbc", "highs"):
        return named_command(command, warm_start)
    return command


def _with_cutoff_row(model: MilpModel) -> MilpModel:
    """Shallow copy of ``model`` with ``objective <= cutoff - margin``."""
    out = MilpModel(model.name)
    out.variables = model.variables
    out._by_name = model._by_name
    out.objective = model.objective
    out.constraints = list(model.constraints)
    out.cutoff = None
    out.add_constraint("cutoff", sorted(model.objective.items()), LE,
                       model.cutoff - CUTOFF_ROW_MARGIN, "cutoff")
    return out


def write_start_file(path, model: MilpModel, x: np.ndarray) -> None:
    """Initial assignment in the CBC solution layout (also read by ``-mips``)."""
    lines = [f"Optimal - objective value {fmt(model.objective_value(x))}"]
    for var in model.variables:
        if x[var.id] != 0.0:
            lines.append(f"{var.id:7d} {var.name} {fmt(x[var.id])} 0")
    Path(path).write_text("\n".join(lines) + "\n")


def invoke(model: MilpModel, cfg: SolveConfig, start: Optional[np.ndarray] = None) -> RawSolution:
    """Write ``model``, run the configured solver and parse its answer.

    Problems with the solver itself (missing executable, crash, unreadable
    output) come back as an ``error`` status carrying the captured output.
    """
    try:
        template = resolve_command(cfg.solver_command, cfg.warm_start and start is not None)
    except SolverError as exc:
        return RawSolution(ERROR, output=str(exc))
    for key in ("{model_file}", "{time_limit}", "{solution_file}"):
        if key not in template:
            return RawSolution(ERROR, output=f"solver command lacks {key}")

    # the objective row is added even for solvers with a native cutoff:
    # CBC drops its cutoff when presolve empties the model
    to_write = model if model.cutoff is None else _with_cutoff_row(model)
    fmt_name = cfg.model_format or ("mps" if "highs_runner" in template else "lp")

    workdir = cfg.keep_dir or tempfile.mkdtemp(prefix="oddtrain-")
    Path(workdir).mkdir(parents=True, exist_ok=True)
    model_file = Path(workdir) / f"model.{fmt_name}"
    solution_file = Path(workdir) / "solution.sol"
    start_file = Path(workdir) / "start.sol"
    try:
        model_file.write_text(emit_lp(to_write) if fmt_name == "lp" else emit_mps(to_write))
        if solution_file.exists():
            solution_file.unlink()
        if start is not None and "{start_file}" in template:
            write_start_file(start_file, model, start)
        elif "{start_file}" in template:
            template = template.replace("-mips {start_file}", "").replace("{start_file}", "")
        cutoff = model.cutoff if model.cutoff is not None else NO_CUTOFF
        command = template.format(
            model_file=shlex.quote(str(model_file)), solution_file=shlex.quote(str(solution_file)),
            time_limit=fmt(cfg.time_limit_s), mip_gap=fmt(cfg.mip_gap), threads=cfg.threads,
            cutoff=fmt(cutoff), start_file=shlex.quote(str(start_file)))
        t0 = time.monotonic()
        try:
            proc = subprocess.run(shlex.split(command), capture_output=True, text=True,
                                  timeout=cfg.time_limit_s * 2 + 60)
        except (OSError, subprocess.TimeoutExpired) as exc:
            return RawSolution(ERROR, output=str(exc), command=command,
                               runtime_s=time.monotonic() - t0)
        runtime = time.monotonic() - t0
        output = proc.stdout + proc.stderr
        text = solution_file.read_text() if solution_file.exists() else ""
        if proc.returncode != 0 and not text:
            return RawSolution(ERROR, output=output, command=command, runtime_s=runtime)
        try:
            raw = parse_solution(text, output, cutoff=model.cutoff)
        except SolverError as exc:
            return RawSolution(ERROR, output=f"{exc}\n{output}", command=command, runtime_s=runtime)
        if (raw.status == TIMEOUT_NO_SOLUTION and "Pre-processing says infeasible" in output
                and runtime < 0.5 * cfg.time_limit_s):
            # every variable is bounded, so CBC's "infeasible or unbounded"
            # is a proof unless the clock interrupted preprocessing
            raw = RawSolution(INFEASIBLE, best_bound=model.cutoff, proven=True)
        raw.runtime_s = runtime
        raw.output = output
        raw.command = command
        return raw
    finally:
        if cfg.keep_dir is None:
            shutil.rmtree(workdir, ignore_errors=True)


# ---------------------------------------------------------------- parsing

_NUM = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf(?:inity)?)"
_BOUND_PATTERNS = (
    re.compile(r"^Lower bound:\s+" + _NUM, re.M),                      # CBC
    re.compile(r"^dual_bound\s+" + _NUM, re.M),                        # HiGHS runner
    re.compile(r"^Dual Bound\s*:\s*" + _NUM, re.M),                    # SCIP
    re.compile(r"best bound\s+" + _NUM, re.M | re.I),                  # Gurobi
)


def detect_dialect(text: str) -> str:
    head = text.lstrip().splitlines()[0] if text.strip() else ""
    if head.startswith("Model status"):
        return "highs"
    if head.startswith("solution status:"):
        return "scip"
    if head.startswith("# Solution for model") or head.startswith("# Objective value"):
        return "gurobi"
    if re.match(r"(Optimal|Stopped|Infeasible|Integer infeasible|Unbounded|Problem proven)", head):
        return "cbc"
    if not head:
        return "empty"
    raise SolverError(f"unrecognized solution file starting with {head!r}")


def parse_solution(text: str, output: str = "", cutoff: Optional[float] = None) -> RawSolution:
    """Parse a solution file in any supported dialect, using the solver's
    console output for the status and dual bound where the file lacks them."""
    dialect = detect_dialect(text)
    if dialect == "cbc":
        raw = _parse_cbc(text, output)
    elif dialect == "highs":
        raw = _parse_highs(text)
    elif dialect == "scip":
        raw = _parse_scip(text)
    elif dialect == "gurobi":
        raw = _parse_gurobi(text, output)
    else:
        raw = _status_from_output(output)
    if raw.best_bound is None:
        for pat in _BOUND_PATTERNS:
            m = pat.search(output)
            if m:
                raw.best_bound = float(m.group(1))
                break
    if raw.status == OPTIMAL:
        raw.proven = True
        if raw.best_bound is None:
            raw.best_bound = raw.objective
    if raw.status == INFEASIBLE and raw.proven and cutoff is not None:
        # nothing strictly below the cutoff exists
        raw.best_bound = cutoff
    return raw


def _status_from_output(output: str) -> RawSolution:
    low = output.lower()
    if "infeasible" in low and ("proven" in low or "model status" in low):
        return RawSolution(INFEASIBLE, proven=True)
    if "time limit" in low or "stopped" in low:
        return RawSolution(TIMEOUT_NO_SOLUTION)
    raise SolverError("solver produced no solution file")


def _parse_cbc(text: str, output: str) -> RawSolution:
    lines = text.splitlines()
    head = lines[0].strip()
    m = re.search(r"objective value\s+" + _NUM, head)
    obj = float(m.group(1)) if m else None
    values: Dict[str, float] = {}
    for line in lines[1:]:
        parts = line.split()
        if len(parts) >= 3:
            if parts[0] == "**":   # CBC marks infeasible columns this way
                parts = parts[1:]
            values[parts[1]] = float(parts[2])
    if head.startswith("Optimal"):
        return RawSolution(OPTIMAL, obj, values=values, proven=True)
    if "infeasible" in head.lower():
        # only a finished search proves infeasibility; a stop during
        # preprocessing can also print this line
        proven = any(tag in output for tag in (
            "Result - Problem proven infeasible", "Result - Integer infeasible",
            "Problem is infeasible -"))
        if proven:
            return RawSolution(INFEASIBLE, proven=True)
        return RawSolution(TIMEOUT_NO_SOLUTION)
    if head.startswith("Stopped"):
        if "no integer solution" in head or "Result - Stopped" not in output:
            return RawSolution(TIMEOUT_NO_SOLUTION)
        return RawSolution(FEASIBLE, obj, values=values)
    raise SolverError(f"unhandled CBC status {head!r}")


def _parse_highs(text: str) -> RawSolution:
    lines = [ln.rstrip() for ln in text.splitlines()]
    status = lines[1].strip() if len(lines) > 1 else ""
    obj = None
    values: Dict[str, float] = {}
    feasible = False
    k = 2
    while k < len(lines):
        line = lines[k]
        if line.startswith("# Primal solution values"):
            feasible = k + 1 < len(lines) and lines[k + 1].strip() == "Feasible"
        elif line.startswith("Objective"):
            obj = float(line.split()[1])
        elif line.startswith("# Columns"):
            count = int(line.split()[2])
            for row in lines[k + 1:k + 1 + count]:
                name, val = row.split()[:2]
                values[name] = float(val)
            k += count
        elif line.startswith("# Rows") or line.startswith("# Dual"):
            break
        k += 1
    if status == "Optimal":
        return RawSolution(OPTIMAL, obj, values=values, proven=True)
    if status == "Infeasible":
        return RawSolution(INFEASIBLE, proven=True)
    if status in ("Time limit reached", "Iteration limit reached", "Interrupted by user",
                  "Solution limit reached", "Objective bound"):
        if feasible and values:
            return RawSolution(FEASIBLE, obj, values=values)
        return RawSolution(TIMEOUT_NO_SOLUTION)
    raise SolverError(f"unhandled HiGHS status {status!r}")


def _parse_scip(text: str) -> RawSolution:
    lines = text.splitlines()
    status = lines[0].split(":", 1)[1].strip().lower()
    values: Dict[str, float] = {}
    obj = None
    for line in lines[1:]:
        if line.startswith("objective value:"):
            obj = float(line.split(":", 1)[1])
            continue
        parts = line.split()
        if len(parts) >= 2:
            values[parts[0]] = float(parts[1])
    if "optimal" in status:
        return RawSolution(OPTIMAL, obj, values=values, proven=True)
    if "infeasible" in status:
        return RawSolution(INFEASIBLE, proven=True)
    if obj is not None:
        return RawSolution(FEASIBLE, obj, values=values)
    return RawSolution(TIMEOUT_NO_SOLUTION)


def _parse_gurobi(text: str, output: str) -> RawSolution:
    values: Dict[str, float] = {}
    obj = None
    for line in text.splitlines():
        if line.startswith("#"):
            m = re.search(r"Objective value\s*=\s*" + _NUM, line)
            if m:
                obj = float(m.group(1))
            continue
        parts = line.split()
        if len(parts) >= 2:
            values[parts[0]] = float(parts[1])
    if "Optimal solution found" in output:
        return RawSolution(OPTIMAL, obj, values=values, proven=True)
    if "Infeasible model" in output or "Model is infeasible" in output:
        return RawSolution(INFEASIBLE, proven=True)
    if values:
        return RawSolution(FEASIBLE, obj, values=values)
    return RawSolution(TIMEOUT_NO_SOLUTION)
