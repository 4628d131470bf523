"""Solver-neutral MILP container."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

BINARY, CONTINUOUS = "binary", "continuous"
LE, EQ, GE = "<=", "=", ">="


@dataclass
class Variable:
    id: int
    name: str
    kind: str
    lower: float
    upper: float

    @property
    def is_fixed(self) -> bool:
        return self.lower == self.upper


@dataclass
class Constraint:
    name: str
    family: str
    terms: List[Tuple[int, float]]
    sense: str
    rhs: float


@dataclass
class LinExpr:
    """``constant + sum(coef * var)`` over variable ids."""

    terms: Dict[int, float] = field(default_factory=dict)
    constant: float = 0.0

    def add(self, var: int, coef: float) -> "LinExpr":
        self.terms[var] = self.terms.get(var, 0.0) + coef
        return self

    def value(self, values: np.ndarray) -> float:
        return self.constant + sum(c * values[v] for v, c in self.terms.items())


class MilpModel:
    """Variables, linear rows and a minimization objective.

    Rows are stored in insertion order; writers and solvers never reorder
    them, which keeps emitted files byte-stable.
    """

    def __init__(self, name: str = "odd"):
        self.name = name
        self.variables: List[Variable] = []
        self.constraints: List[Constraint] = []
        self.objective: Dict[int, float] = {}
        self.cutoff: Optional[float] = None
        self._by_name: Dict[str, int] = {}

    def add_var(self, name: str, kind: str = CONTINUOUS, lower: float = 0.0,
                upper: float = 1.0) -> int:
        if name in self._by_name:
            raise ValueError(f"duplicate variable {name}")
        if kind == BINARY and not (0.0 <= lower <= upper <= 1.0):
            raise ValueError(f"binary variable {name} needs bounds within [0, 1]")
        vid = len(self.variables)
        self.variables.append(Variable(vid, name, kind, float(lower), float(upper)))
        self._by_name[name] = vid
        return vid

    def var_id(self, name: str) -> int:
        return self._by_name[name]

    def add_constraint(self, name: str, terms: Iterable[Tuple[int, float]], sense: str,
                       rhs: float, family: Optional[str] = None) -> Constraint:
        merged: Dict[int, float] = {}
        for v, c in terms:
            if not 0 <= v < len(self.variables):
                raise ValueError(f"constraint {name} references unknown variable {v}")
            merged[v] = merged.get(v, 0.0) + float(c)
        if sense not in (LE, EQ, GE):
            raise ValueError(f"bad sense {sense!r}")
        row = Constraint(name, family or name.split("_")[0],
                         [(v, c) for v, c in merged.items() if c != 0.0], sense, float(rhs))
        self.constraints.append(row)
        return row

    def remove_family(self, family: str) -> int:
        before = len(self.constraints)
        self.constraints = [c for c in self.constraints if c.family != family]
        return before - len(self.constraints)

    def set_objective(self, terms: Iterable[Tuple[int, float]]) -> None:
        self.objective = {}
        for v, c in terms:
            self.objective[v] = self.objective.get(v, 0.0) + float(c)

    def family_counts(self) -> Counter:
        return Counter(c.family for c in self.constraints)

    def n_binaries(self) -> int:
        return sum(1 for v in self.variables if v.kind == BINARY)

    def vector(self, values: Mapping[str, float]) -> np.ndarray:
        """Dense value vector from a name -> value map; absent names are 0."""
        out = np.zeros(len(self.variables))
        for name, val in values.items():
            vid = self._by_name.get(name)
            if vid is not None:
                out[vid] = val
        return out

    def objective_value(self, x: np.ndarray) -> float:
        return float(sum(c * x[v] for v, c in self.objective.items()))

    def violations(self, x: np.ndarray, tol: float = 1e-6) -> List[str]:
        """Names of rows and bounds violated by ``x`` beyond ``tol``."""
        bad = []
        for var in self.variables:
            if x[var.id] < var.lower - tol or x[var.id] > var.upper + tol:
                bad.append(f"bound:{var.name}")
            elif var.kind == BINARY and abs(x[var.id] - round(x[var.id])) > tol:
                bad.append(f"integrality:{var.name}")
        for row in self.constraints:
            lhs = sum(c * x[v] for v, c in row.terms)
            if ((row.sense == LE and lhs > row.rhs + tol)
                    or (row.sense == GE and lhs < row.rhs - tol)
                    or (row.sense == EQ and abs(lhs - row.rhs) > tol)):
                bad.append(row.name)
        return bad
