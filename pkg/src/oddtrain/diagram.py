"""Decision diagrams: prediction, scoring, fragmentation, JSON and DOT output."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset
from .skeleton import GraphTopology, build_graph, parse_skeleton

NEG, POS = "neg", "pos"


class InvalidModel(ValueError):
    pass


@dataclass(eq=False)
class DecisionDiagram:
    """A trained diagram living inside the graph of its skeleton.

    Only active internal nodes carry arcs and hyperplanes. A sample at node
    ``v`` takes the positive arc iff ``a_v . x >= b_v``.
    """

    topology: GraphTopology
    active: frozenset
    neg_arc: Dict[int, int]
    pos_arc: Dict[int, int]
    hyperplane: Dict[int, Tuple[np.ndarray, float]]
    epsilon: float = 1e-4

    @property
    def n_features(self) -> int:
        a, _ = self.hyperplane[0]
        return len(a)

    def active_internal(self) -> List[int]:
        return sorted(v for v in self.active if not self.topology.is_terminal(v))

    def n_active_nonroot(self) -> int:
        return sum(1 for v in self.active_internal() if v != 0)

    def in_degree(self, v: int) -> int:
        return sum((self.neg_arc[u] == v) + (self.pos_arc[u] == v) for u in self.active_internal())

    def parents(self, v: int) -> List[int]:
        return [u for u in self.active_internal() if v in (self.neg_arc[u], self.pos_arc[u])]

    def copy(self) -> "DecisionDiagram":
        return DecisionDiagram(
            self.topology, frozenset(self.active), dict(self.neg_arc), dict(self.pos_arc),
            {v: (a.copy(), b) for v, (a, b) in self.hyperplane.items()}, self.epsilon)

    def same_as(self, other: "DecisionDiagram", tol: float = 0.0) -> bool:
        if (self.active != other.active or self.neg_arc != other.neg_arc
                or self.pos_arc != other.pos_arc
                or set(self.hyperplane) != set(other.hyperplane)):
            return False
        for v, (a, b) in self.hyperplane.items():
            oa, ob = other.hyperplane[v]
            if abs(b - ob) > tol or np.max(np.abs(a - oa), initial=0.0) > tol:
                return False
        return True

    def to_json(self) -> dict:
        topo = self.topology
        return {
            "skeleton": str(topo.skeleton),
            "epsilon": self.epsilon,
            "nodes": [{"id": v, "a": [float(x) for x in self.hyperplane[v][0]],
                       "b": float(self.hyperplane[v][1]),
                       "neg": self.neg_arc[v], "pos": self.pos_arc[v]}
                      for v in self.active_internal()],
            "terminals": [{"id": t, "class": topo.class_of(t)} for t in topo.terminals],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "DecisionDiagram":
        sk = parse_skeleton(doc["skeleton"], n_classes=len(doc["terminals"]))
        topo = build_graph(sk)
        for t in doc["terminals"]:
            if topo.class_of(int(t["id"])) != int(t["class"]):
                raise InvalidModel(f"terminal {t['id']} does not match class {t['class']}")
        neg, pos, hyp = {}, {}, {}
        for node in doc["nodes"]:
            v = int(node["id"])
            neg[v] = int(node["neg"])
            pos[v] = int(node["pos"])
            hyp[v] = (np.asarray(node["a"], dtype=float), float(node["b"]))
        active = frozenset(neg) | frozenset(topo.terminals)
        dd = cls(topo, active, neg, pos, hyp, float(doc.get("epsilon", 1e-4)))
        validate(dd, check_order=False)
        return dd

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DecisionDiagram":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PredictionTrace:
    visited: Tuple[Tuple[int, str], ...]
    terminal: int
    class_id: int


def validate(dd: DecisionDiagram, check_order: bool = True) -> None:
    """Raise :class:`InvalidModel` unless ``dd`` is a well-formed diagram.

    ``check_order`` additionally demands ``neg_arc(u) <= pos_arc(u)``, the
    orientation fixed by symmetry breaking; tree-mode diagrams skip it.
    """
    topo = dd.topology
    if 0 not in dd.active:
        raise InvalidModel("invalid model: root is not active")
    for t in topo.terminals:
        if t not in dd.active:
            raise InvalidModel(f"invalid model: terminal {t} is not active")
    internal = dd.active_internal()
    if set(dd.neg_arc) != set(internal) or set(dd.pos_arc) != set(internal):
        raise InvalidModel("invalid model: arcs must be given for exactly the active internal nodes")
    if set(dd.hyperplane) != set(internal):
        raise InvalidModel("invalid model: hyperplanes must be given for exactly the active internal nodes")
    d = len(dd.hyperplane[0][0])
    for u in internal:
        for v in (dd.neg_arc[u], dd.pos_arc[u]):
            if v not in topo.succ[u]:
                raise InvalidModel(f"invalid model: arc {u}->{v} is not in the skeleton")
            if v not in dd.active:
                raise InvalidModel(f"invalid model: arc {u}->{v} targets an inactive node")
        if check_order and dd.neg_arc[u] > dd.pos_arc[u]:
            raise InvalidModel(f"invalid model: node {u} has neg arc after pos arc")
        a, b = dd.hyperplane[u]
        if len(a) != d:
            raise InvalidModel(f"invalid model: hyperplane of node {u} has wrong dimension")
    for v in internal:
        if v != 0 and not dd.parents(v):
            raise InvalidModel(f"invalid model: active node {v} has no incoming arc")


def route(dd: DecisionDiagram, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized routing.

    Returns the terminal reached by every row and a boolean matrix
    ``visits[i, v]`` telling whether row ``i`` passed through node ``v``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    topo = dd.topology
    n = X.shape[0]
    if 0 not in dd.hyperplane:
        raise InvalidModel("invalid model: root is not active")
    visits = np.zeros((n, topo.n_nodes), dtype=bool)
    at = np.zeros(n, dtype=int)
    for _ in range(topo.depth + 1):
        internal = at < topo.n_internal
        if not internal.any():
            break
        nxt = at.copy()
        for u in np.unique(at[internal]):
            rows = np.flatnonzero(at == u)
            visits[rows, u] = True
            if u not in dd.hyperplane:
                raise InvalidModel(f"invalid model: samples reach inactive node {u}")
            a, b = dd.hyperplane[u]
            positive = X[rows] @ a >= b
            nxt[rows] = np.where(positive, dd.pos_arc[u], dd.neg_arc[u])
        at = nxt
    if (at < topo.n_internal).any():
        raise InvalidModel("invalid model: routing did not reach a terminal")
    visits[np.arange(n), at] = True
    return at, visits


def predict(dd: DecisionDiagram, x: Sequence[float]) -> PredictionTrace:
    x = np.asarray(x, dtype=float)
    if x.shape != (dd.n_features,):
        raise InvalidModel(f"invalid model input: expected {dd.n_features} features")
    topo = dd.topology
    v = 0
    visited = []
    for _ in range(topo.depth):
        if v not in dd.hyperplane:
            raise InvalidModel(f"invalid model: node {v} is not active")
        a, b = dd.hyperplane[v]
        side = POS if float(a @ x) >= b else NEG
        visited.append((v, side))
        v = dd.pos_arc[v] if side == POS else dd.neg_arc[v]
        if topo.is_terminal(v):
            return PredictionTrace(tuple(visited), v, topo.class_of(v))
    raise InvalidModel("invalid model: no terminal within the skeleton depth")


def predict_classes(dd: DecisionDiagram, X: np.ndarray) -> np.ndarray:
    at, _ = route(dd, X)
    return at - dd.topology.n_internal


def evaluate(dd: DecisionDiagram, ds: Dataset) -> float:
    if ds.n == 0:
        return 0.0
    return float(np.mean(predict_classes(dd, ds.X) == ds.y))


def fragmentation(dd: DecisionDiagram, ds: Dataset) -> Dict[int, int]:
    """Number of samples of ``ds`` passing through each active node."""
    _, visits = route(dd, ds.X)
    counts = visits.sum(axis=0)
    return {v: int(counts[v]) for v in sorted(dd.active)}


def mismatch_matrix(y: np.ndarray, n_classes: int) -> np.ndarray:
    """Default 0/1 penalty: phi[i, c] = 1 unless c is the label of sample i."""
    phi = np.ones((len(y), n_classes))
    phi[np.arange(len(y)), y] = 0.0
    return phi


def complexity_weight(topo: GraphTopology, alpha: float) -> float:
    """Cost of one non-root active node; zero for a root-only skeleton."""
    return 0.0 if topo.n_internal <= 1 else alpha / (topo.n_internal - 1)


def objective(dd: DecisionDiagram, ds: Dataset, alpha: float,
              phi: Optional[np.ndarray] = None) -> float:
    """Training objective: mean mismatch penalty plus node-count regularization."""
    at, _ = route(dd, ds.X)
    if phi is None:
        phi = mismatch_matrix(ds.y, dd.topology.n_classes)
    classes = at - dd.topology.n_internal
    return float(phi[np.arange(ds.n), classes].sum() / ds.n
                 + complexity_weight(dd.topology, alpha) * dd.n_active_nonroot())


def describe_split(a: np.ndarray, b: float, feature_names: Optional[Sequence[str]] = None,
                   tol: float = 1e-9) -> str:
    names = feature_names or [f"x{j}" for j in range(len(a))]
    nz = [j for j in range(len(a)) if abs(a[j]) > tol]
    if not nz:
        return "always +" if 0.0 >= b else "always -"
    if len(nz) == 1:
        j = nz[0]
        if a[j] > 0:
            return f"{names[j]} >= {b / a[j]:.4g}"
        return f"{names[j]} <= {b / a[j]:.4g}"
    terms = " ".join(f"{'+' if a[j] >= 0 else '-'} {abs(a[j]):.3g}*{names[j]}" for j in nz)
    return f"{terms.lstrip('+ ')} >= {b:.4g}"


def to_dot(dd: DecisionDiagram, ds: Optional[Dataset] = None,
           class_names: Optional[Sequence[str]] = None) -> str:
    topo = dd.topology
    counts = fragmentation(dd, ds) if ds is not None else None
    feature_names = ds.feature_names if ds is not None else None
    if class_names is None and ds is not None:
        class_names = ds.class_names
    lines = ["digraph odd {", "  rankdir=TB;", "  node [fontname=\"Helvetica\"];"]
    for l, layer in enumerate(topo.layers):
        members = [v for v in layer if v in dd.active]
        if not members:
            continue
        lines.append(f"  {{ rank=same; // layer {l}")
        for v in members:
            a, b = dd.hyperplane[v]
            label = f"{v}\\n{describe_split(a, b, feature_names)}"
            if counts is not None:
                label += f"\\nn={counts[v]}"
            lines.append(f"    n{v} [shape=ellipse, label=\"{label}\"];")
        lines.append("  }")
    lines.append("  { rank=same; // terminals")
    for t in topo.terminals:
        c = topo.class_of(t)
        name = class_names[c] if class_names is not None else f"class {c}"
        label = f"{name}"
        if counts is not None:
            label += f"\\nn={counts[t]}"
        lines.append(f"    n{t} [shape=box, label=\"{label}\"];")
    lines.append("  }")
    for u in dd.active_internal():
        lines.append(f"  n{u} -> n{dd.neg_arc[u]} [label=\"−\", style=dashed];")
        lines.append(f"  n{u} -> n{dd.pos_arc[u]} [label=\"+\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"
