"""Layer-width skeletons and the layered graph they expand into.

Internal nodes are numbered breadth-first starting at the root (node 0);
terminal nodes follow all internal nodes, one per class in class-id order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple


class SkeletonError(ValueError):
    pass


PRESETS: Dict[str, Tuple[int, ...]] = {
    "I": (1, 2, 4, 8),
    "II": (1, 2, 4, 4, 4),
    "III": (1, 2, 3, 3, 3, 3),
    "IV": (1, 2, 2, 2, 2, 2, 2, 2),
}


@dataclass(frozen=True)
class Skeleton:
    widths: Tuple[int, ...]
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths:
            raise SkeletonError("invalid skeleton: no layers")
        if self.widths[0] != 1:
            raise SkeletonError("invalid skeleton: first layer must have width 1")
        for l, w in enumerate(self.widths):
            if w < 1:
                raise SkeletonError(f"invalid skeleton: layer {l} has width {w}")
            if l + 1 < len(self.widths) and self.widths[l + 1] > 2 * w:
                raise SkeletonError(
                    f"invalid skeleton: width {self.widths[l + 1]} of layer {l + 1} "
                    f"exceeds twice the width {w} of layer {l}")
        if self.n_classes < 2:
            raise SkeletonError("invalid skeleton: at least two classes required")

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def n_internal(self) -> int:
        return sum(self.widths)

    @property
    def is_tree(self) -> bool:
        return all(w == 2 ** l for l, w in enumerate(self.widths))

    def __str__(self) -> str:
        return format_skeleton(self.widths)


def parse_skeleton(text: str, n_classes: int = 2) -> Skeleton:
    """Parse ``"1-2-4-8"`` or a preset name (``"I"`` .. ``"IV"``)."""
    text = text.strip()
    if text.upper() in PRESETS:
        return Skeleton(PRESETS[text.upper()], n_classes)
    try:
        widths = tuple(int(tok) for tok in text.replace(",", "-").split("-"))
    except ValueError:
        raise SkeletonError(f"invalid skeleton string {text!r}") from None
    return Skeleton(widths, n_classes)


def format_skeleton(widths: Sequence[int]) -> str:
    return "-".join(str(w) for w in widths)


@dataclass(frozen=True)
class GraphTopology:
    skeleton: Skeleton
    layers: Tuple[Tuple[int, ...], ...]
    terminals: Tuple[int, ...]
    succ: Dict[int, Tuple[int, ...]] = field(repr=False)
    pred: Dict[int, Tuple[int, ...]] = field(repr=False)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def n_internal(self) -> int:
        return self.skeleton.n_internal

    @property
    def n_classes(self) -> int:
        return len(self.terminals)

    @property
    def internal_nodes(self) -> range:
        return range(self.n_internal)

    @property
    def n_nodes(self) -> int:
        return self.n_internal + len(self.terminals)

    def is_terminal(self, v: int) -> bool:
        return v >= self.n_internal

    def terminal_of(self, class_id: int) -> int:
        return self.n_internal + class_id

    def class_of(self, terminal: int) -> int:
        return terminal - self.n_internal

    def layer_of(self, v: int) -> int:
        for l, nodes in enumerate(self.layers):
            if nodes[0] <= v <= nodes[-1]:
                return l
        raise KeyError(v)

    def arcs(self) -> List[Tuple[int, int]]:
        """All arcs (u, v) in node order, then successor order."""
        return [(u, v) for u in self.internal_nodes for v in self.succ[u]]


def build_graph(sk: Skeleton) -> GraphTopology:
    layers = []
    start = 0
    for w in sk.widths:
        layers.append(tuple(range(start, start + w)))
        start += w
    n_internal = start
    terminals = tuple(range(n_internal, n_internal + sk.n_classes))

    succ: Dict[int, Tuple[int, ...]] = {}
    pred: Dict[int, List[int]] = {v: [] for v in range(n_internal + sk.n_classes)}
    for l, nodes in enumerate(layers):
        nxt = layers[l + 1] if l + 1 < len(layers) else ()
        for u in nodes:
            succ[u] = tuple(nxt) + terminals
            for v in succ[u]:
                pred[v].append(u)
    for t in terminals:
        succ[t] = ()
    return GraphTopology(
        skeleton=sk,
        layers=tuple(layers),
        terminals=terminals,
        succ=succ,
        pred={v: tuple(p) for v, p in pred.items()},
    )


def tree_arcs(sk: Skeleton) -> Dict[int, Tuple[Optional[int], Optional[int]]]:
    """Complete-binary-tree children in heap order: node u -> (2u+1, 2u+2)."""
    if not sk.is_tree:
        raise SkeletonError(f"not a tree skeleton: {sk}")
    n = sk.n_internal
    last_layer_start = n - sk.widths[-1]
    children: Dict[int, Tuple[Optional[int], Optional[int]]] = {}
    for u in range(n):
        if u >= last_layer_start:
            children[u] = (None, None)
        else:
            children[u] = (2 * u + 1, 2 * u + 2)
    return children
