"""Acyclic temporal link graph over cell instances.

Nodes are keyed by ``(frame_index, label)`` and hold :class:`CellRegion`
summaries. Edges always connect a frame to the next one, so the graph is
acyclic by construction. Link multiplicity categories (``zero``/``one``/
``many``) can be attached per node and direction.
"""

from __future__ import annotations

from collections import defaultdict

from .grid import CellRegion

NodeKey = tuple[int, int]

ZERO = "zero"
ONE = "one"
MANY = "many"


class TrackGraph:
    def __init__(self):
        self.nodes: dict[NodeKey, CellRegion] = {}
        self._out: dict[NodeKey, list[NodeKey]] = defaultdict(list)
        self._in: dict[NodeKey, list[NodeKey]] = defaultdict(list)
        self.fwd_mult: dict[NodeKey, str] = {}
        self.bwd_mult: dict[NodeKey, str] = {}

    # ------------------------------------------------------------ building

    def add_node(self, region: CellRegion) -> NodeKey:
        key = region.key
        self.nodes[key] = region
        return key

    def add_frame(self, regions) -> None:
        for region in regions:
            self.add_node(region)

    def add_edge(self, a: NodeKey, b: NodeKey) -> None:
        if a not in self.nodes or b not in self.nodes:
            raise KeyError(f"edge endpoints must be existing nodes: {a} -> {b}")
        if b[0] != a[0] + 1:
            raise ValueError(f"edges must link consecutive frames: {a} -> {b}")
        if b in self._out[a]:
            return
        self._out[a].append(b)
        self._in[b].append(a)

    def remove_node(self, key: NodeKey) -> None:
        for succ in list(self._out.get(key, [])):
            self._in[succ].remove(key)
        for pred in list(self._in.get(key, [])):
            self._out[pred].remove(key)
        self._out.pop(key, None)
        self._in.pop(key, None)
        self.nodes.pop(key, None)
        self.fwd_mult.pop(key, None)
        self.bwd_mult.pop(key, None)

    def remove_edge(self, a: NodeKey, b: NodeKey) -> None:
        self._out[a].remove(b)
        self._in[b].remove(a)

    # ------------------------------------------------------------ queries

    def successors(self, key: NodeKey) -> list[NodeKey]:
        return sorted(self._out.get(key, []))

    def predecessors(self, key: NodeKey) -> list[NodeKey]:
        return sorted(self._in.get(key, []))

    def has_edge(self, a: NodeKey, b: NodeKey) -> bool:
        return b in self._out.get(a, [])

    def edges(self) -> list[tuple[NodeKey, NodeKey]]:
        out = []
        for a in sorted(self._out):
            for b in sorted(self._out[a]):
                out.append((a, b))
        return out

    def edges_between(self, frame_a: int, frame_b: int) -> list[tuple[NodeKey, NodeKey]]:
        return [(a, b) for a, b in self.edges() if a[0] == frame_a and b[0] == frame_b]

    def frames(self) -> list[int]:
        return sorted({key[0] for key in self.nodes})

    def nodes_at(self, frame: int) -> list[NodeKey]:
        return sorted(key for key in self.nodes if key[0] == frame)

    def n_edges(self) -> int:
        return sum(len(v) for v in self._out.values())

    def edge_kind(self, a: NodeKey, b: NodeKey) -> str:
        merge = len(self._in[b]) >= 2
        split = len(self._out[a]) >= 2
        if merge and split:
            return "conflict"
        if merge:
            return "merge"
        if split:
            return "split"
        return "normal"

    # ------------------------------------------------------------ analysis

    def lineage_components(self) -> list[set[NodeKey]]:
        """Weakly connected components, ordered by their smallest node key."""
        seen = set()
        components = []
        for start in sorted(self.nodes):
            if start in seen:
                continue
            comp = {start}
            stack = [start]
            seen.add(start)
            while stack:
                cur = stack.pop()
                for nxt in self._out.get(cur, []) + self._in.get(cur, []):
                    if nxt not in seen:
                        seen.add(nxt)
                        comp.add(nxt)
                        stack.append(nxt)
            components.append(comp)
        return components

    def relation(self, frame_a: int, frame_b: int) -> dict[int, set[int]]:
        """Label relation from frame_a to frame_b composed along the edges.

        For ``frame_a == frame_b`` this is the identity; otherwise links are
        composed frame by frame (in reverse when frame_b < frame_a).
        """
        labels_a = [key[1] for key in self.nodes_at(frame_a)]
        if frame_a == frame_b:
            return {lab: {lab} for lab in labels_a}
        rel = {lab: {(frame_a, lab)} for lab in labels_a}
        step = 1 if frame_b > frame_a else -1
        neighbors = self._out if step == 1 else self._in
        frame = frame_a
        while frame != frame_b:
            for lab, keys in rel.items():
                rel[lab] = {nxt for key in keys for nxt in neighbors.get(key, [])}
            frame += step
        return {lab: {key[1] for key in keys} for lab, keys in rel.items()}

    def copy(self) -> "TrackGraph":
        dup = TrackGraph()
        dup.nodes = dict(self.nodes)
        for key, value in self._out.items():
            dup._out[key] = list(value)
        for key, value in self._in.items():
            dup._in[key] = list(value)
        dup.fwd_mult = dict(self.fwd_mult)
        dup.bwd_mult = dict(self.bwd_mult)
        return dup

    def derive_multiplicity_from_edges(self) -> None:
        """Set per-node categories from the actual link counts."""
        for key in self.nodes:
            self.fwd_mult[key] = _category(len(self._out.get(key, [])))
            self.bwd_mult[key] = _category(len(self._in.get(key, [])))


def _category(count: int) -> str:
    if count == 0:
        return ZERO
    if count == 1:
        return ONE
    return MANY
