"""Graph containers, padding, canonical pair indexing, edit costs, and bit gates.

Everything here is immutable after construction and safe to share across
threads. Node indices are dense integers starting at 0; edges are unordered
pairs without self-loops.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np


class SizingError(ValueError):
    """Requested padded size is smaller than one of the graphs."""


class FormatError(ValueError):
    """Malformed graph or pair record."""


def _normalize_edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class Graph:
    """Undirected graph on nodes 0..num_nodes-1 with optional integer labels."""

    num_nodes: int
    edges: frozenset = field(default_factory=frozenset)
    labels: tuple | None = None

    def __post_init__(self):
        if self.num_nodes < 0:
            raise ValueError(f"num_nodes must be nonnegative, got {self.num_nodes}")
        canon = set()
        for edge in self.edges:
            u, v = edge
            if u == v:
                raise ValueError(f"self-loop ({u},{v}) not allowed")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ValueError(f"edge ({u},{v}) out of range for {self.num_nodes} nodes")
            canon.add(_normalize_edge(u, v))
        object.__setattr__(self, "edges", frozenset(canon))
        if self.labels is not None:
            labels = self._normalize_labels(self.labels)
            if len(labels) != self.num_nodes:
                raise ValueError(
                    f"labels cover {len(labels)} nodes, graph has {self.num_nodes}"
                )
            if any(l < 0 for l in labels):
                raise ValueError("label ids must be nonnegative")
            object.__setattr__(self, "labels", labels)

    def _normalize_labels(self, labels) -> tuple:
        if isinstance(labels, Mapping):
            return tuple(int(labels[u]) for u in range(self.num_nodes))
        return tuple(int(l) for l in labels)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self, size: int | None = None) -> np.ndarray:
        """Symmetric 0/1 adjacency, optionally zero-padded to ``size`` rows."""
        n = self.num_nodes if size is None else size
        if n < self.num_nodes:
            raise SizingError(f"size {n} < num_nodes {self.num_nodes}")
        adj = np.zeros((n, n), dtype=np.float64)
        for u, v in self.edges:
            adj[u, v] = 1.0
            adj[v, u] = 1.0
        return adj

    def degree_sequence(self) -> tuple:
        deg = [0] * self.num_nodes
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return tuple(deg)

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Return the graph with node u renamed to perm[u]."""
        if sorted(perm) != list(range(self.num_nodes)):
            raise ValueError("perm must be a bijection of the node set")
        edges = frozenset(_normalize_edge(perm[u], perm[v]) for u, v in self.edges)
        labels = None
        if self.labels is not None:
            out = [0] * self.num_nodes
            for u in range(self.num_nodes):
                out[perm[u]] = self.labels[u]
            labels = tuple(out)
        return Graph(self.num_nodes, edges, labels)

    def has_edge(self, u: int, v: int) -> bool:
        return _normalize_edge(u, v) in self.edges


def graph_from_edges(num_nodes: int, edges: Iterable, labels=None) -> Graph:
    return Graph(num_nodes, frozenset(tuple(e) for e in edges), labels)


@dataclass(frozen=True)
class CostConfig:
    """Scalar costs of the four structural edit operations plus optional
    node substitution. Substitution must not be replaceable by a cheaper
    delete+add, i.e. node_sub <= node_del + node_add."""

    node_del: float
    node_add: float
    edge_del: float
    edge_add: float
    node_sub: float = 0.0

    def __post_init__(self):
        for name in ("node_del", "node_add", "edge_del", "edge_add", "node_sub"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {value}")
        if self.node_sub > 0 and self.node_sub > self.node_del + self.node_add:
            raise ValueError(
                "node_sub must not exceed node_del + node_add "
                f"({self.node_sub} > {self.node_del + self.node_add})"
            )

    @classmethod
    def uniform(cls, value: float = 1.0, node_sub: float = 0.0) -> "CostConfig":
        return cls(value, value, value, value, node_sub)

    def scaled(self, factor: float) -> "CostConfig":
        return CostConfig(
            self.node_del * factor,
            self.node_add * factor,
            self.edge_del * factor,
            self.edge_add * factor,
            self.node_sub * factor,
        )

    def as_dict(self) -> dict:
        return {
            "node_del": self.node_del,
            "node_add": self.node_add,
            "edge_del": self.edge_del,
            "edge_add": self.edge_add,
            "node_sub": self.node_sub,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CostConfig":
        return cls(
            float(data["node_del"]),
            float(data["node_add"]),
            float(data["edge_del"]),
            float(data["edge_add"]),
            float(data.get("node_sub", 0.0)),
        )


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PaddedPair:
    """A source/target graph pair padded with isolated nodes to a common size.

    ``eta_src[u] = 1`` marks an original source node and 0 a padded one
    (same for the target side). Rows and columns of the adjacency matrices
    touching padded nodes are all zero. Optional one-hot label matrices share
    a single label vocabulary across both sides; padded rows are zero.
    """

    size: int
    adj_src: np.ndarray
    adj_tgt: np.ndarray
    eta_src: np.ndarray
    eta_tgt: np.ndarray
    pads_src: frozenset
    pads_tgt: frozenset
    labels_src: np.ndarray | None = None
    labels_tgt: np.ndarray | None = None

    def __post_init__(self):
        n = self.size
        for name in ("adj_src", "adj_tgt"):
            adj = getattr(self, name)
            if adj.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
            if np.any(np.diag(adj) != 0):
                raise ValueError(f"{name} has self-loops")
            if not np.array_equal(adj, adj.T):
                raise ValueError(f"{name} is not symmetric")
        for name in ("eta_src", "eta_tgt"):
            eta = getattr(self, name)
            if eta.shape != (n,):
                raise ValueError(f"{name} must have length {n}")

    @property
    def num_nodes_src(self) -> int:
        return int(self.eta_src.sum())

    @property
    def num_nodes_tgt(self) -> int:
        return int(self.eta_tgt.sum())

    @property
    def num_edges_src(self) -> int:
        return int(round(self.adj_src.sum() / 2))

    @property
    def num_edges_tgt(self) -> int:
        return int(round(self.adj_tgt.sum() / 2))

    @property
    def num_labels(self) -> int:
        return 0 if self.labels_src is None else self.labels_src.shape[1]

    def reversed(self) -> "PaddedPair":
        """The same pair with source and target roles swapped."""
        return PaddedPair(
            self.size,
            self.adj_tgt,
            self.adj_src,
            self.eta_tgt,
            self.eta_src,
            self.pads_tgt,
            self.pads_src,
            self.labels_tgt,
            self.labels_src,
        )


def one_hot_labels(graph: Graph, size: int, num_labels: int) -> np.ndarray:
    """(size, num_labels) one-hot rows for original nodes, zero rows for pads."""
    out = np.zeros((size, num_labels), dtype=np.float64)
    labels = graph.labels if graph.labels is not None else (0,) * graph.num_nodes
    for u in range(graph.num_nodes):
        if labels[u] >= num_labels:
            raise ValueError(f"label {labels[u]} outside vocabulary of {num_labels}")
        out[u, labels[u]] = 1.0
    return out


def pad_pair(
    source: Graph,
    target: Graph,
    size: int | None = None,
    *,
    num_labels: int | None = None,
) -> PaddedPair:
    """Pad both graphs with isolated nodes to a common size.

    Original nodes keep their indices; padded slots follow. Label matrices
    are built when either graph carries labels (or ``num_labels`` is given);
    unlabeled graphs then use the single shared label 0.
    """
    needed = max(source.num_nodes, target.num_nodes)
    if size is None:
        size = needed
    if size < needed:
        raise SizingError(f"pad size {size} < max graph size {needed}")

    eta_src = np.zeros(size, dtype=np.float64)
    eta_src[: source.num_nodes] = 1.0
    eta_tgt = np.zeros(size, dtype=np.float64)
    eta_tgt[: target.num_nodes] = 1.0

    labeled = source.labels is not None or target.labels is not None
    labels_src = labels_tgt = None
    if labeled or num_labels is not None:
        if num_labels is None:
            seen = set(source.labels or (0,) * source.num_nodes)
            seen |= set(target.labels or (0,) * target.num_nodes)
            num_labels = max(seen) + 1 if seen else 1
        labels_src = _readonly(one_hot_labels(source, size, num_labels))
        labels_tgt = _readonly(one_hot_labels(target, size, num_labels))

    return PaddedPair(
        size,
        _readonly(source.adjacency(size)),
        _readonly(target.adjacency(size)),
        _readonly(eta_src),
        _readonly(eta_tgt),
        frozenset(range(source.num_nodes, size)),
        frozenset(range(target.num_nodes, size)),
        labels_src,
        labels_tgt,
    )


def pair_count(size: int) -> int:
    return size * (size - 1) // 2


def pair_index(u: int, v: int, size: int) -> int:
    """Lexicographic rank of the unordered pair {u, v} among all pairs."""
    if u == v:
        raise ValueError(f"node pair requires distinct endpoints, got ({u},{v})")
    if not (0 <= u < size and 0 <= v < size):
        raise ValueError(f"pair ({u},{v}) out of range for size {size}")
    u, v = _normalize_edge(u, v)
    return u * size - u * (u + 1) // 2 + (v - u - 1)


@lru_cache(maxsize=None)
def pair_array(size: int) -> np.ndarray:
    """(C(size,2), 2) array of pairs (u, v), u < v, in index order."""
    pairs = [(u, v) for u in range(size) for v in range(u + 1, size)]
    out = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    out.setflags(write=False)
    return out


def xor_gate(c1, c2):
    """1 exactly when the two bits differ: c1 + c2 - 2*c1*c2."""
    return c1 + c2 - 2 * c1 * c2


def or_gate(c1, c2):
    return c1 + c2 - c1 * c2


def and_gate(c1, c2):
    return c1 * c2


# ---------------------------------------------------------------------------
# Graph record files: one JSON object per line with fields
#   id, num_nodes, edges: [[u, v], ...], optional labels: [l0, ...]
# ---------------------------------------------------------------------------

def graph_to_record(graph_id: str, graph: Graph) -> dict:
    record = {
        "id": graph_id,
        "num_nodes": graph.num_nodes,
        "edges": sorted([list(e) for e in graph.edges]),
    }
    if graph.labels is not None:
        record["labels"] = list(graph.labels)
    return record


def graph_from_record(record: Mapping) -> tuple[str, Graph]:
    try:
        graph_id = str(record["id"])
        num_nodes = int(record["num_nodes"])
        edges = [tuple(int(x) for x in e) for e in record["edges"]]
        labels = record.get("labels")
        if labels is not None:
            labels = tuple(int(l) for l in labels)
        return graph_id, graph_from_edges(num_nodes, edges, labels)
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad graph record: {exc}") from exc


def write_graph_file(path, records: Iterable[tuple[str, Graph]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for graph_id, graph in records:
            fh.write(json.dumps(graph_to_record(graph_id, graph), sort_keys=True))
            fh.write("\n")


def read_graph_file(path) -> list[tuple[str, Graph]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            out.append(graph_from_record(record))
    return out
